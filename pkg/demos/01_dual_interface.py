"""Dual byte/block device interface.

The emulated M-SSD exposes two host interfaces over one address space:
a cacheline-granular byte interface (64B units over the memory bus) and
a page-granular block interface (4 KiB).  Both views stay coherent, and
every transfer is accounted in per-category traffic counters alongside a
simulated nanosecond clock.
"""

from bytefs.device import CACHELINE, DeviceConfig, KiB, MiB
from bytefs.mssd import Mssd

cfg = DeviceConfig(capacity_bytes=8 * MiB, log_region_bytes=64 * KiB,
                   txlog_bytes=1 * KiB, write_buffer_bytes=16 * KiB)
mssd = Mssd(cfg)

print("== a 13-byte write costs one 64B cacheline on the wire ==")
before = mssd.traffic_snapshot()
mssd.byte_write(0, b"hello, world!", category="data")
d = mssd.traffic_snapshot().delta(before)
print(f"  host->ssd data bytes: {d.by_category['host_to_ssd']['data']}"
      f" (CACHELINE={CACHELINE})")

print("== the block view sees the byte write (and vice versa) ==")
page = mssd.block_read(0, category="data")
print(f"  block_read(0)[:13] = {page[:13]!r}")
mssd.block_write(1, b"\xab" * cfg.page_size, category="data")
print(f"  byte_read(page1+100, 4) = {mssd.byte_read(4096 + 100, 4).hex()}")

print("== traffic and simulated time accumulate per operation ==")
before = mssd.traffic_snapshot()
t0 = mssd.clock_ns
for i in range(16):
    mssd.byte_write(2 * 4096 + i * CACHELINE, bytes([i]) * CACHELINE,
                    category="data")
d = mssd.traffic_snapshot().delta(before)
print(f"  16 cacheline writes: {d.by_category['host_to_ssd']['data']} bytes,"
      f" {mssd.clock_ns - t0} ns simulated"
      f" ({cfg.cacheline_write_latency_ns} ns each)")

t0 = mssd.clock_ns
mssd.block_read(100)  # cold page: full flash read latency
print(f"  one cold block read: {mssd.clock_ns - t0} ns"
      f" (flash read latency {cfg.flash_read_latency_ns} ns)")
