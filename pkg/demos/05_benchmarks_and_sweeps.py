"""Workload profiles, traffic reports, and mode sweeps.

The bench module generates deterministic multi-threaded workloads
(interleaved round-robin from per-thread seeded generators), runs them
against a freshly formatted file system, and reports simulated time plus
per-category traffic in every direction.  A sweep repeats one workload
across all four modes for side-by-side comparison.
"""

from bytefs import bench
from bytefs.bench import WorkloadSpec
from bytefs.device import DeviceConfig, KiB, MiB

cfg = DeviceConfig(capacity_bytes=8 * MiB, log_region_bytes=64 * KiB,
                   txlog_bytes=1 * KiB, write_buffer_bytes=16 * KiB)

print("== one varmail run on the full mode ==")
spec = WorkloadSpec("varmail", seed=7, ops=400, threads=2)
fs, report, records = bench.run(spec, cfg, mode="full")
print(report.table())

print("== the trace is replayable bit-for-bit ==")
fs2, report2, _ = bench.run(spec, cfg, mode="full")
same = (report2.traffic == report.traffic and report2.sim_ns == report.sim_ns)
print(f"  identical rerun: traffic+time match = {same}")
print(f"  first records: {[r.format() for r in records[:3]]}")

print("== sweep the oltp profile across all modes ==")
reports = bench.sweep(WorkloadSpec("oltp", seed=7, ops=300, threads=2), cfg)
print(bench.sweep_table(reports))
