"""Versioned binary device-image format (magic "BFSM").

Layout: magic, format version (u32 LE), a DeviceConfig block, then
sections each prefixed by a 16-byte header {section id u32, length u64,
crc32 u32}.  Sections: flash pages, FTL map, log region, log sidecar
index, TxLog, clock.  Used for crash-injection snapshots: host state
(TxTable, caches) is deliberately not part of the image.
"""

from __future__ import annotations

import io
import os
import struct
import zlib

import numpy as np

from .device import CATEGORIES, DeviceConfig
from .errors import InvalidArgument, RecoveryFailed
from .mssd import Mssd
from .writelog import SlotRec

MAGIC = b"BFSM"
FORMAT_VERSION = 1

SEC_FLASH = 1
SEC_FTL = 2
SEC_LOG_REGION = 3
SEC_LOG_INDEX = 4
SEC_TXLOG = 5
SEC_CLOCK = 6

_CONFIG_FMT = "<QIIIIIIQIId"
_SECTION_HDR_FMT = "<IQI"

_SIDEC_DTYPE = np.dtype([
    ("lpa", "<u4"), ("block_offset", "u1"), ("length", "u1"),
    ("flags", "u1"), ("category", "u1"), ("txid", "<u4"),
    ("gen", "<u4"), ("seq", "<u8"),
])

_CAT_ID = {c: i for i, c in enumerate(CATEGORIES)}


def _pack_config(cfg: DeviceConfig) -> bytes:
    return struct.pack(
        _CONFIG_FMT, cfg.capacity_bytes, cfg.page_size, cfg.channel_count,
        cfg.flash_read_latency_ns, cfg.flash_write_latency_ns,
        cfg.cacheline_read_latency_ns, cfg.cacheline_write_latency_ns,
        cfg.log_region_bytes, cfg.txlog_bytes, cfg.write_buffer_bytes,
        cfg.clean_threshold,
    )


def _unpack_config(blob: bytes) -> DeviceConfig:
    vals = struct.unpack(_CONFIG_FMT, blob)
    return DeviceConfig(
        capacity_bytes=vals[0], page_size=vals[1], channel_count=vals[2],
        flash_read_latency_ns=vals[3], flash_write_latency_ns=vals[4],
        cacheline_read_latency_ns=vals[5], cacheline_write_latency_ns=vals[6],
        log_region_bytes=vals[7], txlog_bytes=vals[8],
        write_buffer_bytes=vals[9], clean_threshold=vals[10],
    )


def _write_section(out, sec_id: int, payload: bytes) -> None:
    out.write(struct.pack(_SECTION_HDR_FMT, sec_id, len(payload),
                          zlib.crc32(payload)))
    out.write(payload)


def save(mssd: Mssd, target) -> None:
    """Write the device image; `target` is a path or binary file object."""
    if isinstance(target, (str, bytes, os.PathLike)):
        with open(target, "wb") as f:
            save(mssd, f)
        return
    out = target
    out.write(MAGIC)
    out.write(struct.pack("<I", FORMAT_VERSION))
    out.write(_pack_config(mssd.config))

    dev = mssd.device
    buf = io.BytesIO()
    buf.write(struct.pack("<Q", len(dev.pages)))
    for ppa in sorted(dev.pages):
        buf.write(struct.pack("<Q", ppa))
        buf.write(dev.pages[ppa])
    _write_section(out, SEC_FLASH, buf.getvalue())

    buf = io.BytesIO()
    ftl = dev.ftl
    buf.write(struct.pack("<Q", len(ftl.lpa_to_ppa)))
    for lpa in sorted(ftl.lpa_to_ppa):
        buf.write(struct.pack("<QQ", lpa, ftl.lpa_to_ppa[lpa]))
    buf.write(struct.pack("<Q", ftl._next_unused))
    buf.write(struct.pack("<Q", len(ftl._recycled)))
    for ppa in ftl._recycled:
        buf.write(struct.pack("<Q", ppa))
    _write_section(out, SEC_FTL, buf.getvalue())

    gen = mssd.writelog.active_gen
    used = gen.tail_slots * 64
    payload = struct.pack("<IQ", gen.gen_id, gen.tail_slots) + bytes(gen.buf[:used])
    _write_section(out, SEC_LOG_REGION, payload)

    recs = np.zeros(len(gen.slots), dtype=_SIDEC_DTYPE)
    for i, rec in enumerate(gen.slots):
        recs[i] = (rec.lpa, rec.block_offset, rec.length, rec.flags,
                   _CAT_ID[rec.category], rec.txid, rec.gen, rec.seq)
    _write_section(out, SEC_LOG_INDEX, recs.tobytes())

    txlog = mssd.txlog
    payload = struct.pack("<Q", len(txlog.entries))
    payload += b"".join(struct.pack("<I", t) for t in txlog.entries)
    _write_section(out, SEC_TXLOG, payload)

    _write_section(out, SEC_CLOCK,
                   struct.pack("<QQ", dev.clock.now_ns, mssd._stamp))


def _read_section(f, expect_id: int) -> bytes:
    hdr = f.read(struct.calcsize(_SECTION_HDR_FMT))
    if len(hdr) != struct.calcsize(_SECTION_HDR_FMT):
        raise RecoveryFailed("truncated image", section_id=expect_id)
    sec_id, length, crc = struct.unpack(_SECTION_HDR_FMT, hdr)
    if sec_id != expect_id:
        raise RecoveryFailed(f"unexpected section {sec_id}", section_id=sec_id)
    payload = f.read(length)
    if len(payload) != length or zlib.crc32(payload) != crc:
        raise RecoveryFailed(f"section {sec_id} CRC mismatch", section_id=sec_id)
    return payload


def load(source, *, log_enabled: bool = True, shadow_oracle: bool = False,
         conflict_granularity: str = "cacheline", auto_clean: bool = True
         ) -> Mssd:
    """Load a device image; host-side state starts fresh."""
    if isinstance(source, (str, bytes, os.PathLike)):
        with open(source, "rb") as f:
            return load(f, log_enabled=log_enabled, shadow_oracle=shadow_oracle,
                        conflict_granularity=conflict_granularity,
                        auto_clean=auto_clean)
    f = source
    if f.read(4) != MAGIC:
        raise InvalidArgument("not a device image (bad magic)")
    (version,) = struct.unpack("<I", f.read(4))
    if version != FORMAT_VERSION:
        raise InvalidArgument(f"unsupported image version {version}")
    cfg = _unpack_config(f.read(struct.calcsize(_CONFIG_FMT)))

    mssd = Mssd(cfg, log_enabled=log_enabled, shadow_oracle=shadow_oracle,
                conflict_granularity=conflict_granularity, auto_clean=auto_clean)
    dev = mssd.device

    payload = _read_section(f, SEC_FLASH)
    off = 0
    (count,) = struct.unpack_from("<Q", payload, off)
    off += 8
    for _ in range(count):
        (ppa,) = struct.unpack_from("<Q", payload, off)
        off += 8
        dev.pages[ppa] = bytearray(payload[off:off + cfg.page_size])
        off += cfg.page_size

    payload = _read_section(f, SEC_FTL)
    off = 0
    (count,) = struct.unpack_from("<Q", payload, off)
    off += 8
    for _ in range(count):
        lpa, ppa = struct.unpack_from("<QQ", payload, off)
        off += 16
        dev.ftl.lpa_to_ppa[lpa] = ppa
    (dev.ftl._next_unused,) = struct.unpack_from("<Q", payload, off)
    off += 8
    (count,) = struct.unpack_from("<Q", payload, off)
    off += 8
    dev.ftl._recycled = [
        struct.unpack_from("<Q", payload, off + 8 * i)[0] for i in range(count)
    ]

    payload = _read_section(f, SEC_LOG_REGION)
    gen_id, tail_slots = struct.unpack_from("<IQ", payload, 0)
    gen = mssd.writelog.active_gen
    gen.gen_id = gen_id
    gen.tail_slots = tail_slots
    gen.buf[:tail_slots * 64] = payload[12:12 + tail_slots * 64]

    payload = _read_section(f, SEC_LOG_INDEX)
    recs = np.frombuffer(payload, dtype=_SIDEC_DTYPE)
    max_txid = 0
    for r in recs:
        rec = SlotRec(int(r["gen"]), len(gen.slots), int(r["lpa"]),
                      int(r["block_offset"]), int(r["length"]), int(r["flags"]),
                      int(r["txid"]), int(r["seq"]),
                      CATEGORIES[int(r["category"])])
        gen.slots.append(rec)
        mssd.writelog.index.insert(rec)
        max_txid = max(max_txid, rec.txid)
        mssd._stamp = max(mssd._stamp, rec.seq)

    payload = _read_section(f, SEC_TXLOG)
    (count,) = struct.unpack_from("<Q", payload, 0)
    for i in range(count):
        (txid,) = struct.unpack_from("<I", payload, 8 + 4 * i)
        mssd.txlog.append(txid, mssd.next_stamp())
        max_txid = max(max_txid, txid)

    payload = _read_section(f, SEC_CLOCK)
    now_ns, stamp = struct.unpack("<QQ", payload)
    dev.clock.now_ns = now_ns
    mssd._stamp = max(mssd._stamp, stamp)
    mssd.txmgr.next_txid = max_txid + 1
    return mssd


def crash_clone(mssd: Mssd, **load_kwargs) -> Mssd:
    """Simulated power loss: round-trip the image, dropping host state."""
    buf = io.BytesIO()
    save(mssd, buf)
    buf.seek(0)
    return load(buf, **load_kwargs)
