"""Benchmark and trace harness.

Workloads are generated as deterministic per-thread operation streams and
interleaved round-robin, so a (profile, seed) pair always produces the
same trace regardless of host scheduling.  Reports carry the full traffic
breakdown per category and direction, in both a human table and
machine-readable ``section.key value`` lines.
"""

from __future__ import annotations

import hashlib
import random
import time
from dataclasses import dataclass, field

from .device import CACHELINE, CATEGORIES, DeviceConfig, GiB, KiB, MiB
from .errors import FsError, InvalidArgument
from .fs import JOURNAL_MODES, MODES, ByteFS, make_mssd, mkfs, recover_fs
from .image import crash_clone
from .layout import ITYPE_DIR

PROFILES = ("create", "delete", "mkdir", "rmdir", "varmail", "fileserver",
            "webproxy", "webserver", "oltp", "kvstore")

DEFAULT_THREADS = 4
DEFAULT_OPS = 2000


# ---------------------------------------------------------------------------
# trace records


@dataclass
class TraceRecord:
    op: str
    path: str
    offset: int = 0
    size: int = 0
    fsync: bool = False

    def format(self) -> str:
        line = f"{self.op} {self.path} {self.offset} {self.size}"
        if self.fsync:
            line += " F"
        return line

    @classmethod
    def parse(cls, line: str) -> "TraceRecord":
        parts = line.split()
        if len(parts) < 4:
            raise InvalidArgument(f"bad trace line: {line!r}")
        op, path, offset, size = parts[:4]
        fsync = len(parts) > 4 and parts[4] == "F"
        if op not in ("create", "mkdir", "unlink", "rmdir", "write", "read",
                      "fsync"):
            raise InvalidArgument(f"unknown trace op {op!r}")
        return cls(op, path, int(offset), int(size), fsync)


def write_trace(records: list[TraceRecord], path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(rec.format() + "\n")


def read_trace(path) -> list[TraceRecord]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                out.append(TraceRecord.parse(line))
    return out


def _pattern(path: str, offset: int, size: int) -> bytes:
    """Deterministic payload so a replayed trace reproduces content."""
    seed = hashlib.blake2b(f"{path}:{offset}".encode(),
                           digest_size=8).digest()
    reps = size // len(seed) + 1
    return (seed * reps)[:size]


# ---------------------------------------------------------------------------
# workload generation


@dataclass
class WorkloadSpec:
    profile: str
    seed: int = 0
    ops: int = DEFAULT_OPS
    threads: int = DEFAULT_THREADS
    io_size: int = 4 * KiB
    file_size: int = 32 * KiB

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise InvalidArgument(f"unknown profile {self.profile!r}")


def _gen_create(tid: int, rng: random.Random, spec: WorkloadSpec):
    yield TraceRecord("mkdir", f"/t{tid}")
    i = 0
    while True:
        yield TraceRecord("create", f"/t{tid}/f{i:06d}")
        i += 1


def _gen_delete(tid: int, rng: random.Random, spec: WorkloadSpec):
    yield TraceRecord("mkdir", f"/t{tid}")
    i = 0
    while True:
        yield TraceRecord("create", f"/t{tid}/f{i:06d}")
        yield TraceRecord("unlink", f"/t{tid}/f{i:06d}")
        i += 1


def _gen_mkdir(tid: int, rng: random.Random, spec: WorkloadSpec):
    yield TraceRecord("mkdir", f"/t{tid}")
    i = 0
    while True:
        yield TraceRecord("mkdir", f"/t{tid}/d{i:06d}")
        i += 1


def _gen_rmdir(tid: int, rng: random.Random, spec: WorkloadSpec):
    yield TraceRecord("mkdir", f"/t{tid}")
    i = 0
    while True:
        yield TraceRecord("mkdir", f"/t{tid}/d{i:06d}")
        yield TraceRecord("rmdir", f"/t{tid}/d{i:06d}")
        i += 1


def _gen_varmail(tid: int, rng: random.Random, spec: WorkloadSpec):
    """Mail-server pattern: create, append, fsync, read, delete."""
    yield TraceRecord("mkdir", f"/t{tid}")
    live: list[str] = []
    i = 0
    while True:
        roll = rng.random()
        if roll < 0.35 or not live:
            path = f"/t{tid}/m{i:06d}"
            i += 1
            size = rng.randrange(256, 4 * KiB)
            yield TraceRecord("create", path)
            yield TraceRecord("write", path, 0, size, fsync=True)
            live.append(path)
        elif roll < 0.60:
            path = rng.choice(live)
            size = rng.randrange(128, 2 * KiB)
            yield TraceRecord("write", path, 0, size, fsync=True)
        elif roll < 0.85:
            path = rng.choice(live)
            yield TraceRecord("read", path, 0, 4 * KiB)
        else:
            path = live.pop(rng.randrange(len(live)))
            yield TraceRecord("unlink", path)


def _gen_fileserver(tid: int, rng: random.Random, spec: WorkloadSpec):
    yield TraceRecord("mkdir", f"/t{tid}")
    live: list[str] = []
    i = 0
    while True:
        roll = rng.random()
        if roll < 0.30 or not live:
            path = f"/t{tid}/f{i:06d}"
            i += 1
            yield TraceRecord("create", path)
            for off in range(0, spec.file_size, spec.io_size):
                yield TraceRecord("write", path, off, spec.io_size)
            yield TraceRecord("fsync", path, 0, 0)
            live.append(path)
        elif roll < 0.55:
            path = rng.choice(live)
            off = rng.randrange(0, spec.file_size // spec.io_size) * spec.io_size
            yield TraceRecord("write", path, off, spec.io_size, fsync=True)
        elif roll < 0.90:
            path = rng.choice(live)
            yield TraceRecord("read", path, 0, spec.file_size)
        else:
            path = live.pop(rng.randrange(len(live)))
            yield TraceRecord("unlink", path)


def _gen_webproxy(tid: int, rng: random.Random, spec: WorkloadSpec):
    """Proxy cache: create-once objects, read-heavy afterwards."""
    yield TraceRecord("mkdir", f"/t{tid}")
    live: list[str] = []
    i = 0
    while True:
        if rng.random() < 0.2 or not live:
            path = f"/t{tid}/o{i:06d}"
            i += 1
            size = rng.randrange(1 * KiB, 16 * KiB)
            yield TraceRecord("create", path)
            yield TraceRecord("write", path, 0, size, fsync=True)
            live.append((path, size))
        else:
            path, size = rng.choice(live)
            yield TraceRecord("read", path, 0, size)


def _gen_webserver(tid: int, rng: random.Random, spec: WorkloadSpec):
    """Static content reads plus a small append-only access log."""
    yield TraceRecord("mkdir", f"/t{tid}")
    pages = [f"/t{tid}/p{i:03d}" for i in range(20)]
    for path in pages:
        yield TraceRecord("create", path)
        yield TraceRecord("write", path, 0, 8 * KiB, fsync=True)
    log = f"/t{tid}/access.log"
    yield TraceRecord("create", log)
    log_off = 0
    while True:
        for _ in range(10):
            yield TraceRecord("read", rng.choice(pages), 0, 8 * KiB)
        yield TraceRecord("write", log, log_off, 128, fsync=True)
        log_off += 128


def _gen_oltp(tid: int, rng: random.Random, spec: WorkloadSpec):
    """Database pattern: WAL append + small in-place update, fsync both."""
    yield TraceRecord("mkdir", f"/t{tid}")
    table = f"/t{tid}/table.db"
    wal = f"/t{tid}/wal.log"
    yield TraceRecord("create", table)
    yield TraceRecord("create", wal)
    for off in range(0, spec.file_size, spec.io_size):
        yield TraceRecord("write", table, off, spec.io_size)
    yield TraceRecord("fsync", table, 0, 0)
    wal_off = 0
    while True:
        yield TraceRecord("write", wal, wal_off, 128, fsync=True)
        wal_off += 128
        off = rng.randrange(0, spec.file_size - 512)
        size = rng.choice((64, 128, 256))
        yield TraceRecord("write", table, off, size, fsync=True)


def _gen_kvstore(tid: int, rng: random.Random, spec: WorkloadSpec):
    """Key-value store: fixed-size slots, read-modify-write per update."""
    yield TraceRecord("mkdir", f"/t{tid}")
    store = f"/t{tid}/store.kv"
    slots = max(16, spec.file_size // 256)
    yield TraceRecord("create", store)
    for off in range(0, slots * 256, spec.io_size):
        yield TraceRecord("write", store, off, spec.io_size)
    yield TraceRecord("fsync", store, 0, 0)
    while True:
        slot = rng.randrange(slots)
        if rng.random() < 0.4:
            yield TraceRecord("read", store, slot * 256, 256)
        else:
            yield TraceRecord("write", store, slot * 256, 128, fsync=True)


_GENERATORS = {
    "create": _gen_create, "delete": _gen_delete, "mkdir": _gen_mkdir,
    "rmdir": _gen_rmdir, "varmail": _gen_varmail,
    "fileserver": _gen_fileserver, "webproxy": _gen_webproxy,
    "webserver": _gen_webserver, "oltp": _gen_oltp, "kvstore": _gen_kvstore,
}


def build_workload(spec: WorkloadSpec) -> list[TraceRecord]:
    """Interleave the per-thread streams round-robin into one trace."""
    gen = _GENERATORS[spec.profile]
    streams = [gen(t, random.Random((spec.seed << 8) | t), spec)
               for t in range(spec.threads)]
    records: list[TraceRecord] = []
    while len(records) < spec.ops:
        for stream in streams:
            records.append(next(stream))
            if len(records) >= spec.ops:
                break
    return records


# ---------------------------------------------------------------------------
# execution


def apply_record(fs: ByteFS, rec: TraceRecord, fds: dict[str, int]) -> None:
    if rec.op == "create":
        fs.create(rec.path)
    elif rec.op == "mkdir":
        fs.mkdir(rec.path)
    elif rec.op == "unlink":
        fd = fds.pop(rec.path, None)
        if fd is not None:
            fs.close(fd)
        fs.unlink(rec.path)
    elif rec.op == "rmdir":
        fs.rmdir(rec.path)
    elif rec.op == "write":
        fd = _fd(fs, fds, rec.path)
        fs.write(fd, rec.offset, _pattern(rec.path, rec.offset, rec.size))
        if rec.fsync:
            fs.fsync(fd)
    elif rec.op == "read":
        fs.read(_fd(fs, fds, rec.path), rec.offset, rec.size)
    elif rec.op == "fsync":
        fs.fsync(_fd(fs, fds, rec.path))
    else:
        raise InvalidArgument(f"unknown trace op {rec.op!r}")


def _fd(fs: ByteFS, fds: dict[str, int], path: str) -> int:
    fd = fds.get(path)
    if fd is None:
        fd = fds[path] = fs.open(path)
    return fd


@dataclass
class RunReport:
    profile: str
    mode: str
    journal: str
    seed: int
    ops: int
    sim_ns: int
    wall_s: float
    traffic: dict = field(default_factory=dict)
    log_utilization: float = 0.0
    fsck_problems: int = 0

    DIRECTIONS = ("host_to_ssd", "ssd_to_host", "flash_read", "flash_write")

    def emit(self) -> str:
        lines = [
            f"run.profile {self.profile}",
            f"run.mode {self.mode}",
            f"run.journal {self.journal}",
            f"run.seed {self.seed}",
            f"run.ops {self.ops}",
            f"run.sim_ns {self.sim_ns}",
            f"run.wall_s {self.wall_s:.3f}",
            f"run.log_utilization {self.log_utilization:.4f}",
            f"run.fsck_problems {self.fsck_problems}",
        ]
        for d in self.DIRECTIONS:
            lines.append(f"traffic.{d}.total {sum(self.traffic[d].values())}")
            for cat in CATEGORIES:
                lines.append(f"traffic.{d}.{cat} {self.traffic[d][cat]}")
        return "\n".join(lines) + "\n"

    def table(self) -> str:
        head = (f"profile={self.profile} mode={self.mode} "
                f"journal={self.journal} seed={self.seed} ops={self.ops}")
        rows = [head,
                f"sim time: {self.sim_ns / 1e6:.3f} ms   "
                f"wall: {self.wall_s:.3f} s   "
                f"log utilization: {self.log_utilization:.1%}"]
        width = max(len(c) for c in CATEGORIES)
        header = "category".ljust(width) + "".join(
            f"{d:>14}" for d in self.DIRECTIONS)
        rows.append(header)
        for cat in CATEGORIES:
            vals = [self.traffic[d][cat] for d in self.DIRECTIONS]
            if not any(vals):
                continue
            rows.append(cat.ljust(width) + "".join(f"{v:>14}" for v in vals))
        rows.append("total".ljust(width) + "".join(
            f"{sum(self.traffic[d].values()):>14}" for d in self.DIRECTIONS))
        return "\n".join(rows) + "\n"


def run(spec: WorkloadSpec, config: DeviceConfig | None = None,
        mode: str = "full", journal: str = "ordered",
        cache_bytes: int | None = None, check: bool = True):
    """Format a device, execute the workload, report traffic.
    Returns (fs, report, trace records)."""
    records = build_workload(spec)
    mssd = make_mssd(config, mode)
    mkfs(mssd)
    kwargs = {} if cache_bytes is None else {"cache_bytes": cache_bytes}
    fs = ByteFS(mssd, mode=mode, journal=journal, **kwargs)
    fs.mount()
    report = replay(fs, records, spec=spec, check=check)
    return fs, report, records


def replay(fs: ByteFS, records: list[TraceRecord],
           spec: WorkloadSpec | None = None, check: bool = True) -> RunReport:
    before = fs.mssd.traffic_snapshot()
    sim_start = fs.mssd.clock_ns
    wall_start = time.monotonic()
    fds: dict[str, int] = {}
    for rec in records:
        apply_record(fs, rec, fds)
    for fd in fds.values():
        fs.close(fd)
    wall = time.monotonic() - wall_start
    delta = fs.mssd.traffic_snapshot().delta(before)
    problems = fs.fsck() if check else []
    return RunReport(
        profile=spec.profile if spec else "trace",
        mode=fs.mode, journal=fs.journal_mode,
        seed=spec.seed if spec else 0,
        ops=len(records),
        sim_ns=fs.mssd.clock_ns - sim_start,
        wall_s=wall,
        traffic={d: dict(delta.by_category[d]) for d in RunReport.DIRECTIONS},
        log_utilization=fs.mssd.utilization(),
        fsck_problems=len(problems),
    )


# ---------------------------------------------------------------------------
# crash runs


@dataclass
class CrashVerdict:
    crash_at: int
    ok: bool
    missing: list[str] = field(default_factory=list)
    corrupt: list[str] = field(default_factory=list)
    unexpected: list[str] = field(default_factory=list)
    fsck_problems: list[str] = field(default_factory=list)

    def emit(self) -> str:
        lines = [f"crash.at {self.crash_at}",
                 f"crash.ok {int(self.ok)}",
                 f"crash.missing {len(self.missing)}",
                 f"crash.corrupt {len(self.corrupt)}",
                 f"crash.unexpected {len(self.unexpected)}",
                 f"crash.fsck_problems {len(self.fsck_problems)}"]
        return "\n".join(lines) + "\n"


class DurabilityOracle:
    """Tracks what must survive a crash: every completed namespace
    operation, and file data up to its last fsync."""

    def __init__(self):
        self.dirs: set[str] = set()
        self.files: set[str] = set()         # created (durable at op end)
        self.synced: dict[str, bytes] = {}   # content at last fsync
        self.pending: dict[str, bytearray] = {}

    def apply(self, rec: TraceRecord) -> None:
        if rec.op == "mkdir":
            self.dirs.add(rec.path)
        elif rec.op == "rmdir":
            self.dirs.discard(rec.path)
        elif rec.op == "create":
            self.files.add(rec.path)
            self.pending[rec.path] = bytearray()
            self.synced[rec.path] = b""
        elif rec.op == "unlink":
            self.files.discard(rec.path)
            self.pending.pop(rec.path, None)
            self.synced.pop(rec.path, None)
        elif rec.op == "write":
            buf = self.pending.setdefault(rec.path, bytearray())
            end = rec.offset + rec.size
            if end > len(buf):
                buf += bytes(end - len(buf))
            buf[rec.offset:end] = _pattern(rec.path, rec.offset, rec.size)
            if rec.fsync:
                self.synced[rec.path] = bytes(buf)
        elif rec.op == "fsync":
            self.synced[rec.path] = bytes(
                self.pending.get(rec.path, bytearray()))

    def check(self, fs: ByteFS) -> CrashVerdict:
        verdict = CrashVerdict(crash_at=0, ok=True)
        for path in sorted(self.dirs | self.files):
            if not fs.exists(path):
                verdict.missing.append(path)
        for path, expect in sorted(self.synced.items()):
            if path not in self.files:
                continue
            try:
                inode = fs.lookup(path)
            except FsError:
                continue  # already reported missing
            if inode.size != len(expect):
                verdict.corrupt.append(f"{path} size {inode.size} != "
                                       f"{len(expect)}")
                continue
            if expect:
                fd = fs.open(path)
                got = fs.read(fd, 0, len(expect))
                fs.close(fd)
                if got != expect:
                    verdict.corrupt.append(f"{path} content mismatch")
        seen = self.dirs | self.files
        verdict.unexpected = [p for p in _walk_paths(fs)
                              if p not in seen]
        verdict.fsck_problems = fs.fsck()
        verdict.ok = not (verdict.missing or verdict.corrupt
                          or verdict.unexpected or verdict.fsck_problems)
        return verdict


def _walk_paths(fs: ByteFS, root: str = "/") -> list[str]:
    out = []
    for name in fs.readdir(root):
        path = (root.rstrip("/") or "") + "/" + name
        out.append(path)
        if fs.lookup(path).itype == ITYPE_DIR:
            out += _walk_paths(fs, path)
    return out


def crash_run(spec: WorkloadSpec, crash_at: int,
              config: DeviceConfig | None = None, mode: str = "full",
              journal: str = "ordered") -> CrashVerdict:
    """Execute the workload, crash after ``crash_at`` operations, recover,
    and verify the durability oracle plus fsck."""
    records = build_workload(spec)
    crash_at = min(crash_at, len(records))
    mssd = make_mssd(config, mode)
    mkfs(mssd)
    fs = ByteFS(mssd, mode=mode, journal=journal)
    fs.mount()
    oracle = DurabilityOracle()
    fds: dict[str, int] = {}
    for rec in records[:crash_at]:
        apply_record(fs, rec, fds)
        oracle.apply(rec)
    clone = crash_clone(mssd)
    recovered, _report = recover_fs(clone, mode=mode, journal=journal)
    verdict = oracle.check(recovered)
    verdict.crash_at = crash_at
    return verdict


# ---------------------------------------------------------------------------
# mode sweeps


def sweep(spec: WorkloadSpec, config: DeviceConfig | None = None,
          journal: str = "ordered",
          modes: tuple[str, ...] = MODES) -> dict[str, RunReport]:
    """Run the same workload in each mount mode for ablation comparisons."""
    return {mode: run(spec, config, mode=mode, journal=journal)[1]
            for mode in modes}


def sweep_table(reports: dict[str, RunReport]) -> str:
    cols = ("host_to_ssd", "ssd_to_host", "flash_read", "flash_write")
    rows = ["mode".ljust(12) + "".join(f"{c:>14}" for c in cols)
            + f"{'sim_ms':>12}"]
    for mode, rep in reports.items():
        rows.append(mode.ljust(12) + "".join(
            f"{sum(rep.traffic[c].values()):>14}" for c in cols)
            + f"{rep.sim_ns / 1e6:>12.3f}")
    return "\n".join(rows) + "\n"


def sweep_emit(reports: dict[str, RunReport]) -> str:
    out = []
    for mode, rep in reports.items():
        for line in rep.emit().splitlines():
            out.append(f"{mode}.{line}")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# config files


_SIZE_SUFFIXES = {"kib": KiB, "mib": MiB, "gib": GiB,
                  "k": KiB, "m": MiB, "g": GiB}

DEVICE_KEYS = {
    "capacity_bytes", "page_size", "channel_count",
    "flash_read_latency_ns", "flash_write_latency_ns",
    "cacheline_read_latency_ns", "cacheline_write_latency_ns",
    "log_region_bytes", "txlog_bytes", "write_buffer_bytes",
    "clean_threshold",
}
FS_KEYS = {"mode", "journal", "cache_bytes"}
WORKLOAD_KEYS = {"profile", "seed", "ops", "threads", "io_size", "file_size"}


def _parse_value(key: str, raw: str):
    if key in ("mode", "journal", "profile"):
        return raw
    if key == "clean_threshold":
        return float(raw)
    low = raw.lower()
    for suffix, mult in _SIZE_SUFFIXES.items():
        if low.endswith(suffix):
            return int(float(low[:-len(suffix)]) * mult)
    return int(raw, 0)


def parse_config_text(text: str) -> dict:
    """``key = value`` lines; '#' comments; unknown keys are errors."""
    known = DEVICE_KEYS | FS_KEYS | WORKLOAD_KEYS
    out: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgument(f"config line {lineno}: expected key = value")
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in known:
            raise InvalidArgument(f"config line {lineno}: unknown key {key!r}")
        out[key] = _parse_value(key, raw)
    if "mode" in out and out["mode"] not in MODES:
        raise InvalidArgument(f"unknown mode {out['mode']!r}")
    if "journal" in out and out["journal"] not in JOURNAL_MODES:
        raise InvalidArgument(f"unknown journal mode {out['journal']!r}")
    return out


def load_config(path) -> dict:
    with open(path) as fh:
        return parse_config_text(fh.read())


def split_config(options: dict):
    """Partition parsed options into device / fs / workload groups."""
    device = {k: v for k, v in options.items() if k in DEVICE_KEYS}
    fs_opts = {k: v for k, v in options.items() if k in FS_KEYS}
    workload = {k: v for k, v in options.items() if k in WORKLOAD_KEYS}
    config = DeviceConfig(**device) if device else None
    return config, fs_opts, workload
