"""Transaction identity, commit ordering, and post-crash recovery.

The TxTable lives host-side and does not survive a crash; the TxLog is a
firmware append-only list of 4-byte committed transaction ids and does.
Recovery scans the whole log region, discards entries whose transaction
never reached the TxLog, and flushes the rest in commit order.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field

from .device import CACHELINE
from .errors import InvalidArgument, SpaceExhausted, StateError, TxAborted
from .writelog import FLAG_COMMITTED_AT_WRITE, FLAG_INVALID

ACTIVE = "active"
COMMITTED = "committed"
ABORTED = "aborted"


class TxLog:
    """Append-only buffer of committed TxIds (4 bytes each)."""

    def __init__(self, capacity_bytes: int):
        self.capacity_entries = capacity_bytes // 4
        self.entries: list[int] = []
        self.committed_set: set[int] = set()
        # in-memory commit stamps; reconstructed from entry order at recovery
        self.commit_stamps: dict[int, int] = {}

    @property
    def full(self) -> bool:
        return len(self.entries) >= self.capacity_entries

    def append(self, txid: int, stamp: int) -> None:
        if self.full:
            raise SpaceExhausted("TxLog full")
        if txid in self.committed_set:
            raise StateError(f"tx {txid} already committed")
        self.entries.append(txid)
        self.committed_set.add(txid)
        self.commit_stamps[txid] = stamp

    def clear(self) -> None:
        self.entries.clear()
        self.committed_set.clear()
        self.commit_stamps.clear()


@dataclass
class TxRecord:
    txid: int
    state: str = ACTIVE
    locks: set = field(default_factory=set)


@dataclass
class RecoveryReport:
    entries_scanned: int = 0
    entries_discarded: int = 0
    entries_flushed: int = 0
    elapsed_sim_ns: int = 0


class TxManager:
    """Host-side transaction table with conflict locking.

    Conflict granularity is configurable: "cacheline" (default) or
    "page".  A writer that collides with another active transaction
    blocks until that transaction finishes, or aborts after
    `lock_timeout_s` of wall time.
    """

    def __init__(self, mssd, conflict_granularity: str = "cacheline",
                 lock_timeout_s: float = 5.0):
        if conflict_granularity not in ("cacheline", "page"):
            raise InvalidArgument("conflict_granularity must be cacheline or page")
        self.mssd = mssd
        self.granularity = conflict_granularity
        self.lock_timeout_s = lock_timeout_s
        self.table: dict[int, TxRecord] = {}
        self.next_txid = 1  # 0 is reserved for non-transactional writes
        self._lock_owner: dict[tuple, int] = {}
        # reentrant: tx_commit may trigger a clean that queries active txs
        self._cond = threading.Condition(threading.RLock())

    def active_txids(self) -> set[int]:
        with self._cond:
            return {t for t, rec in self.table.items() if rec.state == ACTIVE}

    def tx_begin(self) -> int:
        with self._cond:
            if self.next_txid >= 2 ** 32:
                raise SpaceExhausted("TxId space exhausted")
            txid = self.next_txid
            self.next_txid += 1
            self.table[txid] = TxRecord(txid)
            return txid

    def _conflict_keys(self, addr: int, length: int) -> list[tuple]:
        page_size = self.mssd.config.page_size
        if self.granularity == "page":
            return [(addr // page_size,)]
        first = addr // CACHELINE
        last = (addr + length - 1) // CACHELINE
        return [(cl,) for cl in range(first, last + 1)]

    def _acquire(self, txid: int, keys: list[tuple]) -> None:
        with self._cond:
            rec = self._require_active(txid)
            deadline = None
            pending = [k for k in keys if self._lock_owner.get(k, txid) != txid]
            while pending:
                if deadline is None:
                    deadline = time.monotonic() + self.lock_timeout_s
                remaining = deadline - time.monotonic()
                if remaining <= 0 or not self._cond.wait(timeout=remaining):
                    self._abort_locked(rec)
                    raise TxAborted(f"tx {txid} timed out waiting for locks")
                rec = self._require_active(txid)
                pending = [k for k in keys
                           if self._lock_owner.get(k, txid) != txid]
            for k in keys:
                self._lock_owner[k] = txid
                rec.locks.add(k)

    def _require_active(self, txid: int) -> TxRecord:
        rec = self.table.get(txid)
        if rec is None:
            raise StateError(f"unknown tx {txid}")
        if rec.state != ACTIVE:
            raise StateError(f"tx {txid} is {rec.state}")
        return rec

    def _release_locks(self, rec: TxRecord) -> None:
        for k in rec.locks:
            if self._lock_owner.get(k) == rec.txid:
                del self._lock_owner[k]
        rec.locks.clear()
        self._cond.notify_all()

    def tx_write(self, txid: int, addr: int, data: bytes,
                 category: str = "untagged") -> None:
        self._acquire(txid, self._conflict_keys(addr, len(data)))
        self.mssd.byte_write(addr, data, txid=txid, category=category)

    def tx_commit(self, txid: int) -> None:
        with self._cond:
            rec = self._require_active(txid)
            txlog = self.mssd.txlog
            if txlog.full:
                self.mssd.clean()
            txlog.append(txid, self.mssd.next_stamp())
            rec.state = COMMITTED
            self._release_locks(rec)

    def tx_abort(self, txid: int) -> None:
        with self._cond:
            rec = self._require_active(txid)
            self._abort_locked(rec)

    def _abort_locked(self, rec: TxRecord) -> None:
        rec.state = ABORTED
        self._release_locks(rec)


def recover(mssd) -> RecoveryReport:
    """Full log-region scan after a crash: discard uncommitted entries,
    flush committed ones to flash in TxLog commit order, then clear the
    log region and TxLog.  Exclusive; no concurrent foreground traffic.
    """
    report = RecoveryReport()
    start_ns = mssd.device.clock.now_ns
    txlog = mssd.txlog
    log = mssd.writelog
    cfg = mssd.config
    gen = log.active_gen

    if gen.bulk is not None:
        _recover_bulk(mssd, gen, report)
        mssd.reset_log()
        txlog.clear()
        report.elapsed_sim_ns = mssd.device.clock.now_ns - start_ns
        return report

    # Position in the TxLog orders committed transactions; entries
    # committed at write time sort before any transactional commit with a
    # later append sequence (ties impossible: seq is unique).
    commit_index = {txid: i for i, txid in enumerate(txlog.entries)}

    # kept entries per (lpa, cacheline), overlaid in key order: a newer
    # short entry only partially covers its cacheline
    chains: dict[int, dict[int, list]] = {}
    for rec in gen.slots:
        report.entries_scanned += 1
        if rec.flags & FLAG_INVALID:
            report.entries_discarded += 1
            continue
        if rec.flags & FLAG_COMMITTED_AT_WRITE:
            key = (-1, rec.seq)
        elif rec.txid in commit_index:
            key = (commit_index[rec.txid], rec.seq)
        else:
            report.entries_discarded += 1
            continue
        report.entries_flushed += 1
        chains.setdefault(rec.lpa, {}).setdefault(
            rec.block_offset, []).append((key, rec))

    cl_per_page = cfg.cachelines_per_page
    pending = []
    for lpa, page_chains in chains.items():
        for entries in page_chains.values():
            entries.sort(key=lambda e: e[0])
        partial = len(page_chains) < cl_per_page or any(
            max(rec.length for _, rec in entries) < CACHELINE
            for entries in page_chains.values()
        )
        if partial:
            page = bytearray(mssd.device.read_lpa(lpa, "untagged"))
        else:
            page = bytearray(cfg.page_size)
        order = max(entries[-1][0] for entries in page_chains.values())
        for off, entries in page_chains.items():
            start = off * CACHELINE
            for _, rec in entries:
                page[start:start + rec.length] = gen.payload(rec)
        pending.append((order, lpa, bytes(page)))

    pending.sort(key=lambda t: t[0])
    batch_pages = max(1, cfg.write_buffer_bytes // cfg.page_size)
    for i in range(0, len(pending), batch_pages):
        batch = pending[i:i + batch_pages]
        mssd.device.write_pages([
            (mssd.device.ftl_translate(lpa), page, "untagged")
            for _, lpa, page in batch
        ])

    mssd.reset_log()
    txlog.clear()
    report.elapsed_sim_ns = mssd.device.clock.now_ns - start_ns
    return report


def _recover_bulk(mssd, gen, report: RecoveryReport) -> None:
    """Vectorized scan for bulk-loaded sidecar arrays (same semantics as
    the object path, sized for logs with millions of entries)."""
    import numpy as np

    cfg = mssd.config
    cl_per_page = cfg.cachelines_per_page
    arr = gen.bulk
    n = len(arr)
    report.entries_scanned = n
    if n == 0:
        return

    committed_at_write = (arr["flags"] & FLAG_COMMITTED_AT_WRITE) != 0
    entries = np.asarray(mssd.txlog.entries, dtype=np.uint32)
    if entries.size:
        tx_order = np.argsort(entries, kind="stable")
        sorted_tx = entries[tx_order]
        pos = np.clip(np.searchsorted(sorted_tx, arr["txid"]), 0,
                      entries.size - 1)
        in_txlog = sorted_tx[pos] == arr["txid"]
        commit_idx = np.where(in_txlog, tx_order[pos], 0).astype(np.int64)
    else:
        in_txlog = np.zeros(n, dtype=bool)
        commit_idx = np.zeros(n, dtype=np.int64)

    keep = (committed_at_write | in_txlog) & \
        ((arr["flags"] & FLAG_INVALID) == 0)
    report.entries_flushed = int(keep.sum())
    report.entries_discarded = n - report.entries_flushed
    idx = np.nonzero(keep)[0]
    if idx.size == 0:
        return

    lpa = arr["lpa"][idx].astype(np.int64)
    off = arr["block_offset"][idx].astype(np.int64)
    seq = arr["seq"][idx].astype(np.int64)
    ckey = np.where(committed_at_write[idx], -1, commit_idx[idx])
    if int(seq.max()) >= 1 << 44:
        raise InvalidArgument("sequence numbers too large for bulk recovery")
    # scalar composite of the (commit index, append seq) ordering key
    composite = (ckey + 1) * (1 << 44) + seq

    cell = lpa * cl_per_page + off
    order = np.lexsort((seq, ckey, cell))
    cell_s = cell[order]
    last = np.nonzero(np.r_[cell_s[1:] != cell_s[:-1], True])[0]
    group_start = np.r_[0, last[:-1] + 1]
    win = order[last]                     # newest entry per touched cacheline
    win_slots = idx[win]                  # payload slot index
    win_lpa, win_off = lpa[win], off[win]
    win_key = composite[win]
    win_len = arr["length"][win_slots].astype(np.int64)
    len_s = arr["length"][idx][order].astype(np.int64)
    coverage = np.maximum.reduceat(len_s, group_start)  # chain-max per cell

    page_starts = np.nonzero(np.r_[True, win_lpa[1:] != win_lpa[:-1]])[0]
    page_lpas = win_lpa[page_starts]
    counts = np.diff(np.r_[page_starts, win.size])
    npages = page_lpas.size
    page_of_winner = np.repeat(np.arange(npages), counts)
    page_key = np.maximum.reduceat(win_key, page_starts)

    out = np.zeros((npages, cl_per_page, CACHELINE), dtype=np.uint8)
    full = (counts == cl_per_page) & (
        np.minimum.reduceat(coverage, page_starts) == CACHELINE)
    for p in np.nonzero(~full)[0]:        # partial pages merge flash content
        base = mssd.device.read_lpa(int(page_lpas[p]), "untagged")
        out[p] = np.frombuffer(base, dtype=np.uint8).reshape(cl_per_page,
                                                             CACHELINE)
    buf_view = np.frombuffer(gen.buf, dtype=np.uint8)[:gen.tail_slots *
                                                      CACHELINE]
    buf_view = buf_view.reshape(gen.tail_slots, CACHELINE)
    whole = win_len == CACHELINE
    out[page_of_winner[whole], win_off[whole]] = buf_view[win_slots[whole]]
    for j in np.nonzero(~whole)[0]:
        # newest entry is short: overlay its whole chain in key order
        for e in order[group_start[j]:last[j] + 1]:
            slot = int(idx[e])
            length = int(arr["length"][slot])
            out[page_of_winner[j], win_off[j], :length] = \
                buf_view[slot, :length]

    flush_order = np.argsort(page_key, kind="stable")
    batch_pages = max(1, cfg.write_buffer_bytes // cfg.page_size)
    flat = out.reshape(npages, cfg.page_size)
    for i in range(0, npages, batch_pages):
        batch = flush_order[i:i + batch_pages]
        mssd.device.write_pages([
            (mssd.device.ftl_translate(int(page_lpas[p])),
             flat[p].tobytes(), "untagged")
            for p in batch
        ])
