"""Log-structured SSD-DRAM write buffer.

Byte-interface writes land in a 64B-slot log region indexed by a
three-layer structure: a partition table over 16 MiB slices of the
logical address space, a skip list per partition keyed by LPA, and an
ordered chunk list per page.  Cleaning merges committed entries back to
flash; double buffering is realized by switching to a fresh log
generation and draining the old one.
"""

from __future__ import annotations

from dataclasses import dataclass

from .device import CACHELINE, FlashDevice, MiB
from .errors import AddressFault, BackPressure, InvalidArgument
from .skiplist import SkipList

PARTITION_BYTES = 16 * MiB

FLAG_COMMITTED_AT_WRITE = 0x1
FLAG_INVALID = 0x2  # superseded by a later block write; skip at recovery


class SlotRec:
    """Sidecar record paired with one 64B payload slot."""

    __slots__ = (
        "gen", "slot_idx", "lpa", "block_offset", "length",
        "flags", "txid", "seq", "category",
    )

    def __init__(self, gen, slot_idx, lpa, block_offset, length,
                 flags, txid, seq, category):
        self.gen = gen
        self.slot_idx = slot_idx
        self.lpa = lpa
        self.block_offset = block_offset
        self.length = length
        self.flags = flags
        self.txid = txid
        self.seq = seq
        self.category = category

    @property
    def log_offset(self) -> int:
        return self.slot_idx * CACHELINE


@dataclass
class ChunkEntry:
    """Index record locating one buffered write within a page."""

    block_offset: int
    log_offset: int
    length: int


@dataclass
class CleanReport:
    pages_flushed: int = 0
    entries_migrated: int = 0
    flash_reads: int = 0
    flash_writes: int = 0


class LogGeneration:
    """One incarnation of the log region.

    Appends only grow the tail; the whole generation is released at the
    end of a cleaning pass, which is how the circular region wraps.
    """

    def __init__(self, gen_id: int, capacity_bytes: int):
        self.gen_id = gen_id
        self.capacity_slots = capacity_bytes // CACHELINE
        self.buf = bytearray(capacity_bytes)
        self.tail_slots = 0
        self.slots: list[SlotRec] = []
        self.bulk = None  # optional sidecar ndarray installed by bulk_load

    @property
    def full(self) -> bool:
        return self.tail_slots >= self.capacity_slots

    def payload(self, rec: SlotRec) -> bytes:
        start = rec.slot_idx * CACHELINE
        return bytes(self.buf[start:start + rec.length])


class _PageNode:
    """Third-layer chunk lists for one LPA: per-cacheline version chains."""

    __slots__ = ("lpa", "chains")

    def __init__(self, lpa: int):
        self.lpa = lpa
        # block_offset -> list[SlotRec] in append (seq) order
        self.chains: dict[int, list[SlotRec]] = {}


class LogIndex:
    """Partitioned skip-list index over the log region."""

    def __init__(self, page_size: int):
        self.page_size = page_size
        self.pages_per_partition = PARTITION_BYTES // page_size
        self.partitions: dict[int, SkipList] = {}
        self.live_entries = 0

    def _partition_of(self, lpa: int) -> int:
        return (lpa * self.page_size) // PARTITION_BYTES

    def node(self, lpa: int) -> _PageNode | None:
        part = self.partitions.get(self._partition_of(lpa))
        if part is None:
            return None
        return part.get(lpa)

    def insert(self, rec: SlotRec) -> None:
        pidx = self._partition_of(rec.lpa)
        part = self.partitions.get(pidx)
        if part is None:
            part = self.partitions[pidx] = SkipList(seed=pidx)
        node = part.get(rec.lpa)
        if node is None:
            node = _PageNode(rec.lpa)
            part.insert(rec.lpa, node)
        node.chains.setdefault(rec.block_offset, []).append(rec)
        self.live_entries += 1

    def drop_page(self, lpa: int) -> int:
        """Remove every entry for a page (block-write invalidation)."""
        pidx = self._partition_of(lpa)
        part = self.partitions.get(pidx)
        if part is None:
            return 0
        node = part.get(lpa)
        if node is None:
            return 0
        dropped = 0
        for chain in node.chains.values():
            for rec in chain:
                rec.flags |= FLAG_INVALID
                dropped += 1
        part.delete(lpa)
        self.live_entries -= dropped
        return dropped

    def iter_nodes(self):
        """Traverse all indexed pages, ordered by partition then LPA."""
        for pidx in sorted(self.partitions):
            for _, node in self.partitions[pidx].items():
                yield node


class WriteLog:
    def __init__(self, device: FlashDevice, stamp_counter):
        self.device = device
        self.cfg = device.config
        self.stamp = stamp_counter
        self.active_gen = LogGeneration(0, self.cfg.log_region_bytes)
        self.index = LogIndex(self.cfg.page_size)
        self.dead_slots = 0
        self.auto_clean_cb = None  # set by the owning device facade
        self._cleaning = False

    # -- write path --------------------------------------------------------

    def byte_write(self, addr: int, data: bytes, txid: int = 0,
                   category: str = "untagged") -> int:
        """Append one cacheline-aligned write; returns slots consumed.

        The caller aligns writes to cachelines and splits them at page
        boundaries; the payload may end short of a cacheline boundary.
        """
        if not data:
            raise InvalidArgument("empty write")
        if addr % CACHELINE:
            raise InvalidArgument("byte writes must start on a cacheline boundary")
        if addr < 0 or addr + len(data) > self.cfg.capacity_bytes:
            raise AddressFault("byte write out of device range")
        page_size = self.cfg.page_size
        if addr // page_size != (addr + len(data) - 1) // page_size:
            raise InvalidArgument("byte write crosses a page boundary")

        lpa = addr // page_size
        committed_flag = FLAG_COMMITTED_AT_WRITE if txid == 0 else 0
        slots = 0
        pos = 0
        while pos < len(data):
            block_offset = (addr + pos) % page_size // CACHELINE
            length = min(CACHELINE, len(data) - pos)
            self._append_slot(lpa, block_offset, data[pos:pos + length],
                              committed_flag, txid, category)
            pos += length
            slots += 1
        self.device.clock.advance(slots * self.cfg.cacheline_write_latency_ns)
        if (self.utilization() > self.cfg.clean_threshold
                and self.auto_clean_cb is not None and not self._cleaning):
            self.auto_clean_cb()
        return slots

    def _append_slot(self, lpa, block_offset, payload, flags, txid, category,
                     seq=None):
        gen = self.active_gen
        if gen.full:
            if self.auto_clean_cb is not None and not self._cleaning:
                self.auto_clean_cb()
                gen = self.active_gen
            if gen.full:
                raise BackPressure("write log full")
        slot_idx = gen.tail_slots
        start = slot_idx * CACHELINE
        gen.buf[start:start + len(payload)] = payload
        rec = SlotRec(gen.gen_id, slot_idx, lpa, block_offset, len(payload),
                      flags, txid, seq if seq is not None else self.stamp(),
                      category)
        gen.slots.append(rec)
        gen.tail_slots += 1
        self.index.insert(rec)
        return rec

    def bulk_load(self, payload: bytes, sidecars) -> None:
        """Install a prebuilt log region: raw payload bytes plus a sidecar
        record array (the device-image sidecar dtype).  Skips per-slot
        object and index construction, so very large crashed logs can be
        staged cheaply; the log must be recovered (which rebuilds nothing)
        or reset before normal operation resumes.
        """
        n = len(sidecars)
        if n > self.active_gen.capacity_slots:
            raise InvalidArgument("sidecar array exceeds log capacity")
        if len(payload) != n * CACHELINE:
            raise InvalidArgument("payload length must be 64B per sidecar")
        gen = self.active_gen
        gen.buf[:len(payload)] = payload
        gen.tail_slots = n
        gen.slots = []
        gen.bulk = sidecars
        self.index = LogIndex(self.cfg.page_size)
        self.dead_slots = 0

    # -- read path ---------------------------------------------------------

    def _live_slots(self, lpa: int) -> list[SlotRec]:
        node = self.index.node(lpa)
        if node is None:
            return []
        out = []
        for chain in node.chains.values():
            out.extend(chain)
        out.sort(key=lambda r: r.seq)
        return out

    def _overlay(self, page: bytearray, slots: list[SlotRec]) -> None:
        for rec in slots:
            start = rec.block_offset * CACHELINE
            page[start:start + rec.length] = self._gen_of(rec).payload(rec)

    def _gen_of(self, rec: SlotRec) -> LogGeneration:
        # Only the active generation holds live entries outside a clean.
        assert rec.gen == self.active_gen.gen_id
        return self.active_gen

    def _coverage(self, lpa: int) -> dict[int, int]:
        """Per-cacheline covered length (coverage always starts at offset 0)."""
        node = self.index.node(lpa)
        if node is None:
            return {}
        return {
            off: max(r.length for r in chain)
            for off, chain in node.chains.items() if chain
        }

    def byte_read(self, addr: int, length: int, category: str = "untagged"
                  ) -> tuple[bytes, int]:
        """Return (data, cachelines touched)."""
        if length <= 0:
            raise InvalidArgument("empty read")
        if addr < 0 or addr + length > self.cfg.capacity_bytes:
            raise AddressFault("byte read out of device range")
        page_size = self.cfg.page_size
        if addr // page_size != (addr + length - 1) // page_size:
            raise InvalidArgument("byte read crosses a page boundary")
        lpa = addr // page_size
        page_off = addr % page_size
        first_cl = page_off // CACHELINE
        last_cl = (page_off + length - 1) // CACHELINE
        ncl = last_cl - first_cl + 1

        coverage = self._coverage(lpa)
        fully_covered = True
        for cl in range(first_cl, last_cl + 1):
            # bytes needed within this cacheline end at `need`
            need = min(page_off + length - cl * CACHELINE, CACHELINE)
            if coverage.get(cl, 0) < need:
                fully_covered = False
                break

        slots = self._live_slots(lpa)
        if fully_covered:
            page = bytearray(page_size)
            self._overlay(page, slots)
        else:
            page = bytearray(self.device.read_lpa(lpa, category))
            self._overlay(page, slots)
        self.device.clock.advance(ncl * self.cfg.cacheline_read_latency_ns)
        return bytes(page[page_off:page_off + length]), ncl

    def block_read(self, lpa: int, category: str = "untagged") -> bytes:
        page = bytearray(self.device.read_lpa(lpa, category))
        self._overlay(page, self._live_slots(lpa))
        return bytes(page)

    def block_write(self, lpa: int, data: bytes, category: str = "untagged") -> None:
        if len(data) != self.cfg.page_size:
            raise InvalidArgument("block write must be one full page")
        self.device.write_lpa(lpa, data, category)
        # Written-back blocks are up to date: invalidate buffered entries.
        self.dead_slots += self.index.drop_page(lpa)

    def index_lookup(self, lpa: int, cl_range: tuple[int, int] | None = None
                     ) -> list[ChunkEntry]:
        """Newest live entry per cacheline, sorted by block offset."""
        node = self.index.node(lpa)
        if node is None:
            return []
        lo, hi = cl_range if cl_range else (0, self.cfg.cachelines_per_page - 1)
        out = []
        for off in sorted(node.chains):
            if lo <= off <= hi and node.chains[off]:
                rec = max(node.chains[off], key=lambda r: r.seq)
                out.append(ChunkEntry(rec.block_offset, rec.log_offset, rec.length))
        return out

    def utilization(self) -> float:
        return self.active_gen.tail_slots / self.active_gen.capacity_slots

    # -- cleaning (write log cleaning with double buffering) ---------------

    def clean(self, txlog, active_txids: set[int] | None = None) -> CleanReport:
        """Merge committed entries to flash; migrate uncommitted ones.

        `active_txids`, when given, limits migration to transactions that
        are still in flight; entries of aborted transactions are dropped
        (same as crash semantics).
        """
        report = CleanReport()
        self._cleaning = True
        try:
            old_gen = self.active_gen
            old_index = self.index
            self.active_gen = LogGeneration(old_gen.gen_id + 1,
                                            self.cfg.log_region_bytes)
            self.index = LogIndex(self.cfg.page_size)
            self.dead_slots = 0

            committed_set = txlog.committed_set
            commit_stamp = txlog.commit_stamps
            cl_per_page = self.cfg.cachelines_per_page
            pending = []  # (order_stamp, lpa, merged page, category)

            for node in old_index.iter_nodes():
                # committed entries per cacheline, in effective-stamp order;
                # a newer short entry only partially covers its cacheline,
                # so the whole chain is overlaid, not just the newest entry
                merged: dict[int, list[tuple[tuple, SlotRec]]] = {}
                for off, chain in node.chains.items():
                    for rec in chain:
                        if rec.flags & FLAG_COMMITTED_AT_WRITE:
                            eff = rec.seq
                        elif rec.txid in committed_set:
                            eff = commit_stamp[rec.txid]
                        else:
                            if active_txids is None or rec.txid in active_txids:
                                self._migrate(old_gen, rec)
                                report.entries_migrated += 1
                            continue
                        merged.setdefault(off, []).append(((eff, rec.seq), rec))
                if not merged:
                    continue
                for entries in merged.values():
                    entries.sort(key=lambda e: e[0])
                partial = len(merged) < cl_per_page or any(
                    max(rec.length for _, rec in entries) < CACHELINE
                    for entries in merged.values()
                )
                if partial:
                    page = bytearray(self.device.read_lpa(node.lpa, "untagged"))
                    report.flash_reads += 1
                else:
                    page = bytearray(self.cfg.page_size)
                order = 0
                category = "untagged"
                best = -1
                for off, entries in merged.items():
                    start = off * CACHELINE
                    for _, rec in entries:
                        page[start:start + rec.length] = old_gen.payload(rec)
                    key, rec = entries[-1]
                    order = max(order, key[0])
                    if key[0] > best:
                        best = key[0]
                        category = rec.category
                pending.append((order, node.lpa, bytes(page), category))

            # Flush in commit order, batched to fill the write buffer and
            # exploit channel parallelism.
            pending.sort(key=lambda t: t[0])
            batch_pages = max(1, self.cfg.write_buffer_bytes // self.cfg.page_size)
            for i in range(0, len(pending), batch_pages):
                batch = pending[i:i + batch_pages]
                self.device.write_pages([
                    (self.device.ftl_translate(lpa), page, category)
                    for _, lpa, page, category in batch
                ])
                report.flash_writes += len(batch)
                report.pages_flushed += len(batch)

            txlog.clear()
        finally:
            self._cleaning = False
        return report

    def _migrate(self, old_gen: LogGeneration, rec: SlotRec) -> None:
        if self.active_gen.full:
            raise BackPressure("new log region filled during cleaning")
        self._append_slot(rec.lpa, rec.block_offset, old_gen.payload(rec),
                          rec.flags, rec.txid, rec.category, seq=rec.seq)
