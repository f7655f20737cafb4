"""The file system proper.

On-device metadata with cacheline-sized update units, a host page cache
with copy-on-write dirty diffing, byte/block interface selection, and
journaling.  Four mount modes:

  block_only  all metadata and data via the block interface, device log off
  dual        metadata via the byte interface, data via block, device log off
  dual_log    dual plus the firmware write log
  full        dual_log plus interface selection for data (writeback ratio
              rule and the 512B direct-I/O threshold)

Metadata reads always use the block interface and are cached host-side;
cache hits produce zero device traffic.
"""

from __future__ import annotations

import struct
import threading

from .device import CACHELINE, DeviceConfig, GiB
from .errors import (
    AlreadyExists, DirectoryNotEmpty, FsError, InvalidArgument, IsADirectory,
    NotADirectory, NotFound, SpaceExhausted, StateError,
)
from .layout import (
    INLINE_EXTENTS, INODE_SIZE, ITYPE_DIR, ITYPE_FILE, JOURNAL_COMMIT_MAGIC,
    JOURNAL_DEAD_MAGIC, JOURNAL_DESC_MAGIC, MAX_NAME, ROOT_INO, ExtentLeaf,
    Inode, Superblock, dentry_record_size, fnv1a_64, pack_dentry,
    unpack_dentry,
)
from .mssd import Mssd
from .pagecache import CachedPage, PageCache

MODES = ("block_only", "dual", "dual_log", "full")
JOURNAL_MODES = ("ordered", "data")

DIRECT_BYTE_LIMIT = 512          # <= this size goes via the byte interface
WRITEBACK_BYTE_NUM = 1           # byte path iff dirty/total < 1/8
WRITEBACK_BYTE_DEN = 8

DEFAULT_CACHE_BYTES = 8 * GiB


def make_mssd(config: DeviceConfig | None = None, mode: str = "full",
              **kwargs) -> Mssd:
    """Device stack for a mount mode: the write log exists only in
    dual_log and full."""
    if mode not in MODES:
        raise InvalidArgument(f"unknown mode {mode!r}")
    return Mssd(config, log_enabled=mode in ("dual_log", "full"), **kwargs)


def mkfs(mssd: Mssd, inode_count: int | None = None,
         journal_blocks: int = 64) -> Superblock:
    """Format the device.  Deterministic: same parameters give identical
    superblock and metadata bytes."""
    bs = mssd.config.page_size
    total_blocks = mssd.config.capacity_bytes // bs
    if inode_count is None:
        inode_count = max(1024, total_blocks // 8)
    inode_count = (inode_count + 31) // 32 * 32
    ibmp_blocks = (inode_count + 8 * bs - 1) // (8 * bs)
    bbmp_blocks = (total_blocks + 8 * bs - 1) // (8 * bs)
    itab_blocks = inode_count * INODE_SIZE // bs
    ibmp_start = 1
    bbmp_start = ibmp_start + ibmp_blocks
    itab_start = bbmp_start + bbmp_blocks
    journal_start = itab_start + itab_blocks
    data_start = journal_start + journal_blocks
    if data_start + 16 > total_blocks:
        raise InvalidArgument("device too small for this layout")

    sb = Superblock(
        block_size=bs, total_blocks=total_blocks, inode_count=inode_count,
        ibmp_start=ibmp_start, ibmp_blocks=ibmp_blocks,
        bbmp_start=bbmp_start, bbmp_blocks=bbmp_blocks,
        itab_start=itab_start, itab_blocks=itab_blocks,
        journal_start=journal_start, journal_blocks=journal_blocks,
        data_start=data_start,
    )
    mssd.block_write(0, sb.pack(), category="superblock")

    def write_unless_erased(lba: int, data: bytes, category: str) -> None:
        # erased flash reads back zeros, so all-zero blocks need no write
        if any(data):
            mssd.block_write(lba, data, category=category)

    ibmp = bytearray(ibmp_blocks * bs)
    for ino in range(ROOT_INO + 1):  # 0 and 1 reserved, 2 is the root
        ibmp[ino // 8] |= 1 << (ino % 8)
    for i in range(ibmp_blocks):
        write_unless_erased(ibmp_start + i, bytes(ibmp[i * bs:(i + 1) * bs]),
                            "bitmap")

    bbmp = bytearray(bbmp_blocks * bs)
    for blk in range(data_start):  # metadata region is allocated
        bbmp[blk // 8] |= 1 << (blk % 8)
    for i in range(bbmp_blocks):
        write_unless_erased(bbmp_start + i, bytes(bbmp[i * bs:(i + 1) * bs]),
                            "bitmap")

    root = Inode(ino=ROOT_INO, itype=ITYPE_DIR, links=2, mode=0o755)
    itab_page0 = bytearray(bs)
    off = (ROOT_INO % (bs // INODE_SIZE)) * INODE_SIZE
    itab_page0[off:off + INODE_SIZE] = root.pack()
    mssd.block_write(itab_start, bytes(itab_page0), category="inode")
    return sb


class _OpenFile:
    __slots__ = ("ino", "direct")

    def __init__(self, ino: int, direct: bool):
        self.ino = ino
        self.direct = direct


class _Txn:
    """Per-operation transaction context.

    Byte modes lazily open a device transaction at the first metadata
    write; block_only collects dirty metadata blocks and writes them
    whole when the operation closes.
    """

    def __init__(self, fs: "ByteFS"):
        self.fs = fs
        self.txid: int | None = None
        self.blocks: dict[int, str] = {}  # blk -> category (block_only)
        self.journaled: list[tuple[int, bytes]] = []

    def device_txid(self) -> int:
        if self.txid is None:
            self.txid = self.fs.mssd.tx_begin()
        return self.txid


class ByteFS:
    def __init__(self, mssd: Mssd, mode: str = "full",
                 journal: str = "ordered",
                 cache_bytes: int = DEFAULT_CACHE_BYTES):
        if mode not in MODES:
            raise InvalidArgument(f"unknown mode {mode!r}")
        if journal not in JOURNAL_MODES:
            raise InvalidArgument(f"unknown journal mode {journal!r}")
        self.mssd = mssd
        self.mode = mode
        self.journal_mode = journal
        self.cache_bytes = cache_bytes
        self.mounted = False
        self.sb: Superblock | None = None
        self._lock = threading.RLock()
        self._txn: _Txn | None = None
        self._txn_depth = 0

    # ------------------------------------------------------------------
    # mount / mode

    @property
    def byte_metadata(self) -> bool:
        return self.mode != "block_only"

    def set_mode(self, mode: str) -> None:
        if self.mounted:
            raise StateError("mode is fixed while mounted")
        if mode not in MODES:
            raise InvalidArgument(f"unknown mode {mode!r}")
        self.mode = mode

    def mount(self) -> None:
        if self.mounted:
            raise StateError("already mounted")
        bs = self.mssd.config.page_size
        self.sb = Superblock.unpack(self.mssd.block_read(0, category="superblock"))
        if self.sb.block_size != bs:
            raise InvalidArgument("superblock block size mismatch")
        sb = self.sb
        self._ibmp = bytearray()
        for i in range(sb.ibmp_blocks):
            self._ibmp += self.mssd.block_read(sb.ibmp_start + i,
                                               category="bitmap")
        self._bbmp = bytearray()
        for i in range(sb.bbmp_blocks):
            self._bbmp += self.mssd.block_read(sb.bbmp_start + i,
                                               category="bitmap")
        self._itab_pages: dict[int, bytearray] = {}
        self._blocks: dict[int, bytearray] = {}      # dir + spill mirrors
        self._inodes: dict[int, Inode] = {}
        self._dirs: dict[int, dict[bytes, tuple]] = {}  # ino -> name -> entry
        self._dir_tombstones: dict[int, list[tuple]] = {}
        self._name_cache: dict[tuple[int, int], list] = {}
        self._meta_dirty: dict[int, set] = {}  # ino -> {"time", "size"}
        self._fds: dict[int, _OpenFile] = {}
        self._next_fd = 3
        self._alloc_hint = sb.data_start
        self._journal_pos = 0
        self.cache = PageCache(self.cache_bytes, bs, self._evict_writeback)
        self.mounted = True
        self._load_inode(ROOT_INO)

    # ------------------------------------------------------------------
    # transaction plumbing

    def _op(self):
        return _OpGuard(self)

    def _meta_write(self, addr: int, data: bytes, category: str) -> None:
        """Update the host mirror and persist per the mount mode."""
        self._mirror_write(addr, data)
        bs = self.sb.block_size
        if self.byte_metadata:
            txid = self._txn.device_txid()
            self.mssd.tx_write(txid, addr, data, category=category)
        else:
            first = addr // bs
            last = (addr + len(data) - 1) // bs
            for blk in range(first, last + 1):
                self._txn.blocks[blk] = category

    def _mirror_write(self, addr: int, data: bytes) -> None:
        bs = self.sb.block_size
        pos = 0
        while pos < len(data):
            blk = (addr + pos) // bs
            off = (addr + pos) % bs
            take = min(bs - off, len(data) - pos)
            mirror = self._block_mirror(blk)
            mirror[off:off + take] = data[pos:pos + take]
            pos += take

    def _block_mirror(self, blk: int) -> bytearray:
        sb = self.sb
        bs = sb.block_size
        if blk == 0:
            raise FsError("superblock is not byte-writable")
        if sb.ibmp_start <= blk < sb.ibmp_start + sb.ibmp_blocks:
            i = blk - sb.ibmp_start
            return memoryview(self._ibmp)[i * bs:(i + 1) * bs]
        if sb.bbmp_start <= blk < sb.bbmp_start + sb.bbmp_blocks:
            i = blk - sb.bbmp_start
            return memoryview(self._bbmp)[i * bs:(i + 1) * bs]
        if sb.itab_start <= blk < sb.itab_start + sb.itab_blocks:
            i = blk - sb.itab_start
            page = self._itab_pages.get(i)
            if page is None:
                page = self._itab_pages[i] = bytearray(
                    self.mssd.block_read(blk, category="inode"))
            return page
        mirror = self._blocks.get(blk)
        if mirror is None:
            category = "journal" if (
                sb.journal_start <= blk < sb.journal_start + sb.journal_blocks
            ) else "dentry"
            mirror = self._blocks[blk] = bytearray(
                self.mssd.block_read(blk, category=category))
        return mirror

    def _flush_block_txn(self, txn: _Txn) -> None:
        for blk in sorted(txn.blocks):
            category = txn.blocks[blk]
            self.mssd.block_write(blk, bytes(self._block_mirror(blk)),
                                  category=category)

    # ------------------------------------------------------------------
    # allocation

    def _bit(self, bitmap: bytearray, idx: int) -> bool:
        return bool(bitmap[idx // 8] & (1 << (idx % 8)))

    def _set_bit(self, bitmap: bytearray, idx: int, value: bool) -> None:
        if value:
            bitmap[idx // 8] |= 1 << (idx % 8)
        else:
            bitmap[idx // 8] &= ~(1 << (idx % 8))

    def _persist_bitmap_group(self, kind: str, idx: int) -> None:
        sb = self.sb
        group = idx // (CACHELINE * 8)
        if kind == "inode":
            addr = sb.ibmp_start * sb.block_size + group * CACHELINE
            data = bytes(self._ibmp[group * CACHELINE:(group + 1) * CACHELINE])
        else:
            addr = sb.bbmp_start * sb.block_size + group * CACHELINE
            data = bytes(self._bbmp[group * CACHELINE:(group + 1) * CACHELINE])
        self._meta_write(addr, data, "bitmap")

    def _alloc_ino(self) -> int:
        for ino in range(ROOT_INO + 1, self.sb.inode_count):
            if not self._bit(self._ibmp, ino):
                self._set_bit(self._ibmp, ino, True)
                self._persist_bitmap_group("inode", ino)
                return ino
        raise SpaceExhausted("no free inodes")

    def _free_ino(self, ino: int) -> None:
        self._set_bit(self._ibmp, ino, False)
        self._persist_bitmap_group("inode", ino)

    def _alloc_block(self) -> int:
        sb = self.sb
        for blk in list(range(self._alloc_hint, sb.total_blocks)) + \
                list(range(sb.data_start, self._alloc_hint)):
            if not self._bit(self._bbmp, blk):
                self._set_bit(self._bbmp, blk, True)
                self._persist_bitmap_group("block", blk)
                self._alloc_hint = blk + 1
                return blk
        raise SpaceExhausted("no free blocks")

    def _free_block(self, blk: int) -> None:
        self._set_bit(self._bbmp, blk, False)
        self._persist_bitmap_group("block", blk)
        self._blocks.pop(blk, None)

    # ------------------------------------------------------------------
    # inodes

    def _inode_addr(self, ino: int) -> int:
        return self.sb.itab_start * self.sb.block_size + ino * INODE_SIZE

    def _load_inode(self, ino: int) -> Inode:
        inode = self._inodes.get(ino)
        if inode is not None:
            return inode
        sb = self.sb
        page_idx = ino * INODE_SIZE // sb.block_size
        mirror = self._block_mirror(sb.itab_start + page_idx)
        off = ino * INODE_SIZE % sb.block_size
        inode = Inode.unpack(bytes(mirror[off:off + INODE_SIZE]))
        device_count = getattr(inode, "_device_extent_count", len(inode.extents))
        if device_count > INLINE_EXTENTS:
            spill = self._block_mirror(inode.spill_block)
            for i in range(device_count - INLINE_EXTENTS):
                inode.extents.append(ExtentLeaf.unpack(bytes(spill), i * 16))
        self._inodes[ino] = inode
        return inode

    def _persist_inode_lower(self, inode: Inode) -> None:
        self._meta_write(self._inode_addr(inode.ino), inode.pack_lower(),
                         "inode")

    def _persist_inode_full(self, inode: Inode) -> None:
        self._meta_write(self._inode_addr(inode.ino), inode.pack(), "inode")

    def _persist_extents(self, inode: Inode) -> None:
        """Upper region (inline leaves + count) plus any spill leaves."""
        if len(inode.extents) > INLINE_EXTENTS:
            if inode.spill_block == 0:
                inode.spill_block = self._alloc_block()
                self._blocks[inode.spill_block] = bytearray(self.sb.block_size)
            spill = self._blocks.setdefault(
                inode.spill_block, bytearray(self.sb.block_size))
            n_spill = len(inode.extents) - INLINE_EXTENTS
            if n_spill > self.sb.block_size // 16:
                raise SpaceExhausted("file extent limit reached")
            base = inode.spill_block * self.sb.block_size
            blob = b"".join(l.pack() for l in inode.extents[INLINE_EXTENTS:])
            # persist touched 64B groups of the spill block
            for group in range(0, len(blob), CACHELINE):
                chunk = blob[group:group + CACHELINE]
                if bytes(spill[group:group + len(chunk)]) != chunk:
                    padded = bytearray(spill[group:group + CACHELINE])
                    padded[:len(chunk)] = chunk
                    self._meta_write(base + group, bytes(padded),
                                     "data_pointer")
        self._meta_write(self._inode_addr(inode.ino) + 64,
                         inode.pack_upper(), "data_pointer")

    def _ensure_block(self, inode: Inode, page_index: int) -> tuple[int, bool]:
        """Map a file page to a block, allocating if needed.
        Returns (lba, newly_allocated)."""
        bs = self.sb.block_size
        lba = inode.block_for(page_index * bs, bs)
        if lba is not None:
            return lba, False
        lba = self._alloc_block()
        offset = page_index * bs
        for leaf in inode.extents:
            if (leaf.file_offset + leaf.length * bs == offset
                    and leaf.lba + leaf.length == lba):
                leaf.length += 1
                break
        else:
            inode.extents.append(ExtentLeaf(offset, lba, 1))
            inode.extents.sort(key=lambda l: l.file_offset)
        return lba, True

    def _touch(self, inode: Inode, size_changed: bool = False) -> None:
        inode.mtime_ns = self.mssd.clock_ns
        flags = self._meta_dirty.setdefault(inode.ino, set())
        flags.add("time")
        if size_changed:
            flags.add("size")

    # ------------------------------------------------------------------
    # directories

    def _load_dir(self, ino: int) -> dict[bytes, tuple]:
        entries = self._dirs.get(ino)
        if entries is not None:
            return entries
        inode = self._load_inode(ino)
        if inode.itype != ITYPE_DIR:
            raise NotADirectory(f"inode {ino} is not a directory")
        entries = {}
        tombstones = []
        bs = self.sb.block_size
        pos = 0
        while pos < inode.size:
            blk = inode.block_for(pos // bs * bs, bs)
            mirror = self._block_mirror(blk)
            off = pos % bs
            parsed = unpack_dentry(mirror, off)
            if parsed is None:
                break
            child_ino, ftype, name, rec_size = parsed
            if child_ino == 0:
                tombstones.append((blk, off, rec_size))
            else:
                entries[name] = (child_ino, ftype, blk, off, rec_size)
            pos += rec_size
        self._dirs[ino] = entries
        self._dir_tombstones[ino] = tombstones
        return entries

    def _dentry_addr(self, blk: int, off: int) -> int:
        return blk * self.sb.block_size + off

    def _dir_add(self, parent: Inode, name: bytes, child_ino: int,
                 ftype: int) -> None:
        entries = self._load_dir(parent.ino)
        rec = pack_dentry(child_ino, ftype, name)
        rec_size = len(rec)
        tombstones = self._dir_tombstones[parent.ino]
        slot = None
        for i, (blk, off, size) in enumerate(tombstones):
            if size == rec_size:
                slot = (blk, off)
                tombstones.pop(i)
                break
        bs = self.sb.block_size
        if slot is None:
            pos = parent.size
            if pos % bs and pos % bs + rec_size > bs:
                # pad the block tail with a tombstone so scans can skip it
                pad = bs - pos % bs
                blk = parent.block_for(pos // bs * bs, bs)
                pad_rec = struct.pack("<IHH", 0, 0, pad - 8)
                self._meta_write(self._dentry_addr(blk, pos % bs),
                                 pad_rec + bytes(CACHELINE - len(pad_rec)),
                                 "dentry")
                pos += pad
            blk, new = self._ensure_block(parent, pos // bs)
            if new:
                self._blocks[blk] = bytearray(bs)
                self._persist_extents(parent)
            slot = (blk, pos % bs)
            parent.size = pos + rec_size
        blk, off = slot
        self._meta_write(self._dentry_addr(blk, off), rec, "dentry")
        entries[name] = (child_ino, ftype, blk, off, rec_size)
        self._touch(parent, size_changed=True)
        self._persist_inode_lower(parent)
        self._meta_dirty.pop(parent.ino, None)

    def _dir_remove(self, parent: Inode, name: bytes) -> None:
        entries = self._load_dir(parent.ino)
        child_ino, ftype, blk, off, rec_size = entries.pop(name)
        name_len = len(name)
        tombstone = struct.pack("<IHH", 0, 0, name_len) + name
        tombstone = tombstone[:CACHELINE]
        tombstone += bytes(min(rec_size, CACHELINE) - len(tombstone))
        self._meta_write(self._dentry_addr(blk, off), tombstone, "dentry")
        self._dir_tombstones[parent.ino].append((blk, off, rec_size))
        self._touch(parent)
        self._persist_inode_lower(parent)
        self._meta_dirty.pop(parent.ino, None)

    # ------------------------------------------------------------------
    # path resolution

    @staticmethod
    def _split_path(path: str) -> list[bytes]:
        if not path.startswith("/"):
            raise InvalidArgument("paths must be absolute")
        parts = [p.encode() for p in path.split("/") if p]
        for p in parts:
            if len(p) > MAX_NAME:
                raise InvalidArgument("name too long")
        return parts

    def _resolve(self, path: str) -> Inode:
        inode = self._load_inode(ROOT_INO)
        for name in self._split_path(path):
            inode = self._lookup_child(inode, name)
        return inode

    def _resolve_parent(self, path: str) -> tuple[Inode, bytes]:
        parts = self._split_path(path)
        if not parts:
            raise InvalidArgument("cannot operate on the root this way")
        inode = self._load_inode(ROOT_INO)
        for name in parts[:-1]:
            inode = self._lookup_child(inode, name)
        if inode.itype != ITYPE_DIR:
            raise NotADirectory(path)
        return inode, parts[-1]

    def _lookup_child(self, parent: Inode, name: bytes) -> Inode:
        if parent.itype != ITYPE_DIR:
            raise NotADirectory(name.decode(errors="replace"))
        key = (parent.ino, fnv1a_64(name))
        cached = self._name_cache.get(key)
        if cached:
            for cname, ino in cached:
                if cname == name:
                    return self._load_inode(ino)
        entries = self._load_dir(parent.ino)
        entry = entries.get(name)
        if entry is None:
            raise NotFound(name.decode(errors="replace"))
        self._name_cache.setdefault(key, []).append((name, entry[0]))
        return self._load_inode(entry[0])

    def _invalidate_name(self, parent_ino: int, name: bytes) -> None:
        key = (parent_ino, fnv1a_64(name))
        cached = self._name_cache.get(key)
        if cached:
            self._name_cache[key] = [e for e in cached if e[0] != name]

    # ------------------------------------------------------------------
    # namespace operations

    def lookup(self, path: str) -> Inode:
        with self._lock:
            self._check_mounted()
            return self._resolve(path)

    def exists(self, path: str) -> bool:
        try:
            self.lookup(path)
            return True
        except (NotFound, NotADirectory):
            return False

    def readdir(self, path: str) -> list[str]:
        with self._lock:
            self._check_mounted()
            inode = self._resolve(path)
            if inode.itype != ITYPE_DIR:
                raise NotADirectory(path)
            return sorted(n.decode() for n in self._load_dir(inode.ino))

    def create(self, path: str) -> int:
        return self._create_common(path, ITYPE_FILE)

    def mkdir(self, path: str) -> int:
        return self._create_common(path, ITYPE_DIR)

    def _create_common(self, path: str, itype: int) -> int:
        with self._lock, self._op():
            parent, name = self._resolve_parent(path)
            if name in self._load_dir(parent.ino):
                raise AlreadyExists(path)
            ino = self._alloc_ino()
            now = self.mssd.clock_ns
            inode = Inode(ino=ino, itype=itype,
                          links=2 if itype == ITYPE_DIR else 1,
                          mode=0o755 if itype == ITYPE_DIR else 0o644,
                          mtime_ns=now, atime_ns=now, ctime_ns=now)
            self._inodes[ino] = inode
            self._persist_inode_full(inode)
            self._dir_add(parent, name, ino, itype)
            if itype == ITYPE_DIR:
                self._dirs[ino] = {}
                self._dir_tombstones[ino] = []
                parent.links += 1
                self._persist_inode_lower(parent)
            return ino

    def unlink(self, path: str) -> None:
        with self._lock, self._op():
            parent, name = self._resolve_parent(path)
            target = self._lookup_child(parent, name)
            if target.itype == ITYPE_DIR:
                raise IsADirectory(path)
            self._remove_inode(parent, name, target)

    def rmdir(self, path: str) -> None:
        with self._lock, self._op():
            parent, name = self._resolve_parent(path)
            target = self._lookup_child(parent, name)
            if target.itype != ITYPE_DIR:
                raise NotADirectory(path)
            if self._load_dir(target.ino):
                raise DirectoryNotEmpty(path)
            self._remove_inode(parent, name, target)
            parent.links -= 1
            self._persist_inode_lower(parent)

    def _remove_inode(self, parent: Inode, name: bytes, target: Inode) -> None:
        self._dir_remove(parent, name)
        self._invalidate_name(parent.ino, name)
        for blk in target.all_blocks():
            self._free_block(blk)
        if target.spill_block:
            self._free_block(target.spill_block)
        self._free_ino(target.ino)
        self._inodes.pop(target.ino, None)
        self._dirs.pop(target.ino, None)
        self._dir_tombstones.pop(target.ino, None)
        self._meta_dirty.pop(target.ino, None)
        self.cache.drop_inode(target.ino)

    def rename(self, old: str, new: str) -> None:
        with self._lock, self._op():
            old_parent, old_name = self._resolve_parent(old)
            target = self._lookup_child(old_parent, old_name)
            new_parent, new_name = self._resolve_parent(new)
            entries = self._load_dir(new_parent.ino)
            if new_name in entries:
                existing = self._load_inode(entries[new_name][0])
                if existing.ino == target.ino:
                    return
                if existing.itype == ITYPE_DIR:
                    if target.itype != ITYPE_DIR:
                        raise IsADirectory(new)
                    if self._load_dir(existing.ino):
                        raise DirectoryNotEmpty(new)
                    new_parent.links -= 1
                elif target.itype == ITYPE_DIR:
                    raise NotADirectory(new)
                self._remove_inode(new_parent, new_name, existing)
            self._dir_remove(old_parent, old_name)
            self._invalidate_name(old_parent.ino, old_name)
            self._dir_add(new_parent, new_name, target.ino, target.itype)
            if target.itype == ITYPE_DIR and old_parent.ino != new_parent.ino:
                old_parent.links -= 1
                new_parent.links += 1
                self._persist_inode_lower(old_parent)
                self._persist_inode_lower(new_parent)

    # ------------------------------------------------------------------
    # file I/O

    def open(self, path: str, direct: bool = False) -> int:
        with self._lock:
            inode = self._resolve(path)
            if inode.itype != ITYPE_FILE:
                raise IsADirectory(path)
            fd = self._next_fd
            self._next_fd += 1
            self._fds[fd] = _OpenFile(inode.ino, direct)
            return fd

    def close(self, fd: int) -> None:
        with self._lock:
            if self._fds.pop(fd, None) is None:
                raise StateError(f"bad fd {fd}")

    def _file(self, fd: int) -> tuple[_OpenFile, Inode]:
        handle = self._fds.get(fd)
        if handle is None:
            raise StateError(f"bad fd {fd}")
        return handle, self._load_inode(handle.ino)

    def _get_page(self, inode: Inode, index: int) -> CachedPage:
        page = self.cache.get(inode.ino, index)
        if page is not None:
            return page
        bs = self.sb.block_size
        lba = inode.block_for(index * bs, bs)
        if lba is not None:
            data = bytearray(self.mssd.block_read(lba, category="data"))
        else:
            data = bytearray(bs)
        return self.cache.insert(inode.ino, index, data)

    def read(self, fd: int, offset: int, length: int) -> bytes:
        with self._lock:
            handle, inode = self._file(fd)
            if handle.direct:
                return self._direct_read(inode, offset, length)
            if offset >= inode.size:
                return b""
            length = min(length, inode.size - offset)
            bs = self.sb.block_size
            out = bytearray()
            pos = offset
            while pos < offset + length:
                page = self._get_page(inode, pos // bs)
                off = pos % bs
                take = min(bs - off, offset + length - pos)
                out += page.data[off:off + take]
                pos += take
            return bytes(out)

    def write(self, fd: int, offset: int, data: bytes) -> int:
        with self._lock:
            handle, inode = self._file(fd)
            if handle.direct:
                return self._direct_write(inode, offset, data)
            bs = self.sb.block_size
            pos = offset
            while pos < offset + len(data):
                page = self._get_page(inode, pos // bs)
                off = pos % bs
                take = min(bs - off, offset + len(data) - pos)
                page.note_modify()
                page.data[off:off + take] = data[pos - offset:pos - offset + take]
                pos += take
            grew = offset + len(data) > inode.size
            if grew:
                inode.size = offset + len(data)
            self._touch(inode, size_changed=grew)
            return len(data)

    # -- direct I/O --------------------------------------------------------

    def _direct_read(self, inode: Inode, offset: int, length: int) -> bytes:
        if offset >= inode.size:
            return b""
        length = min(length, inode.size - offset)
        bs = self.sb.block_size
        if self.mode == "full" and length <= DIRECT_BYTE_LIMIT:
            out = bytearray()
            pos = offset
            while pos < offset + length:
                take = min(bs - pos % bs, offset + length - pos)
                lba = inode.block_for(pos // bs * bs, bs)
                if lba is None:
                    out += bytes(take)
                else:
                    out += self.mssd.byte_read(lba * bs + pos % bs, take,
                                               category="data")
                pos += take
            return bytes(out)
        out = bytearray()
        pos = offset
        while pos < offset + length:
            lba = inode.block_for(pos // bs * bs, bs)
            page = (self.mssd.block_read(lba, category="data")
                    if lba is not None else bytes(bs))
            off = pos % bs
            take = min(bs - off, offset + length - pos)
            out += page[off:off + take]
            pos += take
        return bytes(out)

    def _direct_write(self, inode: Inode, offset: int, data: bytes) -> int:
        bs = self.sb.block_size
        with self._op():
            use_byte = self.mode == "full" and len(data) <= DIRECT_BYTE_LIMIT
            pos = offset
            meta_changed = False
            while pos < offset + len(data):
                index = pos // bs
                lba, new = self._ensure_block(inode, index)
                meta_changed = meta_changed or new
                off = pos % bs
                take = min(bs - off, offset + len(data) - pos)
                chunk = data[pos - offset:pos - offset + take]
                if use_byte:
                    txid = self._txn.device_txid()
                    self.mssd.tx_write(txid, lba * bs + off, chunk,
                                       category="data")
                else:
                    if take == bs:
                        page = chunk
                    else:
                        base = bytearray(
                            self.mssd.block_read(lba, category="data")
                            if not new else bytes(bs))
                        base[off:off + take] = chunk
                        page = bytes(base)
                    self.mssd.block_write(lba, page, category="data")
                self._update_cached_page(inode.ino, index, off, chunk)
                pos += take
            grew = offset + len(data) > inode.size
            if grew:
                inode.size = offset + len(data)
            inode.mtime_ns = self.mssd.clock_ns
            if meta_changed:
                self._persist_extents(inode)
            self._persist_inode_lower(inode)
            self._meta_dirty.pop(inode.ino, None)
        return len(data)

    def _update_cached_page(self, ino: int, index: int, off: int,
                            chunk: bytes) -> None:
        page = self.cache.get(ino, index)
        if page is None:
            return
        page.data[off:off + len(chunk)] = chunk
        if page.duplicate is not None and not page.dirty:
            page.duplicate = None
        elif page.duplicate is not None:
            dup = bytearray(page.duplicate)
            dup[off:off + len(chunk)] = chunk
            page.duplicate = bytes(dup)

    # -- writeback and sync ------------------------------------------------

    def _writeback_page(self, inode: Inode, page: CachedPage) -> str:
        """Persist one dirty page; returns the interface chosen."""
        if not page.dirty:
            return "none"
        dirty = page.dirty_cachelines()
        if not dirty:
            page.clear_dirty()
            return "none"
        bs = self.sb.block_size
        lba, new = self._ensure_block(inode, page.index)
        if new:
            self._persist_extents(inode)
            self._meta_dirty.setdefault(inode.ino, set()).add("size")
        total_cl = bs // CACHELINE
        use_byte = (self.mode == "full"
                    and dirty and len(dirty) * WRITEBACK_BYTE_DEN
                    < total_cl * WRITEBACK_BYTE_NUM)
        if use_byte:
            txid = self._txn.device_txid()
            for cl in dirty:
                self.mssd.tx_write(
                    txid, lba * bs + cl * CACHELINE,
                    bytes(page.data[cl * CACHELINE:(cl + 1) * CACHELINE]),
                    category="data")
            choice = "byte"
        else:
            if self.journal_mode == "data":
                self._txn.journaled.append((lba, bytes(page.data)))
            else:
                self.mssd.block_write(lba, bytes(page.data), category="data")
            choice = "block"
        page.clear_dirty()
        return choice

    def _evict_writeback(self, page: CachedPage) -> None:
        inode = self._load_inode(page.ino)
        with self._op():
            self._writeback_page(inode, page)
            self._sync_metadata(inode, data_only=False)

    def _sync_metadata(self, inode: Inode, data_only: bool) -> None:
        flags = self._meta_dirty.get(inode.ino, set())
        if not flags:
            return
        if data_only and flags == {"time"}:
            return
        self._persist_inode_lower(inode)
        self._meta_dirty.pop(inode.ino, None)

    def fsync(self, fd: int) -> None:
        self._fsync_common(fd, data_only=False)

    def fdatasync(self, fd: int) -> None:
        self._fsync_common(fd, data_only=True)

    def _fsync_common(self, fd: int, data_only: bool) -> None:
        with self._lock:
            handle, inode = self._file(fd)
            dirty = self.cache.dirty_pages(inode.ino)
            flags = self._meta_dirty.get(inode.ino, set())
            if not dirty and (not flags or (data_only and flags == {"time"})):
                return  # clean file: no transaction at all
            with self._op():
                for page in dirty:
                    self._writeback_page(inode, page)
                self._sync_metadata(inode, data_only=data_only)

    def sync(self) -> None:
        """Writeback every dirty page and flush pending metadata."""
        with self._lock:
            by_ino: dict[int, list[CachedPage]] = {}
            for (ino, _), page in self.cache.pages.items():
                if page.dirty:
                    by_ino.setdefault(ino, []).append(page)
            for ino in set(by_ino) | set(self._meta_dirty):
                if not self._bit(self._ibmp, ino):
                    continue
                inode = self._load_inode(ino)
                with self._op():
                    for page in by_ino.get(ino, []):
                        self._writeback_page(inode, page)
                    self._sync_metadata(inode, data_only=False)

    # ------------------------------------------------------------------
    # data journaling

    def _journal_write(self, txn: _Txn) -> None:
        """Append journaled data blocks plus a commit entry."""
        sb = self.sb
        bs = sb.block_size
        blocks = txn.journaled
        if len(blocks) + 2 > sb.journal_blocks:
            raise SpaceExhausted("journal record larger than journal area")
        if self._journal_pos + len(blocks) + 2 > sb.journal_blocks:
            self._journal_pos = 0  # previous records are checkpointed
        txid = txn.txid or 0
        desc = struct.pack("<III", JOURNAL_DESC_MAGIC, txid, len(blocks))
        desc += b"".join(struct.pack("<I", lba) for lba, _ in blocks)
        desc += bytes(bs - len(desc))
        base = sb.journal_start + self._journal_pos
        self.mssd.block_write(base, desc, category="journal")
        self._mirror_write(base * bs, desc)
        for i, (_, data) in enumerate(blocks):
            self.mssd.block_write(base + 1 + i, data, category="journal")
        commit = struct.pack("<II", JOURNAL_COMMIT_MAGIC, txid)
        commit += bytes(bs - len(commit))
        self.mssd.block_write(base + 1 + len(blocks), commit,
                              category="journal")
        txn.journal_base = base

    def _journal_checkpoint(self, txn: _Txn) -> None:
        """Move journaled blocks in place and retire the record."""
        for lba, data in txn.journaled:
            self.mssd.block_write(lba, data, category="data")
        bs = self.sb.block_size
        base = txn.journal_base
        dead = struct.pack("<III", JOURNAL_DEAD_MAGIC, txn.txid or 0,
                           len(txn.journaled))
        if self.byte_metadata:
            self.mssd.byte_write(base * bs, dead + bytes(CACHELINE - len(dead)),
                                 category="journal")
        else:
            self.mssd.block_write(base, dead + bytes(bs - len(dead)),
                                  category="journal")
        self._mirror_write(base * bs, dead)
        self._journal_pos = (base - self.sb.journal_start) + len(txn.journaled) + 2
        txn.journaled = []

    # ------------------------------------------------------------------
    # consistency check

    def fsck(self) -> list[str]:
        """Walk the namespace and cross-check bitmaps and extents."""
        with self._lock:
            self._check_mounted()
            problems: list[str] = []
            sb = self.sb
            seen_inos: set[int] = set()
            block_refs: dict[int, int] = {}

            def visit(ino: int, path: str):
                if ino in seen_inos:
                    problems.append(f"inode {ino} reached twice ({path})")
                    return
                seen_inos.add(ino)
                if not self._bit(self._ibmp, ino):
                    problems.append(f"inode {ino} in use but not allocated "
                                    f"({path})")
                inode = self._load_inode(ino)
                for blk in inode.all_blocks():
                    block_refs[blk] = block_refs.get(blk, 0) + 1
                    if not (sb.data_start <= blk < sb.total_blocks):
                        problems.append(f"inode {ino} references block {blk} "
                                        "outside the data region")
                if inode.spill_block:
                    block_refs[inode.spill_block] = \
                        block_refs.get(inode.spill_block, 0) + 1
                if inode.itype == ITYPE_DIR:
                    subdirs = 0
                    for name, entry in self._load_dir(ino).items():
                        child_ino, ftype = entry[0], entry[1]
                        if ftype == ITYPE_DIR:
                            subdirs += 1
                        visit(child_ino, f"{path}/{name.decode(errors='replace')}")
                    if inode.links != 2 + subdirs:
                        problems.append(
                            f"dir inode {ino} links {inode.links}, expected "
                            f"{2 + subdirs}")

            visit(ROOT_INO, "")
            for ino in range(ROOT_INO, sb.inode_count):
                if self._bit(self._ibmp, ino) and ino not in seen_inos:
                    problems.append(f"inode {ino} allocated but unreachable")
            for blk, count in block_refs.items():
                if count > 1:
                    problems.append(f"block {blk} referenced {count} times")
                if not self._bit(self._bbmp, blk):
                    problems.append(f"block {blk} referenced but not allocated")
            for blk in range(sb.data_start, sb.total_blocks):
                if self._bit(self._bbmp, blk) and blk not in block_refs:
                    problems.append(f"block {blk} allocated but unreferenced")
            return problems

    # ------------------------------------------------------------------

    def _check_mounted(self) -> None:
        if not self.mounted:
            raise StateError("not mounted")


class _OpGuard:
    """Opens one transaction per outermost file-system operation."""

    def __init__(self, fs: ByteFS):
        self.fs = fs

    def __enter__(self):
        fs = self.fs
        fs._check_mounted()
        fs._txn_depth += 1
        if fs._txn_depth == 1:
            fs._txn = _Txn(fs)
        return fs._txn

    def __exit__(self, exc_type, exc, tb):
        fs = self.fs
        fs._txn_depth -= 1
        if fs._txn_depth:
            return False
        txn, fs._txn = fs._txn, None
        if exc_type is not None:
            if txn.txid is not None:
                fs.mssd.tx_abort(txn.txid)
            return False
        if txn.journaled:
            fs._journal_write(txn)
        if fs.byte_metadata:
            if txn.txid is not None:
                fs.mssd.tx_commit(txn.txid)
        else:
            fs._flush_block_txn(txn)
        if txn.journaled:
            fs._journal_checkpoint(txn)
        return False


def recover_fs(mssd: Mssd, mode: str = "full", journal: str = "ordered",
               cache_bytes: int = DEFAULT_CACHE_BYTES):
    """Post-crash recovery: device-level log replay, then journal replay.
    Returns (filesystem, device recovery report)."""
    committed = set(mssd.txlog.entries)
    report = mssd.recover()
    fs = ByteFS(mssd, mode=mode, journal=journal, cache_bytes=cache_bytes)
    fs.mount()
    if journal == "data":
        _replay_journal(fs, committed)
    return fs, report


def _replay_journal(fs: ByteFS, committed: set[int]) -> None:
    sb = fs.sb
    bs = sb.block_size
    pos = 0
    records = []
    while pos < sb.journal_blocks:
        blob = fs.mssd.block_read(sb.journal_start + pos, category="journal")
        magic, txid, count = struct.unpack_from("<III", blob, 0)
        if magic == JOURNAL_DEAD_MAGIC and 0 <= count <= sb.journal_blocks:
            pos += count + 2
            continue
        if magic != JOURNAL_DESC_MAGIC or count + 2 > sb.journal_blocks - pos:
            break
        lbas = [struct.unpack_from("<I", blob, 12 + 4 * i)[0]
                for i in range(count)]
        data = [fs.mssd.block_read(sb.journal_start + pos + 1 + i,
                                   category="journal")
                for i in range(count)]
        tail = fs.mssd.block_read(sb.journal_start + pos + 1 + count,
                                  category="journal")
        cmagic, ctxid = struct.unpack_from("<II", tail, 0)
        has_commit = cmagic == JOURNAL_COMMIT_MAGIC and ctxid == txid
        replay = has_commit and (txid == 0 or txid in committed)
        if replay and all(sb.data_start <= lba < sb.total_blocks
                          for lba in lbas):
            records.append((txid, lbas, data))
        # retire the record either way
        dead = struct.pack("<III", JOURNAL_DEAD_MAGIC, txid, count)
        fs.mssd.block_write(sb.journal_start + pos, dead + bytes(bs - len(dead)),
                            category="journal")
        pos += count + 2
    for txid, lbas, data in records:
        for lba, blob in zip(lbas, data):
            fs.mssd.block_write(lba, blob, category="data")
    fs._journal_pos = 0
    fs._blocks = {k: v for k, v in fs._blocks.items()
                  if not (sb.journal_start <= k < sb.journal_start + sb.journal_blocks)}
