"""bytefs: a user-space file system with dual byte/block access on an
emulated memory-semantic SSD, plus a benchmark and crash-test harness."""

from .device import DeviceConfig, TrafficCounters
from .errors import ByteFSError
from .fs import ByteFS, make_mssd, mkfs, recover_fs
from .mssd import Mssd

__all__ = [
    "ByteFS", "ByteFSError", "DeviceConfig", "Mssd", "TrafficCounters",
    "make_mssd", "mkfs", "recover_fs",
]

__version__ = "0.1.0"
