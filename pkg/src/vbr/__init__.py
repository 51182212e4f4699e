"""Version based memory reclamation for lock-free sets."""

from .baselines import EBR, NoRecl, make_reclaimer
from .core import VBR, InvariantRecorder, NodeRef, Reclaimer, Restart
from .pools import Arena, PoolConfig, PoolExhausted, ThreadCtx, ZeroCapacity
from .structures import KEY_MAX, KEY_MIN, SetInterface, VHashTable, VList, make_set

__all__ = [
    "Arena", "EBR", "InvariantRecorder", "KEY_MAX", "KEY_MIN", "NoRecl", "NodeRef",
    "PoolConfig", "PoolExhausted", "Reclaimer", "Restart", "SetInterface",
    "ThreadCtx", "VBR", "VHashTable", "VList", "ZeroCapacity", "make_reclaimer",
    "make_set",
]
