"""Type-preserving slot arena with per-thread free lists and a shared pool.

Every node any reclamation scheme hands out lives in one :class:`Arena`.
A node is a *slot*: an index into four parallel arrays (birth epoch,
retire epoch, key and the versioned link). Slot ``0`` is the NULL node and
is never handed out. Slots are never returned to the interpreter; they move
between per-thread allocation lists, per-thread retired lists, the global
pool and the data structures.
"""

from __future__ import annotations

import os
import threading
from collections import deque
from dataclasses import dataclass, field

NULL = 0
"""Slot id of the NULL node. Its birth epoch is permanently 0."""


class PoolExhausted(RuntimeError):
    """No free slot is available anywhere (a sizing error, not a restart)."""


class ZeroCapacity(ValueError):
    """An arena was requested with no threads or no slots."""


@dataclass(frozen=True)
class PoolConfig:
    slots_per_thread: int = 4096
    retired_threshold: int = 64
    steal_batch: int = 32

    def __post_init__(self):
        if self.retired_threshold < 1:
            raise ValueError("retired_threshold must be >= 1")
        if self.slots_per_thread < self.retired_threshold + 2:
            raise ValueError("slots_per_thread must be >= retired_threshold + 2")
        if self.steal_batch < 1:
            raise ValueError("steal_batch must be >= 1")

    @classmethod
    def from_env(cls, **overrides) -> "PoolConfig":
        """Defaults, with ``VBR_RETIRED_THRESHOLD`` applied when set."""
        env = os.environ.get("VBR_RETIRED_THRESHOLD")
        if env and "retired_threshold" not in overrides:
            overrides["retired_threshold"] = int(env)
        return cls(**overrides)


@dataclass(eq=False)
class ThreadCtx:
    """Per-thread reclamation state. Owned by exactly one thread at a time.

    The allocation list is a deque whose right end is the head: ``pop()``
    takes the next slot and ``append()`` puts one back in front. Flushed
    retired slots go in at the left so they are reused last.
    """

    tid: int
    my_e: int = 1
    alloc_list: deque = field(default_factory=deque)
    retired_list: list = field(default_factory=list)
    # label of the last installed checkpoint; the snapshot itself lives in
    # the locals of the operation's retry loop
    checkpoint: str = ""
    unpublished: list = field(default_factory=list)
    pending_retire: list = field(default_factory=list)
    victim: tuple | None = None
    # EBR announcement slot value at last begin_op (0 = quiescent)
    announced: int = 0
    ops_since_advance: int = 0
    # counters
    restarts: int = 0
    epoch_advances: int = 0
    allocs: int = 0
    reuses: int = 0
    retires: int = 0
    peak_retired: int = 0


class Arena:
    """Fixed pool of node cells shared by every thread of one structure.

    ``capacity = threads * slots_per_thread`` slots are created up front and
    spread over the per-thread allocation lists. Sentinel cells requested with
    :meth:`reserve` live past ``capacity`` and never enter any pool.
    """

    def __init__(self, threads: int, config: PoolConfig | None = None):
        if threads < 1:
            raise ZeroCapacity("an arena needs at least one thread")
        config = config or PoolConfig()
        self.config = config
        self.threads = threads
        self.capacity = threads * config.slots_per_thread
        n = self.capacity + 1
        self.birth = [0] * n
        self.retire = [0] * n
        self.key = [0] * n
        self.link = [(NULL, 0)] * n
        # deque.append / deque.pop are atomic, which is all the global pool needs
        self.global_pool: deque = deque()
        self.ctxs = []
        per = config.slots_per_thread
        for t in range(threads):
            first = 1 + t * per
            # reversed so that pop() hands out the lowest ids first
            ctx = ThreadCtx(tid=t, alloc_list=deque(range(first + per - 1, first - 1, -1)))
            self.ctxs.append(ctx)
        self._reserve_lock = threading.Lock()

    def __len__(self):
        return len(self.birth) - 1

    def reserve(self, key: int, birth: int = 1) -> int:
        """Create one permanent cell (a sentinel) and return its slot id."""
        with self._reserve_lock:
            self.birth.append(birth)
            self.retire.append(0)
            self.key.append(key)
            self.link.append((NULL, birth))
            return len(self.birth) - 1

    def take_slot(self, ctx: ThreadCtx, refill=None) -> int:
        """Pop the head of ``ctx``'s allocation list, refilling it if empty.

        ``refill(ctx)`` is the scheme's way of turning retired slots back into
        free ones; without it :meth:`flush_retired` is used. When that yields
        nothing a batch is stolen from the global pool.
        """
        alloc = ctx.alloc_list
        if not alloc:
            (refill or self.flush_retired)(ctx)
            if not alloc and not self.steal(ctx):
                raise PoolExhausted(
                    f"thread {ctx.tid}: no free slot (capacity {self.capacity})")
        return alloc.pop()

    def flush_retired(self, ctx: ThreadCtx) -> bool:
        retired = ctx.retired_list
        if len(retired) < self.config.retired_threshold:
            return False
        ctx.alloc_list.extendleft(retired)
        retired.clear()
        return True

    def steal(self, ctx: ThreadCtx) -> bool:
        try:
            batch = self.global_pool.pop()
        except IndexError:
            return False
        ctx.alloc_list.extendleft(batch)
        return True

    def donate_to_global(self, ctx: ThreadCtx, batch: int) -> None:
        """Move ``batch`` slots from the tail of ``ctx``'s list to the pool."""
        if batch <= 0:
            return
        alloc = ctx.alloc_list
        if len(alloc) <= batch:
            raise ValueError(f"cannot donate {batch} of {len(alloc)} free slots")
        self.global_pool.append([alloc.popleft() for _ in range(batch)])

    def free_slots(self) -> int:
        """Slots sitting in any allocation list or in the global pool."""
        return (sum(len(c.alloc_list) for c in self.ctxs)
                + sum(len(b) for b in list(self.global_pool)))

    def pooled_slots(self) -> list[int]:
        """Every slot id held by a list or the global pool (quiescent use only)."""
        out = []
        for c in self.ctxs:
            out.extend(c.alloc_list)
            out.extend(c.retired_list)
        for b in list(self.global_pool):
            out.extend(b)
        return out
