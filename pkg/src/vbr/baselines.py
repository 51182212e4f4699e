"""Comparison schemes: epoch-based reclamation and no reclamation at all.

Both use the same arena and node layout as :class:`~vbr.core.VBR` so the
set structures run unchanged on top of them. Links carry no version (always
0) and reads never restart.
"""

from __future__ import annotations

from typing import Optional

from .core import LOCK_STRIPES, MARK, NodeRef, Reclaimer
from .pools import NULL, PoolConfig, ThreadCtx


class _Unversioned(Reclaimer):
    versioned = False

    def get_next(self, ctx: ThreadCtx, ref: NodeRef) -> Optional[NodeRef]:
        nxt = self.link[ref[0]][0] >> 1
        if self.hook is not None:
            self.hook("after-read-link", ctx)
        return (nxt, self.birth[nxt]) if nxt else None

    def get_key(self, ctx: ThreadCtx, ref: NodeRef) -> int:
        return self.keys[ref[0]]

    def is_marked(self, ref: NodeRef) -> bool:
        return bool(self.link[ref[0]][0] & MARK)

    def update_link(self, n, expected, new) -> bool:
        es = expected[0] if expected else NULL
        ws = new[0] if new else NULL
        if self.hook is not None:
            self.hook("before-cas", None)
        return self._cas(n[0], (es << 1, 0), (ws << 1, 0))

    def mark(self, n: NodeRef, expected: Optional[NodeRef] = None) -> bool:
        ns = n[0]
        es = (self.link[ns][0] >> 1) if expected is None else expected[0]
        if self.hook is not None:
            self.hook("before-cas", None)
        return self._cas(ns, (es << 1, 0), (es << 1 | MARK, 0))

    def _cas(self, slot, old, new) -> bool:
        with self._locks[slot % LOCK_STRIPES]:
            if self.link[slot] != old:
                return False
            if self.state is not None:
                if new[0] & MARK:
                    self._check_mark(slot)
                else:
                    self._check_link_write(slot, old, new)
            self.link[slot] = new
        return True

    def _refill(self, ctx: ThreadCtx) -> None:
        pass

    def alloc(self, ctx: ThreadCtx, key: int) -> NodeRef:
        alloc_list = ctx.alloc_list
        slot = alloc_list.pop() if alloc_list else self.arena.take_slot(ctx, self._refill)
        b = self._e
        if self.debug:
            self._check_alloc(ctx, slot, b)
            self._check_reuse(slot)
        self.birth[slot] = b
        self.retire_epoch[slot] = 0
        self.link[slot] = (NULL, 0)
        self.keys[slot] = key
        ctx.allocs += 1
        return (slot, b)

    def _check_reuse(self, slot):
        pass

    def _push_retired(self, ctx: ThreadCtx, slot: int) -> None:
        if self.state is not None:
            self._check_retire(slot)
        ctx.retired_list.append(slot)
        ctx.retires += 1
        n = len(ctx.retired_list)
        if n > ctx.peak_retired:
            ctx.peak_retired = n


class EBR(_Unversioned):
    """Epoch-based reclamation with one announcement slot per thread.

    A node retired at epoch ``r`` is reusable once ``r`` is below both the
    current epoch and every non-zero announcement. A thread stuck inside an
    operation therefore pins every node retired from its epoch on.
    """

    name = "ebr"

    def __init__(self, threads: int, config: PoolConfig | None = None, *,
                 debug: bool = False, advance_every: int = 128):
        super().__init__(threads, config, debug=debug)
        self.advance_every = advance_every
        # 0 means quiescent
        self.announce = [0] * threads
        self._scan_at = [self.config.retired_threshold] * threads

    def begin_op(self, ctx: ThreadCtx, label: str = "entry") -> None:
        ann = self.announce
        tid = ctx.tid
        while True:
            e = self._e
            ann[tid] = e
            if self._e == e:
                break
        ctx.announced = e
        ctx.ops_since_advance += 1
        if ctx.ops_since_advance >= self.advance_every:
            ctx.ops_since_advance = 0
            if self.epoch_try_advance(e):
                ctx.epoch_advances += 1

    def end_op(self, ctx: ThreadCtx) -> None:
        self.announce[ctx.tid] = 0
        ctx.announced = 0

    def retire(self, ctx: ThreadCtx, ref: NodeRef) -> None:
        slot = ref[0]
        self.retire_epoch[slot] = self._e
        self._push_retired(ctx, slot)
        if len(ctx.retired_list) >= self._scan_at[ctx.tid]:
            self._refill(ctx)

    def safe_before(self) -> int:
        """Nodes retired strictly before this epoch may be reused."""
        low = self._e
        for a in self.announce:
            if a and a < low:
                low = a
        return low

    def _refill(self, ctx: ThreadCtx) -> None:
        retired = ctx.retired_list
        threshold = self.config.retired_threshold
        if len(retired) < threshold:
            return
        limit = self.safe_before()
        rep = self.retire_epoch
        keep, free = [], []
        for s in retired:
            (free if rep[s] < limit else keep).append(s)
        if free:
            ctx.alloc_list.extendleft(free)
            retired[:] = keep
        self._scan_at[ctx.tid] = len(retired) + threshold

    def _check_reuse(self, slot):
        r = self.retire_epoch[slot]
        if not r:
            return
        for tid, a in enumerate(self.announce):
            if a and a <= r:
                self.recorder.record(slot, "grace", (self.birth[slot], r), (a, None))

    def backlog(self) -> int:
        return sum(len(c.retired_list) for c in self.ctxs)


class NoRecl(_Unversioned):
    """Never reuses a retired node; retired slots pile up in a leak list."""

    name = "none"

    def retire(self, ctx: ThreadCtx, ref: NodeRef) -> None:
        self._push_retired(ctx, ref[0])

    def leaked(self) -> int:
        return sum(len(c.retired_list) for c in self.ctxs)


SCHEMES = ("vbr", "ebr", "none")


def make_reclaimer(scheme: str, threads: int, config: PoolConfig | None = None,
                   **kw) -> Reclaimer:
    from .core import VBR

    cls = {"vbr": VBR, "ebr": EBR, "none": NoRecl}.get(scheme)
    if cls is None:
        raise ValueError(f"unknown scheme {scheme!r}")
    return cls(threads, config, **kw)
