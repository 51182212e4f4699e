"""Version based reclamation: epoch, versioned links and the node interface.

A node is named by a ``NodeRef``, the pair ``(slot, birth_epoch)``. The only
mutable field of a node is its link, stored as ``(word, version)`` where
``word = target_slot << 1 | mark``. Both halves are replaced together by
:meth:`VBR._wcas`, which stands in for a double-width compare-and-swap.

Reads never block or fail. When the global epoch moved since the calling
thread's checkpoint, the epoch-checked reads (and ``alloc``/``retire``) raise
:class:`Restart`; the data structure catches it at the head of its retry
loop, calls :meth:`VBR.rollback` and resumes from the checkpoint.
"""

from __future__ import annotations

import threading
from typing import Callable, Optional, Tuple

from .pools import NULL, Arena, PoolConfig, ThreadCtx

NodeRef = Tuple[int, int]
"""``(slot, birth_epoch)``. ``None`` stands for the NULL reference."""

MARK = 1
LOCK_STRIPES = 64

# debug life-cycle tags, one per slot
FREE, ALLOCATED, REACHABLE, INVALID, UNLINKED, RETIRED = range(6)
STATE_NAMES = ("free", "allocated", "reachable", "invalid", "unlinked", "retired")


class Restart(Exception):
    """The cached epoch is stale; unwind to the last checkpoint."""


class InvariantRecorder:
    """Collects invariant violations as one text line each.

    Lines look like ``slot=12 kind=reuse lifetime=(3,5)→(5,…)``.
    """

    def __init__(self):
        self.lines: list[str] = []

    def record(self, slot: int, kind: str, first: tuple, second: tuple = ()):
        def fmt(t):
            return "(" + ",".join("…" if v is None else str(v) for v in t) + ")"
        line = f"slot={slot} kind={kind} lifetime={fmt(first)}"
        if second:
            line += "→" + fmt(second)
        self.lines.append(line)

    def __len__(self):
        return len(self.lines)

    def __bool__(self):
        return True

    def by_kind(self, kind: str) -> list[str]:
        return [l for l in self.lines if f" kind={kind} " in l]


class Reclaimer:
    """State and plumbing shared by every reclamation scheme.

    Subclasses provide ``alloc``, ``retire``, the read methods and the two
    link updates. Structures are written once against this surface.
    """

    name = "base"
    versioned = False

    def __init__(self, threads: int, config: PoolConfig | None = None, *,
                 debug: bool = False):
        self.arena = Arena(threads, config)
        self.config = self.arena.config
        self.birth = self.arena.birth
        self.retire_epoch = self.arena.retire
        self.keys = self.arena.key
        self.link = self.arena.link
        self._e = 1
        self._epoch_lock = threading.Lock()
        self._locks = [threading.Lock() for _ in range(LOCK_STRIPES)]
        self.hook: Optional[Callable[[str, Optional[ThreadCtx]], None]] = None
        self.debug = debug
        self.recorder = InvariantRecorder()
        self.state = [FREE] * len(self.birth) if debug else None

    # -- epoch ---------------------------------------------------------

    def epoch_read(self) -> int:
        return self._e

    def epoch_try_advance(self, expected: int) -> bool:
        """One compare-and-swap of the epoch from ``expected`` to ``expected+1``."""
        with self._epoch_lock:
            if self._e != expected:
                return False
            self._e = expected + 1
            return True

    # -- registry ------------------------------------------------------

    def ctx(self, tid: int) -> ThreadCtx:
        return self.arena.ctxs[tid]

    @property
    def ctxs(self) -> list[ThreadCtx]:
        return self.arena.ctxs

    def sentinel(self, key: int) -> NodeRef:
        """A permanent node that is never marked, retired or reused."""
        b = self._e
        slot = self.arena.reserve(key, b)
        if not self.versioned:
            self.link[slot] = (NULL, 0)
        if self.state is not None:
            self.state.append(REACHABLE)
        return (slot, b)

    def stats(self) -> dict:
        cs = self.arena.ctxs
        return {
            "restarts": sum(c.restarts for c in cs),
            "epoch_advances": sum(c.epoch_advances for c in cs),
            "allocs": sum(c.allocs for c in cs),
            "reuses": sum(c.reuses for c in cs),
            "retires": sum(c.retires for c in cs),
            "peak_retired": sum(c.peak_retired for c in cs),
            "epoch": self._e,
        }

    # -- operation brackets (scheme specific where it matters) ---------

    def begin_op(self, ctx: ThreadCtx, label: str = "entry") -> None:
        pass

    def end_op(self, ctx: ThreadCtx) -> None:
        pass

    def checkpoint(self, ctx: ThreadCtx, label: str) -> None:
        pass

    def rollback(self, ctx: ThreadCtx) -> None:
        raise AssertionError(f"{self.name} never restarts")

    def discard(self, ctx: ThreadCtx, ref: NodeRef) -> None:
        """Give back a node that was allocated but never published."""
        slot = ref[0]
        try:
            ctx.unpublished.remove(slot)
        except ValueError:
            pass
        if self.state is not None:
            self.state[slot] = FREE
        ctx.alloc_list.append(slot)

    # -- debug monitors ------------------------------------------------

    def _check_alloc(self, ctx, slot, new_birth):
        prev_b = self.birth[slot]
        prev_r = self.retire_epoch[slot]
        if prev_b and self.versioned:
            if prev_r:
                ctx.reuses += 1
                if not (new_birth > prev_r >= prev_b):
                    self.recorder.record(slot, "reuse", (prev_b, prev_r), (new_birth, None))
            elif new_birth < prev_b:
                self.recorder.record(slot, "reuse", (prev_b, None), (new_birth, None))
        if self.state is not None:
            st = self.state[slot]
            if st not in (FREE, RETIRED):
                self.recorder.record(slot, f"lifecycle:{STATE_NAMES[st]}->allocated",
                                     (prev_b, prev_r or None))
            self.state[slot] = ALLOCATED

    def _check_link_write(self, ns, old, new):
        """Runs under the owner's stripe lock just before a successful update lands."""
        state = self.state
        birth = self.birth
        if state[ns] != REACHABLE:
            return
        ow, ov = old
        nw, nv = new
        es, ws = ow >> 1, nw >> 1
        if self.versioned:
            if ov != max(birth[ns], birth[es]):
                self.recorder.record(ns, "version", (birth[ns], None), (birth[es], ov))
            if nv != max(birth[ns], birth[ws]):
                self.recorder.record(ns, "version", (birth[ns], None), (birth[ws], nv))
        if ws and state[ws] == ALLOCATED:
            state[ws] = REACHABLE
        if es and es != ws and state[es] == INVALID:
            state[es] = UNLINKED

    def _check_mark(self, ns):
        if self.state[ns] != REACHABLE:
            self.recorder.record(ns, f"lifecycle:{STATE_NAMES[self.state[ns]]}->invalid",
                                 (self.birth[ns], None))
        self.state[ns] = INVALID

    def _check_retire(self, slot):
        st = self.state[slot]
        if st != UNLINKED:
            self.recorder.record(slot, f"lifecycle:{STATE_NAMES[st]}->retired",
                                 (self.birth[slot], self.retire_epoch[slot]))
        self.state[slot] = RETIRED


class VBR(Reclaimer):
    """Version based reclamation over a type-preserving arena."""

    name = "vbr"
    versioned = True

    def begin_op(self, ctx: ThreadCtx, label: str = "entry") -> None:
        self.checkpoint(ctx, label)

    def checkpoint(self, ctx: ThreadCtx, label: str) -> None:
        """Install a checkpoint: everything allocated so far is now published."""
        ctx.checkpoint = label
        if ctx.unpublished:
            ctx.unpublished.clear()
        ctx.my_e = self._e

    def rollback(self, ctx: ThreadCtx) -> None:
        """Pre-rollback duty, then refresh the cached epoch.

        Nodes allocated since the checkpoint go back on the allocation list
        with their retire epoch still unset. Unlinked nodes this thread owes
        a retirement are stamped and queued now; ``my_e`` is not refreshed
        until the duty is done.
        """
        if ctx.unpublished:
            if self.state is not None:
                for s in ctx.unpublished:
                    self.state[s] = FREE
            ctx.alloc_list.extend(ctx.unpublished)
            ctx.unpublished.clear()
        if ctx.pending_retire:
            for slot, b in ctx.pending_retire:
                if self.retire_epoch[slot] == 0 and self.birth[slot] == b:
                    self._stamp_retired(ctx, slot)
            ctx.pending_retire.clear()
        ctx.restarts += 1
        ctx.my_e = self._e

    # -- allocation ----------------------------------------------------

    def alloc(self, ctx: ThreadCtx, key: int) -> NodeRef:
        alloc_list = ctx.alloc_list
        slot = alloc_list.pop() if alloc_list else self.arena.take_slot(ctx)
        my_e = ctx.my_e
        if self.retire_epoch[slot] >= my_e:
            if self.epoch_try_advance(my_e):
                ctx.epoch_advances += 1
            alloc_list.append(slot)
            raise Restart
        if self.debug:
            self._check_alloc(ctx, slot, my_e)
        self.birth[slot] = my_e
        self.retire_epoch[slot] = 0
        with self._locks[slot % LOCK_STRIPES]:
            # a retired node's link is immutable, so this exchange always succeeds
            self.link[slot] = (NULL, my_e)
        self.keys[slot] = key
        ctx.unpublished.append(slot)
        ctx.allocs += 1
        return (slot, my_e)

    def retire(self, ctx: ThreadCtx, ref: NodeRef) -> None:
        slot, b = ref
        if self.birth[slot] > b or self.retire_epoch[slot] != 0:
            return
        r = self._stamp_retired(ctx, slot)
        if self.hook is not None:
            self.hook("after-retire", ctx)
        if r > ctx.my_e:
            raise Restart

    def _stamp_retired(self, ctx: ThreadCtx, slot: int) -> int:
        r = self._e
        self.retire_epoch[slot] = r
        if self.state is not None:
            self._check_retire(slot)
        retired = ctx.retired_list
        retired.append(slot)
        ctx.retires += 1
        n = len(retired)
        if n > ctx.peak_retired:
            ctx.peak_retired = n
        if n >= self.config.retired_threshold:
            self.arena.flush_retired(ctx)
        return r

    # -- reads ---------------------------------------------------------

    def get_next(self, ctx: ThreadCtx, ref: NodeRef) -> Optional[NodeRef]:
        """Successor of ``ref`` with the mark stripped, or ``None``."""
        nxt = self.link[ref[0]][0] >> 1
        if self.hook is not None:
            self.hook("after-read-link", ctx)
        b = self.birth[nxt]
        if ctx.my_e != self._e:
            raise Restart
        return (nxt, b) if nxt else None

    def get_key(self, ctx: ThreadCtx, ref: NodeRef) -> int:
        k = self.keys[ref[0]]
        if ctx.my_e != self._e:
            raise Restart
        return k

    def is_marked(self, ref: NodeRef) -> bool:
        slot, b = ref
        res = self.link[slot][0] & MARK
        if self.birth[slot] != b:
            return True
        return bool(res)

    # -- updates -------------------------------------------------------

    def update_link(self, n: NodeRef, expected: Optional[NodeRef],
                    new: Optional[NodeRef]) -> bool:
        ns, nb = n
        es, eb = expected or (NULL, 0)
        ws, wb = new or (NULL, 0)
        old = (es << 1, nb if nb > eb else eb)
        repl = (ws << 1, nb if nb > wb else wb)
        if self.hook is not None:
            self.hook("before-cas", None)
        return self._wcas(ns, old, repl)

    def mark(self, n: NodeRef, expected: Optional[NodeRef] = None) -> bool:
        """Set the mark bit of ``n``'s link, keeping target and version.

        Without ``expected`` the current successor is read first. Passing the
        successor the caller already holds makes the mark fail if ``n`` no
        longer links to it.
        """
        ns, nb = n
        if expected is None:
            es = self.link[ns][0] >> 1
            eb = self.birth[es]
        else:
            es, eb = expected
        v = nb if nb > eb else eb
        if self.birth[ns] != nb:
            return False
        if self.hook is not None:
            self.hook("before-cas", None)
        ok = self._wcas(ns, (es << 1, v), (es << 1 | MARK, v))
        return ok

    def _wcas(self, slot: int, old: tuple, new: tuple) -> bool:
        with self._locks[slot % LOCK_STRIPES]:
            if self.link[slot] != old:
                return False
            if self.state is not None:
                # tags first: once the word is visible others may act on it
                if new[0] & MARK:
                    self._check_mark(slot)
                else:
                    self._check_link_write(slot, old, new)
            self.link[slot] = new
        return True
