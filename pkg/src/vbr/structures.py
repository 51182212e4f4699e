"""Lock-free sets over any reclaimer: a sorted linked list and a hash table.

The list is the Harris/Michael list with trimming during ``find``. Every
shared access goes through the reclaimer, so the same code runs on VBR, EBR
and no reclamation. Under VBR an epoch-checked read may raise
:class:`~vbr.core.Restart`; each operation catches it at the head of its
retry loop, which doubles as the checkpoint.

Checkpoints (VBR):

* ``add``: at entry, and right after the successful insertion CAS.
* ``remove``: at entry, and right after the successful mark. A restart
  after the mark resumes in the verify phase and never marks again.
* ``contains``: at entry only.
"""

from __future__ import annotations

from typing import Iterator, Protocol

from .core import MARK, NodeRef, Reclaimer, Restart
from .pools import ThreadCtx

KEY_MIN = -(1 << 63)
KEY_MAX = (1 << 63) - 1

HASH_MULT = 0x9E3779B97F4A7C15


class SetInterface(Protocol):
    reclaimer: Reclaimer

    def add(self, ctx: ThreadCtx, key: int) -> bool: ...

    def remove(self, ctx: ThreadCtx, key: int) -> bool: ...

    def contains(self, ctx: ThreadCtx, key: int) -> bool: ...


class VList:
    """Sorted lock-free linked list with ``KEY_MIN``/``KEY_MAX`` sentinels.

    User keys must lie strictly between the two sentinel keys.
    """

    def __init__(self, reclaimer: Reclaimer, tail: NodeRef | None = None):
        r = self.reclaimer = reclaimer
        self.tail = tail if tail is not None else r.sentinel(KEY_MAX)
        self.head = r.sentinel(KEY_MIN)
        if not r.update_link(self.head, None, self.tail):
            raise AssertionError("fresh sentinel link rejected")

    # -- operations ----------------------------------------------------

    def find(self, ctx: ThreadCtx, key: int) -> tuple[NodeRef, NodeRef, int]:
        """Return ``(pred, curr, curr_key)`` with ``pred.key < key <= curr_key``.

        Marked nodes met on the way are unlinked. If the unlinked node is the
        caller's own removal victim, it is queued in ``ctx.pending_retire``.
        """
        r = self.reclaimer
        get_next, get_key, is_marked = r.get_next, r.get_key, r.is_marked
        head = self.head
        victim = ctx.victim
        while True:
            pred = head
            curr = get_next(ctx, pred)
            while True:
                ckey = get_key(ctx, curr)
                if is_marked(curr):
                    # the link is frozen once marked, so this is the final successor
                    succ = get_next(ctx, curr)
                    if not r.update_link(pred, curr, succ):
                        break
                    if curr == victim:
                        ctx.pending_retire.append(curr)
                    curr = succ
                    continue
                if ckey >= key:
                    return pred, curr, ckey
                pred = curr
                curr = get_next(ctx, curr)

    def add(self, ctx: ThreadCtx, key: int) -> bool:
        r = self.reclaimer
        r.begin_op(ctx, "add")
        node = None
        linked_to = None
        try:
            while True:
                try:
                    pred, curr, ckey = self.find(ctx, key)
                    if ckey == key:
                        if node is not None:
                            r.discard(ctx, node)
                        return False
                    if node is None:
                        node = r.alloc(ctx, key)
                        linked_to = None
                    # the node is still private; this cannot fail
                    r.update_link(node, linked_to, curr)
                    linked_to = curr
                    if r.update_link(pred, curr, node):
                        r.checkpoint(ctx, "add-inserted")
                        return True
                except Restart:
                    node = None
                    r.rollback(ctx)
        finally:
            r.end_op(ctx)

    def remove(self, ctx: ThreadCtx, key: int) -> bool:
        r = self.reclaimer
        r.begin_op(ctx, "remove")
        victim = None
        try:
            while True:
                try:
                    if victim is None:
                        pred, curr, ckey = self.find(ctx, key)
                        if ckey != key:
                            return False
                        succ = r.get_next(ctx, curr)
                        if not r.mark(curr, succ):
                            continue
                        victim = ctx.victim = curr
                        r.checkpoint(ctx, "remove-marked")
                        if r.update_link(pred, curr, succ):
                            ctx.pending_retire.append(curr)
                    # make sure the victim is unlinked before retiring it
                    self.find(ctx, key)
                    r.retire(ctx, victim)
                    return True
                except Restart:
                    r.rollback(ctx)
        finally:
            ctx.victim = None
            ctx.pending_retire.clear()
            r.end_op(ctx)

    def contains(self, ctx: ThreadCtx, key: int) -> bool:
        r = self.reclaimer
        get_next, get_key = r.get_next, r.get_key
        r.begin_op(ctx, "contains")
        try:
            while True:
                try:
                    curr = get_next(ctx, self.head)
                    ckey = get_key(ctx, curr)
                    while ckey < key:
                        curr = get_next(ctx, curr)
                        ckey = get_key(ctx, curr)
                    return ckey == key and not r.is_marked(curr)
                except Restart:
                    r.rollback(ctx)
        finally:
            r.end_op(ctx)

    # -- quiescent inspection ------------------------------------------

    def nodes(self) -> Iterator[tuple[int, int, bool]]:
        """Yield ``(slot, key, marked)`` for every reachable non-sentinel node."""
        r = self.reclaimer
        slot = r.link[self.head[0]][0] >> 1
        tail = self.tail[0]
        while slot and slot != tail:
            word = r.link[slot][0]
            yield slot, r.keys[slot], bool(word & MARK)
            slot = word >> 1

    def keys(self) -> list[int]:
        return [k for _, k, marked in self.nodes() if not marked]

    def check(self) -> list[str]:
        """Structural problems visible at a quiescent point (empty when sound)."""
        r = self.reclaimer
        problems = []
        prev_key = KEY_MIN
        owner = self.head[0]
        seen = set()
        while True:
            word, version = r.link[owner]
            target = word >> 1
            if r.versioned and version != max(r.birth[owner], r.birth[target]):
                problems.append(f"slot={owner} kind=version link={version}")
            if target == self.tail[0]:
                break
            if not target or target in seen:
                problems.append(f"slot={owner} kind=broken-chain")
                break
            seen.add(target)
            k = r.keys[target]
            if not r.link[target][0] & MARK:
                if k <= prev_key:
                    problems.append(f"slot={target} kind=order key={k}")
                prev_key = k
            owner = target
        return problems


def bucket_of(key: int, mask: int) -> int:
    return (key * HASH_MULT) & mask


class VHashTable:
    """Fixed-size table of :class:`VList` buckets sharing one tail sentinel."""

    def __init__(self, reclaimer: Reclaimer, bucket_count: int):
        if bucket_count < 1 or bucket_count & (bucket_count - 1):
            raise ValueError("bucket_count must be a power of two")
        self.reclaimer = reclaimer
        self.bucket_count = bucket_count
        self.mask = bucket_count - 1
        tail = reclaimer.sentinel(KEY_MAX)
        self.buckets = [VList(reclaimer, tail) for _ in range(bucket_count)]

    def bucket(self, key: int) -> VList:
        return self.buckets[(key * HASH_MULT) & self.mask]

    def add(self, ctx: ThreadCtx, key: int) -> bool:
        return self.buckets[(key * HASH_MULT) & self.mask].add(ctx, key)

    def remove(self, ctx: ThreadCtx, key: int) -> bool:
        return self.buckets[(key * HASH_MULT) & self.mask].remove(ctx, key)

    def contains(self, ctx: ThreadCtx, key: int) -> bool:
        return self.buckets[(key * HASH_MULT) & self.mask].contains(ctx, key)

    def nodes(self) -> Iterator[tuple[int, int, bool]]:
        for b in self.buckets:
            yield from b.nodes()

    def keys(self) -> list[int]:
        return sorted(k for b in self.buckets for k in b.keys())

    def check(self) -> list[str]:
        problems = []
        for i, b in enumerate(self.buckets):
            problems.extend(b.check())
            for _, k, _ in b.nodes():
                if bucket_of(k, self.mask) != i:
                    problems.append(f"key={k} kind=wrong-bucket bucket={i}")
        return problems


def table_size_for(key_range: int) -> int:
    """Bucket count giving load factor 1 once half the key range is present."""
    want = max(1, key_range // 2)
    return 1 << (want - 1).bit_length()


def make_set(kind: str, reclaimer: Reclaimer, key_range: int = 256):
    if kind == "list":
        return VList(reclaimer)
    if kind == "hash":
        return VHashTable(reclaimer, table_size_for(key_range))
    raise ValueError(f"unknown structure {kind!r}")
