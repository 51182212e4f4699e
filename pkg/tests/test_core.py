import threading

import pytest

from vbr.core import MARK, VBR, InvariantRecorder, Restart
from vbr.pools import NULL, PoolConfig


def make(slots=8, threshold=1, threads=1, **kw):
    return VBR(threads, PoolConfig(slots_per_thread=slots, retired_threshold=threshold), **kw)


def advance_to(r, e):
    while r.epoch_read() < e:
        r.epoch_try_advance(r.epoch_read())


def fresh(r, tid=0, e=None):
    if e is not None:
        advance_to(r, e)
    ctx = r.ctx(tid)
    r.checkpoint(ctx, "test")
    return ctx


# -- epoch --------------------------------------------------------------

def test_epoch_starts_at_one():
    assert make().epoch_read() == 1


def test_one_advance():
    r = make()
    assert r.epoch_try_advance(1)
    assert r.epoch_read() == 2


@pytest.mark.parametrize("k", [0, 1, 5, 37])
def test_k_advances(k):
    r = make()
    for _ in range(k):
        r.epoch_try_advance(r.epoch_read())
    assert r.epoch_read() == 1 + k


def test_advance_with_stale_expectation_fails():
    r = make()
    advance_to(r, 6)
    assert not r.epoch_try_advance(5)
    assert r.epoch_read() == 6
    assert r.epoch_try_advance(6) and r.epoch_read() == 7


def test_racing_advances_have_one_winner():
    for _ in range(50):
        r = make()
        advance_to(r, 5)
        barrier = threading.Barrier(2)
        wins = []

        def go():
            barrier.wait()
            wins.append(r.epoch_try_advance(5))

        ts = [threading.Thread(target=go) for _ in range(2)]
        for t in ts:
            t.start()
        for t in ts:
            t.join()
        assert sorted(wins) == [False, True]
        assert r.epoch_read() == 6


# -- alloc --------------------------------------------------------------

def test_alloc_fresh_slot():
    r = make()
    ctx = fresh(r, e=7)
    slot, b = r.alloc(ctx, 42)
    assert b == 7
    assert r.birth[slot] == 7 and r.retire_epoch[slot] == 0
    assert r.keys[slot] == 42
    assert r.link[slot] == (NULL, 7)
    assert slot in ctx.unpublished


def test_alloc_collision_advances_and_restarts():
    r = make()
    ctx = fresh(r, e=5)
    head = ctx.alloc_list[-1]
    r.retire_epoch[head] = 5
    with pytest.raises(Restart):
        r.alloc(ctx, 1)
    assert r.epoch_read() == 6
    assert ctx.alloc_list[-1] == head
    assert ctx.epoch_advances == 1
    r.rollback(ctx)
    assert ctx.my_e == 6
    slot, b = r.alloc(ctx, 1)
    assert slot == head and b == 6 > 5


def test_alloc_collision_lost_race_still_restarts():
    r = make()
    ctx = fresh(r, e=5)
    r.retire_epoch[ctx.alloc_list[-1]] = 5
    advance_to(r, 6)  # someone else already moved the epoch
    with pytest.raises(Restart):
        r.alloc(ctx, 1)
    assert r.epoch_read() == 6
    assert ctx.epoch_advances == 0


# -- retire ---------------------------------------------------------------

def published(r, ctx, key=1):
    ref = r.alloc(ctx, key)
    r.checkpoint(ctx, "published")
    return ref


def test_retire_live_node():
    r = make(threshold=4)
    ctx = fresh(r, e=9)
    ref = published(r, ctx)
    r.retire(ctx, ref)
    assert r.retire_epoch[ref[0]] == 9
    assert ctx.retired_list == [ref[0]]


def test_retire_twice_is_noop():
    r = make(threshold=4)
    ctx = fresh(r)
    ref = published(r, ctx)
    r.retire_epoch[ref[0]] = 4
    r.retire(ctx, ref)
    assert r.retire_epoch[ref[0]] == 4
    assert ctx.retired_list == []


def test_retire_of_older_lifetime_is_noop():
    r = make(threshold=4)
    ctx = fresh(r, e=3)
    slot, b = published(r, ctx)
    r.birth[slot] = b + 2
    r.retire(ctx, (slot, b))
    assert r.retire_epoch[slot] == 0


def test_retire_with_stale_epoch_stamps_then_restarts():
    r = make(threshold=4)
    ctx = fresh(r, e=9)
    ref = published(r, ctx)
    advance_to(r, 10)
    with pytest.raises(Restart):
        r.retire(ctx, ref)
    assert r.retire_epoch[ref[0]] == 10
    assert ctx.retired_list == [ref[0]]


def test_retire_flushes_at_threshold():
    r = make(slots=8, threshold=2)
    ctx = fresh(r)
    a, b = published(r, ctx, 1), published(r, ctx, 2)
    r.retire(ctx, a)
    assert ctx.retired_list == [a[0]]
    r.retire(ctx, b)
    assert ctx.retired_list == []
    assert {a[0], b[0]} <= set(ctx.alloc_list)
    assert ctx.peak_retired == 2


# -- reads ----------------------------------------------------------------

def linked_pair(r, ctx):
    n = published(r, ctx, 1)
    m = published(r, ctx, 2)
    assert r.update_link(n, None, m)
    return n, m


def test_get_next_returns_successor():
    r = make()
    ctx = fresh(r)
    n, m = linked_pair(r, ctx)
    assert r.get_next(ctx, n) == m


def test_get_next_null():
    r = make()
    ctx = fresh(r)
    n = published(r, ctx)
    assert r.get_next(ctx, n) is None


def test_get_next_strips_mark():
    r = make()
    ctx = fresh(r)
    n, m = linked_pair(r, ctx)
    assert r.mark(n)
    assert r.get_next(ctx, n) == m


def test_reads_restart_after_epoch_moves():
    r = make()
    ctx = fresh(r)
    n, m = linked_pair(r, ctx)
    advance_to(r, 2)
    with pytest.raises(Restart):
        r.get_next(ctx, n)
    with pytest.raises(Restart):
        r.get_key(ctx, n)


def test_get_key_stable():
    r = make()
    ctx = fresh(r)
    n = published(r, ctx, 17)
    assert r.get_key(ctx, n) == 17


def test_get_key_of_retired_node_before_any_advance():
    r = make(threshold=4)
    ctx = fresh(r)
    n = published(r, ctx, 17)
    r.retire(ctx, n)
    assert r.get_key(ctx, n) == 17


def test_is_marked_cases():
    r = make()
    ctx = fresh(r)
    n, m = linked_pair(r, ctx)
    assert not r.is_marked(n)
    assert r.mark(n)
    assert r.is_marked(n)
    # superseded lifetime counts as marked whatever the bit says
    slot = m[0]
    assert not r.is_marked(m)
    r.birth[slot] = 12
    assert r.is_marked((slot, 7))


def test_is_marked_never_restarts():
    r = make()
    ctx = fresh(r)
    n = published(r, ctx)
    advance_to(r, 5)
    assert r.is_marked(n) is False


# -- updates --------------------------------------------------------------

def test_update_link_versions():
    r = make(slots=8)
    ctx = fresh(r, e=3)
    exp = published(r, ctx, 2)
    fresh(r, e=5)
    n = published(r, ctx, 1)
    fresh(r, e=7)
    new = published(r, ctx, 3)
    assert r.update_link(n, None, exp)
    assert r.link[n[0]] == (exp[0] << 1, 5)
    assert r.update_link(n, exp, new)
    assert r.link[n[0]] == (new[0] << 1, 7)
    assert r.update_link(n, new, None)
    assert r.link[n[0]] == (NULL, 5)


def test_update_link_rejects_wrong_expected_version():
    r = make()
    ctx = fresh(r)
    n, m = linked_pair(r, ctx)
    assert not r.update_link(n, (m[0], m[1] + 3), None)
    assert r.get_next(ctx, n) == m


def test_update_link_fails_on_marked_owner():
    r = make()
    ctx = fresh(r)
    n, m = linked_pair(r, ctx)
    assert r.mark(n)
    assert not r.update_link(n, m, None)


def test_mark_keeps_target_and_version():
    r = make()
    ctx = fresh(r)
    n, m = linked_pair(r, ctx)
    before = r.link[n[0]]
    assert r.mark(n)
    assert r.link[n[0]] == (before[0] | MARK, before[1])


def test_mark_is_terminal():
    r = make()
    ctx = fresh(r)
    n, _ = linked_pair(r, ctx)
    assert r.mark(n)
    assert not r.mark(n)


def test_mark_on_reused_slot_fails_without_exchange():
    r = make()
    ctx = fresh(r)
    n, _ = linked_pair(r, ctx)
    calls = []
    r.hook = lambda point, c: calls.append(point)
    r.birth[n[0]] += 1
    assert not r.mark(n)
    assert calls == []


def test_mark_with_expected_successor():
    r = make()
    ctx = fresh(r)
    n, m = linked_pair(r, ctx)
    other = published(r, ctx, 9)
    assert not r.mark(n, other)
    assert r.mark(n, m)


# -- checkpoints and rollback ---------------------------------------------

def test_checkpoint_refreshes_epoch_and_publishes():
    r = make()
    ctx = fresh(r)
    r.alloc(ctx, 1)
    advance_to(r, 4)
    r.checkpoint(ctx, "after-insert")
    assert ctx.my_e == 4 and ctx.checkpoint == "after-insert"
    assert ctx.unpublished == []


def test_rollback_returns_unpublished_slots():
    r = make()
    ctx = fresh(r)
    slot, _ = r.alloc(ctx, 1)
    advance_to(r, 2)
    r.rollback(ctx)
    assert ctx.alloc_list[-1] == slot
    assert r.retire_epoch[slot] == 0
    assert ctx.my_e == 2 and ctx.restarts == 1


def test_rollback_retires_pending_nodes_before_refreshing():
    r = make(threshold=4)
    ctx = fresh(r)
    a = published(r, ctx, 1)
    b = published(r, ctx, 2)
    r.retire_epoch[b[0]] = 1  # already retired by someone: skipped
    ctx.pending_retire.extend([a, b])
    advance_to(r, 3)
    r.rollback(ctx)
    assert r.retire_epoch[a[0]] == 3
    assert ctx.retired_list == [a[0]]
    assert ctx.pending_retire == []
    assert ctx.my_e == 3


def test_rollback_skips_pending_node_of_other_lifetime():
    r = make(threshold=4)
    ctx = fresh(r)
    a = published(r, ctx, 1)
    r.birth[a[0]] += 1
    ctx.pending_retire.append(a)
    r.rollback(ctx)
    assert r.retire_epoch[a[0]] == 0


def test_only_read_sites_restart():
    r = make()
    ctx = fresh(r)
    n, m = linked_pair(r, ctx)
    advance_to(r, 9)
    # update_link, mark and is_marked ignore the epoch entirely
    r.update_link(n, m, None)
    r.is_marked(n)
    r.mark(n)


def test_epoch_reads_are_monotone_under_contention():
    r = make(threads=4, slots=64, threshold=1)
    stop = threading.Event()
    seen = []

    def bump():
        while not stop.is_set():
            r.epoch_try_advance(r.epoch_read())

    def watch():
        last = 0
        for _ in range(20000):
            e = r.epoch_read()
            seen.append(e >= last)
            last = e

    ts = [threading.Thread(target=bump) for _ in range(2)]
    for t in ts:
        t.start()
    watch()
    stop.set()
    for t in ts:
        t.join()
    assert all(seen)


# -- recorder ---------------------------------------------------------------

def test_recorder_line_format():
    rec = InvariantRecorder()
    rec.record(12, "reuse", (3, 5), (5, None))
    assert rec.lines == ["slot=12 kind=reuse lifetime=(3,5)→(5,…)"]
    assert rec.by_kind("reuse") == rec.lines
    assert rec.by_kind("version") == []


def test_debug_reuse_counts_and_passes():
    r = make(slots=3, threshold=1, debug=True)
    ctx = fresh(r)
    refs = [published(r, ctx, k) for k in range(3)]
    r.retire(ctx, refs[0])
    with pytest.raises(Restart):
        r.alloc(ctx, 5)
    r.rollback(ctx)
    r.alloc(ctx, 5)
    assert ctx.reuses == 1
    assert r.recorder.by_kind("reuse") == []
