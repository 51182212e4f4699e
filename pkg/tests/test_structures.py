import random
import threading
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vbr.baselines import make_reclaimer
from vbr.core import VBR
from vbr.pools import PoolConfig
from vbr.structures import (HASH_MULT, KEY_MAX, KEY_MIN, VHashTable, VList, bucket_of,
                            make_set, table_size_for)
from vbr.testing import PauseHooks, ScheduleScript


def vbr_list(threads=1, slots=64, threshold=1, **kw):
    r = VBR(threads, PoolConfig(slots_per_thread=slots, retired_threshold=threshold), **kw)
    return r, VList(r)


def slot_of(lst, key):
    return next(s for s, k, _ in lst.nodes() if k == key)


# -- find -------------------------------------------------------------------

def test_find_on_empty_list():
    r, lst = vbr_list()
    ctx = r.ctx(0)
    r.begin_op(ctx)
    pred, curr, ckey = lst.find(ctx, 5)
    assert pred == lst.head and curr == lst.tail and ckey == KEY_MAX


def test_find_lands_between_neighbours():
    r, lst = vbr_list()
    ctx = r.ctx(0)
    lst.add(ctx, 3)
    lst.add(ctx, 7)
    r.begin_op(ctx)
    pred, curr, ckey = lst.find(ctx, 7)
    assert r.keys[pred[0]] == 3 and ckey == 7
    pred, curr, ckey = lst.find(ctx, 5)
    assert r.keys[pred[0]] == 3 and ckey == 7


def test_find_trims_marked_node():
    r, lst = vbr_list()
    ctx = r.ctx(0)
    lst.add(ctx, 3)
    lst.add(ctx, 7)
    r.begin_op(ctx)
    three = r.get_next(ctx, lst.head)
    assert r.mark(three)
    pred, curr, ckey = lst.find(ctx, 7)
    assert pred == lst.head and ckey == 7
    assert [k for _, k, _ in lst.nodes()] == [7]
    # nobody asked this thread to retire it
    assert ctx.pending_retire == []


# -- add / remove / contains -----------------------------------------------

@pytest.mark.parametrize("scheme", ["vbr", "ebr", "none"])
@pytest.mark.parametrize("kind", ["list", "hash"])
def test_basic_set_semantics(scheme, kind):
    cfg = PoolConfig(slots_per_thread=64, retired_threshold=8)
    s = make_set(kind, make_reclaimer(scheme, 1, cfg), 64)
    ctx = s.reclaimer.ctx(0)
    assert s.add(ctx, 5)
    assert not s.add(ctx, 5)
    assert s.contains(ctx, 5)
    assert s.remove(ctx, 5)
    assert not s.contains(ctx, 5)
    assert not s.remove(ctx, 5)
    assert s.keys() == []


def test_remove_retires_on_the_remover():
    r, lst = vbr_list(threshold=4)
    ctx = r.ctx(0)
    lst.add(ctx, 5)
    slot = slot_of(lst, 5)
    assert lst.remove(ctx, 5)
    assert ctx.retired_list == [slot]
    assert r.retire_epoch[slot] == r.epoch_read()


def test_sentinel_keys_bound_the_list():
    r, lst = vbr_list()
    assert r.keys[lst.head[0]] == KEY_MIN and r.keys[lst.tail[0]] == KEY_MAX


def test_restart_between_alloc_and_publish_recycles_the_node():
    r, lst = vbr_list(threads=2)
    c1, c2 = r.ctx(0), r.ctx(1)
    lst.add(c1, 3)
    lst.add(c1, 7)
    calls = []

    def interfere(point, ctx):
        if point != "before-cas":
            return
        calls.append(point)
        # second exchange of add(5) is the publishing one: beat it and move the epoch
        if len(calls) == 2:
            r.hook = None
            lst.add(c2, 6)
            r.epoch_try_advance(r.epoch_read())

    head_before = c1.alloc_list[-1]
    r.hook = interfere
    assert lst.add(c1, 5)
    assert c1.restarts == 1
    assert lst.keys() == [3, 5, 6, 7]
    assert slot_of(lst, 5) == head_before
    assert sum(1 for _, k, _ in lst.nodes() if k == 5) == 1
    assert lst.check() == []


def test_restart_after_mark_still_reports_success():
    r, lst = vbr_list(threads=1, threshold=4)
    ctx = r.ctx(0)
    for k in (1, 2, 3):
        lst.add(ctx, k)
    fired = []

    def bump_once(point, c):
        # the trial unlink right after the mark
        if point == "before-cas" and len(fired) == 1:
            r.epoch_try_advance(r.epoch_read())
        if point == "before-cas":
            fired.append(point)

    r.hook = bump_once
    assert lst.remove(ctx, 2)
    r.hook = None
    assert ctx.restarts >= 1
    assert lst.keys() == [1, 3]
    assert r.retire_epoch[ctx.retired_list[0]] >= 1


def test_two_concurrent_removes_have_one_winner():
    for _ in range(20):
        r, lst = vbr_list(threads=2)
        lst.add(r.ctx(0), 5)
        hooks = PauseHooks()
        r.hook = hooks
        script = (ScheduleScript()
                  .hold("A", "before-cas").hold("B", "before-cas")
                  .proceed("A", "before-cas").proceed("B", "before-cas"))
        res = script.run(hooks, {"A": lambda: lst.remove(r.ctx(0), 5),
                                 "B": lambda: lst.remove(r.ctx(1), 5)})
        r.hook = None
        assert sorted(res.values()) == [False, True]
        assert lst.keys() == []


def test_contains_terminates_under_churn():
    r = VBR(3, PoolConfig(slots_per_thread=64, retired_threshold=1))
    lst = VList(r)
    stop = threading.Event()

    def churn(tid):
        rng = random.Random(tid)
        ctx = r.ctx(tid)
        while not stop.is_set():
            k = rng.randrange(32)
            lst.add(ctx, k)
            lst.remove(ctx, k)

    ts = [threading.Thread(target=churn, args=(t,), daemon=True) for t in (1, 2)]
    for t in ts:
        t.start()
    ctx = r.ctx(0)
    deadline = time.monotonic() + 20
    for i in range(2000):
        lst.contains(ctx, i % 40)
        assert time.monotonic() < deadline
    stop.set()
    for t in ts:
        t.join()


# -- hash table -------------------------------------------------------------

def test_bucket_count_must_be_power_of_two():
    with pytest.raises(ValueError):
        VHashTable(VBR(1), 6)


def test_single_bucket_matches_one_list():
    rng = random.Random(4)
    ops = [(rng.choice("arc"), rng.randrange(40)) for _ in range(3000)]
    t = VHashTable(VBR(1, PoolConfig(slots_per_thread=64, retired_threshold=8)), 1)
    l = VList(VBR(1, PoolConfig(slots_per_thread=64, retired_threshold=8)))
    for s in (t, l):
        s.ctx = s.reclaimer.ctx(0)
    fn = {"a": "add", "r": "remove", "c": "contains"}
    for op, k in ops:
        assert getattr(t, fn[op])(t.ctx, k) == getattr(l, fn[op])(l.ctx, k)
    assert t.keys() == l.keys()


def test_load_factor_one_after_fill():
    r = VBR(1, PoolConfig(slots_per_thread=2048))
    t = VHashTable(r, 1024)
    ctx = r.ctx(0)
    for k in range(1024):
        assert t.add(ctx, k)
    assert len(t.keys()) / t.bucket_count == 1.0
    assert t.check() == []


def test_hash_is_multiplicative_and_masked():
    assert bucket_of(1, 1023) == HASH_MULT & 1023
    assert bucket_of(0, 7) == 0
    r = VBR(1)
    t = VHashTable(r, 8)
    assert t.bucket(3) is t.buckets[(3 * HASH_MULT) & 7]


@pytest.mark.parametrize("rng,buckets", [(2, 1), (256, 128), (1000, 512), (1024, 512)])
def test_table_size_for(rng, buckets):
    assert table_size_for(rng) == buckets


def test_buckets_share_one_tail():
    t = VHashTable(VBR(1), 4)
    assert len({b.tail for b in t.buckets}) == 1


# -- randomized oracle comparison -------------------------------------------

op_lists = st.lists(st.tuples(st.sampled_from("arc"), st.integers(0, 15)), max_size=200)


@settings(max_examples=60, deadline=None)
@given(ops=op_lists, scheme=st.sampled_from(["vbr", "ebr", "none"]),
       kind=st.sampled_from(["list", "hash"]), threshold=st.sampled_from([1, 2, 8]))
def test_matches_python_set(ops, scheme, kind, threshold):
    r = make_reclaimer(scheme, 1, PoolConfig(slots_per_thread=256, retired_threshold=threshold),
                       debug=True)
    s = make_set(kind, r, 16)
    ctx = r.ctx(0)
    model = set()
    for op, k in ops:
        if op == "a":
            assert s.add(ctx, k) == (k not in model)
            model.add(k)
        elif op == "r":
            assert s.remove(ctx, k) == (k in model)
            model.discard(k)
        else:
            assert s.contains(ctx, k) == (k in model)
    assert s.keys() == sorted(model)
    assert s.check() == []
    assert r.recorder.lines == []
