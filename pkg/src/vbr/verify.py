"""Correctness harness: oracle replay, accounting stress, scripted races, claims.

Every runner returns a report object with an ``ok`` flag and a ``lines()``
method producing the text the ``verify`` subcommand prints. ``raise_for()``
turns a failed report into its exception.
"""

from __future__ import annotations

import itertools
import random
import sys
import threading
import time
from collections import Counter
from contextlib import contextmanager
from dataclasses import dataclass, field

from .baselines import make_reclaimer
from .bench import prefill
from .core import VBR, Restart
from .pools import PoolConfig, PoolExhausted
from .structures import VList, make_set
from .testing import MUTANTS, ForcedRollbacks, PauseHooks, ScheduleScript, Stall

OPS = ("a", "r", "c")


class Divergence(AssertionError):
    def __init__(self, index, op, key, expected, got):
        super().__init__(f"op #{index} {op}({key}): expected {expected}, got {got}")
        self.index, self.op, self.key = index, op, key
        self.expected, self.got = expected, got


class AccountingViolation(AssertionError):
    def __init__(self, key, delta, membership):
        super().__init__(f"key {key}: adds-removes={delta}, member={membership}")
        self.key, self.delta, self.membership = key, delta, membership


class AbaNotPrevented(AssertionError):
    pass


class ClaimFailure(AssertionError):
    pass


# -- reference model and traces ------------------------------------------

class OracleSet:
    """Single-threaded exact set used as ground truth."""

    def __init__(self):
        self._keys: set[int] = set()

    def add(self, key):
        if key in self._keys:
            return False
        self._keys.add(key)
        return True

    def remove(self, key):
        if key not in self._keys:
            return False
        self._keys.remove(key)
        return True

    def contains(self, key):
        return key in self._keys

    def keys(self):
        return sorted(self._keys)


@dataclass(frozen=True)
class TraceRecord:
    thread: int
    op: str
    key: int
    ok: bool
    ts: int

    def line(self) -> str:
        return f"t={self.thread} op={self.op} k={self.key} ok={int(self.ok)} ts={self.ts}"

    @classmethod
    def parse(cls, line: str) -> "TraceRecord":
        f = dict(part.split("=", 1) for part in line.split())
        return cls(int(f["t"]), f["op"], int(f["k"]), f["ok"] == "1", int(f["ts"]))


class OpTrace:
    """Append-only record of completed operations, one line per op."""

    def __init__(self):
        self.records: list[TraceRecord] = []
        self._clock = itertools.count()

    def append(self, thread, op, key, ok):
        # list.append and next() on a count are atomic under the GIL
        self.records.append(TraceRecord(thread, op, key, ok, next(self._clock)))

    def __len__(self):
        return len(self.records)

    def dump(self, path):
        with open(path, "w") as fh:
            for rec in sorted(self.records, key=lambda r: r.ts):
                fh.write(rec.line() + "\n")

    @classmethod
    def load(cls, path) -> "OpTrace":
        tr = cls()
        with open(path) as fh:
            tr.records = [TraceRecord.parse(l) for l in fh if l.strip()]
        return tr


def op_stream(rng: random.Random, n: int, key_range: int, profile=(25, 25, 50)):
    """Yield ``n`` ``(op, key)`` pairs drawn i.i.d. from ``profile``."""
    ins, dele, _ = profile
    for _ in range(n):
        x = rng.randrange(100)
        op = "a" if x < ins else "r" if x < ins + dele else "c"
        yield op, rng.randrange(key_range)


def apply(struct, ctx, op, key):
    if op == "a":
        return struct.add(ctx, key)
    if op == "r":
        return struct.remove(ctx, key)
    return struct.contains(ctx, key)


@contextmanager
def switch_interval(seconds):
    """Temporarily shorten the GIL switch interval to force more interleavings."""
    if seconds is None:
        yield
        return
    old = sys.getswitchinterval()
    sys.setswitchinterval(seconds)
    try:
        yield
    finally:
        sys.setswitchinterval(old)


def census(struct) -> dict:
    """Where every arena slot is at a quiescent point.

    ``lost`` slots are neither reachable nor in any pool: unlinked nodes that
    were never retired, or allocations that were never given back.
    """
    arena = struct.reclaimer.arena
    reachable = [s for s, _, _ in struct.nodes()]
    pooled = arena.pooled_slots()
    counts = Counter(reachable)
    counts.update(pooled)
    dup = sorted(s for s, c in counts.items() if c > 1)
    lost = sorted(set(range(1, arena.capacity + 1)) - counts.keys())
    marked = sum(1 for _, _, m in struct.nodes() if m)
    return {"reachable": len(reachable), "pooled": len(pooled), "lost": lost,
            "duplicates": dup, "marked_reachable": marked,
            "capacity": arena.capacity}


# -- sequential oracle equivalence ---------------------------------------

@dataclass
class SequentialReport:
    name: str
    ops: int
    seconds: float
    divergence: Divergence | None = None

    @property
    def ok(self):
        return self.divergence is None

    def raise_for(self):
        if self.divergence is not None:
            raise self.divergence

    def lines(self):
        status = "ok" if self.ok else f"DIVERGED {self.divergence}"
        return [f"sequential {self.name}: {self.ops} ops in {self.seconds:.2f}s {status}"]


def run_sequential_equivalence(struct, ops: int, seed: int, *, key_range: int = 256,
                               profile=(25, 25, 50), ctx=None, trace: OpTrace | None = None,
                               rollback_rate: float = 0.0, name: str = "") -> SequentialReport:
    """Replay one seeded stream against ``struct`` and an :class:`OracleSet`.

    ``rollback_rate`` > 0 bumps the epoch at random hook points, so every
    restart path is exercised even without contention.
    """
    ctx = ctx or struct.reclaimer.ctx(0)
    if rollback_rate:
        struct.reclaimer.hook = ForcedRollbacks(struct.reclaimer, rollback_rate, seed)
    oracle = OracleSet()
    rng = random.Random(seed)
    t0 = time.perf_counter()
    report = SequentialReport(name or type(struct).__name__, ops, 0.0)
    model = {"a": oracle.add, "r": oracle.remove, "c": oracle.contains}
    for i, (op, key) in enumerate(op_stream(rng, ops, key_range, profile)):
        got = apply(struct, ctx, op, key)
        want = model[op](key)
        if trace is not None:
            trace.append(ctx.tid, op, key, got)
        if got != want:
            report.divergence = Divergence(i, op, key, want, got)
            break
    else:
        final = struct.keys()
        if final != oracle.keys():
            report.divergence = Divergence(ops, "final", None, oracle.keys(), final)
    if rollback_rate:
        struct.reclaimer.hook = None
    report.seconds = time.perf_counter() - t0
    return report


# -- concurrent accounting ------------------------------------------------

@dataclass
class AccountingReport:
    name: str
    threads: int
    ops: int = 0
    seconds: float = 0.0
    successes: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)
    invariant_lines: list = field(default_factory=list)
    structure_problems: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    census: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)

    @property
    def ok(self):
        c = self.census
        return not (self.violations or self.invariant_lines or self.structure_problems
                    or self.errors or c.get("lost") or c.get("duplicates"))

    def raise_for(self):
        if self.violations:
            raise self.violations[0]
        if not self.ok:
            raise AssertionError("; ".join(self.lines()))

    def lines(self):
        out = [f"accounting {self.name}: {self.threads} threads, {self.ops} ops in "
               f"{self.seconds:.2f}s, {len(self.violations)} violations "
               f"{'ok' if self.ok else 'FAILED'}"]
        out += [f"  violation {v}" for v in self.violations[:10]]
        out += [f"  invariant {l}" for l in self.invariant_lines[:10]]
        out += [f"  structure {p}" for p in self.structure_problems[:10]]
        out += [f"  error {e!r}" for e in self.errors[:10]]
        if self.census.get("lost") or self.census.get("duplicates"):
            out.append(f"  census lost={self.census['lost'][:10]} "
                       f"duplicates={self.census['duplicates'][:10]}")
        return out


def run_accounting_stress(struct, threads: int, key_range: int, duration: float, *,
                          seed: int = 0, profile=(25, 25, 50), fill: bool = True,
                          max_ops: int | None = None, interval: float | None = 2e-4,
                          trace: OpTrace | None = None, name: str = "") -> AccountingReport:
    """Hammer ``struct`` from ``threads`` workers, then check per-key accounting.

    For each key, successful adds minus successful removes (prefill counted
    as adds) must equal the final membership, which must be 0 or 1.
    """
    if threads < 2:
        raise ValueError("accounting stress needs at least two threads")
    r = struct.reclaimer
    report = AccountingReport(name or f"{r.name}/{type(struct).__name__}", threads)
    adds = [[0] * key_range for _ in range(threads)]
    removes = [[0] * key_range for _ in range(threads)]
    for k in (prefill(struct, key_range, seed) if fill else []):
        adds[0][k] += 1
    done = [0] * threads
    quota = max_ops // threads if max_ops else None
    start = threading.Barrier(threads + 1)
    deadline = [0.0]

    def worker(tid):
        ctx = r.ctx(tid)
        rng = random.Random(seed * 7919 + tid)
        a, rm = adds[tid], removes[tid]
        n = 0
        start.wait()
        try:
            while True:
                if n & 63 == 0 and (time.perf_counter() >= deadline[0]
                                    or (quota is not None and n >= quota)):
                    break
                op, key = next(op_stream(rng, 1, key_range, profile))
                ok = apply(struct, ctx, op, key)
                if ok:
                    if op == "a":
                        a[key] += 1
                    elif op == "r":
                        rm[key] += 1
                if trace is not None:
                    trace.append(tid, op, key, ok)
                n += 1
        except BaseException as exc:
            report.errors.append(exc)
        done[tid] = n

    workers = [threading.Thread(target=worker, args=(t,), name=f"w{t}") for t in range(threads)]
    with switch_interval(interval):
        for w in workers:
            w.start()
        t0 = time.perf_counter()
        deadline[0] = t0 + duration
        start.wait()
        for w in workers:
            w.join()
        report.seconds = time.perf_counter() - t0
    report.ops = sum(done)
    ctx0 = r.ctx(0)
    for k in range(key_range):
        delta = sum(adds[t][k] for t in range(threads)) - sum(removes[t][k] for t in range(threads))
        member = struct.contains(ctx0, k)
        if delta not in (0, 1) or delta != int(member):
            report.violations.append(AccountingViolation(k, delta, member))
    report.successes = {"add": sum(map(sum, adds)), "remove": sum(map(sum, removes))}
    report.invariant_lines = list(r.recorder.lines)
    report.structure_problems = struct.check()
    report.census = census(struct)
    report.stats = r.stats()
    return report


# -- the ABA scenario -------------------------------------------------------

@dataclass
class AbaReport:
    replays: int = 0
    stale_cas_failed: int = 0
    reused: int = 0
    d_reachable: int = 0
    m_unlinked: int = 0
    mutant: str | None = None
    reuse: bool = True

    @property
    def prevented(self):
        return self.stale_cas_failed == self.replays and self.d_reachable == self.replays

    @property
    def anomalies(self):
        return self.replays - self.d_reachable if self.reuse else 0

    @property
    def ok(self):
        if self.mutant:
            return self.anomalies >= 1
        if not self.reuse:
            return self.stale_cas_failed == 0 and self.m_unlinked == self.replays
        return self.prevented

    def raise_for(self):
        if not self.ok:
            raise AbaNotPrevented("; ".join(self.lines()))

    def lines(self):
        tag = self.mutant or "vbr"
        if not self.reuse:
            tag += " (no reuse)"
        return [f"aba {tag}: {self.replays} replays, stale update rejected "
                f"{self.stale_cas_failed}, slot reused {self.reused}, "
                f"d reachable {self.d_reachable}, m unlinked {self.m_unlinked} {'ok' if self.ok else 'FAILED'}"]


def aba_once(reuse: bool = True, mutant: str | None = None) -> dict:
    """Play the n→m→k scenario once; return what happened.

    T1 reads n, m and k, then parks right before ``update_link(n, m, k)``.
    T2 removes m, which lands straight back on its allocation list, and adds
    the same key again so the slot comes back as a new node d between n and
    k. T1 then resumes with its stale view.
    """
    cls = MUTANTS[mutant] if mutant else VBR
    r = cls(2, PoolConfig(slots_per_thread=3, retired_threshold=1))
    lst = VList(r)
    c1, c2 = r.ctx(0), r.ctx(1)
    for k in (1, 2, 3):
        lst.add(c2, k)
    hooks = PauseHooks()
    r.hook = hooks
    seen = {}

    def t1():
        r.begin_op(c1, "aba")
        n = r.get_next(c1, lst.head)
        m = r.get_next(c1, n)
        k = r.get_next(c1, m)
        seen.update(n=n, m=m, k=k)
        return r.update_link(n, m, k)

    def t2():
        lst.remove(c2, 2)
        lst.add(c2, 2)
        _, d, _ = lst.find(c2, 2)
        seen["d"] = d

    script = ScheduleScript().hold("T1", "before-cas")
    if reuse:
        script.then(t2)
    script.proceed("T1", "before-cas")
    result = script.run(hooks, {"T1": t1})["T1"]
    r.hook = None
    out = {"cas": result, "m": seen["m"], "d": seen.get("d")}
    out["reused"] = bool(out["d"]) and out["d"][0] == out["m"][0] and out["d"][1] > out["m"][1]
    out["d_reachable"] = (lst.contains(c2, 2) and out["d"] is not None
                          and any(s == out["d"][0] for s, _, _ in lst.nodes()))
    out["m_unlinked"] = all(s != out["m"][0] for s, _, _ in lst.nodes())
    out["keys"] = lst.keys()
    return out


def run_aba_script(replays: int = 100, *, reuse: bool = True,
                   mutant: str | None = None) -> AbaReport:
    rep = AbaReport(mutant=mutant, reuse=reuse)
    for _ in range(replays):
        res = aba_once(reuse=reuse, mutant=mutant)
        rep.replays += 1
        rep.stale_cas_failed += not res["cas"]
        rep.reused += res["reused"]
        rep.d_reachable += bool(res["d_reachable"])
        rep.m_unlinked += res["m_unlinked"]
    return rep


# -- directed claim checks ------------------------------------------------

@dataclass
class ClaimResult:
    claim: str
    ok: bool
    detail: str

    def line(self):
        return f"claim {self.claim}: {'ok' if self.ok else 'FAILED'} {self.detail}"


def claim_double_alloc(reps: int = 100) -> ClaimResult:
    """Of two consecutive allocs after retiring at the current epoch, one succeeds.

    Rep ``i`` starts at epoch ``i + 1``. Odd reps let another thread advance
    the epoch first, so the first alloc's own advance loses the race.
    """
    passes = 0
    for i in range(reps):
        r = VBR(2, PoolConfig(slots_per_thread=3, retired_threshold=1))
        for e in range(1, i + 1):
            r.epoch_try_advance(e)
        ctx = r.ctx(0)
        r.checkpoint(ctx, "directed")
        refs = [r.alloc(ctx, k) for k in range(3)]
        r.checkpoint(ctx, "published")
        e0 = r.epoch_read()
        r.retire(ctx, refs[-1])
        retired_at = r.retire_epoch[refs[-1][0]]
        if i % 2:
            r.epoch_try_advance(e0)
        first_restarted = False
        try:
            r.alloc(ctx, 99)
        except Restart:
            first_restarted = True
            r.rollback(ctx)
        advanced = r.epoch_read() == e0 + 1
        try:
            node = r.alloc(ctx, 99)
        except Restart:
            continue
        if (first_restarted and advanced and retired_at == e0
                and node[0] == refs[-1][0] and node[1] > retired_at):
            passes += 1
    return ClaimResult("double-alloc", passes == reps, f"{passes}/{reps} second allocs succeeded")


def claim_reuse_stress(reuse_target: int = 10**6, threads: int = 4, seed: int = 0,
                       slots_per_thread: int = 4, key_range: int = 64,
                       interval: float | None = 2e-4) -> tuple[ClaimResult, ClaimResult, dict]:
    """Churn with immediate recycling until ``reuse_target`` slot reuses.

    Each worker adds then removes keys of its own residue class, so slots
    recycle within a thread at a very high rate. Returns the slot-reuse
    result, the version-invariant result and the raw numbers.
    """
    r = VBR(threads, PoolConfig(slots_per_thread=slots_per_thread, retired_threshold=1),
            debug=True)
    table = make_set("hash", r, key_range)
    errors = []
    stop = threading.Event()

    def worker(tid):
        ctx = r.ctx(tid)
        rng = random.Random(seed * 31 + tid)
        keys = range(tid, key_range, threads)
        try:
            while not stop.is_set():
                for _ in range(64):
                    k = rng.choice(keys)
                    table.add(ctx, k)
                    table.remove(ctx, k)
                if sum(c.reuses for c in r.ctxs) >= reuse_target:
                    stop.set()
        except BaseException as exc:
            errors.append(exc)
            stop.set()

    ws = [threading.Thread(target=worker, args=(t,)) for t in range(threads)]
    t0 = time.perf_counter()
    with switch_interval(interval):
        for w in ws:
            w.start()
        for w in ws:
            w.join()
    st = r.stats()
    bad_reuse = r.recorder.by_kind("reuse")
    bad_version = r.recorder.by_kind("version")
    other = [l for l in r.recorder.lines if l not in bad_reuse and l not in bad_version]
    info = {"seconds": time.perf_counter() - t0, "errors": errors, "other": other,
            "census": census(table), "problems": table.check(), **st}
    reuse = ClaimResult("slot-reuse",
                        st["reuses"] >= reuse_target and not bad_reuse and not errors,
                        f"{st['reuses']} reuses, {len(bad_reuse)} birth<=retire, "
                        f"{st['epoch_advances']} epoch advances")
    version = ClaimResult("link-version", not bad_version,
                          f"{len(bad_version)} version assertion failures")
    return reuse, version, info


def claim_rollback_drain(rollbacks: int = 1000, threads: int = 4, seed: int = 0,
                         key_range: int = 64, probability: float = 0.02,
                         structure: str = "list", interval: float | None = 2e-4
                         ) -> tuple[ClaimResult, dict]:
    """Force rollbacks at random hook points; nothing may leak at quiescence."""
    r = VBR(threads, PoolConfig(slots_per_thread=64, retired_threshold=4), debug=True)
    struct = make_set(structure, r, key_range)
    prefill(struct, key_range, seed)
    forced = ForcedRollbacks(r, probability, seed)
    r.hook = forced
    errors = []
    stop = threading.Event()

    def worker(tid):
        ctx = r.ctx(tid)
        rng = random.Random(seed * 131 + tid)
        try:
            while not stop.is_set():
                for op, key in op_stream(rng, 32, key_range, (50, 50, 0)):
                    apply(struct, ctx, op, key)
                if sum(c.restarts for c in r.ctxs) >= rollbacks:
                    stop.set()
        except BaseException as exc:
            errors.append(exc)
            stop.set()

    ws = [threading.Thread(target=worker, args=(t,)) for t in range(threads)]
    with switch_interval(interval):
        for w in ws:
            w.start()
        for w in ws:
            w.join()
    r.hook = None
    cen = census(struct)
    restarts = sum(c.restarts for c in r.ctxs)
    unretired = len(cen["lost"])
    ok = (restarts >= rollbacks and unretired == 0 and not cen["duplicates"]
          and not errors and not r.recorder.lines and cen["marked_reachable"] == 0)
    res = ClaimResult("rollback-drain", ok, f"{restarts} rollbacks ({forced.bumps} forced), "
                                f"{unretired} unlinked-unretired slots")
    return res, {"census": cen, "errors": errors, "recorder": list(r.recorder.lines),
                 "problems": struct.check()}


@dataclass
class ClaimReport:
    results: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    @property
    def ok(self):
        return all(r.ok for r in self.results)

    def raise_for(self):
        bad = [r for r in self.results if not r.ok]
        if bad:
            raise ClaimFailure("; ".join(r.line() for r in bad))

    def lines(self):
        return [r.line() for r in self.results]


def run_claim_suite(*, reuse_target: int = 10**6, rollbacks: int = 1000,
                    seed: int = 0) -> ClaimReport:
    rep = ClaimReport()
    rep.results.append(claim_double_alloc())
    reuse, version, info = claim_reuse_stress(reuse_target, seed=seed)
    rep.results += [reuse, version]
    rep.info["reuse"] = info
    drained, info = claim_rollback_drain(rollbacks, seed=seed)
    rep.results.append(drained)
    rep.info["drain"] = info
    return rep


# -- robustness with a stalled thread --------------------------------------

@dataclass
class RobustnessReport:
    scheme: str
    ops: int = 0
    exhausted: int = 0
    peak_backlog: int = 0
    final_backlog: int = 0
    seconds: float = 0.0
    stalled_finished: bool = False
    errors: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    def lines(self):
        return [f"stalled-churn {self.scheme}: {self.ops} ops in {self.seconds:.1f}s, "
                f"PoolExhausted={self.exhausted}, peak retired backlog={self.peak_backlog}, "
                f"stalled thread finished={self.stalled_finished}"]


def run_stalled_churn(scheme: str, *, total_ops: int = 10**7, workers: int = 7,
                      slots_per_thread: int = 4096, key_range: int = 256,
                      structure: str = "hash", seed: int = 0,
                      profile=(50, 50, 0)) -> RobustnessReport:
    """Churn with one extra thread parked in the middle of a traversal.

    The parked thread holds node references the whole time. Workers stop at
    their share of ``total_ops`` or at their first :class:`PoolExhausted`.
    """
    threads = workers + 1
    r = make_reclaimer(scheme, threads, PoolConfig(slots_per_thread=slots_per_thread))
    struct = make_set(structure, r, key_range)
    prefill(struct, key_range, seed, ctx=r.ctx(0))
    rep = RobustnessReport(scheme)
    stall = Stall("stalled")
    r.hook = stall
    stalled_ctx = r.ctx(workers)
    stalled_result = []

    def stalled():
        stalled_result.append(struct.contains(stalled_ctx, key_range - 1))

    st = threading.Thread(target=stalled, name="stalled")
    st.start()
    if not stall.parked.wait(10):
        raise RuntimeError("stalled thread never reached its hook")
    # the parked thread is already inside the hook; nobody else needs it
    r.hook = None
    done = [0] * workers
    quota = -(-total_ops // workers)

    def worker(tid):
        ctx = r.ctx(tid)
        rng = random.Random(seed * 977 + tid)
        n = 0
        try:
            for op, key in op_stream(rng, quota, key_range, profile):
                apply(struct, ctx, op, key)
                n += 1
        except PoolExhausted:
            rep.exhausted += 1
        except BaseException as exc:
            rep.errors.append(exc)
        done[tid] = n

    ws = [threading.Thread(target=worker, args=(t,)) for t in range(workers)]
    t0 = time.perf_counter()
    for w in ws:
        w.start()
    for w in ws:
        w.join()
    rep.seconds = time.perf_counter() - t0
    rep.ops = sum(done)
    rep.stats = r.stats()
    rep.peak_backlog = rep.stats["peak_retired"]
    rep.final_backlog = sum(len(c.retired_list) for c in r.ctxs)
    stall.resume.set()
    st.join(30)
    rep.stalled_finished = bool(stalled_result)
    return rep
