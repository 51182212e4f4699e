"""Fixed-time throughput benchmark over schemes, structures and workloads."""

from __future__ import annotations

import argparse
import csv
import itertools
import math
import random
import re
import threading
import time
from dataclasses import dataclass, field, replace

from .baselines import SCHEMES, make_reclaimer
from .pools import PoolConfig
from .structures import make_set

STRUCTURES = ("list", "hash")
CSV_HEADER = ("scheme", "structure", "threads", "key_range", "profile", "duration_ms",
              "ops", "mops", "epoch_advances", "restarts")
POLL_EVERY = 64
# generous upper bound on whole-run ops/s, used to size arenas that never recycle
OPS_PER_SEC_CEILING = 500_000


class UsageError(ValueError):
    pass


@dataclass(frozen=True)
class WorkloadProfile:
    insert_pct: int
    delete_pct: int
    read_pct: int

    def __post_init__(self):
        parts = (self.insert_pct, self.delete_pct, self.read_pct)
        if min(parts) < 0 or sum(parts) != 100:
            raise UsageError(f"profile percentages must be >= 0 and sum to 100, got {parts}")

    @classmethod
    def parse(cls, text: str) -> "WorkloadProfile":
        m = re.fullmatch(r"(\d+)i(\d+)d(\d+)r", text.strip())
        if not m:
            raise UsageError(f"bad profile {text!r}; expected e.g. 25i25d50r")
        return cls(*map(int, m.groups()))

    def __str__(self):
        return f"{self.insert_pct}i{self.delete_pct}d{self.read_pct}r"

    def as_tuple(self):
        return self.insert_pct, self.delete_pct, self.read_pct


PROFILES = tuple(map(WorkloadProfile.parse, ("10i10d80r", "25i25d50r", "50i50d0r")))


@dataclass(frozen=True)
class BenchConfig:
    scheme: str = "vbr"
    structure: str = "list"
    threads: int = 1
    key_range: int = 256
    duration_ms: int = 1000
    seed: int = 42
    profile: WorkloadProfile = WorkloadProfile(25, 25, 50)
    pool: PoolConfig | None = None
    reps: int = 10
    max_ops: int | None = None  # per-thread op budget; None = run to the deadline

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise UsageError(f"unknown scheme {self.scheme!r}; choose from {', '.join(SCHEMES)}")
        if self.structure not in STRUCTURES:
            raise UsageError(f"unknown structure {self.structure!r}; choose list or hash")
        if self.threads < 1:
            raise UsageError("threads must be >= 1")
        if self.key_range < 2:
            raise UsageError("key range must be >= 2")
        if self.duration_ms < 1:
            raise UsageError("duration must be >= 1 ms")
        if self.reps < 1:
            raise UsageError("reps must be >= 1")
        if self.max_ops is not None and self.max_ops < 1:
            raise UsageError("op budget must be >= 1")

    def pool_config(self) -> PoolConfig:
        """Pool settings for one run, with the no-reclamation arena sized to the churn."""
        base = self.pool or PoolConfig.from_env()
        if self.scheme != "none" or self.pool is not None:
            return base
        inserts = self.profile.insert_pct / 100
        if self.max_ops is not None:
            churn = self.max_ops * self.threads * inserts
        else:
            churn = OPS_PER_SEC_CEILING * self.duration_ms / 1000 * inserts
        per = math.ceil(churn / self.threads) + self.key_range
        return replace(base, slots_per_thread=max(base.slots_per_thread, per))


@dataclass
class BenchResult:
    config: BenchConfig
    ops: int
    elapsed_s: float
    counts: dict = field(default_factory=dict)
    epoch_advances: float = 0.0
    restarts: float = 0.0
    peak_retired: float = 0.0

    @property
    def mops(self) -> float:
        """Million ops per second over the configured duration."""
        return self.ops / self.config.duration_ms / 1000

    def row(self) -> list:
        c = self.config
        return [c.scheme, c.structure, c.threads, c.key_range, str(c.profile), c.duration_ms,
                self.ops, f"{self.mops:.6f}", round(self.epoch_advances),
                round(self.restarts)]


def prefill(struct, key_range: int, seed: int, ctx=None) -> list[int]:
    """Insert ``key_range // 2`` distinct uniformly drawn keys; return them."""
    ctx = ctx or struct.reclaimer.ctx(0)
    rng = random.Random(seed)
    added = []
    while len(added) < key_range // 2:
        k = rng.randrange(key_range)
        if struct.add(ctx, k):
            added.append(k)
    return added


def thread_rng(seed: int, rep: int, tid: int) -> random.Random:
    # string seeds go through sha512, so neighbouring threads get unrelated streams
    return random.Random(f"{seed}:{rep}:{tid}")


def run_once(config: BenchConfig, rep: int = 0) -> BenchResult:
    r = make_reclaimer(config.scheme, config.threads, config.pool_config())
    struct = make_set(config.structure, r, config.key_range)
    prefill(struct, config.key_range, config.seed + rep)
    ins, dele, _ = config.profile.as_tuple()
    key_range = config.key_range
    budget = config.max_ops
    counts = [[0, 0, 0] for _ in range(config.threads)]
    errors = []
    start = threading.Barrier(config.threads + 1)
    deadline = [0.0]

    def worker(tid):
        ctx = r.ctx(tid)
        rng = thread_rng(config.seed, rep, tid)
        randrange = rng.randrange
        add, remove, contains = struct.add, struct.remove, struct.contains
        mine = counts[tid]
        clock = time.perf_counter
        n = 0
        start.wait()
        try:
            while True:
                for _ in range(POLL_EVERY):
                    x = randrange(100)
                    k = randrange(key_range)
                    if x < ins:
                        add(ctx, k)
                        mine[0] += 1
                    elif x < ins + dele:
                        remove(ctx, k)
                        mine[1] += 1
                    else:
                        contains(ctx, k)
                        mine[2] += 1
                    n += 1
                    if n == budget:
                        return
                if clock() >= deadline[0]:
                    return
        except BaseException as exc:
            errors.append(exc)

    ws = [threading.Thread(target=worker, args=(t,), name=f"bench-{t}")
          for t in range(config.threads)]
    for w in ws:
        w.start()
    t0 = time.perf_counter()
    deadline[0] = t0 + config.duration_ms / 1000
    start.wait()
    for w in ws:
        w.join()
    elapsed = time.perf_counter() - t0
    if errors:
        raise errors[0]
    st = r.stats()
    total = [sum(c[i] for c in counts) for i in range(3)]
    return BenchResult(config, sum(total), elapsed,
                       dict(zip(("insert", "delete", "read"), total)),
                       st["epoch_advances"], st["restarts"], st["peak_retired"])


def run_benchmark(config: BenchConfig) -> BenchResult:
    """Run ``config.reps`` repetitions and average them."""
    runs = [run_once(config, rep) for rep in range(config.reps)]
    n = len(runs)
    counts = {k: sum(x.counts[k] for x in runs) / n for k in runs[0].counts}
    return BenchResult(
        config,
        round(sum(x.ops for x in runs) / n),
        sum(x.elapsed_s for x in runs) / n,
        counts,
        sum(x.epoch_advances for x in runs) / n,
        sum(x.restarts for x in runs) / n,
        sum(x.peak_retired for x in runs) / n,
    )


def write_csv(results, path) -> None:
    with open(path, "w", newline="") as fh:
        write_rows(results, fh)


def write_rows(results, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for res in results:
        w.writerow(res.row())


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        for k in ("threads", "key_range", "duration_ms", "ops", "epoch_advances", "restarts"):
            row[k] = int(row[k])
        row["mops"] = float(row["mops"])
    return rows


# -- argument parsing -----------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _int_list(text: str) -> list[int]:
    """``"4"``, ``"1,2,4"`` or ``"1-8"``."""
    out = []
    for part in text.split(","):
        lo, sep, hi = part.partition("-")
        try:
            out.extend(range(int(lo), int(hi) + 1) if sep else [int(lo)])
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from None
    return out


def _word_list(text: str) -> list[str]:
    return [w for w in text.split(",") if w]


def _profiles(text: str) -> list[WorkloadProfile]:
    if text == "all":
        return list(PROFILES)
    try:
        return [WorkloadProfile.parse(p) for p in text.split(",")]
    except UsageError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def add_bench_arguments(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scheme", type=_word_list, default=["vbr"],
                   help="vbr, ebr, none, or a comma list")
    p.add_argument("--ds", type=_word_list, default=["list"], help="list, hash, or a comma list")
    p.add_argument("--threads", type=_int_list, default=[1], help="e.g. 8, 1,2,4 or 1-8")
    p.add_argument("--range", dest="key_range", type=int, default=256)
    p.add_argument("--profile", type=_profiles, default=[WorkloadProfile(25, 25, 50)],
                   help="e.g. 10i10d80r, a comma list, or 'all'")
    p.add_argument("--ms", type=int, default=1000, help="duration of one repetition")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--ops", type=int, default=None, help="per-thread op budget")
    p.add_argument("--slots", type=int, default=None, help="slots per thread")
    p.add_argument("--retired-threshold", type=int, default=None)
    p.add_argument("--csv", default=None, help="also write the CSV here")


def configs_from_args(ns: argparse.Namespace) -> list[BenchConfig]:
    pool = None
    if ns.slots is not None or ns.retired_threshold is not None:
        kw = {}
        if ns.slots is not None:
            kw["slots_per_thread"] = ns.slots
        if ns.retired_threshold is not None:
            kw["retired_threshold"] = ns.retired_threshold
        try:
            pool = PoolConfig.from_env(**kw)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    return [BenchConfig(scheme=s, structure=d, threads=t, key_range=ns.key_range,
                        duration_ms=ns.ms, seed=ns.seed, profile=p, pool=pool,
                        reps=ns.reps, max_ops=ns.ops)
            for s, d, p, t in itertools.product(ns.scheme, ns.ds, ns.profile, ns.threads)]


def parse_configs(argv) -> list[BenchConfig]:
    p = _Parser(prog="bench", add_help=False)
    add_bench_arguments(p)
    return configs_from_args(p.parse_args(argv))


def parse_config(argv) -> BenchConfig:
    """Parse one benchmark configuration (no sweeps)."""
    configs = parse_configs(argv)
    if len(configs) != 1:
        raise UsageError("parse_config takes a single configuration, not a sweep")
    return configs[0]
