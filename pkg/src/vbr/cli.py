"""Command line entry point: ``vbr bench``, ``vbr verify`` and ``vbr plot``."""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass

from .baselines import SCHEMES, make_reclaimer
from .bench import (UsageError, add_bench_arguments, configs_from_args, read_csv,
                    run_benchmark, write_csv, write_rows)
from .pools import PoolConfig, PoolExhausted
from .structures import make_set


@dataclass(frozen=True)
class VerifySizes:
    seq_ops: int
    seeds: int
    stress_s: float
    aba_replays: int
    reuses: int
    rollbacks: int
    stalled_ops: int


QUICK = VerifySizes(seq_ops=20_000, seeds=2, stress_s=0.5, aba_replays=20,
                    reuses=50_000, rollbacks=1000, stalled_ops=200_000)
FULL = VerifySizes(seq_ops=100_000, seeds=5, stress_s=2.0, aba_replays=100,
                   reuses=1_000_000, rollbacks=1000, stalled_ops=10_000_000)
SECTIONS = ("sequential", "accounting", "aba", "claims", "stalled")


def _stress_config(scheme: str) -> PoolConfig:
    # nothing is ever recycled without reclamation, so give it room for the whole run
    return PoolConfig(slots_per_thread=32768) if scheme == "none" else PoolConfig()


def run_verify(sizes: VerifySizes, seed: int, sections, trace_path=None, out=None) -> bool:
    from . import verify as v

    out = out or sys.stdout
    ok = True
    trace = v.OpTrace() if trace_path else None

    def emit(report_ok, lines):
        nonlocal ok
        ok &= bool(report_ok)
        for line in lines:
            print(line, file=out, flush=True)

    if "sequential" in sections:
        for ds in ("list", "hash"):
            for s in range(seed, seed + sizes.seeds):
                st = make_set(ds, make_reclaimer("vbr", 1, debug=True))
                rep = v.run_sequential_equivalence(st, sizes.seq_ops, s, trace=trace,
                                                   name=f"vbr/{ds} seed={s}")
                emit(rep.ok, rep.lines())
    if "accounting" in sections:
        for scheme in SCHEMES:
            for ds in ("list", "hash"):
                for s in range(seed, seed + sizes.seeds):
                    r = make_reclaimer(scheme, 8, _stress_config(scheme), debug=True)
                    rep = v.run_accounting_stress(make_set(ds, r, 256), 8, 256, sizes.stress_s,
                                                  seed=s, trace=trace,
                                                  name=f"{scheme}/{ds} seed={s}")
                    emit(rep.ok, rep.lines())
    if "aba" in sections:
        for kw in ({}, {"reuse": False}, {"mutant": "no-version-check"}):
            rep = v.run_aba_script(sizes.aba_replays, **kw)
            emit(rep.ok, rep.lines())
    if "claims" in sections:
        rep = v.run_claim_suite(reuse_target=sizes.reuses, rollbacks=sizes.rollbacks, seed=seed)
        emit(rep.ok, rep.lines())
    if "stalled" in sections:
        vbr = v.run_stalled_churn("vbr", total_ops=sizes.stalled_ops, seed=seed)
        emit(vbr.exhausted == 0 and vbr.stalled_finished and not vbr.errors, vbr.lines())
        ebr = v.run_stalled_churn("ebr", total_ops=sizes.stalled_ops, seed=seed)
        grew = ebr.peak_backlog > 10 * vbr.peak_backlog
        emit(grew and not ebr.errors, ebr.lines() + [
            f"stalled-churn contrast: ebr backlog {ebr.peak_backlog} vs 10 x vbr peak "
            f"{10 * vbr.peak_backlog} {'ok' if grew else 'FAILED'}"])
    if trace is not None:
        trace.dump(trace_path)
        print(f"trace: {len(trace)} ops written to {trace_path}", file=out)
    print("verify: " + ("PASS" if ok else "FAIL"), file=out)
    return ok


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vbr", description="Version based reclamation toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", help="fixed-time throughput benchmark; prints CSV")
    add_bench_arguments(b)

    v = sub.add_parser("verify", help="correctness harness; exit status 0 on pass")
    v.add_argument("--full", action="store_true", help="acceptance-sized runs (several minutes)")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--only", default=",".join(SECTIONS),
                   help=f"comma list from {','.join(SECTIONS)}")
    v.add_argument("--trace", default=None, help="dump every completed op to this file")

    pl = sub.add_parser("plot", help="render a bench CSV as a PNG/PDF/SVG figure")
    pl.add_argument("csv")
    pl.add_argument("-o", "--out", default=None, help="defaults to the CSV path with .png")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    if ns.command == "bench":
        try:
            configs = configs_from_args(ns)
        except UsageError as exc:
            parser.error(str(exc))
        results = []
        try:
            for cfg in configs:
                results.append(run_benchmark(cfg))
        except PoolExhausted as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        write_rows(results, sys.stdout)
        if ns.csv:
            write_csv(results, ns.csv)
        return 0
    if ns.command == "verify":
        sections = [s for s in ns.only.split(",") if s]
        unknown = set(sections) - set(SECTIONS)
        if unknown:
            parser.error(f"unknown verify section(s): {', '.join(sorted(unknown))}")
        return 0 if run_verify(FULL if ns.full else QUICK, ns.seed, sections, ns.trace) else 1
    from pathlib import Path

    from .report import plot_throughput

    out = ns.out or str(Path(ns.csv).with_suffix(".png"))
    print(plot_throughput(read_csv(ns.csv), out))
    return 0


if __name__ == "__main__":
    sys.exit(main())
