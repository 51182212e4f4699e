"""Test-only machinery: pause hooks, scripted schedules and mutated schemes.

Nothing in the library imports this module. The mutants exist to show that
the checks they remove are load-bearing; they must never back a real set.
"""

from __future__ import annotations

import random
import threading
from dataclasses import dataclass, field

from .core import LOCK_STRIPES, MARK, VBR, Restart

HOOK_POINTS = ("after-read-link", "before-cas", "after-retire")


class ScheduleTimeout(RuntimeError):
    pass


@dataclass
class Breakpoint:
    thread: str
    point: str
    reached: threading.Event = field(default_factory=threading.Event)
    released: threading.Event = field(default_factory=threading.Event)
    fired: bool = False


class PauseHooks:
    """Park a named thread the first time it reaches a named hook point.

    Install with ``reclaimer.hook = hooks``. Threads are told apart by
    ``threading.current_thread().name``; any thread without a breakpoint
    passes straight through.
    """

    def __init__(self, timeout: float = 10.0):
        self.timeout = timeout
        self._bps: dict[tuple[str, str], Breakpoint] = {}
        self.log: list[tuple[str, str]] = []

    def hold(self, thread: str, point: str) -> Breakpoint:
        if point not in HOOK_POINTS:
            raise ValueError(f"unknown hook point {point!r}")
        bp = Breakpoint(thread, point)
        self._bps[(thread, point)] = bp
        return bp

    def __call__(self, point, ctx):
        name = threading.current_thread().name
        bp = self._bps.get((name, point))
        if bp is None or bp.fired:
            return
        bp.fired = True
        self.log.append((name, point))
        bp.reached.set()
        if not bp.released.wait(self.timeout):
            raise ScheduleTimeout(f"{name} parked at {point} was never released")

    def wait_reached(self, bp: Breakpoint):
        if not bp.reached.wait(self.timeout):
            raise ScheduleTimeout(f"{bp.thread} never reached {bp.point}")

    def release(self, bp: Breakpoint):
        bp.released.set()


@dataclass(frozen=True)
class Step:
    thread: str
    point: str
    action: str  # "hold" or "proceed"


@dataclass
class ScheduleScript:
    """Ordered ``(thread, hook point, action)`` steps driven against threads.

    ``hold`` parks the thread at the point and waits until it gets there;
    ``proceed`` releases the most recent hold of that thread. Plain callables
    may be interleaved with the steps and run on the coordinating thread.
    """

    steps: list = field(default_factory=list)
    seed: int = 0

    def hold(self, thread, point):
        self.steps.append(Step(thread, point, "hold"))
        return self

    def proceed(self, thread, point):
        self.steps.append(Step(thread, point, "proceed"))
        return self

    def then(self, fn):
        self.steps.append(fn)
        return self

    def run(self, hooks: PauseHooks, workers: dict[str, callable]) -> dict:
        """Start ``workers`` as named threads and play the script against them."""
        bps = {}
        for s in self.steps:
            if isinstance(s, Step) and s.action == "hold":
                bps[(s.thread, s.point)] = hooks.hold(s.thread, s.point)
        results, errors = {}, {}

        def wrap(name, fn):
            def body():
                try:
                    results[name] = fn()
                except BaseException as exc:  # surfaced to the coordinator
                    errors[name] = exc
            return body

        threads = {n: threading.Thread(target=wrap(n, fn), name=n, daemon=True)
                   for n, fn in workers.items()}
        for t in threads.values():
            t.start()
        try:
            for s in self.steps:
                if not isinstance(s, Step):
                    s()
                elif s.action == "hold":
                    hooks.wait_reached(bps[(s.thread, s.point)])
                else:
                    hooks.release(bps[(s.thread, s.point)])
        finally:
            for bp in bps.values():
                hooks.release(bp)
            for t in threads.values():
                t.join(hooks.timeout)
        if errors:
            name, exc = next(iter(errors.items()))
            raise RuntimeError(f"worker {name} failed") from exc
        return results


class ForcedRollbacks:
    """Hook that bumps the global epoch at random hook points.

    Every bump makes the next epoch check of every thread fail, so the
    structures are pushed through rollbacks at arbitrary places.
    """

    def __init__(self, reclaimer, probability: float, seed: int = 0,
                 points=HOOK_POINTS):
        self.r = reclaimer
        self.p = probability
        self.points = frozenset(points)
        self._rng = random.Random(seed)
        self.bumps = 0

    def __call__(self, point, ctx):
        if point in self.points and self._rng.random() < self.p:
            if self.r.epoch_try_advance(self.r.epoch_read()):
                self.bumps += 1


class Stall:
    """Park one thread forever (until released) at its first hook point."""

    def __init__(self, thread: str, point: str = "after-read-link"):
        self.thread = thread
        self.point = point
        self.parked = threading.Event()
        self.resume = threading.Event()

    def __call__(self, point, ctx):
        if (point == self.point and not self.parked.is_set()
                and threading.current_thread().name == self.thread):
            self.parked.set()
            self.resume.wait()


class NoVersionCheckVBR(VBR):
    """VBR whose link exchange compares only the target word, not the version."""

    name = "vbr-no-version-check"

    def _wcas(self, slot, old, new):
        with self._locks[slot % LOCK_STRIPES]:
            if self.link[slot][0] != old[0]:
                return False
            if self.state is not None:
                if new[0] & MARK:
                    self._check_mark(slot)
                else:
                    self._check_link_write(slot, old, new)
            self.link[slot] = new
        return True


class NoRetireGuardVBR(VBR):
    """VBR whose ``retire`` skips the already-retired check."""

    name = "vbr-no-retire-guard"

    def retire(self, ctx, ref):
        slot, b = ref
        r = self._stamp_retired(ctx, slot)
        if self.hook is not None:
            self.hook("after-retire", ctx)
        if r > ctx.my_e:
            raise Restart


MUTANTS = {
    "no-version-check": NoVersionCheckVBR,
    "no-retire-guard": NoRetireGuardVBR,
}

__all__ = [
    "Breakpoint", "ForcedRollbacks", "HOOK_POINTS", "MUTANTS",
    "NoRetireGuardVBR", "NoVersionCheckVBR", "PauseHooks", "ScheduleScript",
    "ScheduleTimeout", "Stall", "Step",
]
