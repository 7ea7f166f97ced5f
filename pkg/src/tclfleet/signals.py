"""Piecewise-constant reference signals.

A breakpoint ``(t_start, pi)`` means ``pi`` applies to times strictly after
``t_start``; at ``t_start`` itself the previous segment's value still holds.
The first breakpoint (at t = 0) also defines the value at t = 0.
"""

from __future__ import annotations

import math
from bisect import bisect_left
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class SignalFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ReferenceSignal:
    times: tuple[float, ...]
    values: tuple[float, ...]
    horizon: float

    def __post_init__(self):
        if not self.times:
            raise ValueError("signal needs at least one breakpoint")
        if len(self.times) != len(self.values):
            raise ValueError("times and values differ in length")
        if self.times[0] != 0:
            raise ValueError("first breakpoint must be at t=0")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("breakpoint times must be strictly increasing")
        if any(not (v > 0 and math.isfinite(v)) for v in self.values):
            raise ValueError("reference values must be positive and finite")
        if self.horizon < self.times[-1]:
            raise ValueError("horizon precedes the last breakpoint")

    @classmethod
    def from_breakpoints(cls, breakpoints, horizon=None):
        times, values = zip(*[(float(t), float(v)) for t, v in breakpoints])
        if horizon is None:
            horizon = times[-1]
        return cls(times, values, float(horizon))

    @property
    def breakpoints(self):
        return list(zip(self.times, self.values))

    def value_at(self, t: float) -> float:
        if not 0 <= t <= self.horizon:
            raise ValueError(f"t={t} outside [0, {self.horizon}]")
        # index of the last breakpoint strictly before t (t=0 maps to the first)
        i = max(bisect_left(self.times, t) - 1, 0)
        return self.values[i]

    def values_after(self, ticks) -> np.ndarray:
        """Value applying just after each tick time (the next interval's reference)."""
        ticks = np.asarray(ticks, dtype=float)
        if ticks.size and (ticks.min() < 0 or ticks.max() > self.horizon):
            raise ValueError("tick times outside the signal horizon")
        idx = np.searchsorted(np.asarray(self.times), ticks, side="right") - 1
        return np.asarray(self.values)[idx]

    def integral(self, t0: float = 0.0, t1: float | None = None) -> float:
        t1 = self.horizon if t1 is None else t1
        edges = list(self.times[1:]) + [self.horizon]
        total = 0.0
        for start, end, v in zip(self.times, edges, self.values):
            lo, hi = max(start, t0), min(end, t1)
            if hi > lo:
                total += v * (hi - lo)
        return total

    def repeated(self, n: int) -> "ReferenceSignal":
        """Concatenate ``n`` copies; the period is the horizon."""
        period = self.horizon
        bps = []
        for k in range(n):
            for t, v in self.breakpoints:
                if bps and bps[-1][1] == v:
                    continue
                bps.append((t + k * period, v))
        return ReferenceSignal.from_breakpoints(bps, n * period)


def constant_signal(pi: float, horizon: float) -> ReferenceSignal:
    return ReferenceSignal((0.0,), (float(pi),), float(horizon))


def step_signal(levels, durations) -> ReferenceSignal:
    """Consecutive constant levels, each held for the matching duration."""
    starts = np.concatenate([[0.0], np.cumsum(durations)[:-1]])
    return ReferenceSignal.from_breakpoints(zip(starts, levels), float(np.sum(durations)))


HOUR = 3600.0


def canonical_test_signal() -> ReferenceSignal:
    """Five-hour test pattern: steps, a square wave, a sampled sinusoid, recovery."""
    bps = [(0.0, 1.0), (0.5 * HOUR, 0.7), (1.0 * HOUR, 1.3)]
    half = 600.0
    for k in range(6):
        bps.append((1.5 * HOUR + k * half, 1.25 if k % 2 == 0 else 0.75))
    dt = 10.0
    t0 = 2.5 * HOUR
    for j in range(int(1.5 * HOUR / dt)):
        t = t0 + j * dt
        # value held on (t, t + dt] is sampled at the start of the hold
        bps.append((t, 1.0 + 0.3 * math.sin(2 * math.pi * (t - t0) / HOUR)))
    bps.append((4.0 * HOUR, 1.0))
    merged = []
    for t, v in bps:
        if merged and merged[-1][1] == v:
            continue
        merged.append((t, v))
    return ReferenceSignal.from_breakpoints(merged, 5 * HOUR)


BUILTIN_SIGNALS = {
    "canonical": canonical_test_signal,
    "canonical25h": lambda: canonical_test_signal().repeated(5),
    "steady": lambda: constant_signal(1.0, 5 * HOUR),
}


def load_signal(path) -> ReferenceSignal:
    """Read ``seconds,pi`` lines; ``#`` starts a comment and one header line is allowed.

    The horizon is taken from an optional ``# horizon=<seconds>`` comment;
    without one the last value holds indefinitely.
    """
    path = Path(path)
    text = path.read_text()
    bps, horizon = [], None
    header_allowed = True
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line, _, comment = raw.partition("#")
        comment = comment.strip()
        if comment.startswith("horizon="):
            try:
                horizon = float(comment.split("=", 1)[1])
            except ValueError:
                raise SignalFormatError(f"{path}:{lineno}: bad horizon comment") from None
        line = line.strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 2:
            raise SignalFormatError(f"{path}:{lineno}: expected '<seconds>,<pi>'")
        try:
            bps.append((float(parts[0]), float(parts[1])))
        except ValueError:
            if header_allowed:
                header_allowed = False
                continue
            raise SignalFormatError(f"{path}:{lineno}: non-numeric field in {line!r}") from None
        header_allowed = False
    if not bps:
        raise SignalFormatError(f"{path}: no breakpoints")
    try:
        return ReferenceSignal.from_breakpoints(bps, math.inf if horizon is None else horizon)
    except ValueError as exc:
        raise SignalFormatError(f"{path}: {exc}") from None


def write_signal(signal: ReferenceSignal, path) -> None:
    lines = [f"# horizon={signal.horizon!r}", "time_s,pi"]
    lines += [f"{t!r},{v!r}" for t, v in signal.breakpoints]
    Path(path).write_text("\n".join(lines) + "\n")
