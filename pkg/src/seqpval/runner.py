"""Driving the sequential test over a Bernoulli bit stream.

The runner consumes bits in their generation order (so results are exactly
reproducible under a fixed seed no matter how samples are produced), stops as
soon as the partial sum touches a boundary, and can report a sound interim
interval for the eventual estimate while still running.
"""

from __future__ import annotations

import math
import threading
import time
from dataclasses import dataclass

import numpy as np

from .boundary import BoundaryTable
from .spending import SpendingSequence

UPPER = "upper"
LOWER = "lower"
STOPPED = "stopped"
TRUNCATED = "truncated"


class SamplerError(RuntimeError):
    """Sampler failed mid-run; carries the partial state reached so far."""

    def __init__(self, n: int, s: int, cause: BaseException):
        super().__init__(f"bit source failed after {n} steps (partial sum {s}): {cause}")
        self.n = n
        self.s = s


@dataclass(frozen=True)
class RunResult:
    status: str  # STOPPED or TRUNCATED
    n: int  # tau when stopped, steps consumed when truncated
    s: int  # partial sum at n
    side: str | None  # UPPER / LOWER when stopped, None when truncated

    @property
    def stopped(self) -> bool:
        return self.status == STOPPED

    @property
    def tau(self) -> int:
        if not self.stopped:
            raise ValueError("run did not stop; no stopping time")
        return self.n

    @property
    def p_hat(self) -> float:
        # truncated runs report the running estimate s/n
        return self.s / self.n


class RunState:
    """Mutable (n, s) pair tied to a boundary table that extends on demand."""

    def __init__(self, table: BoundaryTable, n: int = 0, s: int = 0):
        if not (0 <= s <= n):
            raise ValueError(f"invalid state: need 0 <= s <= n, got s={s}, n={n}")
        self.table = table
        self.n = n
        self.s = s

    def step(self, x: int) -> RunResult | None:
        """Consume one bit; return a RunResult when a boundary is hit."""
        if x not in (0, 1):
            raise ValueError(f"bits must be 0 or 1, got {x!r}")
        self.n += 1
        self.s += x
        self.table.extend(self.n)
        if self.s >= self.table.upper(self.n):
            return RunResult(STOPPED, self.n, self.s, UPPER)
        if self.s <= self.table.lower(self.n):
            return RunResult(STOPPED, self.n, self.s, LOWER)
        return None


# -- bit sources -----------------------------------------------------------


class BernoulliSampler:
    """Seeded pseudo-random Bernoulli(p) bit source."""

    def __init__(self, p: float, seed=None, rng: np.random.Generator | None = None):
        if not (0.0 <= p <= 1.0):
            raise ValueError(f"p must be in [0, 1], got {p}")
        self.p = p
        self.rng = rng if rng is not None else np.random.default_rng(seed)

    def take(self, m: int) -> np.ndarray:
        return (self.rng.random(m) < self.p).astype(np.int8)

    def __iter__(self):
        while True:
            yield int(self.rng.random() < self.p)


class TextBitSource:
    """Line-oriented 0/1 input (one bit per line, whitespace tolerated)."""

    def __init__(self, lines):
        self._lines = iter(lines)

    def take(self, m: int) -> np.ndarray:
        out = []
        for raw in self._lines:
            tok = raw.strip()
            if not tok:
                continue
            if tok not in ("0", "1"):
                raise ValueError(f"invalid bit {tok!r} in text stream")
            out.append(int(tok))
            if len(out) == m:
                break
        return np.asarray(out, dtype=np.int8)


class CallbackSampler:
    """Adapter for a user callback returning one bit per call."""

    def __init__(self, fn):
        self.fn = fn

    def take(self, m: int) -> np.ndarray:
        return np.fromiter((self.fn() for _ in range(m)), dtype=np.int8, count=m)


def _as_bit_source(source):
    if hasattr(source, "take"):
        return source
    it = iter(source)

    class _IterSource:
        def take(self, m):
            out = []
            for x in it:
                out.append(x)
                if len(out) == m:
                    break
            return np.asarray(out, dtype=np.int8)

    return _IterSource()


# -- interim intervals -----------------------------------------------------


def coarse_interval(table: BoundaryTable, n: int) -> tuple[float, float]:
    """The loose interim bounds alpha -/+ (delta_n + 1)/n, clipped to [0, 1]."""
    d = table.delta(n)
    if math.isinf(d):
        return (0.0, 1.0)
    half = (d + 1.0) / n
    return (max(0.0, table.alpha - half), min(1.0, table.alpha + half))


def interim_interval(
    table: BoundaryTable,
    n: int,
    window: int | None = None,
    max_growth: int = 64,
) -> tuple[float, float]:
    """Sound interval containing the eventual estimate, given no stop by n.

    Scans boundary ratios U_nu/nu and L_nu/nu over [n, n + window], then grows
    the window (doubling) until the Hoeffding envelope alpha +/- (delta_m+1)/m
    at the window end is dominated by the scanned extremes, so that stops
    beyond the window cannot fall outside the returned interval.  Window
    steps with a zero spending increment have an infinite envelope and are
    skipped when choosing the envelope anchor.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    alpha = table.alpha
    win = window if window is not None else max(1, math.ceil(2.0 / alpha))
    w_hi = -math.inf
    w_lo = math.inf
    lo_done = hi_done = False
    scanned = n - 1  # last nu already included in the extremes
    for _ in range(max_growth):
        m = scanned + win if scanned >= n else n + win
        table.extend(m)
        nu = np.arange(scanned + 1, m + 1, dtype=float)
        w_hi = max(w_hi, float(np.max(table.upper_array(m)[scanned:] / nu)))
        w_lo = min(w_lo, float(np.min(table.lower_array(m)[scanned:] / nu)))
        scanned = m
        d = table.delta(m)
        if not math.isinf(d):
            half = (d + 1.0) / m
            hi_done = alpha + half <= w_hi
            lo_done = alpha - half >= w_lo
            if hi_done and lo_done:
                break
        win *= 2
    if not (hi_done and lo_done):
        # envelope never dominated (pathological spending); fall back to the
        # trivially sound interval
        return (0.0, 1.0)
    return (max(0.0, w_lo), min(1.0, w_hi))


# -- the driver ------------------------------------------------------------


def run(
    table: BoundaryTable,
    source,
    max_steps: int | None = None,
    report_every: int | None = None,
    report_seconds: float | None = None,
    progress=None,
    initial_chunk: int = 32,
    max_chunk: int = 8192,
) -> RunResult:
    """Drive the test until a boundary is hit, the stream ends, or max_steps.

    `source` is any iterable of bits or an object with ``take(m)``; excess
    bits taken past a stop are handed back via ``source.pushback(k)`` when the
    source supports it.  Progress records (dicts with n, s, p_min, p_max,
    elapsed_ms) are delivered to `progress` at the configured report points;
    reporting never changes the consumed bit sequence.
    """
    src = _as_bit_source(source)
    n = 0
    s = 0
    t0 = time.monotonic()
    next_report = report_every if report_every else None
    last_report_time = t0
    chunk = max(1, initial_chunk)
    while True:
        m = chunk
        if max_steps is not None:
            m = min(m, max_steps - n)
            if m <= 0:
                return RunResult(TRUNCATED, n, s, None)
        if next_report is not None:
            m = min(m, next_report - n)
        try:
            bits = np.asarray(src.take(m), dtype=np.int64)
        except Exception as exc:  # noqa: BLE001 - wrap with partial state
            raise SamplerError(n, s, exc) from exc
        got = bits.size
        if got == 0:
            # exhausted stream: report the running estimate
            if n == 0:
                raise SamplerError(0, 0, ValueError("empty bit stream"))
            return RunResult(TRUNCATED, n, s, None)
        table.extend(n + got)
        cum = s + np.cumsum(bits)
        up = cum >= table.upper_array(n + got)[n : n + got]
        lo = cum <= table.lower_array(n + got)[n : n + got]
        hit = up | lo
        if hit.any():
            i = int(np.argmax(hit))
            if hasattr(src, "pushback"):
                src.pushback(got - i - 1)
            n += i + 1
            s = int(cum[i])
            side = UPPER if up[i] else LOWER
            return RunResult(STOPPED, n, s, side)
        n += got
        s = int(cum[-1])
        chunk = min(max_chunk, chunk * 2)
        if progress is not None:
            now = time.monotonic()
            due = (next_report is not None and n >= next_report) or (
                report_seconds is not None and now - last_report_time >= report_seconds
            )
            if due:
                p_min, p_max = interim_interval(table, n)
                progress(
                    {
                        "n": n,
                        "s": s,
                        "p_min": p_min,
                        "p_max": p_max,
                        "elapsed_ms": int((now - t0) * 1000),
                    }
                )
                last_report_time = now
                if next_report is not None:
                    while next_report <= n:
                        next_report += report_every


# -- shared table cache and the nesting combinator -------------------------

_table_cache: dict[tuple, BoundaryTable] = {}
_table_lock = threading.Lock()


def get_table(alpha: float, epsilon: float = 1e-3, k: int = 1000,
              spending: SpendingSequence | None = None) -> BoundaryTable:
    """Shared boundary table keyed by (alpha, spending identity)."""
    seq = spending if spending is not None else SpendingSequence.default(epsilon, k)
    key = (round(alpha, 15),) + seq.key()
    with _table_lock:
        tab = _table_cache.get(key)
        if tab is None:
            tab = BoundaryTable(alpha, seq)
            _table_cache[key] = tab
        return tab


def h_alpha(
    threshold: float,
    source,
    max_steps: int | None = None,
    epsilon: float = 1e-3,
    k: int = 1000,
    table: BoundaryTable | None = None,
) -> float:
    """Run the test at `threshold` and return the estimate.

    This is the combinator used for nesting: a finite or truncated stream
    yields the running estimate s/n, a stopped run yields s_tau/tau.
    """
    tab = table if table is not None else get_table(threshold, epsilon, k)
    return run(tab, source, max_steps=max_steps).p_hat
