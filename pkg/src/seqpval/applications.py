"""Bootstrap testing of contingency-table independence via the sequential engine.

The case study: a likelihood-ratio test of independence on a small table,
its chi-square asymptotic p-value, a parametric bootstrap under the fitted
independence model driven by the sequential procedure, level checks of the
asymptotic test, the double bootstrap, and a sample-size search.  Every
nested construct charges the samples it consumes to a shared counter so that
total-cost comparisons are exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from scipy.special import gammaincc, xlogy

from .boundary import BoundaryTable
from .runner import RunResult, get_table, interim_interval, run


class DataError(ValueError):
    pass


# -- data and the test statistic -------------------------------------------


@dataclass(frozen=True)
class ContingencyTable:
    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or c.size == 0:
            raise DataError("counts must be a non-empty 2-d array")
        if np.any(c < 0) or not np.issubdtype(c.dtype, np.integer):
            c = np.asarray(self.counts, dtype=np.int64)
            if np.any(c < 0):
                raise DataError("counts must be non-negative integers")
        c = c.astype(np.int64)
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def row_sums(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def col_sums(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def df(self) -> int:
        r, c = self.counts.shape
        return (r - 1) * (c - 1)

    @classmethod
    def from_csv(cls, path) -> "ContingencyTable":
        return cls(np.loadtxt(path, delimiter=",", dtype=np.int64, ndmin=2))


def example_table() -> ContingencyTable:
    """The bundled 5x7 example data set."""
    ref = resources.files("seqpval.data").joinpath("example_5x7.csv")
    with resources.as_file(ref) as path:
        return ContingencyTable.from_csv(path)


@dataclass(frozen=True)
class NullModel:
    """Independence fit: cell probabilities q_ij = (r_i/N)(c_j/N)."""

    cell_probs: np.ndarray
    total: int

    def __post_init__(self):
        q = np.asarray(self.cell_probs, dtype=float)
        if abs(q.sum() - 1.0) > 1e-9:
            raise DataError(f"cell probabilities must sum to 1, got {q.sum()}")
        q.setflags(write=False)
        object.__setattr__(self, "cell_probs", q)


def fit_independence(table: ContingencyTable) -> NullModel:
    n = table.total
    if n == 0:
        raise DataError("cannot fit a null model to an all-zero table")
    q = np.outer(table.row_sums, table.col_sums) / float(n * n)
    return NullModel(cell_probs=q, total=n)


def lrt_statistic(table: ContingencyTable) -> float:
    """Likelihood-ratio statistic T = 2 sum a_ij log(a_ij / h_ij).

    h_ij = r_i c_j / N is the independence fit; cells with a_ij = 0 (and in
    particular whole zero rows/columns) contribute 0 by the 0 log 0 = 0
    convention.
    """
    a = table.counts.astype(float)
    n = table.total
    if n == 0:
        raise DataError("LRT statistic undefined for an all-zero table")
    h = np.outer(table.row_sums, table.col_sums) / float(n)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(h > 0.0, a / np.where(h > 0.0, h, 1.0), 1.0)
        t = 2.0 * float(xlogy(a, ratio).sum())
    return t


def _lrt_batch(counts: np.ndarray, n_total: int) -> np.ndarray:
    """Vectorized LRT over a batch of flattened tables (batch, rows, cols)."""
    a = counts.astype(float)
    r = a.sum(axis=2, keepdims=True)
    c = a.sum(axis=1, keepdims=True)
    h = r * c / float(n_total)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(h > 0.0, a / np.where(h > 0.0, h, 1.0), 1.0)
        return 2.0 * xlogy(a, ratio).sum(axis=(1, 2))


def chisq_pvalue(t: float, df: int) -> float:
    """Upper-tail chi-square probability Q(df/2, t/2)."""
    if t < 0.0:
        raise ValueError(f"statistic must be >= 0, got {t}")
    if df < 1:
        raise ValueError(f"df must be >= 1, got {df}")
    return float(gammaincc(df / 2.0, t / 2.0))


# -- null sampling ----------------------------------------------------------


def sample_null(model: NullModel, rng: np.random.Generator) -> ContingencyTable:
    flat = rng.multinomial(model.total, model.cell_probs.ravel())
    return ContingencyTable(flat.reshape(model.cell_probs.shape))


def sample_null_batch(model: NullModel, rng: np.random.Generator, size: int) -> np.ndarray:
    """(size, rows, cols) array of independent null draws."""
    flat = rng.multinomial(model.total, model.cell_probs.ravel(), size=size)
    return flat.reshape((size,) + model.cell_probs.shape)


class SampleCounter:
    """Shared tally of null tables drawn anywhere inside a nested construct."""

    def __init__(self):
        self.count = 0

    def add(self, m: int):
        self.count += m


class NullStatStream:
    """Bit source 1{T(sample) >= t_ref} over fresh null draws.

    Batched for speed; unconsumed bits are handed back on ``pushback`` so the
    counter reflects exactly the samples the sequential run consumed.
    """

    def __init__(
        self,
        model: NullModel,
        t_ref: float,
        rng: np.random.Generator,
        counter: SampleCounter | None = None,
        batch: int = 1024,
    ):
        self.model = model
        self.t_ref = t_ref
        self.rng = rng
        self.counter = counter
        self.batch = batch
        self._buf = np.empty(0, dtype=np.int8)

    def _refill(self, need: int):
        m = max(need, self.batch)
        tables = sample_null_batch(self.model, self.rng, m)
        stats = _lrt_batch(tables, self.model.total)
        bits = (stats >= self.t_ref).astype(np.int8)
        self._buf = bits if self._buf.size == 0 else np.concatenate([self._buf, bits])

    def take(self, m: int) -> np.ndarray:
        if self._buf.size < m:
            self._refill(m - self._buf.size)
        out = self._buf[:m]
        self._buf = self._buf[m:]
        if self.counter is not None:
            self.counter.add(int(out.size))
        return out

    def pushback(self, k: int):
        if k <= 0:
            return
        # the last k bits returned by take() were not consumed by the run
        if self.counter is not None:
            self.counter.add(-k)
        # they are gone from the buffer; accounting only


# -- engine configuration ---------------------------------------------------


@dataclass
class EngineConfig:
    """Knobs shared by every application run."""

    alpha: float = 0.05
    epsilon: float = 1e-3
    k: int = 1000
    seed: int | None = None
    max_steps: int | None = None
    batch: int = 1024

    def table(self, alpha: float | None = None) -> BoundaryTable:
        return get_table(alpha if alpha is not None else self.alpha, self.epsilon, self.k)

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


@dataclass(frozen=True)
class BootstrapReport:
    statistic: float
    chisq_p: float
    result: RunResult
    samples_used: int
    interim: tuple | None = None

    def to_json_dict(self) -> dict:
        out = {
            "T": self.statistic,
            "chisq_p": self.chisq_p,
            "bootstrap": {
                "p_hat": self.result.p_hat,
                "tau": self.result.n,
                "side": self.result.side,
                "status": self.result.status,
            },
            "samples_used": self.samples_used,
        }
        if self.interim is not None:
            out["interim"] = {"p_min": self.interim[0], "p_max": self.interim[1]}
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)


# -- the bootstrap workflows ------------------------------------------------


def bootstrap_pvalue(
    data: ContingencyTable,
    config: EngineConfig | None = None,
    counter: SampleCounter | None = None,
) -> BootstrapReport:
    """Sequential parametric-bootstrap p-value for the independence LRT."""
    cfg = config if config is not None else EngineConfig()
    t_obs = lrt_statistic(data)
    model = fit_independence(data)
    ctr = counter if counter is not None else SampleCounter()
    stream = NullStatStream(model, t_obs, cfg.rng(), counter=ctr, batch=cfg.batch)
    table = cfg.table()
    res = run(table, stream, max_steps=cfg.max_steps)
    interim = None
    if not res.stopped and res.n >= 1:
        interim = interim_interval(table, res.n)
    return BootstrapReport(
        statistic=t_obs,
        chisq_p=chisq_pvalue(t_obs, data.df),
        result=res,
        samples_used=ctr.count,
        interim=interim,
    )


def check_level(
    data: ContingencyTable,
    nominal_alpha: float = 0.05,
    threshold_alpha: float = 0.05,
    config: EngineConfig | None = None,
    counter: SampleCounter | None = None,
) -> BootstrapReport:
    """Estimate the true level of the asymptotic test under the fitted null.

    Streams the indicator that the chi-square test at `nominal_alpha` rejects
    on a null draw, and runs the engine against `threshold_alpha`.
    """
    cfg = config if config is not None else EngineConfig()
    model = fit_independence(data)
    # rejection happens iff T >= upper-alpha chi-square quantile
    from scipy.stats import chi2

    t_crit = float(chi2.ppf(1.0 - nominal_alpha, data.df))
    ctr = counter if counter is not None else SampleCounter()
    stream = NullStatStream(model, t_crit, cfg.rng(), counter=ctr, batch=cfg.batch)
    res = run(cfg.table(threshold_alpha), stream, max_steps=cfg.max_steps)
    return BootstrapReport(
        statistic=t_crit,
        chisq_p=nominal_alpha,
        result=res,
        samples_used=ctr.count,
    )


def _truncated_indicator(table, stream, M: int, num: int, den: int) -> int:
    """The bit 1{p_hat <= num/den} of a run truncated at M samples.

    Exactly equivalent to running the engine for up to M steps and comparing
    the resulting estimate, but stops drawing as soon as the indicator is
    determined: upper stops and any state with s > floor(num*M/den) yield 0
    (no lower crossing is reachable past that count), lower stops and any
    state where even an all-ones continuation stays at or below the cutoff
    yield 1 (no upper crossing is reachable either, since U_n - n is
    non-increasing).  The emitted bit is identical; only the sample count
    shrinks.
    """
    c = (num * M) // den  # largest s_M with s_M/M <= num/den
    table.extend(M)
    n = 0
    s = 0
    chunk = 32
    while n < M:
        m = min(chunk, M - n)
        bits = np.asarray(stream.take(m), dtype=np.int64)
        got = bits.size
        if got == 0:
            break
        cum = s + np.cumsum(bits)
        steps = np.arange(n + 1, n + got + 1)
        up = cum >= table.upper_array(n + got)[n : n + got]
        lo = cum <= table.lower_array(n + got)[n : n + got]
        det0 = cum > c
        det1 = cum + (M - steps) <= c
        hit = up | lo | det0 | det1
        if hit.any():
            i = int(np.argmax(hit))
            if hasattr(stream, "pushback"):
                stream.pushback(got - i - 1)
            if up[i] or det0[i]:
                return 0
            return 1
        n += got
        s = int(cum[-1])
        chunk = min(chunk * 2, 8192)
    # stream exhausted before determination (cannot happen with the
    # resampling streams, which are unbounded)
    return 1 if s * den <= num * max(n, 1) else 0


class _InnerLevelStream:
    """Outer bits 1{inner truncated level estimate <= inner_alpha}.

    Each outer bit runs the engine on a fresh rejection stream, truncated at
    M inner samples, and compares the resulting estimate to `inner_alpha`.
    """

    def __init__(self, model, t_crit, inner_alpha, M, cfg, ctr, rng):
        from fractions import Fraction

        self.model = model
        self.t_crit = t_crit
        self.M = M
        self.cfg = cfg
        self.ctr = ctr
        self.rng = rng
        self.inner_table = cfg.table(inner_alpha)
        frac = Fraction(inner_alpha).limit_denominator(10**6)
        self.num, self.den = frac.numerator, frac.denominator

    def take(self, m: int) -> np.ndarray:
        out = np.empty(m, dtype=np.int8)
        for i in range(m):
            stream = NullStatStream(
                self.model, self.t_crit, self.rng.spawn(1)[0],
                counter=self.ctr, batch=min(self.cfg.batch, self.M),
            )
            out[i] = _truncated_indicator(self.inner_table, stream, self.M, self.num, self.den)
        return out


def check_level_bootstrap(
    data: ContingencyTable,
    M: int = 250,
    outer_alpha: float = 0.05,
    inner_alpha: float = 0.05,
    config: EngineConfig | None = None,
    counter: SampleCounter | None = None,
) -> BootstrapReport:
    """Nested level check: outer sequential run over inner truncated runs."""
    if M < 1:
        raise ValueError(f"inner truncation M must be >= 1, got {M}")
    cfg = config if config is not None else EngineConfig()
    model = fit_independence(data)
    from scipy.stats import chi2

    t_crit = float(chi2.ppf(1.0 - inner_alpha, data.df))
    ctr = counter if counter is not None else SampleCounter()
    stream = _InnerLevelStream(model, t_crit, inner_alpha, M, cfg, ctr, cfg.rng())
    # each outer bit costs up to M inner samples; keep chunks small so the
    # crossing scan does not draw far past the outer stopping point
    res = run(cfg.table(outer_alpha), stream, max_steps=cfg.max_steps,
              initial_chunk=8, max_chunk=32)
    return BootstrapReport(
        statistic=t_crit, chisq_p=inner_alpha, result=res, samples_used=ctr.count
    )


class _DoubleBootstrapStream:
    """Outer bits of the double bootstrap.

    For each outer null draw A_i: run the inner engine at threshold p1 on the
    stream 1{T(A_ij) >= T(A_i)} over second-level draws A_ij from the model
    refitted to A_i, truncated at M, and emit 1{inner estimate <= p1}.
    """

    def __init__(self, model, p1_num, p1_den, M, cfg, ctr, rng):
        self.model = model
        self.p1_num = p1_num
        self.p1_den = p1_den
        self.M = M
        self.cfg = cfg
        self.ctr = ctr
        self.rng = rng
        self.inner_table = cfg.table(p1_num / p1_den)

    def take(self, m: int) -> np.ndarray:
        out = np.empty(m, dtype=np.int8)
        for i in range(m):
            a_i = sample_null(self.model, self.rng)
            self.ctr.add(1)
            t_i = lrt_statistic(a_i)
            model_i = fit_independence(a_i)
            stream = NullStatStream(
                model_i, t_i, self.rng.spawn(1)[0],
                counter=self.ctr, batch=min(self.cfg.batch, self.M),
            )
            out[i] = _truncated_indicator(
                self.inner_table, stream, self.M, self.p1_num, self.p1_den
            )
        return out


def double_bootstrap(
    data: ContingencyTable,
    M: int = 250,
    first_stage: int = 10_000,
    config: EngineConfig | None = None,
    counter: SampleCounter | None = None,
) -> BootstrapReport:
    """Double-bootstrap adjusted p-value of the independence LRT.

    Stage one estimates the plain bootstrap p-value p1 from a fixed budget of
    null draws; stage two runs the sequential engine on the adjustment
    indicators, each requiring an inner run truncated at M.  All samples from
    every stage are charged to the counter.
    """
    if M < 1:
        raise ValueError(f"inner truncation M must be >= 1, got {M}")
    if first_stage < 1:
        raise ValueError(f"first-stage budget must be >= 1, got {first_stage}")
    cfg = config if config is not None else EngineConfig()
    t_obs = lrt_statistic(data)
    model = fit_independence(data)
    ctr = counter if counter is not None else SampleCounter()
    rng = cfg.rng()
    tables = sample_null_batch(model, rng, first_stage)
    ctr.add(first_stage)
    stats = _lrt_batch(tables, model.total)
    hits = int(np.count_nonzero(stats >= t_obs))
    if not (0 < hits < first_stage):
        raise ValueError(
            f"first-stage estimate p1={hits}/{first_stage} is degenerate; "
            "increase the budget"
        )
    stream = _DoubleBootstrapStream(model, hits, first_stage, M, cfg, ctr, rng)
    # chunks stay small: every outer bit is an entire truncated inner run
    res = run(cfg.table(), stream, max_steps=cfg.max_steps,
              initial_chunk=8, max_chunk=32)
    return BootstrapReport(
        statistic=t_obs,
        chisq_p=chisq_pvalue(t_obs, data.df),
        result=res,
        samples_used=ctr.count,
    )


def check_level_double_bootstrap(
    data: ContingencyTable,
    M: int = 250,
    first_stage: int = 10_000,
    outer_alpha: float = 0.05,
    outer_max_steps: int = 500,
    config: EngineConfig | None = None,
    counter: SampleCounter | None = None,
) -> BootstrapReport:
    """Triple-level construct: level of the double-bootstrap test itself.

    Each outermost bit repeats the whole double bootstrap on a fresh null
    draw and records whether it rejects at `outer_alpha`; the outermost run
    is truncated at `outer_max_steps` to keep the cost bounded.
    """
    cfg = config if config is not None else EngineConfig()
    model = fit_independence(data)
    ctr = counter if counter is not None else SampleCounter()
    rng = cfg.rng()

    class _Outer:
        def take(self, m):
            out = np.empty(m, dtype=np.int8)
            for i in range(m):
                a_i = sample_null(model, rng)
                ctr.add(1)
                sub_cfg = EngineConfig(
                    alpha=cfg.alpha, epsilon=cfg.epsilon, k=cfg.k,
                    seed=rng.spawn(1)[0], max_steps=cfg.max_steps, batch=cfg.batch,
                )
                rep = double_bootstrap(
                    ContingencyTable(a_i.counts), M=M, first_stage=first_stage,
                    config=sub_cfg, counter=ctr,
                )
                out[i] = 1 if rep.result.p_hat <= outer_alpha else 0
            return out

    res = run(cfg.table(outer_alpha), _Outer(), max_steps=outer_max_steps,
              initial_chunk=4, max_chunk=16)
    return BootstrapReport(
        statistic=lrt_statistic(data),
        chisq_p=outer_alpha,
        result=res,
        samples_used=ctr.count,
    )


# -- sample-size search -----------------------------------------------------


@dataclass(frozen=True)
class SampleSizeResult:
    size: int | None  # minimal size achieving the target, when resolved
    bracket: tuple  # (lo, hi) bounds at exit
    resolved: bool
    evaluations: tuple = field(default=(), repr=False)  # (size, side/status)


def find_sample_size(
    power_evaluator,
    target_power: float,
    lo: int,
    hi: int,
    config: EngineConfig | None = None,
    max_steps: int = 100_000,
) -> SampleSizeResult:
    """Smallest sample size whose power exceeds `target_power`, by bisection.

    `power_evaluator(size)` must return a bit stream of independent test
    rejections at that size; power is assumed non-decreasing in size.  Each
    probe runs the engine at threshold `target_power` with a mandatory
    truncation (`max_steps`); a truncated probe cannot classify its midpoint
    and ends the search with an unresolved bracket.
    """
    if lo > hi:
        raise ValueError(f"empty search range [{lo}, {hi}]")
    if target_power <= 0.0:
        return SampleSizeResult(size=lo, bracket=(lo, lo), resolved=True)
    if target_power >= 1.0:
        raise ValueError(f"target power must be < 1, got {target_power}")
    cfg = config if config is not None else EngineConfig()
    table = cfg.table(target_power)
    evals = []

    def classify(size: int) -> str | None:
        res = run(table, power_evaluator(size), max_steps=max_steps)
        evals.append((size, res.side if res.stopped else res.status))
        return res.side if res.stopped else None

    side_hi = classify(hi)
    if side_hi != "upper":
        return SampleSizeResult(
            size=None, bracket=(lo, hi), resolved=False, evaluations=tuple(evals)
        )
    side_lo = classify(lo)
    if side_lo == "upper":
        return SampleSizeResult(size=lo, bracket=(lo, lo), resolved=True,
                                evaluations=tuple(evals))
    if side_lo is None:
        return SampleSizeResult(size=None, bracket=(lo, hi), resolved=False,
                                evaluations=tuple(evals))
    # invariant: power(lo) below target, power(hi) above
    while hi - lo > 1:
        mid = (lo + hi) // 2
        side = classify(mid)
        if side == "upper":
            hi = mid
        elif side == "lower":
            lo = mid
        else:
            return SampleSizeResult(size=None, bracket=(lo, hi), resolved=False,
                                    evaluations=tuple(evals))
    return SampleSizeResult(size=hi, bracket=(lo, hi), resolved=True,
                            evaluations=tuple(evals))
