"""Monte Carlo estimates of hitting probabilities and slope regression in log n."""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .dynamics import DriftField, terminal_states
from .noise import AlphaStableParams, NoiseScale, RngStream, standard_stable

__all__ = [
    "TargetSet",
    "Ball",
    "Box",
    "HitRecord",
    "EstimationReport",
    "wilson_interval",
    "estimate_hit_probability",
    "ldp_slope",
    "noise_self_tests",
    "SelfTestResult",
    "CHUNK",
]

CHUNK = 20_000


class TargetSet:
    center: np.ndarray

    def contains(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def to_config(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Ball(TargetSet):
    """Closed Euclidean ball."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, dtype=float)))
        if not self.radius > 0:
            raise ValueError("radius must be positive")

    def contains(self, X):
        X = np.asarray(X, dtype=float).reshape(-1, self.center.shape[0])
        d = X - self.center
        return np.sum(d * d, axis=1) <= self.radius * self.radius

    def to_config(self) -> dict:
        return {"kind": "ball", "center": self.center.tolist(), "radius": self.radius}


@dataclass(frozen=True)
class Box(TargetSet):
    """Closed axis-aligned box ``lower <= x <= upper``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise ValueError("box needs lower < upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def contains(self, X):
        X = np.asarray(X, dtype=float).reshape(-1, self.lower.shape[0])
        return np.all((X >= self.lower) & (X <= self.upper), axis=1)

    def to_config(self) -> dict:
        return {"kind": "box", "lower": self.lower.tolist(), "upper": self.upper.tolist()}


def wilson_interval(hits: int, trials: int, level: float = 0.95) -> tuple[float, float]:
    """Wilson score interval; with no hits the one-sided exact upper bound."""
    if trials <= 0:
        return 0.0, 1.0
    if hits == 0:
        return 0.0, 1.0 - (1.0 - level) ** (1.0 / trials)
    ci = stats.binomtest(int(hits), int(trials)).proportion_ci(level, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass(frozen=True)
class HitRecord:
    n: float
    trials: int
    hits: int

    @property
    def p_hat(self) -> float:
        return self.hits / self.trials if self.trials else math.nan

    @property
    def interval(self) -> tuple[float, float]:
        return wilson_interval(self.hits, self.trials)

    def to_dict(self) -> dict:
        lo, hi = self.interval
        return {"n": self.n, "trials": self.trials, "hits": self.hits, "p_hat": self.p_hat,
                "ci_low": lo, "ci_high": hi}


def _chunk_hits(args) -> int:
    field, x0, scale, alpha, T, h, target, seed, key, size = args
    X = terminal_states(field, x0, scale, alpha, T, h, RngStream(seed, key), size)
    ok = np.all(np.isfinite(X), axis=1)
    return int(np.count_nonzero(target.contains(np.where(ok[:, None], X, np.inf)) & ok))


def estimate_hit_probability(
    field: DriftField,
    scale: NoiseScale,
    alpha,
    T: float,
    h: float,
    target: TargetSet,
    trials: int,
    rng: RngStream,
    workers: int = 1,
    x0=None,
    chunk: int = CHUNK,
) -> HitRecord:
    """Fraction of Euler-Maruyama paths with ``X(T)`` in ``target``.

    Trials are cut into chunks of ``chunk`` paths; chunk ``i`` draws from
    ``rng.substream(i)``.  The hit count is therefore the same for every
    worker count, and chunks are summed in order.
    """
    if trials < 1000:
        raise ValueError("need at least 1000 trials")
    alpha = alpha if isinstance(alpha, AlphaStableParams) else AlphaStableParams(alpha)
    x0 = np.zeros(field.dim) if x0 is None else np.asarray(x0, dtype=float).reshape(field.dim)
    sizes = [chunk] * (trials // chunk) + ([trials % chunk] if trials % chunk else [])
    jobs = [
        (field, x0, scale, alpha, T, h, target, rng.seed, rng.substream(i).key, s)
        for i, s in enumerate(sizes)
    ]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            counts = list(ex.map(_chunk_hits, jobs))
    else:
        counts = [_chunk_hits(j) for j in jobs]
    return HitRecord(scale.n, int(trials), int(sum(counts)))


@dataclass
class EstimationReport:
    """Per-n Monte Carlo records and the fitted slope of ``log p`` in ``log n``."""

    records: list[HitRecord]
    slope: float | None
    slope_stderr: float | None
    intercept: float | None
    used: list[bool]
    target: TargetSet
    gamma: float
    alpha: float
    T: float
    h: float
    V_solver: float | None = None
    V_oracle: float | None = None
    warnings: list[str] = field(default_factory=list)
    seed: int | None = None

    @property
    def ok(self) -> bool:
        return self.slope is not None

    @property
    def rate_estimate(self) -> float | None:
        return None if self.slope is None else -self.slope

    @property
    def total_trials(self) -> int:
        return sum(r.trials for r in self.records)

    def to_dict(self) -> dict:
        return {
            "records": [r.to_dict() for r in self.records],
            "used": self.used,
            "slope": self.slope,
            "slope_stderr": self.slope_stderr,
            "intercept": self.intercept,
            "V_solver": self.V_solver,
            "V_oracle": self.V_oracle,
            "target": self.target.to_config(),
            "gamma": self.gamma,
            "alpha": self.alpha,
            "T": self.T,
            "h": self.h,
            "total_trials": self.total_trials,
            "seed": self.seed,
            "warnings": self.warnings,
        }

    def plot_data(self) -> dict:
        """Points ``(log n, log p_hat)`` and the fitted line on the same abscissae."""
        ln = [math.log(r.n) for r in self.records]
        lp = [math.log(r.p_hat) if r.hits else None for r in self.records]
        fit = None
        if self.slope is not None:
            fit = [self.intercept + self.slope * v for v in ln]
        return {"log_n": ln, "log_p_hat": lp, "fit": fit, "used": self.used}


def _fit(records: Sequence[HitRecord], min_hits: int):
    used = [r.hits >= min_hits for r in records]
    pts = [r for r, u in zip(records, used) if u]
    if len(pts) < 3:
        return None, None, None, used
    x = np.log([r.n for r in pts])
    y = np.log([r.p_hat for r in pts])
    # var(log p_hat) ~ (1 - p) / hits
    wt = np.array([r.hits / max(1.0 - r.p_hat, 1e-12) for r in pts])
    coef, cov = np.polyfit(x, y, 1, w=np.sqrt(wt), cov="unscaled")
    return float(coef[0]), float(math.sqrt(cov[0, 0])), float(coef[1]), used


def ldp_slope(
    field: DriftField,
    gamma,
    alpha,
    target: TargetSet,
    n_grid: Sequence[float],
    T: float,
    h: float,
    trials: int | Sequence[int] | str,
    rng: RngStream,
    workers: int = 1,
    V_guess: float | None = None,
    hits_target: int = 100,
    budget: int = 10_000_000,
    per_n_max: int = 4_000_000,
    pilot: int = 2 * CHUNK,
    min_hits: int = 10,
    V_solver: float | None = None,
    V_oracle: float | None = None,
) -> EstimationReport:
    """Estimate ``P(X(T) in target)`` on ``n_grid`` and regress ``log p`` on ``log n``.

    ``trials`` is a count per ``n``, a sequence of counts or ``"auto"``.  In
    auto mode a pilot run at the smallest ``n`` calibrates the prefactor of
    ``p(n) ~ C n^{-V_guess}`` and each ``n`` gets enough paths for about
    ``hits_target`` hits, within ``per_n_max`` and the total ``budget``.
    Grid points with fewer than ``min_hits`` hits are left out of the
    weighted least-squares fit; fewer than three remaining points give no
    slope.
    """
    n_grid = [float(n) for n in n_grid]
    if len(n_grid) < 4:
        raise ValueError("n grid needs at least 4 points")
    a = alpha.alpha if isinstance(alpha, AlphaStableParams) else AlphaStableParams(alpha).alpha
    notes: list[str] = []

    def run(i, n, m):
        return estimate_hit_probability(field, NoiseScale(n, gamma), a, T, h, target, m,
                                        rng.substream(i), workers)

    if isinstance(trials, str):
        if trials != "auto":
            raise ValueError(f"unknown trials schedule {trials!r}")
        if V_guess is None:
            V_guess = V_solver if V_solver is not None else V_oracle
        if V_guess is None:
            raise ValueError("auto schedule needs V_guess, V_solver or V_oracle")
        # pilot on its own stream so it does not overlap the main runs
        pil = run(len(n_grid), n_grid[0], pilot)
        p0 = max(pil.hits, 1) / pil.trials
        C = p0 * n_grid[0] ** V_guess
        sched = [int(math.ceil(hits_target / min(C * n ** (-V_guess), 1.0))) for n in n_grid]
        sched = [min(max(m, 1000), per_n_max) for m in sched]
        left = budget - pil.trials
        if sum(sched) > left:
            f = left / sum(sched)
            sched = [max(1000, int(m * f)) for m in sched]
            notes.append(f"trial schedule scaled by {f:.3g} to respect the budget")
        spent = pil.trials
    else:
        sched = [int(trials)] * len(n_grid) if np.ndim(trials) == 0 else [int(m) for m in trials]
        if len(sched) != len(n_grid):
            raise ValueError("one trial count per grid point")
        spent = 0

    records = [run(i, n, m) for i, (n, m) in enumerate(zip(n_grid, sched))]
    slope, se, icpt, used = _fit(records, min_hits)
    for r, u in zip(records, used):
        if not u:
            msg = f"n={r.n:g}: only {r.hits} hits, left out of the fit"
            notes.append(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
    if slope is None:
        notes.append("fewer than 3 grid points with enough hits; no slope")
    if spent:
        notes.append(f"pilot used {spent} paths")
    g = float(gamma) if np.ndim(gamma) == 0 else list(gamma)
    return EstimationReport(records, slope, se, icpt, used, target, g, a, T, h,
                            V_solver, V_oracle, notes, rng.seed)


@dataclass(frozen=True)
class SelfTestResult:
    test: str
    alpha: float
    statistic: float
    threshold: float
    verdict: str

    def to_dict(self) -> dict:
        return {"test": self.test, "alpha": self.alpha, "statistic": self.statistic,
                "threshold": self.threshold, "verdict": self.verdict}


def noise_self_tests(
    alphas: Sequence[float] = (1.2, 1.5, 1.8),
    samples: int = 1_000_000,
    ks_samples: int = 100_000,
    thetas: Sequence[float] = (0.25, 0.5, 1.0, 2.0),
    tol: float = 0.01,
    ks_level: float = 0.01,
    rng: RngStream | None = None,
) -> list[SelfTestResult]:
    """Characteristic-function, symmetry and self-similarity checks of the sampler.

    Verdicts are ``"pass"``, ``"fail"`` or ``"insufficient power"``; the
    last one is returned when the sample is too small for a 3-sigma error
    below ``tol`` (``samples < 4.5 / tol^2``) or for a meaningful KS test.
    """
    rng = rng or RngStream(0, 7)
    need = 4.5 / tol**2
    out = []
    for i, a in enumerate(alphas):
        gen = rng.substream(i).generator
        S = standard_stable(a, samples, gen)
        cf = max(abs(np.mean(np.cos(t * S)) - math.exp(-abs(t) ** a)) for t in thetas)
        sy = max(abs(np.mean(np.sin(t * S))) for t in thetas)
        powered = samples >= need
        out.append(SelfTestResult("characteristic-function", a, float(cf), tol,
                                  ("pass" if cf <= tol else "fail") if powered else "insufficient power"))
        out.append(SelfTestResult("symmetry", a, float(sy), tol,
                                  ("pass" if sy <= tol else "fail") if powered else "insufficient power"))
        # one increment over dt=4 against the sum of four unit increments
        big = 4.0 ** (1.0 / a) * standard_stable(a, ks_samples, gen)
        four = standard_stable(a, (4, ks_samples), gen).sum(axis=0)
        ks = stats.ks_2samp(big, four)
        out.append(SelfTestResult("self-similarity", a, float(ks.pvalue), ks_level,
                                  ("pass" if ks.pvalue > ks_level else "fail")
                                  if ks_samples >= 1000 else "insufficient power"))
    return out
