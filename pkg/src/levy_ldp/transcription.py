"""Direct transcription of the controlled dynamics with coordinate resets.

Problems are posed on the reversed dynamics ``y' = -b(y) + u`` but are
integrated in forward physical time, ``x' = b(x) + w`` with ``w(t) = -u(T - t)``.
Starting from the low-cost end (the terminal point ``z`` of the reversed path)
the recursion is contracting, so endpoint sensitivities stay of order one
even for long horizons, while shooting from ``x`` through the reversed field
amplifies rounding by ``exp(L T)``.

Read in reversed time the forward explicit Euler step is the implicit Euler
rule ``y_{j+1} + h b(y_{j+1}) = y_j + h u_j``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize

from . import _kernels as K
from .dynamics import DriftField

__all__ = [
    "SolverSettings",
    "TranscriptionObjective",
    "PenaltyResult",
    "solve_penalised",
    "controls_from_path",
    "check_gradient",
]


@dataclass(frozen=True)
class SolverSettings:
    """Numerical knobs shared by the transcription-based solvers.

    Attributes
    ----------
    eps_end : float
        Endpoint (or band) violation accepted at exit of the continuation.
    eps_T : float
        Cauchy tolerance of the horizon ladder.
    eps_cap : float
        Slack on the ``p gamma alpha`` cap.
    gtol : float
        Projected-gradient exit tolerance of each L-BFGS stage.
    step : float
        Grid step ``h`` used by the value solvers.
    T0, max_doublings : float, int
        Horizon ladder ``T0, 2 T0, ...`` with at most ``max_doublings``
        doublings.
    time_grid : int
        Impulse times are searched on every ``N / time_grid``-th node.
    max_impulses : int or None
        Largest impulse count searched; ``None`` means ``p``.
    prune : bool
        Skip impulse plans whose jump cost alone cannot beat the incumbent.
    tie_tol : float
        A plan with more impulses must win by this margin to be reported.
    """

    eps_end: float = 1e-3
    eps_T: float = 1e-3
    eps_cap: float = 5e-3
    gtol: float = 1e-6
    ftol: float = 1e-14
    mu0: float = 10.0
    mu_factor: float = 10.0
    mu_max: float = 1e10
    maxiter: int = 20000
    maxcor: int = 20
    step: float = 0.01
    T0: float = 2.0
    max_doublings: int = 4
    time_grid: int = 20
    max_impulses: int | None = None
    prune: bool = True
    tie_tol: float = 1e-3

    def __post_init__(self):
        for name in ("eps_end", "eps_T", "eps_cap", "gtol", "step", "T0", "mu0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.mu_factor <= 1:
            raise ValueError("mu_factor must exceed 1")
        if self.time_grid < 1:
            raise ValueError("time_grid must be >= 1")


class TranscriptionObjective:
    """Penalised objective of a forward-time transcription.

    Decision vector ``[v, theta, z]``: ``v`` holds the scaled controls
    ``w_k sqrt(h)`` (so the energy is ``|v|^2 / 2``), ``theta`` the reset
    values and ``z`` the start point when it is free.

    Parameters
    ----------
    field : DriftField
    n_steps, step : int, float
    end : array or None
        Required end point, enforced by ``mu |x_N - end|^2``.
    start : array or None
        Fixed start point; ``None`` makes it a decision variable.
    start_cost : callable or None
        ``z -> (cost, gradient)`` for a free start.
    nodes, coords : sequences of int
        Forward-time grid nodes and coordinates of the resets.
    band : (r1, r2) or None
        Penalise ``mu h [(r1 - |x_k|)_+^2 + (|x_k| - r2)_+^2]`` at every node.
    """

    def __init__(
        self,
        field: DriftField,
        n_steps: int,
        step: float,
        end=None,
        start=None,
        start_cost: Callable | None = None,
        nodes: Sequence[int] = (),
        coords: Sequence[int] = (),
        band: tuple[float, float] | None = None,
        mu: float = 10.0,
    ):
        self.kind, self.p, self.P = field.kernel
        self.field = field
        self.N = int(n_steps)
        self.h = float(step)
        self.sqrt_h = math.sqrt(self.h)
        self.end = None if end is None else np.asarray(end, dtype=float).reshape(self.p)
        self.start = None if start is None else np.asarray(start, dtype=float).reshape(self.p)
        self.start_cost = start_cost
        order = np.argsort(np.asarray(nodes, dtype=np.int64), kind="stable")
        self.nodes = np.asarray(nodes, dtype=np.int64)[order]
        self.coords = np.asarray(coords, dtype=np.int64)[order]
        self.order = order
        if len(self.nodes) != len(self.coords):
            raise ValueError("nodes and coords must have equal length")
        if len(self.nodes) and (self.nodes.min() < 0 or self.nodes.max() > self.N):
            raise ValueError("reset node outside the grid")
        if len(self.coords) and (self.coords.min() < 0 or self.coords.max() >= self.p):
            raise ValueError("reset coordinate outside the state dimension")
        if len(np.unique(self.nodes)) != len(self.nodes):
            raise ValueError("at most one reset per grid node")
        self.band = band
        self.mu = float(mu)

    @property
    def k(self) -> int:
        return len(self.nodes)

    @property
    def size(self) -> int:
        return self.N * self.p + self.k + (self.p if self.start is None else 0)

    def pack(self, W, theta=(), z=None) -> np.ndarray:
        W = np.asarray(W, dtype=float).reshape(self.N, self.p)
        parts = [W.ravel() * self.sqrt_h, np.asarray(theta, dtype=float).reshape(self.k)]
        if self.start is None:
            parts.append(np.asarray(z, dtype=float).reshape(self.p))
        return np.concatenate(parts)

    def unpack(self, w):
        n = self.N * self.p
        W = w[:n].reshape(self.N, self.p) / self.sqrt_h
        theta = w[n : n + self.k]
        z = w[n + self.k :] if self.start is None else self.start
        return W, theta, z

    def rollout(self, w):
        W, theta, z = self.unpack(w)
        return K.rollout(self.kind, self.p, self.P, z, np.ascontiguousarray(W), self.h, 1.0,
                         self.nodes, self.coords, np.ascontiguousarray(theta))

    def energy(self, w) -> float:
        n = self.N * self.p
        return 0.5 * float(w[:n] @ w[:n])

    def _band_terms(self, X):
        r1, r2 = self.band
        r = np.sqrt(np.sum(X * X, axis=1))
        lo = np.maximum(r1 - r, 0.0)
        hi = np.maximum(r - r2, 0.0)
        val = self.mu * self.h * float(np.sum(lo * lo + hi * hi))
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(r[:, None] > 0, X / r[:, None], 0.0)
        grad = 2.0 * self.mu * self.h * (hi - lo)[:, None] * unit
        return val, grad

    def violation(self, w) -> float:
        """Endpoint error, or the largest band violation for band problems."""
        X, _ = self.rollout(w)
        out = 0.0
        if self.end is not None:
            out = float(np.linalg.norm(X[-1] - self.end))
        if self.band is not None:
            r1, r2 = self.band
            r = np.linalg.norm(X, axis=1)
            out = max(out, float(np.max(np.maximum(r1 - r, 0.0))), float(np.max(np.maximum(r - r2, 0.0))))
        return out

    def __call__(self, w):
        X, _ = self.rollout(w)
        if not np.all(np.isfinite(X)):
            return math.inf, np.zeros_like(w)
        f = self.energy(w)
        g_node = np.zeros((self.N + 1, self.p))
        g_term = np.zeros(self.p)
        if self.band is not None:
            val, g_node = self._band_terms(X)
            f += val
        if self.end is not None:
            d = X[-1] - self.end
            f += self.mu * float(d @ d)
            g_term = 2.0 * self.mu * d
        W, theta, z = self.unpack(w)
        gW, gth, g0 = K.adjoint(self.kind, self.p, self.P, X, np.ascontiguousarray(W), self.h, 1.0,
                                self.nodes, self.coords, g_term, g_node)
        n = self.N * self.p
        g = np.empty_like(w)
        g[:n] = w[:n] + gW.ravel() / self.sqrt_h
        g[n : n + self.k] = gth
        if self.start is None:
            g[n + self.k :] = g0
            if self.start_cost is not None:
                c, gc = self.start_cost(z)
                f += c
                g[n + self.k :] += gc
        return f, g

    def start_value(self, w) -> float:
        if self.start is None and self.start_cost is not None:
            return float(self.start_cost(self.unpack(w)[2])[0])
        return 0.0


@dataclass
class PenaltyResult:
    w: np.ndarray
    objective: float
    energy: float
    start_cost: float
    violation: float
    converged: bool
    gradient_norm: float
    mu: float
    iterations: int
    stages: list[dict] = field(default_factory=list)
    message: str = ""

    @property
    def cost(self) -> float:
        return self.energy + self.start_cost


def solve_penalised(obj: TranscriptionObjective, w0, settings: SolverSettings) -> PenaltyResult:
    """Penalty continuation: L-BFGS at ``mu0, mu0 * factor, ...``.

    Stops at the first stage whose violation is at most ``eps_end``.  The
    result is flagged unconverged when ``mu_max`` is reached first or the
    last L-BFGS stage did not terminate normally.
    """
    w = np.asarray(w0, dtype=float).copy()
    mu = settings.mu0
    stages = []
    iters = 0
    ok = False
    res = None
    while True:
        obj.mu = mu
        res = minimize(
            obj,
            w,
            jac=True,
            method="L-BFGS-B",
            options={
                "gtol": settings.gtol,
                "ftol": settings.ftol,
                "maxiter": settings.maxiter,
                "maxfun": 2 * settings.maxiter,
                "maxcor": settings.maxcor,
            },
        )
        if np.all(np.isfinite(res.x)):
            w = res.x
        iters += int(res.nit)
        viol = obj.violation(w)
        stages.append({"mu": mu, "violation": viol, "iterations": int(res.nit), "status": int(res.status)})
        if viol <= settings.eps_end:
            ok = res.status == 0 or _small_gradient(obj, w, settings)
            break
        if mu * settings.mu_factor > settings.mu_max:
            break
        mu *= settings.mu_factor
    _, g = obj(w)
    return PenaltyResult(
        w=w,
        objective=float(obj(w)[0]),
        energy=obj.energy(w),
        start_cost=obj.start_value(w),
        violation=stages[-1]["violation"],
        converged=bool(ok),
        gradient_norm=float(np.max(np.abs(g))) if g.size else 0.0,
        mu=mu,
        iterations=iters,
        stages=stages,
        message=str(res.message) if res is not None else "",
    )


def _small_gradient(obj, w, settings) -> bool:
    # abnormal line-search exits near the optimum are common at large mu
    _, g = obj(w)
    scale = max(1.0, obj.mu * settings.eps_end)
    return bool(np.max(np.abs(g)) <= 1e3 * settings.gtol * scale)


def controls_from_path(field: DriftField, X: np.ndarray, step: float) -> np.ndarray:
    """Forward controls ``w_k = (x_{k+1} - x_k)/h - b(x_k)`` that reproduce ``X``."""
    X = np.asarray(X, dtype=float)
    return (X[1:] - X[:-1]) / step - field.evaluate(X[:-1])


def check_gradient(obj: TranscriptionObjective, w, eps: float = 1e-4) -> float:
    """Largest component-wise relative gap between adjoint and finite differences.

    The reference is the fourth-order five-point central stencil; with the
    penalty weight large the objective is big and a plain two-point
    difference at a small step loses digits to cancellation.  Components are
    compared relative to ``max(|fd_i|, 1e-6 max(1, |g|_inf))`` so that
    entries that vanish analytically do not blow up the ratio.
    """
    w = np.asarray(w, dtype=float)
    _, g = obj(w)
    fd = np.empty_like(w)
    for i in range(w.size):
        step = eps * max(1.0, abs(w[i]))
        f = []
        for m in (2, 1, -1, -2):
            wi = w.copy()
            wi[i] += m * step
            f.append(obj(wi)[0])
        fd[i] = (-f[0] + 8.0 * f[1] - 8.0 * f[2] + f[3]) / (12.0 * step)
    floor = 1e-6 * max(1.0, float(np.max(np.abs(g))))
    return float(np.max(np.abs(g - fd) / np.maximum(np.abs(fd), floor)))
