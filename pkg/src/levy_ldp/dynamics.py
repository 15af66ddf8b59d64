"""Drift fields, deterministic flows and the Euler-Maruyama simulator."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels as K
from .noise import (
    AlphaStableParams,
    NoiseScale,
    RngStream,
    sample_gaussian_increment,
    sample_stable_increment,
)

__all__ = [
    "IntegrationError",
    "DriftField",
    "LinearField",
    "Potential",
    "SeparableGradientField",
    "PolynomialField",
    "FlowPath",
    "SdePath",
    "AssumptionReport",
    "flow",
    "reversed_flow",
    "simulate_sde",
    "terminal_states",
    "validate_assumptions",
]


class IntegrationError(FloatingPointError):
    """A trajectory left the finite floating point range."""


class DriftField:
    """Vector field ``b`` on ``R^p`` evaluated through the compiled kernels.

    Subclasses set ``dim``, ``lipschitz``, ``family`` and the packed kernel
    parameters.  ``evaluate`` and ``jacobian`` accept a single point of
    shape ``(p,)`` or a batch of shape ``(M, p)``.
    """

    family = "custom"

    def __init__(self, kind: int, dim: int, params: np.ndarray, lipschitz: float):
        if dim < 1:
            raise ValueError("dimension must be >= 1")
        if not (math.isfinite(lipschitz) and lipschitz > 0):
            raise ValueError(f"Lipschitz bound must be positive and finite, got {lipschitz!r}")
        self._kind = int(kind)
        self.dim = int(dim)
        self._params = np.ascontiguousarray(params, dtype=float)
        self.lipschitz = float(lipschitz)

    @property
    def kernel(self) -> tuple[int, int, np.ndarray]:
        return self._kind, self.dim, self._params

    def _as_batch(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.ascontiguousarray(x.reshape(-1, self.dim))
        if X.shape[1] != self.dim:
            raise ValueError(f"expected points of dimension {self.dim}, got shape {x.shape}")
        return X, single

    def evaluate(self, x) -> np.ndarray:
        X, single = self._as_batch(x)
        out = K.drift_batch(self._kind, self.dim, self._params, X)
        return out[0] if single else out

    def jacobian(self, x) -> np.ndarray:
        X, single = self._as_batch(x)
        out = K.jac_batch(self._kind, self.dim, self._params, X)
        return out[0] if single else out

    __call__ = evaluate

    def to_config(self) -> dict:
        raise NotImplementedError

    def __eq__(self, other):
        return (
            type(other) is type(self)
            and self._kind == other._kind
            and self.dim == other.dim
            and self.lipschitz == other.lipschitz
            and np.array_equal(self._params, other._params)
        )

    def __hash__(self):
        return hash((self._kind, self.dim, self._params.tobytes()))


class LinearField(DriftField):
    """``b(x) = A x`` with ``A`` Hurwitz (all eigenvalues in the open left half-plane)."""

    family = "linear-hurwitz"

    def __init__(self, A):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise ValueError("A must be square")
        if np.any(np.linalg.eigvals(A).real >= 0):
            raise ValueError("A must be Hurwitz (eigenvalues with negative real part)")
        self.A = A
        super().__init__(K.LINEAR, A.shape[0], A.ravel(), float(np.linalg.norm(A, 2)))

    @classmethod
    def diagonal(cls, rates: Sequence[float]) -> "LinearField":
        return cls(np.diag(np.asarray(rates, dtype=float)))

    def to_config(self) -> dict:
        return {"family": self.family, "matrix": self.A.tolist()}


@dataclass(frozen=True)
class Potential:
    """Convex potential ``U(x) = k2 x^2/2 + k4 x^4/4`` on ``|x| <= box``.

    Outside the box ``U'`` continues linearly with the slope it has at the
    box edge, so ``U'`` is globally Lipschitz with constant
    ``k2 + 3 k4 box^2``.  ``k4 = 0`` with an infinite box is the quadratic
    potential.
    """

    k2: float
    k4: float = 0.0
    box: float = math.inf

    def __post_init__(self):
        if self.k2 < 0 or self.k4 < 0 or (self.k2 == 0 and self.k4 == 0):
            raise ValueError("potential needs k2 >= 0, k4 >= 0, not both zero")
        if not self.box > 0:
            raise ValueError("box must be positive")
        if self.k4 > 0 and math.isinf(self.box):
            raise ValueError("a quartic term needs a finite saturation box to stay Lipschitz")

    @classmethod
    def quadratic(cls, k: float = 1.0) -> "Potential":
        return cls(k)

    @classmethod
    def saturated_quartic(cls, k2: float, k4: float, box: float) -> "Potential":
        return cls(k2, k4, box)

    @property
    def kind(self) -> str:
        return "quadratic" if self.k4 == 0 and math.isinf(self.box) else "saturated-quartic"

    @property
    def max_curvature(self) -> float:
        return self.k2 + 3.0 * self.k4 * self.box**2 if self.k4 > 0 else self.k2

    def value(self, x):
        x = np.abs(np.asarray(x, dtype=float))
        inner = lambda r: 0.5 * self.k2 * r**2 + 0.25 * self.k4 * r**4
        if math.isinf(self.box):
            return inner(x)
        d = np.maximum(x - self.box, 0.0)
        r = np.minimum(x, self.box)
        edge_slope = self.k2 * self.box + self.k4 * self.box**3
        return inner(r) + edge_slope * d + 0.5 * self.max_curvature * d**2

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        inside = self.k2 * x + self.k4 * x**3
        if math.isinf(self.box):
            return inside
        edge = self.k2 * self.box + self.k4 * self.box**3
        outside = np.sign(x) * (edge + self.max_curvature * (np.abs(x) - self.box))
        return np.where(np.abs(x) <= self.box, inside, outside)

    def to_config(self) -> dict:
        if self.kind == "quadratic":
            return {"kind": "quadratic", "k": self.k2}
        return {"kind": "saturated-quartic", "k2": self.k2, "k4": self.k4, "box": self.box}


class SeparableGradientField(DriftField):
    """``b_i(x) = -U_i'(x_i)`` for convex coercive potentials ``U_i``."""

    family = "separable-gradient"

    def __init__(self, potentials: Sequence[Potential]):
        self.potentials = tuple(potentials)
        if not self.potentials:
            raise ValueError("need at least one potential")
        p = len(self.potentials)
        P = np.concatenate(
            [
                [u.k2 for u in self.potentials],
                [u.k4 for u in self.potentials],
                [u.box for u in self.potentials],
            ]
        )
        L = max(u.max_curvature for u in self.potentials)
        super().__init__(K.SEPARABLE, p, P, L)

    def potential_values(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.array([u.value(xi) for u, xi in zip(self.potentials, x)])

    def to_config(self) -> dict:
        return {"family": self.family, "potentials": [u.to_config() for u in self.potentials]}


class PolynomialField(DriftField):
    """Custom polynomial field with a declared Lipschitz bound.

    ``terms`` is a sequence of ``(powers, coef)`` pairs: ``powers`` are the
    non-negative integer exponents of the monomial ``prod_j x_j^powers[j]``
    and ``coef[i]`` its weight in component ``i``.  The bound is not
    checked here; run :func:`validate_assumptions`.
    """

    family = "custom"

    def __init__(self, dim: int, terms, lipschitz: float):
        powers = np.array([np.asarray(t[0], dtype=int) for t in terms], dtype=int).reshape(-1, dim)
        coefs = np.array([np.asarray(t[1], dtype=float) for t in terms], dtype=float).reshape(-1, dim)
        if np.any(powers < 0):
            raise ValueError("monomial powers must be non-negative integers")
        self.powers = powers
        self.coefs = coefs
        m = powers.shape[0]
        P = np.concatenate([[m], powers.ravel().astype(float), coefs.T.ravel()])
        super().__init__(K.POLYNOMIAL, dim, P, lipschitz)

    def to_config(self) -> dict:
        return {
            "family": self.family,
            "dim": self.dim,
            "lipschitz": self.lipschitz,
            "terms": [
                {"powers": pw.tolist(), "coef": c.tolist()} for pw, c in zip(self.powers, self.coefs)
            ],
        }


@dataclass
class FlowPath:
    times: np.ndarray
    states: np.ndarray
    step: float
    method: str = "rk4"
    sign: float = 1.0

    @property
    def terminal(self) -> np.ndarray:
        return self.states[-1]


@dataclass
class SdePath:
    """Simulated path together with the noise that produced it.

    ``gaussian_increments[k]`` and ``stable_increments[k]`` are the raw
    increments over step ``k``; ``scale`` is ``None`` for a noise-free run.
    """

    times: np.ndarray
    states: np.ndarray
    gaussian_increments: np.ndarray | None
    stable_increments: np.ndarray | None
    scale: NoiseScale | None
    alpha: AlphaStableParams
    step: float

    def replay(self, field: DriftField) -> np.ndarray:
        a, b = _intensities(self.scale, self.states.shape[1])
        X = np.empty_like(self.states)
        X[0] = self.states[0]
        for k in range(len(self.times) - 1):
            X[k + 1] = _em_step(field, X[k], self.step, a, b, self.gaussian_increments[k], self.stable_increments[k])
        return X


def _grid(T: float, h: float) -> tuple[int, float]:
    if not h > 0:
        raise ValueError(f"step must be positive, got {h!r}")
    if not T >= h * (1 - 1e-12):
        raise ValueError(f"horizon {T!r} shorter than one step {h!r}")
    n = max(1, int(round(T / h)))
    return n, T / n


def _check_finite(states: np.ndarray, times: np.ndarray, what: str) -> None:
    bad = ~np.isfinite(states).all(axis=tuple(range(1, states.ndim)))
    if bad.any():
        k = int(np.argmax(bad))
        raise IntegrationError(
            f"{what} overflowed at t={times[k]:.6g}; last finite state {states[max(k - 1, 0)]!r}"
        )


def _flow(field: DriftField, x, T: float, h: float, sign: float, method: str) -> FlowPath:
    n, step = _grid(T, h)
    X = np.ascontiguousarray(np.asarray(x, dtype=float).reshape(-1, field.dim))
    times = np.linspace(0.0, n * step, n + 1)
    with np.errstate(over="ignore", invalid="ignore"):
        if method == "rk4":
            states = K.rk4_batch(*field.kernel, X, n, step, sign)
        elif method == "euler":
            states = np.empty((n + 1,) + X.shape)
            states[0] = X
            for k in range(n):
                states[k + 1] = states[k] + step * (sign * field.evaluate(states[k]))
        else:
            raise ValueError(f"unknown method {method!r}")
    _check_finite(states, times, "flow")
    if np.ndim(x) == 1:
        states = states[:, 0, :]
    return FlowPath(times, states, step, method, sign)


def flow(field: DriftField, x, T: float, h: float, method: str = "rk4") -> FlowPath:
    """Integrate ``y' = b(y)`` from ``x`` over ``[0, T]``.

    RK4 by default; ``method="euler"`` reproduces the one-step rule used by
    the SDE integrator.  A batch of starting points ``(M, p)`` gives states
    of shape ``(N + 1, M, p)``.
    """
    return _flow(field, x, T, h, 1.0, method)


def reversed_flow(field: DriftField, x, T: float, h: float, method: str = "rk4") -> FlowPath:
    """Integrate the time-reversed field ``y' = -b(y)``."""
    return _flow(field, x, T, h, -1.0, method)


def _intensities(scale: NoiseScale | None, p: int):
    if scale is None:
        return 0.0, 0.0
    if not isinstance(scale, NoiseScale):
        raise TypeError(f"scale must be a NoiseScale or None, got {type(scale).__name__}")
    b = scale.b_n
    if isinstance(b, np.ndarray) and b.shape != (p,):
        raise ValueError(f"per-coordinate gamma has length {b.shape[0]}, field dimension is {p}")
    return scale.a_n, b


def _em_step(field, x, h, a, b, dW, dL):
    # order of operations fixed so that replay is bit-exact
    return x + field.evaluate(x) * h + a * dW + b * dL


def simulate_sde(
    field: DriftField,
    x0,
    scale: NoiseScale | None,
    alpha: AlphaStableParams | float,
    T: float,
    h: float,
    rng: RngStream,
) -> SdePath:
    """Euler-Maruyama path of ``dX = b(X) dt + a_n dW + b_n dL``.

    ``x0`` is a point or a callable drawing one from ``rng``.  Passing
    ``scale=None`` switches the noise off; the recorded increments are then
    zero.
    """
    alpha = alpha if isinstance(alpha, AlphaStableParams) else AlphaStableParams(alpha)
    p = field.dim
    a, b = _intensities(scale, p)
    n, step = _grid(T, h)
    x = np.asarray(x0(rng) if callable(x0) else x0, dtype=float).reshape(p)
    X = np.empty((n + 1, p))
    X[0] = x
    if scale is None:
        dW = np.zeros((n, p))
        dL = np.zeros((n, p))
    else:
        dW = sample_gaussian_increment(step, p, rng, size=n)
        if scale.has_jumps:
            dL = sample_stable_increment(alpha, step, p, rng, size=n)
        else:
            dL = np.zeros((n, p))
    times = np.linspace(0.0, n * step, n + 1)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n):
            X[k + 1] = _em_step(field, X[k], step, a, b, dW[k], dL[k])
    _check_finite(X, times, "SDE path")
    return SdePath(times, X, dW, dL, scale, alpha, step)


def terminal_states(
    field: DriftField,
    x0,
    scale: NoiseScale | None,
    alpha: AlphaStableParams | float,
    T: float,
    h: float,
    rng: RngStream,
    n_paths: int,
) -> np.ndarray:
    """``X(T)`` for ``n_paths`` independent Euler-Maruyama paths.

    Same scheme as :func:`simulate_sde`, vectorised over paths and without
    keeping the noise record.  Non-finite end points are returned as is so
    that callers can count them as misses.
    """
    alpha = alpha if isinstance(alpha, AlphaStableParams) else AlphaStableParams(alpha)
    p = field.dim
    a, b = _intensities(scale, p)
    n, step = _grid(T, h)
    X = np.empty((n_paths, p))
    X[:] = np.asarray(x0, dtype=float).reshape(p)
    if n_paths == 0:
        return X
    jumps = scale is not None and scale.has_jumps
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(n):
            dW = sample_gaussian_increment(step, p, rng, size=n_paths)
            X = X + field.evaluate(X) * step + a * dW
            if jumps:
                X += b * sample_stable_increment(alpha, step, p, rng, size=n_paths)
    return X


@dataclass
class AssumptionReport:
    b0_norm: float
    lipschitz_declared: float
    lipschitz_estimate: float
    jacobian_eigenvalues: np.ndarray
    probe_points: np.ndarray
    probe_passed: np.ndarray
    box_radius: float
    probe_horizon: float
    violations: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    @property
    def probe_coverage(self) -> float:
        return float(np.mean(self.probe_passed)) if self.probe_passed.size else 0.0


def validate_assumptions(
    field: DriftField,
    radius: float,
    samples: int = 1000,
    rng: RngStream | None = None,
    probe_horizon: float = 10.0,
    n_probes: int = 64,
    probe_step: float = 0.01,
) -> AssumptionReport:
    """Sampled check of the standing assumptions on a box ``[-R, R]^p``.

    Looks at ``b(0)``, an empirical Lipschitz constant over random pairs,
    the Jacobian spectrum at the origin and whether the flow halves the
    norm of probe points within ``probe_horizon``.  Problems are listed in
    ``violations``; nothing is raised.
    """
    if not radius > 0:
        raise ValueError("box radius must be positive")
    if samples < 1000:
        raise ValueError("need at least 1000 sample pairs")
    rng = rng or RngStream(0)
    gen = rng.generator
    p = field.dim
    violations = []

    b0 = float(np.linalg.norm(field.evaluate(np.zeros(p))))
    if b0 > 1e-12:
        violations.append(f"b(0) != 0 (norm {b0:.3g})")

    X = gen.uniform(-radius, radius, (samples, p))
    Y = gen.uniform(-radius, radius, (samples, p))
    num = np.linalg.norm(field.evaluate(X) - field.evaluate(Y), axis=1)
    den = np.linalg.norm(X - Y, axis=1)
    ok = den > 0
    lip = float(np.max(num[ok] / den[ok])) if ok.any() else 0.0
    if lip > field.lipschitz * (1 + 1e-6):
        violations.append(f"empirical Lipschitz {lip:.6g} exceeds declared {field.lipschitz:.6g}")

    eig = np.linalg.eigvals(field.jacobian(np.zeros(p)))
    if np.any(eig.real >= 0):
        violations.append("Jacobian at 0 has an eigenvalue with non-negative real part")

    corners = np.concatenate([radius * np.eye(p), -radius * np.eye(p)])
    probes = np.concatenate([corners, gen.uniform(-radius, radius, (max(n_probes - 2 * p, 0), p))])
    probes = probes[np.linalg.norm(probes, axis=1) > 0]
    try:
        end = flow(field, probes, probe_horizon, probe_step).states[-1]
        passed = np.linalg.norm(end, axis=1) < 0.5 * np.linalg.norm(probes, axis=1)
    except IntegrationError:
        passed = np.zeros(len(probes), dtype=bool)
    if not passed.all():
        violations.append(
            f"flow decay probe failed for {int((~passed).sum())} of {len(passed)} points"
        )
    return AssumptionReport(
        b0, field.lipschitz, lip, eig, probes, passed, float(radius), float(probe_horizon), violations
    )
