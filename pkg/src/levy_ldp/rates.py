"""Rate functionals: Brownian energy, jump counts, initial cost and totals."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dynamics import SdePath
from .noise import AlphaStableParams

__all__ = [
    "Impulse",
    "ImpulseSchedule",
    "ContinuousControl",
    "ControlPair",
    "InitialRate",
    "RateBreakdown",
    "energy_IW",
    "jump_count_IL",
    "total_rate",
    "detect_jumps",
    "JumpCounts",
]


@dataclass(frozen=True)
class Impulse:
    """Reset of coordinate ``coord`` (0-based) to ``target`` at time ``time``."""

    time: float
    coord: int
    target: float


@dataclass
class ImpulseSchedule:
    """Impulses on ``[0, horizon]`` sorted by time.

    Several impulses at one time stamp are accepted by the container but
    make the schedule inadmissible, since a jump time moves exactly one
    coordinate once.  ``weights`` are optional per-coordinate penalties.
    """

    impulses: tuple[Impulse, ...] = ()
    horizon: float = math.inf
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        imps = tuple(sorted(self.impulses, key=lambda m: m.time))
        for m in imps:
            if not (0.0 <= m.time <= self.horizon):
                raise ValueError(f"impulse time {m.time} outside [0, {self.horizon}]")
            if m.coord < 0:
                raise ValueError(f"coordinate index must be >= 0, got {m.coord}")
            if not math.isfinite(m.target):
                raise ValueError("impulse targets must be finite")
        self.impulses = imps
        if self.weights is not None:
            w = tuple(float(g) for g in self.weights)
            if not all(g > 0 and math.isfinite(g) for g in w):
                raise ValueError("per-coordinate weights must be positive")
            if imps and max(m.coord for m in imps) >= len(w):
                raise ValueError("impulse coordinate exceeds the weight vector length")
            self.weights = w

    def __len__(self) -> int:
        return len(self.impulses)

    @property
    def admissible(self) -> bool:
        times = [m.time for m in self.impulses]
        return len(set(times)) == len(times)

    def counts(self, p: int) -> np.ndarray:
        out = np.zeros(p, dtype=int)
        for m in self.impulses:
            out[m.coord] += 1
        return out

    def to_list(self) -> list[dict]:
        return [{"time": m.time, "coord": m.coord, "target": m.target} for m in self.impulses]


@dataclass
class ContinuousControl:
    """Piecewise-constant control: ``values[k]`` acts on ``[k h, (k + 1) h)``."""

    values: np.ndarray
    step: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2:
            raise ValueError("control values must have shape (N, p)")
        if not np.all(np.isfinite(v)):
            raise ValueError("control values must be finite")
        if not self.step > 0:
            raise ValueError("grid step must be positive")
        self.values = v

    @classmethod
    def zeros(cls, n_steps: int, dim: int, step: float) -> "ContinuousControl":
        return cls(np.zeros((n_steps, dim)), step)

    @property
    def horizon(self) -> float:
        return self.values.shape[0] * self.step

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.values.shape[0] + 1) * self.step


@dataclass
class ControlPair:
    """A continuous control together with an impulse schedule."""

    u: ContinuousControl
    v: ImpulseSchedule = field(default_factory=ImpulseSchedule)


@dataclass(frozen=True)
class InitialRate:
    """Cost of the starting point: point mass at 0 or ``z^T Q z``."""

    kind: str = "point-mass"
    Q: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "point-mass":
            return
        if self.kind != "quadratic":
            raise ValueError(f"unknown initial rate kind {self.kind!r}")
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        if Q.shape[0] != Q.shape[1] or not np.allclose(Q, Q.T):
            raise ValueError("Q must be a symmetric square matrix")
        if np.linalg.eigvalsh(Q).min() <= 0:
            raise ValueError("Q must be positive definite")
        object.__setattr__(self, "Q", Q)

    @classmethod
    def point_mass(cls) -> "InitialRate":
        return cls()

    @classmethod
    def quadratic(cls, Q) -> "InitialRate":
        return cls("quadratic", Q)

    def __call__(self, z) -> float:
        z = np.asarray(z, dtype=float)
        if self.kind == "point-mass":
            return 0.0 if not np.any(z) else math.inf
        return float(z @ self.Q @ z)

    def gradient(self, z) -> np.ndarray:
        if self.kind == "point-mass":
            raise ValueError("point-mass initial rate has no gradient")
        return 2.0 * self.Q @ np.asarray(z, dtype=float)

    def to_config(self) -> dict:
        if self.kind == "point-mass":
            return {"kind": "point-mass"}
        return {"kind": "quadratic", "Q": self.Q.tolist()}


def _json_num(x: float):
    return x if math.isfinite(x) else ("inf" if x > 0 else "-inf")


@dataclass(frozen=True)
class RateBreakdown:
    energy: float
    impulse_cost: float
    initial_cost: float

    @property
    def total(self) -> float:
        return self.energy + self.impulse_cost + self.initial_cost

    @property
    def finite(self) -> bool:
        return math.isfinite(self.total)

    def to_dict(self) -> dict:
        return {
            "energy": _json_num(self.energy),
            "impulse_cost": _json_num(self.impulse_cost),
            "initial_cost": _json_num(self.initial_cost),
            "total": _json_num(self.total),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def energy_IW(u: ContinuousControl) -> float:
    """``0.5 * integral |u|^2``, exact for piecewise-constant controls."""
    return 0.5 * u.step * float(np.sum(u.values * u.values))


def _alpha(alpha) -> float:
    return alpha.alpha if isinstance(alpha, AlphaStableParams) else AlphaStableParams(alpha).alpha


def jump_count_IL(v: ImpulseSchedule, alpha, weights: Sequence[float] | None = None) -> float:
    """Jump functional of an impulse schedule.

    Without weights this is ``alpha`` times the number of jumps and the
    caller multiplies by ``gamma``.  With per-coordinate weights (passed
    here or stored on the schedule) the result is the fully weighted cost
    ``sum_i gamma_i alpha (jumps in i)``.  Inadmissible schedules give
    ``inf``.
    """
    a = _alpha(alpha)
    if not v.admissible:
        return math.inf
    w = weights if weights is not None else v.weights
    if w is None:
        return a * len(v)
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0):
        raise ValueError("per-coordinate weights must be positive")
    return a * float(sum(w[m.coord] for m in v.impulses))


def total_rate(
    z,
    u: ContinuousControl,
    v: ImpulseSchedule,
    gamma,
    alpha,
    initial: InitialRate,
) -> RateBreakdown:
    """Assemble ``V~(z) + I_W(u) + gamma I_L(v)``.

    A per-coordinate ``gamma`` (sequence) switches to weighted jump costs.
    """
    if np.ndim(gamma) == 0:
        il = jump_count_IL(v, alpha)
        imp = math.inf if math.isinf(il) else float(gamma) * il
    else:
        imp = jump_count_IL(v, alpha, weights=gamma)
    return RateBreakdown(energy_IW(u), imp, initial(z))


@dataclass(frozen=True)
class JumpCounts:
    up: np.ndarray
    down: np.ndarray
    threshold: float

    @property
    def total(self) -> np.ndarray:
        return self.up + self.down


def detect_jumps(path: SdePath, threshold: float | None = None) -> JumpCounts:
    """Count big jumps of the driving stable noise, per coordinate and sign.

    A step counts when ``b_n |dL| > threshold``.  The default threshold is
    ``5 b_n h^{1/alpha}``; it needs a noisy path.
    """
    dL = path.stable_increments
    if dL is None:
        raise ValueError("path carries no stable-increment record")
    p = path.states.shape[1]
    if path.scale is None:
        if threshold is not None and not threshold > 0:
            raise ValueError("threshold must be positive")
        z = np.zeros(p, dtype=int)
        return JumpCounts(z, z.copy(), float(threshold or 0.0))
    bn = path.scale.b_n
    if threshold is None:
        threshold = 5.0 * float(np.min(bn)) * path.step ** (1.0 / path.alpha.alpha)
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    scaled = bn * dL
    up = np.sum(scaled > threshold, axis=0)
    down = np.sum(scaled < -threshold, axis=0)
    return JumpCounts(up.astype(int), down.astype(int), float(threshold))
