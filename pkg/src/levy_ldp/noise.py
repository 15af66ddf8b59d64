"""Driving noises and the (n, gamma) scalings.

The diffusion is driven by ``a_n W + b_n L`` where ``W`` is a standard
Brownian motion, ``L`` has i.i.d. symmetric alpha-stable components with
characteristic function ``exp(-t |theta|^alpha)``, ``a_n = (log n)^{-1/2}``
and ``b_n = n^{-gamma}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "AlphaStableParams",
    "NoiseScale",
    "RngStream",
    "sample_gaussian_increment",
    "sample_stable_increment",
    "standard_stable",
]


@dataclass(frozen=True)
class AlphaStableParams:
    """Stability index of the jump noise, restricted to ``1 < alpha < 2``."""

    alpha: float

    def __post_init__(self) -> None:
        a = float(self.alpha)
        if not (1.0 < a < 2.0):
            raise ValueError(f"alpha must lie in the open interval (1, 2), got {self.alpha!r}")
        object.__setattr__(self, "alpha", a)


@dataclass(frozen=True)
class NoiseScale:
    """Noise intensities for scale parameter ``n`` and stable exponent ``gamma``.

    ``gamma`` is either a positive scalar or one positive value per
    coordinate; in the latter case ``b_n`` is a vector.  ``gamma = inf``
    switches the stable part off (``b_n = 0``).  ``n`` may be any real
    number ``>= 2`` so that ``log n`` can be chosen directly.
    """

    n: float
    gamma: float | tuple[float, ...]

    def __post_init__(self) -> None:
        n = float(self.n)
        if not math.isfinite(n) or n < 2.0:
            raise ValueError(f"n must be a finite number >= 2, got {self.n!r}")
        object.__setattr__(self, "n", n)
        if np.ndim(self.gamma) == 0:
            g = float(self.gamma)
            if not g > 0 or math.isnan(g):
                raise ValueError(f"gamma must be positive, got {self.gamma!r}")
            object.__setattr__(self, "gamma", g)
        else:
            g = tuple(float(v) for v in self.gamma)
            if not g or not all(math.isfinite(v) and v > 0 for v in g):
                raise ValueError(f"every per-coordinate gamma must be positive, got {self.gamma!r}")
            object.__setattr__(self, "gamma", g)

    @classmethod
    def from_log(cls, log_n: float, gamma) -> "NoiseScale":
        return cls(math.exp(log_n), gamma)

    @property
    def rate(self) -> float:
        """Large deviation speed ``log n``."""
        return math.log(self.n)

    @property
    def a_n(self) -> float:
        return 1.0 / math.sqrt(self.rate)

    @property
    def has_jumps(self) -> bool:
        return bool(np.any(np.isfinite(self.gamma)))

    @property
    def b_n(self) -> float | np.ndarray:
        if isinstance(self.gamma, tuple):
            return np.exp(-np.asarray(self.gamma) * self.rate)
        return math.exp(-self.gamma * self.rate)


class RngStream:
    """Reproducible random stream keyed by ``(seed, stream_id)``.

    Backed by the counter-based Philox generator; the key is fed to
    :class:`numpy.random.SeedSequence` as ``spawn_key`` so distinct
    ``stream_id`` values give independent streams.  ``substream`` extends
    the key, which is how Monte Carlo chunks get their own streams.
    """

    def __init__(self, seed: int, stream_id: int | Sequence[int] = 0):
        seed = int(seed)
        if seed < 0 or seed >= 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        key = (int(stream_id),) if np.ndim(stream_id) == 0 else tuple(int(s) for s in stream_id)
        if any(k < 0 for k in key):
            raise ValueError("stream ids must be non-negative")
        self.seed = seed
        self.key = key
        self.generator = np.random.Generator(
            np.random.Philox(np.random.SeedSequence(seed, spawn_key=key))
        )

    @property
    def stream_id(self) -> int:
        return self.key[0]

    def substream(self, index: int) -> "RngStream":
        return RngStream(self.seed, self.key + (int(index),))

    @property
    def state(self) -> dict:
        return self.generator.bit_generator.state

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, key={self.key})"


def _shape(dim: int, size: int | None) -> tuple[int, ...]:
    if dim < 1:
        raise ValueError("dim must be >= 1")
    return (dim,) if size is None else (int(size), dim)


def sample_gaussian_increment(dt: float, dim: int, rng: RngStream, size: int | None = None) -> np.ndarray:
    """Brownian increment over ``dt``: i.i.d. ``Normal(0, dt)`` components.

    With ``size`` given, returns ``size`` independent increments stacked as
    rows.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt!r}")
    return math.sqrt(dt) * rng.generator.standard_normal(_shape(dim, size))


def standard_stable(alpha: float, shape, gen: np.random.Generator) -> np.ndarray:
    """Chambers-Mallows-Stuck draw of the standard symmetric stable law.

    Uses a uniform angle on ``(-pi/2, pi/2)`` and a unit exponential; the
    result has characteristic function ``exp(-|theta|^alpha)``.
    """
    theta = gen.uniform(-0.5 * math.pi, 0.5 * math.pi, shape)
    w = gen.standard_exponential(shape)
    return (
        np.sin(alpha * theta)
        / np.cos(theta) ** (1.0 / alpha)
        * (np.cos((1.0 - alpha) * theta) / w) ** ((1.0 - alpha) / alpha)
    )


def sample_stable_increment(
    params: AlphaStableParams, dt: float, dim: int, rng: RngStream, size: int | None = None
) -> np.ndarray:
    """Increment of the symmetric alpha-stable process over ``dt``.

    Each component is ``dt^{1/alpha} S`` with ``S`` standard symmetric
    stable, components independent.
    """
    if not isinstance(params, AlphaStableParams):
        params = AlphaStableParams(params)
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt!r}")
    s = standard_stable(params.alpha, _shape(dim, size), rng.generator)
    return dt ** (1.0 / params.alpha) * s
