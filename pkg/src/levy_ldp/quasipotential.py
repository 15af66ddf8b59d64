"""Minimum-energy connections, finite and infinite horizon values, oracles.

The value at ``x`` is the cheapest way to steer the reversed dynamics
``y' = -b(y) + u`` from ``x`` to a terminal point ``z``, paying
``V~(z) + 0.5 int |u|^2 + (jump cost)``, where a jump resets one
coordinate and costs ``gamma_i alpha`` whatever its size.  All solves go
through :mod:`levy_ldp.transcription`.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .dynamics import DriftField, LinearField, Potential, SeparableGradientField, flow
from .noise import AlphaStableParams
from .rates import (
    ContinuousControl,
    ControlPair,
    Impulse,
    ImpulseSchedule,
    InitialRate,
    RateBreakdown,
    energy_IW,
)
from .transcription import (
    PenaltyResult,
    SolverSettings,
    TranscriptionObjective,
    controls_from_path,
    solve_penalised,
)

__all__ = [
    "SolverSettings",
    "ConnectionProblem",
    "TranscriptionSolution",
    "ImpulsePlan",
    "ValueEstimate",
    "AnnulusEstimate",
    "connection_cost",
    "finite_horizon_value",
    "infinite_horizon_value",
    "gradient_case_oracle",
    "annulus_energy_growth",
]


def _alpha(alpha) -> float:
    return alpha.alpha if isinstance(alpha, AlphaStableParams) else AlphaStableParams(alpha).alpha


def _gamma_vec(gamma, p: int) -> np.ndarray:
    g = np.broadcast_to(np.asarray(gamma, dtype=float), (p,)).copy()
    if np.any(g <= 0) or not np.all(np.isfinite(g)):
        raise ValueError("gamma must be positive")
    return g


@dataclass(frozen=True)
class ConnectionProblem:
    """Steer ``y' = -b(y) + u`` from ``start`` to ``end`` in time ``T``."""

    field: DriftField
    start: np.ndarray
    end: np.ndarray
    T: float
    N: int
    eps_end: float = 1e-3

    def __post_init__(self):
        p = self.field.dim
        object.__setattr__(self, "start", np.asarray(self.start, dtype=float).reshape(p))
        object.__setattr__(self, "end", np.asarray(self.end, dtype=float).reshape(p))
        if not self.T > 0:
            raise ValueError("horizon must be positive")
        if self.N < 10:
            raise ValueError("grid needs at least 10 steps")
        if not self.eps_end > 0:
            raise ValueError("endpoint tolerance must be positive")

    @property
    def step(self) -> float:
        return self.T / self.N


@dataclass(frozen=True)
class ImpulsePlan:
    """Reset structure of a candidate: reversed-time grid nodes and coordinates."""

    nodes: tuple[int, ...] = ()
    coords: tuple[int, ...] = ()

    def __post_init__(self):
        if len(self.nodes) != len(self.coords):
            raise ValueError("nodes and coords must have equal length")
        if len(set(self.nodes)) != len(self.nodes):
            raise ValueError("two impulses at one grid node are inadmissible")

    def __len__(self) -> int:
        return len(self.nodes)

    def cost(self, gamma: np.ndarray, alpha: float) -> float:
        return alpha * float(sum(gamma[c] for c in self.coords))

    def forward_nodes(self, N: int) -> tuple[int, ...]:
        return tuple(N - j for j in self.nodes)


@dataclass
class TranscriptionSolution:
    """A transcribed reversed trajectory.

    ``states[j]`` is the reversed state at node ``j`` after any reset there
    and ``start`` the point the trajectory leaves from.  Consecutive nodes
    satisfy the implicit Euler rule ``y_j = y'_{j+1} + h (b(y'_{j+1}) - u_j)``
    where ``y'`` is the state before a reset (see :meth:`replay_residual`).
    """

    control: ContinuousControl
    impulses: ImpulseSchedule
    states: np.ndarray
    pre_reset: np.ndarray
    start: np.ndarray
    energy: float
    endpoint_error: float
    converged: bool
    gradient_norm: float
    stages: list[dict] = field(default_factory=list)

    @property
    def terminal(self) -> np.ndarray:
        return self.states[-1]

    @property
    def times(self) -> np.ndarray:
        return self.control.times

    def replay_residual(self, field: DriftField) -> float:
        h = self.control.step
        Yp = self.pre_reset
        rhs = Yp[1:] + h * (field.evaluate(Yp[1:]) - self.control.values)
        return float(np.max(np.abs(self.states[:-1] - rhs))) if len(rhs) else 0.0


def _to_solution(obj: TranscriptionObjective, res: PenaltyResult) -> TranscriptionSolution:
    W, theta, _ = obj.unpack(res.w)
    X, arrivals = obj.rollout(res.w)
    N, h = obj.N, obj.h
    u = -W[::-1].copy()
    pre = X[::-1].copy()
    post = pre.copy()
    imps = []
    for k_f, c, a in zip(obj.nodes, obj.coords, arrivals):
        j = N - int(k_f)
        post[j, c] = a
        imps.append(Impulse(j * h, int(c), float(a)))
    control = ContinuousControl(u, h)
    return TranscriptionSolution(
        control=control,
        impulses=ImpulseSchedule(tuple(imps), horizon=N * h),
        states=post,
        pre_reset=pre,
        start=pre[0].copy(),
        energy=energy_IW(control),
        endpoint_error=res.violation,
        converged=res.converged,
        gradient_norm=res.gradient_norm,
        stages=res.stages,
    )


def _path_guesses(field: DriftField, z0: np.ndarray, x: np.ndarray, N: int, h: float) -> list[np.ndarray]:
    """Forward-time state paths used to seed the controls."""
    s = np.linspace(0.0, 1.0, N + 1)[:, None]
    line = z0 + s * (x - z0)
    guesses = [np.tile(z0, (N + 1, 1)), line]
    try:
        relax = flow(field, x, N * h, h).states[::-1]
        guesses.append(relax)
    except FloatingPointError:
        pass
    return guesses


def _seeds(obj: TranscriptionObjective, field, z0, x, warm=None) -> list[np.ndarray]:
    N, h = obj.N, obj.h
    seeds = []
    for path in _path_guesses(field, z0, x, N, h):
        W = controls_from_path(field, path, h)
        theta = path[obj.nodes, obj.coords] if obj.k else ()
        seeds.append(obj.pack(W, theta, z0))
    if obj.k:
        # zero control, every reset jumps straight to the required value
        seeds.append(obj.pack(np.zeros((N, obj.p)), x[obj.coords], z0))
    if warm is not None:
        seeds.append(warm)
    return seeds


def _best(results: Sequence[PenaltyResult]) -> PenaltyResult:
    # ordered reduction: converged first, then cost, first index on ties
    ok = [r for r in results if r.converged]
    pool = ok if ok else results
    if ok:
        return min(pool, key=lambda r: r.cost)
    return min(pool, key=lambda r: (r.violation, r.cost))


def connection_cost(prob: ConnectionProblem, settings: SolverSettings | None = None, warm=None) -> TranscriptionSolution:
    """Minimum energy of a reversed trajectory from ``prob.start`` to ``prob.end``.

    Multi-start over the zero control, the straight-line interpolant and the
    path that follows the flow of ``b`` (the time reverse of free
    relaxation); the best converged candidate is returned.
    """
    settings = settings or SolverSettings()
    if prob.eps_end != settings.eps_end:
        settings = _replace(settings, eps_end=prob.eps_end)
    obj = TranscriptionObjective(prob.field, prob.N, prob.step, end=prob.start, start=prob.end, mu=settings.mu0)
    results = [solve_penalised(obj, w0, settings) for w0 in _seeds(obj, prob.field, prob.end, prob.start, warm)]
    return _to_solution(obj, _best(results))


def _replace(settings: SolverSettings, **kw) -> SolverSettings:
    from dataclasses import replace

    return replace(settings, **kw)


@dataclass
class ValueEstimate:
    """Computed value with its optimising control pair and diagnostics."""

    x: np.ndarray
    value: float
    breakdown: RateBreakdown
    terminal: np.ndarray
    controls: ControlPair
    solution: TranscriptionSolution | None
    horizon: float
    gamma: np.ndarray
    alpha: float
    cap: float
    cap_active: bool
    converged: bool
    ladder: list[dict] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_impulses(self) -> int:
        return len(self.controls.v)

    def to_dict(self) -> dict:
        return {
            "x": self.x.tolist(),
            "value": self.value,
            "breakdown": self.breakdown.to_dict(),
            "terminal": self.terminal.tolist(),
            "impulses": self.controls.v.to_list(),
            "horizon": self.horizon,
            "gamma": self.gamma.tolist(),
            "alpha": self.alpha,
            "cap": self.cap,
            "cap_active": self.cap_active,
            "converged": self.converged,
            "ladder": self.ladder,
            "diagnostics": self.diagnostics,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kw)

    def trajectory_csv(self) -> str:
        """Reversed optimal trajectory as CSV: ``t, y_1..y_p, u_1..u_p, impulse``.

        ``u`` on row ``j`` acts on ``[t_j, t_{j+1})``; ``impulse`` holds the
        reset coordinate (1-based) at that node or is empty.
        """
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        p = self.x.shape[0]
        w.writerow(["t"] + [f"y{i + 1}" for i in range(p)] + [f"u{i + 1}" for i in range(p)] + ["impulse"])
        sol = self.solution
        if sol is None:
            return buf.getvalue()
        marks = {round(m.time / sol.control.step): m.coord + 1 for m in sol.impulses.impulses}
        U = sol.control.values
        for j, t in enumerate(sol.times):
            u = U[j] if j < len(U) else np.full(p, np.nan)
            row = [repr(float(t))] + [repr(float(v)) for v in sol.states[j]]
            row += ["" if np.isnan(v) else repr(float(v)) for v in u]
            row.append(str(marks.get(j, "")))
            w.writerow(row)
        return buf.getvalue()


def _time_tuples(N: int, k: int, time_grid: int) -> list[tuple[int, ...]]:
    """Candidate reversed-time node tuples for ``k`` impulses.

    Increasing tuples on the coarse sub-grid plus bursts of consecutive
    nodes, which stand in for several impulses at (almost) one instant.
    Earliest reversed times come first.
    """
    grid = sorted({int(round(i * N / time_grid)) for i in range(time_grid + 1)})
    grid = [g for g in grid if g < N] or [0]
    out = list(itertools.combinations(grid, k))
    for g in grid:
        burst = tuple(range(g, g + k))
        if burst[-1] < N and burst not in out:
            out.append(burst)
    out.sort()
    return out


def _coord_tuples(p: int, k: int) -> list[tuple[int, ...]]:
    if k <= p:
        return list(itertools.permutations(range(p), k))
    return list(itertools.product(range(p), repeat=k))


def _candidates(p: int, N: int, settings: SolverSettings) -> list[ImpulsePlan]:
    kmax = p if settings.max_impulses is None else settings.max_impulses
    plans = [ImpulsePlan()]
    for k in range(1, kmax + 1):
        for nodes in _time_tuples(N, k, settings.time_grid):
            for coords in _coord_tuples(p, k):
                plans.append(ImpulsePlan(nodes, coords))
    return plans


def _initial_setup(initial: InitialRate, p: int):
    if initial.kind == "point-mass":
        return np.zeros(p), None
    return None, lambda z: (initial(z), initial.gradient(z))


def _solve_plan(field, x, N, h, plan, initial, settings, warm=None):
    start, start_cost = _initial_setup(initial, field.dim)
    obj = TranscriptionObjective(
        field, N, h, end=x, start=start, start_cost=start_cost,
        nodes=plan.forward_nodes(N), coords=plan.coords, mu=settings.mu0,
    )
    z0 = np.zeros(field.dim)
    seeds = _seeds(obj, field, z0, x, None)
    if warm is not None:
        seeds.append(warm(obj))
    results = [solve_penalised(obj, w0, settings) for w0 in seeds]
    return obj, _best(results)


def _pure_jump_plan(p: int, N: int, h: float) -> ControlPair:
    # one reset per coordinate on consecutive nodes, all to the equilibrium
    imps = tuple(Impulse(j * h, j, 0.0) for j in range(p))
    return ControlPair(ContinuousControl.zeros(N, p, h), ImpulseSchedule(imps, horizon=N * h))


def finite_horizon_value(
    field: DriftField,
    x,
    T: float,
    gamma,
    alpha,
    initial: InitialRate | None = None,
    settings: SolverSettings | None = None,
    warm: "ValueEstimate | None" = None,
) -> ValueEstimate:
    """Value over horizon ``T``: cheapest reversed trajectory from ``x``.

    Searches the impulse count ``k = 0..max_impulses``, the impulse
    coordinates and the impulse times on a coarse sub-grid; reset targets,
    controls and (for a quadratic initial cost) the terminal point are
    optimised jointly.  Ties within ``tie_tol`` go to fewer impulses and
    candidates whose jump cost alone cannot win are skipped when
    ``settings.prune`` is set.
    """
    settings = settings or SolverSettings()
    initial = initial or InitialRate.point_mass()
    a = _alpha(alpha)
    p = field.dim
    x = np.asarray(x, dtype=float).reshape(p)
    g = _gamma_vec(gamma, p)
    N = max(10, int(round(T / settings.step)))
    h = T / N

    plans = _candidates(p, N, settings)
    warm_fn = None
    if warm is not None and warm.solution is not None:
        warm_plan, warm_fn = _shift_warm(warm, N, h)
        if warm_plan not in plans:
            plans.insert(1 + sum(len(q) < len(warm_plan) for q in plans[1:]), warm_plan)

    best_val, best = math.inf, None
    tried = skipped = 0
    for plan in plans:
        jump = plan.cost(g, a)
        if best is not None and settings.prune and jump >= best_val - settings.tie_tol:
            skipped += 1
            continue
        w_fn = warm_fn if (warm_fn is not None and plan == warm_plan) else None
        obj, res = _solve_plan(field, x, N, h, plan, initial, settings, w_fn)
        tried += 1
        val = res.cost + jump
        margin = settings.tie_tol if best is not None and len(plan) > len(best[0]) else 0.0
        if best is None or (res.converged and val < best_val - margin) or (not best[2].converged and res.converged):
            best_val, best = val, (plan, obj, res)

    plan, obj, res = best
    sol = _to_solution(obj, res)
    cap = a * float(g.sum())
    breakdown = RateBreakdown(sol.energy, plan.cost(g, a), initial(sol.terminal) if initial.kind != "point-mass" else 0.0)
    value = breakdown.total
    return ValueEstimate(
        x=x,
        value=value,
        breakdown=breakdown,
        terminal=sol.terminal.copy(),
        controls=ControlPair(sol.control, sol.impulses),
        solution=sol,
        horizon=N * h,
        gamma=g,
        alpha=a,
        cap=cap,
        cap_active=abs(value - cap) <= settings.eps_cap,
        converged=sol.converged,
        diagnostics={"plans_solved": tried, "plans_pruned": skipped, "grid_steps": N, "step": h,
                     "endpoint_error": sol.endpoint_error},
    )


def _shift_warm(warm: ValueEstimate, N: int, h: float):
    """Embed a shorter-horizon optimum at the end of a longer reversed path.

    In forward time the old trajectory is preceded by a rest period at the
    terminal point, which costs nothing when that point is the equilibrium.
    """
    sol = warm.solution
    N0 = sol.control.values.shape[0]
    shift = N - N0
    plan = ImpulsePlan(tuple(round(m.time / h) for m in sol.impulses.impulses),
                       tuple(m.coord for m in sol.impulses.impulses))
    if shift < 0 or abs(sol.control.step - h) > 1e-12 * h:
        return plan, None
    W_old = -sol.control.values[::-1]

    def build(obj: TranscriptionObjective):
        W = np.zeros((N, obj.p))
        W[shift:] = W_old
        z = sol.terminal
        # targets are the forward post-reset values, i.e. the reversed pre-reset ones
        theta = [sol.pre_reset[round(m.time / h), m.coord] for m in sol.impulses.impulses]
        order_theta = np.asarray(theta)[obj.order] if len(theta) else np.zeros(0)
        return obj.pack(W, order_theta, z)

    return plan, build


def infinite_horizon_value(
    field: DriftField,
    x,
    gamma,
    alpha,
    settings: SolverSettings | None = None,
) -> ValueEstimate:
    """Long-horizon value with the terminal point pinned at the equilibrium.

    Runs :func:`finite_horizon_value` on ``T0, 2 T0, ...`` (warm starting
    each rung from the previous optimum) until two successive values differ
    by at most ``eps_T``.  The result never exceeds ``p gamma alpha``: when
    the search is worse, the plan that jumps every coordinate home is
    reported instead.
    """
    settings = settings or SolverSettings()
    a = _alpha(alpha)
    p = field.dim
    x = np.asarray(x, dtype=float).reshape(p)
    g = _gamma_vec(gamma, p)
    ladder = []
    est = prev = None
    converged = False
    T = settings.T0
    for _ in range(settings.max_doublings + 1):
        est = finite_horizon_value(field, x, T, g, a, InitialRate.point_mass(), settings, warm=prev)
        ladder.append({"T": est.horizon, "value": est.value, "impulses": est.n_impulses,
                       "converged": est.converged})
        if prev is not None and abs(est.value - prev.value) <= settings.eps_T:
            converged = est.converged
            break
        prev = est
        T *= 2.0
    est.ladder = ladder
    est.converged = converged
    cap = a * float(g.sum())
    if est.value > cap:
        N = est.solution.control.values.shape[0] if est.solution is not None else 10
        h = est.horizon / N
        est.diagnostics["search_value"] = est.value
        est.value = cap
        est.breakdown = RateBreakdown(0.0, cap, 0.0)
        est.controls = _pure_jump_plan(p, N, h)
        est.solution = None
        est.terminal = np.zeros(p)
    est.cap_active = abs(est.value - cap) <= settings.eps_cap
    return est


def gradient_case_oracle(potentials, x, gamma, alpha) -> float:
    """``sum_i min(2 U_i(x_i), gamma_i alpha)`` for separable gradient drifts.

    ``potentials`` is a :class:`SeparableGradientField`, a diagonal
    :class:`LinearField` or a sequence of :class:`Potential`.
    """
    if isinstance(potentials, SeparableGradientField):
        pots = potentials.potentials
    elif isinstance(potentials, LinearField):
        A = potentials.A
        if np.any(A != np.diag(np.diag(A))):
            raise ValueError("oracle needs a separable gradient field; A is not diagonal")
        pots = [Potential.quadratic(-float(d)) for d in np.diag(A)]
    elif isinstance(potentials, DriftField):
        raise ValueError("oracle needs a separable gradient field")
    else:
        pots = list(potentials)
        if not all(isinstance(u, Potential) for u in pots):
            raise TypeError("expected Potential instances")
    x = np.asarray(x, dtype=float).reshape(len(pots))
    a = _alpha(alpha)
    g = _gamma_vec(gamma, len(pots))
    return float(sum(min(2.0 * float(u.value(xi)), gi * a) for u, xi, gi in zip(pots, x, g)))


@dataclass
class AnnulusEstimate:
    T: float
    energy: float
    violation: float
    converged: bool
    states: np.ndarray


def annulus_energy_growth(
    field: DriftField,
    r1: float,
    r2: float,
    T: float | Iterable[float],
    step: float = 0.01,
    settings: SolverSettings | None = None,
):
    """Least energy of a trajectory kept in ``r1 <= |y| <= r2`` over ``[0, T]``.

    Both end points are free and the band is enforced by a path penalty with
    continuation.  For a sequence of horizons a list is returned.
    """
    if not (0 < r1 < r2):
        raise ValueError("need 0 < r1 < r2")
    if np.ndim(T) > 0:
        return [annulus_energy_growth(field, r1, r2, t, step, settings) for t in T]
    settings = settings or SolverSettings()
    p = field.dim
    N = max(10, int(round(T / step)))
    h = T / N
    obj = TranscriptionObjective(field, N, h, start=None, band=(r1, r2), mu=settings.mu0)
    e = np.zeros(p)
    e[0] = 1.0
    seeds = []
    for r in (0.5 * (r1 + r2), r1, r2):
        path = np.tile(r * e, (N + 1, 1))
        seeds.append(obj.pack(controls_from_path(field, path, h), (), r * e))
    results = [solve_penalised(obj, w0, settings) for w0 in seeds]
    res = _best(results)
    X, _ = obj.rollout(res.w)
    return AnnulusEstimate(N * h, res.energy, res.violation, res.converged, X[::-1].copy())
