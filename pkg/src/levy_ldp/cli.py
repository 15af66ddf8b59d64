"""Command line front end: ``simulate``, ``qp``, ``verify`` and ``selftest``.

Exit codes: 0 success, 1 invalid configuration or input, 2 solver or
statistical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config
from .dynamics import LinearField, SeparableGradientField, simulate_sde
from .noise import NoiseScale, RngStream
from .quasipotential import gradient_case_oracle, infinite_horizon_value
from .transcription import SolverSettings, TranscriptionObjective, check_gradient
from .verify import ldp_slope, noise_self_tests

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 1, 2


def _fmt(v: float) -> str:
    return repr(float(v))


def _open(path: Path, mode: str = "w"):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        return open(path, mode, newline="")
    except OSError as e:
        raise OSError(f"cannot write {path}: {e.strerror}") from None


def _write_json(path: Path, obj) -> None:
    with _open(path) as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _separable(cfg: ExperimentConfig) -> bool:
    f = cfg.field
    return isinstance(f, SeparableGradientField) or (
        isinstance(f, LinearField) and np.all(f.A == np.diag(np.diag(f.A)))
    )


def cmd_simulate(cfg: ExperimentConfig, count: int | None = None, noise: bool | None = None) -> int:
    """Write ``paths.csv`` (``run_id,t,x1..xp``) and the ``noise.csv`` record."""
    sim = cfg.simulate
    count = int(sim.get("count", 1) if count is None else count)
    noise = bool(sim.get("noise", True) if noise is None else noise)
    n = float(sim.get("n", cfg.n_grid[0]))
    scale = NoiseScale(n, cfg.gamma) if noise else None
    p = cfg.dim
    rng = RngStream(cfg.seed, 0)
    out = cfg.output
    with _open(out / "paths.csv") as fp, _open(out / "noise.csv") as fn:
        wp = csv.writer(fp, lineterminator="\n")
        wn = csv.writer(fn, lineterminator="\n")
        wp.writerow(["run_id", "t"] + [f"x{i + 1}" for i in range(p)])
        wn.writerow(["run_id", "step"] + [f"dW{i + 1}" for i in range(p)] + [f"dL{i + 1}" for i in range(p)])
        for r in range(count):
            path = simulate_sde(cfg.field, cfg.x0, scale, cfg.alpha, cfg.T, cfg.h, rng.substream(r))
            for t, x in zip(path.times, path.states):
                wp.writerow([r, _fmt(t)] + [_fmt(v) for v in x])
            for k, (dw, dl) in enumerate(zip(path.gaussian_increments, path.stable_increments)):
                wn.writerow([r, k] + [_fmt(v) for v in dw] + [_fmt(v) for v in dl])
    print(f"wrote {count} path(s) to {out / 'paths.csv'}")
    return EXIT_OK


def cmd_qp(cfg: ExperimentConfig, points=None) -> int:
    """Infinite-horizon values at the configured points, with the oracle when available."""
    pts = [np.asarray(x, dtype=float) for x in (points if points is not None else cfg.qp_points)]
    if not pts:
        print("no points given (use --x or 'qp_points')", file=sys.stderr)
        return EXIT_INVALID
    rows = []
    ok = True
    for i, x in enumerate(pts):
        est = infinite_horizon_value(cfg.field, x, cfg.gamma, cfg.alpha, cfg.solver)
        rec = est.to_dict()
        rec["oracle"] = gradient_case_oracle(cfg.field, x, cfg.gamma, cfg.alpha) if _separable(cfg) else None
        rows.append(rec)
        ok &= est.converged
        with _open(cfg.output / f"qp_trajectory_{i}.csv") as fh:
            fh.write(est.trajectory_csv())
        orc = "" if rec["oracle"] is None else f"  oracle {rec['oracle']:.6g}"
        print(f"x={x.tolist()}  V={est.value:.6g}  impulses={est.n_impulses}{orc}"
              f"{'' if est.converged else '  NOT CONVERGED'}")
    _write_json(cfg.output / "qp.json", {"config": cfg.to_dict(), "values": rows})
    return EXIT_OK if ok else EXIT_FAILED


def _plot(path: Path, rep) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    d = rep.plot_data()
    fig, ax = plt.subplots(figsize=(5, 4))
    xs = [x for x, y in zip(d["log_n"], d["log_p_hat"]) if y is not None]
    ys = [y for y in d["log_p_hat"] if y is not None]
    ax.plot(xs, ys, "o", label="log p_hat")
    if d["fit"] is not None:
        ax.plot(d["log_n"], d["fit"], "-", label=f"slope {rep.slope:.3f}")
    ax.set_xlabel("log n")
    ax.set_ylabel("log P(X(T) in A)")
    ax.legend()
    fig.tight_layout()
    plt.rcParams["svg.hashsalt"] = "levy-ldp"
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def cmd_verify(cfg: ExperimentConfig, plot: bool = False) -> int:
    """Slope regression for every target: CSV, JSON and plot-data files."""
    if not cfg.targets:
        print("no targets configured", file=sys.stderr)
        return EXIT_INVALID
    ok = True
    for i, tgt in enumerate(cfg.targets):
        est = infinite_horizon_value(cfg.field, tgt.center, cfg.gamma, cfg.alpha, cfg.solver)
        oracle = gradient_case_oracle(cfg.field, tgt.center, cfg.gamma, cfg.alpha) if _separable(cfg) else None
        rep = ldp_slope(cfg.field, cfg.gamma, cfg.alpha, tgt, cfg.n_grid, cfg.T, cfg.h, cfg.trials,
                        RngStream(cfg.seed, 1 + i), cfg.workers, hits_target=cfg.hits_target,
                        budget=cfg.budget, V_solver=est.value, V_oracle=oracle)
        stem = cfg.output / f"verify_{i}"
        with _open(stem.with_suffix(".csv")) as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "trials", "hits", "p_hat", "ci_low", "ci_high"])
            for r in rep.records:
                d = r.to_dict()
                w.writerow([_fmt(d["n"]), d["trials"], d["hits"], _fmt(d["p_hat"]), _fmt(d["ci_low"]), _fmt(d["ci_high"])])
        body = rep.to_dict()
        body["verdicts"] = {"slope_fitted": rep.ok}
        _write_json(stem.with_suffix(".json"), body)
        pd = rep.plot_data()
        with _open(cfg.output / f"verify_{i}_plot.csv") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["log_n", "log_p_hat", "fit", "used"])
            for j, ln in enumerate(pd["log_n"]):
                lp = pd["log_p_hat"][j]
                ft = None if pd["fit"] is None else pd["fit"][j]
                w.writerow([_fmt(ln), "" if lp is None else _fmt(lp), "" if ft is None else _fmt(ft), int(pd["used"][j])])
        if plot:
            _plot(cfg.output / f"verify_{i}.svg", rep)
        s = "none" if rep.slope is None else f"{rep.slope:.4f} +- {rep.slope_stderr:.4f}"
        print(f"target {i}: slope {s}  V_solver {est.value:.4g}"
              + ("" if oracle is None else f"  V_oracle {oracle:.4g}"))
        ok &= rep.ok
    return EXIT_OK if ok else EXIT_FAILED


def _gradient_selftest(rng: np.random.Generator, instances: int = 10) -> float:
    from .dynamics import Potential

    worst = 0.0
    for _ in range(instances):
        p = int(rng.integers(1, 3))
        if rng.random() < 0.5:
            M = rng.normal(size=(p, p))
            fld = LinearField(-(M @ M.T + p * np.eye(p)))
        else:
            fld = SeparableGradientField([Potential(rng.uniform(0.5, 2), rng.uniform(0, 1), rng.uniform(1, 2)) for _ in range(p)])
        N = int(rng.integers(10, 30))
        k = int(rng.integers(0, p + 1))
        nodes = sorted(rng.choice(N + 1, size=k, replace=False).tolist())
        coords = rng.integers(0, p, size=k).tolist()
        obj = TranscriptionObjective(fld, N, 0.05, end=rng.normal(size=p), start=np.zeros(p),
                                     nodes=nodes, coords=coords, mu=float(rng.uniform(1, 100)))
        worst = max(worst, check_gradient(obj, rng.normal(size=obj.size)))
    return worst


def cmd_selftest(samples: int = 1_000_000, seed: int = 0) -> int:
    """Sampler statistics, adjoint gradients and oracle agreement on the OU field."""
    results = []
    for r in noise_self_tests(samples=samples, rng=RngStream(seed, 99)):
        results.append({"name": f"{r.test} alpha={r.alpha}", "value": r.statistic, "verdict": r.verdict})
    g = _gradient_selftest(np.random.default_rng(seed))
    results.append({"name": "adjoint gradient", "value": g, "verdict": "pass" if g <= 1e-4 else "fail"})
    ou = LinearField([[-1.0]])
    settings = SolverSettings()
    for x, gam in ((1.0, 5.0), (2.0, 0.5)):
        v = infinite_horizon_value(ou, [x], gam, 1.5, settings).value
        o = gradient_case_oracle(ou, [x], gam, 1.5)
        err = abs(v - o) / o
        results.append({"name": f"oracle x={x} gamma={gam}", "value": err, "verdict": "pass" if err <= 0.05 else "fail"})
    for r in results:
        print(f"{r['verdict']:>18}  {r['name']}  ({r['value']:.3g})")
    return EXIT_OK if all(r["verdict"] == "pass" for r in results) else EXIT_FAILED


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="levy-ldp", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="experiment configuration (JSON)")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--workers", type=int, help="override the worker count")
        p.add_argument("--out", help="override the output directory")

    p = sub.add_parser("simulate", help="simulate paths and record the driving noise")
    common(p)
    p.add_argument("--count", type=int, help="number of paths")
    p.add_argument("--no-noise", action="store_true", help="switch the noise off")

    p = sub.add_parser("qp", help="infinite-horizon rate function values")
    common(p)
    p.add_argument("--x", action="append", help="evaluation point, comma separated; repeatable")

    p = sub.add_parser("verify", help="Monte Carlo slope regression against log n")
    common(p)
    p.add_argument("--plot", action="store_true", help="also write SVG plots (needs matplotlib)")

    p = sub.add_parser("selftest", help="built-in statistical and numerical checks")
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "selftest":
            return cmd_selftest(args.samples, args.seed)
        cfg = load_config(args.config, seed=args.seed, workers=args.workers, output=args.out)
        if args.command == "simulate":
            if args.count is not None and args.count < 0:
                raise ConfigError("--count must be >= 0")
            return cmd_simulate(cfg, args.count, False if args.no_noise else None)
        if args.command == "qp":
            pts = None
            if args.x:
                try:
                    pts = [[float(v) for v in s.split(",")] for s in args.x]
                except ValueError:
                    raise ConfigError(f"--x: cannot parse {args.x!r}") from None
                if any(len(x) != cfg.dim for x in pts):
                    raise ConfigError(f"--x: points need {cfg.dim} coordinates")
            return cmd_qp(cfg, pts)
        return cmd_verify(cfg, args.plot)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
