"""Experiment configuration: JSON file, schema validation, object construction."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from .dynamics import DriftField, LinearField, PolynomialField, Potential, SeparableGradientField
from .rates import InitialRate
from .transcription import SolverSettings
from .verify import Ball, Box, TargetSet

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "schema"]


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


def schema() -> dict:
    return json.loads(resources.files(__package__).joinpath("config_schema.json").read_text())


def _key_path(err: jsonschema.ValidationError) -> str:
    path = "/".join(str(p) for p in err.absolute_path)
    return path or "<root>"


def _most_specific(err: jsonschema.ValidationError) -> jsonschema.ValidationError:
    """Descend through ``oneOf`` failures into the branch that matched best.

    A branch whose discriminator (``const``/``enum``) or top-level ``type``
    failed is not the one the user meant; among the others the first error
    is reported.
    """
    while err.context:
        branches: dict = {}
        for e in err.context:
            branches.setdefault(e.relative_schema_path[0], []).append(e)

        def mismatched(errs):
            return any(e.validator in ("const", "enum") or (e.validator == "type" and not e.relative_path)
                       for e in errs)

        plausible = [errs for _, errs in sorted(branches.items()) if not mismatched(errs)]
        pool = plausible[0] if plausible else min(branches.values(), key=len)
        err = pool[0]
    return err


def _validate(raw: dict) -> None:
    validator = jsonschema.Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(raw), key=lambda e: [str(p) for p in e.absolute_path])
    if errors:
        err = _most_specific(errors[0])
        raise ConfigError(f"config key '{_key_path(err)}': {err.message}")


def _build_field(d: dict) -> DriftField:
    fam = d["family"]
    if fam == "linear-hurwitz":
        return LinearField(d["matrix"])
    if fam == "separable-gradient":
        pots = []
        for p in d["potentials"]:
            if p["kind"] == "quadratic":
                pots.append(Potential.quadratic(p["k"]))
            else:
                pots.append(Potential.saturated_quartic(p["k2"], p["k4"], p["box"]))
        return SeparableGradientField(pots)
    terms = [(t["powers"], t["coef"]) for t in d["terms"]]
    return PolynomialField(d["dim"], terms, d["lipschitz"])


def _build_target(d: dict) -> TargetSet:
    if d["kind"] == "ball":
        return Ball(d["center"], d["radius"])
    return Box(d["lower"], d["upper"])


@dataclass
class ExperimentConfig:
    """Validated experiment description.

    ``raw`` is the dictionary as loaded (after flag overrides); the
    remaining attributes are the constructed objects.  ``to_dict`` returns
    ``raw`` so a config round-trips through JSON unchanged.
    """

    raw: dict
    field: DriftField
    alpha: float
    gamma: float | tuple[float, ...]
    initial: InitialRate
    n_grid: list[float]
    T: float
    h: float
    x0: np.ndarray
    targets: list[TargetSet]
    trials: Any
    hits_target: int
    budget: int
    seed: int
    workers: int
    output: Path
    qp_points: list[np.ndarray]
    solver: SolverSettings
    simulate: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.field.dim

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        _validate(raw)
        try:
            fld = _build_field(raw["field"])
        except ValueError as e:
            raise ConfigError(f"config key 'field': {e}") from None
        p = fld.dim
        gamma = raw["gamma"]
        if isinstance(gamma, list):
            if len(gamma) != p:
                raise ConfigError(f"config key 'gamma': expected {p} values, got {len(gamma)}")
            gamma = tuple(float(g) for g in gamma)
        else:
            gamma = float(gamma)
        try:
            init = raw.get("initial", {"kind": "point-mass"})
            initial = InitialRate(init["kind"], init.get("Q"))
            if initial.kind == "quadratic" and initial.Q.shape[0] != p:
                raise ValueError(f"Q must be {p}x{p}")
        except (ValueError, TypeError) as e:
            raise ConfigError(f"config key 'initial': {e}") from None
        x0 = np.asarray(raw.get("x0", [0.0] * p), dtype=float)
        if x0.shape != (p,):
            raise ConfigError(f"config key 'x0': expected {p} values")
        targets = []
        for i, t in enumerate(raw.get("targets", [])):
            try:
                tgt = _build_target(t)
            except ValueError as e:
                raise ConfigError(f"config key 'targets/{i}': {e}") from None
            if tgt.center.shape[0] != p:
                raise ConfigError(f"config key 'targets/{i}': dimension differs from the field's {p}")
            targets.append(tgt)
        pts = [np.asarray(x, dtype=float) for x in raw.get("qp_points", [])]
        for i, x in enumerate(pts):
            if x.shape != (p,):
                raise ConfigError(f"config key 'qp_points/{i}': expected {p} values")
        n_grid = [float(n) for n in raw.get("n_grid", [16, 64, 256, 1024, 4096])]
        trials = raw.get("trials", "auto")
        if isinstance(trials, list) and len(trials) != len(n_grid):
            raise ConfigError("config key 'trials': one count per n_grid entry")
        try:
            solver = replace(SolverSettings(), **raw.get("solver", {}))
        except ValueError as e:
            raise ConfigError(f"config key 'solver': {e}") from None
        return cls(
            raw=raw,
            field=fld,
            alpha=float(raw["alpha"]),
            gamma=gamma,
            initial=initial,
            n_grid=n_grid,
            T=float(raw.get("T", 6.0)),
            h=float(raw.get("h", 0.01)),
            x0=x0,
            targets=targets,
            trials=trials,
            hits_target=int(raw.get("hits_target", 100)),
            budget=int(raw.get("budget", 10_000_000)),
            seed=int(raw.get("seed", 0)),
            workers=int(raw.get("workers", 1)),
            output=Path(raw.get("output", "out")),
            qp_points=pts,
            solver=solver,
            simulate=dict(raw.get("simulate", {})),
        )

    def to_dict(self) -> dict:
        return json.loads(json.dumps(self.raw))

    def to_json(self) -> str:
        return json.dumps(self.raw, sort_keys=True, indent=2)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        raw = self.to_dict()
        raw.update({k: v for k, v in kw.items() if v is not None})
        return ExperimentConfig.from_dict(raw)


def load_config(path: str | Path, **overrides) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e.msg} at line {e.lineno})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_dict(raw)
