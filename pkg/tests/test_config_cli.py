import csv
import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from levy_ldp.cli import EXIT_FAILED, EXIT_INVALID, EXIT_OK, main
from levy_ldp.config import ConfigError, ExperimentConfig, load_config
from levy_ldp.dynamics import LinearField, flow

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

BASE = {
    "field": {"family": "linear-hurwitz", "matrix": [[-1.0]]},
    "alpha": 1.5,
    "gamma": 5.0,
    "n_grid": [16, 64, 256, 1024],
    "T": 2.0,
    "h": 0.02,
    "targets": [{"kind": "ball", "center": [0.0], "radius": 1.0}],
    "trials": 1000,
    "qp_points": [[0.0], [1.0]],
    "seed": 3,
    "simulate": {"n": 64, "count": 2},
}


def _write(tmp_path, raw, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(raw))
    return p


def test_shipped_configs_load():
    for p in sorted(CONFIGS.glob("*.json")):
        cfg = load_config(p)
        assert cfg.alpha == 1.5


def test_roundtrip_lossless(tmp_path):
    cfg = ExperimentConfig.from_dict(json.loads(json.dumps(BASE)))
    again = ExperimentConfig.from_dict(json.loads(cfg.to_json()))
    assert again.to_dict() == cfg.to_dict() == BASE
    assert again.field == cfg.field


def test_overrides(tmp_path):
    cfg = load_config(_write(tmp_path, BASE), seed=9, workers=2, output=str(tmp_path / "o"))
    assert (cfg.seed, cfg.workers, cfg.output) == (9, 2, tmp_path / "o")
    assert cfg.with_overrides(seed=11).seed == 11


@pytest.mark.parametrize(
    "mutate,key",
    [
        (lambda r: r.update(alpha=2.0), "alpha"),
        (lambda r: r.update(gamma=-1.0), "gamma"),
        (lambda r: r["field"].pop("matrix") and r["field"].update(matrx=[[-1.0]]), "field"),
        (lambda r: r.update(n_grid=[16, 64]), "n_grid"),
        (lambda r: r.update(trials=10), "trials"),
        (lambda r: r.update(colour="red"), "<root>"),
        (lambda r: r["targets"][0].update(radius=0), "targets/0/radius"),
        (lambda r: r.update(field={"family": "linear-hurwitz", "matrix": [[1.0]]}), "field"),
        (lambda r: r.update(gamma=[1.0, 2.0]), "gamma"),
        (lambda r: r.update(x0=[0.0, 0.0]), "x0"),
    ],
)
def test_invalid_config_names_key(tmp_path, mutate, key):
    raw = json.loads(json.dumps(BASE))
    mutate(raw)
    with pytest.raises(ConfigError) as e:
        load_config(_write(tmp_path, raw))
    assert f"'{key}" in str(e.value)


def test_corrupted_file_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text("{ not json")
    assert main(["qp", str(p)]) == EXIT_INVALID
    raw = dict(BASE, alpha=2.5)
    assert main(["qp", str(_write(tmp_path, raw))]) == EXIT_INVALID
    assert "config key 'alpha'" in capsys.readouterr().err


def test_simulate_header_and_zero_noise(tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", str(_write(tmp_path, BASE)), "--out", str(out), "--count", "1", "--no-noise"]) == EXIT_OK
    with open(out / "paths.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["run_id", "t", "x1"]
    xs = np.array([float(r[2]) for r in rows[1:]])
    ref = flow(LinearField([[-1.0]]), [0.0], 2.0, 0.02, method="euler").states[:, 0]
    np.testing.assert_array_equal(xs, ref)
    with open(out / "noise.csv") as fh:
        assert next(csv.reader(fh)) == ["run_id", "step", "dW1", "dL1"]


def test_simulate_zero_count(tmp_path):
    out = tmp_path / "sim0"
    assert main(["simulate", str(_write(tmp_path, BASE)), "--out", str(out), "--count", "0"]) == EXIT_OK
    assert (out / "paths.csv").read_text() == "run_id,t,x1\n"


def test_simulate_deterministic(tmp_path):
    cfg = _write(tmp_path, BASE)
    for d in ("a", "b"):
        assert main(["simulate", str(cfg), "--out", str(tmp_path / d)]) == EXIT_OK
    for name in ("paths.csv", "noise.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert main(["simulate", str(cfg), "--out", str(tmp_path / "c"), "--seed", "4"]) == EXIT_OK
    assert (tmp_path / "a" / "paths.csv").read_bytes() != (tmp_path / "c" / "paths.csv").read_bytes()


def test_qp_outputs(tmp_path):
    raw = dict(BASE, gamma=0.5, qp_points=[[0.0], [1.0], [2.0], [3.0]])
    out = tmp_path / "qp"
    assert main(["qp", str(_write(tmp_path, raw)), "--out", str(out)]) == EXIT_OK
    vals = json.loads((out / "qp.json").read_text())["values"]
    v = [r["value"] for r in vals]
    assert v[0] == 0.0
    assert v[2] == pytest.approx(0.75, rel=0.02) and v[3] == pytest.approx(0.75, rel=0.02)
    assert all(x <= 0.75 + 5e-3 for x in v)
    assert [r["oracle"] for r in vals] == pytest.approx([0.0, 0.75, 0.75, 0.75])
    assert (out / "qp_trajectory_3.csv").read_text().startswith("t,y1,u1,impulse\n")


def test_qp_flag_points(tmp_path):
    out = tmp_path / "qpx"
    assert main(["qp", str(_write(tmp_path, BASE)), "--out", str(out), "--x", "1.0"]) == EXIT_OK
    vals = json.loads((out / "qp.json").read_text())["values"]
    assert len(vals) == 1 and vals[0]["value"] == pytest.approx(1.0, rel=0.02)
    assert main(["qp", str(_write(tmp_path, BASE)), "--x", "1,2"]) == EXIT_INVALID


def test_qp_byte_identical(tmp_path):
    cfg = _write(tmp_path, dict(BASE, qp_points=[[1.0]]))
    out = tmp_path / "qp"
    runs = []
    for _ in range(2):
        assert main(["qp", str(cfg), "--out", str(out)]) == EXIT_OK
        runs.append(((out / "qp.json").read_bytes(), (out / "qp_trajectory_0.csv").read_bytes()))
    assert runs[0] == runs[1]


def test_verify_equilibrium_target(tmp_path):
    out = tmp_path / "ver"
    cfg = _write(tmp_path, dict(BASE, T=6.0, trials=2000, n_grid=[16, 64, 256, 1024, 4096]))
    assert main(["verify", str(cfg), "--out", str(out)]) == EXIT_OK
    rep = json.loads((out / "verify_0.json").read_text())
    assert -0.1 <= rep["slope"] <= 0.05
    assert rep["verdicts"]["slope_fitted"] is True
    with open(out / "verify_0.csv") as fh:
        assert next(csv.reader(fh)) == ["n", "trials", "hits", "p_hat", "ci_low", "ci_high"]
    with open(out / "verify_0_plot.csv") as fh:
        assert next(csv.reader(fh)) == ["log_n", "log_p_hat", "fit", "used"]
    # rerun: byte-identical, also with a different worker count
    again = tmp_path / "ver2"
    assert main(["verify", str(cfg), "--out", str(again), "--workers", "2"]) == EXIT_OK
    assert (out / "verify_0.csv").read_bytes() == (again / "verify_0.csv").read_bytes()


def test_verify_plot(tmp_path):
    pytest.importorskip("matplotlib")
    out = tmp_path / "plot"
    assert main(["verify", str(_write(tmp_path, BASE)), "--out", str(out), "--plot"]) == EXIT_OK
    assert (out / "verify_0.svg").read_text().lstrip().startswith("<?xml")


def test_verify_without_slope_fails(tmp_path):
    raw = dict(BASE, targets=[{"kind": "ball", "center": [3.0], "radius": 0.01}])
    with pytest.warns(RuntimeWarning):
        code = main(["verify", str(_write(tmp_path, raw)), "--out", str(tmp_path / "v")])
    assert code == EXIT_FAILED


def test_selftest_small(capsys):
    # too few samples for the statistical checks: reported, not passed
    assert main(["selftest", "--samples", "10"]) == EXIT_FAILED
    assert "insufficient power" in capsys.readouterr().out


@pytest.mark.slow
def test_selftest_default():
    assert main(["selftest"]) == EXIT_OK
