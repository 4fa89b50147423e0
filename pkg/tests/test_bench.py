import csv
import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from tuckeraa.bench import ExperimentConfig, gaussian_rhs, main, poisson_grid


def write_config(tmp_path, **values):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(values))
    return str(path)


def read_csv(path):
    text = open(path, newline="").read()
    assert "\r" not in text
    lines = text.split("\n")
    assert lines[0].startswith("# config: ")
    config = json.loads(lines[0][len("# config: "):])
    rows = list(csv.reader(lines[1:]))
    rows = [r for r in rows if r]
    return config, rows[0], rows[1:]


SMALL = {
    "approx-fn": dict(n=12, functions=["X1", "X2"], ranks=[2, 4]),
    "helmholtz": dict(n=15, kappas=[1.0, 4.0], corner_start=3.0, corner_stop=2.8,
                      corner_step=0.1),
    "bratu": dict(n=10, precond=True),
    "allen-cahn": dict(n=8, steps=2, precond=True),
}


@pytest.mark.parametrize("experiment", sorted(SMALL))
def test_experiment_writes_csv(experiment, tmp_path):
    out = tmp_path / "out.csv"
    cfg = write_config(tmp_path, experiment=experiment, **SMALL[experiment])
    assert main(["--config", cfg, "--out", str(out)]) == 0
    config, header, rows = read_csv(out)
    assert config["experiment"] == experiment
    assert rows and all(len(r) == len(header) for r in rows)


def test_deterministic_for_fixed_seed(tmp_path):
    cfg = write_config(tmp_path, experiment="approx-fn", **SMALL["approx-fn"])
    outs = []
    for name in ("a.csv", "b.csv"):
        main(["--config", cfg, "--seed", "7", "--out", str(tmp_path / name)])
        config, header, rows = read_csv(tmp_path / name)
        config.pop("out")
        outs.append((config, header, rows))
    assert outs[0] == outs[1]


def test_approx_fn_columns(tmp_path):
    out = tmp_path / "out.csv"
    cfg = write_config(tmp_path, experiment="approx-fn", n=20, functions=["X1"], ranks=[19])
    assert main(["--config", cfg, "--out", str(out)]) == 0
    _, header, rows = read_csv(out)
    rec = dict(zip(header, rows[0]))
    assert float(rec["hosvd_err"]) < 1e-13
    assert int(rec["c2d_samples"]) > 0


def test_flags_override_config(tmp_path):
    out = tmp_path / "out.csv"
    cfg = write_config(tmp_path, experiment="bratu", n=12, precond=True, window=2)
    assert main(["--config", cfg, "--n", "8", "--window", "3", "--out", str(out)]) == 0
    config, _, _ = read_csv(out)
    assert config["n"] == 8 and config["window"] == 3 and config["precond"] is True


def test_poisson_bench_with_dense_validation(tmp_path):
    out = tmp_path / "out.csv"
    cfg = write_config(tmp_path, experiment="poisson-bench", levels=[7, 15], validate_dense=True)
    assert main(["--config", cfg, "--out", str(out)]) == 0
    _, header, rows = read_csv(out)
    rel = [float(dict(zip(header, r))["rel_err_dense"]) for r in rows]
    assert max(rel) <= 5e-5


def test_allen_cahn_slice(tmp_path):
    sl = tmp_path / "slice.csv"
    cfg = write_config(tmp_path, experiment="allen-cahn", n=8, steps=1, slice_out=str(sl))
    assert main(["--config", cfg, "--precond", "--out", str(tmp_path / "o.csv")]) == 0
    text = sl.read_text().split("\n")
    assert text[0].startswith("# config: ")
    x3 = float(text[1].split("=")[1])
    assert abs(x3 - np.pi / 2) <= np.pi / 8
    assert text[2] == "i1,i2,x1,x2,value"
    assert len([ln for ln in text[3:] if ln]) == 64


def test_exit_code_invariant_failure(tmp_path, capsys):
    cfg = write_config(tmp_path, experiment="bratu", n=8, max_iter=1, tol_rel=1e-12)
    assert main(["--config", cfg, "--out", str(tmp_path / "o.csv")]) == 1
    assert "invariant failed" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["--experiment", "nope"],
    ["--experiment", "bratu", "--theta", "1.5"],
    ["--experiment", "bratu", "--window", "0"],
    ["--experiment", "helmholtz", "--c2d-max-iters", "0"],
    ["--experiment", "allen-cahn", "--no-precond"],
    ["--n", "many"],
])
def test_exit_code_bad_arguments(argv):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 2


def test_exit_code_unknown_config_key(tmp_path):
    cfg = write_config(tmp_path, experiment="bratu", colour="red")
    with pytest.raises(SystemExit) as exc:
        main(["--config", cfg])
    assert exc.value.code == 2


def test_exit_code_memory_guard(tmp_path, capsys):
    cfg = write_config(tmp_path, experiment="poisson-bench", levels=[15, 200],
                       validate_dense=True)
    assert main(["--config", cfg, "--out", str(tmp_path / "o.csv")]) == 3
    assert "unknowns" in capsys.readouterr().err


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(experiment="helmholtz", kappas=[1.0, -2.0])
    assert json.loads(ExperimentConfig().to_json())["experiment"] == "approx-fn"


def test_poisson_rhs_grid():
    x, h = poisson_grid(9)
    assert np.isclose(h, 0.2) and np.isclose(x[0], -0.8) and np.isclose(x[-1], 0.8)
    F = gaussian_rhs(9, 3)
    xx = np.meshgrid(x, x, x, indexing="ij")
    rho2 = sum((xx[i] - (i + 1) / 100) ** 2 for i in range(3))
    assert np.allclose(F.full(), np.exp(-36 * rho2))


def test_console_script(tmp_path):
    exe = shutil.which("tuckeraa-bench")
    cmd = [exe] if exe else [sys.executable, "-m", "tuckeraa.bench"]
    res = subprocess.run(cmd + ["--experiment", "bratu", "--n", "6", "--precond"],
                         capture_output=True, text=True, timeout=120)
    assert res.returncode == 0, res.stderr
    assert res.stdout.startswith("# config: ")
