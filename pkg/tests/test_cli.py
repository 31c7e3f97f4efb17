import json
import subprocess
import sys

import pytest

from invlab.cli import main, parse_n_grid
from invlab.errors import ValidationError


@pytest.fixture
def dataset(tmp_path):
    out = tmp_path / "data.csv"
    assert main(["simulate", "--model", "darcy", "--fixture", "bump", "--n", "1024",
                 "--sigma", "0.05", "--seed", "7", "--out", str(out)]) == 0
    return out


def test_simulate_is_byte_reproducible(tmp_path, dataset):
    again = tmp_path / "again.csv"
    main(["simulate", "--model", "darcy", "--fixture", "bump", "--n", "1024",
          "--sigma", "0.05", "--seed", "7", "--out", str(again)])
    assert again.read_bytes() == dataset.read_bytes()
    side = json.loads(dataset.with_suffix(".json").read_text())
    assert side["config"]["n"] == 1024 and side["seed"] == 7


def test_invalid_fixture_exit_code(tmp_path, capsys):
    assert main(["simulate", "--fixture", "nope", "--out", str(tmp_path / "x.csv")]) == 2
    assert "registry" in capsys.readouterr().err


def test_fit_plugin_reports_hyperparameters(tmp_path, dataset):
    report = tmp_path / "report.json"
    assert main(["fit", "--data", str(dataset), "--out", str(report),
                 "--dump-dir", str(tmp_path / "dump")]) == 0
    rep = json.loads(report.read_text())
    hp = rep["hyperparameters"]
    assert hp["lam"] == pytest.approx(1024 ** (-2 / 9))
    assert hp["mu"] == pytest.approx(1024 ** (-4 / 9))
    assert hp["nu"] == pytest.approx(1024 ** (-2 / 9))
    assert (tmp_path / "dump" / "f_hat.json").exists()


def test_fit_adaptive_and_joint(tmp_path, dataset):
    rep = tmp_path / "a.json"
    assert main(["fit", "--data", str(dataset), "--estimator", "adaptive", "--out", str(rep)]) == 0
    assert json.loads(rep.read_text())["beta_hat"] in (2, 3, 4)
    rep = tmp_path / "j.json"
    assert main(["fit", "--data", str(dataset), "--estimator", "joint", "--iters", "5",
                 "--out", str(rep)]) == 0
    trace = json.loads(rep.read_text())["objective_trace"]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(trace, trace[1:]))


def test_corrupted_dataset_exit_code(tmp_path, dataset):
    lines = dataset.read_text().splitlines()
    lines[5] = "0.5,not-a-number"
    dataset.write_text("\n".join(lines) + "\n")
    assert main(["fit", "--data", str(dataset), "--out", str(tmp_path / "r.json")]) == 2


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model": "darcy", "fixture": "smooth", "n": 64, "seed": 1}))
    out = tmp_path / "d.csv"
    assert main(["simulate", "--config", str(cfg), "--n", "80", "--out", str(out)]) == 0
    side = json.loads(out.with_suffix(".json").read_text())
    assert side["N"] == 80 and side["fixture"] == "smooth" and side["seed"] == 1
    cfg.write_text(json.dumps({"colour": "blue"}))
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 2


def test_numerical_failure_exit_code(tmp_path, monkeypatch):
    from invlab import cli
    from invlab.errors import NumericalError

    def fail(cfg):
        raise NumericalError("singular", condition=1e20)
    monkeypatch.setitem(cli.COMMANDS, "stability", fail)
    assert main(["stability", "--pairs", "1"]) == 3


def test_bench_runtime_and_rates(tmp_path):
    prefix = tmp_path / "rt"
    assert main(["bench", "runtime", "--n-grid", "4096:8192", "--out", str(prefix)]) == 0
    summary = json.loads(prefix.with_suffix(".json").read_text())
    assert summary["kappa"] == pytest.approx(1 + 2 / 9)
    assert prefix.with_suffix(".csv").read_text().startswith("N,p,flops,wall")
    # the rate benchmark rejects pre-registration violations
    assert main(["bench", "rates", "--n-grid", "512:1024", "--reps", "20",
                 "--out", str(tmp_path / "r")]) == 2


def test_mcmc_and_stability(tmp_path):
    prefix = tmp_path / "chain"
    assert main(["mcmc", "--dim", "3", "--steps", "50", "--n", "512", "--out", str(prefix)]) == 0
    summary = json.loads(prefix.with_suffix(".json").read_text())
    assert len(summary["posterior_mean"]) == 3 and len(summary["stderr"]) == 3
    assert prefix.with_suffix(".csv").read_text().startswith("# D=3,")
    out = tmp_path / "stab.csv"
    assert main(["stability", "--model", "schrodinger", "--pairs", "5", "--out", str(out)]) == 0
    assert out.read_text().splitlines()[0] == "seed,lhs,term_u,term_g,ratio"


def test_parse_n_grid():
    assert parse_n_grid("512:4096") == (512, 1024, 2048, 4096)
    assert parse_n_grid("10,20,40") == (10, 20, 40)
    for bad in ("500:4096", "a,b", "4096:512"):
        with pytest.raises(ValidationError):
            parse_n_grid(bad)


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "invlab", "simulate", "--fixture", "nope",
                           "--out", str(tmp_path / "x.csv")], capture_output=True, text=True)
    assert proc.returncode == 2
