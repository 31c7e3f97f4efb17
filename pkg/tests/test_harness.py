import csv
import io
import json

import numpy as np
import pytest

from invlab import harness
from invlab.errors import ValidationError
from invlab.estimators import derive_hyperparams, fit_report, plugin_estimate
from invlab.fixtures import check_constraints, fixture_names, get_fixture, ground_truths
from invlab.harness import (RateConfig, fit_slope, forward_truth, rate_benchmark,
                            runtime_benchmark, simulate, task_seed, theoretical_slopes)
from invlab.numerics import Grid


def test_simulate_noiseless_and_deterministic():
    ds = simulate("darcy", "bump", 500, 0.0, seed=3)
    u0, _, _ = forward_truth("darcy", "bump", ds.fine_n)
    assert np.array_equal(ds.Y, u0.at(ds.X))
    a = simulate("darcy", "bump", 500, 0.05, seed=3)
    b = simulate("darcy", "bump", 500, 0.05, seed=3)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.Y, b.Y)
    assert np.all((a.X > 0) & (a.X < 1))


def test_simulated_noise_mean_is_clt_consistent():
    N, sigma = 100_000, 0.05
    ds = simulate("darcy", "smooth", N, sigma, seed=11)
    u0, _, _ = forward_truth("darcy", "smooth", ds.fine_n)
    eps_mean = np.mean(ds.Y - u0.at(ds.X))
    assert abs(eps_mean) <= 3 * sigma / np.sqrt(N)


def test_simulate_two_dimensional_and_validation():
    ds = simulate("schrodinger", "smooth2d", 200, 0.05, seed=0)
    assert ds.X.shape == (200, 2)
    with pytest.raises(ValidationError, match="4x"):
        simulate("darcy", "bump", 100, fine_n=511)
    with pytest.raises(ValidationError, match="registry"):
        simulate("darcy", "nope", 100)
    with pytest.raises(ValidationError):
        simulate("darcy", "bump", 0)


def test_fixtures_registry():
    f0, g = ground_truths("darcy", "constant")
    assert f0.min() == 2.0
    f0, _ = ground_truths("darcy", "bump")
    assert f0.min() == pytest.approx(1 + 0.5 * np.exp(-12.5), rel=1e-15)
    assert f0.min() == pytest.approx(1.0000019, abs=1e-7)
    for name in fixture_names():
        model, fx = name.split(":")
        ground_truths(model, fx)
        assert get_fixture(model, fx).f_min <= ground_truths(model, fx)[0].min() + 1e-12
    grid = Grid(1, 63)
    with pytest.raises(ValidationError):
        check_constraints("darcy", grid.field(-1.0), grid.field(1.0))
    with pytest.raises(ValidationError):
        check_constraints("schrodinger", grid.field(-0.1), grid.field(1.0))
    with pytest.raises(ValidationError):
        check_constraints("schrodinger", grid.field(1.0), grid.field(0.0))


def test_theoretical_slopes():
    th = theoretical_slopes("darcy", 3, 1)
    assert th["forward"] == pytest.approx(-8 / 9)
    assert th["inverse"] == pytest.approx(-4 / 9)
    assert th["kappa"] == pytest.approx(1 + 2 / 9)
    assert theoretical_slopes("darcy", 3, 2)["kappa"] == pytest.approx(1 + 4 / 10)
    sch = theoretical_slopes("schrodinger", 2, 1)
    assert sch["forward"] == pytest.approx(-8 / 9)
    assert sch["inverse"] == pytest.approx(-4 / 9)


def test_fit_slope_on_exact_power_law():
    x = 2.0 ** np.arange(9, 15)
    fit = fit_slope(x, 3.0 * x ** -0.7)
    assert fit.slope == pytest.approx(-0.7, abs=1e-12)
    assert fit.r2 == pytest.approx(1.0) and fit.conclusive
    noisy = fit_slope(x, np.array([1, 3, 1, 3, 1, 3.0]))
    assert not noisy.conclusive


def test_rate_config_validation():
    with pytest.raises(ValidationError, match="octaves"):
        RateConfig(N_grid=(512, 1024, 2048)).validate()
    with pytest.raises(ValidationError, match="replications"):
        RateConfig(reps=5).validate()
    with pytest.raises(ValidationError, match="increasing"):
        RateConfig(N_grid=(512, 512, 1024, 4096)).validate()
    with pytest.raises(ValidationError, match="4x"):
        RateConfig(fine_n=511).validate()
    RateConfig().validate()


def test_task_seeds_distinct_and_stable():
    seeds = {task_seed(0, N, r) for N in (512, 1024) for r in range(20)}
    assert len(seeds) == 40
    assert task_seed(0, 512, 3) == task_seed(0, 512, 3)


def test_noiseless_rate_run_decreases():
    cfg = RateConfig("darcy", "bump", (512, 2048, 8192), reps=1, sigma=0.0)
    table = rate_benchmark(cfg, strict=False)
    mse_u = [r.mse_u for r in table.rows]
    mse_f = [r.mse_f for r in table.rows]
    assert all(b < a for a, b in zip(mse_u, mse_u[1:]))
    assert all(b < a for a, b in zip(mse_f, mse_f[1:]))


def test_rate_table_outputs_and_parallel_determinism():
    cfg = RateConfig("darcy", "bump", (512, 1024), reps=2, sigma=0.05, seed=1)
    serial = rate_benchmark(cfg, strict=False)
    parallel = rate_benchmark(RateConfig(**{**cfg.__dict__, "jobs": 2}), strict=False)
    assert serial.to_csv() == parallel.to_csv()
    rows = list(csv.reader(io.StringIO(serial.to_csv())))
    assert tuple(rows[0]) == harness.RateTable.COLUMNS
    assert [int(r[0]) for r in rows[1:]] == [512, 1024]
    summary = json.loads(serial.to_json())
    assert summary["theory"]["forward"] == pytest.approx(-8 / 9)
    assert set(summary["forward"]) == {"slope", "stderr", "r2", "intercept", "conclusive"}


def test_replication_failure_names_seed(monkeypatch):
    def boom(cfg, N, seed):
        raise FloatingPointError("bad")
    monkeypatch.setattr(harness, "_errors", boom)
    with pytest.raises(RuntimeError, match=f"seed={task_seed(0, 512, 0)}"):
        rate_benchmark(RateConfig(N_grid=(512, 1024), reps=1), strict=False)


def test_runtime_benchmark_flops_deterministic():
    cfg = RateConfig("darcy", "bump", (4096, 8192), reps=1)
    a, b = runtime_benchmark(cfg), runtime_benchmark(cfg)
    assert [r[2] for r in a.rows] == [r[2] for r in b.rows]
    assert a.kappa == pytest.approx(1 + 2 / 9)
    assert "N,p,flops,wall" in a.to_csv()


def test_full_pipeline_bit_reproducible():
    reports = []
    for _ in range(2):
        ds = simulate("darcy", "bump", 1024, 0.05, seed=9)
        hp = derive_hyperparams("darcy", 1024, 3)
        _, g = get_fixture("darcy", "bump").fields(Grid(1, 255))
        reg, inv = plugin_estimate(ds, g, hp)
        reports.append((reg.eta_hat.entries.tobytes(), inv.theta_hat.entries.tobytes(),
                        json.dumps({k: v for k, v in fit_report(hp, reg, inv, 9).items()
                                    if k != "regression" and k != "inversion"})))
    assert reports[0] == reports[1]
