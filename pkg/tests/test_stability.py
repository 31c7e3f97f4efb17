import csv
import io
import math

import numpy as np
import pytest

from invlab import pde
from invlab.errors import NumericalError, ValidationError
from invlab.estimators import derive_hyperparams, fit_regression
from invlab.frame import cached_frame, design_matrix
from invlab.harness import simulate
from invlab.numerics import Grid, GridField
from invlab.stability import (StabilityReport, Triplet, check_suite, darcy_pair,
                              darcy_stability_gap, discrepancy_tau, forward_bounds,
                              schrodinger_pair, schrodinger_potential,
                              schrodinger_stability_gap, smooth_perturbation,
                              stability_suite, suite_to_csv)

GRID = Grid(1, 127)


def darcy_triplet(f, g):
    u = pde.darcy_solve(pde.DarcyProblem(f, g))
    return Triplet(u, f, g.interior_only())


def test_identical_triplets_give_zero():
    t = darcy_triplet(GRID.field(2.0), GRID.field(1.0))
    rep = darcy_stability_gap(t, t, 1.0, 1.0)
    assert (rep.lhs, rep.term_u, rep.term_g, rep.ratio) == (0.0, 0.0, 0.0, 0.0)
    t1, _ = schrodinger_pair(GRID, 0, exact=True)
    rep = schrodinger_stability_gap(t1, t1, 0.5)
    assert (rep.lhs, rep.term_u, rep.term_g, rep.ratio) == (0.0, 0.0, 0.0, 0.0)


def test_ratio_conventions():
    assert StabilityReport(1.0, 0.0, 0.0).ratio == math.inf
    assert StabilityReport(1.0, 1.0, 1.0).ratio == 0.5


def test_darcy_gap_is_linear_to_first_order():
    f1, g = GRID.field(2.0), GRID.field(1.0)
    t1 = darcy_triplet(f1, g)
    h = GRID.field(lambda x: np.sin(3 * x) + x**2)
    reps = []
    for t in (1e-3, 2e-3):
        f2 = f1 + t * h
        u2 = pde.darcy_solve(pde.DarcyProblem(f2, g))
        reps.append(darcy_stability_gap(t1, Triplet(u2, f2, g.interior_only()), 1.0, 1.0))
    assert reps[1].lhs / reps[0].lhs == pytest.approx(2.0, rel=1e-12)
    assert reps[1].term_u / reps[0].term_u == pytest.approx(2.0, rel=1e-2)
    assert reps[0].term_g <= 1e-6 * reps[0].term_u


def test_darcy_hypotheses_checked_on_reference_triplet_only():
    good = darcy_triplet(GRID.field(2.0), GRID.field(1.0))
    low = darcy_triplet(GRID.field(0.5), GRID.field(1.0))
    # the second triplet may violate ellipticity at f_min = 1
    darcy_stability_gap(good, low, 1.0, 1.0)
    with pytest.raises(ValidationError, match="ellipticity"):
        darcy_stability_gap(low, good, 1.0, 1.0)
    weak = darcy_triplet(GRID.field(2.0), GRID.field(0.5))
    with pytest.raises(ValidationError, match="source"):
        darcy_stability_gap(weak, good, 1.0, 1.0)
    shifted = Triplet(good.u + 1.0, good.f, good.g)
    with pytest.raises(ValidationError, match="boundary"):
        darcy_stability_gap(shifted, good, 1.0, 1.0)
    wrong = Triplet(good.u, good.f, good.g * 1.1)
    with pytest.raises(ValidationError, match="PDE relation"):
        darcy_stability_gap(good, wrong, 1.0, 1.0)
    with pytest.raises(ValidationError):
        darcy_stability_gap(good, darcy_triplet(Grid(1, 63).field(2.0), Grid(1, 63).field(1.0)),
                            1.0, 1.0)


def test_schrodinger_potential_identity():
    t1, t2 = schrodinger_pair(GRID, 4)
    for t in (t1, t2):
        f = schrodinger_potential(t.u, t.g)
        inner = GRID.interior
        assert np.max(np.abs(f.values[inner] - t.f.values[inner])) <= 1e-8


def test_schrodinger_positivity_checked():
    t1, t2 = schrodinger_pair(GRID, 1)
    with pytest.raises(ValidationError, match="positivity"):
        schrodinger_stability_gap(t1, t2, c_min=10.0)
    rep = schrodinger_stability_gap(t1, t2, 0.5)
    assert rep.lhs > 0 and rep.term_u > 0 and rep.term_g > 0


def test_exact_pairs_reduce_to_classical_form():
    for seed in range(5):
        rep = darcy_stability_gap(*darcy_pair(GRID, seed, exact=True), 1.0, 1.0)
        assert rep.term_g <= 1e-6 * rep.term_u
        rep = schrodinger_stability_gap(*schrodinger_pair(GRID, seed, exact=True), 0.5)
        assert rep.term_g <= 1e-6 * rep.term_u


def test_perturbation_is_grid_consistent_and_scaled():
    rng = np.random.default_rng(0)
    coarse = smooth_perturbation(Grid(1, 127), np.random.default_rng(5), 0.3)
    fine = smooth_perturbation(Grid(1, 255), np.random.default_rng(5), 0.3)
    assert np.allclose(coarse.values, fine.values[::2], atol=1e-13)
    # the scaling uses reference nodes, so the continuum C1 norm is at least 0.3
    fine = Grid(1, 16383)
    h = smooth_perturbation(fine, rng, 0.3)
    grad = np.gradient(h.values, fine.h, edge_order=2)
    c1 = max(np.abs(h.values).max(), np.abs(grad).max())
    assert 0.3 * (1 - 1e-6) <= c1 <= 0.3 * 1.05
    b = smooth_perturbation(GRID, rng, 0.3, zero_boundary=True)
    assert b.values[0] == 0 and b.values[-1] == 0


def test_suites_are_bounded_and_serialize():
    for model in ("darcy", "schrodinger"):
        rows = stability_suite(model, pairs=20, n=127)
        cmax = check_suite(rows)
        assert np.isfinite(cmax) and cmax > 0
        parsed = list(csv.DictReader(io.StringIO(suite_to_csv(rows))))
        assert list(parsed[0]) == ["seed", "lhs", "term_u", "term_g", "ratio"]
        assert float(parsed[3]["ratio"]) == rows[3]["ratio"]


def test_two_dimensional_suite_runs():
    rows = stability_suite("darcy", pairs=3, n=31, d=2)
    assert all(np.isfinite(r["ratio"]) for r in rows)


def test_check_suite_flags_outliers():
    rows = [{"seed": i, "ratio": 1.0} for i in range(5)] + [{"seed": 5, "ratio": 50.0}]
    with pytest.raises(NumericalError):
        check_suite(rows)
    with pytest.raises(NumericalError):
        check_suite([{"seed": 0, "ratio": math.inf}])
    with pytest.raises(ValidationError):
        stability_suite("heat", pairs=1)


def test_forward_bounds_scale_with_data():
    a = forward_bounds("darcy", GRID.field(2.0), GRID.field(1.0))
    b = forward_bounds("darcy", GRID.field(2.0), GRID.field(3.0))
    assert b["u_H2"] == pytest.approx(3 * a["u_H2"], rel=1e-10)
    s = forward_bounds("schrodinger", GRID.field(1.0), GRID.field(1.0))
    assert all(np.isfinite(v) for v in s.values())


def test_discrepancy_functional():
    data = simulate("darcy", "smooth", 300, 0.05, seed=2)
    u0 = lambda X: np.sin(X[:, 0])
    assert discrepancy_tau(u0, 0.0, data, u0=u0) == 0.0
    u = GRID.field(lambda x: x * (1 - x))
    assert discrepancy_tau(u, 0.7, data) == pytest.approx(discrepancy_tau(u, 0.2, data) + 0.5,
                                                          abs=1e-15)
    with pytest.raises(ValidationError):
        discrepancy_tau(u, -1.0, data)
    with pytest.raises(ValidationError):
        discrepancy_tau(np.zeros(3), 0.0, data)


def test_discrepancy_matches_regression_objective():
    data = simulate("darcy", "smooth", 500, 0.05, seed=3)
    hp = derive_hyperparams("darcy", 500, 3)
    frame = cached_frame(Grid(1, 255), hp.J)
    fit = fit_regression(data, frame, hp)
    fitted = design_matrix(frame, data.X) @ fit.eta_hat.entries
    tau = discrepancy_tau(fitted, hp.mu**2 * fit.penalty, data)
    assert tau == pytest.approx(fit.objective, rel=1e-12)
