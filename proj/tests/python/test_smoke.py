import itertools
import os
from pathlib import Path

import numpy as np
import pytest

import mswqm

DATA = Path(os.environ.get("MSWQ_DATA_DIR", Path(__file__).resolve().parents[2] / "data")) / "three_node"


def load(**kw):
    return mswqm.Case(str(DATA / "network.toml"), str(DATA / "hydraulics.csv"), str(DATA / "scenario.toml"), **kw)


@pytest.fixture(scope="module")
def case():
    return load()


def test_case_dimensions(case):
    assert case.reaction == "M7"
    assert case.n_x == 204
    assert case.n_state == 2 * case.n_x
    assert case.n_steps == round(7200 / case.dt)
    assert len(case.output_labels) == 3


def test_simulation_is_finite_and_starts_at_the_initial_condition(case):
    y = case.simulate()
    assert y.shape == (3, case.n_steps + 1)
    assert np.isfinite(y).all()
    assert y[0, 0] == pytest.approx(0.5)
    # chlorine only decays without a booster dose
    assert y[:2].max() <= 0.5 + 1e-12


def test_booster_dose_raises_chlorine(case):
    assert case.simulate(dose=3000.0)[0, -1] > case.simulate()[0, -1]


def test_schemes_agree_at_the_sensors():
    implicit = load(scheme="implicit").simulate(dose=3000.0)
    explicit = load(scheme="explicit").simulate(dose=3000.0)
    # The explicit junction mixes the previous step's upstream values, so the
    # reservoir's initial chlorine shows up at J1 for exactly one step.
    assert implicit[0, 1] == pytest.approx(explicit[0, 1] - 0.5)
    assert np.abs(implicit[:, 2:] - explicit[:, 2:]).max() < 0.05


def test_full_rank_reduction_reproduces_the_reference(case):
    r = case.reduce(method="lpod", dose=3000.0)
    assert r["n_r"] == r["rank"]
    assert r["rmse"] < 1e-6
    assert r["reduced"].shape == r["reference"].shape


def test_mccormick_box_contains_the_product():
    env = mswqm.mccormick(0.2, 4.0, 0.0, 0.1)
    rng = np.random.default_rng(7)
    for x1, x2 in zip(rng.uniform(0.2, 4.0, 500), rng.uniform(0.0, 0.1, 500)):
        assert env.admits(x1, x2, x1 * x2, 1e-12)
    for x1, x2 in itertools.product((0.2, 4.0), (0.0, 0.1)):
        assert env.lower(x1, x2) == pytest.approx(x1 * x2)
        assert env.upper(x1, x2) == pytest.approx(x1 * x2)


def test_box_qp_matches_the_clipped_minimizer():
    P = np.diag([2.0, 4.0])
    q = np.array([-8.0, 2.0])
    r = mswqm.solve_qp(P, q, np.eye(2), np.array([0.0, 0.0]), np.array([3.0, 3.0]))
    assert r["status"] == "solved"
    np.testing.assert_allclose(r["x"], [3.0, 0.0], atol=1e-7)
    assert r["kkt"] < 1e-6


def test_routing():
    assert mswqm.route("M7", relaxed=True)[-1] == "mpc-mccormick"
    assert "linearize" in mswqm.route("M7")
    with pytest.raises(mswqm.OutOfScopeError, match="extension point"):
        mswqm.route("M8")
    with pytest.raises(NotImplementedError):
        mswqm.route("M5")


def test_validation_errors_surface_as_value_errors(case):
    with pytest.raises(ValueError, match="reduction method"):
        case.reduce(method="svd")
    with pytest.raises(mswqm.ValidationError):
        load(scheme="sideways")


def test_single_species_control_keeps_chlorine_in_bounds():
    r = load(single_species=True).control()
    assert r["controller"] == "linear"
    assert r["held"] == 0
    assert r["worst_kkt"] < 1e-6
    y1 = r["outputs"][:2, round(600 / 5.0):]
    assert y1.min() >= 0.2 - 1e-6
    assert y1.max() <= 4.0
    assert (r["doses_mg_per_min"] >= 0.0).all()
