import numpy as np
import pytest

from delaysindy.dde_sim import HistorySegment, integrate
from delaysindy.features import DesignMatrix, Factor, Term
from delaysindy.sindy import (SparseModel, StlsConfig, format_model, model_from_json, model_to_json,
                              model_to_system, reconstruction_error, stls_fit)


def _design(columns, mask=None):
    q = columns.shape[1]
    terms = tuple(Term((Factor(0, 0, j + 1),)) for j in range(q))
    mask = np.ones(columns.shape[0], bool) if mask is None else mask
    return DesignMatrix(columns, terms, mask)


def _sparse_instance(rng, threshold=0.1):
    q = int(rng.integers(4, 13))
    m = 10 * q + int(rng.integers(0, 50))
    while True:
        a = rng.standard_normal((m, q))
        support = rng.random(q) < 0.4
        if not support.any():
            support[rng.integers(q)] = True
        if np.linalg.cond(a[:, support]) < 1e6:
            break
    xi = np.zeros(q)
    mag = rng.uniform(2 * threshold, 3.0, support.sum())
    xi[support] = mag * rng.choice([-1.0, 1.0], support.sum())
    return a, xi


def test_exact_support_recovery_rate():
    rng = np.random.default_rng(2024)
    hits = 0
    for _ in range(200):
        a, xi = _sparse_instance(rng)
        model = stls_fit(_design(a), a @ xi)
        hits += np.array_equal(model.coefficients[:, 0] != 0, xi != 0)
    assert hits >= 190


def test_zero_target_gives_zero_model():
    a = np.random.default_rng(0).standard_normal((50, 5))
    model = stls_fit(_design(a), np.zeros(50))
    assert not model.coefficients.any() and model.degenerate == ()


def test_single_column_target():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((80, 6))
    model = stls_fit(_design(a), 2.0 * a[:, 3], StlsConfig(threshold=0.5))
    expected = np.zeros(6)
    expected[3] = 2.0
    assert np.allclose(model.coefficients[:, 0], expected, atol=1e-12)
    assert model.fit_error <= 1e-10


def test_threshold_law_and_residual_bounds():
    rng = np.random.default_rng(7)
    for _ in range(30):
        a = rng.standard_normal((60, 8))
        y = rng.standard_normal((60, 2))
        cfg = StlsConfig(threshold=0.15)
        model = stls_fit(_design(a), y, cfg)
        nz = model.coefficients[model.coefficients != 0]
        assert np.all(np.abs(nz) >= cfg.threshold)
        full = np.linalg.norm(y - a @ np.linalg.lstsq(a, y, rcond=None)[0])
        assert full - 1e-12 <= model.fit_error <= np.linalg.norm(y) + 1e-12


def test_permutation_equivariance():
    rng = np.random.default_rng(3)
    a, xi = _sparse_instance(rng)
    y = a @ xi + 0.01 * rng.standard_normal(a.shape[0])
    perm = rng.permutation(a.shape[1])
    base = stls_fit(_design(a), y).coefficients[:, 0]
    permuted = stls_fit(_design(a[:, perm]), y).coefficients[:, 0]
    assert np.allclose(permuted, base[perm], atol=1e-12)


def test_degenerate_column_flagged():
    rng = np.random.default_rng(4)
    a = rng.standard_normal((40, 3))
    model = stls_fit(_design(a), 1e-3 * a[:, 0])
    assert model.degenerate == (0,) and not model.coefficients.any()


def test_masked_rows_ignored():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((60, 4))
    y = a[:, 1] * 1.5
    y[:10] = 1e6
    mask = np.arange(60) >= 10
    model = stls_fit(_design(a, mask), y)
    assert model.coefficients[1, 0] == pytest.approx(1.5, abs=1e-12)


def test_non_finite_rejected():
    a = np.ones((10, 2))
    a[3, 1] = np.nan
    with pytest.raises(FloatingPointError):
        stls_fit(_design(a), np.ones(10))


def test_reconstruction_error_definitions():
    rng = np.random.default_rng(6)
    a = rng.standard_normal((50, 5))
    y = rng.standard_normal((50, 1))
    d = _design(a)
    model = stls_fit(d, y)
    assert reconstruction_error(model, d, y) == pytest.approx(model.fit_error, rel=1e-13)
    zero = SparseModel(np.zeros((5, 1)), d.terms)
    assert reconstruction_error(zero, d, y) == pytest.approx(np.linalg.norm(y), rel=1e-14)


def test_logistic_fit_and_delay_preference(problem):
    p = problem("logistic_1.8")
    model = p.fit((1.0,))
    assert model.nonzero() == pytest.approx({"x(t)": 1.8, "x(t)·x(t-1.00)": -1.8}, abs=1e-2)
    assert p.objective((1.0,)) < p.objective((2.0,))


def test_sir_model_tracks_training_data(problem):
    p = problem("sir")
    model = p.fit((1.0,))
    lines = format_model(model).splitlines()
    assert lines[0] == "s'(t) = -3.000·s(t)·i(t)"
    sim = p.simulate_model(model)
    train = p.trajectory.times <= 10.0
    assert np.max(np.abs(sim.states[train] - p.trajectory.states[train][:, :2])) <= 1e-6


def test_mackey_glass_resimulation(problem):
    p = problem("mackey_glass_tau")
    model = p.fit((1.0,))
    sim = p.simulate_model(model)
    early = p.trajectory.times <= 17.0
    assert np.max(np.abs(sim.states[early, 0] - p.trajectory.states[early, 0])) <= 0.05


def test_format_two_delay(problem):
    model = problem("two_delay_coarse").fit((1.0, 0.5))
    assert format_model(model) == "x'(t) = -1.000·x(t-1.00)^2 - 0.500·x(t-0.50)^3"


def test_zero_model_format_and_simulation():
    terms = (Term(()), Term((Factor(0, 0, 1),)))
    zero = SparseModel(np.zeros((2, 1)), terms, (0.5,))
    assert format_model(zero, names=["x1"]) == "x1'(t) = 0"
    traj = integrate(model_to_system(zero), HistorySegment.constant([0.3], 0.5), 2.0, 1e-2)
    assert np.all(traj.states == 0.3)


def test_model_to_system_orders_slots():
    # slot 1 holds the longer delay; the system must still read it correctly
    terms = (Term((Factor(0, 1, 2),)), Term((Factor(0, 2, 3),)))
    model = SparseModel(np.array([[-1.0], [-0.5]]), terms, (1.0, 0.5))
    system = model_to_system(model)
    assert system.delays == (0.5, 1.0)
    xd = np.array([[1.0], [2.0]])  # t-0.5 -> 1, t-1 -> 2
    assert system.rhs(np.array([0.0]), xd, {})[0] == pytest.approx(-4.5)


def test_json_round_trip(problem):
    model = problem("mackey_glass_tau").fit((1.0,))
    back = model_from_json(model_to_json(model))
    assert np.array_equal(back.coefficients, model.coefficients)
    assert back.terms == model.terms and back.delays == model.delays
    assert format_model(back) == format_model(model)
