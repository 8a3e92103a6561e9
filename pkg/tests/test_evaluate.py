import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from markedhawkes.errors import NonFiniteError, PreconditionError, SimulationError
from markedhawkes.evaluate import (
    KernelGrid,
    decay_scale,
    default_ranges,
    kernel_grid,
    ks_uniform,
    pit_values,
    predict,
    qq_curve,
    qq_pairs,
)
from markedhawkes.model import EventSequence, HawkesModel, KernelNet, Link
from markedhawkes.simulate import (
    ExpSum,
    ExpTimesMark,
    Exponential,
    GeneratorSpec,
    ThinningConfig,
    coupled_1d_spec,
    decoupled_2d_spec,
    simulate,
)

import oracles


def zero_model(mu, dims=1):
    k = KernelNet(np.zeros(1), np.zeros(1), np.zeros(1), np.zeros(1), 0.0, Link.IDENTITY)
    return HawkesModel.from_kernels([mu] * dims, [[k] * dims] * dims,
                                    mark_densities=(Exponential(1.0),) * dims)


def poisson_spec(rate):
    return GeneratorSpec((rate,), ((ExpSum((0.0,), (1.0,)),),), (Exponential(1.0),))


# -- PIT ---------------------------------------------------------------------


def test_unit_rate_ln2_gives_half():
    seq = EventSequence.from_arrays([math.log(2)], [0], [1.0], horizon=1.0)
    assert pit_values(zero_model(1.0), seq)[0] == pytest.approx(0.5, rel=1e-14)
    assert pit_values(poisson_spec(1.0), seq)[0] == pytest.approx(0.5, rel=1e-14)


def test_true_generator_pit_is_uniform():
    spec = coupled_1d_spec()
    seq = simulate(spec, 1300.0, seed=21)
    assert len(seq) >= 1000
    u = pit_values(spec, seq)
    assert ks_uniform(u).statistic < 0.061


def test_misspecified_rate_shifts_pit():
    # u = 1 - exp(-a tau) with tau ~ Exp(b) has mean a / (a + b)
    slow, fast = poisson_spec(1.0), poisson_spec(2.0)
    on_fast = pit_values(zero_model(1.0), simulate(fast, 1500.0, seed=1))
    on_slow = pit_values(zero_model(2.0), simulate(slow, 3000.0, seed=1))
    assert on_fast.mean() == pytest.approx(1 / 3, abs=0.02)
    assert on_slow.mean() == pytest.approx(2 / 3, abs=0.02)


def test_pit_selection_and_start():
    rng = np.random.default_rng(2)
    model = oracles.random_model("snh", rng, dims=2, p=3)
    seq = oracles.random_sequence(rng, 2, n_max=20)
    full = pit_values(model, seq)
    idx = np.arange(len(seq) // 2, len(seq))
    np.testing.assert_allclose(pit_values(model, seq, idx), full[idx], rtol=1e-14)
    assert np.all((full >= 0) & (full <= 1))


def test_pit_model_matches_oracle_compensators():
    rng = np.random.default_rng(8)
    for kind in ("snh", "nnnh"):
        model = oracles.random_model(kind, rng, dims=1, p=4)
        seq = oracles.random_sequence(rng, 1, n_max=12)
        u = pit_values(model, seq)
        prev = 0.0
        for n, t in enumerate(seq.times):
            comp = oracles.compensator(model, 0, seq.times[:n], seq.event_dims[:n],
                                       seq.marks[:n], prev, t)
            assert u[n] == pytest.approx(-math.expm1(-comp), rel=1e-10, abs=1e-14)
            prev = t


def test_pit_non_finite_reports_interval(monkeypatch):
    import markedhawkes.evaluate as ev

    seq = EventSequence.from_arrays([0.5, 1.0], [0, 0], [1.0, 1.0], horizon=2.0)
    monkeypatch.setattr(ev, "interval_compensators",
                        lambda *a, **k: np.array([0.1, np.nan]))
    with pytest.raises(NonFiniteError, match="event 1"):
        pit_values(zero_model(1.0), seq)


# -- QQ ----------------------------------------------------------------------


def test_qq_two_points():
    curve = qq_curve([0.25, 0.75], grid_size=1)
    assert curve.levels.tolist() == [0.5]
    assert curve.coverage.tolist() == [0.5]


def test_qq_all_zero_is_fully_covered():
    curve = qq_curve(np.zeros(50))
    assert np.all(curve.coverage == 1.0)
    assert curve.levels[0] == pytest.approx(0.01) and curve.levels[-1] == pytest.approx(0.99)


def test_qq_uniform_sample_near_diagonal():
    u = np.random.default_rng(0).uniform(size=10_000)
    assert qq_curve(u).max_deviation() < 0.02


@given(st.lists(st.floats(0, 1), min_size=1, max_size=200), st.integers(1, 150))
def test_qq_invariants(u, size):
    curve = qq_curve(u, size)
    assert np.all(np.diff(curve.coverage) >= 0)
    assert np.all((curve.coverage >= 0) & (curve.coverage <= 1))
    assert np.all((curve.levels > 0) & (curve.levels < 1))
    assert len(curve.rows()) == size


def test_qq_errors():
    with pytest.raises(PreconditionError):
        qq_curve([])
    with pytest.raises(PreconditionError):
        qq_curve([0.5, 1.5])


def test_qq_pairs():
    p, u = qq_pairs([0.9, 0.1])
    assert p.tolist() == [0.25, 0.75] and u.tolist() == [0.1, 0.9]
    e, x = qq_pairs([0.5], "exponential")
    assert e[0] == pytest.approx(math.log(2)) and x[0] == pytest.approx(math.log(2))
    with pytest.raises(PreconditionError):
        qq_pairs([0.5], "gamma")


# -- kernel grids ------------------------------------------------------------


def test_closed_form_kernel_at_origin():
    g = kernel_grid(ExpTimesMark(1.0, 1.0, 5.0), (0.0, 1.0), (0.5, 1.0), (3, 2))
    assert g.values[0, -1] == pytest.approx(1.0, rel=1e-15)


def test_zero_network_grid_is_zero():
    net = KernelNet(np.zeros(4), np.zeros(4), np.zeros(4), np.zeros(4), 0.0, Link.IDENTITY)
    assert not np.any(kernel_grid(net, (0, 5), (0.1, 3), 20).values)


def test_exp_link_grid_strictly_positive():
    rng = np.random.default_rng(3)
    net = KernelNet(rng.normal(size=8), rng.normal(size=8), rng.normal(size=8),
                    rng.normal(size=8) - 1, -3.0, Link.EXPONENTIAL)
    assert np.all(kernel_grid(net, (0, 10), (0.01, 20), 50).values > 0)


def test_abs_error_is_elementwise():
    a = kernel_grid(ExpTimesMark(1.0, 1.0, 5.0), (0, 2), (0.3, 3), (10, 7))
    b = kernel_grid(ExpTimesMark(0.5, 2.0, 1.0), (0, 2), (0.3, 3), (10, 7))
    np.testing.assert_array_equal(a.abs_error(b).values, np.abs(a.values - b.values))
    c = kernel_grid(ExpTimesMark(), (0, 1), (0.3, 3), (10, 7))
    with pytest.raises(PreconditionError):
        a.abs_error(c)


def test_model_grid_uses_raw_units_and_indices():
    spec = decoupled_2d_spec()
    g = kernel_grid(spec, (0, 1), (0.1, 1), 5, d=0, j=1)
    np.testing.assert_allclose(g.values, g.m[None, :] * np.exp(-50 * g.t[:, None]))
    model = oracles.random_model("snh", np.random.default_rng(0), dims=2, p=3)
    mg = kernel_grid(model, (0, 1), (0.1, 1), 4, d=1, j=0)
    assert mg.values[2, 3] == pytest.approx(float(model.kernel_value(1, 0, mg.t[2], mg.m[3])))


def test_grid_validation():
    with pytest.raises(PreconditionError):
        kernel_grid(ExpTimesMark(), (1, 1), (0, 1))
    with pytest.raises(PreconditionError):
        kernel_grid(ExpTimesMark(), (0, 1), (0, 1), 1)
    with pytest.raises(PreconditionError):
        KernelGrid(np.array([0.0, 0.0]), np.array([1.0, 2.0]), np.zeros((2, 2)))
    with pytest.raises(PreconditionError):
        KernelGrid(np.array([0.0, 1.0]), np.array([1.0, 2.0]), np.zeros((2, 3)))


def test_default_ranges():
    assert decay_scale(ExpTimesMark(1.0, 1.0, 5.0), 1.0) == pytest.approx(1 / 6)
    marks = np.arange(1, 102, dtype=float)
    (t0, t1), (m0, m1) = default_ranges(marks, 0.5)
    assert (t0, t1) == (0.0, 2.0)
    assert (m0, m1) == pytest.approx((2.0, 100.0))


def test_grid_rows_layout():
    g = kernel_grid(ExpTimesMark(), (0, 1), (1, 2), (2, 3))
    rows = g.rows()
    assert len(rows) == 6
    assert rows[1][:2] == (0.0, 1.5)


# -- prediction --------------------------------------------------------------


def test_poisson_p_any_matches_closed_form():
    rate, delta, n = 2.0, 0.5, 2000
    hist = EventSequence.from_arrays([], [], [], horizon=3.0, dims=1)
    pred = predict(zero_model(rate), hist, delta, n_sims=n, seed=0)
    p = 1 - math.exp(-rate * delta)
    assert abs(pred.p_any - p) <= 3 * math.sqrt(p * (1 - p) / n)
    assert pred.p_any_analytic == pytest.approx(p, rel=1e-14)


def test_median_waiting_time_homogeneous():
    n = 2000
    hist = EventSequence.from_arrays([], [], [], horizon=1.0, dims=1)
    pred = predict(poisson_spec(2.0), hist, 4.0, n_sims=n, seed=4)
    median = float(np.median(pred.next_time[:, 0]))
    se = 1.0 / (2 * 1.0 * math.sqrt(n))  # density at the median of Exp(2) is 1
    assert abs(median - math.log(2) / 2) <= 3 * se


def test_prediction_deterministic():
    hist = simulate(coupled_1d_spec(), 20.0, seed=1)
    a = predict(coupled_1d_spec(), hist, 1.0, n_sims=1, seed=5)
    b = predict(coupled_1d_spec(), hist, 1.0, n_sims=1, seed=5)
    np.testing.assert_array_equal(a.counts, b.counts)
    np.testing.assert_array_equal(a.next_time, b.next_time)
    assert a.rows() == b.rows()


def test_threads_do_not_change_results():
    hist = simulate(decoupled_2d_spec(), 30.0, seed=1)
    a = predict(decoupled_2d_spec(), hist, 2.0, n_sims=40, seed=5, threads=1)
    b = predict(decoupled_2d_spec(), hist, 2.0, n_sims=40, seed=5, threads=3)
    np.testing.assert_array_equal(a.counts, b.counts)


def test_small_delta_recovers_current_intensity():
    spec = coupled_1d_spec()
    hist = simulate(spec, 30.0, seed=3)
    delta = 1e-3
    pred = predict(spec, hist, delta, n_sims=1, seed=0)
    from markedhawkes.simulate import _SpecEngine

    eng = _SpecEngine(spec)
    for t, d, m in zip(hist.times, hist.event_dims, hist.marks):
        eng.add(int(d), float(t), float(m))
    lam = float(eng.pre(np.array([30.0])).sum())
    assert pred.p_any_analytic / delta == pytest.approx(lam, rel=0.05)


def test_conditioning_on_history_raises_short_term_activity():
    spec = coupled_1d_spec()
    quiet = EventSequence.from_arrays([], [], [], horizon=10.0, dims=1)
    busy = EventSequence.from_arrays(np.linspace(9.5, 9.99, 8), np.zeros(8, int), np.full(8, 0.5),
                                     horizon=10.0)
    a = predict(spec, quiet, 0.5, n_sims=1, seed=0)
    b = predict(spec, busy, 0.5, n_sims=1, seed=0)
    assert b.p_any_analytic > a.p_any_analytic


def test_prediction_errors():
    hist = EventSequence.from_arrays([], [], [], horizon=1.0, dims=1)
    with pytest.raises(PreconditionError):
        predict(poisson_spec(1.0), hist, 0.0)
    with pytest.raises(PreconditionError):
        predict(poisson_spec(1.0), hist, 1.0, n_sims=0)
    with pytest.raises(SimulationError, match="run 0"):
        predict(poisson_spec(5.0), hist, 10.0, n_sims=2,
                config=ThinningConfig(kappa=0.5, max_retries=0))


def test_rows_cover_all_and_each_dimension():
    hist = simulate(decoupled_2d_spec(), 20.0, seed=1)
    pred = predict(decoupled_2d_spec(), hist, 1.0, n_sims=20, seed=2)
    labels = {r[0] for r in pred.rows()}
    assert labels == {"all", "0", "1"}
    assert ("all", "p_any", "analytic", pred.p_any_analytic) in pred.rows()
