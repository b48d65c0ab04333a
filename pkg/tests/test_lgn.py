import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pulse_lgn import _kernels, lgn
from pulse_lgn.errors import DegenerateBasisError, DomainError, ValidationError
from pulse_lgn.lgn import FitOptions, GeneratorParams, RelaxationTrace


def _trace(tau, amps, v_inf=0.0, T=600.0, fs=1.0, noise=0.0, seed=0):
    t = np.arange(int(T * fs) + 1) / fs
    y = np.exp(-np.outer(t, 1.0 / np.asarray(tau))) @ np.asarray(amps) + v_inf
    if noise:
        y = y + np.random.default_rng(seed).normal(0, noise, t.size)
    return RelaxationTrace(t, y)


# ------------------------------------------------------------- softplus


def test_softplus_closed_forms():
    assert lgn.softplus(0.0) == pytest.approx(math.log(2.0), rel=1e-15)
    assert lgn.softplus(50.0) == 50.0
    # ln(1 + e^-20) evaluated with log1p
    assert lgn.softplus(-20.0) == pytest.approx(2.0611536922e-9, rel=1e-9)
    assert np.isfinite(lgn.softplus(1e6)) and lgn.softplus(-1e6) >= 0


def test_softplus_scalar_and_array():
    assert isinstance(lgn.softplus(1.0), float)
    out = lgn.softplus(np.array([-1.0, 0.0, 1.0]))
    assert out.shape == (3,)


@given(st.floats(-30, 30))
def test_softplus_roundtrip(x):
    assert lgn.softplus_inv(lgn.softplus(x)) == pytest.approx(x, rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("y", [0.0, -1.0])
def test_softplus_inv_domain(y):
    with pytest.raises(DomainError):
        lgn.softplus_inv(y)


@given(st.lists(st.floats(-700, 700), min_size=1, max_size=10))
def test_positivity_by_construction(theta):
    rates = lgn.softplus(np.array(theta))
    assert np.all(rates >= 0)
    # strictly positive wherever representable
    assert np.all(rates[np.array(theta) > -700] > 0)


# ---------------------------------------------------------------- trace


def test_trace_rejects_nonmonotone_times_naming_sample():
    with pytest.raises(ValidationError, match="sample 2"):
        RelaxationTrace([0.0, 1.0, 1.0, 2.0], [1, 2, 3, 4])


@pytest.mark.parametrize(
    "times,volts",
    [([0, 1], [1.0]), ([0, 1], [1.0, np.nan]), ([-1, 1], [1.0, 2.0]), ([0], [1.0])],
)
def test_trace_validation(times, volts):
    with pytest.raises(ValidationError):
        RelaxationTrace(times, volts)


def test_truncation_measured_from_first_sample():
    tr = RelaxationTrace(np.arange(5.0, 20.0), np.zeros(15))
    cut = tr.truncated(3.0)
    np.testing.assert_array_equal(cut.times, [5.0, 6.0, 7.0, 8.0])


# ------------------------------------------------------------ forward model


def test_predict_examples():
    p = GeneratorParams.from_tau([1.0], [1.0], 0.0)
    assert lgn.predict(p, [1.0])[0] == pytest.approx(math.exp(-1), rel=1e-14)
    p2 = GeneratorParams.from_tau([1.0, 10.0], [0.5, 0.25], 0.0)
    assert lgn.predict(p2, [2.0])[0] == pytest.approx(0.5 * math.exp(-2) + 0.25 * math.exp(-0.2), rel=1e-14)
    p3 = GeneratorParams(np.array([0.3, -2.0, 1.0]), np.array([0.1, -0.2, 0.4]), 3.7)
    assert lgn.predict(p3, [0.0])[0] == pytest.approx(0.3 + 3.7, rel=1e-14)


def test_generator_is_negative_diagonal():
    p = GeneratorParams.from_tau([2.0, 5.0], [1.0, 1.0])
    np.testing.assert_allclose(p.generator, np.diag([-0.5, -0.2]), rtol=1e-12)
    np.testing.assert_allclose(p.tau, [2.0, 5.0], rtol=1e-12)


def test_loss_examples():
    p = GeneratorParams.from_tau([3.0, 30.0], [0.01, 0.02], 3.6)
    t = np.linspace(0, 100, 50)
    assert lgn.loss(p, RelaxationTrace(t, lgn.predict(p, t))) == 0.0
    eq = GeneratorParams.from_tau([3.0], [0.0], 3.6)
    assert lgn.loss(eq, RelaxationTrace(t, np.full(t.size, 3.6))) == 0.0
    y = lgn.predict(p, t)
    y[7] += 0.25
    assert lgn.loss(p, RelaxationTrace(t, y)) == pytest.approx(0.0625, rel=1e-10)


def test_gradient_zero_at_perfect_fit_and_dead_mode():
    p = GeneratorParams.from_tau([3.0, 30.0], [0.01, 0.02], 3.6)
    t = np.linspace(0, 100, 50)
    g = lgn.loss_gradient(p, RelaxationTrace(t, lgn.predict(p, t)))
    assert np.all(g.theta == 0) and np.all(g.v0 == 0) and g.v_inf == 0
    dead = GeneratorParams(np.array([0.1, -1.0]), np.array([0.0, 0.3]), 0.0)
    g = lgn.loss_gradient(dead, RelaxationTrace(t, np.sin(t)))
    assert g.theta[0] == 0.0


@settings(max_examples=40, deadline=None)
@given(
    st.integers(1, 5),
    st.integers(0, 2**31 - 1),
)
def test_gradient_matches_finite_differences(n, seed):
    rng = np.random.default_rng(seed)
    t = np.sort(rng.uniform(0, 50, 40))
    t = np.unique(t)
    tr = RelaxationTrace(t, rng.normal(0, 1, t.size))
    p = GeneratorParams(rng.normal(-1.0, 1.0, n), rng.normal(0, 1, n), rng.normal())
    g = lgn.loss_gradient(p, tr)
    x0 = np.concatenate([p.theta, p.v0, [p.v_inf]])
    num = np.empty_like(x0)
    for i in range(x0.size):
        h = 1e-6 * max(1.0, abs(x0[i]))
        xp, xm = x0.copy(), x0.copy()
        xp[i] += h
        xm[i] -= h
        fp = lgn.loss(GeneratorParams(xp[:n], xp[n:-1], xp[-1]), tr)
        fm = lgn.loss(GeneratorParams(xm[:n], xm[n:-1], xm[-1]), tr)
        num[i] = (fp - fm) / (2 * h)
    ana = np.concatenate([g.theta, g.v0, [g.v_inf]])
    assert np.linalg.norm(ana - num) <= 1e-5 * np.linalg.norm(num)


# ----------------------------------------------------------- amplitudes


def test_fit_amplitudes_exact_recovery():
    tr = _trace([0.5, 8.0, 120.0], [0.02, -0.015, 0.03], v_inf=3.7)
    amps, v_inf = lgn.fit_amplitudes(tr, [0.5, 8.0, 120.0])
    np.testing.assert_allclose(amps, [0.02, -0.015, 0.03], rtol=1e-8)
    assert v_inf == pytest.approx(3.7, rel=1e-12)


def test_fit_amplitudes_single_mode():
    tr = _trace([5.0], [0.1], v_inf=-0.2, T=50)
    amps, v_inf = lgn.fit_amplitudes(tr, 5.0)
    assert amps[0] == pytest.approx(0.1, rel=1e-12)
    assert v_inf == pytest.approx(-0.2, rel=1e-12)


def test_fit_amplitudes_is_least_squares_optimal():
    tr = _trace([1.0, 10.0], [0.05, 0.03], v_inf=3.7, noise=1e-3)
    tau = np.array([1.2, 9.0])
    amps, v_inf = lgn.fit_amplitudes(tr, tau)
    best = lgn.loss(GeneratorParams.from_tau(tau, amps, v_inf), tr)
    rng = np.random.default_rng(0)
    for _ in range(50):
        f = 1 + rng.choice([-0.01, 0.01], 3)
        worse = lgn.loss(GeneratorParams.from_tau(tau, amps * f[:2], v_inf * f[2]), tr)
        assert best <= worse


def test_fit_amplitudes_degenerate_names_indices():
    tr = _trace([1.0, 10.0], [0.05, 0.03])
    with pytest.raises(DegenerateBasisError) as exc:
        lgn.fit_amplitudes(tr, [10.0, 1.0, 10.0])
    assert exc.value.indices == (0, 2)
    with pytest.raises(DomainError):
        lgn.fit_amplitudes(tr, [1.0, -1.0])


# ---------------------------------------------------------- propagation


def test_propagate_state_examples():
    np.testing.assert_array_equal(lgn.propagate_state([1.0, -2.0], [1.0, 2.0], 0.0), [1.0, -2.0])
    np.testing.assert_allclose(lgn.propagate_state([1.0, 1.0], [1.0, 2.0], 1.0), [math.exp(-1), math.exp(-2)])
    with pytest.raises(DomainError):
        lgn.propagate_state([1.0], [0.0], 1.0)
    with pytest.raises(DomainError):
        lgn.propagate_state([1.0], [1.0], -1.0)


@given(
    st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=6),
    st.floats(1e-4, 10),
    st.floats(0, 100),
    st.floats(1e-6, 100),
)
def test_propagation_dissipates(v0, d, t1, dt):
    v0 = np.array(v0)
    rates = d * (1 + np.arange(v0.size))
    a = np.linalg.norm(lgn.propagate_state(v0, rates, t1))
    b = np.linalg.norm(lgn.propagate_state(v0, rates, t1 + dt))
    assert b <= a


# ------------------------------------------------------------------ fit


def test_fit_recovers_three_modes():
    tr = _trace([0.5, 8.0, 120.0], [0.02, 0.015, 0.03])
    f = lgn.fit(tr, 3)
    np.testing.assert_allclose(f.tau, [0.5, 8.0, 120.0], rtol=0.01)
    np.testing.assert_allclose(f.amplitudes, [0.02, 0.015, 0.03], rtol=0.01)
    assert f.ordering_violations == 0
    assert f.stiffness == pytest.approx(240, rel=0.01)
    assert f.converged


def test_fit_sorts_and_copermutes():
    tr = _trace([2.0, 40.0], [-0.01, 0.03], T=300)
    warm = GeneratorParams.from_tau([40.0, 2.0], [0.03, -0.01], 0.0)
    f = lgn.fit(tr, 2, warm_start=warm)
    assert np.all(np.diff(f.tau) > 0)
    assert f.amplitudes[0] == pytest.approx(-0.01, rel=1e-4)


def test_fit_constant_trace_guard():
    tr = RelaxationTrace(np.arange(50.0), np.full(50, 3.7))
    f = lgn.fit(tr, 3)
    assert f.nrmse is None
    assert f.v_inf + f.amplitudes.sum() == pytest.approx(3.7, abs=1e-9)


def test_warm_start_at_truth_converges_immediately():
    tr = _trace([0.5, 8.0, 120.0], [0.02, 0.015, 0.03], v_inf=3.7)
    truth = GeneratorParams.from_tau([0.5, 8.0, 120.0], [0.02, 0.015, 0.03], 3.7)
    f = lgn.fit(tr, 3, warm_start=truth)
    assert f.iterations <= 5
    assert f.loss <= 1e-20


def test_warm_start_order_mismatch():
    tr = _trace([1.0], [0.1], T=50)
    with pytest.raises(ValidationError):
        lgn.fit(tr, 2, warm_start=GeneratorParams.from_tau([1.0], [0.1]))


def test_fit_requires_enough_samples():
    tr = RelaxationTrace(np.arange(7.0), np.exp(-np.arange(7.0)))
    with pytest.raises(ValidationError, match="needs at least 8"):
        lgn.fit(tr, 3)
    with pytest.raises(ValidationError):
        lgn.fit(tr, 0)


def test_fit_deterministic_and_loss_monotone():
    tr = _trace([1.0, 10.0, 100.0], [0.02, 0.01, 0.03], noise=1e-4)
    a = lgn.fit(tr, 3)
    b = lgn.fit(tr, 3)
    assert a.tau.tobytes() == b.tau.tobytes() and a.loss == b.loss
    h = np.array(a.loss_history)
    assert np.all(np.diff(h) <= 0)
    assert h[-1] == a.loss


def test_nrmse_definition():
    tr = _trace([1.0, 10.0], [0.02, 0.01], noise=1e-3, T=200)
    f = lgn.fit(tr, 2)
    expected = math.sqrt(f.loss / len(tr)) / np.ptp(tr.voltages) * 100
    assert f.nrmse == pytest.approx(expected, rel=1e-12)


def test_ordering_violation_counts_collapse():
    opts = FitOptions(collapse_tol=0.5)
    f = lgn._finish(
        _trace([1.0], [0.1], T=20), np.array([lgn.softplus_inv(1.0), lgn.softplus_inv(1 / 1.2)]),
        np.array([0.05, 0.05, 0.0]), 0.0, 1, True, [0.0], opts,
    )
    assert f.ordering_violations == 1


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_fit_tau_always_positive(seed):
    rng = np.random.default_rng(seed)
    t = np.sort(rng.uniform(0, 100, 30))
    t = np.unique(t)
    tr = RelaxationTrace(t, rng.normal(0, 1, t.size))
    f = lgn.fit(tr, 2, opts=FitOptions(max_iterations=200))
    assert np.all(f.tau > 0) and f.stiffness >= 1


# ---------------------------------------------------------- kernel parity


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_kernel_matches_numpy_reference(n, seed):
    rng = np.random.default_rng(seed)
    t = np.linspace(0, 60, 121)
    y = rng.normal(0, 0.01, t.size) + np.exp(-t / 7.0) * 0.05
    theta = rng.normal(-1.0, 1.0, n)
    # keep rates distinct so the projection is well posed
    theta = lgn.softplus_inv(np.sort(lgn.softplus(theta)) * (1 + np.arange(n)))
    L, g, coef = _kernels.lgn_eval(theta, t, y)
    ref = lgn._project(t, y, lgn.softplus(theta))
    np.testing.assert_allclose(coef, ref, rtol=1e-6, atol=1e-10)
    L_ref, g_th, _, _ = lgn._loss_and_grads(theta, coef[:-1], coef[-1], t, y)
    assert L == pytest.approx(L_ref, rel=1e-9, abs=1e-18)
    np.testing.assert_allclose(g, g_th, rtol=1e-6, atol=1e-14)


def test_softplus_kernel_matches():
    for x in (-40.0, -1.0, 0.0, 3.0, 60.0):
        assert _kernels.softplus_nb(x) == pytest.approx(lgn.softplus(x), rel=1e-15)
