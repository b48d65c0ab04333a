import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pulse_lgn import drt, lgn
from pulse_lgn.errors import DomainError, ValidationError
from pulse_lgn.impedance import ecm_impedance


def test_spectrum_invariants():
    with pytest.raises(ValidationError):
        drt.DrtSpectrum([0.0, 1.0], [1.0, -1.0])
    with pytest.raises(ValidationError):
        drt.DrtSpectrum([0.0, 1.0, 3.0], [1.0, 1.0, 1.0])
    with pytest.raises(ValidationError):
        drt.DrtSpectrum([0.0, 1.0], [1.0])


def test_delta_spike_relaxation():
    g = drt.spike_spectrum([7.0], [0.04])
    tau0 = drt.spike_taus(g)[0]
    assert tau0 == pytest.approx(7.0, rel=1e-3)
    t = np.linspace(0, 50, 11)
    np.testing.assert_allclose(drt.drt_relax(g, t), 0.04 * np.exp(-t / tau0), rtol=1e-12)
    j = np.argmax(g.weights)
    assert g.weights[j] * g.spacing == pytest.approx(0.04, rel=1e-12)


def test_relax_at_zero_is_total_weight():
    g = drt.log_uniform_spectrum(0.1, 1e4, 0.05)
    assert drt.drt_relax(g, [0.0])[0] == pytest.approx(g.total_weight, rel=1e-12)
    assert g.total_weight == pytest.approx(0.05, rel=1e-12)


def test_relax_grid_refinement():
    coarse = drt.log_uniform_spectrum(0.1, 1e4, 0.05, points_per_decade=400)
    fine = drt.log_uniform_spectrum(0.1, 1e4, 0.05, points_per_decade=1600)
    t = np.geomspace(0.01, 1e4, 50)
    a, b = drt.drt_relax(coarse, t), drt.drt_relax(fine, t)
    assert np.max(np.abs(a / b - 1)) < 1e-3


def test_impedance_limits_and_sign():
    g = drt.peak_spectrum(drt.log_grid(1e-3, 1e4, 100), [(0.1, 0.5, 0.01), (10.0, 1.0, 0.02)], r0=0.015)
    z = drt.drt_impedance(g, [1e-9]).z[0]
    assert z.real == pytest.approx(0.015 + g.total_weight, rel=1e-6)
    zinf = drt.drt_impedance(g, [1e9]).z[0]
    assert zinf.real == pytest.approx(0.015, rel=1e-6)
    sweep = drt.drt_impedance(g, np.geomspace(1e-4, 1e4, 200))
    assert np.all(sweep.z_im <= 0)


def test_spike_impedance_apex_and_ecm_agreement():
    g = drt.spike_spectrum([0.5, 8.0, 120.0], [0.02, 0.015, 0.03], r0=0.01)
    taus = drt.spike_taus(g)
    apex = drt.drt_impedance(g, [1 / (2 * math.pi * taus[1])]).z[0]
    others = sum(m / (1 + 1j * t / taus[1]) for m, t in zip([0.02, 0.03], taus[[0, 2]]))
    assert apex == pytest.approx(0.01 + 0.015 * (1 - 1j) / 2 + others, rel=1e-12)
    f = np.geomspace(1e-3, 1e3, 28)
    a = drt.drt_impedance(g, f).z
    b = ecm_impedance(0.01, list(zip([0.02, 0.015, 0.03], taus)), f).z
    assert np.max(np.abs(a - b)) < 1e-10


def test_age_spectrum():
    g = drt.peak_spectrum(drt.log_grid(1e-2, 1e5, 100), [(5.0, 0.5, 0.02)])
    sched = drt.AgingSchedule(15, 0.1, 1.05)
    assert drt.age_spectrum(g, sched, 0).weights.tobytes() == g.weights.tobytes()
    prev = g.centroid()
    for k in range(1, 15):
        gk = drt.age_spectrum(g, sched, k)
        assert gk.centroid() > prev
        prev = gk.centroid()
    assert drt.age_spectrum(g, sched, 14).total_weight == pytest.approx(g.total_weight * 1.05**14, rel=1e-6)
    with pytest.raises(ValidationError):
        drt.age_spectrum(g, drt.AgingSchedule(2, 100.0), 1)


def test_aging_transfers_to_fitted_tau1():
    base = drt.log_uniform_spectrum(0.1, 1e4, 0.03, points_per_decade=100)
    sched = drt.AgingSchedule(6, 0.1, 1.05)
    t = drt.sample_times(360, 2)
    taus = [lgn.fit(lgn.RelaxationTrace(t, drt.drt_relax(drt.age_spectrum(base, sched, k), t)), 3).tau[0] for k in range(6)]
    assert np.all(np.diff(taus) >= 0)


def test_mode_energy_limits():
    assert drt.mode_energy(2.0, 3.0, 300.0) == pytest.approx(4 * 3 / 2, rel=1e-10)
    assert drt.mode_energy(1.5, 100.0, 1.0) == pytest.approx(1.5**2 * 1.0, rel=0.01)
    assert drt.mode_energy(1.0, 4.0, 4.0) == pytest.approx(2 * (1 - math.exp(-2)), rel=1e-14)
    with pytest.raises(DomainError):
        drt.mode_energy(1.0, 0.0, 1.0)


def _spec(**kw):
    base = drt.spike_spectrum([1.0, 10.0], [0.01, 0.02], r0=0.02)
    args = dict(n_cells=3, n_checkpoints=4, base=base, sample_rate_hz=1, window_s=60, seed=3)
    args.update(kw)
    return drt.PopulationSpec(**args)


def test_population_zero_noise_matches_forward_model():
    spec = _spec(n_cells=1, n_checkpoints=1, jitter=drt.CellJitter(0, 0, 0))
    (rec,) = drt.synth_cell_population(spec)
    expected = spec.ocv_v - spec.pulse_current_a * drt.drt_relax(spec.base, rec.trace.times)
    np.testing.assert_array_equal(rec.trace.voltages, expected)


def test_population_deterministic_and_shape():
    spec = _spec(noise_sigma=1e-4, schedule=drt.AgingSchedule(4, 0.1, 1.05))
    a = drt.synth_cell_population(spec)
    b = drt.synth_cell_population(spec)
    assert len(a) == 12
    assert all(x.trace.voltages.tobytes() == y.trace.voltages.tobytes() for x, y in zip(a, b))
    soh = [r.soh_percent for r in a if r.cell_id == a[0].cell_id]
    assert np.all(np.diff(soh) < 0)


def test_population_cells_independent_of_count():
    a = drt.synth_cell_population(_spec(noise_sigma=1e-4))
    b = drt.synth_cell_population(_spec(noise_sigma=1e-4, n_cells=5))
    assert a[0].trace.voltages.tobytes() == b[0].trace.voltages.tobytes()


def test_pulse_trace_pre_step():
    g = drt.spike_spectrum([2.0], [0.05], r0=0.02)
    tr = drt.pulse_trace(g, np.arange(10.0), current=2.0, ocv=3.7)
    assert tr.pre_step_voltage == pytest.approx(3.7 - 2.0 * 0.07, rel=1e-12)
    assert tr.voltages[0] == pytest.approx(3.7 - 2.0 * 0.05, rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=5, max_size=40), st.floats(-3, 3))
def test_random_spectrum_impedance_capacitive(weights, shift):
    grid = np.linspace(shift - 2, shift + 2, len(weights))
    g = drt.DrtSpectrum(grid, weights, 0.01)
    assert np.all(drt.drt_impedance(g, np.geomspace(1e-3, 1e3, 30)).z_im <= 0)
