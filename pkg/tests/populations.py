"""Seeded synthetic populations shared by the acceptance and CLI tests."""

import numpy as np

from pulse_lgn import drt
from pulse_lgn.io import CellData, CheckpointData, Dataset
from pulse_lgn.lgn import RelaxationTrace, TraceMeta
from pulse_lgn.pipeline import records_to_dataset

WINDOWS = (36.0, 360.0, 3600.0)


def broad_spectrum():
    """Log-uniform continuum over [0.1, 1e4] s."""
    return drt.log_uniform_spectrum(0.1, 1e4, 0.05, points_per_decade=400)


def locking_spectrum():
    """Narrow peak at 3 s on top of a flat slow continuum."""
    grid = drt.log_grid(0.01, 1e5, 100)
    peak = drt.peak_spectrum(grid, [(3.0, 0.1, 0.03)]).weights
    continuum = np.where((grid > np.log(30.0)) & (grid < np.log(1e4)), 0.01, 0.0)
    return drt.DrtSpectrum(grid, peak + continuum)


def window_traces(g, fs=10.0, windows=WINDOWS):
    out = []
    for T in windows:
        t = drt.sample_times(T, fs)
        out.append(RelaxationTrace(t, drt.drt_relax(g, t)))
    return out


def aging_dataset(seed=11):
    """3 cells x 15 states drifting right by 0.1 ln tau and growing 5% per state."""
    base = drt.log_uniform_spectrum(0.1, 1e4, 0.03, points_per_decade=100, r0=0.02)
    spec = drt.PopulationSpec(
        n_cells=3,
        n_checkpoints=15,
        base=base,
        schedule=drt.AgingSchedule(15, 0.1, 1.05),
        noise_sigma=0.005 * base.total_weight,
        sample_rate_hz=10.0,
        window_s=3600.0,
        seed=seed,
    )
    return records_to_dataset(drt.synth_cell_population(spec))


def nyquist_dataset(seed=5, n_cells=30):
    grid = drt.log_grid(0.01, 1e5, 100)
    base = drt.peak_spectrum(grid, [(1.0, 0.5, 0.01), (15.0, 0.5, 0.008), (120.0, 0.5, 0.012)], 0.02)
    spec = drt.PopulationSpec(
        n_cells=n_cells,
        n_checkpoints=5,
        base=base,
        schedule=drt.AgingSchedule(5, 0.1, 1.05),
        jitter=drt.CellJitter(0.15, 0.15, 0.15),
        noise_sigma=0.005 * base.total_weight,
        sample_rate_hz=2.0,
        window_s=600.0,
        seed=seed,
    )
    return records_to_dataset(drt.synth_cell_population(spec))


QC_TAUS = np.array([1.5, 10.0, 60.0])
QC_R = np.array([0.01, 0.008, 0.012])
QC_ANOMALOUS = tuple(f"B{b:02d}" for b in range(21, 26))


def qc_dataset(seed, n_cells=254, n_batches=32, sigma=3e-4, depression=0.21):
    """Cells spread round-robin over batches B01..B32; B21..B25 have tau_1 depressed."""
    rng = np.random.default_rng(seed)
    t = drt.sample_times(120.0, 2.5)
    cells = []
    for i in range(n_cells):
        b = i % n_batches + 1
        tau = QC_TAUS * np.exp(rng.normal(0.0, 0.05, 3))
        if 21 <= b <= 25:
            tau[0] *= 1.0 - depression
        r = QC_R * np.exp(rng.normal(0.0, 0.05, 3))
        g = drt.spike_spectrum(tau, r, r0=0.02)
        cid = f"cell{i:03d}"
        tr = drt.pulse_trace(g, t, 1.0, 3.7, rng.normal(0.0, sigma, t.size), TraceMeta(cid, 0, 50.0, 25.0))
        cells.append(CellData(cid, (CheckpointData(0, tr),), f"B{b:02d}", f"ch{i % 8}"))
    return Dataset(tuple(cells))


def fate_dataset(seed=0, n_cells=80, sigma_rel=0.002):
    """Early slow-peak drift encodes final SOH; capacity trajectories do not.

    Initial capacity and early capacity slope are drawn independently of fate
    and inside the matching tolerances, so every pair is capacity-matched.
    """
    rng = np.random.default_rng(seed)
    grid = drt.log_grid(0.01, 1e5, 100)
    fast = drt.peak_spectrum(grid, [(1.0, 0.4, 0.01), (12.0, 0.4, 0.008)]).weights
    t = drt.sample_times(600.0, 2.0)
    cells = []
    for c in range(n_cells):
        fate = rng.uniform()
        final_soh = 70.0 + 25.0 * fate
        rate = 0.02 + 0.08 * fate + rng.normal(0.0, 0.03)
        cap0 = 5.0 + rng.uniform(-0.05, 0.05)
        cslope = -0.02 + rng.uniform(-0.01, 0.01)
        cid = f"cell{c:03d}"
        cps = []
        # three early diagnostics, then an end-of-test checkpoint
        for k, (step, soh) in enumerate([(0, 100.0), (1, 99.0), (2, 98.0), (6, final_soh)]):
            slow = drt.peak_spectrum(grid, [(90.0 * np.exp(rate * step), 0.4, 0.012)]).weights
            g = drt.DrtSpectrum(grid, fast + slow, 0.02)
            noise = rng.normal(0.0, sigma_rel * g.total_weight, t.size)
            tr = drt.pulse_trace(g, t, 1.0, 3.7, noise, TraceMeta(cid, k, 50.0, 25.0))
            cps.append(CheckpointData(k, tr, None, soh, cap0 + cslope * step))
        cells.append(CellData(cid, tuple(cps)))
    return Dataset(tuple(cells))


SMALL_POPULATION = {
    "n_cells": 4,
    "n_checkpoints": 5,
    "n_batches": 2,
    "n_channels": 2,
    "base": {
        "tau_min": 0.01,
        "tau_max": 1e5,
        "points_per_decade": 100,
        "r0": 0.02,
        "peaks": [[1.5, 0.3, 0.01], [12.0, 0.3, 0.008], [80.0, 0.3, 0.012]],
    },
    "schedule": {"shift_per_state": 0.05, "amplification_per_state": 1.02},
    "noise_sigma": 1e-5,
    "sample_rate_hz": 2,
    "window_s": 300,
    "seed": 7,
}
