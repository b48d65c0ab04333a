"""Synthetic distributed-relaxation-time cells: the ground-truth oracle.

A spectrum ``g`` lives on a uniform ``ln tau`` grid. Relaxation and impedance
are evaluated with the same rectangle rule, ``sum_j g_j * dlntau * kernel_j``,
so a single nonzero grid weight behaves exactly like one RC branch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ValidationError
from .impedance import ImpedanceSpectrum
from .lgn import RelaxationTrace, TraceMeta

DEFAULT_FREQS = np.geomspace(1.0e4, 0.05, 28)


@dataclass(frozen=True)
class DrtSpectrum:
    """Relaxation-time density on a uniform natural-log grid.

    ``weights`` carry g(tau) per unit ln tau. Used as a per-ampere response the
    units are ohms, which is what ties the relaxation and impedance views.
    """

    ln_tau_grid: np.ndarray
    weights: np.ndarray
    r0: float = 0.0

    def __post_init__(self):
        grid = np.asarray(self.ln_tau_grid, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if grid.ndim != 1 or grid.shape != w.shape or grid.size < 1:
            raise ValidationError("grid and weights must be equal-length 1-D arrays")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValidationError("spectral weights must be finite and non-negative")
        if grid.size > 1:
            d = np.diff(grid)
            if np.any(d <= 0):
                raise ValidationError("ln tau grid must be strictly increasing")
            if np.max(np.abs(d - d[0])) > 1e-12:
                raise ValidationError("ln tau grid must be uniformly spaced")
        object.__setattr__(self, "ln_tau_grid", grid)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "r0", float(self.r0))

    @property
    def spacing(self) -> float:
        g = self.ln_tau_grid
        return float((g[-1] - g[0]) / (g.size - 1)) if g.size > 1 else 1.0

    @property
    def tau(self) -> np.ndarray:
        return np.exp(self.ln_tau_grid)

    @property
    def masses(self) -> np.ndarray:
        """Quadrature masses ``g_j * dlntau``."""
        return self.weights * self.spacing

    @property
    def total_weight(self) -> float:
        return float(self.masses.sum())

    def centroid(self) -> float:
        """Weight-averaged ln tau."""
        return float(np.sum(self.masses * self.ln_tau_grid) / self.masses.sum())

    def scaled(self, factor: float) -> "DrtSpectrum":
        return DrtSpectrum(self.ln_tau_grid, self.weights * factor, self.r0)


@dataclass(frozen=True)
class AgingSchedule:
    n_states: int
    shift_per_state: float
    amplification_per_state: float = 1.0

    def __post_init__(self):
        if self.n_states < 1:
            raise ValidationError("aging schedule needs at least one state")
        if self.amplification_per_state < 1:
            raise ValidationError("amplification per state must be >= 1")


def log_grid(tau_min: float, tau_max: float, points_per_decade: int = 400) -> np.ndarray:
    decades = math.log10(tau_max / tau_min)
    m = max(2, int(round(decades * points_per_decade)) + 1)
    return np.linspace(math.log(tau_min), math.log(tau_max), m)


def spike_spectrum(taus, masses, r0=0.0, spacing=1e-3, pad=2.0) -> DrtSpectrum:
    """Discrete-pole spectrum: each mass is placed on its nearest grid node.

    The realised pole positions are ``exp(grid[node])``; see :func:`spike_taus`.
    """
    taus = np.asarray(taus, dtype=float)
    masses = np.asarray(masses, dtype=float)
    lo = math.log(taus.min()) - pad
    m = int(math.ceil((math.log(taus.max()) + pad - lo) / spacing)) + 1
    grid = lo + spacing * np.arange(m)
    w = np.zeros(m)
    idx = np.rint((np.log(taus) - lo) / spacing).astype(int)
    np.add.at(w, idx, masses / spacing)
    return DrtSpectrum(grid, w, r0)


def spike_taus(g: DrtSpectrum) -> np.ndarray:
    return g.tau[g.weights > 0]


def peak_spectrum(grid, peaks, r0=0.0) -> DrtSpectrum:
    """Sum of Gaussian peaks in ln tau.

    ``peaks`` holds ``(tau_center, width_ln, mass)`` triples; each peak
    integrates to ``mass`` over ln tau (before grid truncation).
    """
    grid = np.asarray(grid, dtype=float)
    w = np.zeros_like(grid)
    for center, width, mass in peaks:
        z = (grid - math.log(center)) / width
        w += mass * np.exp(-0.5 * z * z) / (width * math.sqrt(2 * math.pi))
    return DrtSpectrum(grid, w, r0)


def log_uniform_spectrum(tau_min, tau_max, mass, points_per_decade=400, r0=0.0) -> DrtSpectrum:
    """Flat density on ``[tau_min, tau_max]`` with total weight ``mass``.

    Nodes sit at cell midpoints so the support is exact at every resolution.
    """
    lo, hi = math.log(tau_min), math.log(tau_max)
    m = max(1, int(round(math.log10(tau_max / tau_min) * points_per_decade)))
    h = (hi - lo) / m
    grid = lo + h * (np.arange(m) + 0.5)
    return DrtSpectrum(grid, np.full(m, mass / (hi - lo)), r0)


def drt_relax(g: DrtSpectrum, times, chunk: int = 4096) -> np.ndarray:
    """``sum_j g_j e^{-t/tau_j} dlntau`` at each time."""
    t = np.asarray(times, dtype=float)
    keep = g.weights > 0
    rates = 1.0 / g.tau[keep]
    masses = g.masses[keep]
    out = np.empty(t.size)
    for a in range(0, t.size, chunk):
        out[a : a + chunk] = np.exp(-np.outer(t[a : a + chunk], rates)) @ masses
    return out


def drt_impedance(g: DrtSpectrum, freqs) -> ImpedanceSpectrum:
    f = np.atleast_1d(np.asarray(freqs, dtype=float))
    if not np.all(f > 0):
        raise ValidationError("frequencies must be positive")
    keep = g.weights > 0
    wt = np.outer(2 * np.pi * f, g.tau[keep])
    z = g.r0 + (g.masses[keep] / (1 + 1j * wt)).sum(axis=1)
    return ImpedanceSpectrum.from_complex(f, z)


def age_spectrum(g: DrtSpectrum, schedule: AgingSchedule, state: int) -> DrtSpectrum:
    """Shift right by ``state * shift`` in ln tau and amplify ``amp**state``.

    Weight pushed past the grid edge is discarded.
    """
    if not 0 <= state < schedule.n_states:
        raise ValidationError(f"state {state} outside 0..{schedule.n_states - 1}")
    if state == 0:
        return g
    shift = state * schedule.shift_per_state
    x = g.ln_tau_grid
    w = np.interp(x - shift, x, g.weights, left=0.0, right=0.0)
    if g.weights.any() and not w.any():
        raise ValidationError("aging shift moves all spectral weight off the grid")
    return DrtSpectrum(x, w * schedule.amplification_per_state**state, g.r0)


def mode_energy(v0, tau, T):
    """L2 energy of ``v0 exp(-t/tau)`` over ``[0, T]``."""
    tau = np.asarray(tau, dtype=float)
    T = np.asarray(T, dtype=float)
    if np.any(tau <= 0):
        raise DomainError("tau must be positive")
    if np.any(T < 0):
        raise DomainError("window must be non-negative")
    out = np.asarray(v0, dtype=float) ** 2 * tau / 2 * -np.expm1(-2 * T / tau)
    return float(out) if out.ndim == 0 else out


# ------------------------------------------------------------ populations


@dataclass(frozen=True)
class CellJitter:
    """Per-cell log-normal spreads."""

    ln_tau_shift_sd: float = 0.05
    weight_scale_sd: float = 0.05
    r0_scale_sd: float = 0.05


@dataclass(frozen=True)
class PopulationSpec:
    n_cells: int
    n_checkpoints: int
    base: DrtSpectrum
    schedule: AgingSchedule | None = None
    jitter: CellJitter = field(default_factory=CellJitter)
    noise_sigma: float = 0.0
    sample_rate_hz: float = 1.0
    window_s: float = 600.0
    seed: int = 0
    pulse_current_a: float = 1.0
    ocv_v: float = 3.7
    soh_fade_per_state: float = 1.0
    nominal_capacity_ah: float = 5.0
    freqs_hz: np.ndarray = field(default_factory=lambda: DEFAULT_FREQS.copy())
    soc_percent: float = 50.0
    temperature_c: float = 25.0
    cell_prefix: str = "cell"

    def __post_init__(self):
        if self.n_cells < 1 or self.n_checkpoints < 1:
            raise ValidationError("cell and checkpoint counts must be >= 1")
        if self.noise_sigma < 0:
            raise ValidationError("noise sigma must be >= 0")
        sched = self.schedule
        if sched is not None and sched.n_states < self.n_checkpoints:
            raise ValidationError("aging schedule has fewer states than checkpoints")


@dataclass(frozen=True)
class SynthRecord:
    cell_id: str
    checkpoint_index: int
    trace: RelaxationTrace
    spectrum: ImpedanceSpectrum
    truth: DrtSpectrum
    soh_percent: float
    capacity_ah: float


def sample_times(window_s: float, sample_rate_hz: float) -> np.ndarray:
    n = int(math.floor(window_s * sample_rate_hz + 1e-9)) + 1
    return np.arange(n) / sample_rate_hz


def pulse_trace(g: DrtSpectrum, times, current=1.0, ocv=0.0, noise=None, meta=None):
    """Post-cutoff terminal voltage of a cell whose per-ampere DRT is ``g``.

    The pulse is assumed long enough for every branch to reach steady state,
    so branch ``j`` starts relaxing from ``current * mass_j``.
    """
    eta = current * drt_relax(g, times)
    v = ocv - eta
    if noise is not None:
        v = v + noise
    pre = ocv - current * (g.r0 + g.total_weight)
    return RelaxationTrace(np.asarray(times, float), v, current, pre, meta or TraceMeta())


def _cell_id(prefix, i, n):
    return f"{prefix}{i:0{max(3, len(str(n - 1)))}d}"


def synth_cell(spec: PopulationSpec, cell_index: int, seed_seq) -> list[SynthRecord]:
    rng = np.random.default_rng(seed_seq)
    j = spec.jitter
    shift = rng.normal(0.0, j.ln_tau_shift_sd)
    wscale = math.exp(rng.normal(0.0, j.weight_scale_sd))
    rscale = math.exp(rng.normal(0.0, j.r0_scale_sd))
    x = spec.base.ln_tau_grid
    w = np.interp(x - shift, x, spec.base.weights, left=0.0, right=0.0) * wscale
    cell_g = DrtSpectrum(x, w, spec.base.r0 * rscale)
    times = sample_times(spec.window_s, spec.sample_rate_hz)
    cid = _cell_id(spec.cell_prefix, cell_index, spec.n_cells)
    out = []
    for k in range(spec.n_checkpoints):
        g_k = age_spectrum(cell_g, spec.schedule, k) if spec.schedule else cell_g
        noise = rng.normal(0.0, spec.noise_sigma, times.size) if spec.noise_sigma > 0 else None
        meta = TraceMeta(cid, k, spec.soc_percent, spec.temperature_c)
        trace = pulse_trace(g_k, times, spec.pulse_current_a, spec.ocv_v, noise, meta)
        soh = 100.0 - k * spec.soh_fade_per_state
        out.append(
            SynthRecord(
                cid,
                k,
                trace,
                drt_impedance(g_k, spec.freqs_hz),
                g_k,
                soh,
                spec.nominal_capacity_ah * soh / 100.0,
            )
        )
    return out


def synth_cell_population(spec: PopulationSpec) -> list[SynthRecord]:
    """Seeded population, ordered by cell then checkpoint.

    Each cell draws from its own spawned seed, so any subset of cells can be
    regenerated independently and parallel runs agree with serial ones.
    """
    seqs = np.random.SeedSequence(spec.seed).spawn(spec.n_cells)
    records = []
    for i, ss in enumerate(seqs):
        records.extend(synth_cell(spec, i, ss))
    return records
