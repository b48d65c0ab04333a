"""Structure-preserving identification of relaxation time constants.

The relaxation state obeys ``v' = -D v`` with ``D = diag(softplus(theta))``,
so every fitted model is stable and dissipative regardless of the data. The
terminal voltage is ``1^T v(t) + v_inf``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import _kernels
from .errors import DegenerateBasisError, DomainError, ValidationError

__all__ = [
    "TraceMeta",
    "RelaxationTrace",
    "GeneratorParams",
    "FitOptions",
    "LgnFit",
    "softplus",
    "softplus_inv",
    "predict",
    "loss",
    "loss_gradient",
    "fit",
    "fit_amplitudes",
    "propagate_state",
]


def _scalar_or_array(x, like):
    return float(x) if np.ndim(like) == 0 else x


def softplus(x):
    """``ln(1 + e^x)`` without overflow for large ``x``."""
    xa = np.asarray(x, dtype=float)
    out = np.maximum(xa, 0.0) + np.log1p(np.exp(-np.abs(xa)))
    return _scalar_or_array(out, x)


def softplus_inv(y):
    """Inverse of :func:`softplus`; ``y`` must be strictly positive."""
    ya = np.asarray(y, dtype=float)
    if not np.all(ya > 0):
        raise DomainError("softplus_inv is defined only for y > 0")
    # log(e^y - 1) = y + log(1 - e^-y)
    out = ya + np.log(-np.expm1(-ya))
    return _scalar_or_array(out, y)


@dataclass(frozen=True)
class TraceMeta:
    cell_id: str = ""
    checkpoint_index: int = 0
    soc_percent: float = float("nan")
    temperature_c: float = float("nan")


@dataclass(frozen=True)
class RelaxationTrace:
    """Post-pulse terminal voltage samples.

    ``times`` are seconds since current cutoff, ``pulse_current`` is the signed
    current during the pulse and ``pre_step_voltage`` the terminal voltage just
    before cutoff.
    """

    times: np.ndarray
    voltages: np.ndarray
    pulse_current: float = 0.0
    pre_step_voltage: float = float("nan")
    meta: TraceMeta = field(default_factory=TraceMeta)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.voltages, dtype=float)
        if t.ndim != 1 or v.ndim != 1:
            raise ValidationError("times and voltages must be one-dimensional")
        if t.shape != v.shape:
            raise ValidationError(
                f"times ({t.size}) and voltages ({v.size}) differ in length"
            )
        if t.size < 2:
            raise ValidationError("a trace needs at least two samples")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
            raise ValidationError("trace contains non-finite samples")
        if t[0] < 0:
            raise ValidationError("times[0] must be >= 0")
        bad = np.flatnonzero(np.diff(t) <= 0)
        if bad.size:
            raise ValidationError(
                f"times not strictly increasing at sample {int(bad[0]) + 1}"
            )
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "voltages", v)

    def __len__(self):
        return self.times.size

    @property
    def window(self) -> float:
        return float(self.times[-1] - self.times[0])

    def truncated(self, window_s: float) -> "RelaxationTrace":
        """Samples with ``t - t[0] <= window_s``."""
        keep = (self.times - self.times[0]) <= window_s
        return RelaxationTrace(
            self.times[keep],
            self.voltages[keep],
            self.pulse_current,
            self.pre_step_voltage,
            self.meta,
        )


@dataclass(frozen=True)
class GeneratorParams:
    """Unconstrained decay parameters plus initial branch voltages and offset."""

    theta: np.ndarray
    v0: np.ndarray
    v_inf: float

    def __post_init__(self):
        th = np.atleast_1d(np.asarray(self.theta, dtype=float))
        v0 = np.atleast_1d(np.asarray(self.v0, dtype=float))
        if th.shape != v0.shape:
            raise ValidationError("theta and v0 must have the same length")
        object.__setattr__(self, "theta", th)
        object.__setattr__(self, "v0", v0)
        object.__setattr__(self, "v_inf", float(self.v_inf))

    @classmethod
    def from_tau(cls, tau, v0, v_inf=0.0) -> "GeneratorParams":
        rates = 1.0 / np.asarray(tau, dtype=float)
        return cls(softplus_inv(rates), v0, v_inf)

    @property
    def n_states(self) -> int:
        return self.theta.size

    @property
    def rates(self) -> np.ndarray:
        return softplus(self.theta)

    @property
    def tau(self) -> np.ndarray:
        return 1.0 / self.rates

    @property
    def generator(self) -> np.ndarray:
        return -np.diag(self.rates)


@dataclass(frozen=True)
class FitOptions:
    max_iterations: int = 5000
    rel_tol: float = 1e-10
    patience: int = 50
    # Adam step on theta, adapted multiplicatively on accept/reject
    learning_rate: float = 0.05
    lr_growth: float = 1.05
    lr_shrink: float = 0.5
    lr_max: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    # RMS residual (volts) below which the fit is treated as exact
    abs_tol: float = 1e-13
    quantization_floor: float = 1e-6
    collapse_tol: float = 0.02


@dataclass(frozen=True)
class LgnFit:
    tau: np.ndarray
    amplitudes: np.ndarray
    v_inf: float
    loss: float
    nrmse: float | None
    iterations: int
    ordering_violations: int
    stiffness: float
    converged: bool = True
    loss_history: tuple = ()

    @property
    def n_states(self) -> int:
        return self.tau.size

    @property
    def params(self) -> GeneratorParams:
        return GeneratorParams.from_tau(self.tau, self.amplitudes, self.v_inf)


def _basis(times, rates):
    return np.exp(-np.outer(times, rates))


def predict(params: GeneratorParams, times) -> np.ndarray:
    """Terminal voltage ``sum_i v0_i exp(-d_i t) + v_inf`` at ``times``."""
    t = np.asarray(times, dtype=float)
    return _basis(t, params.rates) @ params.v0 + params.v_inf


def loss(params: GeneratorParams, trace: RelaxationTrace) -> float:
    r = trace.voltages - predict(params, trace.times)
    return float(r @ r)


def _loss_and_grads(theta, v0, v_inf, times, voltages, E=None):
    if E is None:
        E = _basis(times, softplus(np.asarray(theta, dtype=float)))
    r = E @ v0 + v_inf - voltages
    # d(pred)/d(theta_i) = -v0_i t exp(-d_i t) sigma(theta_i)
    g_theta = -2.0 * ((r * times) @ E) * v0 * expit(theta)
    g_v0 = 2.0 * (r @ E)
    g_vinf = 2.0 * r.sum()
    return float(r @ r), g_theta, g_v0, g_vinf


def loss_gradient(params: GeneratorParams, trace: RelaxationTrace) -> GeneratorParams:
    """Analytic gradient of :func:`loss`, packed as a ``GeneratorParams``.

    The returned ``theta``, ``v0`` and ``v_inf`` fields hold the partial
    derivatives with respect to the matching parameter.
    """
    _, g_th, g_v0, g_vi = _loss_and_grads(
        params.theta, params.v0, params.v_inf, trace.times, trace.voltages
    )
    return GeneratorParams(g_th, g_v0, g_vi)


def _colliding(tau, rtol):
    order = np.argsort(tau)
    st = tau[order]
    for a, b in zip(range(st.size - 1), range(1, st.size)):
        if st[b] - st[a] <= rtol * st[b]:
            return sorted((int(order[a]), int(order[b])))
    return None


def fit_amplitudes(trace: RelaxationTrace, fixed_tau, rtol: float = 1e-9):
    """Linear least-squares amplitudes and offset for fixed time constants.

    Returns ``(amplitudes, v_inf)``. Raises :class:`DegenerateBasisError` if two
    time constants coincide within ``rtol``.
    """
    tau = np.atleast_1d(np.asarray(fixed_tau, dtype=float))
    if not np.all(tau > 0):
        raise DomainError("fixed time constants must be positive")
    hit = _colliding(tau, rtol)
    if hit is not None:
        raise DegenerateBasisError(hit)
    coef = _project(trace.times, trace.voltages, 1.0 / tau)
    return coef[:-1], float(coef[-1])


def _project(times, voltages, rates, E=None):
    """Least-squares ``[v0..., v_inf]`` for the given decay rates."""
    if E is None:
        E = _basis(times, rates)
    B = np.empty((times.size, E.shape[1] + 1))
    B[:, :-1] = E
    B[:, -1] = 1.0
    # column-equilibrated normal equations; lstsq only when singular
    norms = np.sqrt(np.einsum("ij,ij->j", B, B))
    norms[norms == 0] = 1.0
    Bn = B / norms
    try:
        coef = np.linalg.solve(Bn.T @ Bn, Bn.T @ voltages) / norms
    except np.linalg.LinAlgError:
        coef = None
    if coef is None or not np.all(np.isfinite(coef)):
        coef, *_ = np.linalg.lstsq(B, voltages, rcond=None)
    return coef


def propagate_state(v0, d, t: float) -> np.ndarray:
    """``exp(-diag(d) t) v0``; exact for the diagonal generator."""
    d = np.asarray(d, dtype=float)
    if not np.all(d > 0):
        raise DomainError("decay rates must be positive")
    if t < 0:
        raise DomainError("propagation time must be non-negative")
    return np.exp(-d * t) * np.asarray(v0, dtype=float)


def _cold_start(trace, n_states):
    T = trace.times[-1]
    if n_states == 1:
        tau0 = np.array([T / math.sqrt(300.0)])
    else:
        tau0 = np.geomspace(T / 300.0, T, n_states)
    return softplus_inv(1.0 / tau0)


def _check_fit_inputs(trace, n_states):
    if n_states < 1:
        raise ValidationError("n_states must be >= 1")
    if len(trace) < 2 * n_states + 2:
        raise ValidationError(
            f"trace has {len(trace)} samples; order {n_states} needs at least "
            f"{2 * n_states + 2}"
        )


def fit(
    trace: RelaxationTrace,
    n_states: int = 3,
    warm_start: GeneratorParams | None = None,
    opts: FitOptions | None = None,
) -> LgnFit:
    """Identify ``n_states`` decay modes from a relaxation trace.

    Adam steps act on the unconstrained decay parameters; at every iterate the
    amplitudes and offset are set to their exact least-squares optimum, so the
    loss reported per accepted step is the joint minimum over ``(v0, v_inf)``
    and never increases. Steps that would raise the loss are rejected and the
    step size is halved.
    """
    opts = opts or FitOptions()
    _check_fit_inputs(trace, n_states)
    t, y = trace.times, trace.voltages
    if warm_start is not None:
        if warm_start.n_states != n_states:
            raise ValidationError(
                f"warm start has {warm_start.n_states} states, expected {n_states}"
            )
        theta = warm_start.theta.copy()
    else:
        theta = _cold_start(trace, n_states)

    theta, coef, L, it, converged, history = _kernels.lgn_descent(
        t,
        y,
        np.ascontiguousarray(theta, dtype=float),
        int(opts.max_iterations),
        float(opts.rel_tol),
        int(opts.patience),
        float(opts.learning_rate),
        float(opts.lr_growth),
        float(opts.lr_shrink),
        float(opts.lr_max),
        float(opts.beta1),
        float(opts.beta2),
        len(trace) * opts.abs_tol**2,
    )
    return _finish(trace, theta, coef, L, it, converged, history, opts)


def _finish(trace, theta, coef, L, it, converged, history, opts):
    tau = 1.0 / softplus(theta)
    order = np.argsort(tau, kind="stable")
    tau = tau[order]
    amps = coef[:-1][order]
    ptp = float(np.ptp(trace.voltages))
    if ptp < 10 * opts.quantization_floor:
        nrmse = None
    else:
        nrmse = math.sqrt(L / len(trace)) / ptp * 100.0
    ratios = tau[1:] / tau[:-1] - 1.0
    return LgnFit(
        tau=tau,
        amplitudes=amps,
        v_inf=float(coef[-1]),
        loss=float(L),
        nrmse=nrmse,
        iterations=it,
        ordering_violations=int(np.sum(ratios < opts.collapse_tol)),
        stiffness=float(tau[-1] / tau[0]),
        converged=bool(converged),
        loss_history=tuple(history),
    )
