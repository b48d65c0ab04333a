"""Unconstrained multi-exponential curve fitting, kept as a comparator.

Every time constant and amplitude is an independent raw scalar. The objective
is the same sum of squared residuals as :func:`pulse_lgn.lgn.loss`, and the
optimizer is the same accept/reject Adam loop; only the parameterization
differs. Non-physical outcomes (``tau <= 0``) are reported, never repaired.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels, lgn
from .errors import ValidationError
from .lgn import FitOptions, RelaxationTrace


@dataclass(frozen=True)
class MultiExpFit:
    tau: np.ndarray
    amplitudes: np.ndarray
    v_inf: float
    loss: float
    converged: bool
    seed: int
    iterations: int = 0

    @property
    def physical(self) -> bool:
        return bool(np.all(self.tau > 0))

    @property
    def sanitized_tau(self) -> np.ndarray:
        """Positive time constants, ascending; non-physical entries dropped."""
        return np.sort(self.tau[self.tau > 0])


def sse(tau, amplitudes, v_inf, times, voltages) -> float:
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        pred = np.exp(-np.outer(times, 1.0 / np.asarray(tau, float))) @ amplitudes + v_inf
        r = voltages - pred
        return float(r @ r)


def _random_init(trace, n_states, rng):
    t, y = trace.times, trace.voltages
    dt = float(np.min(np.diff(t)))
    T = float(t[-1])
    tau = np.exp(rng.uniform(np.log(dt), np.log(T), n_states))
    coef = lgn._project(t, y, 1.0 / tau)
    return np.concatenate([tau, coef])


def curvefit(
    trace: RelaxationTrace,
    n_states: int = 3,
    seed: int = 0,
    opts: FitOptions | None = None,
    init: np.ndarray | None = None,
) -> MultiExpFit:
    """Adam over raw ``(tau, v0, v_inf)`` from a seeded random start.

    ``init`` overrides the random start with an explicit
    ``[tau..., v0..., v_inf]`` vector.
    """
    opts = opts or FitOptions()
    lgn._check_fit_inputs(trace, n_states)
    t, y = trace.times, trace.voltages
    n = n_states
    if init is None:
        x = _random_init(trace, n, np.random.default_rng(seed))
    else:
        x = np.asarray(init, dtype=float).copy()
        if x.size != 2 * n + 1:
            raise ValidationError(f"init must hold {2 * n + 1} values")
    # per-parameter step scale: seconds for tau, volts for amplitudes/offset
    span = max(float(np.ptp(y)), opts.quantization_floor)
    scale = np.concatenate([np.full(n, float(t[-1])), np.full(n + 1, span)])

    x, L, it, converged = _kernels.raw_descent(
        t,
        y,
        x,
        scale,
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
    return MultiExpFit(
        x[:n].copy(), x[n : 2 * n].copy(), float(x[-1]), float(L), bool(converged), seed, int(it)
    )


@dataclass(frozen=True)
class StabilityReport:
    lgn_cv: np.ndarray
    curvefit_cv: np.ndarray
    lgn_nonphysical: float
    curvefit_nonphysical: float
    lgn_tau: np.ndarray
    curvefit_tau: np.ndarray


def _cv(samples):
    """Coefficient of variation per column, ignoring NaN rows."""
    out = []
    for col in samples.T:
        col = col[np.isfinite(col)]
        if col.size < 2:
            out.append(np.nan)
            continue
        mu = col.mean()
        out.append(float(col.std(ddof=1) / abs(mu)) if mu != 0 else np.inf)
    return np.array(out)


def stability_study(
    trace: RelaxationTrace,
    n_states: int = 3,
    n_seeds: int = 20,
    noise_sigma: float = 0.0,
    seed: int = 0,
    opts: FitOptions | None = None,
) -> StabilityReport:
    """Paired dispersion study of both fitters.

    Draw ``i`` adds Gaussian noise of ``noise_sigma`` (seeded by ``seed + i``)
    to the trace; LGN and curve fitting (initialization seed ``seed + i``) then
    see the identical noisy trace. Curve-fit runs yielding fewer than
    ``n_states`` positive time constants contribute NaN to the sorted columns.
    """
    if n_seeds < 2:
        raise ValidationError("stability study needs at least two seeds")
    lgn_rows, cf_rows = [], []
    lgn_bad = cf_bad = 0
    for i in range(n_seeds):
        rng = np.random.default_rng(seed + i)
        noisy = trace
        if noise_sigma > 0:
            noisy = RelaxationTrace(
                trace.times,
                trace.voltages + rng.normal(0.0, noise_sigma, len(trace)),
                trace.pulse_current,
                trace.pre_step_voltage,
                trace.meta,
            )
        lf = lgn.fit(noisy, n_states, opts=opts)
        cf = curvefit(noisy, n_states, seed=seed + i, opts=opts)
        lgn_bad += int(not np.all(lf.tau > 0))
        cf_bad += int(not cf.physical)
        lgn_rows.append(lf.tau)
        st = cf.sanitized_tau
        cf_rows.append(np.concatenate([st, np.full(n_states - st.size, np.nan)]))
    lgn_tau = np.array(lgn_rows)
    cf_tau = np.array(cf_rows)
    return StabilityReport(
        lgn_cv=_cv(lgn_tau),
        curvefit_cv=_cv(cf_tau),
        lgn_nonphysical=lgn_bad / n_seeds,
        curvefit_nonphysical=cf_bad / n_seeds,
        lgn_tau=lgn_tau,
        curvefit_tau=cf_tau,
    )
