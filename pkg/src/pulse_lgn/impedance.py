"""ECM impedance and pulse-feature to Nyquist ridge reconstruction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .lgn import LgnFit, RelaxationTrace

LAMBDA_GRID = np.logspace(-6, 2, 33)


@dataclass(frozen=True)
class ImpedanceSpectrum:
    freqs: np.ndarray
    z_re: np.ndarray
    z_im: np.ndarray

    def __post_init__(self):
        f, re, im = (np.atleast_1d(np.asarray(a, dtype=float)) for a in (self.freqs, self.z_re, self.z_im))
        if not (f.shape == re.shape == im.shape) or f.ndim != 1 or f.size < 1:
            raise ValidationError("freqs, z_re and z_im must be equal-length 1-D arrays")
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(re)) and np.all(np.isfinite(im))):
            raise ValidationError("impedance spectrum contains non-finite values")
        if np.any(f <= 0):
            raise ValidationError("frequencies must be positive")
        if f.size > 1:
            d = np.diff(f)
            if not (np.all(d > 0) or np.all(d < 0)):
                raise ValidationError("frequencies must be strictly monotone")
        object.__setattr__(self, "freqs", f)
        object.__setattr__(self, "z_re", re)
        object.__setattr__(self, "z_im", im)

    @property
    def z(self) -> np.ndarray:
        return self.z_re + 1j * self.z_im

    @classmethod
    def from_complex(cls, freqs, z) -> "ImpedanceSpectrum":
        z = np.asarray(z, dtype=complex)
        return cls(freqs, z.real, z.imag)


@dataclass(frozen=True)
class FeatureVector:
    """Series resistance plus three (time constant, resistance) pairs."""

    r_s: float
    tau: np.ndarray
    r: np.ndarray
    cell_id: str = ""
    checkpoint_index: int = 0

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=float)
        r = np.asarray(self.r, dtype=float)
        if tau.shape != r.shape:
            raise ValidationError("tau and r must have the same length")
        if not np.all(tau > 0) or np.any(np.diff(tau) < 0):
            raise ValidationError("feature time constants must be positive and ascending")
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "r_s", float(self.r_s))

    @property
    def c1(self) -> float:
        return float(self.tau[0] / self.r[0])

    def as_array(self) -> np.ndarray:
        """``[r_s, tau_1.., r_1..]``: the regression input row."""
        return np.concatenate([[self.r_s], self.tau, self.r])


def ecm_impedance(r0: float, pairs, freqs) -> ImpedanceSpectrum:
    """``Z = r0 + sum R_i / (1 + j w tau_i)`` with ``w = 2 pi f``."""
    f = np.atleast_1d(np.asarray(freqs, dtype=float))
    if not np.all(f > 0):
        raise ValidationError("frequencies must be positive")
    pairs = np.asarray(pairs, dtype=float).reshape(-1, 2)
    if not np.all(pairs[:, 1] > 0):
        raise ValidationError("time constants must be positive")
    w = 2 * np.pi * f
    z = r0 + (pairs[:, 0] / (1 + 1j * np.outer(w, pairs[:, 1]))).sum(axis=1)
    return ImpedanceSpectrum.from_complex(f, z)


def features_from_fit(fit: LgnFit, trace: RelaxationTrace) -> FeatureVector:
    cur = abs(trace.pulse_current)
    if not cur > 0:
        raise ValidationError("pulse current must be non-zero to derive resistances")
    if not np.isfinite(trace.pre_step_voltage):
        raise ValidationError("pre-step voltage is required for the series resistance")
    r_s = abs(trace.pre_step_voltage - trace.voltages[0]) / cur
    return FeatureVector(
        r_s=r_s,
        tau=fit.tau,
        r=np.abs(fit.amplitudes) / cur,
        cell_id=trace.meta.cell_id,
        checkpoint_index=trace.meta.checkpoint_index,
    )


# ---------------------------------------------------------------- ridge


@dataclass(frozen=True)
class RidgeModel:
    """Per-target linear maps on z-scored inputs.

    ``weights`` has shape (n_features, n_targets) in standardized units;
    targets are ordered ``[Re(f_0..f_m), Im(f_0..f_m)]`` for spectra.
    """

    mean: np.ndarray
    scale: np.ndarray
    weights: np.ndarray
    intercept: np.ndarray
    lam: float
    freqs: np.ndarray | None = None

    @property
    def coef(self) -> np.ndarray:
        """Weights in original feature units."""
        return self.weights / self.scale[:, None]

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return ((X - self.mean) / self.scale) @ self.weights + self.intercept

    def predict_spectra(self, features) -> list[ImpedanceSpectrum]:
        if self.freqs is None:
            raise ValidationError("model was not trained on spectra")
        Y = self.predict(_feature_matrix(features))
        m = self.freqs.size
        return [ImpedanceSpectrum(self.freqs, row[:m], row[m:]) for row in Y]


def _standardize(X):
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return mean, scale, (X - mean) / scale


def gcv_lambda(Z, Yc, grid=LAMBDA_GRID) -> float:
    """Generalized cross-validation choice of ridge strength.

    ``Z`` is the standardized design, ``Yc`` the centered targets; the score is
    summed over all targets so one strength serves every frequency.
    """
    n = Z.shape[0]
    U, s, _ = np.linalg.svd(Z, full_matrices=False)
    UtY = U.T @ Yc
    resid0 = float(np.sum(Yc**2) - np.sum(UtY**2))
    best, best_score = float(grid[0]), np.inf
    for lam in grid:
        shrink = s**2 / (s**2 + lam)
        # intercept consumes one degree of freedom
        dof = n - 1 - shrink.sum()
        if dof <= 0:
            continue
        rss = resid0 + float(np.sum(((1 - shrink)[:, None] * UtY) ** 2))
        score = n * rss / dof**2
        if score < best_score:
            best, best_score = float(lam), score
    return best


def ridge_solve(X, Y, lam="gcv") -> RidgeModel:
    """Closed-form ridge regression with intercept on z-scored inputs."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.shape[0] != Y.shape[0]:
        raise ValidationError("feature and target row counts differ")
    if X.shape[0] < 2:
        raise ValidationError("ridge regression needs at least two training rows")
    mean, scale, Z = _standardize(X)
    ybar = Y.mean(axis=0)
    Yc = Y - ybar
    if isinstance(lam, str):
        if lam != "gcv":
            raise ValidationError(f"unknown lambda policy {lam!r}")
        lam = gcv_lambda(Z, Yc)
    lam = float(lam)
    if lam < 0:
        raise ValidationError("lambda must be >= 0")
    A = Z.T @ Z + lam * np.eye(Z.shape[1])
    W, *_ = np.linalg.lstsq(A, Z.T @ Yc, rcond=None)
    return RidgeModel(mean, scale, W, ybar, lam)


def _feature_matrix(features) -> np.ndarray:
    return np.array([fv.as_array() for fv in features])


def _target_matrix(spectra):
    ref = spectra[0].freqs
    for i, s in enumerate(spectra):
        if s.freqs.shape != ref.shape or not np.allclose(s.freqs, ref, rtol=1e-12, atol=0):
            raise ValidationError(f"spectrum {i} is on a different frequency grid")
    return ref, np.array([np.concatenate([s.z_re, s.z_im]) for s in spectra])


def ridge_fit(features, spectra, lam="gcv") -> RidgeModel:
    """Fit per-frequency linear maps from feature vectors to Re/Im impedance."""
    if len(features) != len(spectra):
        raise ValidationError("features and spectra differ in length")
    freqs, Y = _target_matrix(spectra)
    X = _feature_matrix(features)
    if X.shape[0] < X.shape[1] + 1:
        raise ValidationError(
            f"{X.shape[0]} training rows cannot identify {X.shape[1]} features plus intercept"
        )
    model = ridge_solve(X, Y, lam)
    return RidgeModel(model.mean, model.scale, model.weights, model.intercept, model.lam, freqs)


def spectrum_mape(pred: ImpedanceSpectrum, meas: ImpedanceSpectrum) -> float:
    """Mean over frequencies of ``|Z_pred - Z_meas| / |Z_meas|``, percent."""
    return float(np.mean(np.abs(pred.z - meas.z) / np.abs(meas.z)) * 100.0)


def r_squared(pred, truth) -> float:
    pred = np.asarray(pred, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    ss_tot = np.sum((truth - truth.mean()) ** 2)
    ss_res = np.sum((truth - pred) ** 2)
    if ss_tot == 0:
        return 1.0 if ss_res == 0 else float("-inf")
    return float(1.0 - ss_res / ss_tot)


@dataclass(frozen=True)
class ReconstructionReport:
    mode: str
    predictions: dict  # cell_id -> list of (checkpoint_index, ImpedanceSpectrum)
    cell_mape: dict  # cell_id -> percent
    r2_re: float
    r2_im: float
    lambdas: tuple

    @property
    def median_mape(self) -> float:
        return float(np.median(list(self.cell_mape.values())))


def loocv_reconstruct(dataset, holdout: str = "cell", lam="gcv") -> ReconstructionReport:
    """Leave-one-cell-out (or cell-plus-aging-state) Nyquist reconstruction.

    ``dataset`` is a sequence of ``(FeatureVector, ImpedanceSpectrum)``. In
    ``"cell_plus_checkpoint"`` mode each test row is predicted from a model that
    saw neither its cell nor any row at its checkpoint index.
    """
    if holdout not in ("cell", "cell_plus_checkpoint"):
        raise ValidationError(f"unknown holdout mode {holdout!r}")
    rows = list(dataset)
    if not rows:
        raise ValidationError("empty dataset")
    feats = [fv for fv, _ in rows]
    freqs, Y = _target_matrix([sp for _, sp in rows])
    X = _feature_matrix(feats)
    cells = np.array([fv.cell_id for fv in feats])
    ckpts = np.array([fv.checkpoint_index for fv in feats])
    uniq = sorted(set(cells.tolist()))
    if len(uniq) < 3:
        raise ValidationError("reconstruction needs at least three distinct cells")

    if holdout == "cell":
        folds = [(np.flatnonzero(cells == c), cells != c) for c in uniq]
    else:
        folds = [
            (np.array([i]), (cells != cells[i]) & (ckpts != ckpts[i]))
            for i in range(len(rows))
        ]

    Yhat = np.empty_like(Y)
    lambdas = []
    for test_idx, train_mask in folds:
        train_mask = train_mask.copy()
        if not train_mask.any():
            raise ValidationError(f"fold for rows {test_idx.tolist()} has an empty training set")
        assert not np.isin(cells[train_mask], cells[test_idx]).any()
        if holdout == "cell_plus_checkpoint":
            assert not np.isin(ckpts[train_mask], ckpts[test_idx]).any()
        model = ridge_solve(X[train_mask], Y[train_mask], lam)
        lambdas.append(model.lam)
        Yhat[test_idx] = model.predict(X[test_idx])

    m = freqs.size
    Zhat = Yhat[:, :m] + 1j * Yhat[:, m:]
    Z = Y[:, :m] + 1j * Y[:, m:]
    rel = np.abs(Zhat - Z) / np.abs(Z) * 100.0
    predictions, cell_mape = {}, {}
    for c in uniq:
        idx = np.flatnonzero(cells == c)
        order = idx[np.argsort(ckpts[idx], kind="stable")]
        predictions[c] = [
            (int(ckpts[i]), ImpedanceSpectrum(freqs, Yhat[i, :m], Yhat[i, m:])) for i in order
        ]
        cell_mape[c] = float(rel[idx].mean())
    return ReconstructionReport(
        mode=holdout,
        predictions=predictions,
        cell_mape=cell_mape,
        r2_re=r_squared(Yhat[:, :m], Y[:, :m]),
        r2_im=r_squared(Yhat[:, m:], Y[:, m:]),
        lambdas=tuple(lambdas),
    )
