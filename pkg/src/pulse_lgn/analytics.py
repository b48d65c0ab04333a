"""Rank tracking, batch QC statistics, prognosis scoring and Arrhenius fits."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import DomainError, ValidationError
from .impedance import FeatureVector, ridge_solve

K_B_EV = 8.617333262e-5  # Boltzmann constant, eV/K
ZERO_C = 273.15


# ----------------------------------------------------------------- ranks


def _ranks(x):
    return stats.rankdata(np.asarray(x, dtype=float), method="average")


def spearman(a, b) -> float:
    """Spearman rank correlation with average ranks for ties.

    Returns NaN when either input has no rank variance (correlation undefined).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValidationError("spearman needs two equal-length 1-D arrays")
    if a.size < 2:
        raise ValidationError("spearman needs at least two observations")
    ra = _ranks(a) - (a.size + 1) / 2
    rb = _ranks(b) - (b.size + 1) / 2
    den = math.sqrt(float(ra @ ra) * float(rb @ rb))
    if den == 0:
        return float("nan")
    return float(np.clip((ra @ rb) / den, -1.0, 1.0))


def percentile_ranks(x) -> np.ndarray:
    """Average ranks rescaled so the smallest maps to 0 and the largest to 100."""
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        raise ValidationError("percentile ranks need at least two values")
    return (_ranks(x) - 1) / (x.size - 1) * 100.0


# ------------------------------------------------------------- group tests


def _groups(groups, min_size):
    gs = [np.asarray(g, dtype=float).ravel() for g in groups]
    if len(gs) < 2:
        raise ValidationError("need at least two groups")
    for i, g in enumerate(gs):
        if g.size < min_size:
            raise ValidationError(f"group {i} has {g.size} values; need >= {min_size}")
    return gs


def kruskal_wallis(groups) -> tuple[float, float]:
    """Tie-corrected Kruskal-Wallis H and its chi-squared p-value."""
    gs = _groups(groups, 1)
    allv = np.concatenate(gs)
    N = allv.size
    if N < 3:
        raise ValidationError("Kruskal-Wallis needs at least three observations")
    ranks = _ranks(allv)
    _, counts = np.unique(allv, return_counts=True)
    correction = 1.0 - float(np.sum(counts**3 - counts)) / (N**3 - N)
    if correction == 0:
        return 0.0, 1.0
    H = 0.0
    start = 0
    for g in gs:
        r = ranks[start : start + g.size]
        H += r.sum() ** 2 / g.size
        start += g.size
    H = (12.0 / (N * (N + 1)) * H - 3.0 * (N + 1)) / correction
    H = max(H, 0.0)
    return float(H), float(stats.chi2.sf(H, len(gs) - 1))


def anova_oneway(groups) -> tuple[float, float]:
    """One-way ANOVA F statistic and p-value."""
    gs = _groups(groups, 2)
    allv = np.concatenate(gs)
    N, k = allv.size, len(gs)
    grand = allv.mean()
    ssb = sum(g.size * (g.mean() - grand) ** 2 for g in gs)
    ssw = sum(float(np.sum((g - g.mean()) ** 2)) for g in gs)
    msb = ssb / (k - 1)
    msw = ssw / (N - k)
    if msw == 0:
        if msb == 0:
            return 0.0, 1.0
        return float("inf"), 0.0
    F = msb / msw
    return float(F), float(stats.f.sf(F, k - 1, N - k))


# ---------------------------------------------------------------- k-means


@dataclass(frozen=True)
class Partition:
    low: tuple
    high: tuple
    low_mean: float
    high_mean: float
    sse: float
    single_cluster: bool = False


def _split_sse(v):
    """Within-cluster SSE for every contiguous split of sorted ``v``.

    Entry ``i`` puts ``v[:i+1]`` low and the rest high.
    """
    n = v.size
    c1 = np.cumsum(v)
    c2 = np.cumsum(v * v)
    i = np.arange(1, n)
    left = c2[:-1] - c1[:-1] ** 2 / i
    right = (c2[-1] - c2[:-1]) - (c1[-1] - c1[:-1]) ** 2 / (n - i)
    return left + right


def kmeans2(values, labels=None) -> Partition:
    """Two-cluster 1-D k-means.

    Lloyd iterations start from centers at min and max. In one dimension the
    optimal clusters are contiguous in sorted order, so the result is then
    checked against every split point and replaced if a split has lower SSE;
    the output is the global within-cluster SSE minimum.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size < 2:
        raise ValidationError("kmeans2 needs at least two values")
    labels = list(range(v.size)) if labels is None else list(labels)
    if len(labels) != v.size:
        raise ValidationError("labels and values differ in length")
    if np.all(v == v[0]):
        return Partition(tuple(labels), (), float(v[0]), float("nan"), 0.0, True)

    lo_c, hi_c = v.min(), v.max()
    assign = None
    for _ in range(100 * v.size):
        new = np.abs(v - hi_c) < np.abs(v - lo_c)
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        lo_c, hi_c = v[~assign].mean(), v[assign].mean()
    lloyd_sse = float(np.sum((v[~assign] - lo_c) ** 2) + np.sum((v[assign] - hi_c) ** 2))

    order = np.argsort(v, kind="stable")
    sv = v[order]
    sse = _split_sse(sv)
    # splits between equal values are not valid thresholds
    sse[sv[1:] == sv[:-1]] = np.inf
    best = int(np.argmin(sse))
    if sse[best] < lloyd_sse * (1 - 1e-12):
        threshold = sv[best]
        assign = v > threshold
    high_mask = assign
    low = tuple(labels[i] for i in range(v.size) if not high_mask[i])
    high = tuple(labels[i] for i in range(v.size) if high_mask[i])
    lm, hm = float(v[~high_mask].mean()), float(v[high_mask].mean())
    total = float(np.sum((v[~high_mask] - lm) ** 2) + np.sum((v[high_mask] - hm) ** 2))
    return Partition(low, high, lm, hm, total)


# ------------------------------------------------------------- Arrhenius


@dataclass(frozen=True)
class ArrheniusFit:
    e_a_mev: float
    ln_prefactor: float
    r2: float


def arrhenius_fit(temps_c, values) -> ArrheniusFit:
    """Least-squares ``ln(value) = ln A + E_a / (k_B T)``; ``E_a`` in meV."""
    T = np.asarray(temps_c, dtype=float) + ZERO_C
    y = np.asarray(values, dtype=float)
    if T.shape != y.shape or T.size < 3:
        raise ValidationError("Arrhenius fit needs >= 3 paired temperatures and values")
    if np.any(y <= 0):
        raise DomainError("Arrhenius values must be positive")
    if np.unique(T).size != T.size:
        raise ValidationError("temperatures must be distinct")
    if np.any(T <= 0):
        raise DomainError("temperatures must be above absolute zero")
    x = 1.0 / (K_B_EV * T)
    ly = np.log(y)
    xm, ym = x.mean(), ly.mean()
    sxx = float(np.sum((x - xm) ** 2))
    sxy = float(np.sum((x - xm) * (ly - ym)))
    syy = float(np.sum((ly - ym) ** 2))
    slope = sxy / sxx
    # constant input up to rounding: correlation undefined
    flat = syy <= ly.size * (1e-12 * max(1.0, abs(ym))) ** 2
    r2 = float("nan") if flat else min(1.0, max(0.0, sxy * sxy / (sxx * syy)))
    return ArrheniusFit(slope * 1000.0, float(ym - slope * xm), r2)


def migration_exponent(windows, taus) -> np.ndarray:
    """Piecewise log-log slopes of fitted time constant against window."""
    w = np.asarray(windows, dtype=float)
    t = np.asarray(taus, dtype=float)
    if w.shape != t.shape or w.size < 2:
        raise ValidationError("need >= 2 paired windows and time constants")
    if np.any(w <= 0) or np.any(t <= 0):
        raise DomainError("windows and time constants must be positive")
    if np.any(np.diff(w) <= 0):
        raise ValidationError("windows must be increasing")
    return np.diff(np.log(t)) / np.diff(np.log(w))


# --------------------------------------------------------------- histories


@dataclass(frozen=True)
class Checkpoint:
    checkpoint_index: int
    soh_percent: float
    capacity_ah: float
    features: FeatureVector


@dataclass(frozen=True)
class CellHistory:
    cell_id: str
    checkpoints: tuple

    def __post_init__(self):
        cps = tuple(self.checkpoints)
        idx = [c.checkpoint_index for c in cps]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValidationError(f"cell {self.cell_id}: checkpoint indices must increase")
        object.__setattr__(self, "checkpoints", cps)

    def __len__(self):
        return len(self.checkpoints)

    def series(self, name: str) -> np.ndarray:
        return np.array([_field(c, name) for c in self.checkpoints])

    @property
    def final_soh(self) -> float:
        return float(self.checkpoints[-1].soh_percent)


FIELDS = ("r_s", "tau1", "tau2", "tau3", "r1", "r2", "r3", "c1", "soh", "capacity")


def _field(cp: Checkpoint, name: str) -> float:
    f = cp.features
    if name == "soh":
        return cp.soh_percent
    if name == "capacity":
        return cp.capacity_ah
    if name == "r_s":
        return f.r_s
    if name == "c1":
        return f.c1
    if name[:-1] in ("tau", "r") and name[-1].isdigit():
        i = int(name[-1]) - 1
        arr = f.tau if name.startswith("tau") else f.r
        if 0 <= i < arr.size:
            return float(arr[i])
    raise ValidationError(f"unknown history field {name!r}; choose from {FIELDS}")


def ols_slope(y) -> float:
    y = np.asarray(y, dtype=float)
    x = np.arange(y.size, dtype=float)
    xc = x - x.mean()
    return float(xc @ (y - y.mean()) / (xc @ xc))


def early_slope(history: CellHistory, name: str, k: int = 3) -> float:
    """OLS slope of ``name`` over the first ``k`` diagnostics (unit spacing)."""
    if k < 2:
        raise ValidationError("early slope needs k >= 2")
    if len(history) < k:
        raise ValidationError(
            f"cell {history.cell_id} has {len(history)} checkpoints; need {k}"
        )
    return ols_slope(history.series(name)[:k])


def percentile_rank_curve(history: CellHistory, field_a: str, field_b: str):
    """Within-cell percentile ranks of two fields and their Spearman rho."""
    a = history.series(field_a)
    b = history.series(field_b)
    if a.size < 2:
        raise ValidationError("percentile-rank curve needs >= 2 checkpoints")
    return percentile_ranks(a), percentile_ranks(b), spearman(a, b)


# --------------------------------------------------------------- prognosis


@dataclass(frozen=True)
class PrognosisRow:
    gap_threshold: float
    n_pairs: int
    tau3_accuracy: float | None
    capacity_accuracy: float | None


def _score(pred_diff, truth_diff):
    if pred_diff == 0 or truth_diff == 0:
        return 0.5
    return 1.0 if (pred_diff > 0) == (truth_diff > 0) else 0.0


def pairwise_prognosis(
    histories,
    k: int = 3,
    cap_tol_ah: float = 0.1,
    slope_tol: float = 0.02,
    gap_thresholds=(0.0, 5.0, 10.0, 15.0, 20.0),
) -> list[PrognosisRow]:
    """Capacity-matched pairwise ranking accuracy of early-slope predictors.

    Both predictors assert that the pair member with the larger early slope
    (of tau_3, or of capacity) ends with the higher SOH; zero slope difference
    scores 0.5.
    """
    hs = list(histories)
    info = []
    for h in hs:
        if len(h) < k:
            raise ValidationError(f"cell {h.cell_id} has fewer than {k} checkpoints")
        cap = h.series("capacity")
        info.append(
            (
                float(cap[0]),
                early_slope(h, "capacity", k),
                early_slope(h, "tau3", k),
                h.final_soh,
            )
        )
    pairs = []
    for i, j in itertools.combinations(range(len(hs)), 2):
        a, b = info[i], info[j]
        if abs(a[0] - b[0]) <= cap_tol_ah and abs(a[1] - b[1]) <= slope_tol:
            dsoh = a[3] - b[3]
            pairs.append((abs(dsoh), _score(a[2] - b[2], dsoh), _score(a[1] - b[1], dsoh)))
    rows = []
    for gap in gap_thresholds:
        kept = [p for p in pairs if p[0] >= gap]
        if not kept:
            rows.append(PrognosisRow(float(gap), 0, None, None))
            continue
        rows.append(
            PrognosisRow(
                float(gap),
                len(kept),
                float(np.mean([p[1] for p in kept])),
                float(np.mean([p[2] for p in kept])),
            )
        )
    return rows


@dataclass(frozen=True)
class SohRegressionReport:
    feature_set: str
    mae: float
    spearman: float
    parity: tuple  # (cell_id, true_soh, predicted_soh)


def prognosis_features(history: CellHistory, k: int, feature_set: str) -> np.ndarray:
    if feature_set == "tau":
        names = ("tau1", "tau2", "tau3")
    elif feature_set == "capacity":
        names = ("capacity",)
    else:
        raise ValidationError(f"unknown feature set {feature_set!r}")
    vals = [history.series(n)[k - 1] for n in names]
    slopes = [early_slope(history, n, k) for n in names]
    return np.array(vals + slopes)


def soh_regression(histories, k: int = 3, feature_set: str = "tau", lam="gcv") -> SohRegressionReport:
    """Leave-one-cell-out ridge prediction of final SOH from early features."""
    hs = list(histories)
    if len(hs) < 3:
        raise ValidationError("SOH regression needs at least three cells")
    X = np.array([prognosis_features(h, k, feature_set) for h in hs])
    y = np.array([h.final_soh for h in hs])
    pred = np.empty_like(y)
    for i in range(len(hs)):
        train = np.arange(len(hs)) != i
        model = ridge_solve(X[train], y[train], lam)
        pred[i] = model.predict(X[i])[0, 0]
    parity = tuple((h.cell_id, float(t), float(p)) for h, t, p in zip(hs, y, pred))
    return SohRegressionReport(
        feature_set, float(np.mean(np.abs(pred - y))), spearman(y, pred), parity
    )
