"""Experiment orchestration behind the ``pulse-lgn`` command line.

Every command is a pure function of the dataset and :class:`RunConfig`; it
returns a report dict and writes ``<command>.json`` plus flat CSV tables.
Wall-clock metadata goes to ``run_meta.json`` only.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analytics, baseline, drt, lgn
from .errors import PulseLgnError, ValidationError
from .impedance import features_from_fit, loocv_reconstruct
from .io import CellData, CheckpointData, Dataset, write_csv, write_dataset, write_json

log = logging.getLogger(__name__)

REPORT_SCHEMA = "1.0"
TAU_FIELDS = ("tau1", "tau2", "tau3")
R_FIELDS = ("r1", "r2", "r3")


@dataclass(frozen=True)
class RunConfig:
    n_states: int = 3
    window_s: float | None = None
    fit: lgn.FitOptions = field(default_factory=lgn.FitOptions)
    lam: object = "gcv"
    k: int = 3
    cap_tol_ah: float = 0.1
    slope_tol_ah: float = 0.02
    gap_thresholds: tuple = (0.0, 5.0, 10.0, 15.0, 20.0)
    seed: int = 0
    out_dir: str = "pulse_lgn_out"
    workers: int = 1
    windows: tuple = (36.0, 360.0, 3600.0)
    mode: str = "loocv"
    r_pulse_lag_s: float = 10.0
    arrhenius_soc: float = 50.0
    soc_tol: float = 1.0

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)


def load_config(path=None, **overrides) -> RunConfig:
    """RunConfig from an optional JSON file, then keyword overrides."""
    raw = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ValidationError(f"config file not found: {p}")
        try:
            raw = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{p}: invalid JSON ({exc.msg}, line {exc.lineno})") from None
    raw.update({k: v for k, v in overrides.items() if v is not None})
    names = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
    if "fit" in raw and isinstance(raw["fit"], dict):
        fit_names = {f.name for f in dataclasses.fields(lgn.FitOptions)}
        bad = sorted(set(raw["fit"]) - fit_names)
        if bad:
            raise ValidationError(f"unknown fit options: {', '.join(bad)}")
        raw["fit"] = lgn.FitOptions(**raw["fit"])
    for key in ("gap_thresholds", "windows"):
        if key in raw:
            raw[key] = tuple(float(x) for x in raw[key])
    cfg = RunConfig(**raw)
    if cfg.n_states < 1:
        raise ValidationError("n_states must be >= 1")
    if cfg.mode == "double-blind":
        cfg = cfg.replace(mode="double_blind")
    if cfg.mode not in ("loocv", "double_blind"):
        raise ValidationError(f"mode must be loocv or double_blind, not {cfg.mode!r}")
    if not (cfg.lam == "gcv" or isinstance(cfg.lam, (int, float))):
        raise ValidationError("lam must be 'gcv' or a number")
    return cfg


# ---------------------------------------------------------------- fitting


@dataclass(frozen=True)
class FitRow:
    cell_id: str
    checkpoint_index: int
    fit: lgn.LgnFit | None = None
    features: object = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def _window(trace, window_s):
    return trace if window_s is None else trace.truncated(window_s)


def fit_cell(cell: CellData, n_states: int, opts: lgn.FitOptions, window_s=None) -> list[FitRow]:
    """Fit a cell's checkpoints in order, warm-starting from the previous one."""
    rows = []
    warm = None
    for cp in cell.checkpoints:
        try:
            tr = _window(cp.trace, window_s)
            res = lgn.fit(tr, n_states, warm_start=warm, opts=opts)
            feats = None
            if n_states == 3 and abs(tr.pulse_current) > 0 and np.isfinite(tr.pre_step_voltage):
                feats = features_from_fit(res, tr)
            rows.append(FitRow(cell.cell_id, cp.checkpoint_index, res, feats))
            warm = res.params
        except PulseLgnError as exc:
            log.warning("fit failed for %s/%d: %s", cell.cell_id, cp.checkpoint_index, exc)
            rows.append(FitRow(cell.cell_id, cp.checkpoint_index, error=str(exc)))
            warm = None
    return rows


def _fit_cell_args(args):
    return fit_cell(*args)


def fit_dataset(dataset: Dataset, cfg: RunConfig, window_s="config") -> list[FitRow]:
    """Fit every trace; output ordered by (cell_id, checkpoint_index)."""
    w = cfg.window_s if window_s == "config" else window_s
    jobs = [(c, cfg.n_states, cfg.fit, w) for c in dataset.cells]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            per_cell = list(pool.map(_fit_cell_args, jobs))
    else:
        per_cell = [_fit_cell_args(j) for j in jobs]
    rows = [r for cell_rows in per_cell for r in cell_rows]
    rows.sort(key=lambda r: (r.cell_id, r.checkpoint_index))
    return rows


def _fit_record(row: FitRow) -> dict:
    rec = {"cell_id": row.cell_id, "checkpoint_index": row.checkpoint_index}
    if not row.ok:
        rec.update(status="failed", error=row.error)
        return rec
    f = row.fit
    rec.update(
        status="ok",
        tau=f.tau,
        amplitudes=f.amplitudes,
        v_inf=f.v_inf,
        loss=f.loss,
        nrmse=f.nrmse,
        iterations=f.iterations,
        converged=f.converged,
        ordering_violations=f.ordering_violations,
        stiffness=f.stiffness,
    )
    if row.features is not None:
        fv = row.features
        rec["features"] = {"r_s": fv.r_s, "tau": fv.tau, "r": fv.r, "c1": fv.c1}
    return rec


def _out(cfg) -> Path:
    p = Path(cfg.out_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _header(command, cfg, **extra):
    rep = {"schema_version": REPORT_SCHEMA, "command": command, "n_states": cfg.n_states}
    rep.update(extra)
    return rep


def _close(report, dataset, n_failed):
    """Attach load-time errors and the failure count."""
    report["ingest_errors"] = [
        {"cell_id": c, "checkpoint_index": k, "error": m} for c, k, m in dataset.errors
    ]
    report["failures"] = int(n_failed) + len(dataset.errors)
    return report


def cmd_fit(dataset: Dataset, cfg: RunConfig) -> dict:
    rows = fit_dataset(dataset, cfg)
    report = _header("fit", cfg, window_s=cfg.window_s)
    report["results"] = [_fit_record(r) for r in rows]
    _close(report, dataset, sum(not r.ok for r in rows))
    out = _out(cfg)
    write_json(out / "fit.json", report)
    n = cfg.n_states
    header = ["cell_id", "checkpoint_index", "status"]
    header += [f"tau{i + 1}_s" for i in range(n)] + [f"amp{i + 1}_v" for i in range(n)]
    header += ["v_inf_v", "nrmse_pct", "r_s_ohm"] + [f"r{i + 1}_ohm" for i in range(n)]
    table = []
    for r in rows:
        if not r.ok:
            table.append([r.cell_id, r.checkpoint_index, "failed"] + [None] * (len(header) - 3))
            continue
        f = r.fit
        fv = r.features
        table.append(
            [r.cell_id, r.checkpoint_index, "ok", *f.tau, *f.amplitudes, f.v_inf, f.nrmse]
            + ([fv.r_s, *fv.r] if fv is not None else [None] * (n + 1))
        )
    write_csv(out / "fit.csv", header, table)
    return report


# ------------------------------------------------------------- histories


def _histories(dataset, rows, need_capacity=False):
    by_key = {(r.cell_id, r.checkpoint_index): r for r in rows}
    out = []
    for cell in dataset.cells:
        cps = []
        for cp in cell.checkpoints:
            r = by_key.get((cell.cell_id, cp.checkpoint_index))
            if r is None or not r.ok or r.features is None or cp.soh_percent is None:
                continue
            if need_capacity and cp.capacity_ah is None:
                continue
            cap = cp.capacity_ah if cp.capacity_ah is not None else float("nan")
            cps.append(analytics.Checkpoint(cp.checkpoint_index, cp.soh_percent, cap, r.features))
        if cps:
            out.append(analytics.CellHistory(cell.cell_id, tuple(cps)))
    return out


def _require_three_states(cfg, command):
    if cfg.n_states != 3:
        raise ValidationError(f"{command} uses the seven-feature vector and needs n_states = 3")


def cmd_track(dataset: Dataset, cfg: RunConfig) -> dict:
    _require_three_states(cfg, "track")
    rows = fit_dataset(dataset, cfg)
    hists = [h for h in _histories(dataset, rows) if len(h) >= 2]
    if not hists:
        raise ValidationError("track needs cells with >= 2 fitted checkpoints and soh_percent")
    fields = ("r_s",) + TAU_FIELDS + R_FIELDS + ("c1",)
    per_cell = []
    curve = []
    for h in hists:
        soh = h.series("soh")
        rec = {"cell_id": h.cell_id, "n_checkpoints": len(h)}
        for f in fields:
            rec[f] = analytics.spearman(h.series(f), soh)
        per_cell.append(rec)
        pa, pb, _ = analytics.percentile_rank_curve(h, "tau1", "soh")
        for cp, a, b in zip(h.checkpoints, pa, pb):
            curve.append([h.cell_id, cp.checkpoint_index, a, b])
    summary = {}
    for f in fields:
        vals = np.array([abs(r[f]) for r in per_cell if np.isfinite(r[f])])
        summary[f] = {
            "n_cells": int(vals.size),
            "median_abs_rho": float(np.median(vals)) if vals.size else None,
            "q25_abs_rho": float(np.percentile(vals, 25)) if vals.size else None,
            "q75_abs_rho": float(np.percentile(vals, 75)) if vals.size else None,
        }
    report = _header("track", cfg, window_s=cfg.window_s, per_cell=per_cell, summary=summary)
    _close(report, dataset, sum(not r.ok for r in rows))
    out = _out(cfg)
    write_json(out / "track.json", report)
    write_csv(
        out / "track_spearman.csv",
        ["cell_id", "n_checkpoints", *fields],
        [[r["cell_id"], r["n_checkpoints"], *(r[f] for f in fields)] for r in per_cell],
    )
    write_csv(out / "track_percentile_rank.csv", ["cell_id", "checkpoint_index", "tau1_pct", "soh_pct"], curve)
    return report


def cmd_reconstruct(dataset: Dataset, cfg: RunConfig) -> dict:
    _require_three_states(cfg, "reconstruct")
    rows = fit_dataset(dataset, cfg)
    by_key = {(r.cell_id, r.checkpoint_index): r for r in rows}
    pairs = []
    for cell in dataset.cells:
        for cp in cell.checkpoints:
            r = by_key[(cell.cell_id, cp.checkpoint_index)]
            if r.ok and r.features is not None and cp.spectrum is not None:
                pairs.append((r.features, cp.spectrum))
    if not pairs:
        raise ValidationError("reconstruct needs checkpoints with both a fit and eis_path")
    holdout = "cell" if cfg.mode == "loocv" else "cell_plus_checkpoint"
    rep = loocv_reconstruct(pairs, holdout, cfg.lam)
    meas = {(fv.cell_id, fv.checkpoint_index): sp for fv, sp in pairs}
    table = []
    for cid, preds in rep.predictions.items():
        for k, sp in preds:
            m = meas[(cid, k)]
            for i, f in enumerate(sp.freqs):
                table.append([cid, k, f, m.z_re[i], m.z_im[i], sp.z_re[i], sp.z_im[i]])
    report = _header(
        "reconstruct",
        cfg,
        window_s=cfg.window_s,
        mode=cfg.mode,
        n_rows=len(pairs),
        cell_mape=rep.cell_mape,
        median_mape=rep.median_mape,
        mean_mape=float(np.mean(list(rep.cell_mape.values()))),
        r2_re=rep.r2_re,
        r2_im=rep.r2_im,
        lambdas=list(rep.lambdas),
    )
    _close(report, dataset, sum(not r.ok for r in rows))
    out = _out(cfg)
    write_json(out / "reconstruct.json", report)
    write_csv(
        out / "reconstruct_nyquist.csv",
        ["cell_id", "checkpoint_index", "freq_hz", "z_re_meas", "z_im_meas", "z_re_pred", "z_im_pred"],
        table,
    )
    return report


def r_pulse(trace, v_inf: float, lag_s: float) -> float:
    """Pulse resistance convention: ``|V(lag) - V_inf| / |I|``, V interpolated."""
    cur = abs(trace.pulse_current)
    if not cur > 0:
        raise ValidationError("pulse resistance needs a non-zero pulse current")
    v = float(np.interp(trace.times[0] + lag_s, trace.times, trace.voltages))
    return abs(v - v_inf) / cur


def cmd_qc(dataset: Dataset, cfg: RunConfig) -> dict:
    """Batch QC on each cell's first checkpoint."""
    cells = [c for c in dataset.cells if c.checkpoints]
    if any(c.batch is None for c in cells):
        raise ValidationError("qc needs a batch label on every cell")
    first = Dataset(tuple(CellData(c.cell_id, c.checkpoints[:1], c.batch, c.channel) for c in cells), dataset.errors)
    rows = fit_dataset(first, cfg)
    per_cell = []
    for i, (cell, row) in enumerate(zip(first.cells, rows)):
        rec = {"cell_id": cell.cell_id, "batch": cell.batch, "channel": cell.channel}
        if not row.ok:
            rec.update(status="failed", error=row.error)
            per_cell.append(rec)
            continue
        tr = _window(cell.checkpoints[0].trace, cfg.window_s)
        cf = baseline.curvefit(tr, cfg.n_states, seed=cfg.seed + i, opts=cfg.fit)
        st = cf.sanitized_tau
        rec.update(
            status="ok",
            lgn_tau1=float(row.fit.tau[0]),
            curvefit_tau1=float(st[0]) if st.size else None,
            curvefit_physical=cf.physical,
            r_pulse=r_pulse(tr, row.fit.v_inf, cfg.r_pulse_lag_s) if abs(tr.pulse_current) > 0 else None,
        )
        per_cell.append(rec)
    ok = [r for r in per_cell if r["status"] == "ok"]
    batches = sorted({r["batch"] for r in ok})
    lgn_groups = [[r["lgn_tau1"] for r in ok if r["batch"] == b] for b in batches]
    cf_groups = [[r["curvefit_tau1"] for r in ok if r["batch"] == b and r["curvefit_tau1"] is not None] for b in batches]
    batch_rows = []
    for b, lg, cg in zip(batches, lgn_groups, cf_groups):
        batch_rows.append(
            {
                "batch": b,
                "n": len(lg),
                "lgn_tau1_mean": float(np.mean(lg)),
                "lgn_tau1_sd": float(np.std(lg, ddof=1)) if len(lg) > 1 else None,
                "curvefit_tau1_mean": float(np.mean(cg)) if cg else None,
            }
        )
    report = _header("qc", cfg, window_s=cfg.window_s, per_cell=per_cell, batches=batch_rows)
    if len(batches) >= 2:
        part = analytics.kmeans2([r["lgn_tau1_mean"] for r in batch_rows], batches)
        report["kmeans"] = {
            "low": list(part.low),
            "high": list(part.high),
            "low_mean": part.low_mean,
            "high_mean": part.high_mean,
            "single_cluster": part.single_cluster,
        }
        report["kruskal_lgn"] = dict(zip(("H", "p"), analytics.kruskal_wallis(lgn_groups)))
        cg_ok = [g for g in cf_groups if g]
        if len(cg_ok) >= 2:
            report["kruskal_curvefit"] = dict(zip(("H", "p"), analytics.kruskal_wallis(cg_ok)))
    channels = sorted({r["channel"] for r in ok if r["channel"] is not None})
    if len(channels) >= 2:
        ch_groups = [[r["lgn_tau1"] for r in ok if r["channel"] == ch] for ch in channels]
        if all(len(g) >= 2 for g in ch_groups):
            report["anova_channel"] = dict(zip(("F", "p"), analytics.anova_oneway(ch_groups)))
    rp = [(r["lgn_tau1"], r["r_pulse"]) for r in ok if r["r_pulse"] is not None]
    if len(rp) >= 2:
        report["spearman_tau1_r_pulse"] = analytics.spearman([a for a, _ in rp], [b for _, b in rp])
    _close(report, dataset, sum(r["status"] != "ok" for r in per_cell))
    out = _out(cfg)
    write_json(out / "qc.json", report)
    write_csv(
        out / "qc_cells.csv",
        ["cell_id", "batch", "channel", "lgn_tau1", "curvefit_tau1", "r_pulse"],
        [[r["cell_id"], r["batch"], r["channel"], r.get("lgn_tau1"), r.get("curvefit_tau1"), r.get("r_pulse")] for r in per_cell],
    )
    write_csv(
        out / "qc_batches.csv",
        ["batch", "n", "lgn_tau1_mean", "lgn_tau1_sd", "curvefit_tau1_mean"],
        [[r["batch"], r["n"], r["lgn_tau1_mean"], r["lgn_tau1_sd"], r["curvefit_tau1_mean"]] for r in batch_rows],
    )
    return report


def cmd_prognosis(dataset: Dataset, cfg: RunConfig) -> dict:
    _require_three_states(cfg, "prognosis")
    rows = fit_dataset(dataset, cfg)
    hists = [h for h in _histories(dataset, rows, need_capacity=True) if len(h) >= cfg.k]
    if len(hists) < 3:
        raise ValidationError("prognosis needs >= 3 cells with k checkpoints, soh and capacity")
    slopes = np.array([analytics.early_slope(h, "tau3", cfg.k) for h in hists])
    edges = np.quantile(slopes, [1 / 3, 2 / 3])
    terc = np.searchsorted(edges, slopes, side="right")
    cells = [
        {
            "cell_id": h.cell_id,
            "tau3_slope": float(s),
            "capacity_slope": analytics.early_slope(h, "capacity", cfg.k),
            "initial_capacity_ah": float(h.series("capacity")[0]),
            "final_soh": h.final_soh,
            "tercile": int(t),
        }
        for h, s, t in zip(hists, slopes, terc)
    ]
    terciles = [
        {
            "tercile": t,
            "n": int(np.sum(terc == t)),
            "mean_final_soh": float(np.mean([c["final_soh"] for c in cells if c["tercile"] == t]))
            if np.any(terc == t)
            else None,
        }
        for t in range(3)
    ]
    table = analytics.pairwise_prognosis(hists, cfg.k, cfg.cap_tol_ah, cfg.slope_tol_ah, cfg.gap_thresholds)
    regs = {fs: analytics.soh_regression(hists, cfg.k, fs, cfg.lam) for fs in ("tau", "capacity")}
    report = _header(
        "prognosis",
        cfg,
        window_s=cfg.window_s,
        k=cfg.k,
        cells=cells,
        terciles=terciles,
        pairwise=[dataclasses.asdict(r) for r in table],
        regression={
            fs: {"mae": r.mae, "spearman": r.spearman, "parity": [list(p) for p in r.parity]}
            for fs, r in regs.items()
        },
    )
    _close(report, dataset, sum(not r.ok for r in rows))
    out = _out(cfg)
    write_json(out / "prognosis.json", report)
    write_csv(
        out / "prognosis_pairwise.csv",
        ["gap_threshold", "n_pairs", "tau3_accuracy", "capacity_accuracy"],
        [[r.gap_threshold, r.n_pairs, r.tau3_accuracy, r.capacity_accuracy] for r in table],
    )
    write_csv(
        out / "prognosis_parity.csv",
        ["feature_set", "cell_id", "true_soh", "pred_soh"],
        [[fs, *p] for fs, r in regs.items() for p in r.parity],
    )
    return report


def cmd_arrhenius(dataset: Dataset, cfg: RunConfig) -> dict:
    _require_three_states(cfg, "arrhenius")
    rows = fit_dataset(dataset, cfg)
    by_key = {(r.cell_id, r.checkpoint_index): r for r in rows}
    recs = []
    for cell in dataset.cells:
        for cp in cell.checkpoints:
            r = by_key[(cell.cell_id, cp.checkpoint_index)]
            if r.ok and r.features is not None:
                m = cp.trace.meta
                recs.append((m.temperature_c, m.soc_percent, r.features))
    at_soc = [x for x in recs if abs(x[1] - cfg.arrhenius_soc) <= cfg.soc_tol]
    temps = sorted({x[0] for x in at_soc})
    medians = []
    for T in temps:
        fv = [x[2] for x in at_soc if x[0] == T]
        row = {"temperature_c": T, "n": len(fv)}
        for i in range(3):
            row[f"tau{i + 1}"] = float(np.median([f.tau[i] for f in fv]))
            row[f"r{i + 1}"] = float(np.median([f.r[i] for f in fv]))
        medians.append(row)
    fits = {}
    if len(temps) >= 3:
        for name in TAU_FIELDS + R_FIELDS:
            a = analytics.arrhenius_fit(temps, [m[name] for m in medians])
            fits[name] = {"e_a_mev": a.e_a_mev, "ln_prefactor": a.ln_prefactor, "r2": a.r2}
    soc_table = []
    for T in sorted({x[0] for x in recs}):
        for soc in sorted({x[1] for x in recs if x[0] == T}):
            vals = [x[2].tau[0] for x in recs if x[0] == T and x[1] == soc]
            soc_table.append({"temperature_c": T, "soc_percent": soc, "n": len(vals), "tau1_median": float(np.median(vals))})
    report = _header(
        "arrhenius",
        cfg,
        window_s=cfg.window_s,
        soc_percent=cfg.arrhenius_soc,
        temperatures=medians,
        fits=fits,
        tau1_vs_soc=soc_table,
    )
    _close(report, dataset, sum(not r.ok for r in rows))
    out = _out(cfg)
    write_json(out / "arrhenius.json", report)
    write_csv(
        out / "arrhenius_points.csv",
        ["temperature_c", "inv_kT_per_ev", "tau1", "tau2", "tau3", "r1", "r2", "r3"],
        [
            [m["temperature_c"], 1.0 / (analytics.K_B_EV * (m["temperature_c"] + analytics.ZERO_C))]
            + [m[n] for n in TAU_FIELDS + R_FIELDS]
            for m in medians
        ],
    )
    write_csv(
        out / "arrhenius_tau1_soc.csv",
        ["temperature_c", "soc_percent", "n", "tau1_median"],
        [[r["temperature_c"], r["soc_percent"], r["n"], r["tau1_median"]] for r in soc_table],
    )
    return report


def _mean_abs(xs):
    xs = [abs(x) for x in xs if x is not None and np.isfinite(x)]
    return float(np.mean(xs)) if xs else None


def _mean(xs):
    xs = [x for x in xs if x is not None and np.isfinite(x)]
    return float(np.mean(xs)) if xs else None


def cmd_window_scan(dataset: Dataset, cfg: RunConfig, windows=None) -> dict:
    windows = tuple(float(w) for w in (windows or cfg.windows))
    if any(b <= a for a, b in zip(windows, windows[1:])) or windows[0] <= 0:
        raise ValidationError("windows must be positive and increasing")
    n = cfg.n_states
    per_window = {}
    for w in windows:
        per_window[w] = fit_dataset(dataset, cfg, window_s=w)
    medians = []
    for w in windows:
        taus = np.array([r.fit.tau for r in per_window[w] if r.ok])
        medians.append(np.median(taus, axis=0) if taus.size else np.full(n, np.nan))
    medians = np.array(medians)
    alpha = {}
    if len(windows) >= 2 and np.all(np.isfinite(medians)):
        for i in range(n):
            alpha[f"tau{i + 1}"] = analytics.migration_exponent(windows, medians[:, i]).tolist()
    # within-window tracking: tau_i against aging state (checkpoint index)
    within = {}
    cross = {}
    cell_ids = [c.cell_id for c in dataset.cells]
    series = {}
    for w in windows:
        for r in per_window[w]:
            if r.ok:
                series.setdefault((w, r.cell_id), []).append((r.checkpoint_index, r.fit.tau))
    for w in windows:
        row = {}
        for i in range(n):
            rhos = []
            for cid in cell_ids:
                s = series.get((w, cid), [])
                if len(s) >= 2:
                    rhos.append(analytics.spearman([k for k, _ in s], [t[i] for _, t in s]))
            row[f"tau{i + 1}"] = _mean_abs(rhos)
        within[str(w)] = row
    for a_i, wa in enumerate(windows):
        for wb in windows[a_i + 1 :]:
            row = {}
            for i in range(n):
                rhos = []
                for cid in cell_ids:
                    sa = dict(series.get((wa, cid), []))
                    sb = dict(series.get((wb, cid), []))
                    common = sorted(set(sa) & set(sb))
                    if len(common) >= 2:
                        rhos.append(analytics.spearman([sa[k][i] for k in common], [sb[k][i] for k in common]))
                row[f"tau{i + 1}"] = _mean(rhos)
            cross[f"{wa}->{wb}"] = row
    fits = {str(w): [_fit_record(r) for r in per_window[w]] for w in windows}
    failures = sum(not r.ok for w in windows for r in per_window[w])
    report = _header(
        "window-scan",
        cfg,
        windows=list(windows),
        median_tau={str(w): medians[j] for j, w in enumerate(windows)},
        migration_exponent=alpha,
        within_window_abs_rho=within,
        cross_window_rho=cross,
        fits=fits,
    )
    _close(report, dataset, failures)
    out = _out(cfg)
    write_json(out / "window_scan.json", report)
    write_csv(
        out / "window_scan_medians.csv",
        ["window_s"] + [f"tau{i + 1}_median" for i in range(n)],
        [[w, *medians[j]] for j, w in enumerate(windows)],
    )
    write_csv(
        out / "window_scan_rho.csv",
        ["kind", "window", "mode", "rho"],
        [["within", w, m, v] for w, row in within.items() for m, v in row.items()]
        + [["cross", pair, m, v] for pair, row in cross.items() for m, v in row.items()],
    )
    return report


# ------------------------------------------------------------- synthesis


def population_from_json(doc: dict) -> tuple[drt.PopulationSpec, dict]:
    """Build a PopulationSpec from its JSON form; also returns label options."""
    doc = dict(doc)
    labels = {k: doc.pop(k) for k in ("n_batches", "n_channels") if k in doc}
    base = doc.pop("base", None)
    if base is None:
        raise ValidationError("population spec needs a 'base' spectrum")
    grid = drt.log_grid(base.get("tau_min", 1e-3), base.get("tau_max", 1e5), base.get("points_per_decade", 100))
    spectrum = drt.peak_spectrum(grid, [tuple(p) for p in base["peaks"]], base.get("r0", 0.0))
    sched = doc.pop("schedule", None)
    n_ck = int(doc.get("n_checkpoints", 1))
    schedule = None
    if sched is not None:
        schedule = drt.AgingSchedule(
            int(sched.get("n_states", n_ck)),
            float(sched["shift_per_state"]),
            float(sched.get("amplification_per_state", 1.0)),
        )
    jitter = drt.CellJitter(**doc.pop("jitter", {}))
    if "freqs_hz" in doc:
        doc["freqs_hz"] = np.asarray(doc["freqs_hz"], dtype=float)
    names = {f.name for f in dataclasses.fields(drt.PopulationSpec)}
    unknown = sorted(set(doc) - names)
    if unknown:
        raise ValidationError(f"unknown population keys: {', '.join(unknown)}")
    return drt.PopulationSpec(base=spectrum, schedule=schedule, jitter=jitter, **doc), labels


def records_to_dataset(records, n_batches=None, n_channels=None) -> Dataset:
    by_cell = {}
    for rec in records:
        by_cell.setdefault(rec.cell_id, []).append(
            CheckpointData(rec.checkpoint_index, rec.trace, rec.spectrum, rec.soh_percent, rec.capacity_ah)
        )
    cells = []
    for i, cid in enumerate(sorted(by_cell)):
        batch = f"B{i % n_batches:02d}" if n_batches else None
        channel = f"ch{i % n_channels:02d}" if n_channels else None
        cps = tuple(sorted(by_cell[cid], key=lambda c: c.checkpoint_index))
        cells.append(CellData(cid, cps, batch, channel))
    return Dataset(tuple(cells))


def cmd_synth(population_path, cfg: RunConfig) -> dict:
    p = Path(population_path)
    if not p.is_file():
        raise ValidationError(f"population spec not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{p}: invalid JSON ({exc.msg}, line {exc.lineno})") from None
    if "seed" not in doc:
        doc["seed"] = cfg.seed
    spec, labels = population_from_json(doc)
    records = drt.synth_cell_population(spec)
    ds = records_to_dataset(records, labels.get("n_batches"), labels.get("n_channels"))
    out = _out(cfg)
    mpath = write_dataset(ds, out)
    truth = [
        [r.cell_id, r.checkpoint_index, r.soh_percent, r.capacity_ah, r.truth.r0, r.truth.total_weight, r.truth.centroid()]
        for r in records
    ]
    write_csv(
        out / "synth_truth.csv",
        ["cell_id", "checkpoint_index", "soh_percent", "capacity_ah", "r0_ohm", "total_r_ohm", "ln_tau_centroid"],
        truth,
    )
    report = {
        "schema_version": REPORT_SCHEMA,
        "command": "synth",
        "manifest": mpath.name,
        "n_cells": len(ds.cells),
        "n_checkpoints": ds.n_checkpoints,
        "seed": spec.seed,
    }
    write_json(out / "synth.json", report)
    return report


COMMANDS = {
    "fit": cmd_fit,
    "track": cmd_track,
    "reconstruct": cmd_reconstruct,
    "qc": cmd_qc,
    "prognosis": cmd_prognosis,
    "arrhenius": cmd_arrhenius,
    "window-scan": cmd_window_scan,
}
