"""Manifest, trace CSV and impedance CSV reading and writing.

Trace CSV: ``time_s,voltage_v`` with an optional ``current_a`` column, ``#``
comment lines allowed. Impedance CSV: ``freq_hz,z_re_ohm,z_im_ohm``. The
manifest is JSON; see the README for the schema.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import IngestError, ValidationError
from .impedance import ImpedanceSpectrum
from .lgn import RelaxationTrace, TraceMeta

SCHEMA_VERSION = "1.0"
TRACE_HEADER = ("time_s", "voltage_v")
EIS_HEADER = ("freq_hz", "z_re_ohm", "z_im_ohm")


@dataclass(frozen=True)
class CheckpointData:
    checkpoint_index: int
    trace: RelaxationTrace
    spectrum: ImpedanceSpectrum | None = None
    soh_percent: float | None = None
    capacity_ah: float | None = None


@dataclass(frozen=True)
class CellData:
    cell_id: str
    checkpoints: tuple
    batch: str | None = None
    channel: str | None = None


@dataclass(frozen=True)
class Dataset:
    cells: tuple
    # (cell_id, checkpoint_index, message) for checkpoints skipped at load
    errors: tuple = ()

    @property
    def n_checkpoints(self) -> int:
        return sum(len(c.checkpoints) for c in self.cells)


# ------------------------------------------------------------------ CSV


def _read_rows(path, header, optional=()):
    path = Path(path)
    if not path.is_file():
        raise IngestError(path, "file not found")
    rows = []
    cols = None
    with path.open(newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            fields = [f.strip() for f in next(csv.reader([s]))]
            if cols is None:
                if tuple(fields[: len(header)]) != header or not set(fields[len(header) :]) <= set(optional):
                    raise IngestError(path, f"expected header {','.join(header)}", lineno)
                cols = fields
                continue
            if len(fields) != len(cols):
                raise IngestError(path, f"expected {len(cols)} columns, got {len(fields)}", lineno)
            try:
                vals = [float(f) for f in fields]
            except ValueError:
                raise IngestError(path, "non-numeric value", lineno) from None
            if not all(math.isfinite(v) for v in vals):
                raise IngestError(path, "non-finite value", lineno)
            rows.append((lineno, vals))
    if cols is None:
        raise IngestError(path, "missing header")
    return cols, rows


def read_trace(path, pulse_current=0.0, pre_step_voltage=float("nan"), meta=None) -> RelaxationTrace:
    cols, rows = _read_rows(path, TRACE_HEADER, optional=("current_a",))
    if len(rows) < 2:
        raise IngestError(path, "trace needs at least two samples")
    t = np.array([r[1][0] for r in rows])
    v = np.array([r[1][1] for r in rows])
    if t[0] < 0:
        raise IngestError(path, "negative time", rows[0][0])
    bad = np.flatnonzero(np.diff(t) <= 0)
    if bad.size:
        raise IngestError(path, "time column not strictly increasing", rows[int(bad[0]) + 1][0])
    return RelaxationTrace(t, v, pulse_current, pre_step_voltage, meta or TraceMeta())


def read_spectrum(path) -> ImpedanceSpectrum:
    _, rows = _read_rows(path, EIS_HEADER)
    if not rows:
        raise IngestError(path, "impedance file has no rows")
    arr = np.array([r[1] for r in rows])
    try:
        return ImpedanceSpectrum(arr[:, 0], arr[:, 1], arr[:, 2])
    except ValidationError as exc:
        raise IngestError(path, str(exc)) from None


def _fmt(x) -> str:
    return repr(float(x))


def write_trace(path, trace: RelaxationTrace):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(",".join(TRACE_HEADER) + "\n")
        for t, v in zip(trace.times, trace.voltages):
            fh.write(f"{_fmt(t)},{_fmt(v)}\n")


def write_spectrum(path, spectrum: ImpedanceSpectrum):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(",".join(EIS_HEADER) + "\n")
        for f, re, im in zip(spectrum.freqs, spectrum.z_re, spectrum.z_im):
            fh.write(f"{_fmt(f)},{_fmt(re)},{_fmt(im)}\n")


# ------------------------------------------------------------- manifest


def _req(rec, key, path, where):
    if key not in rec:
        raise IngestError(path, f"{where}: missing field {key!r}")
    return rec[key]


def _num(rec, key, path, where, default=None):
    if key not in rec or rec[key] is None:
        if default is not None:
            return default
        raise IngestError(path, f"{where}: missing field {key!r}")
    try:
        return float(rec[key])
    except (TypeError, ValueError):
        raise IngestError(path, f"{where}: field {key!r} is not a number") from None


def load_manifest(manifest_path, strict: bool = True) -> Dataset:
    """Read a manifest and every file it references, validating as it goes.

    With ``strict=False`` a bad trace or impedance file drops only that
    checkpoint and is listed in ``Dataset.errors``; manifest-level problems
    always raise.
    """
    path = Path(manifest_path)
    if not path.is_file():
        raise IngestError(path, "manifest not found")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise IngestError(path, f"invalid JSON: {exc.msg}", exc.lineno) from None
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise IngestError(path, f"unsupported schema_version {doc.get('schema_version')!r}")
    base = path.parent
    seen = set()
    cells = []
    errors = []
    for ci, rec in enumerate(_req(doc, "cells", path, "manifest")):
        cid = str(_req(rec, "cell_id", path, f"cells[{ci}]"))
        if cid in seen:
            raise IngestError(path, f"duplicate cell_id {cid!r}")
        seen.add(cid)
        cps = []
        idx_seen = set()
        for ki, cp in enumerate(_req(rec, "checkpoints", path, f"cell {cid}")):
            where = f"cell {cid} checkpoints[{ki}]"
            k = int(_req(cp, "checkpoint_index", path, where))
            if k < 0 or k in idx_seen:
                raise IngestError(path, f"{where}: checkpoint_index {k} negative or duplicated")
            idx_seen.add(k)
            meta = TraceMeta(
                cid,
                k,
                _num(cp, "soc_percent", path, where),
                _num(cp, "temperature_c", path, where),
            )
            trace_path = base / _req(cp, "trace_path", path, where)
            current = _num(cp, "pulse_current_a", path, where)
            pre = _num(cp, "pre_step_voltage_v", path, where)
            try:
                trace = read_trace(trace_path, current, pre, meta)
                spec = read_spectrum(base / cp["eis_path"]) if cp.get("eis_path") else None
            except IngestError as exc:
                if strict:
                    raise
                errors.append((cid, k, str(exc)))
                continue
            soh = cp.get("soh_percent")
            cap = cp.get("capacity_ah")
            cps.append(
                CheckpointData(
                    k,
                    trace,
                    spec,
                    None if soh is None else float(soh),
                    None if cap is None else float(cap),
                )
            )
        cps.sort(key=lambda c: c.checkpoint_index)
        cells.append(CellData(cid, tuple(cps), rec.get("batch"), rec.get("channel")))
    cells.sort(key=lambda c: c.cell_id)
    errors.sort()
    return Dataset(tuple(cells), tuple(errors))


def write_dataset(dataset: Dataset, out_dir, extra=None) -> Path:
    """Emit ``manifest.json`` plus per-checkpoint CSVs under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = []
    for cell in dataset.cells:
        cps = []
        for cp in cell.checkpoints:
            stem = f"{cell.cell_id}_k{cp.checkpoint_index:03d}"
            tr = cp.trace
            write_trace(out / "traces" / f"{stem}.csv", tr)
            rec = {
                "checkpoint_index": cp.checkpoint_index,
                "trace_path": f"traces/{stem}.csv",
                "soc_percent": tr.meta.soc_percent,
                "temperature_c": tr.meta.temperature_c,
                "pulse_current_a": tr.pulse_current,
                "pre_step_voltage_v": tr.pre_step_voltage,
            }
            if cp.spectrum is not None:
                write_spectrum(out / "eis" / f"{stem}.csv", cp.spectrum)
                rec["eis_path"] = f"eis/{stem}.csv"
            if cp.soh_percent is not None:
                rec["soh_percent"] = cp.soh_percent
            if cp.capacity_ah is not None:
                rec["capacity_ah"] = cp.capacity_ah
            cps.append(rec)
        crec = {"cell_id": cell.cell_id}
        if cell.batch is not None:
            crec["batch"] = cell.batch
        if cell.channel is not None:
            crec["channel"] = cell.channel
        crec["checkpoints"] = cps
        cells.append(crec)
    doc = {"schema_version": SCHEMA_VERSION, "cells": cells}
    if extra:
        doc.update(extra)
    mpath = out / "manifest.json"
    mpath.write_text(json.dumps(doc, indent=2) + "\n")
    return mpath


# --------------------------------------------------------------- reports


def jsonable(obj):
    """Convert numpy scalars/arrays and non-finite floats for JSON output."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(jsonable(obj), indent=2, allow_nan=False) + "\n")


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for v in row])
