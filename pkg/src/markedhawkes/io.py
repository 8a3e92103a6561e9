"""File formats: event CSVs, trade exports, model documents and generator specs."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IngestError, SchemaError
from .marks import GmmDensity
from .model import EventSequence, HawkesModel, ModelKind, ScalingTransform
from .simulate import (
    Exponential,
    ExpSum,
    ExpTimesMark,
    GeneratorSpec,
    LogMarkTimesExp,
    LogNormal,
    coupled_1d_spec,
    decoupled_1d_spec,
    decoupled_2d_spec,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CRYPTO_DIMS = ("BTC-USD:sell", "BTC-USD:buy", "ETH-USD:sell", "ETH-USD:buy")
TRADE_COLUMNS = ("timestamp", "side", "instrument", "volume", "price", "buyer_id", "seller_id")
MS_THRESHOLD = 1e11  # epoch seconds stay below this until the year 5138


def fmt(x) -> str:
    """Lossless 17-significant-digit rendering."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, str):
        return x
    return format(float(x), ".17g")


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


# ---------------------------------------------------------------------------
# events
# ---------------------------------------------------------------------------


def write_events(path, seq: EventSequence) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# horizon={fmt(seq.horizon)} dims={seq.dims}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dim", "time", "mark"])
        for d, t, m in zip(seq.event_dims, seq.times, seq.marks):
            w.writerow([int(d), fmt(t), fmt(m)])


def _read_rows(path):
    path = Path(path)
    if not path.is_file():
        raise IngestError(f"no such file: {path}")
    meta = {}
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            for tok in line[1:].split():
                if "=" in tok:
                    k, v = tok.split("=", 1)
                    meta[k] = v
        elif line.strip():
            body.append(line)
    reader = csv.DictReader(body)
    return reader.fieldnames or [], list(reader), meta


def _read_generic(path, dims=None) -> EventSequence:
    header, rows, meta = _read_rows(path)
    missing = {"dim", "time", "mark"} - set(header)
    if missing:
        raise IngestError(f"{path}: missing column(s) {sorted(missing)}; expected dim,time,mark")
    if not rows:
        raise IngestError(f"{path}: no events")
    try:
        d = np.array([int(r["dim"]) for r in rows], dtype=np.int64)
        t = np.array([float(r["time"]) for r in rows])
        m = np.array([float(r["mark"]) for r in rows])
    except (TypeError, ValueError) as exc:
        raise IngestError(f"{path}: unparsable value ({exc})") from None
    back = np.flatnonzero(np.diff(t) < 0)
    if len(back):
        raise IngestError(f"{path}: times decrease at data row(s) {(back + 2).tolist()[:20]}")
    dims = dims if dims is not None else int(meta.get("dims", int(d.max()) + 1))
    horizon = float(meta["horizon"]) if "horizon" in meta else None
    try:
        return EventSequence.from_arrays(t, d, m, horizon=horizon, dims=dims)
    except ValueError as exc:
        raise IngestError(f"{path}: {exc}") from None


@dataclass
class TradeIngest:
    sequence: EventSequence
    labels: tuple
    time_unit: str
    origin: float
    counts: dict = field(default_factory=dict)
    volumes: dict = field(default_factory=dict)
    merged_rows: int = 0


def read_trades(path, labels=CRYPTO_DIMS) -> TradeIngest:
    """Merge same-timestamp trades per (instrument, side) into one event marked by total volume."""
    header, rows, _ = _read_rows(path)
    missing = {"timestamp", "side", "instrument", "volume"} - set(header)
    if missing:
        raise IngestError(f"{path}: missing column(s) {sorted(missing)}")
    if not rows:
        raise IngestError(f"{path}: no trades")
    index = {lab: i for i, lab in enumerate(labels)}
    stamps, dims, vols = [], [], []
    for line, r in enumerate(rows, start=2):
        side = r["side"].strip().lower()
        if side not in ("buy", "sell"):
            raise IngestError(f"{path}: row {line}: side must be buy or sell, got {r['side']!r}")
        label = f"{r['instrument'].strip()}:{side}"
        if label not in index:
            raise IngestError(f"{path}: row {line}: unknown dimension label {label!r} "
                              f"(known: {', '.join(labels)})")
        try:
            ts, vol = float(r["timestamp"]), float(r["volume"])
        except ValueError as exc:
            raise IngestError(f"{path}: row {line}: {exc}") from None
        if not vol > 0 or not math.isfinite(vol):
            raise IngestError(f"{path}: row {line}: volume must be positive")
        stamps.append(ts)
        dims.append(index[label])
        vols.append(vol)
    stamps = np.asarray(stamps)
    unit = "ms" if np.nanmax(np.abs(stamps)) > MS_THRESHOLD else "s"
    log.info("trade timestamps read as epoch %s", "milliseconds" if unit == "ms" else "seconds")
    secs = stamps / 1000.0 if unit == "ms" else stamps

    merged: dict[tuple[float, int], float] = {}
    first_row: dict[tuple[float, int], int] = {}
    for i, (ts, d, v) in enumerate(zip(secs, dims, vols)):
        key = (ts, d)
        if key not in merged:
            first_row[key] = i
        merged[key] = merged.get(key, 0.0) + v
    keys = list(merged)  # file order of first appearance
    order_t = np.array([k[0] for k in keys])
    back = np.flatnonzero(np.diff(order_t) < 0)
    if len(back):
        bad = [first_row[keys[i + 1]] + 2 for i in back]
        raise IngestError(f"{path}: timestamps out of order after merging at row(s) {bad[:20]}")
    origin = float(order_t[0])
    t = order_t - origin
    d = np.array([k[1] for k in keys], dtype=np.int64)
    m = np.array([merged[k] for k in keys])
    seq = EventSequence.from_arrays(t, d, m, dims=len(labels))
    counts = {lab: int(np.sum(d == i)) for i, lab in enumerate(labels)}
    volumes = {lab: float(np.sum(m[d == i])) for i, lab in enumerate(labels)}
    return TradeIngest(seq, tuple(labels), unit, origin, counts, volumes, len(rows) - len(keys))


def ingest_events(path, fmt: str = "generic-csv", labels=None, dims=None) -> EventSequence:
    if fmt == "generic-csv":
        return _read_generic(path, dims)
    if fmt == "trade-csv":
        return read_trades(path, tuple(labels) if labels else CRYPTO_DIMS).sequence
    raise IngestError(f"unknown input format {fmt!r}")


# ---------------------------------------------------------------------------
# model documents
# ---------------------------------------------------------------------------


def _tolist(a):
    return np.asarray(a, dtype=float).tolist()


@dataclass
class ModelDocument:
    model: HawkesModel
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        m = self.model
        tr = m.scaling
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": m.kind.value,
            "dims": m.dims,
            "neurons": m.p,
            "window": m.window,
            "mu": _tolist(m.mu),
            "kernels": {k: _tolist(getattr(m, k)) for k in ("a1", "a2", "b1", "a3", "b2")},
            "scaling": None if tr is None else {"time_scale": tr.time_scale,
                                               "mark_scale": list(tr.mark_scale)},
            "mark_densities": None if m.mark_densities is None
            else [g.to_dict() for g in m.mark_densities],
            "metadata": self.metadata,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelDocument":
        if not isinstance(doc, dict):
            raise SchemaError("model document must be a JSON object")
        version = doc.get("schema_version")
        if version != SCHEMA_VERSION:
            raise SchemaError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
        try:
            k = doc["kernels"]
            sc = doc["scaling"]
            scaling = None if sc is None else ScalingTransform(float(sc["time_scale"]),
                                                               tuple(sc["mark_scale"]))
            dens = doc.get("mark_densities")
            dens = None if dens is None else tuple(GmmDensity.from_dict(g) for g in dens)
            model = HawkesModel(np.array(doc["mu"], dtype=float), np.array(k["a1"]),
                                np.array(k["a2"]), np.array(k["b1"]), np.array(k["a3"]),
                                np.array(k["b2"]), kind=ModelKind(doc["kind"]), scaling=scaling,
                                window=doc.get("window"), mark_densities=dens)
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed model document: missing or invalid {exc}") from None
        if model.dims != doc.get("dims") or model.p != doc.get("neurons"):
            raise SchemaError("declared dims/neurons disagree with the parameter arrays")
        return cls(model, doc.get("metadata") or {})

    @classmethod
    def loads(cls, text: str) -> "ModelDocument":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise SchemaError(f"model document is not valid JSON: {exc}") from None


def save_model(path, model: HawkesModel, metadata: dict | None = None) -> None:
    Path(path).write_text(ModelDocument(model, metadata or {}).dumps())


def load_model(path) -> ModelDocument:
    path = Path(path)
    if not path.is_file():
        raise IngestError(f"no such file: {path}")
    return ModelDocument.loads(path.read_text())


# ---------------------------------------------------------------------------
# generator specs
# ---------------------------------------------------------------------------

PRESETS = {
    "coupled-1d": coupled_1d_spec,
    "decoupled-1d": decoupled_1d_spec,
    "decoupled-2d": decoupled_2d_spec,
}

_KERNELS = {"ExpTimesMark": ExpTimesMark, "LogMarkTimesExp": LogMarkTimesExp,
            "ExpSum": ExpSum}
_DENSITIES = {"LogNormal": LogNormal, "Exponential": Exponential}


def _build(table, item, what):
    if not isinstance(item, dict) or "type" not in item:
        raise SchemaError(f"{what} entries need a 'type' field")
    args = {k: v for k, v in item.items() if k != "type"}
    if item["type"] == "Gmm":
        return GmmDensity.from_dict(args)
    if item["type"] not in table:
        raise SchemaError(f"unknown {what} type {item['type']!r}")
    try:
        return table[item["type"]](**args)
    except TypeError as exc:
        raise SchemaError(f"bad {what} parameters: {exc}") from None


def spec_from_dict(doc: dict) -> GeneratorSpec:
    if "preset" in doc:
        if doc["preset"] not in PRESETS:
            raise SchemaError(f"unknown preset {doc['preset']!r} (known: {', '.join(PRESETS)})")
        return PRESETS[doc["preset"]]()
    try:
        kernels = [[_build(_KERNELS, k, "kernel") for k in row] for row in doc["kernels"]]
        marks = [[_build(_DENSITIES, x, "mark density") for x in e] if isinstance(e, list)
                 else _build(_DENSITIES, e, "mark density") for e in doc["marks"]]
        return GeneratorSpec(tuple(doc["mu"]), kernels, tuple(marks),
                                 nonlinear=bool(doc.get("nonlinear", False)))
    except KeyError as exc:
        raise SchemaError(f"generator spec is missing {exc}") from None


def load_spec(path) -> GeneratorSpec:
    path = Path(path)
    if not path.is_file():
        raise IngestError(f"no such file: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"spec file is not valid JSON: {exc}") from None
    return spec_from_dict(doc)
