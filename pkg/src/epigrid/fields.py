"""Rectangular time-by-node field output in CSV or NDJSON.

CSV layout: leading ``# key=value`` metadata lines (sorted by key), one
header row ``t,i1,..,i_d,<field>...``, then one row per (time, node) in
row-major node order.  Floats are written with ``repr``, the shortest
decimal that round-trips, so write-then-read reproduces values bit for
bit.  NDJSON carries the metadata as a first ``{"_meta": ...}`` record
and then one record per (time, node).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

FORMATS = ("csv", "ndjson")


@dataclass
class FieldSeries:
    """Named per-node fields on a shared time grid.

    ``fields`` maps a name to an array of shape ``(len(times),) + shape``;
    rectangularity is enforced on construction.
    """

    times: np.ndarray
    shape: tuple
    fields: dict
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.ndim != 1:
            raise ValidationError("times must be one-dimensional")
        self.shape = tuple(int(s) for s in self.shape)
        expect = (self.times.size,) + self.shape
        clean = {}
        for name, values in self.fields.items():
            arr = np.asarray(values, dtype=float)
            if arr.shape != expect:
                raise ValidationError(
                    f"field {name!r} has shape {arr.shape}, expected {expect}")
            clean[name] = arr
        if not clean:
            raise ValidationError("a field series needs at least one field")
        self.fields = clean

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape)) if self.shape else 1

    @classmethod
    def from_patch(cls, sol, meta=None) -> "FieldSeries":
        base = {"layer": "patch"}
        base.update(meta or {})
        return cls(sol.times, sol.grid.shape,
                   {"S": sol.susceptible, "I": sol.infected, "F": sol.force},
                   base)

    @classmethod
    def from_pde(cls, sol, meta=None) -> "FieldSeries":
        base = {"layer": "pde"}
        base.update(meta or {})
        return cls(sol.times, (sol.n_modes,) * sol.dim,
                   {"S": sol.susceptible, "I": sol.infected, "F": sol.force},
                   base)

    @classmethod
    def from_sim(cls, res, meta=None) -> "FieldSeries":
        base = {"layer": "stochastic"}
        base.update(meta or {})
        return cls(res.times, res.grid.shape,
                   {"S": res.susceptible, "I": res.infected,
                    "F": res.force, "F0": res.force_initial},
                   base)


def _meta_value(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _index_columns(dim: int) -> list:
    return [f"i{ax + 1}" for ax in range(dim)]


def write_fields(series: FieldSeries, path, fmt: str = "csv") -> None:
    """Write a series to ``path``; format is 'csv' or 'ndjson'."""
    if fmt not in FORMATS:
        raise ValidationError(f"unknown output format {fmt!r}")
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            if fmt == "csv":
                _write_csv(series, fh)
            else:
                _write_ndjson(series, fh)
    except OSError as exc:
        raise ValidationError(f"cannot write {path}: {exc}") from exc


def _write_csv(series: FieldSeries, fh) -> None:
    names = sorted(series.fields)
    for key in sorted(series.meta):
        fh.write(f"# {key}={_meta_value(series.meta[key])}\n")
    fh.write(f"# shape={','.join(str(s) for s in series.shape)}\n")
    fh.write(",".join(["t"] + _index_columns(series.dim) + names) + "\n")
    flats = [series.fields[name].reshape(series.times.size, series.n_nodes)
             for name in names]
    indices = [np.unravel_index(j, series.shape) if series.dim else ()
               for j in range(series.n_nodes)]
    for k, t in enumerate(series.times):
        t_txt = repr(float(t))
        for j in range(series.n_nodes):
            cells = [t_txt]
            cells += [str(v) for v in indices[j]]
            cells += [repr(float(flat[k, j])) for flat in flats]
            fh.write(",".join(cells) + "\n")


def _write_ndjson(series: FieldSeries, fh) -> None:
    names = sorted(series.fields)
    meta = dict(series.meta)
    meta["shape"] = list(series.shape)
    meta["fields"] = names
    fh.write(json.dumps({"_meta": meta}, sort_keys=True) + "\n")
    flats = [series.fields[name].reshape(series.times.size, series.n_nodes)
             for name in names]
    for k, t in enumerate(series.times):
        for j in range(series.n_nodes):
            idx = np.unravel_index(j, series.shape) if series.dim else ()
            record = {"t": float(t), "node": [int(v) for v in idx]}
            for name, flat in zip(names, flats):
                record[name] = float(flat[k, j])
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_fields(path, fmt: str | None = None) -> FieldSeries:
    """Read a series written by :func:`write_fields`; autodetects format."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    if fmt is None:
        fmt = "ndjson" if text[:1] == "{" else "csv"
    if fmt not in FORMATS:
        raise ValidationError(f"unknown output format {fmt!r}")
    lines = text.splitlines()
    if fmt == "csv":
        return _read_csv(lines, path)
    return _read_ndjson(lines, path)


def _read_csv(lines, path) -> FieldSeries:
    meta = {}
    body = []
    for line in lines:
        if line.startswith("# "):
            key, _, value = line[2:].partition("=")
            meta[key] = value
        elif line:
            body.append(line)
    if not body:
        raise ValidationError(f"{path}: missing CSV header")
    shape = tuple(int(s) for s in meta.pop("shape").split(",") if s)
    header = body[0].split(",")
    dim = len(shape)
    names = header[1 + dim:]
    rows = [line.split(",") for line in body[1:]]
    n_nodes = int(np.prod(shape)) if shape else 1
    if len(rows) % max(n_nodes, 1):
        raise ValidationError(f"{path}: ragged series, not rectangular")
    n_times = len(rows) // n_nodes
    times = np.array([float(rows[k * n_nodes][0]) for k in range(n_times)])
    fields = {}
    for c, name in enumerate(names):
        col = np.array([float(r[1 + dim + c]) for r in rows])
        fields[name] = col.reshape((n_times,) + shape)
    if not names:
        raise ValidationError(f"{path}: no field columns")
    return FieldSeries(times, shape, fields, meta)


def _read_ndjson(lines, path) -> FieldSeries:
    records = [json.loads(line) for line in lines if line]
    if not records or "_meta" not in records[0]:
        raise ValidationError(f"{path}: missing _meta record")
    meta = dict(records[0]["_meta"])
    shape = tuple(meta.pop("shape"))
    names = meta.pop("fields")
    rows = records[1:]
    n_nodes = int(np.prod(shape)) if shape else 1
    if len(rows) % max(n_nodes, 1):
        raise ValidationError(f"{path}: ragged series, not rectangular")
    n_times = len(rows) // n_nodes
    times = np.array([rows[k * n_nodes]["t"] for k in range(n_times)])
    fields = {}
    for name in names:
        col = np.array([r[name] for r in rows], dtype=float)
        fields[name] = col.reshape((n_times,) + shape)
    return FieldSeries(times, shape, fields, meta)


def series_equal(a: FieldSeries, b: FieldSeries) -> bool:
    """Bit-exact equality of times, fields, and shape (metadata ignored)."""
    if a.shape != b.shape or set(a.fields) != set(b.fields):
        return False
    if a.times.shape != b.times.shape or not np.array_equal(a.times, b.times):
        return False
    return all(np.array_equal(a.fields[n], b.fields[n]) for n in a.fields)
