"""Gridded spatio-temporal datasets and their text file format.

A dataset file is a CSV table with one row per (time, row, col) cell in
canonical order (time-major, then row-major space) and columns
``t_index, row, col, lat, lon, y, mask, x_1 .. x_d``; ``mask`` is 1 where
the response is missing.  A JSON sidecar (``<path>.json``) carries the grid
shape, predictor names, units, time stamps and the response transform.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .train import atomic_write

FORMAT_VERSION = 1
BASE_COLUMNS = ("t_index", "row", "col", "lat", "lon", "y", "mask")


@dataclass
class GridDataset:
    """Response grid y (T, D1, D2) with missing mask, predictor cube x (T, D1, D2, d)."""

    y: np.ndarray
    x: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    mask: np.ndarray | None = None
    names: tuple[str, ...] = ()
    times: np.ndarray | None = None
    units: dict = field(default_factory=dict)
    transform: str = "none"

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64)
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.y.ndim != 3:
            raise ValueError("response must have shape (T, D1, D2)")
        if self.x.shape[:3] != self.y.shape or self.x.ndim != 4:
            raise ValueError(f"predictor cube {self.x.shape} does not cover the response grid {self.y.shape}")
        self.lat = np.broadcast_to(np.asarray(self.lat, dtype=np.float64), self.y.shape[1:]).copy()
        self.lon = np.broadcast_to(np.asarray(self.lon, dtype=np.float64), self.y.shape[1:]).copy()
        mask = ~np.isfinite(self.y) if self.mask is None else np.asarray(self.mask, dtype=bool)
        self.mask = mask | ~np.isfinite(self.y)
        self.y = np.where(self.mask, np.nan, self.y)
        if not self.names:
            self.names = tuple(f"x_{j + 1}" for j in range(self.d))
        self.names = tuple(self.names)
        if len(self.names) != self.d:
            raise ValueError("one name per predictor is required")
        self.times = np.arange(self.T, dtype=np.float64) if self.times is None else np.asarray(self.times, float)
        if self.transform not in ("none", "sqrt"):
            raise ValueError(f"unknown response transform {self.transform!r}")

    @property
    def T(self) -> int:
        return self.y.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[-1]

    @property
    def grid(self) -> tuple[int, int]:
        return self.y.shape[1], self.y.shape[2]

    @property
    def observed(self) -> np.ndarray:
        return ~self.mask

    @classmethod
    def from_table(cls, x, y, names=(), units=None) -> "GridDataset":
        """Wrap n independent rows as a (n, 1, 1) grid."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        return cls(y.reshape(-1, 1, 1), x.reshape(-1, 1, 1, x.shape[-1]), 0.0, 0.0,
                   names=tuple(names), units=dict(units or {}))

    def with_sqrt_response(self) -> "GridDataset":
        """Square-root transform applied at ingestion (recorded in ``transform``)."""
        if self.transform == "sqrt":
            return self
        if np.any(self.y[self.observed] < 0):
            raise ValueError("square-root transform needs a non-negative response")
        return GridDataset(np.sqrt(self.y), self.x, self.lat, self.lon, self.mask, self.names,
                           self.times, self.units, "sqrt")

    def response_scale(self, values):
        """Map model-scale values back to the response scale (negative values clamped to 0)."""
        values = np.asarray(values, dtype=np.float64)
        if self.transform == "sqrt":
            return np.maximum(values, 0.0) ** 2
        return values

    def take_times(self, idx) -> "GridDataset":
        idx = np.asarray(idx)
        return GridDataset(self.y[idx], self.x[idx], self.lat, self.lon, self.mask[idx], self.names,
                           self.times[idx], self.units, self.transform)

    def checksum(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for arr in (self.y, self.x, self.lat, self.lon, self.mask.astype(np.uint8), self.times):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(json.dumps([list(self.names), self.units, self.transform], sort_keys=True).encode())
        return h.hexdigest()


def _fmt(v: float) -> str:
    return "" if not np.isfinite(v) else repr(float(v))


def save_dataset(ds: GridDataset, path: str) -> None:
    T, D1, D2 = ds.y.shape
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(BASE_COLUMNS + tuple(f"x_{j + 1}" for j in range(ds.d)))
    for t in range(T):
        for r in range(D1):
            for c in range(D2):
                writer.writerow([t, r, c, _fmt(ds.lat[r, c]), _fmt(ds.lon[r, c]), _fmt(ds.y[t, r, c]),
                                 int(ds.mask[t, r, c])] + [_fmt(v) for v in ds.x[t, r, c]])
    meta = {"version": FORMAT_VERSION, "shape": [T, D1, D2], "d": ds.d, "names": list(ds.names),
            "units": ds.units, "times": [float(t) for t in ds.times], "transform": ds.transform}
    atomic_write(path, buf.getvalue().encode())
    atomic_write(path + ".json", json.dumps(meta, indent=1, sort_keys=True).encode())


def load_dataset(path: str) -> GridDataset:
    try:
        with open(path + ".json") as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        raise FileNotFoundError(f"metadata sidecar {path}.json is missing") from None
    for key in ("shape", "d", "names"):
        if key not in meta:
            raise ValueError(f"metadata field {key!r} is missing from {path}.json")
    T, D1, D2 = meta["shape"]
    d = int(meta["d"])
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        expected = list(BASE_COLUMNS) + [f"x_{j + 1}" for j in range(d)]
        for col in expected:
            if col not in header:
                raise ValueError(f"dataset column {col!r} is missing")
        pos = [header.index(c) for c in expected]
        rows = [[row[p] for p in pos] for row in reader]
    if len(rows) != T * D1 * D2:
        raise ValueError(f"expected {T * D1 * D2} rows, found {len(rows)}")
    table = np.array([[float(v) if v != "" else np.nan for v in row] for row in rows], dtype=np.float64)
    order = np.lexsort((table[:, 2], table[:, 1], table[:, 0]))
    table = table[order]
    idx = table[:, :3].astype(np.int64)
    canon = np.stack(np.unravel_index(np.arange(T * D1 * D2), (T, D1, D2)), axis=1)
    if not np.array_equal(idx, canon):
        raise ValueError("t_index/row/col do not enumerate the grid exactly once")
    y = table[:, 5].reshape(T, D1, D2)
    mask = table[:, 6].reshape(T, D1, D2).astype(bool)
    x = table[:, 7:].reshape(T, D1, D2, d)
    lat = table[:, 3].reshape(T, D1, D2)[0]
    lon = table[:, 4].reshape(T, D1, D2)[0]
    return GridDataset(y, x, lat, lon, mask, tuple(meta["names"]), np.asarray(meta.get("times", range(T))),
                       meta.get("units", {}), meta.get("transform", "none"))
