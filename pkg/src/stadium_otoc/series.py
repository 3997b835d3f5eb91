"""Time series container shared by every producer and consumer.

On disk a series is a CSV with the fixed columns ``t, ell, value, stderr`` and a
JSON sidecar holding metadata.  Floats are written with ``repr`` so a
round trip is exact and reruns are byte identical.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

COLUMNS = ("t", "ell", "value", "stderr")


class SeriesFormatError(ValueError):
    pass


@dataclass
class OtocSeries:
    t: np.ndarray
    ell: np.ndarray
    values: np.ndarray
    stderr: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, float)
        self.ell = np.asarray(self.ell, float)
        self.values = np.asarray(self.values)
        if self.stderr is None:
            self.stderr = np.zeros(self.t.shape)
        self.stderr = np.asarray(self.stderr, float)
        self.validate()

    def validate(self) -> None:
        n = self.t.size
        for name in ("ell", "values", "stderr"):
            if getattr(self, name).shape != (n,):
                raise SeriesFormatError(f"{name} must have shape ({n},)")
        if n > 1 and (np.any(np.diff(self.t) <= 0) or np.any(np.diff(self.ell) <= 0)):
            raise SeriesFormatError("t and ell grids must be strictly increasing")
        if np.any(self.stderr < 0):
            raise SeriesFormatError("stderr must be non-negative")

    def __len__(self):
        return self.t.size

    def scaled(self, factor: float, **meta) -> "OtocSeries":
        return OtocSeries(self.t, self.ell, self.values * factor, self.stderr * abs(factor),
                          {**self.meta, **meta})

    def window(self, lo: float, hi: float, on: str = "ell") -> "OtocSeries":
        x = self.ell if on == "ell" else self.t
        sel = (x >= lo) & (x <= hi)
        return OtocSeries(self.t[sel], self.ell[sel], self.values[sel], self.stderr[sel], dict(self.meta))

    # -- persistence ------------------------------------------------------
    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        vals = np.real(self.values)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(COLUMNS)
            for row in zip(self.t, self.ell, vals, self.stderr):
                w.writerow([repr(float(x)) for x in row])
        with open(sidecar(path), "w") as fh:
            json.dump(_jsonable(self.meta), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path

    @classmethod
    def read(cls, path) -> "OtocSeries":
        path = Path(path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or tuple(rows[0]) != COLUMNS:
            raise SeriesFormatError(f"{path}: header must be {','.join(COLUMNS)}")
        try:
            data = np.array([[float(x) for x in r] for r in rows[1:]]).reshape(-1, 4)
        except ValueError as exc:
            raise SeriesFormatError(f"{path}: non-numeric entry") from exc
        if not np.all(np.isfinite(data[:, :2])):
            raise SeriesFormatError(f"{path}: non-finite grid value")
        meta = {}
        if sidecar(path).exists():
            with open(sidecar(path)) as fh:
                meta = json.load(fh)
        return cls(data[:, 0], data[:, 1], data[:, 2], data[:, 3], meta)


def sidecar(path) -> Path:
    return Path(path).with_suffix(".json")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj
