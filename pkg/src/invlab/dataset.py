"""Point-observation datasets and their CSV/JSON file format."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    sigma: float
    seed: int | None = None
    fine_n: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        Y = np.array(self.Y, dtype=float).ravel()
        if X.shape[0] != Y.shape[0]:
            raise ValidationError(f"{X.shape[0]} design points but {Y.shape[0]} responses")
        if X.shape[1] not in (1, 2):
            raise ValidationError(f"design points must be 1- or 2-dimensional, got {X.shape[1]}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ValidationError("dataset contains NaN or Inf")
        if X.size and (np.any(X <= 0.0) or np.any(X >= 1.0)):
            raise ValidationError("design points must lie strictly inside the unit cube")
        if self.sigma < 0:
            raise ValidationError("noise level must be non-negative")
        X.setflags(write=False)
        Y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def N(self) -> int:
        return self.Y.size

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def sidecar(self) -> dict:
        return {"N": self.N, "d": self.d, "sigma": self.sigma, "seed": self.seed,
                "fine_n": self.fine_n, **self.meta}


def dataset_to_csv(ds: Dataset) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"x{a}" for a in range(ds.d)] + ["y"])
    for x, y in zip(ds.X, ds.Y):
        writer.writerow([repr(float(v)) for v in x] + [repr(float(y))])
    return buf.getvalue()


def dataset_from_csv(text: str, sidecar: dict | None = None) -> Dataset:
    sidecar = sidecar or {}
    try:
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], [r for r in rows[1:] if r]
        if header[-1] != "y" or not all(h.startswith("x") for h in header[:-1]):
            raise ValueError(f"unexpected header {header}")
        arr = np.array([[float(v) for v in r] for r in body], dtype=float)
        if arr.ndim != 2 or arr.shape[1] != len(header):
            raise ValueError("ragged rows")
    except (IndexError, ValueError) as exc:
        raise ValidationError(f"malformed dataset CSV: {exc}") from exc
    meta = {k: v for k, v in sidecar.items() if k not in ("N", "d", "sigma", "seed", "fine_n")}
    return Dataset(arr[:, :-1], arr[:, -1], float(sidecar.get("sigma", 0.0)),
                   sidecar.get("seed"), sidecar.get("fine_n"), meta)


def save_dataset(ds: Dataset, path, extra: dict | None = None) -> tuple:
    """Write ``path`` (CSV) and a JSON sidecar next to it; returns both paths."""
    path = Path(path)
    side = path.with_suffix(".json")
    path.write_text(dataset_to_csv(ds))
    side.write_text(json.dumps({**ds.sidecar(), **(extra or {})}, indent=2, sort_keys=True) + "\n")
    return path, side


def load_dataset(path) -> Dataset:
    path = Path(path)
    side = path.with_suffix(".json")
    try:
        text = path.read_text()
        sidecar = json.loads(side.read_text()) if side.exists() else {}
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read dataset {path}: {exc}") from exc
    if not isinstance(sidecar, dict):
        raise ValidationError("dataset sidecar must be a JSON object")
    return dataset_from_csv(text, sidecar)
