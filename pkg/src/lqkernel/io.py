"""Dataset CSV files and model JSON files.

A dataset is a CSV with header ``x1,...,xd,y``. The output bound and the
dimension live in a sidecar JSON file next to it (``data.csv`` ->
``data.meta.json``); the bound can also be supplied by the caller.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from lqkernel.errors import InputError
from lqkernel.kernel import CoefficientModel, Dataset

__all__ = [
    "load_model",
    "meta_path",
    "read_dataset",
    "read_points",
    "save_model",
    "write_dataset",
]


def meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def _read_table(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        rows = [row for row in reader if row]
    try:
        values = np.array(rows, dtype=float).reshape(len(rows), len(header))
    except ValueError as exc:
        raise InputError(f"{path}: could not parse numeric rows ({exc})") from exc
    return header, values


def _feature_columns(header):
    cols = [i for i, h in enumerate(header) if h.startswith("x") and h[1:].isdigit()]
    cols.sort(key=lambda i: int(header[i][1:]))
    if not cols:
        raise InputError("no feature columns named x1..xd")
    expected = [f"x{k}" for k in range(1, len(cols) + 1)]
    if [header[i] for i in cols] != expected:
        raise InputError(f"feature columns must be {expected}")
    return cols


def read_points(path):
    """Feature matrix from a CSV with ``x1..xd`` columns (``y`` optional)."""
    header, values = _read_table(path)
    return values[:, _feature_columns(header)]


def read_dataset(path, M=None, check_domain=True) -> Dataset:
    """Load a dataset; ``M`` overrides the sidecar metadata."""
    header, values = _read_table(path)
    cols = _feature_columns(header)
    if "y" not in header:
        raise InputError(f"{path}: missing 'y' column")
    X = values[:, cols]
    y = values[:, header.index("y")]
    meta = {}
    mp = meta_path(path)
    if mp.exists():
        meta = json.loads(mp.read_text())
        if "d" in meta and int(meta["d"]) != X.shape[1]:
            raise InputError(f"{mp}: d={meta['d']} but CSV has {X.shape[1]} feature columns")
    if M is None:
        if "M" not in meta:
            raise InputError(f"output bound M not given and no 'M' in {mp}")
        M = meta["M"]
    return Dataset(X, y, float(M), check_domain=check_domain)


def write_dataset(path, data: Dataset, extra_meta=None):
    """Write ``data`` as CSV plus its sidecar metadata; returns the sidecar path."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{k}" for k in range(1, data.d + 1)] + ["y"])
        for xi, yi in zip(data.X, data.y):
            w.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])
    meta = {"M": data.M, "d": data.d, "m": data.m}
    meta.update(extra_meta or {})
    mp = meta_path(path)
    mp.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return mp


def save_model(path, model: CoefficientModel, **info):
    """Model JSON: ``sigma``, ``centers``, ``coeffs`` and any extra fields."""
    doc = {
        "sigma": model.sigma,
        "centers": model.centers.tolist(),
        "coeffs": model.coeffs.tolist(),
    }
    doc.update(info)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_model(path):
    """Returns ``(CoefficientModel, full_document)``."""
    doc = json.loads(Path(path).read_text())
    try:
        model = CoefficientModel(doc["sigma"], np.array(doc["centers"]), np.array(doc["coeffs"]))
    except KeyError as exc:
        raise InputError(f"{path}: model file missing field {exc}") from None
    return model, doc
