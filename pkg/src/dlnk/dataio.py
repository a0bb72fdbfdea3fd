"""Dataset readers.

FC data is CSV with a header row ``x_1..x_N0, y_1..y_D`` and one example
per row. Conv data is JSON ``{"x": [example][channel][space], "y": [...]}``.
Labels are optional for test inputs and for prior sampling.
"""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DataError, ParseError, ShapeMismatch

_COLUMN = re.compile(r"^([xy])_(\d+)$")


@dataclass
class LoadedData:
    x: np.ndarray                # fc: (N_0, P); conv: (P, C_0, N_0)
    y: Optional[np.ndarray]      # fc: (P*D,) example-major; conv: (P,)

    @property
    def p(self) -> int:
        return self.x.shape[1] if self.x.ndim == 2 else self.x.shape[0]


def _read_text(path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None


def _header(row, path, n0, d):
    xs, ys = [], []
    for col, name in enumerate(row, start=1):
        m = _COLUMN.match(name.strip())
        if not m:
            raise ParseError(f"unexpected column name {name.strip()!r}", path, 1, col)
        if m.group(1) == "x" and ys:
            raise ParseError("input columns must precede the labels", path, 1, col)
        (xs if m.group(1) == "x" else ys).append(int(m.group(2)))
    if xs != list(range(1, len(xs) + 1)):
        raise ParseError("input columns must be x_1..x_N0 in order", path, 1, 1)
    if ys and ys != list(range(1, len(ys) + 1)):
        raise ParseError("label columns must be y_1..y_D in order", path, 1, len(xs) + 1)
    if len(xs) != n0:
        raise ShapeMismatch(f"{path}: {len(xs)} input columns, network expects N_0={n0}")
    if ys and d is not None and len(ys) != d:
        raise ShapeMismatch(f"{path}: {len(ys)} label columns, network expects D={d}")
    return len(xs), len(ys)


def read_fc_csv(path, n0: int, d: int | None, require_labels: bool) -> LoadedData:
    text = _read_text(path)
    rows = list(csv.reader(text.splitlines()))
    if not rows:
        raise ParseError("empty file, expected a header row", path, 1, 1)
    nx, ny = _header(rows[0], path, n0, d)
    if require_labels and ny == 0:
        raise DataError(f"{path}: labels y_1..y_D are required here")
    width = nx + ny
    values = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != width:
            raise ParseError(f"expected {width} fields, found {len(row)}", path, lineno, min(len(row), width) + 1)
        out = []
        for col, cell in enumerate(row, start=1):
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(f"not a number: {cell.strip()!r}", path, lineno, col) from None
            if not math.isfinite(v):
                raise ParseError(f"non-finite value {cell.strip()!r}", path, lineno, col)
            out.append(v)
        values.append(out)
    if not values:
        raise DataError(f"{path}: no examples")
    arr = np.array(values)
    x = arr[:, :nx].T.copy()
    y = arr[:, nx:].ravel() if ny else None
    return LoadedData(x, y)


def _numeric(a, path, what):
    try:
        arr = np.array(a, dtype=float)
    except (TypeError, ValueError):
        raise ParseError(f"'{what}' must be a nested array of numbers", path) from None
    if not np.all(np.isfinite(arr)):
        raise ParseError(f"'{what}' contains non-finite values", path)
    return arr


def read_conv_json(path, c0: int, n0: int, require_labels: bool) -> LoadedData:
    text = _read_text(path)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, path, exc.lineno, exc.colno) from None
    if not isinstance(doc, dict) or "x" not in doc:
        raise ParseError("expected an object with key 'x'", path, 1, 1)
    unknown = set(doc) - {"x", "y"}
    if unknown:
        raise ParseError(f"unknown keys {sorted(unknown)}", path, 1, 1)
    x = _numeric(doc["x"], path, "x")
    if x.ndim != 3 or x.shape[1:] != (c0, n0):
        raise ShapeMismatch(f"{path}: x must be [example][{c0} channels][{n0} sites], got shape {x.shape}")
    y = None
    if "y" in doc:
        y = _numeric(doc["y"], path, "y").ravel()
        if y.size != x.shape[0]:
            raise ShapeMismatch(f"{path}: {y.size} labels for {x.shape[0]} examples")
    elif require_labels:
        raise DataError(f"{path}: labels 'y' are required here")
    return LoadedData(x, y)


def read_dataset(path, spec, require_labels: bool = True) -> LoadedData:
    """Read ``path`` in the format implied by the network type."""
    if hasattr(spec, "channels"):
        return read_conv_json(path, spec.c0, spec.n0, require_labels)
    return read_fc_csv(path, spec.n0, spec.d, require_labels)


def write_fc_csv(path, x, y=None, d: int = 1) -> None:
    """Write an (N_0, P) input matrix and optional example-major labels."""
    x = np.asarray(x, dtype=float)
    n0, p = x.shape
    header = [f"x_{i + 1}" for i in range(n0)]
    ymat = None
    if y is not None:
        ymat = np.asarray(y, dtype=float).reshape(p, d)
        header += [f"y_{i + 1}" for i in range(d)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for mu in range(p):
            row = list(x[:, mu])
            if ymat is not None:
                row += list(ymat[mu])
            w.writerow([repr(float(v)) for v in row])


def write_conv_json(path, x, y=None) -> None:
    doc = {"x": np.asarray(x, dtype=float).tolist()}
    if y is not None:
        doc["y"] = np.asarray(y, dtype=float).ravel().tolist()
    Path(path).write_text(json.dumps(doc))
