"""Delimited-text file formats.

All files are comma separated with a single header row, except that a
covariate matrix may also be headerless or whitespace separated.

* population: ``y1,y0,x1,...,xK``
* covariates: ``x1,...,xK`` (header optional)
* observed data: ``y,z,x1,...,xK`` with ``z`` in {0, 1}
* assignment: a ``# M=... a=... p=... attempts=...`` comment line, then
  ``unit_index,z``
"""
from __future__ import annotations

import csv
import io
import math
from pathlib import Path

import numpy as np

from .design import AssignmentDraw
from .errors import MalformedInputError
from .estimate import ObservedData
from .popmodel import FinitePopulation


def _read_text(path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise MalformedInputError(f"cannot read {path}: {exc.strerror or exc}") from exc


def _parse_table(text: str, where: str):
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise MalformedInputError(f"{where}: file is empty")
    delim = "," if "," in lines[0] else None
    rows = [ln.split(delim) if delim is None else next(csv.reader([ln])) for ln in lines]
    rows = [[c.strip() for c in r] for r in rows]
    header = None
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        header, rows = rows[0], rows[1:]
    if not rows:
        raise MalformedInputError(f"{where}: no data rows")
    width = len(header) if header else len(rows[0])
    out = np.empty((len(rows), width))
    for i, r in enumerate(rows):
        if len(r) != width:
            raise MalformedInputError(f"{where}: row {i + 1} has {len(r)} fields, expected {width}")
        for j, c in enumerate(r):
            if c == "":
                raise MalformedInputError(f"{where}: missing value at row {i + 1}, column {j + 1}")
            try:
                out[i, j] = float(c)
            except ValueError:
                raise MalformedInputError(
                    f"{where}: non-numeric value {c!r} at row {i + 1}, column {j + 1}") from None
    if not np.all(np.isfinite(out)):
        raise MalformedInputError(f"{where}: non-finite values are not allowed")
    return header, out


def read_matrix(path) -> np.ndarray:
    """Numeric matrix from a delimited file; a non-numeric first row is taken as a header."""
    return _parse_table(_read_text(path), str(path))[1]


def _require_header(header, first: list[str], where: str) -> None:
    if header is None:
        raise MalformedInputError(f"{where}: missing header row ({','.join(first)},x1,...)")
    if [h.lower() for h in header[:len(first)]] != first:
        raise MalformedInputError(
            f"{where}: header must start with {','.join(first)}, got {','.join(header[:len(first)])}")
    if len(header) <= len(first):
        raise MalformedInputError(f"{where}: at least one covariate column is required")


def read_population(path) -> FinitePopulation:
    header, m = _parse_table(_read_text(path), str(path))
    _require_header(header, ["y1", "y0"], str(path))
    return FinitePopulation(m[:, 0], m[:, 1], m[:, 2:])


def write_population(pop: FinitePopulation, path) -> None:
    cols = ["y1", "y0"] + [f"x{j + 1}" for j in range(pop.k)]
    _write_rows(path, cols, np.column_stack([pop.y1, pop.y0, pop.covariates]))


def read_observed(path) -> ObservedData:
    header, m = _parse_table(_read_text(path), str(path))
    _require_header(header, ["y", "z"], str(path))
    if not np.isin(m[:, 1], (0.0, 1.0)).all():
        raise MalformedInputError(f"{path}: column z must contain only 0 and 1")
    return ObservedData(m[:, 0], m[:, 1].astype(np.int8), m[:, 2:])


def write_observed(data: ObservedData, path) -> None:
    cols = ["y", "z"] + [f"x{j + 1}" for j in range(data.k)]
    _write_rows(path, cols, np.column_stack([data.y, data.z, data.covariates]),
                int_cols={1})


def _fmt(v: float) -> str:
    return repr(float(v))


def _write_rows(path, cols, m, int_cols=()) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for row in m:
        w.writerow([str(int(v)) if j in int_cols else _fmt(v) for j, v in enumerate(row)])
    Path(path).write_text(buf.getvalue())


def format_assignment(draw: AssignmentDraw, threshold: float, p: float) -> str:
    m = "nan" if draw.M is None else f"{draw.M:.10g}"
    a = "inf" if math.isinf(threshold) else f"{threshold:.10g}"
    lines = [f"# M={m} a={a} p={p:.10g} attempts={draw.attempts}", "unit_index,z"]
    lines += [f"{i},{int(v)}" for i, v in enumerate(draw.z)]
    return "\n".join(lines) + "\n"


def read_assignment(path) -> np.ndarray:
    header, m = _parse_table(_read_text(path), str(path))
    _require_header(header, ["unit_index"], str(path))
    if header[1].lower() != "z" or m.shape[1] != 2:
        raise MalformedInputError(f"{path}: expected columns unit_index,z")
    idx = m[:, 0].astype(int)
    if not np.array_equal(np.sort(idx), np.arange(len(idx))):
        raise MalformedInputError(f"{path}: unit_index must enumerate 0..n-1")
    z = np.empty(len(idx), dtype=np.int8)
    z[idx] = m[:, 1]
    return z
