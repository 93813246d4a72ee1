"""Plain-text file formats.

Count matrices and support sets use 1-based indices on disk; everything in
memory is 0-based. Floats are written with 17 significant digits so that a
write/read/write cycle is byte-identical.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .model import CountMatrix, FactorModel, SupportSets

MATRIX_HEADER = "%%cnmf-matrix"
SUPPORTS_HEADER = "%%cnmf-supports"
LABELS_HEADER = "%%cnmf-labels"
MODEL_FILES = ("A.tsv", "W.tsv", "b.tsv", "manifest.json")


class FormatError(ValueError):
    """Malformed input file; the message carries ``path:line``."""

    def __init__(self, path, line: Optional[int], msg: str):
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {msg}")


def fmt(v: float) -> str:
    return format(float(v), ".17g")


def _write_text(path, text: str):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _read_lines(path) -> list[str]:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read().split("\n")
    except FileNotFoundError:
        raise FormatError(path, None, "file not found") from None


def _header(path, lines, tag, n_fields):
    if not lines or not lines[0].startswith(tag):
        raise FormatError(path, 1, f"expected header '{tag}'")
    parts = lines[0].split()
    if len(parts) != n_fields + 1:
        raise FormatError(path, 1, f"header needs {n_fields} integers")
    try:
        vals = [int(p) for p in parts[1:]]
    except ValueError:
        raise FormatError(path, 1, "header fields must be integers") from None
    if any(v < 0 for v in vals):
        raise FormatError(path, 1, "header fields must be non-negative")
    return vals


def _body(lines):
    # a single trailing newline leaves one empty final element
    return lines[1:-1] if lines and lines[-1] == "" else lines[1:]


def write_matrix(path, X: CountMatrix):
    d, n = X.shape
    out = [f"{MATRIX_HEADER} {d} {n} {X.nnz}"]
    out.extend(f"{r + 1} {c + 1} {fmt(v)}" for r, c, v in zip(X.rows, X.cols, X.values))
    _write_text(path, "\n".join(out) + "\n")


def read_matrix(path, feature_names: Optional[Sequence[str]] = None) -> CountMatrix:
    lines = _read_lines(path)
    d, n, nnz = _header(path, lines, MATRIX_HEADER, 3)
    body = _body(lines)
    if len(body) != nnz:
        raise FormatError(path, len(body) + 1, f"header declares {nnz} entries, found {len(body)}")
    rows = np.empty(nnz, dtype=np.int64)
    cols = np.empty(nnz, dtype=np.int64)
    vals = np.empty(nnz)
    seen = set()
    for i, line in enumerate(body):
        lineno = i + 2
        parts = line.split()
        if len(parts) != 3:
            raise FormatError(path, lineno, "expected 'row col value'")
        try:
            r, c, v = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise FormatError(path, lineno, "could not parse entry") from None
        if not (1 <= r <= d and 1 <= c <= n):
            raise FormatError(path, lineno, f"index ({r}, {c}) outside 1..{d} x 1..{n}")
        if not np.isfinite(v) or v < 0:
            raise FormatError(path, lineno, "value must be finite and non-negative")
        if (r, c) in seen:
            raise FormatError(path, lineno, f"duplicate entry ({r}, {c})")
        seen.add((r, c))
        rows[i], cols[i], vals[i] = r - 1, c - 1, v
    return CountMatrix(rows, cols, vals, (d, n), feature_names=feature_names)


def write_supports(path, supports: SupportSets):
    out = [f"{SUPPORTS_HEADER} {len(supports)} {supports.n_conditions}"]
    out.extend(" ".join(str(k + 1) for k in sorted(s)) for s in supports.sets)
    _write_text(path, "\n".join(out) + "\n")


def read_supports(path) -> SupportSets:
    lines = _read_lines(path)
    n, K = _header(path, lines, SUPPORTS_HEADER, 2)
    body = _body(lines)
    if len(body) != n:
        raise FormatError(path, len(body) + 1, f"header declares {n} columns, found {len(body)}")
    sets = []
    for i, line in enumerate(body):
        try:
            idx = [int(p) for p in line.split()]
        except ValueError:
            raise FormatError(path, i + 2, "condition indices must be integers") from None
        bad = [k for k in idx if not 1 <= k <= K]
        if bad:
            raise FormatError(path, i + 2, f"condition index {bad[0]} outside 1..{K}")
        sets.append(frozenset(k - 1 for k in idx))
    return SupportSets(tuple(sets), K)


def write_labels(path, labels):
    labels = np.asarray(labels).astype(np.int64)
    _write_text(path, "\n".join([f"{LABELS_HEADER} {labels.size}"] + [str(v) for v in labels]) + "\n")


def read_labels(path) -> np.ndarray:
    lines = _read_lines(path)
    (n,) = _header(path, lines, LABELS_HEADER, 1)
    body = _body(lines)
    if len(body) != n:
        raise FormatError(path, len(body) + 1, f"header declares {n} labels, found {len(body)}")
    out = np.empty(n, dtype=np.int64)
    for i, line in enumerate(body):
        if line.strip() not in ("0", "1"):
            raise FormatError(path, i + 2, "labels must be 0 or 1")
        out[i] = int(line)
    return out


def write_names(path, names: Sequence[str]):
    _write_text(path, "".join(f"{s}\n" for s in names))


def read_names(path) -> list[str]:
    lines = _read_lines(path)
    if lines and lines[-1] == "":
        lines = lines[:-1]
    for i, s in enumerate(lines):
        if not s or "\t" in s:
            raise FormatError(path, i + 1, "names must be non-empty and contain no tabs")
    return lines


def write_table(path, corner: str, col_names, row_names, M):
    out = ["\t".join([corner, *col_names])]
    for name, row in zip(row_names, M):
        out.append("\t".join([name, *(fmt(v) for v in row)]))
    _write_text(path, "\n".join(out) + "\n")


def read_table(path, corner: str):
    lines = _read_lines(path)
    if lines and lines[-1] == "":
        lines = lines[:-1]
    if not lines or lines[0].split("\t")[0] != corner:
        raise FormatError(path, 1, f"expected header starting with '{corner}'")
    col_names = lines[0].split("\t")[1:]
    row_names, rows = [], []
    for i, line in enumerate(lines[1:]):
        parts = line.split("\t")
        if len(parts) != len(col_names) + 1:
            raise FormatError(path, i + 2, f"expected {len(col_names) + 1} fields, found {len(parts)}")
        try:
            rows.append([float(p) for p in parts[1:]])
        except ValueError:
            raise FormatError(path, i + 2, "could not parse number") from None
        row_names.append(parts[0])
    M = np.array(rows, dtype=np.float64).reshape(len(rows), len(col_names))
    return col_names, row_names, M


def default_names(prefix: str, n: int) -> list[str]:
    return [f"{prefix}{i + 1}" for i in range(n)]


def write_model(directory, model: FactorModel, *, feature_names=None, condition_names=None,
                column_ids=None, extra: Optional[dict] = None):
    """Write ``A.tsv``, ``W.tsv``, ``b.tsv`` and ``manifest.json`` into ``directory``."""
    d, K, n = model.n_features, model.n_components, model.n_columns
    features = list(feature_names) if feature_names is not None else default_names("feature_", d)
    conditions = list(condition_names) if condition_names is not None else default_names("condition_", K)
    columns = list(column_ids) if column_ids is not None else default_names("column_", n)
    os.makedirs(directory, exist_ok=True)
    directory = Path(directory)
    write_table(directory / "A.tsv", "feature", conditions, features, model.A)
    write_table(directory / "W.tsv", "condition", columns, conditions, model.W)
    write_table(directory / "b.tsv", "feature", ["bias"], features, model.b[:, None])
    manifest = {
        "format": "groundnmf-model",
        "version": 1,
        "lambda": model.lam,
        "simplex_enabled": model.simplex_enabled,
        "n_features": d,
        "n_components": K,
        "n_columns": n,
    }
    if extra:
        manifest.update(extra)
    write_json(directory / "manifest.json", manifest)


@dataclass(frozen=True, eq=False)
class LoadedModel:
    model: FactorModel
    feature_names: list[str]
    condition_names: list[str]
    column_ids: list[str]
    manifest: dict


def read_model(directory) -> LoadedModel:
    directory = Path(directory)
    missing = [f for f in MODEL_FILES if not (directory / f).is_file()]
    if missing:
        raise FormatError(directory, None, f"missing model file(s): {', '.join(missing)}")
    manifest = read_json(directory / "manifest.json")
    conditions, features, A = read_table(directory / "A.tsv", "feature")
    columns, conditions_w, W = read_table(directory / "W.tsv", "condition")
    bias_cols, features_b, b = read_table(directory / "b.tsv", "feature")
    if conditions_w != conditions:
        raise FormatError(directory / "W.tsv", 1, "condition names differ from A.tsv")
    if features_b != features or bias_cols != ["bias"]:
        raise FormatError(directory / "b.tsv", 1, "rows must match the features of A.tsv")
    for key in ("lambda", "simplex_enabled"):
        if key not in manifest:
            raise FormatError(directory / "manifest.json", None, f"missing key '{key}'")
    model = FactorModel(A=A, W=W, b=b[:, 0], lam=manifest["lambda"],
                        simplex_enabled=manifest["simplex_enabled"])
    return LoadedModel(model, features, conditions, columns, manifest)


def write_json(path, obj):
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise FormatError(path, None, "file not found") from None
    except json.JSONDecodeError as exc:
        raise FormatError(path, exc.lineno, exc.msg) from None
