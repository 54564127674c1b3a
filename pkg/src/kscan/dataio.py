"""CSV ingestion/emission and run manifests."""

from __future__ import annotations

import csv
import hashlib
import io
import math
import platform
import sys
import time
from pathlib import Path

import numpy as np

from .errors import DataError
from .geometry import MODELS, LabeledDataset

DEFAULT_COLUMNS = ("x", "y", "m")


def fmt(x) -> str:
    """Shortest decimal that round-trips the double exactly."""
    x = float(x)
    if x.is_integer() and abs(x) < 2**53:
        return str(int(x))
    return repr(x)


def _value_fits(model, v):
    if model == "bernoulli":
        return v in (0.0, 1.0)
    if model == "poisson":
        return v >= 0 and v == math.floor(v)
    return True


def infer_model(values) -> str:
    m = np.asarray(values, dtype=np.float64)
    if np.isin(m, (0.0, 1.0)).all():
        return "bernoulli"
    if (m >= 0).all() and (m == np.floor(m)).all():
        return "poisson"
    return "gaussian"


def parse_columns(spec: str | None) -> tuple[str, str, str]:
    if spec is None:
        return DEFAULT_COLUMNS
    parts = [p.strip() for p in spec.split(",")]
    if len(parts) != 3 or not all(parts):
        raise ValueError(f"--columns needs three names X,Y,M, got {spec!r}")
    return tuple(parts)


def ingest_csv(path, columns=DEFAULT_COLUMNS, model: str | None = None) -> LabeledDataset:
    """Read a header-first CSV of points and measured values.

    Line numbers in errors are 1-based file lines (the header is line 1).
    """
    if model is not None and model not in MODELS:
        raise DataError(f"unknown model {model!r}")
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: missing header row") from None
        header = [h.strip() for h in header]
        try:
            cols = [header.index(c) for c in columns]
        except ValueError:
            raise DataError(f"{path}: header must contain columns {','.join(columns)}, "
                            f"got {','.join(header)}") from None
        xs, ys, ms = [], [], []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            try:
                vals = [float(row[i]) for i in cols]
            except (IndexError, ValueError):
                raise DataError(f"{path}: malformed row at line {line}") from None
            if not all(math.isfinite(v) for v in vals):
                raise DataError(f"{path}: non-finite value at line {line}")
            if model is not None and not _value_fits(model, vals[2]):
                raise DataError(f"{path}: value {row[cols[2]].strip()!r} at line {line} "
                                f"is not valid for the {model} model")
            xs.append(vals[0])
            ys.append(vals[1])
            ms.append(vals[2])
    if not xs:
        raise DataError(f"{path}: no data rows")
    m = np.array(ms)
    return LabeledDataset(np.column_stack([xs, ys]), m, model or infer_model(m))


def emit_csv(data: LabeledDataset, path=None, columns=DEFAULT_COLUMNS) -> str:
    """Write the dataset as CSV (to ``path`` if given) and return the text."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for (x, y), m in zip(data.xy, data.m):
        w.writerow((fmt(x), fmt(y), fmt(m)))
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def text_sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def manifest(command: str, config: dict, dataset_hash: str | None, started: float) -> dict:
    from . import __version__, backend

    return {
        "schema": 1,
        "command": command,
        "config": config,
        "dataset_sha256": dataset_hash,
        "version": __version__,
        "backend": backend.name,
        "python": sys.version.split()[0],
        "platform": platform.platform(),
        "started_unix": started,
        "wall_seconds": time.time() - started,
    }
