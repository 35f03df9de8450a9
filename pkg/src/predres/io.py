"""Dataset ingestion and result persistence.

Numbers go to CSV with 17 significant digits and to JSON with Python's
shortest round-trip representation, so every value read back is bit-equal
to the value written.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

__all__ = [
    "DatasetError",
    "load_dataset",
    "load_vector",
    "write_columns",
    "read_columns",
    "write_json",
    "write_outputs",
]


class DatasetError(ValueError):
    """Malformed input file; the message names the offending location."""


def _split(line: str) -> list[str]:
    if "," in line:
        return [t.strip() for t in line.split(",")]
    if ";" in line:
        return [t.strip() for t in line.split(";")]
    return line.split()


def _parse_row(tokens):
    """Return ``(values, None)`` or ``(None, (column, token))`` for the first bad cell."""
    vals = []
    for j, t in enumerate(tokens, start=1):
        try:
            vals.append(float(t))
        except ValueError:
            return None, (j, t)
    return vals, None


def load_dataset(path) -> np.ndarray:
    """Read a numeric table into an ``s x p`` array, keeping row order.

    Cells are separated by commas, semicolons or whitespace.  Blank lines and
    lines starting with ``#`` are skipped.  A first row that does not parse
    is treated as a header when the rows after it do.
    """
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"{path}: no such file")
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise DatasetError(f"{path}: {exc}") from exc
    rows = [(i, _split(ln)) for i, ln in enumerate(lines, start=1)
            if ln.strip() and not ln.lstrip().startswith("#")]
    if not rows:
        raise DatasetError(f"{path}: no data rows")

    parsed = []
    for k, (lineno, tokens) in enumerate(rows):
        vals, bad = _parse_row(tokens)
        if bad is not None:
            if k == 0 and len(rows) > 1 and _parse_row(rows[1][1])[1] is None:
                continue  # header
            col, tok = bad
            raise DatasetError(f"{path}: row {lineno}, column {col}: cannot parse {tok!r} as a number")
        for col, v in enumerate(vals, start=1):
            if not math.isfinite(v):
                raise DatasetError(f"{path}: row {lineno}, column {col}: non-finite value {tokens[col - 1]!r}")
        parsed.append((lineno, vals))
    if not parsed:
        raise DatasetError(f"{path}: no data rows")
    width = len(parsed[0][1])
    for lineno, vals in parsed:
        if len(vals) != width:
            raise DatasetError(f"{path}: row {lineno} has {len(vals)} columns, expected {width}")
    return np.array([v for _, v in parsed], dtype=float)


def load_vector(path) -> np.ndarray:
    """Read a single-column file as a vector."""
    x = load_dataset(path)
    if x.shape[1] != 1:
        raise DatasetError(f"{path}: expected one column, found {x.shape[1]}")
    return x[:, 0]


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % float(v)


def write_columns(path, names, columns) -> Path:
    """Write equal-length columns as CSV with a header row."""
    path = Path(path)
    cols = [np.asarray(c).reshape(-1) for c in columns]
    if len(cols) != len(names) or len({c.shape[0] for c in cols}) > 1:
        raise ValueError("every column needs a name and the same length")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as fh:
            fh.write(",".join(names) + "\n")
            for row in zip(*cols):
                fh.write(",".join(_fmt(v) for v in row) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def read_columns(path) -> dict[str, np.ndarray]:
    path = Path(path)
    lines = path.read_text().splitlines()
    names = lines[0].split(",")
    data = np.array([[float(t) for t in ln.split(",")] for ln in lines[1:] if ln]).reshape(-1, len(names))
    return {n: data[:, j] for j, n in enumerate(names)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def write_json(path, payload: dict) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def write_outputs(out_dir, config: dict, posterior=None, convergence=None, extra: dict | None = None,
                  version: str | None = None) -> dict[str, Path]:
    """Persist a run under ``out_dir`` (created on demand).

    ``posterior`` is a :class:`~predres.resampler.PosteriorSample`;
    ``convergence`` is ``(checkpoints, distances)`` with one row per path.
    Wall-clock time goes to ``timing.json`` so that every other file is a
    pure function of configuration, data and seed.  Returns the written
    paths by role.
    """
    from . import __version__

    out = Path(out_dir)
    written: dict[str, Path] = {}
    summary = {"version": version or __version__, "config": config}
    if posterior is not None:
        written["thetas"] = write_columns(out / "thetas.csv", ["theta"], [posterior.thetas])
        summary["summary"] = posterior.summary
        meta = dict(posterior.meta)
        summary["plan"] = meta.pop("plan", None)
        seconds = meta.pop("seconds", None)
        if seconds is not None:
            written["timing"] = write_json(out / "timing.json", {"runtime_seconds": seconds})
        summary.update(meta)
        if posterior.density is not None:
            d = posterior.density
            written["density"] = write_columns(out / "posterior_density.csv", ["y", "f"], [d.grid, d.density])
    if convergence is not None:
        ns, dist = convergence
        dist = np.atleast_2d(dist)
        P, K = dist.shape
        written["convergence"] = write_columns(
            out / "convergence.csv", ["path", "n", "value"],
            [np.repeat(np.arange(P), K), np.tile(np.asarray(ns), P), dist.reshape(-1)],
        )
    if extra:
        summary.update(extra)
    written["summary"] = write_json(out / "summary.json", summary)
    return written
