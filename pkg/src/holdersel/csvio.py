"""Deterministic CSV artifacts.

Summary files start with ``#`` comment lines carrying reproducibility
metadata (config hash, seed0, version and a write timestamp). The header
row and data rows never contain the timestamp, so two runs of the same
configuration produce byte-identical bodies. Floats are written with
``repr`` so values round-trip exactly.
"""

from __future__ import annotations

import csv
import io
import math
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._version import __version__
from .errors import ConfigError

__all__ = ["format_value", "write_summary", "read_summary", "summary_body", "write_path_csv"]

META_COLUMNS = ("config_hash", "seed0", "version")


def format_value(v) -> str:
    """Render a cell: ``repr`` for floats, ``nan``/``inf`` spelled out, ``""`` for None."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        f = float(v)
        if math.isnan(f):
            return "nan"
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        return repr(f)
    return str(v)


def _render(rows: Sequence[Mapping], header: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in rows:
        w.writerow([format_value(row.get(c)) for c in header])
    return buf.getvalue()


def write_summary(path, rows: Sequence[Mapping], *, config_hash: str, seed0: int,
                  version: str = __version__, timestamp: bool = True) -> Path:
    """Append summary rows, creating the file with metadata if needed.

    The header is ``config_hash, seed0, version`` followed by the keys of
    the first row in order.

    Raises
    ------
    ConfigError
        If the file exists with a different header or rows disagree on keys.
    """
    path = Path(path)
    if not rows:
        raise ConfigError("no summary rows to write")
    keys = list(rows[0])
    for r in rows[1:]:
        if list(r) != keys:
            raise ConfigError("summary rows have inconsistent columns")
    header = list(META_COLUMNS) + keys
    meta = {"config_hash": config_hash, "seed0": int(seed0), "version": version}
    full = [{**meta, **r} for r in rows]
    body = _render(full, header)
    if path.exists() and path.stat().st_size > 0:
        existing = _header_of(path)
        if existing != header:
            raise ConfigError(f"{path} has header {existing}, cannot append {header}")
        with open(path, "a", encoding="utf-8", newline="") as fh:
            fh.write(body)
        return path
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# config_sha256={config_hash}", f"# seed0={int(seed0)}", f"# version={version}"]
    if timestamp:
        lines.append(f"# written={datetime.now(timezone.utc).isoformat(timespec='seconds')}")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
        fh.write(_render([dict(zip(header, header))], header))
        fh.write(body)
    return path


def _header_of(path: Path) -> list[str]:
    with open(path, encoding="utf-8", newline="") as fh:
        for line in fh:
            if not line.startswith("#"):
                return next(csv.reader([line]))
    return []


def summary_body(path) -> str:
    """File contents without comment lines (the reproducible part)."""
    with open(path, encoding="utf-8", newline="") as fh:
        return "".join(line for line in fh if not line.startswith("#"))


def read_summary(path) -> tuple[dict, list[dict]]:
    """Parse a summary file into ``(metadata, rows)``; cells stay strings."""
    meta = {}
    with open(path, encoding="utf-8", newline="") as fh:
        lines = fh.readlines()
    data = []
    for line in lines:
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            meta[key.strip()] = val.strip()
        else:
            data.append(line)
    return meta, list(csv.DictReader(data))


def write_path_csv(path, t, x, y) -> Path:
    """Write one path as columns ``t, x_1..x_d, y`` (or ``y_1..y_k``)."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float).reshape(t.size, -1)
    y = np.asarray(y, dtype=float).reshape(t.size, -1)
    header = ["t"] + [f"x_{i + 1}" for i in range(x.shape[1])]
    header += ["y"] if y.shape[1] == 1 else [f"y_{j + 1}" for j in range(y.shape[1])]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(t.size):
            w.writerow([format_value(v) for v in (t[i], *x[i], *y[i])])
    return path
