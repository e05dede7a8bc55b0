"""CSV / JSON emission with atomic writes and round-trip-safe floats."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

__all__ = ["write_csv", "read_csv", "write_json", "fmt", "encode_complex", "decode_complex", "atomic_write"]

FLOAT_FORMAT = "{:.17g}"


def _version() -> str:
    from . import __version__

    return __version__


def fmt(x) -> str:
    return FLOAT_FORMAT.format(float(x))


def atomic_write(path, text: str) -> Path:
    """Write ``text`` to a sibling temp file, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_csv(path, header: list, columns: list) -> Path:
    """Columns of equal length, real-valued; the first line records the producing version."""
    cols = [np.asarray(c, dtype=float).ravel() for c in columns]
    if len(header) != len(cols):
        raise ValueError("header and column count differ")
    if cols and any(c.size != cols[0].size for c in cols):
        raise ValueError("columns have different lengths")
    lines = [f"# liouville-cert {_version()}", ",".join(header)]
    n = cols[0].size if cols else 0
    for k in range(n):
        lines.append(",".join(fmt(c[k]) for c in cols))
    return atomic_write(path, "\n".join(lines) + "\n")


def read_csv(path) -> tuple[list, np.ndarray]:
    """Inverse of :func:`write_csv`: ``(header, data)`` with ``data`` of shape (rows, cols)."""
    with open(path) as fh:
        rows = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    header = rows[0].split(",")
    data = np.array([[float(x) for x in r.split(",")] for r in rows[1:]], dtype=float)
    return header, data.reshape(len(rows) - 1, len(header))


def _default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(path, payload: dict) -> Path:
    return atomic_write(path, json.dumps(payload, indent=2, sort_keys=True, default=_default) + "\n")


def encode_complex(a):
    """Nested lists of ``[re, im]`` pairs."""
    a = np.asarray(a, dtype=complex)
    return np.stack([a.real, a.imag], axis=-1).tolist()


def decode_complex(x, ndim: int = 2, name: str = "value"):
    """Read an ``ndim``-dimensional array whose scalars are reals or ``[re, im]`` pairs.

    The rank is needed to tell a pair from a length-2 row of reals.
    """
    def scalar(v):
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            return complex(v)
        if (isinstance(v, list) and len(v) == 2
                and all(isinstance(u, (int, float)) and not isinstance(u, bool) for u in v)):
            return complex(v[0], v[1])
        raise ValueError(f"{name}: cannot read {v!r} as a number or [re, im] pair")

    def walk(v, depth):
        if depth == ndim:
            return scalar(v)
        if not isinstance(v, list):
            raise ValueError(f"{name}: expected a {ndim}-dimensional nested list")
        return [walk(u, depth + 1) for u in v]

    out = np.asarray(walk(x, 0), dtype=complex)
    if out.ndim != ndim:
        raise ValueError(f"{name}: ragged or mis-shaped array")
    return out
