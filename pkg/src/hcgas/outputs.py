"""Machine-readable run outputs: CSV tables and a JSON sidecar per file."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import platform
import time
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import __version__
from ._backend import BACKEND


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def write_csv(path, columns, rows):
    """RFC 4180 table: header row, CRLF line ends, UTF-8, shortest round-trip floats."""
    path = Path(path)
    if path.parent != Path(""):
        path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(columns)
        for r in rows:
            if isinstance(r, dict):
                r = [r.get(c) for c in columns]
            w.writerow([_cell(v) for v in r])


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


@lru_cache(maxsize=1)
def build_id() -> str:
    """Digest of the package sources, standing in for a code version."""
    h = hashlib.sha256()
    root = Path(__file__).parent
    for p in sorted(root.glob("*.py")) + sorted(root.glob("*.pyx")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    return v


def sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def write_sidecar(path, command, config, seed=None, cache_checksums=(), wall_time=None,
                  results=None):
    """Write ``<path>.json`` describing how ``path`` was produced."""
    doc = {
        "command": command,
        "config": _jsonable(config),
        "seed": seed,
        "cache_checksums": list(cache_checksums),
        "wall_time_s": wall_time,
        "build_id": build_id(),
        "version": __version__,
        "backend": BACKEND,
        "python": platform.python_version(),
        "created_unix": time.time(),
        "output": os.fspath(path),
    }
    if results is not None:
        doc["results"] = _jsonable(results)
    with open(sidecar_path(path), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return doc
