"""Deterministic file output: CSV data, JSON manifests, config hashing.

CSV columns carry ``name:unit`` headers and 17-significant-digit values,
so every emitted file re-parses to the exact float64 arrays that
produced it and identical runs produce identical bytes.  Files are
written atomically (temp file in the target directory, then rename).
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field

import numpy as np

__all__ = [
    "RunManifest",
    "atomic_write_text",
    "write_csv",
    "read_csv",
    "canonical_config_bytes",
    "config_hash",
    "write_manifest",
]


def atomic_write_text(path: str, text: str) -> None:
    """Write ``text`` to ``path`` via a temp file and rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: str, columns: list[tuple[str, str, np.ndarray]], comments: list[str] | None = None) -> None:
    """Write named columns with units.

    ``columns`` holds (name, unit, values) triples of equal length.
    Comment lines (config hash and friends) go first, prefixed ``#``.
    """
    if not columns:
        raise ValueError("no columns to write")
    n = len(columns[0][2])
    for name, _, vals in columns:
        if len(vals) != n:
            raise ValueError(f"column {name!r} has mismatched length")
    lines = [f"# {c}" for c in (comments or [])]
    lines.append(",".join(f"{name}:{unit}" for name, unit, _ in columns))
    cols = [np.asarray(vals, dtype=float) for _, _, vals in columns]
    for i in range(n):
        lines.append(",".join(f"{col[i]:.17g}" for col in cols))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_csv(path: str):
    """Parse a CSV written by :func:`write_csv`.

    Returns (names, units, data) where data maps names to float arrays.
    """
    names, units, rows = [], [], []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if not names:
                for part in line.split(","):
                    name, _, unit = part.partition(":")
                    names.append(name)
                    units.append(unit)
                continue
            rows.append([float(v) for v in line.split(",")])
    arr = np.asarray(rows, dtype=float) if rows else np.empty((0, len(names)))
    return names, units, {name: arr[:, i] for i, name in enumerate(names)}


def canonical_config_bytes(config: dict) -> bytes:
    """Canonical serialization: sorted keys, minimal separators, UTF-8."""
    return json.dumps(config, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode()


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_config_bytes(config)).hexdigest()


@dataclass
class RunManifest:
    """Provenance record written alongside every run's outputs."""

    config_hash: str
    seed: int
    version: str
    duration_s: float
    outputs: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def write_manifest(path: str, manifest: RunManifest) -> None:
    atomic_write_text(path, manifest.to_json())
