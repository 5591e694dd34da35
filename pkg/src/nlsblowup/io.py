"""Field serialization: CSV columns ``r, Re u, Im u`` plus a JSON header."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import RadialField, RadialGrid, derive_params


def _stem(path) -> Path:
    p = Path(path)
    return p.with_suffix("") if p.suffix in (".csv", ".json") else p


def save_field(u: RadialField, path, extra: dict | None = None) -> Path:
    """Write ``<stem>.csv`` and ``<stem>.json``; returns the stem."""
    stem = _stem(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    data = np.column_stack([u.r, u.values.real, u.values.imag])
    np.savetxt(stem.with_suffix(".csv"), data, fmt="%.17g", delimiter=",", header="r,re,im", comments="")
    head = {"N": u.params.N, "p": u.params.p, **u.grid.header()}
    if extra:
        head.update(extra)
    stem.with_suffix(".json").write_text(json.dumps(head, indent=2))
    return stem


def load_field(path) -> tuple[RadialField, dict]:
    stem = _stem(path)
    head = json.loads(stem.with_suffix(".json").read_text())
    data = np.loadtxt(stem.with_suffix(".csv"), delimiter=",", skiprows=1, ndmin=2)
    grid = RadialGrid(data[:, 0], head.get("grid_mode", "uniform"), 0.0, head.get("stretch", 1.0))
    params = derive_params(head["N"], head["p"])
    return RadialField(grid, data[:, 1] + 1j * data[:, 2], params), head
