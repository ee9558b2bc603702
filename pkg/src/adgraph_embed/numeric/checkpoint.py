"""Named-tensor checkpoint files.

Each tensor is written as a header line ``name dim1 dim2 ...`` followed by a
line holding its values in row-major order, 17 significant digits each.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

import numpy as np

from .._fileio import atomic_write, fmt


def save_params(path: str | Path, params: Mapping[str, np.ndarray]) -> None:
    with atomic_write(path) as fh:
        for name, arr in params.items():
            if not name or any(c.isspace() for c in name):
                raise ValueError(f"invalid tensor name {name!r}")
            arr = np.asarray(arr, dtype=np.float64)
            fh.write(" ".join([name, *map(str, arr.shape)]) + "\n")
            fh.write(" ".join(fmt(v) for v in arr.reshape(-1).tolist()) + "\n")


def load_params(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if len(lines) % 2:
        raise ValueError(f"{path}: truncated checkpoint")
    out: dict[str, np.ndarray] = {}
    for h in range(0, len(lines), 2):
        name, *dims = lines[h].split()
        shape = tuple(int(d) for d in dims)
        values = [float(v) for v in lines[h + 1].split()]
        if len(values) != int(np.prod(shape)):
            raise ValueError(f"{path}: tensor {name!r} expects {int(np.prod(shape))} values, found {len(values)}")
        out[name] = np.array(values, dtype=np.float64).reshape(shape)
    return out
