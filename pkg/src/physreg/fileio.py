"""File formats: observation CSV + JSON sidecar, fit JSON, surface CSV.

Floats are written with 17 significant digits so a write/read round trip is
exact. All writes go through a temporary file and an atomic rename.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .evolution import ObservationSet, sampling_from_meta, sampling_to_meta

FLOAT_FMT = "%.17g"


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path, text: str):
    return atomic_write_bytes(path, text.encode("utf-8"))


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def write_json(path, obj):
    return atomic_write_text(path, dumps_json(obj))


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".json")


def _table_text(header, columns) -> str:
    cols = np.column_stack(columns)
    lines = [",".join(header)]
    lines.extend(",".join(FLOAT_FMT % v for v in row) for row in cols)
    return "\n".join(lines) + "\n"


def observations_csv_text(obs: ObservationSet) -> str:
    if obs.dimension == 1:
        return _table_text(["x", "t", "u"], [obs.x, obs.t, obs.u])
    return _table_text(["x1", "x2", "t", "u"], [obs.x[:, 0], obs.x[:, 1], obs.t, obs.u])


def write_observations(obs: ObservationSet, path):
    """Write ``path`` (CSV) and its ``<stem>.json`` metadata sidecar."""
    atomic_write_text(path, observations_csv_text(obs))
    write_json(sidecar_path(path), obs.meta)
    return Path(path)


def read_observations(path) -> ObservationSet:
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if header == ["x", "t", "u"]:
        x = data[:, 0]
    elif header == ["x1", "x2", "t", "u"]:
        x = data[:, :2]
    else:
        raise ValueError(f"unexpected observation header {header!r}")
    meta = {}
    side = sidecar_path(path)
    if side.exists():
        meta = read_json(side)
    extra = {k: v for k, v in meta.items() if k not in ("n", "noise_sd", "seed", "sampling")}
    obs = ObservationSet(x, data[:, -2], data[:, -1], float(meta.get("noise_sd", 0.0)),
                         meta.get("seed"), sampling_from_meta(meta.get("sampling")), extra)
    if "n" in meta and int(meta["n"]) != obs.n:
        raise ValueError(f"sidecar says n={meta['n']} but the CSV has {obs.n} rows")
    return obs


def surface_csv_text(evaluate, domain, resolution=(41, 11)) -> str:
    """Evaluate ``evaluate(x, t)`` on a spacetime grid and format it as CSV.

    ``resolution`` gives points per spatial axis then the number of times.
    """
    *nx, nt = resolution
    if len(nx) == 1 and domain.dimension == 2:
        nx = nx * 2
    axes = [np.linspace(a, b, k) for (a, b), k in zip(domain.bounds, nx)]
    ts = np.linspace(0.0, domain.time_horizon, nt)
    mesh = np.meshgrid(*axes, ts, indexing="ij")
    cols = [m.ravel() for m in mesh]
    x = cols[0] if domain.dimension == 1 else np.column_stack(cols[:-1])
    u = evaluate(x, cols[-1])
    header = (["x"] if domain.dimension == 1 else ["x", "y"]) + ["t", "u_hat"]
    return _table_text(header, cols + [u])
