"""Versioned, self-describing text column files.

Layout::

    # harnack-lab columns v1
    # meta {"kind": ..., ...}
    name_a,name_b,...
    1.0,2.0,...

All numbers are written with 17 significant digits so a read/write round trip
is exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MAGIC = "# harnack-lab columns v1"


class ColumnFileError(ValueError):
    pass


def write_columns(path, meta, columns):
    path = Path(path)
    names = list(columns)
    arrays = [np.ravel(np.asarray(columns[k], dtype=float)) for k in names]
    if len({a.size for a in arrays}) > 1:
        raise ColumnFileError("all columns must have the same length")
    lines = [MAGIC, "# meta " + json.dumps(meta, sort_keys=True), ",".join(names)]
    if arrays:
        body = np.column_stack(arrays)
        lines.extend(",".join("%.17g" % v for v in row) for row in body)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path


def read_columns(path):
    text = Path(path).read_text().splitlines()
    if not text or text[0] != MAGIC:
        raise ColumnFileError(f"{path}: not a harnack-lab column file")
    if not text[1].startswith("# meta "):
        raise ColumnFileError(f"{path}: missing metadata line")
    meta = json.loads(text[1][len("# meta "):])
    names = text[2].split(",") if text[2] else []
    rows = [list(map(float, line.split(","))) for line in text[3:] if line]
    data = np.array(rows).reshape(len(rows), len(names)) if names else np.zeros((0, 0))
    return meta, {name: data[:, i] for i, name in enumerate(names)}


# -- typed helpers -------------------------------------------------------------
def save_flow(flow, path):
    from .flow import FlowSolution  # noqa: F401  (type reference only)

    spec = flow.spec.to_dict()
    spec.pop("phi0", None)
    meta = {"type": "FlowSolution", "spec": spec, "times": flow.times.tolist(),
            "residual": flow.residual, "shape": list(np.shape(flow.phi[0])) if flow.phi is not None else []}
    cols = {}
    if flow.phi is not None:
        for k in range(len(flow.times)):
            cols[f"phi@{k}"] = flow.phi[k]
    return write_columns(path, meta, cols)


def load_flow(path):
    from .flow import FlowSolution, conformal_rhs
    from .geometry import BackgroundSpec

    meta, cols = read_columns(path)
    if meta.get("type") != "FlowSolution":
        raise ColumnFileError(f"{path}: not a flow file")
    times = np.array(meta["times"])
    phi = None
    spec_d = dict(meta["spec"])
    if cols:
        shape = tuple(meta["shape"])
        phi = np.array([cols[f"phi@{k}"].reshape(shape) for k in range(len(times))])
        spec_d["phi0"] = phi[0]
    spec = BackgroundSpec.from_dict(spec_d)
    flow = FlowSolution(spec, times, residual=meta.get("residual", 0.0))
    if phi is not None:
        flow.phi = phi
        flow.phi_dot = np.array([conformal_rhs(flow.grid, p) for p in phi])
    return flow


def save_history(history, path):
    meta = {"type": "FieldHistory", "direction": history.direction, "times": history.times.tolist(),
            "shape": list(history.values.shape[1:]), "T": history.flow.T,
            "center": None if history.center is None else np.asarray(history.center, dtype=float).tolist(),
            "kind": history.flow.kind}
    cols = {f"u@{k}": history.values[k] for k in range(len(history.times))}
    return write_columns(path, meta, cols)


def load_history(path, flow):
    from .heat import FieldHistory

    meta, cols = read_columns(path)
    if meta.get("type") != "FieldHistory":
        raise ColumnFileError(f"{path}: not a field history file")
    if meta["kind"] != flow.kind or abs(meta["T"] - flow.T) > 1e-12:
        raise ColumnFileError("history was produced on a different flow")
    shape = tuple(meta["shape"])
    values = np.array([cols[f"u@{k}"].reshape(shape) for k in range(len(meta["times"]))])
    center = None if meta["center"] is None else np.array(meta["center"])
    return FieldHistory(flow, meta["direction"], np.array(meta["times"]), values, center=center)
