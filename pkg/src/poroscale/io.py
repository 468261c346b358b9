"""Field datasets on disk: a full-grid CSV plus a JSON sidecar of metadata."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .biot import PoroelasticParams
from .forward import FocalField, GridSpec, SourceSpec

CSV_COLUMNS = ("x", "y", "re_ux", "im_ux", "re_uy", "im_uy", "re_p", "im_p",
               "re_fux", "im_fux", "re_fp", "im_fp")


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def write_dataset(path, fld: FocalField, params: PoroelasticParams | None = None,
                  source: SourceSpec | None = None) -> tuple[Path, Path]:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    g = fld.grid
    X, Y = np.meshgrid(g.coords, g.coords, indexing="ij")
    cols = [X, Y]
    for name in ("ux", "uy", "p", "fux", "fp"):
        arr = getattr(fld, name)
        cols += [arr.real, arr.imag]
    table = np.column_stack([c.ravel() for c in cols])
    np.savetxt(path, table, delimiter=",", header=",".join(CSV_COLUMNS), comments="",
               fmt="%.17g")
    meta = {
        "omega": fld.omega,
        "grid": {"L": g.L, "n": g.n},
        "center": list(fld.center),
        "half_width": fld.half_width,
        "fp_mode": fld.meta.get("fp_mode", "dx"),
        "source": None if source is None else {
            "D": source.D, "varsigma": source.varsigma, "x0": list(source.x0)},
        "params": None if params is None else params.to_dict(),
        "max_condition": fld.meta.get("max_condition"),
    }
    side = sidecar_path(path)
    side.write_text(json.dumps(meta, indent=2, sort_keys=True))
    return path, side


def read_dataset(path):
    """Load a dataset; returns ``(FocalField, params or None, metadata dict)``."""
    path = Path(path)
    side = sidecar_path(path)
    if not side.exists():
        raise FileNotFoundError(f"missing metadata sidecar {side}")
    meta = json.loads(side.read_text())
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    if tuple(header) != CSV_COLUMNS:
        raise ValueError(f"{path} has header {header}, expected {list(CSV_COLUMNS)}")
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    grid = GridSpec(float(meta["grid"]["L"]), int(meta["grid"]["n"]))
    if table.shape != (grid.n * grid.n, len(CSV_COLUMNS)):
        raise ValueError(f"{path} holds {table.shape[0]} rows; grid needs {grid.n ** 2}")

    def field_of(name):
        re = table[:, CSV_COLUMNS.index(f"re_{name}")]
        im = table[:, CSV_COLUMNS.index(f"im_{name}")]
        return (re + 1j * im).reshape(grid.n, grid.n)

    fld = FocalField(
        grid=grid, omega=float(meta["omega"]),
        ux=field_of("ux"), uy=field_of("uy"), p=field_of("p"),
        fux=field_of("fux"), fp=field_of("fp"),
        center=tuple(meta.get("center", (0.0, 0.0))),
        half_width=float(meta.get("half_width", 2.5)),
        meta={"fp_mode": meta.get("fp_mode", "dx"), "max_condition": meta.get("max_condition")},
    )
    params = PoroelasticParams.from_dict(meta["params"]) if meta.get("params") else None
    return fld, params, meta
