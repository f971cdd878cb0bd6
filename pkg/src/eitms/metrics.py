"""Reconstruction quality metrics and raster rendering of nodal fields."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .mesh import Mesh, MeshError, interpolate_field, locate_points


@dataclass(frozen=True)
class ColorScale:
    """Piecewise-linear RGB map over conductivity control points.

    Channels interpolate linearly between control points and clamp beyond
    the first and last one.
    """

    values: np.ndarray
    colors: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        colors = np.asarray(self.colors, dtype=float)
        if values.ndim != 1 or colors.shape != (values.size, 3):
            raise ValueError("need n control values and an (n, 3) color table")
        if not (np.diff(values) > 0).all():
            raise ValueError("control values must be strictly increasing")
        if colors.min() < 0 or colors.max() > 1:
            raise ValueError("colors must lie in [0, 1]")
        values.flags.writeable = False
        colors.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "colors", colors)

    def rgb(self, field: np.ndarray) -> np.ndarray:
        field = np.asarray(field, dtype=float)
        out = np.empty(field.shape + (3,))
        for ch in range(3):
            out[..., ch] = np.interp(field, self.values, self.colors[:, ch])
        return out

    def rgb_bytes(self, field: np.ndarray) -> np.ndarray:
        return np.rint(self.rgb(field) * 255.0).astype(np.uint8)


def default_color_scale() -> ColorScale:
    """Strongly nonlinear scale that resolves small variations around 1 S."""
    return ColorScale(
        values=np.array([0.0, 0.8, 1.0, 1.2, 10.0]),
        colors=np.array([
            [0.0, 0.0, 0.0],
            [0.5, 0.0, 0.0],
            [1.0, 0.7, 0.0],
            [1.0, 1.0, 1.0],
            [0.0, 1.0, 1.0],
        ]),
    )


def lumped_node_areas(mesh: Mesh) -> np.ndarray:
    """Per-node share of the domain area (a third of each adjacent element)."""
    contrib = np.repeat(mesh.element_area / 3.0, 3)
    return np.bincount(mesh.triangles.ravel(), weights=contrib, minlength=mesh.n_nodes)


def relative_error(mesh_rec: Mesh, gamma_rec: np.ndarray, mesh_true: Mesh,
                   gamma_true: np.ndarray) -> float:
    """Percent error of a reconstruction against the truth on its own mesh.

    The truth is interpolated onto the reconstruction mesh and both fields
    compared in the area-weighted nodal 2-norm:
    100 * ||g_rec - P g_true|| / ||P g_true||.
    """
    projected = interpolate_field(mesh_true, gamma_true, mesh_rec)
    w = lumped_node_areas(mesh_rec)
    diff = gamma_rec - projected
    denom = float(np.sqrt((w * projected**2).sum()))
    if denom == 0.0:
        raise MeshError("projected truth is identically zero")
    return 100.0 * float(np.sqrt((w * diff**2).sum())) / denom


class HwhmAreas(NamedTuple):
    conductive_area: float
    resistive_area: float
    background: float
    has_conductive: bool
    has_resistive: bool


def hwhm_areas(mesh: Mesh, gamma: np.ndarray,
               threshold_fraction: float = 0.5) -> HwhmAreas:
    """Half-width-style inclusion areas from a reconstructed field.

    The background level is the area-weighted median of the nodal values.
    Elements whose mean value rises at least ``threshold_fraction`` of the
    way from the background to the peak form the conductive inclusion; after
    removing them, the same rule toward the minimum yields the resistive
    inclusion. A fraction of 0.5 is the half-maximum convention; 0.7 is the
    stricter variant.
    """
    if not 0 < threshold_fraction < 1:
        raise ValueError("threshold_fraction must lie in (0, 1)")
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != (mesh.n_nodes,):
        raise ValueError("field size does not match mesh")

    background = _weighted_median(gamma, lumped_node_areas(mesh))
    means = gamma[mesh.triangles].mean(axis=1)
    areas = mesh.element_area

    peak = means.max()
    has_conductive = peak > background
    conductive = np.zeros(mesh.n_elements, dtype=bool)
    if has_conductive:
        conductive = means >= background + threshold_fraction * (peak - background)
    cond_area = float(areas[conductive].sum())

    rest = ~conductive
    has_resistive = False
    res_area = 0.0
    if rest.any():
        trough = means[rest].min()
        has_resistive = trough < background
        if has_resistive:
            resistive = rest & (means <= background - threshold_fraction * (background - trough))
            res_area = float(areas[resistive].sum())
    return HwhmAreas(cond_area, res_area, float(background), bool(has_conductive),
                     bool(has_resistive))


def _weighted_median(values: np.ndarray, weights: np.ndarray) -> float:
    order = np.argsort(values)
    csum = np.cumsum(weights[order])
    idx = int(np.searchsorted(csum, 0.5 * csum[-1]))
    return float(values[order[min(idx, len(values) - 1)]])


def render_field(mesh: Mesh, field: np.ndarray, scale: ColorScale | None = None,
                 resolution: int = 512) -> bytes:
    """Rasterize a nodal field to a binary PPM (P6) image.

    Pixels are evaluated by point location and P1 interpolation; pixels
    outside the mesh are white. ``resolution`` is the image width; the height
    follows the mesh bounding-box aspect ratio.
    """
    if resolution < 32:
        raise ValueError("resolution must be at least 32 pixels")
    field = np.asarray(field, dtype=float)
    if field.shape != (mesh.n_nodes,):
        raise ValueError("field size does not match mesh")
    if scale is None:
        scale = default_color_scale()

    (xmin, ymin), (xmax, ymax) = mesh.nodes.min(axis=0), mesh.nodes.max(axis=0)
    width = int(resolution)
    height = max(1, int(round(width * (ymax - ymin) / (xmax - xmin))))
    xs = xmin + (np.arange(width) + 0.5) * (xmax - xmin) / width
    ys = ymax - (np.arange(height) + 0.5) * (ymax - ymin) / height  # top row first
    grid = np.column_stack([np.tile(xs, height), np.repeat(ys, width)])

    elems, bary = locate_points(mesh, grid, snap_tol=0.0, missing="mask")
    values = np.zeros(len(grid))
    inside = elems >= 0
    values[inside] = (field[mesh.triangles[elems[inside]]] * bary[inside]).sum(axis=1)

    pixels = np.full((len(grid), 3), 255, dtype=np.uint8)
    pixels[inside] = scale.rgb_bytes(values[inside])
    header = f"P6\n{width} {height}\n255\n".encode("ascii")
    return header + pixels.tobytes()


def write_field_csv(mesh: Mesh, field: np.ndarray, path) -> None:
    """Dump a nodal field as 'node,x,y,value' CSV rows."""
    field = np.asarray(field, dtype=float)
    if field.shape != (mesh.n_nodes,):
        raise ValueError("field size does not match mesh")
    lines = ["node,x,y,value"]
    for i, ((x, y), v) in enumerate(zip(mesh.nodes, field)):
        lines.append(f"{i},{float(x)!r},{float(y)!r},{float(v)!r}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_field_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a field CSV back as (coordinates, values)."""
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "node,x,y,value":
        raise ValueError(f"{path}: missing 'node,x,y,value' header")
    xy, vals = [], []
    for ln in lines[1:]:
        if not ln:
            continue
        parts = ln.split(",")
        if len(parts) != 4:
            raise ValueError(f"{path}: malformed row {ln!r}")
        xy.append((float(parts[1]), float(parts[2])))
        vals.append(float(parts[3]))
    return np.array(xy), np.array(vals)
