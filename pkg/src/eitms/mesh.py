"""Triangular meshes of 2D disk domains with boundary electrode groups.

Conventions used throughout the package:

* coordinates are in meters, triangles are stored counter-clockwise,
* each electrode is a group of whole boundary edges (node pairs),
* the piecewise-linear (P1) basis has a constant gradient on each triangle;
  those gradients and the element areas are computed once at construction
  and shared read-only by the solver, regularizer, and rendering code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import Delaunay, cKDTree


class MeshError(ValueError):
    """Invalid mesh construction, file content, or geometric query."""


def _perp(v):
    """Rotate 2D vectors by +90 degrees: (x, y) -> (-y, x)."""
    out = np.empty_like(v)
    out[..., 0] = -v[..., 1]
    out[..., 1] = v[..., 0]
    return out


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable triangulation with per-element P1 geometry.

    Parameters
    ----------
    nodes : (n_nodes, 2) float array
        Node coordinates in meters.
    triangles : (n_elements, 3) int array
        Node indices; orientation is normalized to counter-clockwise.
    electrode_edges : sequence of (m_k, 2) int arrays
        Boundary edges (node pairs) covered by each electrode. Groups must
        be disjoint and every edge must lie on the boundary.

    Derived fields
    --------------
    element_area : (n_elements,) areas in m^2.
    basis_gradients : (n_elements, 3, 2) constant P1 basis gradients in 1/m,
        ordered like the triangle vertices; they sum to zero per element.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    electrode_edges: tuple[np.ndarray, ...]
    element_area: np.ndarray = field(init=False)
    basis_gradients: np.ndarray = field(init=False)

    def __post_init__(self):
        nodes = np.ascontiguousarray(np.asarray(self.nodes, dtype=float))
        tris = np.ascontiguousarray(np.asarray(self.triangles, dtype=np.int64))
        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise MeshError(f"nodes must be (n, 2), got {nodes.shape}")
        if tris.ndim != 2 or tris.shape[1] != 3:
            raise MeshError(f"triangles must be (m, 3), got {tris.shape}")
        if not np.isfinite(nodes).all():
            raise MeshError("non-finite node coordinate")
        if tris.size and (tris.min() < 0 or tris.max() >= len(nodes)):
            raise MeshError("triangle node index out of range")
        if ((tris[:, 0] == tris[:, 1]) | (tris[:, 1] == tris[:, 2])
                | (tris[:, 0] == tris[:, 2])).any():
            raise MeshError("triangle with repeated vertex")

        a, b, c = nodes[tris[:, 0]], nodes[tris[:, 1]], nodes[tris[:, 2]]
        ab, ac = b - a, c - a
        signed = 0.5 * (ab[:, 0] * ac[:, 1] - ab[:, 1] * ac[:, 0])
        flip = signed < 0.0
        if flip.any():
            tris = tris.copy()
            tris[flip, 1], tris[flip, 2] = tris[flip, 2], tris[flip, 1]
            signed = np.abs(signed)
        scale = max(np.abs(nodes).max(), 1.0)
        if (signed <= 1e-14 * scale * scale).any():
            bad = int(np.argmin(signed))
            raise MeshError(f"degenerate triangle {bad} (area {signed[bad]:.3e})")

        a, b, c = nodes[tris[:, 0]], nodes[tris[:, 1]], nodes[tris[:, 2]]
        grads = np.empty((len(tris), 3, 2))
        inv_2a = 1.0 / (2.0 * signed)
        grads[:, 0] = _perp(c - b) * inv_2a[:, None]
        grads[:, 1] = _perp(a - c) * inv_2a[:, None]
        grads[:, 2] = _perp(b - a) * inv_2a[:, None]

        groups = tuple(
            np.ascontiguousarray(np.asarray(g, dtype=np.int64).reshape(-1, 2))
            for g in self.electrode_edges
        )
        boundary = self._boundary_edge_set(tris)
        seen: set[tuple[int, int]] = set()
        for k, g in enumerate(groups):
            if g.size and (g.min() < 0 or g.max() >= len(nodes)):
                raise MeshError(f"electrode {k}: edge node index out of range")
            for e in map(tuple, np.sort(g, axis=1)):
                if e not in boundary:
                    raise MeshError(f"electrode {k}: edge {e} is not a boundary edge")
                if e in seen:
                    raise MeshError(f"electrode {k}: edge {e} assigned twice")
                seen.add(e)

        for arr in (nodes, tris, signed, grads, *groups):
            arr.flags.writeable = False
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "triangles", tris)
        object.__setattr__(self, "electrode_edges", groups)
        object.__setattr__(self, "element_area", signed)
        object.__setattr__(self, "basis_gradients", grads)

    @staticmethod
    def _boundary_edge_set(tris) -> set[tuple[int, int]]:
        edges = np.sort(
            np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]]),
            axis=1,
        )
        uniq, counts = np.unique(edges, axis=0, return_counts=True)
        return set(map(tuple, uniq[counts == 1]))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.triangles)

    @property
    def n_electrodes(self) -> int:
        return len(self.electrode_edges)

    @cached_property
    def centroids(self) -> np.ndarray:
        c = self.nodes[self.triangles].mean(axis=1)
        c.flags.writeable = False
        return c

    @cached_property
    def _centroid_tree(self) -> cKDTree:
        return cKDTree(self.centroids)

    def boundary_edges(self) -> np.ndarray:
        """All boundary edges as an (n, 2) array of sorted node pairs."""
        return np.array(sorted(self._boundary_edge_set(self.triangles)), dtype=np.int64)

    def edge_lengths(self) -> np.ndarray:
        edges = np.sort(
            np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]],
                            self.triangles[:, [2, 0]]]),
            axis=1,
        )
        uniq = np.unique(edges, axis=0)
        d = self.nodes[uniq[:, 0]] - self.nodes[uniq[:, 1]]
        return np.hypot(d[:, 0], d[:, 1])

    def max_edge_length(self) -> float:
        return float(self.edge_lengths().max())

    def electrode_lengths(self) -> np.ndarray:
        """Total boundary length covered by each electrode."""
        out = np.zeros(self.n_electrodes)
        for k, g in enumerate(self.electrode_edges):
            d = self.nodes[g[:, 0]] - self.nodes[g[:, 1]]
            out[k] = np.hypot(d[:, 0], d[:, 1]).sum()
        return out

    def min_angle_deg(self) -> float:
        """Smallest interior angle over all triangles, a mesh quality measure."""
        p = self.nodes[self.triangles]
        angles = []
        for i in range(3):
            u = p[:, (i + 1) % 3] - p[:, i]
            v = p[:, (i + 2) % 3] - p[:, i]
            cosang = (u * v).sum(axis=1) / (
                np.hypot(u[:, 0], u[:, 1]) * np.hypot(v[:, 0], v[:, 1])
            )
            angles.append(np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0))))
        return float(np.min(angles))

    def total_area(self) -> float:
        return float(self.element_area.sum())


def generate_disk_mesh(radius: float, n_electrodes: int, electrode_coverage: float,
                       target_edge_length: float) -> Mesh:
    """Triangulate a disk with evenly spaced boundary electrodes.

    Each electrode covers an arc of ``electrode_coverage`` times the perimeter,
    centred at angle ``2*pi*k / n_electrodes``. Electrode endpoints always fall
    on boundary nodes, so every boundary edge belongs to exactly one electrode
    or to a gap. Interior nodes are seeded on concentric rings with spacing
    close to ``target_edge_length`` and triangulated with Delaunay.
    """
    if radius <= 0:
        raise MeshError("radius must be positive")
    if target_edge_length <= 0:
        raise MeshError("target_edge_length must be positive")
    if n_electrodes < 1:
        raise MeshError("need at least one electrode")
    if electrode_coverage <= 0 or electrode_coverage * n_electrodes >= 1.0:
        raise MeshError(
            f"infeasible coverage: {n_electrodes} electrodes x {electrode_coverage} "
            "of the perimeter must total less than 1"
        )

    two_pi = 2.0 * math.pi
    arc = electrode_coverage * two_pi
    pitch = two_pi / n_electrodes
    gap = pitch - arc
    h_ang = target_edge_length / radius

    bound_angles: list[float] = []
    seg_marker: list[int] = []  # electrode id of the segment starting at each node, -1 in gaps
    for k in range(n_electrodes):
        start = k * pitch - 0.5 * arc
        m_e = max(1, math.ceil(arc / h_ang - 1e-9))
        for i in range(m_e):
            bound_angles.append(start + arc * i / m_e)
            seg_marker.append(k)
        m_g = max(1, math.ceil(gap / h_ang - 1e-9))
        for i in range(m_g):
            bound_angles.append(start + arc + gap * i / m_g)
            seg_marker.append(-1)

    theta = np.array(bound_angles)
    pts = [radius * np.column_stack([np.cos(theta), np.sin(theta)])]
    n_bound = len(theta)

    n_r = max(1, round(radius / target_edge_length))
    dr = radius / n_r
    pts.append(np.zeros((1, 2)))
    for i in range(1, n_r):
        r = i * dr
        m = max(6, round(two_pi * r / dr))
        ang = (i % 2) * math.pi / m + two_pi * np.arange(m) / m
        pts.append(r * np.column_stack([np.cos(ang), np.sin(ang)]))
    points = np.concatenate(pts)

    tri = Delaunay(points)
    if len(np.unique(tri.simplices)) != len(points):
        raise MeshError("triangulation dropped seed points; reduce target_edge_length")

    groups = []
    markers = np.array(seg_marker)
    nxt = np.roll(np.arange(n_bound), -1)
    for k in range(n_electrodes):
        idx = np.flatnonzero(markers == k)
        groups.append(np.column_stack([idx, nxt[idx]]))
    return Mesh(points, tri.simplices, tuple(groups))


def scale_mesh(mesh: Mesh, c: float) -> Mesh:
    """Similarity-scale all coordinates by ``c`` (> 0).

    Areas scale by c^2 and basis gradients by 1/c; both are recomputed from
    the scaled coordinates.
    """
    if c <= 0:
        raise MeshError("scale factor must be positive")
    return Mesh(mesh.nodes * float(c), mesh.triangles, mesh.electrode_edges)


def refine_mesh(mesh: Mesh) -> Mesh:
    """Uniformly split every triangle into four by edge midpoints.

    Boundary electrode edges split into their two halves, so electrode
    groups are preserved. The refined mesh covers the same polygon.
    """
    nodes = [mesh.nodes]
    mid_index: dict[tuple[int, int], int] = {}
    nxt = mesh.n_nodes
    mids = []

    def midpoint(i: int, j: int) -> int:
        nonlocal nxt
        key = (min(i, j), max(i, j))
        if key not in mid_index:
            mid_index[key] = nxt
            mids.append(0.5 * (mesh.nodes[i] + mesh.nodes[j]))
            nxt += 1
        return mid_index[key]

    tris = []
    for a, b, c in mesh.triangles:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        tris.extend([(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)])
    nodes.append(np.array(mids).reshape(-1, 2))

    groups = []
    for g in mesh.electrode_edges:
        halves = []
        for i, j in g:
            m = mid_index[(min(i, j), max(i, j))]
            halves.extend([(i, m), (m, j)])
        groups.append(np.array(halves, dtype=np.int64).reshape(-1, 2))
    return Mesh(np.concatenate(nodes), np.array(tris, dtype=np.int64), tuple(groups))


def _barycentric(mesh: Mesh, elems: np.ndarray, points: np.ndarray) -> np.ndarray:
    """P1 basis values of ``points`` in the given elements (same leading shape)."""
    diff = points - mesh.centroids[elems]
    return 1.0 / 3.0 + np.einsum("...pd,...d->...p", mesh.basis_gradients[elems], diff)


def _closest_point_on_triangle(tri_pts: np.ndarray, p: np.ndarray) -> np.ndarray:
    best, best_d = None, np.inf
    for i in range(3):
        a, b = tri_pts[i], tri_pts[(i + 1) % 3]
        ab = b - a
        t = np.clip(np.dot(p - a, ab) / max(np.dot(ab, ab), 1e-300), 0.0, 1.0)
        q = a + t * ab
        d = np.dot(p - q, p - q)
        if d < best_d:
            best, best_d = q, d
    return best


def locate_points(mesh: Mesh, points: np.ndarray, snap_tol: float | None = None,
                  missing: str = "error"):
    """Find containing elements and barycentric coordinates for query points.

    Points outside all triangles are snapped to the nearest element if their
    distance is at most ``snap_tol`` (default: a tenth of the longest mesh
    edge, which covers the sagitta gap between a polygonal boundary and the
    circle it approximates). Beyond the tolerance, behaviour depends on
    ``missing``: ``"error"`` raises naming the point, ``"mask"`` marks the
    point with element index -1.

    Returns
    -------
    elems : (n,) int array, -1 where masked out.
    bary : (n, 3) barycentric coordinates (clipped to the element when snapped).
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(points)
    elems = np.full(n, -1, dtype=np.int64)
    bary = np.zeros((n, 3))
    if n == 0:
        return elems, bary
    if snap_tol is None:
        snap_tol = 0.1 * mesh.max_edge_length()

    inside_tol = -1e-12
    pending = np.arange(n)
    for k in (8, 64):
        k_eff = min(k, mesh.n_elements)
        _, cand = mesh._centroid_tree.query(points[pending], k=k_eff)
        cand = cand.reshape(len(pending), k_eff)
        bb = _barycentric(mesh, cand, points[pending][:, None, :])
        best = bb.min(axis=2).argmax(axis=1)
        rows = np.arange(len(pending))
        sel_elem = cand[rows, best]
        sel_bary = bb[rows, best]
        ok = sel_bary.min(axis=1) >= inside_tol
        elems[pending[ok]] = sel_elem[ok]
        bary[pending[ok]] = sel_bary[ok]
        pending = pending[~ok]
        if len(pending) == 0:
            break

    # Remaining points are outside (or nearly outside) the triangulation.
    for idx in pending:
        p = points[idx]
        bb = _barycentric(mesh, np.arange(mesh.n_elements), p)
        e = int(bb.min(axis=1).argmax())
        if bb[e].min() >= inside_tol:
            elems[idx], bary[idx] = e, bb[e]
            continue
        q = _closest_point_on_triangle(mesh.nodes[mesh.triangles[e]], p)
        dist = math.hypot(*(p - q))
        if dist <= snap_tol:
            w = np.clip(_barycentric(mesh, np.array(e), q), 0.0, 1.0)
            elems[idx], bary[idx] = e, w / w.sum()
        elif missing == "mask":
            elems[idx] = -1
        else:
            raise MeshError(
                f"point {idx} at ({p[0]:.6g}, {p[1]:.6g}) lies {dist:.3g} m outside "
                f"the mesh (snap tolerance {snap_tol:.3g})"
            )
    return elems, bary


def interpolate_field(src: Mesh, field: np.ndarray, dst: Mesh,
                      snap_tol: float | None = None) -> np.ndarray:
    """Evaluate a nodal P1 field of ``src`` at the nodes of ``dst``.

    Destination nodes must lie inside ``src`` or within ``snap_tol`` of it;
    see :func:`locate_points`.
    """
    field = np.asarray(field, dtype=float)
    if field.shape != (src.n_nodes,):
        raise MeshError(f"field has shape {field.shape}, expected ({src.n_nodes},)")
    elems, bary = locate_points(src, dst.nodes, snap_tol=snap_tol, missing="error")
    return (field[src.triangles[elems]] * bary).sum(axis=1)


def save_mesh(mesh: Mesh, path) -> None:
    """Write a mesh as plain text (NODES / TRIANGLES / ELECTRODES sections)."""
    lines = [f"NODES {mesh.n_nodes}"]
    lines += [f"{float(x)!r} {float(y)!r}" for x, y in mesh.nodes]
    lines.append(f"TRIANGLES {mesh.n_elements}")
    lines += [f"{a} {b} {c}" for a, b, c in mesh.triangles]
    lines.append(f"ELECTRODES {mesh.n_electrodes}")
    for g in mesh.electrode_edges:
        lines.append(" ".join(str(v) for v in g.ravel()))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_mesh(path) -> Mesh:
    """Read a mesh written by :func:`save_mesh`; validates all indices."""
    with open(path, "r", encoding="ascii") as fh:
        raw = fh.read().splitlines()

    pos = 0

    def fail(msg: str):
        raise MeshError(f"{path}: line {pos}: {msg}")

    def next_line() -> str:
        nonlocal pos
        while pos < len(raw):
            pos += 1
            line = raw[pos - 1].strip()
            if line:
                return line
        fail("unexpected end of file")

    def header(name: str) -> int:
        parts = next_line().split()
        if len(parts) != 2 or parts[0] != name:
            fail(f"expected '{name} <count>'")
        try:
            return int(parts[1])
        except ValueError:
            fail(f"bad {name} count {parts[1]!r}")

    def parse_row(kind, width):
        parts = next_line().split()
        if width is not None and len(parts) != width:
            fail(f"expected {width} fields")
        try:
            return [kind(v) for v in parts]
        except ValueError:
            fail(f"bad {kind.__name__} value")

    n = header("NODES")
    nodes = np.array([parse_row(float, 2) for _ in range(n)], dtype=float).reshape(n, 2)
    m = header("TRIANGLES")
    tris = np.array([parse_row(int, 3) for _ in range(m)], dtype=np.int64).reshape(m, 3)
    p = header("ELECTRODES")
    groups = []
    for _ in range(p):
        vals = parse_row(int, None)
        if len(vals) % 2 != 0:
            fail("electrode line must hold an even number of node indices")
        groups.append(np.array(vals, dtype=np.int64).reshape(-1, 2))
    try:
        return Mesh(nodes, tris, tuple(groups))
    except MeshError as exc:
        raise MeshError(f"{path}: {exc}") from exc
