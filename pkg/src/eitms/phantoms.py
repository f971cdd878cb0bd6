"""Ground-truth conductivities, measurement simulation, and data weights.

Backgrounds are Gaussian random fields with squared-exponential covariance
sampled by dense Cholesky (fine for desk-scale meshes), inclusions are sharp
geometric shapes stamped onto the nodal field, and simulated measurements
follow the grounded-excitation protocol: drive one electrode, ground the
rest, record all currents except the injection current, and add Gaussian
noise proportional to each current's magnitude.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cem import CemError, ExcitationSet, masked_currents, solve_forward
from .mesh import Mesh

MAX_DENSE_GRF_NODES = 6000


class PhantomError(ValueError):
    """Invalid phantom geometry or measurement data."""


@dataclass(frozen=True)
class Inclusion:
    """A sharp-edged inclusion stamped onto the background.

    Supported shapes and their parameter tuples:

    * ``circle``: (cx, cy, radius)
    * ``square``: (cx, cy, side[, angle_deg])
    * ``stadium``: (cx, cy, length, radius[, angle_deg]) where ``length``
      separates the two half-disk cap centers
    * ``triangle``: (cx, cy, circumradius[, angle_deg]), equilateral
    """

    shape: str
    params: tuple[float, ...]
    value: float

    _ARITY = {"circle": (3, 3), "square": (3, 4), "stadium": (4, 5), "triangle": (3, 4)}

    def __post_init__(self):
        if self.shape not in self._ARITY:
            raise PhantomError(f"unknown inclusion shape {self.shape!r}")
        lo, hi = self._ARITY[self.shape]
        if not lo <= len(self.params) <= hi:
            raise PhantomError(f"{self.shape} takes {lo}..{hi} parameters")
        if self.value <= 0:
            raise PhantomError("inclusion conductivity must be positive")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean membership of (n, 2) points."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        p = self.params
        local = pts - np.array(p[:2])

        def rotated(angle_deg):
            t = np.radians(angle_deg)
            rot = np.array([[np.cos(t), np.sin(t)], [-np.sin(t), np.cos(t)]])
            return local @ rot.T

        if self.shape == "circle":
            return (local**2).sum(axis=1) <= p[2] ** 2
        if self.shape == "square":
            xy = rotated(p[3] if len(p) > 3 else 0.0)
            return (np.abs(xy) <= p[2] / 2).all(axis=1)
        if self.shape == "stadium":
            xy = rotated(p[4] if len(p) > 4 else 0.0)
            half, r = p[2] / 2, p[3]
            dx = np.abs(xy[:, 0])
            in_rect = (dx <= half) & (np.abs(xy[:, 1]) <= r)
            caps = (dx - half) ** 2 + xy[:, 1] ** 2 <= r**2
            return in_rect | (caps & (dx > half))
        # equilateral triangle by circumradius, one vertex along +x before rotation
        xy = rotated(p[3] if len(p) > 3 else 0.0)
        r = p[2]
        verts = r * np.column_stack([
            np.cos(np.radians([0.0, 120.0, 240.0])),
            np.sin(np.radians([0.0, 120.0, 240.0])),
        ])
        inside = np.ones(len(xy), dtype=bool)
        for i in range(3):
            a, b = verts[i], verts[(i + 1) % 3]
            e = b - a
            inside &= (e[0] * (xy[:, 1] - a[1]) - e[1] * (xy[:, 0] - a[0])) >= 0
        return inside

    def outer_radius(self) -> float:
        """Circumradius of the shape about its own centre."""
        p = self.params
        if self.shape == "circle":
            return p[2]
        if self.shape == "square":
            return p[2] / np.sqrt(2.0)
        if self.shape == "stadium":
            return p[2] / 2 + p[3]
        return p[2]


@dataclass(frozen=True)
class Phantom:
    """Background model plus inclusions; realized on a mesh by :func:`realize_phantom`."""

    background_mean: float = 1.0
    background_std: float = 0.1
    correlation_length: float = 0.12
    inclusions: tuple[Inclusion, ...] = ()


def sample_grf(mesh: Mesh, mean: float, marginal_std: float,
               correlation_length: float, seed: int) -> np.ndarray:
    """Draw one Gaussian random field with squared-exponential covariance.

    Covariance between nodes x and y is ``std^2 * exp(-|x-y|^2 / (2 ell^2))``;
    the dense node covariance is Cholesky-factored, so meshes are limited to
    ``MAX_DENSE_GRF_NODES`` nodes.
    """
    if correlation_length <= 0:
        raise PhantomError("correlation length must be positive")
    if mesh.n_nodes > MAX_DENSE_GRF_NODES:
        raise PhantomError(
            f"{mesh.n_nodes} nodes exceeds the dense-covariance limit "
            f"({MAX_DENSE_GRF_NODES}); sample on a coarser mesh and interpolate"
        )
    if marginal_std == 0.0:
        return np.full(mesh.n_nodes, float(mean))
    factor = _grf_factor(mesh, marginal_std, correlation_length)
    rng = np.random.default_rng(seed)
    return mean + factor @ rng.standard_normal(mesh.n_nodes)


def _grf_factor(mesh: Mesh, marginal_std: float, correlation_length: float) -> np.ndarray:
    d2 = ((mesh.nodes[:, None, :] - mesh.nodes[None, :, :]) ** 2).sum(axis=2)
    cov = marginal_std**2 * np.exp(-d2 / (2.0 * correlation_length**2))
    cov[np.diag_indices_from(cov)] += 1e-10
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise PhantomError("covariance not positive definite after jitter") from exc


def add_inclusion(fld: np.ndarray, mesh: Mesh, inclusion: Inclusion) -> np.ndarray:
    """Return a copy of the nodal field with the inclusion value stamped in.

    Edges are sharp at element resolution: exactly the nodes inside the shape
    change. A shape reaching outside the meshed domain only triggers a warning.
    """
    fld = np.array(fld, dtype=float)
    cx, cy = inclusion.params[:2]
    domain_r = np.hypot(mesh.nodes[:, 0], mesh.nodes[:, 1]).max()
    if np.hypot(cx, cy) + inclusion.outer_radius() > domain_r + 1e-12:
        warnings.warn(
            f"{inclusion.shape} inclusion extends outside the meshed domain",
            stacklevel=2,
        )
    fld[inclusion.contains(mesh.nodes)] = inclusion.value
    return fld


def realize_phantom(mesh: Mesh, phantom: Phantom, seed: int) -> np.ndarray:
    """Sample the background and stamp all inclusions."""
    fld = sample_grf(mesh, phantom.background_mean, phantom.background_std,
                     phantom.correlation_length, seed)
    for inc in phantom.inclusions:
        fld = add_inclusion(fld, mesh, inc)
    return fld


@dataclass
class MeasurementSet:
    """Measured currents with their selection mask and optional weights.

    currents : (M,) measured currents, flattened in ``mask.ravel()`` order.
    mask : (n_patterns, n_electrodes) bool, True where measured.
    weights : optional (M,) diagonal entries of the weight matrix W.
    noise_seed : seed used when simulating, for provenance.
    """

    currents: np.ndarray
    mask: np.ndarray
    weights: np.ndarray | None = None
    noise_seed: int | None = None

    def __post_init__(self):
        self.currents = np.asarray(self.currents, dtype=float).ravel()
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.currents.size != int(self.mask.sum()):
            raise PhantomError(
                f"{self.currents.size} currents vs {int(self.mask.sum())} masked entries"
            )
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float).ravel()
            if self.weights.size != self.currents.size:
                raise PhantomError("weights length does not match currents")

    @property
    def n_measurements(self) -> int:
        return self.currents.size


def injection_mask(patterns: np.ndarray) -> np.ndarray:
    """Measurement mask excluding each pattern's injection electrode.

    The injection electrode of a pattern is the one driven to the largest
    potential magnitude; with the grounded one-hot protocol that is the
    pattern index itself.
    """
    patterns = np.atleast_2d(patterns)
    mask = np.ones(patterns.shape, dtype=bool)
    mask[np.arange(patterns.shape[0]), np.abs(patterns).argmax(axis=1)] = False
    return mask


def simulate_measurements(mesh: Mesh, gamma_true: np.ndarray,
                          excitations: ExcitationSet, noise_rel: float = 1e-4,
                          seed: int = 0) -> MeasurementSet:
    """Forward-simulate noisy boundary currents.

    Run all excitation patterns, drop each injection current, and add
    independent Gaussian noise with standard deviation ``noise_rel`` times
    the magnitude of each simulated current. Use a finer mesh here than for
    inversion to avoid committing an inverse crime.
    """
    if noise_rel < 0:
        raise PhantomError("noise_rel must be nonnegative")
    sol = solve_forward(mesh, gamma_true, excitations)
    mask = injection_mask(excitations.patterns)
    clean = masked_currents(sol.currents, mask)
    noisy = clean
    if noise_rel > 0:
        rng = np.random.default_rng(seed)
        noisy = clean + noise_rel * np.abs(clean) * rng.standard_normal(clean.size)
    return MeasurementSet(currents=noisy, mask=mask, noise_seed=seed)


def build_weights(measurements: MeasurementSet, a: float = 1.0) -> np.ndarray:
    """Diagonal data weights W_ii = sqrt(a) * 200 / |measured current i|."""
    if a <= 0:
        raise PhantomError("regularization weight a must be positive")
    cur = measurements.currents
    zero = np.flatnonzero(cur == 0.0)
    if zero.size:
        raise PhantomError(f"measured current {int(zero[0])} is zero; cannot weight")
    return np.sqrt(a) * 200.0 / np.abs(cur)


def save_measurements(measurements: MeasurementSet, path) -> None:
    """Write the measurement text format: header, then 'pattern electrode current'."""
    mask = measurements.mask
    lines = [
        f"P1 {mask.shape[1]}",
        f"P2 {mask.shape[0]}",
        f"M {measurements.n_measurements}",
    ]
    pairs = np.argwhere(mask)
    for (j, k), cur in zip(pairs, measurements.currents):
        lines.append(f"{j} {k} {float(cur)!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_measurements(path) -> MeasurementSet:
    """Read a measurement file written by :func:`save_measurements`."""
    lines = [ln.strip() for ln in Path(path).read_text(encoding="ascii").splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]

    def header(idx, name):
        parts = lines[idx].split()
        if len(parts) != 2 or parts[0] != name:
            raise PhantomError(f"{path}: line {idx + 1}: expected '{name} <count>'")
        return int(parts[1])

    try:
        p1, p2, m = header(0, "P1"), header(1, "P2"), header(2, "M")
    except (IndexError, ValueError) as exc:
        raise PhantomError(f"{path}: malformed header") from exc
    if len(lines) - 3 != m:
        raise PhantomError(f"{path}: header says {m} entries, found {len(lines) - 3}")

    mask = np.zeros((p2, p1), dtype=bool)
    flat = np.full((p2, p1), np.nan)
    for i, ln in enumerate(lines[3:]):
        parts = ln.split()
        if len(parts) != 3:
            raise PhantomError(f"{path}: line {i + 4}: expected 'pattern electrode current'")
        try:
            j, k, cur = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError as exc:
            raise PhantomError(f"{path}: line {i + 4}: bad value") from exc
        if not (0 <= j < p2 and 0 <= k < p1):
            raise PhantomError(f"{path}: line {i + 4}: index out of range")
        if mask[j, k]:
            raise PhantomError(f"{path}: line {i + 4}: duplicate entry ({j}, {k})")
        mask[j, k] = True
        flat[j, k] = cur
    return MeasurementSet(currents=flat[mask], mask=mask)
