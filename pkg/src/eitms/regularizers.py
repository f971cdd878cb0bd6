"""Edge-preserving regularization functionals and their proximal machinery.

The phase-field functional couples the conductivity gamma with a control
field z in [0, 1] that collapses toward 0 along edges:

    sum over elements of  lam * |grad z|^2 * A
                        + |grad gamma|^2 * integral(z^2)
                        + alpha^2 / (4 lam) * integral((z - 1)^2).

With P1 fields the gradients are constant per element and the z integrals
are quadratic forms with exact closed forms (int phi_i^2 = A/6,
int phi_i phi_j = A/12). A compatibility switch halves the two z-quadratic
integrals, reproducing a common alternative convention; the default is the
exact quadrature.

Baselines: isotropic total variation at element level and the squared
gradient seminorm, both exposed as linear operators for the solver.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh


@dataclass(frozen=True)
class ATParams:
    """Phase-field regularizer parameters.

    lam : edge-width control (dimensionless), default 1e-3.
    alpha : jump-set weight, default 1e-2.
    epsilon_lambda : optional lower bound for z; 0 in practice.
    halved_z_quadrature : reproduce the halved z-integral convention.
    """

    lam: float = 1e-3
    alpha: float = 1e-2
    epsilon_lambda: float = 0.0
    halved_z_quadrature: bool = False

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if not 0.0 <= self.epsilon_lambda < 1.0:
            raise ValueError("epsilon_lambda must be in [0, 1)")


@dataclass(frozen=True)
class BoxConstraints:
    """Pointwise bounds for gamma and z."""

    gamma_min: float
    gamma_max: float
    z_min: float = 0.0
    z_max: float = 1.0

    def __post_init__(self):
        if not 0 < self.gamma_min < self.gamma_max:
            raise ValueError("need 0 < gamma_min < gamma_max")
        if not self.z_min < self.z_max:
            raise ValueError("need z_min < z_max")


def _element_values(mesh: Mesh, nodal: np.ndarray) -> np.ndarray:
    return np.asarray(nodal, dtype=float)[mesh.triangles]


def _grad_sq(mesh: Mesh, local: np.ndarray) -> np.ndarray:
    g = np.einsum("tp,tpd->td", local, mesh.basis_gradients)
    return (g * g).sum(axis=1)


def _z_quadratics(mesh: Mesh, zl: np.ndarray, halved: bool):
    """Exact element integrals of z^2 and (z-1)^2 for P1 z (optionally halved)."""
    area = mesh.element_area
    s = zl.sum(axis=1)
    quad = (zl * zl).sum(axis=1) + zl[:, 0] * zl[:, 1] + zl[:, 0] * zl[:, 2] + zl[:, 1] * zl[:, 2]
    if halved:
        q = area * quad / 12.0
        r = q - area * s / 3.0 + area / 2.0
    else:
        q = area * quad / 6.0
        r = q - 2.0 * area * s / 3.0 + area
    return q, r


def k2_apply(mesh: Mesh, gamma: np.ndarray, z: np.ndarray, p: ATParams) -> np.ndarray:
    """Per-element contributions of the phase-field functional (all nonnegative)."""
    gl, zl = _element_values(mesh, gamma), _element_values(mesh, z)
    g_gamma, g_z = _grad_sq(mesh, gl), _grad_sq(mesh, zl)
    q, r = _z_quadratics(mesh, zl, p.halved_z_quadrature)
    return mesh.element_area * p.lam * g_z + g_gamma * q + (p.alpha**2 / (4 * p.lam)) * r


def eval_F_lambda(mesh: Mesh, gamma: np.ndarray, z: np.ndarray, p: ATParams) -> float:
    """Total phase-field regularizer value; equals the 1-norm of k2_apply."""
    return float(k2_apply(mesh, gamma, z, p).sum())


def k2_element_partials(mesh: Mesh, gamma: np.ndarray, z: np.ndarray, p: ATParams):
    """Element values plus exact local partials, for the solver's inner loop.

    Returns (values (Ne,), d_gamma (Ne, 3), d_z (Ne, 3)) where columns follow
    the element's triangle vertices.
    """
    gl, zl = _element_values(mesh, gamma), _element_values(mesh, z)
    grads = mesh.basis_gradients
    area = mesh.element_area
    ggrad = np.einsum("tp,tpd->td", gl, grads)
    zgrad = np.einsum("tp,tpd->td", zl, grads)
    g_gamma = (ggrad * ggrad).sum(axis=1)
    g_z = (zgrad * zgrad).sum(axis=1)
    q, r = _z_quadratics(mesh, zl, p.halved_z_quadrature)
    c_r = p.alpha**2 / (4 * p.lam)
    values = area * p.lam * g_z + g_gamma * q + c_r * r

    dg_gamma = 2.0 * np.einsum("tpd,td->tp", grads, ggrad)  # of |grad gamma|^2
    dg_z = 2.0 * np.einsum("tpd,td->tp", grads, zgrad)
    s = zl.sum(axis=1)
    if p.halved_z_quadrature:
        dq = area[:, None] * (zl + s[:, None]) / 12.0
        dr = dq - area[:, None] / 3.0
    else:
        dq = area[:, None] * (zl + s[:, None]) / 6.0
        dr = dq - 2.0 * area[:, None] / 3.0

    d_gamma = q[:, None] * dg_gamma
    d_z = (area * p.lam)[:, None] * dg_z + g_gamma[:, None] * dq + c_r * dr
    return values, d_gamma, d_z


def k2_jacobian(mesh: Mesh, gamma: np.ndarray, z: np.ndarray, p: ATParams) -> sp.csr_matrix:
    """Exact sparse Jacobian of k2_apply, shape (n_elements, 2 * n_nodes).

    Columns 0..n_nodes-1 differentiate with respect to gamma, the rest with
    respect to z.
    """
    _, d_gamma, d_z = k2_element_partials(mesh, gamma, z, p)
    ne, n = mesh.n_elements, mesh.n_nodes
    rows = np.repeat(np.arange(ne), 3)
    return sp.coo_matrix(
        (
            np.concatenate([d_gamma.ravel(), d_z.ravel()]),
            (
                np.concatenate([rows, rows]),
                np.concatenate([mesh.triangles.ravel(), mesh.triangles.ravel() + n]),
            ),
        ),
        shape=(ne, 2 * n),
    ).tocsr()


def scatter_nodal(mesh: Mesh, element_partials: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Accumulate y-weighted element partials onto nodes: one block of J^T y."""
    vals = element_partials * y[:, None]
    return np.bincount(mesh.triangles.ravel(), weights=vals.ravel(),
                       minlength=mesh.n_nodes)


def prox_F1_conj(y: np.ndarray, s: float, b: np.ndarray) -> np.ndarray:
    """Prox of the conjugate of 0.5 * ||. - b||^2 with step s: (y - s b) / (1 + s)."""
    return (y - s * b) / (1.0 + s)


def prox_F2_conj(y: np.ndarray) -> np.ndarray:
    """Prox of the conjugate of the 1-norm: clamp to [-1, 1]."""
    return np.clip(y, -1.0, 1.0)


def prox_H(gamma: np.ndarray, z: np.ndarray, box: BoxConstraints):
    """Project (gamma, z) onto the box; idempotent."""
    return (
        np.clip(gamma, box.gamma_min, box.gamma_max),
        np.clip(z, box.z_min, box.z_max),
    )


def tv_operator(mesh: Mesh) -> sp.csr_matrix:
    """Linear map from nodal values to area-scaled element gradients.

    Rows 2i and 2i+1 hold A_i * grad restricted to element i, so the isotropic
    total variation is the sum of row-pair Euclidean norms.
    """
    ne, n = mesh.n_elements, mesh.n_nodes
    rows = np.repeat(2 * np.arange(ne), 3)
    data_x = (mesh.element_area[:, None] * mesh.basis_gradients[:, :, 0]).ravel()
    data_y = (mesh.element_area[:, None] * mesh.basis_gradients[:, :, 1]).ravel()
    cols = mesh.triangles.ravel()
    return sp.coo_matrix(
        (np.concatenate([data_x, data_y]),
         (np.concatenate([rows, rows + 1]), np.concatenate([cols, cols]))),
        shape=(2 * ne, n),
    ).tocsr()


def eval_TV(mesh: Mesh, gamma: np.ndarray, a: float) -> float:
    """Isotropic total variation a * sum_i A_i |grad gamma|_i."""
    gl = _element_values(mesh, gamma)
    g = np.einsum("tp,tpd->td", gl, mesh.basis_gradients)
    return float(a * (mesh.element_area * np.hypot(g[:, 0], g[:, 1])).sum())


def tv_dual_project(y: np.ndarray, radius: float) -> np.ndarray:
    """Project element 2-vectors onto the disk of the given radius."""
    y = np.asarray(y, dtype=float).reshape(-1, 2)
    norms = np.hypot(y[:, 0], y[:, 1])
    scale = np.ones_like(norms)
    over = norms > radius
    scale[over] = radius / norms[over]
    return y * scale[:, None]


def grad_operator(mesh: Mesh) -> sp.csr_matrix:
    """Linear map whose squared 2-norm is the gradient seminorm integral.

    Rows hold sqrt(A_i) * grad per element, so ||L gamma||^2 equals
    sum_i A_i |grad gamma|_i^2.
    """
    ne, n = mesh.n_elements, mesh.n_nodes
    rows = np.repeat(2 * np.arange(ne), 3)
    w = np.sqrt(mesh.element_area)[:, None]
    data_x = (w * mesh.basis_gradients[:, :, 0]).ravel()
    data_y = (w * mesh.basis_gradients[:, :, 1]).ravel()
    cols = mesh.triangles.ravel()
    return sp.coo_matrix(
        (np.concatenate([data_x, data_y]),
         (np.concatenate([rows, rows + 1]), np.concatenate([cols, cols]))),
        shape=(2 * ne, n),
    ).tocsr()


def eval_F_grad(mesh: Mesh, gamma: np.ndarray, a: float) -> float:
    """Squared-gradient seminorm a * sum_i A_i |grad gamma|_i^2."""
    gl = _element_values(mesh, gamma)
    return float(a * (mesh.element_area * _grad_sq(mesh, gl)).sum())
