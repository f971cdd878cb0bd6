"""Complete electrode model: assembly, forward solves, Jacobian, homogeneous fit.

The electrode model couples the interior potential u with per-electrode
currents I through contact impedances zeta_k. Testing the weak form with
currents fixed eliminates them and leaves a symmetric positive definite
system for u alone,

    (stiffness(gamma) + boundary_mass(zeta)) u = sum_k U_k * l_k,

after which the currents follow from I_k = (1/zeta_k) * integral_{e_k} (u - U_k) dS.
The stiffness uses P1 conductivity, integrated exactly: on each element the
basis gradients are constant, so the element matrix is the mean nodal
conductivity times the unit-conductivity element stiffness.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .mesh import Mesh, scale_mesh

if TYPE_CHECKING:  # pragma: no cover
    from .phantoms import MeasurementSet


class CemError(RuntimeError):
    """Forward-model assembly or solve failure."""


@dataclass(frozen=True)
class ExcitationSet:
    """Electrode potential patterns and contact impedances.

    patterns : (n_patterns, n_electrodes) electrode potentials in volts.
    contact_impedances : (n_electrodes,) zeta_k in ohm*m, all positive.
    """

    patterns: np.ndarray
    contact_impedances: np.ndarray

    def __post_init__(self):
        pat = np.atleast_2d(np.asarray(self.patterns, dtype=float))
        zeta = np.asarray(self.contact_impedances, dtype=float).ravel()
        if pat.shape[1] != zeta.shape[0]:
            raise CemError(
                f"{pat.shape[1]} pattern entries vs {zeta.shape[0]} impedances"
            )
        if not (zeta > 0).all():
            raise CemError("contact impedances must be positive")
        pat.flags.writeable = False
        zeta.flags.writeable = False
        object.__setattr__(self, "patterns", pat)
        object.__setattr__(self, "contact_impedances", zeta)

    @property
    def n_patterns(self) -> int:
        return self.patterns.shape[0]

    @property
    def n_electrodes(self) -> int:
        return self.patterns.shape[1]


def voltage_excitations(n_electrodes: int, amplitude: float = 1.0,
                        zeta: float = 1e-5) -> ExcitationSet:
    """One pattern per electrode: drive it to ``amplitude`` volts, ground the rest."""
    return ExcitationSet(amplitude * np.eye(n_electrodes), np.full(n_electrodes, zeta))


@dataclass(frozen=True)
class ForwardSolution:
    """Per-pattern nodal potentials and electrode currents."""

    potentials: np.ndarray  # (n_patterns, n_nodes)
    currents: np.ndarray    # (n_patterns, n_electrodes), amperes


@dataclass(frozen=True)
class CurrentJacobian:
    """Sensitivity of masked currents to nodal conductivity.

    ``matrix`` has one row per measured (pattern, electrode) pair, in the
    order of ``mask.ravel()``, and one column per mesh node.
    """

    matrix: np.ndarray  # (n_measurements, n_nodes)
    mask: np.ndarray    # (n_patterns, n_electrodes) bool


@dataclass(frozen=True)
class AssembledSystem:
    """SPD system matrix plus the electrode boundary data of one mesh/zeta pair."""

    matrix: sp.csr_matrix                 # stiffness(gamma) + boundary mass
    electrode_functionals: np.ndarray     # (n_electrodes, n_nodes), l_k[i] = (1/zeta_k) int_ek phi_i dS
    electrode_lengths: np.ndarray         # (n_electrodes,) |e_k|


class CemOperator:
    """Caches mesh-dependent assembly structure across repeated solves.

    The unit-conductivity element stiffness, sparsity pattern, electrode
    boundary mass, and load functionals depend only on the mesh and zeta,
    so callers that sweep over conductivities reuse one instance.
    """

    def __init__(self, mesh: Mesh, zeta: np.ndarray):
        zeta = np.asarray(zeta, dtype=float).ravel()
        if len(zeta) != mesh.n_electrodes:
            raise CemError(
                f"{len(zeta)} impedances for {mesh.n_electrodes} electrode groups"
            )
        if not (zeta > 0).all():
            raise CemError("contact impedances must be positive")
        self.mesh = mesh
        self.zeta = zeta

        grads = mesh.basis_gradients
        self._unit_stiffness = (
            np.einsum("epd,eqd->epq", grads, grads) * mesh.element_area[:, None, None]
        )
        tris = mesh.triangles
        self._rows = np.repeat(tris, 3, axis=1).ravel()
        self._cols = np.tile(tris, (1, 3)).ravel()

        n = mesh.n_nodes
        mass = sp.lil_matrix((n, n))
        functionals = np.zeros((mesh.n_electrodes, n))
        lengths = np.zeros(mesh.n_electrodes)
        for k, edges in enumerate(mesh.electrode_edges):
            inv_z = 1.0 / zeta[k]
            for a, b in edges:
                d = mesh.nodes[a] - mesh.nodes[b]
                ell = math.hypot(d[0], d[1])
                lengths[k] += ell
                # exact P1 trace integrals on a straight edge
                mass[a, a] += inv_z * ell / 3.0
                mass[b, b] += inv_z * ell / 3.0
                mass[a, b] += inv_z * ell / 6.0
                mass[b, a] += inv_z * ell / 6.0
                functionals[k, a] += inv_z * ell / 2.0
                functionals[k, b] += inv_z * ell / 2.0
        self._boundary_mass = mass.tocsr()
        self.electrode_functionals = functionals
        self.electrode_lengths = lengths

    def assemble(self, gamma: np.ndarray) -> AssembledSystem:
        gamma = np.asarray(gamma, dtype=float)
        if gamma.shape != (self.mesh.n_nodes,):
            raise CemError(f"gamma shape {gamma.shape}, expected ({self.mesh.n_nodes},)")
        if not (gamma > 0).all():
            raise CemError("conductivity must be strictly positive at every node")
        gbar = gamma[self.mesh.triangles].mean(axis=1)
        data = (gbar[:, None, None] * self._unit_stiffness).ravel()
        n = self.mesh.n_nodes
        stiff = sp.coo_matrix((data, (self._rows, self._cols)), shape=(n, n)).tocsr()
        return AssembledSystem(stiff + self._boundary_mass,
                               self.electrode_functionals, self.electrode_lengths)

    def _factorize(self, matrix: sp.csr_matrix):
        try:
            return splu(matrix.tocsc())
        except RuntimeError as exc:  # pragma: no cover - SPD by construction
            raise CemError(f"sparse factorization failed: {exc}") from exc

    @staticmethod
    def _solve_refined(lu, matrix, rhs):
        # one step of iterative refinement keeps current-conservation residuals
        # near machine precision despite the stiff boundary terms
        x = lu.solve(rhs)
        x += lu.solve(rhs - matrix @ x)
        return x

    def solve(self, gamma: np.ndarray, excitations: ExcitationSet) -> ForwardSolution:
        if excitations.n_electrodes != self.mesh.n_electrodes:
            raise CemError("excitation size does not match electrode count")
        system = self.assemble(gamma)
        lu = self._factorize(system.matrix)
        rhs = excitations.patterns @ system.electrode_functionals  # (P2, Nn)
        u = self._solve_refined(lu, system.matrix, rhs.T).T
        self._check_residual(system.matrix, u, rhs)
        currents = (
            u @ system.electrode_functionals.T
            - excitations.patterns * (system.electrode_lengths / self.zeta)
        )
        return ForwardSolution(u, currents)

    @staticmethod
    def _check_residual(matrix, u, rhs):
        res = np.linalg.norm(rhs - u @ matrix.T)
        scale = max(np.linalg.norm(rhs), 1e-300)
        if not np.isfinite(res) or res > 1e-8 * scale:
            raise CemError(
                f"linear solve did not reach tolerance: residual {res / scale:.3e} relative"
            )

    def solve_with_jacobian(self, gamma: np.ndarray, excitations: ExcitationSet,
                            mask: np.ndarray) -> tuple[ForwardSolution, CurrentJacobian]:
        """Forward solution plus adjoint-state Jacobian, sharing one factorization.

        The sensitivity of current (j, k) to the conductivity at node i is
        -integral phi_i grad(u_j) . grad(w_k) dx with w_k the adjoint solve
        for electrode functional l_k; with P1 fields the element integrand is
        constant, so each element spreads -(A_E/3) grad(u).grad(w) to its nodes.
        """
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (excitations.n_patterns, self.mesh.n_electrodes):
            raise CemError(f"mask shape {mask.shape} does not match patterns/electrodes")
        system = self.assemble(gamma)
        lu = self._factorize(system.matrix)
        rhs = excitations.patterns @ system.electrode_functionals
        u = self._solve_refined(lu, system.matrix, rhs.T).T
        self._check_residual(system.matrix, u, rhs)
        currents = (
            u @ system.electrode_functionals.T
            - excitations.patterns * (system.electrode_lengths / self.zeta)
        )
        w = self._solve_refined(lu, system.matrix, system.electrode_functionals.T).T

        tris = self.mesh.triangles
        grads = self.mesh.basis_gradients
        gu = np.einsum("jtp,tpd->jtd", u[:, tris], grads)  # (P2, Ne, 2)
        gw = np.einsum("ktp,tpd->ktd", w[:, tris], grads)  # (P1, Ne, 2)
        weight = self.mesh.element_area / 3.0
        dots = np.einsum("jtd,ktd->jkt", gu, gw) * weight                   # (P2, P1, Ne)

        n = self.mesh.n_nodes
        flat_tris = tris.ravel()
        rows = []
        for j, k in zip(*np.nonzero(mask)):
            vals = np.repeat(-dots[j, k], 3)
            rows.append(np.bincount(flat_tris, weights=vals, minlength=n))
        matrix = np.array(rows).reshape(int(mask.sum()), n)
        return ForwardSolution(u, currents), CurrentJacobian(matrix, mask)


def assemble_system(mesh: Mesh, gamma: np.ndarray, zeta: np.ndarray) -> AssembledSystem:
    """Assemble the reduced SPD system and electrode boundary functionals."""
    return CemOperator(mesh, zeta).assemble(gamma)


def solve_forward(mesh: Mesh, gamma: np.ndarray,
                  excitations: ExcitationSet) -> ForwardSolution:
    """Solve all excitation patterns for one conductivity."""
    return CemOperator(mesh, excitations.contact_impedances).solve(gamma, excitations)


def current_jacobian(mesh: Mesh, gamma: np.ndarray, excitations: ExcitationSet,
                     mask: np.ndarray) -> CurrentJacobian:
    """Jacobian of the masked currents with respect to nodal conductivity."""
    op = CemOperator(mesh, excitations.contact_impedances)
    _, jac = op.solve_with_jacobian(gamma, excitations, mask)
    return jac


def masked_currents(currents: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Flatten (pattern, electrode) currents to the masked measurement vector."""
    mask = np.asarray(mask, dtype=bool)
    return np.asarray(currents)[mask]


def check_scaling_theorem(mesh: Mesh, gamma: np.ndarray, excitations: ExcitationSet,
                          c: float) -> float:
    """Max relative current mismatch between (c*Omega, c*gamma) and c*I.

    Scaling the domain by c and the conductivity by c multiplies all currents
    by c in 2D; the mismatch should sit at solver round-off.
    """
    base = solve_forward(mesh, gamma, excitations).currents
    scaled = solve_forward(scale_mesh(mesh, c), float(c) * np.asarray(gamma, float),
                           excitations).currents
    ref = c * base
    return float(np.abs(scaled - ref).max() / np.abs(ref).max())


def fit_homogeneous(mesh: Mesh, excitations: ExcitationSet,
                    measurements: "MeasurementSet",
                    weights: np.ndarray | None = None,
                    bounds: tuple[float, float] = (1e-6, 1e6),
                    tol: float = 1e-6) -> float:
    """Best constant conductivity under the weighted current misfit.

    Minimizes ``||W (I_h(c * ones) - measured)||_2^2`` by golden-section
    search over log(c). ``weights`` defaults to the stored measurement
    weights, or to 200/|measured current| when none were built.
    """
    data = np.asarray(measurements.currents, dtype=float)
    if data.size == 0:
        raise CemError("empty measurement set")
    if weights is None:
        weights = measurements.weights
    if weights is None:
        weights = 200.0 / np.abs(data)
    weights = np.asarray(weights, dtype=float)
    if not (weights != 0).any():
        raise CemError("all measurement weights are zero: no effective data")

    mask = np.asarray(measurements.mask, dtype=bool)
    op = CemOperator(mesh, excitations.contact_impedances)
    ones = np.ones(mesh.n_nodes)

    def misfit(log_c: float) -> float:
        sol = op.solve(math.exp(log_c) * ones, excitations)
        r = masked_currents(sol.currents, mask) - data
        return float(np.dot(weights * r, weights * r))

    lo, hi = math.log(bounds[0]), math.log(bounds[1])
    x = _golden_section(misfit, lo, hi, tol)
    if x - lo < 2 * tol or hi - x < 2 * tol:
        warnings.warn(
            "homogeneous fit hit the search bound; returning the boundary value",
            stacklevel=2,
        )
        x = lo if x - lo < 2 * tol else hi
    return math.exp(x)


def _golden_section(f, lo: float, hi: float, tol: float) -> float:
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)
