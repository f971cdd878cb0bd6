"""Reconstruction solvers: relaxed proximal Gauss-Newton over primal-dual splitting.

Outer loop (per iteration k): solve the forward model and its Jacobian at the
current conductivity, replace the data term by its linearization

    0.5 * || K1 gamma - b ||^2,   K1 = W J,   b = K1 gamma_k - W (I(gamma_k) - data),

and hand the partially linearized, proximally damped subproblem

    min_{gamma, z}  0.5 ||K1 gamma - b||^2 + R(gamma, z)
                    + box indicators + beta * ||gamma - gamma_k||^2

to an inner primal-dual solver. Only gamma is relaxed on the way back:
gamma <- (1 - w) gamma + w gamma_tilde, while z is replaced outright.

The inner solver alternates a primal proximal step (box clamp, with the beta
quadratic folded in closed form), over-relaxation q_bar = 2 q_new - q_old, and
dual proximal steps. For the phase-field regularizer the dual block is the
nonlinear per-element map K2 evaluated at q_bar with its exact local Jacobian;
the dual step length follows

    s = 1 / (2 t (||K1||^2 + (margin * ||dK2||_F)^2)),

refreshed every ``s_update_period`` iterations, which keeps s * t * L^2 <= 1/2.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import TYPE_CHECKING, Literal

import numpy as np

from .cem import CemError, CemOperator, CurrentJacobian, ExcitationSet, ForwardSolution, masked_currents
from .mesh import Mesh
from .regularizers import (
    ATParams,
    BoxConstraints,
    eval_F_grad,
    eval_F_lambda,
    eval_TV,
    grad_operator,
    k2_element_partials,
    prox_F1_conj,
    prox_F2_conj,
    scatter_nodal,
    tv_dual_project,
    tv_operator,
)

if TYPE_CHECKING:  # pragma: no cover
    from .phantoms import MeasurementSet


class OptimizeError(RuntimeError):
    """Inner or outer solver failure."""


@dataclass(frozen=True)
class RipgnParams:
    """Outer-loop controls: proximal weight, relaxation, stopping."""

    beta: float = 0.01
    w: float = 0.1
    max_outer: int = 300
    outer_tol: float = 1e-5
    stall_window: int = 10

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if not 0 < self.w <= 1:
            raise ValueError("relaxation w must lie in (0, 1]")


@dataclass(frozen=True)
class PdpsParams:
    """Inner-loop controls: primal step, dual-step refresh cadence, stopping."""

    t: float = 0.01
    s_update_period: int = 100
    max_inner: int = 2000
    inner_tol: float = 1e-6
    L_margin: float = 1.2

    def __post_init__(self):
        if self.t <= 0:
            raise ValueError("primal step t must be positive")
        if self.s_update_period < 1:
            raise ValueError("s_update_period must be at least 1")


@dataclass(frozen=True)
class Regularizer:
    """Reconstruction regularizer choice.

    kind "at" uses the phase-field functional with ``at`` parameters; "tv"
    and "grad" use the total-variation and squared-gradient baselines with
    gradient-term weight ``weight``.
    """

    kind: Literal["at", "tv", "grad"]
    at: ATParams = ATParams()
    weight: float = 1.0

    def __post_init__(self):
        if self.kind not in ("at", "tv", "grad"):
            raise ValueError(f"unknown regularizer kind {self.kind!r}")
        if self.weight <= 0:
            raise ValueError("regularizer weight must be positive")

    def value(self, mesh: Mesh, gamma: np.ndarray, z: np.ndarray | None) -> float:
        if self.kind == "at":
            zz = np.ones(mesh.n_nodes) if z is None else z
            return eval_F_lambda(mesh, gamma, zz, self.at)
        if self.kind == "tv":
            return eval_TV(mesh, gamma, self.weight)
        return eval_F_grad(mesh, gamma, self.weight)


@dataclass
class TraceRecord:
    iteration: int
    objective: float
    data_term: float
    reg_term: float
    wall_time: float


@dataclass
class ReconstructionResult:
    """Final iterates plus per-outer-iteration diagnostics."""

    gamma: np.ndarray
    z: np.ndarray | None
    gamma_hmg: float
    trace: list[TraceRecord]
    converged: bool
    failed: bool = False
    failure_message: str = ""
    n_outer: int = 0
    wall_time: float = 0.0

    @property
    def objective_trace(self) -> np.ndarray:
        return np.array([r.objective for r in self.trace])


def write_trace_csv(trace: list[TraceRecord], path) -> None:
    """Dump per-iteration records as CSV (iteration, objective, terms, wall time)."""
    lines = ["iteration,objective,data_term,reg_term,wall_time"]
    for r in trace:
        lines.append(
            f"{r.iteration},{r.objective!r},{r.data_term!r},{r.reg_term!r},{r.wall_time!r}"
        )
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def operator_norm(matrix: np.ndarray, n_iter: int = 20) -> float:
    """Spectral norm by power iteration with a deterministic start vector."""
    matrix = np.asarray(matrix)
    n = matrix.shape[1]
    if matrix.size == 0:
        return 0.0
    v = np.full(n, 1.0) + np.linspace(0.0, 0.1, n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(n_iter):
        w = matrix.T @ (matrix @ v)
        lam = np.linalg.norm(w)
        if lam == 0.0:
            return 0.0
        v = w / lam
    return float(np.sqrt(lam))


def linearize_data_term(gamma_k: np.ndarray, forward: ForwardSolution,
                        jac: CurrentJacobian, weights: np.ndarray,
                        measurements: "MeasurementSet"):
    """Weighted linearization of the data misfit around gamma_k.

    Returns (K1, b) with K1 = W J and b = K1 gamma_k - W (I(gamma_k) - data),
    so 0.5 ||K1 gamma_k - b||^2 reproduces the exact weighted misfit at gamma_k.
    """
    weights = np.asarray(weights, dtype=float)
    k1 = weights[:, None] * jac.matrix
    residual = masked_currents(forward.currents, jac.mask) - measurements.currents
    if residual.shape != weights.shape:
        raise OptimizeError("weights length does not match masked measurements")
    b = k1 @ gamma_k - weights * residual
    return k1, b


def _prox_primal_gamma(v: np.ndarray, t: float, beta: float, gamma_k: np.ndarray,
                       box: BoxConstraints) -> np.ndarray:
    # prox of t * (beta ||. - gamma_k||^2 + box indicator): scaled clamp
    if beta > 0:
        v = (v + 2.0 * t * beta * gamma_k) / (1.0 + 2.0 * t * beta)
    return np.clip(v, box.gamma_min, box.gamma_max)


def _check_finite(arr: np.ndarray, what: str, iteration: int):
    if not np.isfinite(arr).all():
        raise OptimizeError(
            f"non-finite {what} at inner iteration {iteration}: step too large"
        )


def pdps_solve(K1: np.ndarray, b: np.ndarray, mesh: Mesh, p: ATParams,
               box: BoxConstraints, gamma_k: np.ndarray, z_k: np.ndarray,
               params: PdpsParams, beta: float,
               freeze_k2: bool = False):
    """Inner primal-dual solve of the phase-field subproblem.

    Starts from q = (gamma_k, 3/4 + z_k/4) with zero duals. With
    ``freeze_k2`` the nonlinear element map is replaced by its first-order
    expansion at the initial iterate, making the subproblem convex (used to
    validate against a dense convex solver).
    """
    t = params.t
    q1 = np.asarray(gamma_k, dtype=float).copy()
    q2 = 0.75 + 0.25 * np.asarray(z_k, dtype=float)
    y1 = np.zeros(K1.shape[0])
    y2 = np.zeros(mesh.n_elements)
    z_lo = max(box.z_min, p.epsilon_lambda)

    k1_norm2 = operator_norm(K1) ** 2

    frozen = None
    if freeze_k2:
        v0, dg0, dz0 = k2_element_partials(mesh, q1, q2, p)
        frozen = (v0 - (dg0 * q1[mesh.triangles]).sum(axis=1)
                  - (dz0 * q2[mesh.triangles]).sum(axis=1), dg0, dz0)

    def partials(g, z):
        if frozen is not None:
            offset, dg, dz = frozen
            vals = offset + (dg * g[mesh.triangles]).sum(axis=1) \
                + (dz * z[mesh.triangles]).sum(axis=1)
            return vals, dg, dz
        return k2_element_partials(mesh, g, z, p)

    s = None
    for j in range(params.max_inner):
        _, dgam, dz = partials(q1, q2)
        if j % params.s_update_period == 0:
            fro2 = float((dgam * dgam).sum() + (dz * dz).sum())
            denom = 2.0 * t * (k1_norm2 + params.L_margin**2 * fro2)
            s = 1.0 / denom if denom > 0 else 1.0

        g1 = K1.T @ y1 + scatter_nodal(mesh, dgam, y2)
        g2 = scatter_nodal(mesh, dz, y2)
        q1_new = _prox_primal_gamma(q1 - t * g1, t, beta, gamma_k, box)
        q2_new = np.clip(q2 - t * g2, z_lo, box.z_max)

        qb1 = 2.0 * q1_new - q1
        qb2 = 2.0 * q2_new - q2
        vals_bar, _, _ = partials(qb1, qb2)
        y1 = prox_F1_conj(y1 + s * (K1 @ qb1), s, b)
        y2 = prox_F2_conj(y2 + s * vals_bar)

        delta = np.linalg.norm(q1_new - q1) + np.linalg.norm(q2_new - q2)
        scale = np.linalg.norm(q1) + np.linalg.norm(q2)
        q1, q2 = q1_new, q2_new
        _check_finite(q1, "gamma iterate", j)
        _check_finite(q2, "control iterate", j)
        if j >= 1 and delta <= params.inner_tol * max(scale, 1e-30):
            break
    return q1, q2


def pdps_solve_tv(K1: np.ndarray, b: np.ndarray, mesh: Mesh, weight: float,
                  box: BoxConstraints, gamma_k: np.ndarray, params: PdpsParams,
                  beta: float) -> np.ndarray:
    """Inner solve with the total-variation block (linear operator, disk duals)."""
    t = params.t
    d_op = tv_operator(mesh)
    q = np.asarray(gamma_k, dtype=float).copy()
    y1 = np.zeros(K1.shape[0])
    y2 = np.zeros((mesh.n_elements, 2))

    k1_norm2 = operator_norm(K1) ** 2
    fro2 = float((d_op.data**2).sum())
    denom = 2.0 * t * (k1_norm2 + params.L_margin**2 * fro2)
    s = 1.0 / denom if denom > 0 else 1.0

    for j in range(params.max_inner):
        g = K1.T @ y1 + d_op.T @ y2.ravel()
        q_new = _prox_primal_gamma(q - t * g, t, beta, gamma_k, box)
        qb = 2.0 * q_new - q
        y1 = prox_F1_conj(y1 + s * (K1 @ qb), s, b)
        y2 = tv_dual_project(y2 + s * (d_op @ qb).reshape(-1, 2), weight)
        delta = np.linalg.norm(q_new - q)
        scale = np.linalg.norm(q)
        q = q_new
        _check_finite(q, "gamma iterate", j)
        if j >= 1 and delta <= params.inner_tol * max(scale, 1e-30):
            break
    return q


def pdps_solve_smooth(K1: np.ndarray, b: np.ndarray, mesh: Mesh, weight: float,
                      box: BoxConstraints, gamma_k: np.ndarray, params: PdpsParams,
                      beta: float) -> np.ndarray:
    """Inner solve with the squared-gradient penalty folded into least squares.

    Stacking sqrt(2 * weight) times the gradient operator under K1 turns
    0.5||K1 g - b||^2 + weight * sum A |grad g|^2 into one quadratic block.
    """
    t = params.t
    l_op = (np.sqrt(2.0 * weight) * grad_operator(mesh)).tocsr()
    q = np.asarray(gamma_k, dtype=float).copy()
    y1 = np.zeros(K1.shape[0])
    y2 = np.zeros(l_op.shape[0])
    zeros = np.zeros(l_op.shape[0])

    k1_norm2 = operator_norm(K1) ** 2
    fro2 = float((l_op.data**2).sum())
    denom = 2.0 * t * (k1_norm2 + params.L_margin**2 * fro2)
    s = 1.0 / denom if denom > 0 else 1.0

    for j in range(params.max_inner):
        g = K1.T @ y1 + l_op.T @ y2
        q_new = _prox_primal_gamma(q - t * g, t, beta, gamma_k, box)
        qb = 2.0 * q_new - q
        y1 = prox_F1_conj(y1 + s * (K1 @ qb), s, b)
        y2 = prox_F1_conj(y2 + s * (l_op @ qb), s, zeros)
        delta = np.linalg.norm(q_new - q)
        scale = np.linalg.norm(q)
        q = q_new
        _check_finite(q, "gamma iterate", j)
        if j >= 1 and delta <= params.inner_tol * max(scale, 1e-30):
            break
    return q


def objective_eval(mesh: Mesh, gamma: np.ndarray, z: np.ndarray,
                   excitations: ExcitationSet, measurements: "MeasurementSet",
                   weights: np.ndarray, p: ATParams) -> float:
    """Exact objective: nonlinear weighted data misfit plus phase-field value."""
    op = CemOperator(mesh, excitations.contact_impedances)
    sol = op.solve(gamma, excitations)
    r = masked_currents(sol.currents, measurements.mask) - measurements.currents
    wr = np.asarray(weights) * r
    return 0.5 * float(wr @ wr) + eval_F_lambda(mesh, gamma, z, p)


def ripgn_run(mesh: Mesh, excitations: ExcitationSet, measurements: "MeasurementSet",
              weights: np.ndarray, reg: Regularizer,
              ripgn: RipgnParams = RipgnParams(),
              pdps: PdpsParams = PdpsParams(),
              gamma_max: float = 1e10,
              gamma_min_factor: float = 1e-5,
              gamma_init: float | None = None) -> ReconstructionResult:
    """Full reconstruction: homogeneous fit, outer Gauss-Newton, inner splitting.

    Starts from the best homogeneous estimate (or ``gamma_init``) with z = 1,
    bounds gamma to [gamma_min_factor * gamma_hmg, gamma_max], and stops when
    the objective changes by less than ``outer_tol`` relative over a
    ``stall_window`` of outer iterations, or at ``max_outer``.

    On a forward-solver failure the last completed iterate is returned with
    ``failed`` set instead of raising.
    """
    from .cem import fit_homogeneous  # local import to keep module load light

    start = time.perf_counter()
    weights = np.asarray(weights, dtype=float)
    if gamma_init is None:
        gamma_hmg = fit_homogeneous(mesh, excitations, measurements, weights=weights)
    else:
        gamma_hmg = float(gamma_init)
    box = BoxConstraints(gamma_min=gamma_min_factor * gamma_hmg, gamma_max=gamma_max)

    op = CemOperator(mesh, excitations.contact_impedances)
    mask = np.asarray(measurements.mask, dtype=bool)
    gamma = np.full(mesh.n_nodes, gamma_hmg)
    z = np.ones(mesh.n_nodes) if reg.kind == "at" else None
    trace: list[TraceRecord] = []
    converged = False

    def record(k: int, data_term: float):
        reg_term = reg.value(mesh, gamma, z)
        trace.append(TraceRecord(k, data_term + reg_term, data_term, reg_term,
                                 time.perf_counter() - start))

    def stalled() -> bool:
        w = ripgn.stall_window
        if len(trace) <= w:
            return False
        prev, cur = trace[-1 - w].objective, trace[-1].objective
        return abs(prev - cur) <= ripgn.outer_tol * max(abs(prev), 1e-30)

    k = 0
    try:
        for k in range(1, ripgn.max_outer + 1):
            forward, jac = op.solve_with_jacobian(gamma, excitations, mask)
            residual = masked_currents(forward.currents, mask) - measurements.currents
            wr = weights * residual
            record(k, 0.5 * float(wr @ wr))
            if stalled():
                converged = True
                break
            if k == ripgn.max_outer:
                break

            k1, b = linearize_data_term(gamma, forward, jac, weights, measurements)
            if reg.kind == "at":
                g_t, z_t = pdps_solve(k1, b, mesh, reg.at, box, gamma, z, pdps, ripgn.beta)
                z = z_t
            elif reg.kind == "tv":
                g_t = pdps_solve_tv(k1, b, mesh, reg.weight, box, gamma, pdps, ripgn.beta)
            else:
                g_t = pdps_solve_smooth(k1, b, mesh, reg.weight, box, gamma, pdps,
                                        ripgn.beta)
            gamma = (1.0 - ripgn.w) * gamma + ripgn.w * g_t
    except (CemError, OptimizeError) as exc:
        return ReconstructionResult(
            gamma=gamma, z=z, gamma_hmg=gamma_hmg, trace=trace, converged=False,
            failed=True, failure_message=str(exc), n_outer=k,
            wall_time=time.perf_counter() - start,
        )

    return ReconstructionResult(
        gamma=gamma, z=z, gamma_hmg=gamma_hmg, trace=trace, converged=converged,
        n_outer=k, wall_time=time.perf_counter() - start,
    )
