import math

import numpy as np
import pytest

from eitms import Mesh, generate_disk_mesh
from eitms.cem import (
    CemError,
    CemOperator,
    ExcitationSet,
    assemble_system,
    check_scaling_theorem,
    current_jacobian,
    fit_homogeneous,
    masked_currents,
    solve_forward,
    voltage_excitations,
)


def square_mesh(with_electrodes=False, zeta=0.1):
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    tris = np.array([[0, 1, 2], [0, 2, 3]])
    groups = ()
    if with_electrodes:
        groups = (np.array([[3, 0]]), np.array([[1, 2]]))  # left and right sides
    return Mesh(nodes, tris, groups)


@pytest.fixture(scope="module")
def disk():
    return generate_disk_mesh(0.15, 16, 1 / 32, 0.015)


@pytest.fixture(scope="module")
def excitations():
    return voltage_excitations(16, 1.0, 1e-5)


def dense_stiffness_oracle(mesh, gamma):
    """Hand assembly: per-element quadrature of gamma * grad(phi_i).grad(phi_j)."""
    n = mesh.n_nodes
    out = np.zeros((n, n))
    for t, tri in enumerate(mesh.triangles):
        pts = mesh.nodes[tri]
        area = 0.5 * abs(
            (pts[1, 0] - pts[0, 0]) * (pts[2, 1] - pts[0, 1])
            - (pts[1, 1] - pts[0, 1]) * (pts[2, 0] - pts[0, 0])
        )
        grads = np.zeros((3, 2))
        for i in range(3):
            e = pts[(i + 2) % 3] - pts[(i + 1) % 3]
            grads[i] = np.array([-e[1], e[0]]) / (2 * area)
        gbar = gamma[tri].mean()
        for i in range(3):
            for j in range(3):
                out[tri[i], tri[j]] += gbar * area * grads[i] @ grads[j]
    return out


def test_assembly_matches_hand_laplacian():
    mesh = square_mesh()
    gamma = np.ones(4)
    sys = assemble_system(mesh, gamma, np.zeros(0))
    oracle = dense_stiffness_oracle(mesh, gamma)
    assert np.allclose(sys.matrix.toarray(), oracle, atol=1e-14)


def test_assembly_linear_in_gamma():
    mesh = square_mesh(with_electrodes=True)
    zeta = np.array([0.1, 0.2])
    gamma = np.array([1.0, 2.0, 0.5, 1.5])
    a1 = assemble_system(mesh, gamma, zeta).matrix.toarray()
    a2 = assemble_system(mesh, 2 * gamma, zeta).matrix.toarray()
    # oracle boundary mass from the exact straight-edge P1 trace integrals
    b = np.zeros((4, 4))
    for k, (i, j) in enumerate([(3, 0), (1, 2)]):
        b[i, i] += 1 / zeta[k] / 3
        b[j, j] += 1 / zeta[k] / 3
        b[i, j] += 1 / zeta[k] / 6
        b[j, i] += 1 / zeta[k] / 6
    assert np.allclose(a2 - a1, a1 - b, atol=1e-13)


def test_assembly_symmetric(disk):
    rng = np.random.default_rng(0)
    gamma = np.exp(rng.normal(size=disk.n_nodes) * 0.3)
    a = assemble_system(disk, gamma, np.full(16, 1e-5)).matrix
    asym = abs(a - a.T).max()
    assert asym < 1e-14 * abs(a).max()


def test_assembly_rejects_nonpositive_gamma(disk):
    gamma = np.ones(disk.n_nodes)
    gamma[5] = 0.0
    with pytest.raises(CemError, match="positive"):
        assemble_system(disk, gamma, np.full(16, 1e-5))


@pytest.mark.parametrize("seed", [0, 1])
def test_current_conservation(disk, excitations, seed):
    rng = np.random.default_rng(seed)
    gamma = np.exp(0.3 * rng.standard_normal(disk.n_nodes))
    sol = solve_forward(disk, gamma, excitations)
    sums = np.abs(sol.currents.sum(axis=1))
    norms = np.linalg.norm(sol.currents, axis=1)
    assert (sums <= 1e-10 * norms).all()


def test_mirror_symmetry_of_currents(disk, excitations):
    sol = solve_forward(disk, np.ones(disk.n_nodes), excitations)
    row = sol.currents[0]
    # electrodes k and 16-k are mirror images across the x-axis
    mirrored = row[1:][::-1]
    assert np.abs(row[1:] - mirrored).max() < 1e-10 * np.abs(row).max()


def test_reduced_solve_matches_dense_block_system():
    mesh = square_mesh(with_electrodes=True)
    zeta = np.array([0.1, 0.25])
    exc = ExcitationSet(np.array([[1.0, 0.0], [0.3, -0.7]]), zeta)
    gamma = np.array([1.0, 2.5, 0.7, 1.3])

    sys = assemble_system(mesh, gamma, zeta)
    n, p = mesh.n_nodes, 2
    full = np.zeros((n + p, n + p))
    rhs = np.zeros((p, n + p))
    full[:n, :n] = sys.matrix.toarray()
    for k in range(p):
        full[n + k, :n] = -sys.electrode_functionals[k]
        full[n + k, n + k] = 1.0
        for j in range(p):
            rhs[j, :n] += exc.patterns[j, k] * sys.electrode_functionals[k]
            rhs[j, n + k] = -exc.patterns[j, k] * sys.electrode_lengths[k] / zeta[k]
    dense = np.linalg.solve(full, rhs.T).T

    sol = solve_forward(mesh, gamma, exc)
    assert np.allclose(sol.potentials, dense[:, :n], rtol=1e-10, atol=1e-12)
    assert np.allclose(sol.currents, dense[:, n:], rtol=1e-10, atol=1e-12)


def test_scaling_theorem(disk, excitations):
    assert check_scaling_theorem(disk, np.ones(disk.n_nodes), excitations, 1.0) < 1e-14
    rng = np.random.default_rng(7)
    gamma = np.exp(0.4 * rng.standard_normal(disk.n_nodes))
    for c in (0.1, 2.0, 10.0):
        assert check_scaling_theorem(disk, gamma, excitations, c) < 1e-8


def test_current_continuity_in_gamma(disk, excitations):
    rng = np.random.default_rng(11)
    gamma = np.ones(disk.n_nodes)
    delta = rng.uniform(-0.5, 0.5, size=disk.n_nodes)
    base = solve_forward(disk, gamma, excitations).currents
    ts = np.logspace(-6, -2, 5)
    diffs = np.array([
        np.linalg.norm(solve_forward(disk, gamma + t * delta, excitations).currents - base)
        for t in ts
    ])
    slope = diffs / ts
    assert diffs[0] < diffs[-1]
    assert slope.max() < 2.0 * slope.min()  # near-linear response for small t


def test_fit_homogeneous_recovers_constant(disk, excitations):
    from eitms.phantoms import MeasurementSet

    mask = ~np.eye(16, dtype=bool)
    sol = solve_forward(disk, np.full(disk.n_nodes, 2.0), excitations)
    ms = MeasurementSet(currents=masked_currents(sol.currents, mask), mask=mask)
    est = fit_homogeneous(disk, excitations, ms)
    assert abs(est - 2.0) < 2e-3 * 2.0


def test_fit_homogeneous_rejects_zero_weights(disk, excitations):
    from eitms.phantoms import MeasurementSet

    mask = ~np.eye(16, dtype=bool)
    sol = solve_forward(disk, np.ones(disk.n_nodes), excitations)
    ms = MeasurementSet(currents=masked_currents(sol.currents, mask), mask=mask)
    with pytest.raises(CemError, match="weights"):
        fit_homogeneous(disk, excitations, ms, weights=np.zeros(ms.currents.size))


def test_fit_homogeneous_phantom_background(disk, excitations):
    from eitms.phantoms import Inclusion, MeasurementSet, add_inclusion

    gamma = np.ones(disk.n_nodes)
    gamma = add_inclusion(gamma, disk, Inclusion("circle", (-0.06, 0.03, 0.03), 10.0))
    mask = ~np.eye(16, dtype=bool)
    sol = solve_forward(disk, gamma, excitations)
    ms = MeasurementSet(currents=masked_currents(sol.currents, mask), mask=mask)
    est = fit_homogeneous(disk, excitations, ms)
    assert 0.5 < est < 2.0


def test_jacobian_row_count_240(disk, excitations):
    mask = ~np.eye(16, dtype=bool)
    jac = current_jacobian(disk, np.ones(disk.n_nodes), excitations, mask)
    assert jac.matrix.shape == (240, disk.n_nodes)


def test_jacobian_against_finite_differences(excitations):
    mesh = generate_disk_mesh(0.15, 16, 1 / 32, 0.018)
    rng = np.random.default_rng(3)
    gamma = np.clip(1.0 + 0.3 * rng.standard_normal(mesh.n_nodes), 0.3, None)
    mask = ~np.eye(16, dtype=bool)
    op = CemOperator(mesh, excitations.contact_impedances)
    _, jac = op.solve_with_jacobian(gamma, excitations, mask)
    for i in rng.choice(mesh.n_nodes, 5, replace=False):
        h = 1e-6 * gamma[i]
        gp, gm = gamma.copy(), gamma.copy()
        gp[i] += h
        gm[i] -= h
        fd = (
            masked_currents(op.solve(gp, excitations).currents, mask)
            - masked_currents(op.solve(gm, excitations).currents, mask)
        ) / (2 * h)
        err = np.linalg.norm(jac.matrix[:, i] - fd) / np.linalg.norm(fd)
        assert err < 1e-5


def test_jacobian_reciprocity(disk, excitations):
    # unit-amplitude one-hot patterns make u^j equal the adjoint w^j, so the
    # sensitivity of current k under pattern j equals that of j under k
    mask = np.ones((16, 16), dtype=bool)
    jac = current_jacobian(disk, np.ones(disk.n_nodes), excitations, mask)
    full = jac.matrix.reshape(16, 16, disk.n_nodes)
    swapped = np.transpose(full, (1, 0, 2))
    assert np.abs(full - swapped).max() < 1e-9 * np.abs(full).max()


def test_residual_check_reports_value(disk):
    op = CemOperator(disk, np.full(16, 1e-5))
    sys = op.assemble(np.ones(disk.n_nodes))
    rhs = np.ones((1, disk.n_nodes))
    with pytest.raises(CemError, match="residual"):
        op._check_residual(sys.matrix, np.zeros((1, disk.n_nodes)) + 1.0, rhs)


def test_excitation_validation():
    with pytest.raises(CemError, match="impedances"):
        ExcitationSet(np.eye(4), np.array([1e-5, 1e-5]))
    with pytest.raises(CemError, match="positive"):
        ExcitationSet(np.eye(2), np.array([1e-5, -1e-5]))
