"""Shared fixtures: the desk-scale benchmark problem and its reconstructions.

Session-scoped because the reconstructions take minutes; the acceptance
criteria and the optimizer's inexactness invariant reuse the same runs.
"""

import time

import numpy as np
import pytest

from eitms import generate_disk_mesh
from eitms.cem import voltage_excitations
from eitms.optimize import PdpsParams, Regularizer, RipgnParams, ripgn_run
from eitms.phantoms import (
    Inclusion,
    add_inclusion,
    build_weights,
    sample_grf,
    simulate_measurements,
)
from eitms.regularizers import ATParams

PAPER_ZETA = 1e-5
PAPER_NOISE = 1e-4
AT_PAPER = ATParams(lam=1e-3, alpha=1e-2)


def desk_phantom(mesh, seed=5):
    """Smooth 1 S background with a 10 S circle and a 1e-4 S square."""
    truth = sample_grf(mesh, 1.0, 0.1, 0.12, seed=seed)
    truth = add_inclusion(truth, mesh, Inclusion("circle", (-0.06, 0.03, 0.035), 10.0))
    truth = add_inclusion(truth, mesh, Inclusion("square", (0.05, -0.045, 0.055), 1e-4))
    return truth


@pytest.fixture(scope="session")
def paper_excitations():
    return voltage_excitations(16, 1.0, PAPER_ZETA)


@pytest.fixture(scope="session")
def desk_problem(paper_excitations):
    """~1500-node simulation mesh, ~700-node inversion mesh, noisy data."""
    sim_mesh = generate_disk_mesh(0.15, 16, 1 / 32, 0.0075)
    inv_mesh = generate_disk_mesh(0.15, 16, 1 / 32, 0.0107)
    truth = desk_phantom(sim_mesh)
    ms = simulate_measurements(sim_mesh, truth, paper_excitations, PAPER_NOISE, seed=1)
    weights = build_weights(ms, a=1.0)
    return {
        "sim_mesh": sim_mesh,
        "inv_mesh": inv_mesh,
        "truth": truth,
        "measurements": ms,
        "weights": weights,
    }


@pytest.fixture(scope="session")
def desk_at_run(desk_problem, paper_excitations):
    """Phase-field reconstruction at the paper parameters, with its wall time."""
    t0 = time.perf_counter()
    result = ripgn_run(
        desk_problem["inv_mesh"], paper_excitations,
        desk_problem["measurements"], desk_problem["weights"],
        Regularizer("at", at=AT_PAPER),
        RipgnParams(max_outer=150), PdpsParams(max_inner=2000),
    )
    return result, time.perf_counter() - t0


@pytest.fixture(scope="session")
def desk_tv_run(desk_problem, paper_excitations):
    return ripgn_run(
        desk_problem["inv_mesh"], paper_excitations,
        desk_problem["measurements"], desk_problem["weights"],
        Regularizer("tv", weight=0.1),
        RipgnParams(max_outer=150), PdpsParams(max_inner=2000),
    )
