"""Shared fixtures: the expensive solver runs are session-scoped so the
solver, estimates and acceptance modules reuse them."""

import math

import numpy as np
import pytest

from slaglab import grids, solver


@pytest.fixture(scope="session")
def quadratic_fixture():
    """Exact quadratic problem (n=3, 17^3, f==1, theta=3 arctan 1/2) solved
    by Newton from the harmonic extension of its boundary data."""
    n, shape = 3, 17
    c = 0.5
    theta = n * math.atan(c)
    u_star = grids.GridFunction.from_callable(
        n, shape, lambda x: 0.5 * c * np.sum(x**2, axis=-1)
    )
    f = grids.GridFunction.constant(n, shape, 1.0)
    boundary = grids.GridFunction(n, shape)
    bnd = ~boundary.interior_mask(1)
    boundary.values[bnd] = u_star.values[bnd]
    u0 = grids.harmonic_extension(boundary)
    u, report = solver.newton_solve(u0, f, theta)
    return {
        "u": u,
        "u_star": u_star,
        "f": f,
        "theta": theta,
        "report": report,
    }


@pytest.fixture(scope="session")
def quartic_runs():
    """Manufactured quartic problem solved on 9^3 / 17^3 / 33^3."""
    out = {}
    for shape in (9, 17, 33):
        u_star, f, phi, theta = solver.manufactured_problem(
            "quartic", 3, shape, math.pi / 2
        )
        boundary = grids.GridFunction(3, shape)
        bnd = ~boundary.interior_mask(1)
        boundary.values[bnd] = phi.values[bnd]
        u0 = grids.harmonic_extension(boundary)
        u, report = solver.newton_solve(u0, f, theta)
        out[shape] = {
            "u": u,
            "u_star": u_star,
            "f": f,
            "phi": phi,
            "theta": theta,
            "report": report,
        }
    return out


@pytest.fixture(scope="session")
def bump_run():
    """Continuation solve with the gaussian-bump twist (regression fixture)."""
    n, shape = 3, 17
    f = grids.GridFunction.from_callable(
        n, shape, lambda x: 1.0 + 0.5 * np.exp(-4.0 * np.sum(x**2, axis=-1))
    )
    phi = grids.GridFunction.from_callable(
        n, shape, lambda x: 0.25 * np.sum(x**2, axis=-1)
    )
    problem = solver.DirichletProblem(f=f, theta=math.pi / 2, phi=phi)
    u, report = solver.continuation_solve(problem)
    return {"u": u, "f": f, "phi": phi, "theta": math.pi / 2, "report": report}
