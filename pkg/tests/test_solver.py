"""Solver tests: residual/Jacobian oracles, Newton, continuation, barriers,
manufactured problems."""

import math

import numpy as np
import pytest

from slaglab import grids, solver
from slaglab.errors import (
    ConstructionError,
    ContinuationError,
    DomainError,
    NonconvergenceError,
)

RNG = np.random.default_rng(99)


def quadratic_grid(n, shape, c):
    return grids.GridFunction.from_callable(
        n, shape, lambda x: 0.5 * c * np.sum(x**2, axis=-1)
    )


class TestResidual:
    def test_exact_quadratic(self):
        c = 0.5
        u = quadratic_grid(3, 17, c)
        f = grids.GridFunction.constant(3, 17, 1.0)
        r = solver.residual(u, f, 3 * math.atan(c))
        assert np.abs(r).max() <= 1e-12

    def test_locality(self):
        c = 0.5
        u = quadratic_grid(3, 17, c)
        f = grids.GridFunction.constant(3, 17, 1.0)
        theta = 3 * math.atan(c)
        base = solver.residual(u, f, theta)
        u2 = u.copy()
        node = (8, 8, 8)
        u2.values[node] += 1e-3
        diff = np.abs(solver.residual(u2, f, theta) - base)
        changed = np.argwhere(diff > 0)
        assert len(changed)
        assert np.abs(changed - np.array(node)).max() <= 1

    def test_manufactured_truncation_bound(self):
        u_star, f, _, theta = solver.manufactured_problem("quartic", 3, 17, math.pi / 2)
        r = solver.residual(u_star, f, theta)
        # |u*|_C4 scale for the quartic: fourth derivatives are 1.2
        assert np.abs(r).max() <= 5.0 * u_star.h**2 * 1.2

    def test_nonpositive_f_names_node(self):
        u = quadratic_grid(3, 17, 0.5)
        f = grids.GridFunction.constant(3, 17, 1.0)
        f.values[3, 4, 5] = -1.0
        with pytest.raises(DomainError) as err:
            solver.residual(u, f, math.pi / 2)
        assert "(3, 4, 5)" in str(err.value)

    def test_theta_out_of_range(self):
        u = quadratic_grid(3, 17, 0.5)
        f = grids.GridFunction.constant(3, 17, 1.0)
        with pytest.raises(DomainError):
            solver.residual(u, f, 3 * math.pi / 2 + 0.1)


class TestJacobian:
    def test_constant_coefficient_reduction(self):
        # quadratic u, f == 1: rows realise the constant-coefficient
        # operator sum_a [1/(1+c^2)] (FD Laplacian-like)
        c = 0.5
        u = quadratic_grid(3, 9, c)
        f = grids.GridFunction.constant(3, 9, 1.0)
        jac = solver.jacobian_assemble(u, f, 3 * math.atan(c))
        h = u.h
        w = 1.0 / (1.0 + c**2)
        row = jac.getrow(jac.shape[0] // 2).toarray().ravel()
        assert row.min() == pytest.approx(-6.0 * w / h**2, rel=1e-12)
        assert np.isclose(sorted(set(np.round(row, 10)))[-1], w / h**2)

    def test_matches_directional_differences(self):
        c = 0.5
        u = quadratic_grid(3, 17, c)
        u.values += 0.01 * RNG.standard_normal(u.values.shape)
        f = grids.GridFunction.constant(3, 17, 1.0)
        theta = 3 * math.atan(c)
        jac = solver.jacobian_assemble(u, f, theta)
        inner = (slice(1, -1),) * 3
        h_dir = 1e-5
        for _ in range(3):
            v = RNG.standard_normal((15, 15, 15))
            v /= np.abs(v).max()
            up, um = u.copy(), u.copy()
            up.values[inner] += h_dir * v
            um.values[inner] -= h_dir * v
            num = (
                solver.residual(up, f, theta) - solver.residual(um, f, theta)
            )[inner].ravel() / (2 * h_dir)
            ana = jac @ v.ravel()
            assert np.abs(num - ana).max() <= 1e-6 * np.abs(ana).max()

    def test_zero_direction(self):
        u = quadratic_grid(3, 9, 0.5)
        f = grids.GridFunction.constant(3, 9, 1.0)
        jac = solver.jacobian_assemble(u, f, 3 * math.atan(0.5))
        assert np.abs(jac @ np.zeros(jac.shape[0])).max() == 0.0

    def test_ellipticity_structure(self):
        # monotone-operator convention (-J has positive centre): in the
        # axis-aligned quadratic case the off-centre weights of -J are
        # nonpositive and the rows diagonally dominant
        u = quadratic_grid(3, 9, 0.7)
        f = grids.GridFunction.constant(3, 9, 1.0)
        op = -solver.jacobian_assemble(u, f, 3 * math.atan(0.7)).toarray()
        diag = np.diag(op)
        off = op - np.diag(diag)
        assert diag.min() > 0.0
        assert off.max() <= 1e-12
        assert np.all(diag + 1e-12 >= np.abs(off).sum(axis=1))


class TestNewton:
    def test_quadratic_fixture(self, quadratic_fixture):
        rep = quadratic_fixture["report"]
        err = np.abs(
            quadratic_fixture["u"].values - quadratic_fixture["u_star"].values
        ).max()
        assert sum(rep.iterations) <= 8
        assert err <= 1e-8
        assert rep.final_residual <= 1e-10

    def test_quartic_order(self, quartic_runs):
        errs = [
            np.abs(quartic_runs[s]["u"].values - quartic_runs[s]["u_star"].values).max()
            for s in (9, 17, 33)
        ]
        orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
        assert min(orders) >= 1.8

    def test_domain_error_before_iterating(self):
        u = quadratic_grid(3, 9, 0.5)
        f = grids.GridFunction.constant(3, 9, 1.0)
        with pytest.raises(DomainError):
            solver.newton_solve(u, f, 3 * math.pi / 2 + 1.0)

    def test_nonconvergence_carries_best(self):
        u = quadratic_grid(3, 9, 0.5)
        f = grids.GridFunction.constant(3, 9, 1.0)
        cfg = solver.NewtonConfig(newton_tol=1e-10, max_newton=1)
        u.values[(slice(1, -1),) * 3] += 0.5 * RNG.standard_normal((7, 7, 7))
        with pytest.raises(NonconvergenceError) as err:
            solver.newton_solve(u, f, 3 * math.atan(0.5), cfg)
        assert err.value.best is not None
        assert err.value.residual_norm > 0

    def test_comparison_sanity(self):
        # monotone quadratic boundary family: phi1 <= phi2 => u1 <= u2
        f = grids.GridFunction.constant(3, 9, 1.0)
        theta = 3 * math.atan(0.5)
        sols = []
        for c in (0.5, 0.6):
            phi = quadratic_grid(3, 9, c)
            boundary = grids.GridFunction(3, 9)
            bnd = ~boundary.interior_mask(1)
            boundary.values[bnd] = phi.values[bnd]
            u0 = grids.harmonic_extension(boundary)
            u, _ = solver.newton_solve(u0, f, theta)
            sols.append(u.values)
        assert np.all(sols[0] <= sols[1] + 1e-8)


class TestContinuation:
    def test_constant_path_reduces_to_newton(self):
        f = grids.GridFunction.constant(3, 9, 1.0)
        phi = quadratic_grid(3, 9, 0.5)
        problem = solver.DirichletProblem(f=f, theta=3 * math.atan(0.5), phi=phi)
        u, rep = solver.continuation_solve(problem)
        assert rep.final_residual <= 1e-10
        assert np.abs(u.values - phi.values).max() <= 1e-10

    def test_bump_regression(self, bump_run):
        rep = bump_run["report"]
        assert rep.final_residual <= 1e-10
        assert len(rep.path) == 5
        assert rep.hessian_range[0] > 0  # stayed convex along this path

    def test_path_reversal(self, bump_run):
        # walk the homotopy back to t=0 and recover the anchor quadratic
        f = bump_run["f"]
        theta = bump_run["theta"]
        anchor = solver.anchor_solution(
            solver.DirichletProblem(f=f, theta=theta, phi=bump_run["phi"])
        )
        u = bump_run["u"].copy()
        bnd = ~u.interior_mask(1)
        for t in (0.75, 0.5, 0.25, 0.0):
            f_t = grids.GridFunction(3, 17, 1.0 - t + t * f.values)
            phi_t = grids.GridFunction(
                3, 17, (1.0 - t) * anchor.values + t * bump_run["phi"].values
            )
            guess = u.copy()
            delta = grids.GridFunction(3, 17)
            delta.values[bnd] = phi_t.values[bnd] - guess.values[bnd]
            guess.values += grids.harmonic_extension(delta).values
            u, _ = solver.newton_solve(guess, f_t, theta)
        assert np.abs(u.values - anchor.values).max() <= 1e-8

    def test_bisection_exhaustion_reports_last_good(self):
        f = grids.GridFunction.constant(3, 9, 1.0)
        phi = quadratic_grid(3, 9, 0.5)
        problem = solver.DirichletProblem(f=f, theta=3 * math.atan(0.5), phi=phi)
        cfg = solver.ContinuationConfig(
            waypoints=2,
            max_bisect=1,
            newton=solver.NewtonConfig(max_newton=0),
        )
        with pytest.raises((ContinuationError, NonconvergenceError)):
            solver.continuation_solve(problem, cfg)


class TestBarriers:
    def test_exact_quadratic_margins(self, quadratic_fixture):
        u = quadratic_fixture["u"]
        f = quadratic_fixture["f"]
        phi = quadratic_fixture["u_star"]
        rep = solver.barrier_check(u, phi, f, quadratic_fixture["theta"])
        phi_inf = 0.75
        assert rep.passed(phi_inf)
        assert rep.lower_margin >= 0.0
        assert rep.upper_margin >= -1e-8 * (1 + phi_inf)

    def test_corrupted_run_detected(self, quadratic_fixture):
        u = quadratic_fixture["u"].copy()
        u.values += 10.0
        rep = solver.barrier_check(
            u, quadratic_fixture["u_star"], quadratic_fixture["f"],
            quadratic_fixture["theta"],
        )
        assert rep.upper_margin < 0.0

    def test_unit_twist_symmetric_envelopes(self, quadratic_fixture):
        # f == 1: the lower and upper envelopes differ only by |phi|_inf sign
        rep = solver.barrier_check(
            quadratic_fixture["u"],
            quadratic_fixture["u_star"],
            quadratic_fixture["f"],
            quadratic_fixture["theta"],
        )
        assert rep.domain_note.startswith("box adaptation")


class TestManufactured:
    def test_quadratic_calibrates_to_unit_twist(self):
        u_star, f, phi, theta = solver.manufactured_problem(
            "quadratic", 3, 9, 3 * math.atan(0.5), c=0.5
        )
        assert np.abs(f.values - 1.0).max() <= 1e-12

    def test_quartic_pointwise_residual(self):
        u_star, f, phi, theta = solver.manufactured_problem(
            "quartic", 3, 17, math.pi / 2
        )
        assert f.values.min() >= 0.5
        # analytic Hessian, so the calibration residual is the only error
        from slaglab.spectral import phase

        coords = u_star.coords()
        lam = np.sort(0.5 + 0.6 * coords**2, axis=-1)
        resid = np.abs(phase(lam, f.values) - theta)
        assert resid.max() <= 1e-12

    def test_radial_bump_continuity(self):
        u1, f1, _, _ = solver.manufactured_problem(
            "radial-bump", 3, 9, math.pi / 2, c=0.5, amp=1e-4
        )
        u0, f0, _, _ = solver.manufactured_problem(
            "quadratic", 3, 9, math.pi / 2, c=0.5
        )
        assert np.abs(f1.values - f0.values).max() <= 1e-3

    def test_nonconvex_rejected(self):
        with pytest.raises(ConstructionError):
            solver.manufactured_problem("quartic", 3, 9, math.pi / 2, a=-0.5)


class TestDeterminism:
    def test_bitwise_reproducible_newton(self):
        f = grids.GridFunction.constant(3, 9, 1.0)
        phi = quadratic_grid(3, 9, 0.5)
        boundary = grids.GridFunction(3, 9)
        bnd = ~boundary.interior_mask(1)
        boundary.values[bnd] = phi.values[bnd]
        u0 = grids.harmonic_extension(boundary)
        grids.set_deterministic_reductions(True)
        try:
            u1, r1 = solver.newton_solve(u0, f, 3 * math.atan(0.5))
            u2, r2 = solver.newton_solve(u0, f, 3 * math.atan(0.5))
        finally:
            grids.set_deterministic_reductions(False)
        assert np.array_equal(u1.values, u2.values)
        assert r1.final_residual == r2.final_residual
