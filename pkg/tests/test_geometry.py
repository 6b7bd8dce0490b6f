"""Graph geometry tests: closed forms, frame independence, integral checks."""

import math

import numpy as np
import pytest

from slaglab import geometry as geo
from slaglab import grids
from slaglab import spectral as sp
from slaglab.errors import (
    InsufficientDataError,
    PreconditionError,
    TruncatedBallError,
)

RNG = np.random.default_rng(515)
OMEGA3 = 4.0 * math.pi / 3.0


def random_point(n, with_third=True, f=None, rng=RNG):
    hess = sp.sym_matrix(rng.standard_normal((n, n)))
    third = None
    if with_third:
        t = rng.standard_normal((n, n, n))
        third = np.zeros_like(t)
        for perm in ((0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)):
            third += t.transpose(perm)
        third /= 6.0
    return geo.GraphPointData(
        x=rng.standard_normal(n),
        f=f if f is not None else float(np.exp(rng.uniform(-0.5, 0.5))),
        df=rng.standard_normal(n),
        hess=hess,
        third=third,
    )


class TestChristoffel:
    def test_constant_twist_vanishes(self):
        assert np.abs(geo.christoffel(1.0, np.zeros(3))).max() == 0.0

    def test_direct_substitution(self):
        g = geo.christoffel(1.0, [1.0, 0.0, 0.0])
        assert g[0, 0, 0] == 1.0
        assert g[0, 1, 1] == -1.0
        assert g[1, 0, 1] == 1.0
        assert g[0, 2, 2] == -1.0
        assert g[2, 0, 2] == 1.0

    def test_lower_index_symmetry(self):
        for _ in range(50):
            f = float(np.exp(RNG.uniform(-1, 1)))
            df = RNG.standard_normal(3)
            g = geo.christoffel(f, df)
            assert np.abs(g - np.transpose(g, (0, 2, 1))).max() <= 1e-15


class TestInducedMetric:
    def test_flat_graph(self):
        p = geo.GraphPointData(np.zeros(3), 2.0, np.zeros(3), np.zeros((3, 3)))
        md = geo.induced_metric(p)
        assert np.allclose(md.g, 4.0 * np.eye(3))
        assert md.vol == pytest.approx(8.0)
        assert md.trace_inv == pytest.approx(0.75)

    def test_unit_hessian(self):
        p = geo.GraphPointData(np.zeros(3), 1.0, np.zeros(3), np.eye(3))
        md = geo.induced_metric(p)
        assert md.vol == pytest.approx(2.0 * math.sqrt(2.0))
        assert md.trace_inv == pytest.approx(1.5)

    def test_frame_free_oracle(self):
        # eigenframe route vs direct g = f^2 I + (D^2u)^2 through numpy
        for _ in range(1000):
            n = int(RNG.integers(2, 4))
            p = random_point(n, with_third=False)
            md = geo.induced_metric(p)
            g_direct = p.f**2 * np.eye(n) + p.hess @ p.hess
            assert np.abs(md.g - g_direct).max() <= 1e-10 * (1 + np.abs(g_direct).max())
            assert md.vol == pytest.approx(
                math.sqrt(np.linalg.det(g_direct)), rel=1e-10
            )
            assert md.trace_inv == pytest.approx(
                np.trace(np.linalg.inv(g_direct)), rel=1e-10
            )

    def test_metric_bounds(self):
        # vol >= f^n and trace_inv <= n/f^2 since g >= f^2 I
        for _ in range(200):
            n = int(RNG.integers(2, 4))
            p = random_point(n, with_third=False)
            md = geo.induced_metric(p)
            assert md.vol >= p.f**n * (1 - 1e-12)
            assert md.trace_inv <= n / p.f**2 * (1 + 1e-12)


class TestMeanCurvature:
    def test_requires_thirds(self):
        p = random_point(3, with_third=False)
        with pytest.raises(InsufficientDataError):
            geo.mean_curvature(p)

    def test_constant_twist_substituted_vanishes(self):
        for _ in range(20):
            p = random_point(3, f=1.0)
            p.df[:] = 0.0
            res = geo.mean_curvature(p)
            assert res.norm_substituted <= 1e-10

    def test_quadratic_hand_formula(self):
        # third = 0 leaves only the Christoffel-sourced part
        f = 1.3
        df = np.array([0.2, -0.1, 0.3])
        lam = np.array([0.8, 0.5, -0.2])
        p = geo.GraphPointData(
            np.zeros(3), f, df, np.diag(lam), third=np.zeros((3, 3, 3))
        )
        res = geo.mean_curvature(p)
        ge = f**2 + lam**2
        trace_inv = np.sum(1.0 / ge)
        c = (lam / f) * df * (trace_inv - 2.0 / ge) / ge
        hand = f * math.sqrt(float(np.sum(c**2 * ge)))
        assert res.norm == pytest.approx(hand, rel=1e-12)

    def test_solver_margin(self, bump_run):
        graph = geo.GraphGrid(bump_run["u"], bump_run["f"])
        h_raw, h_sub = graph.mean_curvature_norms()
        mask = graph.margin(2)
        n = 3
        df_norm = np.linalg.norm(graph.df, axis=-1)
        margin = 4.0 * n * df_norm * graph.trace_inv - h_raw
        assert margin[mask].min() >= -1e-10  # both sides vanish where Df ~ 0
        # raw and substituted agree to FD error on solution data
        assert np.abs(h_raw - h_sub)[mask].max() <= 5e-2


class TestZDivergence:
    def test_constant_twist(self):
        p = geo.GraphPointData(
            np.array([0.3, 0.2, 0.1]), 1.0, np.zeros(3), np.diag([1.0, 2.0, 3.0])
        )
        assert geo.z_divergence(p, np.zeros(3)) == pytest.approx(3.0, abs=1e-12)

    def test_vanishing_displacement(self):
        p = random_point(3, with_third=False)
        assert geo.z_divergence(p, p.x) == pytest.approx(p.n, abs=1e-12)

    def test_displacement_bound(self):
        # |div - n| <= |f Df| r T with r >= f |x - x0| (checked for f >= 1)
        for _ in range(300):
            p = random_point(3, with_third=False, f=float(1.0 + RNG.random()))
            x0 = p.x + RNG.standard_normal(3)
            div = geo.z_divergence(p, x0)
            lam, _ = sp.jacobi_eigh(p.hess)
            trace_inv = float(np.sum(1.0 / (p.f**2 + lam**2)))
            r = p.f * np.linalg.norm(p.x - x0)  # lower bound for |Z|
            bound = p.f * np.linalg.norm(p.df) * r * trace_inv
            assert abs(div - p.n) <= bound * (1 + 1e-12) + 1e-12


class TestTyIdentity:
    def test_hand_values(self):
        s = sp.Spectrum(np.array([1.0, 1.0, 0.0]), 1.0)
        lhs, rhs, gap = geo.ty_identity_check(s, sp.HALF_PI)
        assert lhs == pytest.approx(4.0, abs=1e-12)
        assert rhs == pytest.approx(4.0, abs=1e-12)
        s2 = sp.Spectrum(np.array([math.sqrt(3.0)] * 3), 1.0)
        lhs, rhs, _ = geo.ty_identity_check(s2, sp.PI)
        assert lhs == pytest.approx(6.0, abs=1e-12)
        assert rhs == pytest.approx(6.0, abs=1e-12)

    def test_off_level_set_rejected(self):
        s = sp.Spectrum(np.array([2.0, 1.0, 0.0]), 1.0)
        with pytest.raises(PreconditionError):
            geo.ty_identity_check(s, sp.HALF_PI)

    def test_sampled_sweep(self):
        sampler = sp.LevelSetSampler(3, sp.HALF_PI, f_range=(0.5, 4.0))
        lam, f = sampler.sample(2000, np.random.default_rng(8))
        worst = max(
            geo.ty_identity_check(sp.Spectrum(lam[i], float(f[i])), sp.HALF_PI)[2]
            for i in range(2000)
        )
        assert worst <= 1e-9

    def test_unweighted_reduction(self):
        # at f == 1 both sides equal the classical unweighted identity
        lam = np.array([2.0, 1.0, 0.5])
        s = sp.Spectrum(lam, 1.0)
        theta = s.phase()
        lhs, rhs, gap = geo.ty_identity_check(s, theta)
        v = float(np.prod(np.sqrt(1 + lam**2)))
        t = float(np.sum(1 / (1 + lam**2)))
        assert lhs == pytest.approx(t * v, rel=1e-14)
        assert gap <= 1e-12


class TestBeltrami:
    def test_euclidean_laplacian(self):
        graph = geo.GraphGrid(grids.GridFunction(3, 17), 1.0)
        field = grids.GridFunction.from_callable(
            3, 17, lambda x: 0.5 * np.sum(x**2, axis=-1)
        )
        out = geo.beltrami_apply(field, graph)
        m = graph.margin(2)
        assert np.abs(out[m] - 3.0).max() <= 1e-11

    def test_quadratic_graph(self):
        c = 0.7
        u = grids.GridFunction.from_callable(
            3, 17, lambda x: 0.5 * c * np.sum(x**2, axis=-1)
        )
        graph = geo.GraphGrid(u, 1.0)
        field = grids.GridFunction.from_callable(
            3, 17, lambda x: 0.5 * np.sum(x**2, axis=-1)
        )
        out = geo.beltrami_apply(field, graph)
        m = graph.margin(2)
        assert np.abs(out[m] - 3.0 / (1.0 + c**2)).max() <= 1e-11

    def test_annihilates_constants(self):
        u = grids.GridFunction.from_callable(
            3, 17, lambda x: 0.3 * np.sum(x**2, axis=-1) + 0.05 * np.sum(x**4, axis=-1)
        )
        f = grids.GridFunction.from_callable(
            3, 17, lambda x: 1.0 + 0.3 * np.exp(-2 * np.sum(x**2, axis=-1))
        )
        graph = geo.GraphGrid(u, f)
        out = geo.beltrami_apply(grids.GridFunction.constant(3, 17, 4.0), graph)
        assert np.abs(out[graph.margin(2)]).max() <= 1e-12

    def test_linear_field_matches_drift(self, bump_run):
        graph = geo.GraphGrid(bump_run["u"], bump_run["f"])
        a = np.array([0.4, -0.3, 0.2])
        field = grids.GridFunction.from_callable(3, 17, lambda x: x @ a)
        out = geo.beltrami_apply(field, graph)
        # drift-only evaluation: second-order part vanishes on linear fields
        ginv = 1.0 / graph.g_eigs
        f = graph.f.values[..., None]
        df_rot = np.einsum("...ij,...i->...j", graph.frames, graph.df)
        t_diag = graph.rotated_third_diag()
        drift = f * df_rot * (graph.trace_inv[..., None] - 2.0 * ginv)
        drift -= graph.lam * np.einsum("...j,...ji->...i", ginv, t_diag)
        a_rot = np.einsum("...ij,...i->...j", graph.frames, np.broadcast_to(a, graph.lam.shape))
        expected = np.sum(drift * ginv * a_rot, axis=-1)
        m = graph.margin(2)
        assert np.abs(out[m] - expected[m]).max() <= 1e-8


class TestMonotonicity:
    def test_flat_profile_is_ball_volume(self):
        graph = geo.GraphGrid(grids.GridFunction(3, 33), 1.0)
        prof = geo.monotonicity_profile(graph, graph.u.center_index, [0.3, 0.5, 0.7])
        for rho, ratio in prof:
            assert ratio == pytest.approx(OMEGA3, rel=0.06)

    def test_quadratic_profile_closed_form(self):
        c = 0.6
        u = grids.GridFunction.from_callable(
            3, 33, lambda x: 0.5 * c * np.sum(x**2, axis=-1)
        )
        graph = geo.GraphGrid(u, 1.0)
        prof = geo.monotonicity_profile(graph, graph.u.center_index, [0.4, 0.6])
        # metric quadrature oracle: S_rho is the ball |x| <= rho/sqrt(1+c^2)
        # with dv = (1+c^2)^(n/2) dx, so the ratio is exactly omega_n
        for rho, ratio in prof:
            assert ratio == pytest.approx(OMEGA3, rel=0.06)

    def test_nondecreasing_up_to_quadrature(self, quartic_runs):
        run = quartic_runs[33]
        graph = geo.GraphGrid(run["u"], run["f"])
        prof = geo.monotonicity_profile(
            graph, graph.u.center_index, [0.25, 0.4, 0.55, 0.7]
        )
        h = graph.h
        ratios = [v for _, v in prof]
        for a, b in zip(ratios, ratios[1:]):
            assert b >= a - 3.0 * h

    def test_small_radius_floor(self):
        graph = geo.GraphGrid(grids.GridFunction(3, 33), 1.0)
        h = graph.h
        rho = 4 * h
        (_, ratio), = geo.monotonicity_profile(graph, graph.u.center_index, [rho])
        f_max = 1.0
        assert ratio >= f_max ** (-3) * OMEGA3 * (1.0 - 5.0 * h)

    def test_truncated_ball(self):
        graph = geo.GraphGrid(grids.GridFunction(3, 17), 1.0)
        with pytest.raises(TruncatedBallError):
            geo.monotonicity_profile(graph, graph.u.center_index, [1.5])


class TestSobolev:
    def test_zero_function(self):
        graph = geo.GraphGrid(grids.GridFunction(3, 17), 1.0)
        assert geo.sobolev_check(grids.GridFunction(3, 17), graph) == (0.0, 0.0, 0.0)

    def test_flat_bump_ratio_bounded(self):
        graph = geo.GraphGrid(grids.GridFunction(3, 33), 1.0)
        phi = grids.GridFunction.from_callable(
            3, 33, lambda x: np.maximum(0.0, 1.0 - np.sum(x**2, axis=-1) / 0.49) ** 2
        )
        lhs, rhs, ratio = geo.sobolev_check(phi, graph)
        assert lhs > 0 and rhs > 0
        # Euclidean isoperimetric-type constant times a wide safety factor
        iso = OMEGA3 ** (-1.0 / 3.0) / 3.0
        assert ratio <= 10.0 * iso

    def test_scaling_of_linear_parts(self):
        # on a flat graph H = 0 and the support is scale invariant, so both
        # sides are 1-homogeneous in phi and the ratio is stable
        graph = geo.GraphGrid(grids.GridFunction(3, 33), 1.0)
        phi1 = grids.GridFunction.from_callable(
            3, 33, lambda x: 100.0 * np.maximum(0.0, 1.0 - np.sum(x**2, axis=-1) / 0.49) ** 2
        )
        phi2 = grids.GridFunction(3, 33, 2.0 * phi1.values)
        l1, r1, ratio1 = geo.sobolev_check(phi1, graph)
        l2, r2, ratio2 = geo.sobolev_check(phi2, graph)
        assert l2 == pytest.approx(2.0 * l1, rel=1e-10)
        assert r2 == pytest.approx(2.0 * r1, rel=1e-10)
        assert ratio2 == pytest.approx(ratio1, rel=1e-10)

    def test_f_below_one_rejected(self):
        graph = geo.GraphGrid(grids.GridFunction(3, 17), 0.9)
        phi = grids.GridFunction.from_callable(
            3, 17, lambda x: np.maximum(0.0, 0.25 - np.sum(x**2, axis=-1))
        )
        with pytest.raises(PreconditionError):
            geo.sobolev_check(phi, graph)

    def test_negative_phi_rejected(self):
        graph = geo.GraphGrid(grids.GridFunction(3, 17), 1.0)
        phi = grids.GridFunction.constant(3, 17, -1.0)
        with pytest.raises(PreconditionError):
            geo.sobolev_check(phi, graph)


class TestMeanValue:
    def test_unit_b_flat(self):
        graph = geo.GraphGrid(grids.GridFunction(3, 33), 1.0)
        b = grids.GridFunction.constant(3, 33, 1.0)
        b0, scaled, ratio = geo.meanvalue_check(b, graph, graph.u.center_index, 0.5)
        assert b0 == 1.0
        assert ratio == pytest.approx(1.0 / OMEGA3, rel=0.05)

    def test_center_at_max_is_largest(self):
        # flat graph: every center sees the same region volume, so the
        # ratio ordering follows b(center) exactly and the max-center wins
        graph = geo.GraphGrid(grids.GridFunction(3, 33), 1.0)
        b = grids.GridFunction.from_callable(
            3,
            33,
            lambda x: 1.0 + np.exp(-8.0 * np.sum((x - 0.125) ** 2, axis=-1)),
        )
        inner = graph.u.interior_mask(10)
        masked = np.where(inner, b.values, -np.inf)
        peak = np.unravel_index(int(np.argmax(masked)), b.values.shape)
        rho = 0.15
        _, _, ratio_peak = geo.meanvalue_check(b, graph, peak, rho)
        rng = np.random.default_rng(4)
        idxs = np.argwhere(inner)
        for k in rng.choice(len(idxs), size=12, replace=False):
            _, _, r = geo.meanvalue_check(b, graph, tuple(idxs[k]), rho)
            assert r <= ratio_peak * (1.0 + 1e-6)

    def test_b_below_one_rejected(self):
        graph = geo.GraphGrid(grids.GridFunction(3, 17), 1.0)
        b = grids.GridFunction.constant(3, 17, 0.5)
        with pytest.raises(PreconditionError):
            geo.meanvalue_check(b, graph, graph.u.center_index, 0.4)


class TestSigmaDivergence:
    def test_k1_exact(self):
        rep = geo.divergence_sigma_k(
            lambda x: 0.3 * np.sum(x**2, axis=-1) + 0.1 * x[..., 0] * x[..., 1],
            lambda x: np.maximum(0.0, 1.0 - np.sum(x**2, axis=-1) / 0.49) ** 2,
            1,
            3,
            shapes=(9, 17),
        )
        assert max(rep["residuals"]) <= 1e-12

    def test_k2_refinement_slope(self):
        rep = geo.divergence_sigma_k(
            lambda x: np.sum(x**4, axis=-1) / 12.0,
            lambda x: np.maximum(0.0, 1.0 - np.sum(x**2, axis=-1) / 0.49) ** 3,
            2,
            3,
            shapes=(9, 17, 33),
        )
        assert min(rep["slopes"]) >= 1.8

    def test_sigma_partials_nonneg_on_level_sets(self):
        sampler = sp.LevelSetSampler(3, sp.HALF_PI)
        lam, _ = sampler.sample(1000, np.random.default_rng(10))
        assert geo.sigma_partials_nonneg(lam) >= -1e-12


class TestConstantTwistReductions:
    def test_all_reductions(self):
        # f == 1: Christoffel symbols vanish, substituted H vanishes,
        # div Z = n, and the trace identity reduces to the unweighted one
        assert np.abs(geo.christoffel(1.0, np.zeros(3))).max() == 0.0
        p = random_point(3, f=1.0)
        p.df[:] = 0.0
        assert geo.mean_curvature(p).norm_substituted <= 1e-12
        assert geo.z_divergence(p, np.zeros(3)) == pytest.approx(3.0, abs=1e-12)

    def test_scale_equivariance(self, quartic_runs):
        run = quartic_runs[17]
        graph = geo.GraphGrid(run["u"], run["f"])
        s = 1.7
        scaled = graph.rescaled(s)
        # lam/f, hence the phase, is scale invariant
        ph1 = np.sum(np.arctan(graph.lam / graph.f.values[..., None]), axis=-1)
        ph2 = np.sum(np.arctan(scaled.lam / scaled.f.values[..., None]), axis=-1)
        m = graph.margin(1)
        assert np.abs(ph1 - ph2)[m].max() <= 1e-10
