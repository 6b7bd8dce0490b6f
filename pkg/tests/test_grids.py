"""Grid, finite-difference and persistence tests."""

import math

import numpy as np
import pytest

from slaglab import grids
from slaglab.errors import DomainError, TruncatedBallError


class TestGridFunction:
    def test_shape_validation(self):
        with pytest.raises(DomainError):
            grids.GridFunction(3, 8)  # even
        with pytest.raises(DomainError):
            grids.GridFunction(3, 7)  # too small
        with pytest.raises(DomainError):
            grids.GridFunction(4, 17)  # dimension

    def test_origin_is_a_node(self):
        g = grids.GridFunction(3, 17)
        assert np.allclose(g.coords()[g.center_index], 0.0)

    def test_spacing(self):
        assert grids.GridFunction(2, 17).h == pytest.approx(1.0 / 8.0)


class TestFiniteDifferences:
    def test_hessian_exact_on_quadratic(self):
        g = grids.GridFunction.from_callable(
            3, 17, lambda x: 0.5 * np.sum(x**2, axis=-1)
        )
        hess = grids.hessian_fd(g.values, g.h)
        inner = g.interior_mask(1)
        assert np.abs(hess[inner] - np.eye(3)).max() <= 1e-12

    def test_cross_term_exact(self):
        g = grids.GridFunction.from_callable(2, 17, lambda x: x[..., 0] * x[..., 1])
        hess = grids.hessian_fd(g.values, g.h)
        inner = g.interior_mask(1)
        assert np.abs(hess[inner] - np.array([[0.0, 1.0], [1.0, 0.0]])).max() <= 1e-12

    def test_second_order_convergence(self):
        errs = []
        for shape in (17, 33, 65):
            g = grids.GridFunction.from_callable(
                2, shape, lambda x: np.sin(x[..., 0]) * np.cos(x[..., 1])
            )
            hess = grids.hessian_fd(g.values, g.h)
            x = g.coords()
            exact = np.empty_like(hess)
            exact[..., 0, 0] = -np.sin(x[..., 0]) * np.cos(x[..., 1])
            exact[..., 1, 1] = exact[..., 0, 0]
            exact[..., 0, 1] = exact[..., 1, 0] = -np.cos(x[..., 0]) * np.sin(
                x[..., 1]
            )
            errs.append(np.abs((hess - exact)[g.interior_mask(1)]).max())
        slopes = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
        assert all(abs(s - 2.0) <= 0.2 for s in slopes)

    def test_third_derivatives_symmetric(self):
        g = grids.GridFunction.from_callable(
            3, 17, lambda x: np.sum(x**4, axis=-1) / 12.0 + x[..., 0] * x[..., 1]
        )
        third = grids.third_fd(grids.hessian_fd(g.values, g.h), g.h)
        inner = g.interior_mask(2)
        t = third[inner]
        assert np.abs(t - np.swapaxes(t, -1, -2)).max() <= 1e-10
        assert np.abs(t - np.swapaxes(t, -2, -3)).max() <= 1e-10


class TestHarmonicExtension:
    def test_linear_boundary_is_exact(self):
        g = grids.GridFunction.from_callable(
            2, 17, lambda x: 0.3 * x[..., 0] + 0.1 * x[..., 1] - 0.2
        )
        ext = grids.harmonic_extension(g)
        assert np.abs(ext.values - g.values).max() <= 1e-12

    def test_maximum_principle(self):
        rng = np.random.default_rng(0)
        g = grids.GridFunction(2, 17)
        bnd = ~g.interior_mask(1)
        g.values[bnd] = rng.standard_normal(int(bnd.sum()))
        ext = grids.harmonic_extension(g)
        assert ext.values.max() <= g.values[bnd].max() + 1e-12
        assert ext.values.min() >= g.values[bnd].min() - 1e-12


class TestQuadrature:
    def test_ball_volume(self):
        g = grids.GridFunction(3, 33)
        r = np.sqrt(np.sum(g.coords() ** 2, axis=-1))
        fr = grids.region_fractions(r, 0.8)
        vol = grids.region_integral(np.ones_like(r), np.ones_like(r), g.h, fr)
        exact = 4.0 / 3.0 * math.pi * 0.8**3
        assert abs(vol - exact) / exact <= 0.02

    def test_truncation_guard(self):
        mask = np.zeros((17, 17), dtype=bool)
        mask[0, 5] = True
        with pytest.raises(TruncatedBallError):
            grids.require_region_interior(mask)

    def test_deterministic_flag_reproducible(self):
        rng = np.random.default_rng(1)
        vals = rng.standard_normal((17, 17))
        w = rng.random((17, 17))
        grids.set_deterministic_reductions(True)
        try:
            a = grids.region_integral(vals, w, 0.125)
            b = grids.region_integral(vals, w, 0.125)
        finally:
            grids.set_deterministic_reductions(False)
        assert a == b
        c = grids.region_integral(vals, w, 0.125)
        assert abs(a - c) <= 1e-12 * abs(a)


class TestPersistence:
    def test_binary_roundtrip_bitwise(self, tmp_path):
        rng = np.random.default_rng(3)
        g = grids.GridFunction(3, 9, rng.standard_normal((9, 9, 9)))
        grids.save_binary(g, tmp_path / "u.slag")
        g2 = grids.load_binary(tmp_path / "u.slag")
        assert np.array_equal(g.values, g2.values)
        assert g2.h == g.h

    def test_binary_layout(self, tmp_path):
        g = grids.GridFunction(2, 9)
        grids.save_binary(g, tmp_path / "u.slag")
        raw = (tmp_path / "u.slag").read_bytes()
        assert raw[:4] == b"SLAG"
        assert int.from_bytes(raw[4:8], "little") == 1  # version
        assert int.from_bytes(raw[8:12], "little") == 2  # n
        assert int.from_bytes(raw[12:16], "little") == 9  # shape[0]

    def test_csv_roundtrip(self, tmp_path):
        rng = np.random.default_rng(5)
        g = grids.GridFunction(2, 11, rng.standard_normal((11, 11)))
        grids.save_csv(g, tmp_path / "u.csv")
        g2 = grids.load_csv(tmp_path / "u.csv")
        assert np.abs(g.values - g2.values).max() <= 1e-15

    def test_csv_header_and_order(self, tmp_path):
        g = grids.GridFunction.from_callable(
            2, 9, lambda x: x[..., 0] + 2.0 * x[..., 1]
        )
        grids.save_csv(g, tmp_path / "u.csv")
        lines = (tmp_path / "u.csv").read_text().splitlines()
        assert lines[0] == "x1,x2,u"
        first = [float(v) for v in lines[1].split(",")]
        assert first == [-1.0, -1.0, -3.0]  # row-major by node index

    def test_bad_magic(self, tmp_path):
        (tmp_path / "u.slag").write_bytes(b"NOPE" + b"\0" * 64)
        with pytest.raises(DomainError):
            grids.load_binary(tmp_path / "u.slag")
