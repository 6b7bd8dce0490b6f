"""Uniform box grids on [-1, 1]^n, finite differences and persistence.

Grids are node-centred with an odd point count per axis so the origin is a
node; spacing h = 2/(N-1).  Second derivatives use the standard central
stencils (exact on quadratics): (u_+ - 2u + u_-)/h^2 on the diagonal and the
4-point cross stencil on mixed entries.  Third derivatives are central
differences of the Hessian field, costing one extra node of interior margin.

Two on-disk formats are supported: CSV with columns x1..xn,u (row-major by
node index) and a little-endian binary layout: magic "SLAG", version u32,
n u32, shape u32 per axis, h f64, then the values f64 row-major.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .errors import DomainError, TruncatedBallError

BINARY_MAGIC = b"SLAG"
BINARY_VERSION = 1


@dataclass
class GridFunction:
    """Scalar field on a uniform box grid with boundary mask and spacing."""

    n: int
    shape: int
    values: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.n not in (2, 3):
            raise DomainError(f"grid dimension must be 2 or 3, got {self.n}")
        if self.shape < 9 or self.shape % 2 == 0:
            raise DomainError(
                f"nodes per axis must be odd and >= 9, got {self.shape}"
            )
        if self.values is None:
            self.values = np.zeros((self.shape,) * self.n)
        else:
            self.values = np.asarray(self.values, dtype=float)
            if self.values.shape != (self.shape,) * self.n:
                raise DomainError(
                    f"values shape {self.values.shape} does not match grid"
                )

    @property
    def h(self) -> float:
        return 2.0 / (self.shape - 1)

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(-1.0, 1.0, self.shape)

    def coords(self) -> np.ndarray:
        """Node coordinates, shape (*grid, n)."""
        grids = np.meshgrid(*([self.axis] * self.n), indexing="ij")
        return np.stack(grids, axis=-1)

    def interior_mask(self, margin: int = 1) -> np.ndarray:
        mask = np.zeros((self.shape,) * self.n, dtype=bool)
        sl = (slice(margin, -margin),) * self.n
        mask[sl] = True
        return mask

    @property
    def boundary_mask(self) -> np.ndarray:
        return ~self.interior_mask(1)

    @property
    def center_index(self) -> tuple:
        return (self.shape // 2,) * self.n

    def copy(self) -> "GridFunction":
        return GridFunction(self.n, self.shape, self.values.copy())

    @classmethod
    def from_callable(cls, n: int, shape: int, fn) -> "GridFunction":
        """Sample fn(x) with x of shape (*grid, n) or per-point vectorised."""
        gf = cls(n, shape)
        gf.values = np.asarray(fn(gf.coords()), dtype=float)
        return gf

    @classmethod
    def constant(cls, n: int, shape: int, value: float) -> "GridFunction":
        gf = cls(n, shape)
        gf.values[...] = value
        return gf


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------

def _shift(values: np.ndarray, axis: int, step: int) -> np.ndarray:
    """Shift with edge clamping: out[i] = values[i + step] (clamped)."""
    idx = np.clip(np.arange(values.shape[axis]) + step, 0, values.shape[axis] - 1)
    return np.take(values, idx, axis=axis)


def grad_fd(values: np.ndarray, h: float) -> np.ndarray:
    """Central-difference gradient, shape (*grid, n); valid one node in."""
    n = values.ndim
    out = np.empty(values.shape + (n,))
    for k in range(n):
        out[..., k] = (_shift(values, k, 1) - _shift(values, k, -1)) / (2.0 * h)
    return out


def hessian_fd(values: np.ndarray, h: float) -> np.ndarray:
    """Central-difference Hessian, shape (*grid, n, n); valid one node in.

    Exact on quadratics: diagonal (u_+ - 2u + u_-)/h^2, mixed entries by the
    4-point cross stencil (u_++ + u_-- - u_+- - u_-+)/(4 h^2).
    """
    n = values.ndim
    out = np.empty(values.shape + (n, n))
    for a in range(n):
        out[..., a, a] = (
            _shift(values, a, 1) - 2.0 * values + _shift(values, a, -1)
        ) / h**2
        for b in range(a + 1, n):
            pp = _shift(_shift(values, a, 1), b, 1)
            mm = _shift(_shift(values, a, -1), b, -1)
            pm = _shift(_shift(values, a, 1), b, -1)
            mp = _shift(_shift(values, a, -1), b, 1)
            out[..., a, b] = out[..., b, a] = (pp + mm - pm - mp) / (4.0 * h**2)
    return out


def third_fd(hessian: np.ndarray, h: float) -> np.ndarray:
    """Central differences of a Hessian field: u_{abk}, shape (*grid, n, n, n).

    Index order [..., a, b, k] = d_k u_{ab}; fully symmetric up to FD error.
    Valid two nodes in when the Hessian itself came from hessian_fd.
    """
    n = hessian.ndim - 2
    out = np.empty(hessian.shape + (n,))
    for k in range(n):
        out[..., k] = (_shift(hessian, k, 1) - _shift(hessian, k, -1)) / (2.0 * h)
    return out


def laplacian_matrix(shape: int, n: int):
    """Sparse FD Laplacian over interior nodes (Dirichlet), plus the affine
    contribution of boundary values: returns (matrix, rhs_of(boundary))."""
    from scipy import sparse

    h = 2.0 / (shape - 1)
    inner = shape - 2
    m = inner**n
    diag = np.full(m, 2.0 * n / h**2)
    mat = sparse.lil_matrix((m, m))
    mat.setdiag(diag)
    strides = [inner ** (n - 1 - k) for k in range(n)]

    def boundary_rhs(values: np.ndarray) -> np.ndarray:
        rhs = np.zeros(m)
        idx = np.arange(m)
        coords = np.stack(
            [(idx // strides[k]) % inner + 1 for k in range(n)], axis=1
        )
        for k in range(n):
            for step in (-1, 1):
                nb = coords.copy()
                nb[:, k] += step
                on_bd = (nb[:, k] == 0) | (nb[:, k] == shape - 1)
                if np.any(on_bd):
                    vals = values[tuple(nb[on_bd].T)]
                    rhs[idx[on_bd]] += vals / h**2
        return rhs

    idx = np.arange(m)
    coords = np.stack([(idx // strides[k]) % inner + 1 for k in range(n)], axis=1)
    for k in range(n):
        for step in (-1, 1):
            nb_inner = coords[:, k] + step
            ok = (nb_inner >= 1) & (nb_inner <= shape - 2)
            rows = idx[ok]
            cols = rows + step * strides[k]
            mat[rows, cols] = -1.0 / h**2
    return mat.tocsr(), boundary_rhs


def harmonic_extension(boundary: GridFunction) -> GridFunction:
    """Solve the discrete Laplace equation with the given boundary trace."""
    from scipy.sparse.linalg import spsolve

    mat, boundary_rhs = laplacian_matrix(boundary.shape, boundary.n)
    rhs = boundary_rhs(boundary.values)
    inner = boundary.shape - 2
    sol = spsolve(mat, rhs).reshape((inner,) * boundary.n)
    out = boundary.copy()
    out.values[(slice(1, -1),) * boundary.n] = sol
    return out


# ---------------------------------------------------------------------------
# quadrature over sublevel regions
# ---------------------------------------------------------------------------

def region_fractions(indicator: np.ndarray, level: float) -> np.ndarray:
    """Per-node cell fraction of {indicator <= level} by 2^n subpoint
    sampling at node +- h/4 per axis (trilinear interpolation of the
    indicator field)."""
    n = indicator.ndim
    count = np.zeros(indicator.shape)
    for signs in product((-1, 1), repeat=n):
        sub = indicator
        for axis, s in enumerate(signs):
            sub = 0.75 * sub + 0.25 * _shift(sub, axis, s)
        count += (sub <= level)
    return count / 2**n


_DETERMINISTIC_REDUCTIONS = False


def set_deterministic_reductions(enabled: bool):
    """Route integral reductions through compensated fixed-order summation
    so identical inputs reproduce reports bitwise."""
    global _DETERMINISTIC_REDUCTIONS
    _DETERMINISTIC_REDUCTIONS = bool(enabled)


def region_integral(
    values: np.ndarray,
    weight: np.ndarray,
    h: float,
    fractions: np.ndarray | None = None,
) -> float:
    """Midpoint-rule integral sum(values * weight) * h^n with optional
    boundary-cell clipping fractions."""
    import math as _math

    n = values.ndim
    integrand = values * weight
    if fractions is not None:
        integrand = integrand * fractions
    if _DETERMINISTIC_REDUCTIONS:
        return _math.fsum(integrand.ravel().tolist()) * h**n
    return float(np.sum(integrand)) * h**n


def require_region_interior(region_mask: np.ndarray, margin: int = 1):
    """Raise TruncatedBallError when a region mask touches the grid skin."""
    n = region_mask.ndim
    shape = region_mask.shape[0]
    inner = np.zeros_like(region_mask)
    sl = (slice(margin, shape - margin),) * n
    inner[sl] = True
    if np.any(region_mask & ~inner):
        raise TruncatedBallError(
            "region reaches within the grid margin; enlarge the domain or "
            "shrink the radius"
        )


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_csv(gf: GridFunction, path):
    xs = gf.coords().reshape(-1, gf.n)
    vals = gf.values.reshape(-1)
    header = ",".join(f"x{k+1}" for k in range(gf.n)) + ",u"
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row, v in zip(xs, vals):
            fh.write(",".join(f"{c:.17g}" for c in row) + f",{v:.17g}\n")


def load_csv(path) -> GridFunction:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        n = len(header) - 1
        vals = [float(line.rsplit(",", 1)[1]) for line in fh if line.strip()]
    shape = round(len(vals) ** (1.0 / n))
    if shape**n != len(vals):
        raise DomainError(f"CSV row count {len(vals)} is not a grid of dim {n}")
    return GridFunction(n, shape, np.array(vals).reshape((shape,) * n))


def save_binary(gf: GridFunction, path):
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<I", BINARY_VERSION))
        fh.write(struct.pack("<I", gf.n))
        fh.write(struct.pack(f"<{gf.n}I", *([gf.shape] * gf.n)))
        fh.write(struct.pack("<d", gf.h))
        fh.write(gf.values.astype("<f8").tobytes(order="C"))


def load_binary(path) -> GridFunction:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != BINARY_MAGIC:
            raise DomainError(f"bad magic {magic!r}, expected {BINARY_MAGIC!r}")
        version, n = struct.unpack("<II", fh.read(8))
        if version != BINARY_VERSION:
            raise DomainError(f"unsupported binary version {version}")
        shape = struct.unpack(f"<{n}I", fh.read(4 * n))
        if len(set(shape)) != 1:
            raise DomainError("anisotropic grids are not supported")
        (h,) = struct.unpack("<d", fh.read(8))
        count = shape[0] ** n
        values = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape)
        gf = GridFunction(n, shape[0], values.copy())
        if abs(gf.h - h) > 1e-12:
            raise DomainError(f"stored spacing {h} does not match shape {shape}")
        return gf
