"""Geometry of the gradient graph (x, Du) in the twisted ambient metric
f(x)^2 dx^2 + dy^2, and the integral checks that live on it.

With D^2u diagonalised at a point (eigenvalues lam_i, frame Q), the induced
metric is g_ii = f^2 + lam_i^2, the volume weight V = prod sqrt(f^2+lam_i^2)
and the inverse-metric trace T = sum 1/(f^2+lam_i^2).  The ambient
Christoffel symbols are (f_i d_kj + f_j d_ik - f_k d_ij)/f, vanishing as
soon as any index leaves the x-block, which is what makes the mean
curvature, the divergence of the position field Z and the Laplace-Beltrami
drift all explicitly computable.  Everything here evaluates those closed
forms and measures the associated integral inequalities (Sobolev, mean
value, monotonicity) by midpoint quadrature with dv_g = V dx.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DomainError,
    InsufficientDataError,
    PreconditionError,
)
from .grids import (
    GridFunction,
    grad_fd,
    hessian_fd,
    region_fractions,
    region_integral,
    require_region_interior,
    third_fd,
)
from .spectral import Spectrum, jacobi_eigh, phase, sigma_coeffs, sigma_k

MEAN_CURVATURE_CONSTANT = lambda n: 4.0 * n  # noqa: E731  (bound constant C(n))


# ---------------------------------------------------------------------------
# pointwise data
# ---------------------------------------------------------------------------

@dataclass
class GraphPointData:
    """One point's worth of graph data: position, twist, Hessian, and
    optionally the symmetric third-derivative tensor u_{abk}."""

    x: np.ndarray
    f: float
    df: np.ndarray
    hess: np.ndarray
    third: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.df = np.asarray(self.df, dtype=float)
        self.hess = np.asarray(self.hess, dtype=float)
        if self.third is not None:
            self.third = np.asarray(self.third, dtype=float)
        if not self.f > 0:
            raise DomainError(f"twist value must be positive, got {self.f}")

    @property
    def n(self) -> int:
        return self.x.size


@dataclass
class MetricData:
    g: np.ndarray
    g_inv: np.ndarray
    vol: float
    trace_inv: float


def christoffel(f: float, df) -> np.ndarray:
    """Ambient Christoffel symbols, shape (n, n, n) indexed [k, i, j]."""
    if not f > 0:
        raise DomainError(f"twist value must be positive, got {f}")
    df = np.asarray(df, dtype=float)
    n = df.size
    eye = np.eye(n)
    gamma = (
        df[None, :, None] * eye[:, None, :]     # f_i d_kj
        + df[None, None, :] * eye[:, :, None]   # f_j d_ik
        - df[:, None, None] * eye[None, :, :]   # f_k d_ij
    ) / f
    return gamma


def induced_metric(p: GraphPointData) -> MetricData:
    """g = f^2 I + (D^2u)^2 together with its inverse, sqrt(det) and the
    inverse trace, assembled from the Hessian eigendecomposition."""
    lam, frame = jacobi_eigh(p.hess)
    g_eigs = p.f**2 + lam**2
    g = frame @ np.diag(g_eigs) @ frame.T
    g_inv = frame @ np.diag(1.0 / g_eigs) @ frame.T
    vol = float(np.prod(np.sqrt(g_eigs)))
    trace_inv = float(np.sum(1.0 / g_eigs))
    return MetricData(g=g, g_inv=g_inv, vol=vol, trace_inv=trace_inv)


@dataclass
class MeanCurvatureResult:
    vector: np.ndarray          # ambient 2n components (x-block, y-block)
    norm: float                 # |H| in the weighted ambient metric
    vector_substituted: np.ndarray
    norm_substituted: float
    bound_margin: float         # C(n) |Df| T_{g^-1} - |H|


def mean_curvature(p: GraphPointData) -> MeanCurvatureResult:
    """Mean curvature vector of the graph at one point.

    The raw formula needs the third derivatives; the substituted variant
    eliminates them through the once-differentiated equation (valid when the
    point comes from a solution), which also makes the C(n)=4n bound margin
    against |Df| T_{g^-1} meaningful.
    """
    if p.third is None:
        raise InsufficientDataError("mean curvature needs third derivatives")
    n = p.n
    lam, frame = jacobi_eigh(p.hess)
    g_eigs = p.f**2 + lam**2
    ginv = 1.0 / g_eigs
    trace_inv = float(np.sum(ginv))
    df_rot = frame.T @ p.df
    third_rot_diag = np.einsum("ai,bi,cj,abc->ij", frame, frame, frame, p.third)
    # c_j = g^jj [ (lam_j/f) f_j (T - 2 g^jj) + sum_i g^ii u_iij ]
    s_weighted = np.einsum("i,ij->j", ginv, third_rot_diag)
    lam_sum = float(np.sum(lam * ginv))
    c_raw = ginv * ((lam / p.f) * df_rot * (trace_inv - 2.0 * ginv) + s_weighted)
    c_sub = ginv * (
        (lam / p.f) * df_rot * (trace_inv - 2.0 * ginv)
        + (df_rot / p.f) * lam_sum
    )

    def assemble(c):
        x_part = frame @ (-c * lam)
        y_part = frame @ (c * p.f**2)
        vec = np.concatenate([x_part, y_part])
        norm = float(np.sqrt(p.f**2 * x_part @ x_part + y_part @ y_part))
        return vec, norm

    vec_raw, norm_raw = assemble(c_raw)
    vec_sub, norm_sub = assemble(c_sub)
    margin = MEAN_CURVATURE_CONSTANT(n) * float(
        np.linalg.norm(p.df)
    ) * trace_inv - norm_raw
    return MeanCurvatureResult(
        vector=vec_raw,
        norm=norm_raw,
        vector_substituted=vec_sub,
        norm_substituted=norm_sub,
        bound_margin=margin,
    )


def z_divergence(p: GraphPointData, x0) -> float:
    """Divergence on the graph of the position field Z anchored at x0.

    In the Hessian eigenframe the ambient Christoffel contraction collapses
    to Gamma^i_il = f_l / f independently of i, so
    div Z = n + f <Df, x - x0> T_{g^-1}; equal to n whenever Df = 0 or the
    displacement vanishes.
    """
    x0 = np.asarray(x0, dtype=float)
    lam, _ = jacobi_eigh(p.hess)
    trace_inv = float(np.sum(1.0 / (p.f**2 + lam**2)))
    return p.n + p.f * float(p.df @ (p.x - x0)) * trace_inv


def ty_identity_check(s: Spectrum, theta: float):
    """Both sides of the trace identity T_{g^-1} V f^{2-n} = trigonometric
    expansion in the normalised symmetric functions, plus the relative gap.

    The right-hand side is
        cos(T) sum_{1<=2k+1<=n} (-1)^k (n-2k) sighat_{2k}
      - sin(T) sum_{0<=2k<=n} (-1)^k (n-2k+1) sighat_{2k-1},
    with sighat_j the elementary symmetric functions of lam_i/f and
    sighat_{-1} = 0.  Evaluation runs in extended precision with the phase
    the spectrum actually attains; the caller's theta is only the 1e-9
    level-set precondition.
    """
    ph = s.phase()
    if abs(ph - float(theta)) > 1e-9:
        raise PreconditionError(
            f"spectrum is off the level set: phase={ph!r}, theta={theta!r}"
        )
    n = s.n
    lam = s.lam.astype(np.longdouble)
    f = np.longdouble(s.f)
    lam_hat = lam / f
    g_eigs = f**2 + lam**2
    lhs = np.sum(1.0 / g_eigs) * np.prod(np.sqrt(g_eigs)) * f ** (2 - n)

    theta_actual = np.sum(np.arctan(lam_hat))
    sig = sigma_coeffs(lam_hat)
    cos_sum = np.longdouble(0.0)
    k = 0
    while 2 * k + 1 <= n:
        cos_sum += (-1) ** k * (n - 2 * k) * sig[2 * k]
        k += 1
    sin_sum = np.longdouble(0.0)
    k = 0
    while 2 * k <= n:
        if 2 * k - 1 >= 0:
            sin_sum += (-1) ** k * (n - 2 * k + 1) * sig[2 * k - 1]
        k += 1
    rhs = np.cos(theta_actual) * cos_sum - np.sin(theta_actual) * sin_sum
    gap = float(abs(lhs - rhs) / max(1.0, abs(lhs)))
    return float(lhs), float(rhs), gap


# ---------------------------------------------------------------------------
# grid-level graph data
# ---------------------------------------------------------------------------

class GraphGrid:
    """Per-node graph geometry of a (u, f) pair on a shared grid.

    Hessians cost one node of margin, third derivatives two; the
    ``margin(k)`` masks say where each field is valid.  All heavy fields are
    computed once, vectorised over nodes.
    """

    def __init__(self, u: GridFunction, f: GridFunction | float):
        self.u = u
        if isinstance(f, (int, float)):
            f = GridFunction.constant(u.n, u.shape, float(f))
        if f.shape != u.shape or f.n != u.n:
            raise DomainError("u and f must share one grid")
        if np.any(f.values <= 0.0):
            raise DomainError("twist field must be positive on all nodes")
        self.f = f
        self.n = u.n
        self.h = u.h

        self.du = grad_fd(u.values, u.h)
        self.hess = hessian_fd(u.values, u.h)
        self.third = third_fd(self.hess, u.h)
        self.df = grad_fd(f.values, f.h)
        self.lam, self.frames = jacobi_eigh(self.hess)
        self.g_eigs = f.values[..., None] ** 2 + self.lam**2
        self.vol = np.prod(np.sqrt(self.g_eigs), axis=-1)
        self.trace_inv = np.sum(1.0 / self.g_eigs, axis=-1)

    def margin(self, k: int) -> np.ndarray:
        return self.u.interior_mask(k)

    def point(self, idx: tuple) -> GraphPointData:
        return GraphPointData(
            x=self.u.coords()[idx],
            f=float(self.f.values[idx]),
            df=self.df[idx],
            hess=self.hess[idx],
            third=self.third[idx],
        )

    def metric_inverse(self) -> np.ndarray:
        """Inverse induced metric per node, shape (*grid, n, n)."""
        return np.einsum(
            "...ik,...k,...jk->...ij", self.frames, 1.0 / self.g_eigs, self.frames
        )

    def rotated_third_diag(self) -> np.ndarray:
        """u_{iij} in the per-node eigenframe, shape (*grid, n, n)."""
        return np.einsum(
            "...ai,...bi,...cj,...abc->...ij",
            self.frames,
            self.frames,
            self.frames,
            self.third,
        )

    def mean_curvature_norms(self):
        """(raw, substituted) |H| fields; valid on margin(2)."""
        ginv = 1.0 / self.g_eigs
        f = self.f.values[..., None]
        df_rot = np.einsum("...ij,...i->...j", self.frames, self.df)
        t_diag = self.rotated_third_diag()
        s_weighted = np.einsum("...i,...ij->...j", ginv, t_diag)
        lam_sum = np.sum(self.lam * ginv, axis=-1)[..., None]
        common = (self.lam / f) * df_rot * (self.trace_inv[..., None] - 2.0 * ginv)
        c_raw = ginv * (common + s_weighted)
        c_sub = ginv * (common + df_rot / f * lam_sum)
        gd = self.g_eigs

        def norm_of(c):
            return self.f.values * np.sqrt(np.sum(c**2 * gd, axis=-1))

        return norm_of(c_raw), norm_of(c_sub)

    def r_field(self, center: tuple) -> np.ndarray:
        """|Z| distance surrogate sqrt(f^2 |x-x0|^2 + |Du-Du(x0)|^2)."""
        coords = self.u.coords()
        dx = coords - coords[center]
        dy = self.du - self.du[center]
        return np.sqrt(
            self.f.values**2 * np.sum(dx**2, axis=-1) + np.sum(dy**2, axis=-1)
        )

    def rescaled(self, s: float) -> "GraphGrid":
        """The paper-style normalisation (u, f) -> (u/s, f/s)."""
        if not s > 0:
            raise DomainError("scale must be positive")
        u2 = GridFunction(self.n, self.u.shape, self.u.values / s)
        f2 = GridFunction(self.n, self.f.shape, self.f.values / s)
        return GraphGrid(u2, f2)


def beltrami_apply(field: GridFunction, graph: GraphGrid) -> np.ndarray:
    """Laplace-Beltrami of a scalar field on the graph.

    Evaluated in the per-node Hessian eigenframe with rotated central
    differences: the FD Hessian and gradient of the field are rotated into
    the frame, contracted with g^ii and the drift coefficients

        psi^i = f f_i (T_{g^-1} - 2 g^ii) - lam_i sum_j g^jj u_{jji},

    both of which vanish for constant twist.  Valid on margin(2); the
    returned array is zero elsewhere.
    """
    if field.shape != graph.u.shape:
        raise DomainError("field and graph must share one grid")
    ginv = 1.0 / graph.g_eigs
    hess_f = hessian_fd(field.values, field.h)
    grad_f = grad_fd(field.values, field.h)
    hess_rot_diag = np.einsum(
        "...ai,...bi,...ab->...i", graph.frames, graph.frames, hess_f
    )
    grad_rot = np.einsum("...ij,...i->...j", graph.frames, grad_f)

    f = graph.f.values[..., None]
    df_rot = np.einsum("...ij,...i->...j", graph.frames, graph.df)
    t_diag = graph.rotated_third_diag()
    drift = f * df_rot * (graph.trace_inv[..., None] - 2.0 * ginv)
    drift -= graph.lam * np.einsum("...j,...ji->...i", ginv, t_diag)

    out = np.sum(ginv * hess_rot_diag, axis=-1)
    out += np.sum(drift * ginv * grad_rot, axis=-1)
    return np.where(graph.margin(2), out, 0.0)


def monotonicity_profile(graph: GraphGrid, center: tuple, radii) -> list:
    """Weighted-volume ratio profile [(rho, phi0(rho)/rho^n), ...] of the
    r-sublevel regions around a node."""
    r = graph.r_field(center)
    out = []
    for rho in radii:
        fractions = region_fractions(r, float(rho))
        require_region_interior(fractions > 0.0, margin=1)
        phi0 = region_integral(np.ones_like(r), graph.vol, graph.h, fractions)
        out.append((float(rho), phi0 / float(rho) ** graph.n))
    return out


def sobolev_check(phi: GridFunction, graph: GraphGrid):
    """Both sides of the graph Sobolev inequality and their ratio.

    lhs = [int phi^{n/(n-1)} dv]^{(n-1)/n};
    rhs = [1 + (int_supp T dv)^{1/(n(n-1))}] *
          int [ |grad_g phi| + phi (|H| + sqrt(T)) ] dv.

    phi must be nonnegative, supported away from the boundary, and the twist
    must satisfy f >= 1 on the support.
    """
    if phi.shape != graph.u.shape:
        raise DomainError("phi and graph must share one grid")
    vals = phi.values
    if np.any(vals < 0.0):
        raise PreconditionError("phi must be nonnegative")
    support = vals > 0.0
    if not np.any(support):
        return 0.0, 0.0, 0.0
    if np.any(support & ~graph.margin(2)):
        raise PreconditionError("phi must vanish near the domain boundary")
    if np.any(graph.f.values[support] < 1.0):
        raise PreconditionError("the hypothesis f >= 1 fails on supp(phi)")

    n = graph.n
    dv = graph.vol
    h = graph.h
    lhs = region_integral(vals ** (n / (n - 1.0)), dv, h) ** ((n - 1.0) / n)

    g_inv = graph.metric_inverse()
    grad_phi = grad_fd(vals, h)
    grad_norm = np.sqrt(
        np.maximum(np.einsum("...ab,...a,...b->...", g_inv, grad_phi, grad_phi), 0.0)
    )
    h_raw, _ = graph.mean_curvature_norms()
    t_phi = region_integral(np.where(support, graph.trace_inv, 0.0), dv, h)
    integrand = grad_norm + vals * (h_raw + np.sqrt(graph.trace_inv))
    integrand = np.where(graph.margin(2), integrand, 0.0)
    rhs = (1.0 + t_phi ** (1.0 / (n * (n - 1.0)))) * region_integral(
        integrand, dv, h
    )
    ratio = 0.0 if rhs == 0.0 else lhs / rhs
    return float(lhs), float(rhs), float(ratio)


def meanvalue_check(b: GridFunction, graph: GraphGrid, center: tuple, rho: float):
    """(b(center), rho^-n int_{B_rho} b dv, ratio) with the geodesic ball
    approximated from outside by the sublevel region S_{rho * ||f||_inf}.

    b must be >= 1 on the region, matching the hypothesis under which the
    mean value inequality is applied.
    """
    if b.shape != graph.u.shape:
        raise DomainError("b and graph must share one grid")
    f_max = float(graph.f.values.max())
    r = graph.r_field(center)
    fractions = region_fractions(r, rho * f_max)
    require_region_interior(fractions > 0.0, margin=1)
    if np.any((fractions > 0.0) & (b.values < 1.0)):
        raise PreconditionError("b must be >= 1 on the integration region")
    integral = region_integral(b.values, graph.vol, graph.h, fractions)
    scaled = integral / rho**graph.n
    b0 = float(b.values[center])
    return b0, float(scaled), float(b0 / scaled)


# ---------------------------------------------------------------------------
# divergence structure of sigma_k
# ---------------------------------------------------------------------------

def sigma_k_gradient(hess: np.ndarray, k: int) -> np.ndarray:
    """d sigma_k / d(Hessian) as a matrix field: the (k-1)-th Newton
    transform sum_{j<k} (-1)^j sigma_{k-1-j} M^j, batched over nodes."""
    n = hess.shape[-1]
    if not 1 <= k <= n:
        raise DomainError(f"k must be in [1, {n}], got {k}")
    lam, _ = jacobi_eigh(hess)
    sig = sigma_coeffs(lam)
    eye = np.broadcast_to(np.eye(n), hess.shape)
    power = eye
    out = np.zeros_like(hess)
    for j in range(k):
        out = out + (-1) ** j * sig[..., k - 1 - j, None, None] * power
        power = power @ hess
    return out


def divergence_sigma_k(u_fn, phi_fn, k: int, n: int, shapes=(9, 17, 33)):
    """Weak-form check of k sigma_k(D^2u) = div(L_{sigma_k} Du) under grid
    refinement.

    For each grid the residual | int phi k sigma_k dx + int <Dphi, L Du> dx |
    is recorded; the report carries the residuals, the observed convergence
    slopes, and for k = 1 the residual is zero to rounding (sigma_1 = div Du
    is exact for the centred stencils on any field).
    """
    residuals = []
    for shape in shapes:
        u = GridFunction.from_callable(n, shape, u_fn)
        phi = GridFunction.from_callable(n, shape, phi_fn)
        hess = hessian_fd(u.values, u.h)
        du = grad_fd(u.values, u.h)
        dphi = grad_fd(phi.values, phi.h)
        lam, _ = jacobi_eigh(hess)
        sig_k = sigma_k(lam, k)
        l_du = np.einsum("...ab,...b->...a", sigma_k_gradient(hess, k), du)
        mask = u.interior_mask(1)
        term1 = region_integral(
            np.where(mask, phi.values * k * sig_k, 0.0), np.ones_like(sig_k), u.h
        )
        term2 = region_integral(
            np.where(mask, np.einsum("...a,...a->...", dphi, l_du), 0.0),
            np.ones_like(sig_k),
            u.h,
        )
        residuals.append(abs(term1 + term2))
    slopes = [
        math.log2(residuals[i] / residuals[i + 1])
        if residuals[i + 1] > 0
        else math.inf
        for i in range(len(residuals) - 1)
    ]
    return {"shapes": tuple(shapes), "residuals": residuals, "slopes": slopes}


def sigma_partials_nonneg(lam_batch: np.ndarray, k_max: int | None = None):
    """Minimum over samples of d sigma_k / d lam_i = sigma_{k-1}(lam minus i)
    for 1 <= k <= n-1; nonnegative on critical/supercritical level sets."""
    lam_batch = np.asarray(lam_batch, dtype=float)
    count, n = lam_batch.shape
    k_top = n - 1 if k_max is None else k_max
    worst = math.inf
    for i in range(n):
        reduced = np.delete(lam_batch, i, axis=1)
        sig = sigma_coeffs(reduced)
        for k in range(1, k_top + 1):
            worst = min(worst, float(sig[:, k - 1].min()))
    return worst
