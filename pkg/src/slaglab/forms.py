"""Quadratic-form certification of the trace Jacobi machinery.

The subharmonicity of ln|A + trace(D^2 u)| on the graph reduces, after
differentiating the equation twice and redefining d_i = u_{iig} - (f_g/f)
lam_i (which enforces sum_i g^ii d_i = 0), to nonnegativity of the quadratic
form

    Q_g(d) = sum_i [2 lam_i (g^ii)^2
                    + 2 (1 - delta_{ig}) (lam_i + lam_g) g^ii g^gg] d_i^2
             - (1 + eps)/(A + tr) * g^gg * (sum_i d_i)^2,

with g_ii = f^2 + lam_i^2 and tr = sum lam_i, on the constraint hyperplane.
This module evaluates Q_g, its constrained minimum eigenvalue, the split
"hat" forms with their scalar head criteria (P1 for the penalised part, P2
for the reciprocal-sum part), the convex-branch form, and the rank-one
diagonal-minus-outer-product PSD criterion those splittings rest on:

    diag(a) - L L^T  >= 0   iff   1 - sum_i <L, e_i>^2 / a_i >= 0   (a_i > 0).

All checks run on level-set samples and report numeric margins; failures are
dumped as one-line counterexample records.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InfeasibleError, OrderingError, PreconditionError
from .spectral import Spectrum, jacobi_eigh, phase, solve_top_eigenvalue

# printed parameter recipes, by case
EPS_TOP = 0.1                       # single split, gamma = n
EPS_PAIRS_LOW = (0.01, 0.02)        # gamma <= n-2: eps, eps_hat = 2 eps
EPS_PAIRS_LOW_ALT = (0.005, 0.01)   # the alternative printed value
EPS_NEXT_TO_TOP = 0.25              # gamma = n-1, reduced on demand
EPS_CONVEX_INTERIOR = 0.5           # convex branch, lam_n >= m
EPS_CONVEX_SPLIT = 1.0 / 6.0        # convex branch, lam_n < m < M < lam_1
CONVEX_M_SMALL = 0.25
CONVEX_M_LARGE_FACTOR = 4.0         # M = 4 n


# ---------------------------------------------------------------------------
# parameter containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class JacobiFormParams:
    """Spectrum plus the (eps, eps_hat, delta, A) constants of one form.

    ``gamma`` is the 0-based differentiation axis.
    """

    s: Spectrum
    gamma: int
    eps: float = 0.0
    epshat: float = 0.0
    delta: float = 0.0
    big_a: float = 1.0

    def __post_init__(self):
        n = self.s.n
        if not 0 <= self.gamma < n:
            raise DomainError(f"gamma must be in [0, {n}), got {self.gamma}")
        if not (0.0 <= self.eps < 1.0 and 0.0 <= self.epshat < 1.0):
            raise DomainError("eps and epshat must lie in [0, 1)")
        if self.delta < 0.0:
            raise DomainError("delta must be nonnegative")
        if not self.big_a >= 1.0:
            raise DomainError("A must be >= 1")


@dataclass(frozen=True)
class ThirdDerivSlice:
    """The redefined diagonal third-derivative vector (d_1, ..., d_n).

    When ``constrained`` the vector is expected to satisfy the identity
    sum_i g^ii d_i = 0 (checked by the form evaluators to 1e-12).
    """

    d: np.ndarray
    constrained: bool = False

    def __post_init__(self):
        object.__setattr__(self, "d", np.asarray(self.d, dtype=float))


def metric_diagonals(s: Spectrum):
    """(g_ii, g^ii) of the induced metric in the Hessian eigenframe."""
    g = s.f**2 + s.lam**2
    return g, 1.0 / g


def project_constraint(d: np.ndarray, ginv: np.ndarray) -> np.ndarray:
    """Orthogonal projection onto {sum_i g^ii d_i = 0} in the g^ii-weighted
    inner product (idempotent; subtracts the weighted mean)."""
    d = np.asarray(d, dtype=float)
    return d - (ginv @ d) / np.sum(ginv)


def hyperplane_basis(w: np.ndarray) -> np.ndarray:
    """Euclidean-orthonormal basis (columns) of the hyperplane {w . d = 0}."""
    w = np.asarray(w, dtype=float)
    n = w.size
    u = w / np.linalg.norm(w)
    v = u.copy()
    v[0] -= 1.0  # Householder vector mapping e_0 -> u
    nv = np.linalg.norm(v)
    if nv < 1e-15:
        return np.eye(n)[:, 1:]
    v /= nv
    h = np.eye(n) - 2.0 * np.outer(v, v)
    return h[:, 1:]


# ---------------------------------------------------------------------------
# the full form Q_gamma
# ---------------------------------------------------------------------------

def q_gamma_matrix(p: JacobiFormParams) -> np.ndarray:
    """Symmetric matrix of Q_gamma in the d variables."""
    lam, f = p.s.lam, p.s.f
    n = p.s.n
    g, ginv = metric_diagonals(p.s)
    gg = ginv[p.gamma]
    diag = 2.0 * lam * ginv**2
    cross = 2.0 * (lam + lam[p.gamma]) * ginv * gg
    cross[p.gamma] = 0.0
    tr = float(np.sum(lam))
    denom = p.big_a + tr
    penalty = 0.0 if not np.isfinite(denom) else (1.0 + p.eps) / denom * gg
    return np.diag(diag + cross) - penalty * np.ones((n, n))


def q_gamma(p: JacobiFormParams, slice_: ThirdDerivSlice | np.ndarray) -> float:
    """Evaluate Q_gamma(d) termwise (exact bilinear evaluation)."""
    if isinstance(slice_, ThirdDerivSlice):
        d = slice_.d
        if slice_.constrained:
            _, ginv = metric_diagonals(p.s)
            resid = abs(float(ginv @ d))
            if resid > 1e-12 * max(1.0, float(np.abs(d).max())):
                raise PreconditionError(
                    f"constraint sum g^ii d_i = 0 violated by {resid!r}"
                )
    else:
        d = np.asarray(slice_, dtype=float)
    lam, gamma = p.s.lam, p.gamma
    _, ginv = metric_diagonals(p.s)
    gg = ginv[gamma]
    total = 0.0
    for i in range(p.s.n):
        coef = 2.0 * lam[i] * ginv[i] ** 2
        if i != gamma:
            coef += 2.0 * (lam[i] + lam[gamma]) * ginv[i] * gg
        total += coef * d[i] ** 2
    denom = p.big_a + float(np.sum(lam))
    if np.isfinite(denom):
        total -= (1.0 + p.eps) / denom * gg * float(np.sum(d)) ** 2
    return float(total)


def q_gamma_min(p: JacobiFormParams, return_normalized: bool = False):
    """Smallest eigenvalue of Q_gamma restricted to the constraint hyperplane
    (unit Euclidean sphere intersected with {sum g^ii d_i = 0}).

    With ``return_normalized`` also returns the minimum of the form scaled by
    its largest coefficient magnitude, which is the scale-free margin the
    certification suites assert against.
    """
    _, ginv = metric_diagonals(p.s)
    m = q_gamma_matrix(p)
    basis = hyperplane_basis(ginv)
    proj = basis.T @ m @ basis
    scale = max(float(np.abs(proj).max()), np.finfo(float).tiny)
    lam_min = float(jacobi_eigh(proj / scale)[0][-1])
    if return_normalized:
        return lam_min * scale, lam_min
    return lam_min * scale


# ---------------------------------------------------------------------------
# diagonalize lemma
# ---------------------------------------------------------------------------

def diagonalize_psd(a, l_vec):
    """Scalar PSD criterion for diag(a) - L L^T against its eigenvalues.

    Returns ``(criterion, psd_flag)`` with criterion = 1 - sum_i L_i^2 / a_i;
    the flag comes from the smallest eigenvalue of the assembled matrix
    (dead band 1e-9 around zero applies to the *criterion* when comparing
    the two signs, not here).  Batched over leading axes.
    """
    a = np.asarray(a, dtype=float)
    l_vec = np.asarray(l_vec, dtype=float)
    if np.any(a <= 0.0):
        raise DomainError("diagonal entries must be positive")
    crit = 1.0 - np.sum(l_vec**2 / a, axis=-1)
    mats = np.zeros(a.shape + (a.shape[-1],))
    idx = np.arange(a.shape[-1])
    mats[..., idx, idx] = a
    mats -= l_vec[..., :, None] * l_vec[..., None, :]
    scale = np.maximum(np.max(np.abs(mats), axis=(-2, -1)), np.finfo(float).tiny)
    eig_min = jacobi_eigh(mats / scale[..., None, None])[0][..., -1]
    psd = eig_min >= -1e-12
    if crit.ndim == 0:
        return float(crit), bool(psd)
    return crit, psd


# ---------------------------------------------------------------------------
# split ("hat") forms and their scalar chains
# ---------------------------------------------------------------------------

def _normalized_min_eig(mat: np.ndarray) -> float:
    scale = max(float(np.abs(mat).max()), np.finfo(float).tiny)
    return float(jacobi_eigh(mat / scale)[0][-1])


def _constrained_diag_min(coeffs: np.ndarray, w: np.ndarray) -> float:
    """Normalized constrained minimum of sum c_i d_i^2 on {w . d = 0}."""
    basis = hyperplane_basis(w)
    proj = basis.T @ np.diag(coeffs) @ basis
    return _normalized_min_eig(proj)


@dataclass
class SplitFormReport:
    """Margins of one sample's split-form certification.

    ``p1_margins[gamma]`` must be >= -1e-10 and ``p2_margins[gamma]`` (when
    present; it is None when the split's last diagonal coefficient is already
    nonnegative) must be <= 1e-10 for the printed recipe to certify.  The
    ``hat1_min`` / ``hat2_min`` entries are the normalized eigenvalue
    certificates of the same forms.
    """

    case: str
    params: dict
    p1_margins: dict
    p2_margins: dict
    hat1_min: dict
    hat2_min: dict
    notes: dict = field(default_factory=dict)

    @property
    def certified(self) -> bool:
        ok = all(v >= -1e-10 for v in self.p1_margins.values())
        ok &= all(v is None or v <= 1e-10 for v in self.p2_margins.values())
        return ok

    def worst_margin(self) -> float:
        vals = [v for v in self.p1_margins.values()]
        vals += [-v for v in self.p2_margins.values() if v is not None]
        return min(vals) if vals else math.inf


def _hat_top(s: Spectrum, eps: float):
    """gamma = n split: 2(lam_i+lam_n)(tr) g^ii d_i^2 - (1+eps)(sum L_i d_i)^2
    over the first n-1 variables (A = 0, the sharpest weight).

    Returns (P1 head criterion, normalized min eigenvalue).
    """
    lam, f = s.lam, s.f
    g, ginv = metric_diagonals(s)
    tr = float(np.sum(lam))
    lead = lam[:-1]
    a = 2.0 * (lead + lam[-1]) * tr * ginv[:-1]
    l_vec = (lead**2 - lam[-1] ** 2) * ginv[:-1]       # 1 - tau_{n i}
    # head criterion with the 0/0-free rewriting
    # L_i^2 g_ii / (2 (lam_i+lam_n) tr) = (lam_i-lam_n)^2 (lam_i+lam_n) g^ii / (2 tr)
    head = 1.0 - (1.0 + eps) / (2.0 * tr) * float(
        np.sum((lead - lam[-1]) ** 2 * (lead + lam[-1]) * ginv[:-1])
    )
    mat = np.diag(a) - (1.0 + eps) * np.outer(l_vec, l_vec)
    return head, _normalized_min_eig(mat)


def _hat_pair(s: Spectrum, gamma: int, eps: float, eps_hat: float, low: bool):
    """Two-part split for gamma < n-1 (``low=True``, (1+eps_hat) weight on
    the gamma term of the penalised part) or gamma = n-1 (``low=False``,
    weights swapped).

    Returns (P1, P2 or None, hat1_min, hat2_min).
    """
    lam, f = s.lam, s.f
    n = s.n
    g, ginv = metric_diagonals(s)
    tr = float(np.sum(lam))
    lead = slice(0, n - 1)

    # penalised part over the first n-1 variables
    a = 2.0 * lam[lead] * tr * ginv[lead]
    wg = (1.0 + eps_hat) if low else (1.0 - eps_hat)
    a[gamma] = wg * lam[gamma] * tr * ginv[gamma]
    l_vec = (lam[lead] ** 2 - lam[-1] ** 2) * ginv[lead]
    terms = (lam[lead] ** 2 - lam[-1] ** 2) ** 2 * ginv[lead] / (2.0 * lam[lead])
    if low:
        terms[gamma] = (lam[gamma] ** 2 - lam[-1] ** 2) ** 2 * ginv[gamma] / (
            (1.0 + eps_hat) * lam[gamma]
        )
    else:
        # with eps_hat = lam_n^2/lam_g^2 the division cancels exactly:
        # (lam_g^2-lam_n^2)^2 / ((1-eps_hat) lam_g) = (lam_g^2-lam_n^2) lam_g
        terms[gamma] = (lam[gamma] ** 2 - lam[-1] ** 2) * lam[gamma] * ginv[gamma]
    p1 = 1.0 - (1.0 + eps) / tr * float(np.sum(terms))
    hat1 = np.diag(a) - (1.0 + eps) * np.outer(l_vec, l_vec)

    # reciprocal part over all n variables
    tau_ig = g / g[gamma]
    c = 2.0 * (lam + lam[gamma] * tau_ig) * ginv**2
    wc = (1.0 - eps_hat) if low else (1.0 + eps_hat)
    c[gamma] = wc * lam[gamma] * ginv[gamma] ** 2
    c[-1] = 2.0 * (lam[-1] + (lam[gamma] + lam[-1]) * tau_ig[-1]) * ginv[-1] ** 2
    hat2_min = _constrained_diag_min(c, ginv)

    last = lam[-1] + (lam[gamma] + lam[-1]) * tau_ig[-1]
    if last >= 0.0:
        p2 = None  # every diagonal coefficient nonnegative: trivially PSD
    else:
        p2 = (2.0 / wc - 1.0) / lam[gamma]
        for i in range(n - 1):
            if i == gamma:
                continue
            p2 += 1.0 / (lam[i] + lam[gamma] * tau_ig[i]) - 1.0 / lam[i]
        p2 += 1.0 / last - 1.0 / lam[-1]
        p2 = float(p2)
    return p1, p2, _normalized_min_eig(hat1), hat2_min


def convex_case_margins(s: Spectrum, m_small: float = CONVEX_M_SMALL):
    """Convex-branch (lam_n >= 0) certification with the printed recipe.

    The form (scaled by 1/(A+tr)) is
        sum_i 2 lam_i g^ii d_i^2 - (1+eps)/(A+tr) (sum_i d_i)^2
    on the constraint hyperplane, with A = (4 n^6 |f|^4 + n |f|^2)/m and eps
    chosen by sub-case: 1/2 when lam_n >= m or lam_1 <= M = 4n, else 1/6.

    Returns a dict with the sub-case tag, the head-chain value, the
    normalized constrained minimum, and the recipe constants.
    """
    lam, f = s.lam, s.f
    n = s.n
    if lam[-1] < 0.0:
        raise PreconditionError("convex branch requires lam_n >= 0")
    _, ginv = metric_diagonals(s)
    tr = float(np.sum(lam))
    m_large = CONVEX_M_LARGE_FACTOR * n
    big_a = (4.0 * n**6 * f**4 + n * f**2) / m_small
    if lam[-1] >= m_small:
        sub, eps = "interior", EPS_CONVEX_INTERIOR
    elif lam[0] <= m_large:
        sub, eps = "bounded-top", EPS_CONVEX_INTERIOR
    else:
        sub, eps = "split", EPS_CONVEX_SPLIT

    denom = big_a + tr
    coeffs = 2.0 * lam * ginv
    mat = np.diag(coeffs) - (1.0 + eps) / denom * np.ones((n, n))
    cons_min = _normalized_min_eig(
        hyperplane_basis(ginv).T @ mat @ hyperplane_basis(ginv)
    )
    # head chain value of the applicable printed sub-case
    if sub == "interior":
        head = 1.0 - (1.0 + eps) / (2.0 * denom) * float(
            np.sum(lam + f**2 / m_small)
        )
    elif sub == "bounded-top":
        head = 1.0 - (1.0 + eps) * n * m_large / (2.0 * denom)
    else:
        k_mask = lam >= m_small
        head = (
            1.0
            - (1.0 + eps)
            * (
                2.0 / (3.0 * denom) * float(np.sum(lam[k_mask] + f**2 / m_small))
                + 1.0 / n**2
            )
        )
    return {
        "sub_case": sub,
        "eps": eps,
        "big_a": big_a,
        "head": float(head),
        "constrained_min": cons_min,
    }


def verify_split_forms(s: Spectrum, case: str) -> SplitFormReport:
    """Evaluate the split-form inequality chains for one level-set sample.

    ``case``:
      * ``"neg-last"`` -- lam_n < 0 branch; evaluates the gamma = n single
        split at eps = 0.1, the gamma <= n-2 splits at both printed
        (eps, eps_hat) pairs (keeping the better margin and recording which
        certified), and the gamma = n-1 split at eps_hat = lam_n^2 /
        lam_{n-1}^2 with eps = 1/4 halved until the head certifies.
      * ``"convex"`` -- lam_n >= 0 branch with the A >= 4 n^6 |f|^4 / m
        recipe; the form is gamma-independent there.
    """
    lam = s.lam
    n = s.n
    if case == "convex":
        if lam[-1] < 0.0:
            raise PreconditionError("convex case needs lam_n >= 0")
        res = convex_case_margins(s)
        return SplitFormReport(
            case="convex",
            params={"eps": res["eps"], "big_a": res["big_a"]},
            p1_margins={"all": res["head"]},
            p2_margins={"all": None},
            hat1_min={"all": res["constrained_min"]},
            hat2_min={},
            notes={"sub_case": res["sub_case"]},
        )
    if case != "neg-last":
        raise DomainError(f"unknown case {case!r}")
    if lam[-1] >= 0.0:
        raise PreconditionError("neg-last case needs lam_n < 0")

    p1_margins, p2_margins, hat1_min, hat2_min, notes, params = {}, {}, {}, {}, {}, {}

    head, h1 = _hat_top(s, EPS_TOP)
    p1_margins[n - 1] = head
    p2_margins[n - 1] = None
    hat1_min[n - 1] = h1
    params[n - 1] = {"eps": EPS_TOP}

    for gamma in range(n - 2):
        best = None
        for eps, eps_hat in (EPS_PAIRS_LOW, EPS_PAIRS_LOW_ALT):
            p1, p2, h1, h2 = _hat_pair(s, gamma, eps, eps_hat, low=True)
            ok = p1 >= -1e-10 and (p2 is None or p2 <= 1e-10)
            cand = (ok, min(p1, math.inf if p2 is None else -p2), eps, eps_hat,
                    p1, p2, h1, h2)
            if best is None or cand[:2] > best[:2]:
                best = cand
        ok, _, eps, eps_hat, p1, p2, h1, h2 = best
        p1_margins[gamma] = p1
        p2_margins[gamma] = p2
        hat1_min[gamma] = h1
        hat2_min[gamma] = h2
        params[gamma] = {"eps": eps, "epshat": eps_hat}
        notes[gamma] = "printed" if (eps, eps_hat) == EPS_PAIRS_LOW else "printed-alt"

    gamma = n - 2
    eps_hat = float(lam[-1] ** 2 / lam[gamma] ** 2)
    eps = EPS_NEXT_TO_TOP
    while True:
        p1, p2, h1, h2 = _hat_pair(s, gamma, eps, eps_hat, low=False)
        if p1 >= -1e-10 or eps <= 1e-4:
            break
        eps *= 0.5
    p1_margins[gamma] = p1
    p2_margins[gamma] = p2
    hat1_min[gamma] = h1
    hat2_min[gamma] = h2
    params[gamma] = {"eps": eps, "epshat": eps_hat}

    return SplitFormReport(
        case="neg-last",
        params=params,
        p1_margins=p1_margins,
        p2_margins=p2_margins,
        hat1_min=hat1_min,
        hat2_min=hat2_min,
        notes=notes,
    )


# ---------------------------------------------------------------------------
# differentiated-equation identities on manufactured data
# ---------------------------------------------------------------------------

def verify_differentiated_identities(
    theta: float | None = None,
    shapes=(17, 33, 65),
    kind: str = "quartic",
    perturb_f: float = 0.0,
    **kind_params,
):
    """FD residuals of the once- and twice-differentiated equation on a
    manufactured (u, f) pair, under grid refinement.

    With f calibrated so the equation holds identically, differentiating
    once in the rotated coordinate g gives
        sum_i (lam_{i,g} f - lam_i f_g) / (f^2 + lam_i^2) = 0,
    and twice gives
        sum_i lam_{i,gg} g^ii =
        sum_i (1/f) [ 2 (f f_g + lam_i u_iig)(u_iig f - lam_i f_g)(g^ii)^2
                      + lam_i f_gg g^ii ].
    All derivative fields are finite differences (the twist is only known
    nodewise); eigenvalue fields use the descending sort, so nodes where a
    crossing may hide inside the stencil are flagged, excluded and counted.
    A node is safe when its eigenvalue gap exceeds the per-step movement of
    the spectrum (then no pair can reorder within the stencil); the safe set
    of the coarsest grid embeds into the finer lattices (shapes must refine
    by integer factors) and all norms are taken over that fixed node set so
    the refinement slope is measured on one region.  Residuals decay at
    second order for smooth data; ``perturb_f`` adds a smooth bump to f as a
    negative control (the residual then plateaus).

    Returns a report dict with per-shape max-norms, slopes and flag counts.
    """
    import math as _math

    from .grids import GridFunction, grad_fd, hessian_fd, third_fd
    from .solver import manufactured_problem

    theta = float(theta) if theta is not None else float(2 * np.arctan(1.0))
    base_shape = min(shapes)
    for shape in shapes:
        if (shape - 1) % (base_shape - 1):
            raise DomainError(
                f"shape {shape} does not refine the base grid {base_shape}"
            )
    safe_nodes = None  # multi-index array on the coarsest grid
    r1_norms, r2_norms, flag_counts = [], [], []
    for shape in shapes:
        u_star, f, _, _ = manufactured_problem(kind, 3, shape, theta, **kind_params)
        if perturb_f:
            coords = u_star.coords()
            f = GridFunction(
                3,
                shape,
                f.values
                * (1.0 + perturb_f * np.exp(-2.0 * np.sum(coords**2, axis=-1))),
            )
        h = u_star.h
        hess = hessian_fd(u_star.values, h)
        third = third_fd(hess, h)
        lam, frames = jacobi_eigh(hess)
        fg = f.values
        ginv = 1.0 / (fg[..., None] ** 2 + lam**2)

        # rotated first and second derivatives of the eigenvalue fields
        n = 3
        lam_grad = np.stack([grad_fd(lam[..., i], h) for i in range(n)], axis=-2)
        lam_hess = np.stack(
            [hessian_fd(lam[..., i], h) for i in range(n)], axis=-3
        )
        lam_d = np.einsum("...ag,...ia->...ig", frames, lam_grad)
        lam_dd = np.einsum(
            "...ag,...bg,...iab->...ig", frames, frames, lam_hess
        )
        df = grad_fd(fg, h)
        ddf = hessian_fd(fg, h)
        f_d = np.einsum("...ag,...a->...g", frames, df)
        f_dd = np.einsum("...ag,...bg,...ab->...g", frames, frames, ddf)
        u_iig = np.einsum(
            "...ai,...bi,...cg,...abc->...ig", frames, frames, frames, third
        )

        f_b = fg[..., None, None]       # broadcast over (i, g)
        lam_b = lam[..., :, None]
        fd_b = f_d[..., None, :]
        r1 = np.einsum(
            "...ig,...i->...g", lam_d * f_b - lam_b * fd_b, ginv
        )
        lhs2 = np.einsum("...ig,...i->...g", lam_dd, ginv)
        quad = 2.0 * (f_b * fd_b + lam_b * u_iig) * (u_iig * f_b - lam_b * fd_b)
        rhs2 = np.einsum("...ig,...i->...g", quad, ginv**2) / fg[..., None]
        rhs2 += np.sum(lam * ginv, axis=-1)[..., None] * f_dd / fg[..., None]

        # flag nodes where a crossing may hide inside the stencil: safe when
        # the gap exceeds the per-step movement of the whole spectrum
        gap = np.min(-np.diff(lam, axis=-1), axis=-1)
        movement = np.zeros_like(gap)
        for axis in range(n):
            for step in (-1, 1):
                shifted = np.roll(lam, step, axis=axis)
                movement = np.maximum(
                    movement, np.abs(shifted - lam).max(axis=-1)
                )
        # constant spectra (gap = movement = 0) are safe: the sorted
        # assignment cannot change when nothing moves
        flagged = gap + 1e-12 < movement
        interior = GridFunction(3, shape).interior_mask(2)
        flag_counts.append(int(np.sum(flagged & interior)))

        if safe_nodes is None:
            mask = interior & ~flagged
            if not np.any(mask):
                raise DomainError(
                    "no crossing-free nodes on the base grid; refine it"
                )
            safe_nodes = np.argwhere(mask)
        stride = (shape - 1) // (base_shape - 1)
        sel = tuple((safe_nodes * stride).T)
        r1_norms.append(float(np.abs(r1[sel]).max()))
        r2_norms.append(float(np.abs(lhs2 - rhs2)[sel].max()))

    def slopes(norms):
        return [
            _math.log2(norms[i] / norms[i + 1]) if norms[i + 1] > 0 else _math.inf
            for i in range(len(norms) - 1)
        ]

    return {
        "shapes": tuple(shapes),
        "r1_norms": r1_norms,
        "r2_norms": r2_norms,
        "r1_slopes": slopes(r1_norms),
        "r2_slopes": slopes(r2_norms),
        "flagged": flag_counts,
    }


# ---------------------------------------------------------------------------
# batched variants (the 1e4-sample suites go through these; the per-sample
# functions above are the reference implementation they are tested against)
# ---------------------------------------------------------------------------

def _basis_batch(w: np.ndarray) -> np.ndarray:
    """Householder hyperplane bases for a batch of normals, shape (b,n,n-1)."""
    w = np.asarray(w, dtype=float)
    b, n = w.shape
    u = w / np.linalg.norm(w, axis=1, keepdims=True)
    v = u.copy()
    v[:, 0] -= 1.0
    nv = np.linalg.norm(v, axis=1, keepdims=True)
    v = np.where(nv > 1e-15, v / np.where(nv > 1e-15, nv, 1.0), 0.0)
    h = np.broadcast_to(np.eye(n), (b, n, n)).copy()
    h -= 2.0 * v[:, :, None] * v[:, None, :]
    return h[:, :, 1:]


def _min_eig_normalized_batch(mats: np.ndarray) -> np.ndarray:
    scale = np.maximum(
        np.max(np.abs(mats), axis=(-2, -1)), np.finfo(float).tiny
    )
    return jacobi_eigh(mats / scale[..., None, None])[0][..., -1]


def _constrained_diag_min_batch(c: np.ndarray, w: np.ndarray) -> np.ndarray:
    basis = _basis_batch(w)
    proj = np.einsum("bik,bi,bil->bkl", basis, c, basis)
    return _min_eig_normalized_batch(proj)


def hat_top_margins_batch(lam: np.ndarray, f: np.ndarray, eps: float = EPS_TOP):
    """Vectorised gamma = n split: (P1 heads, normalized min eigenvalues)."""
    lam = np.asarray(lam, dtype=float)
    f = np.asarray(f, dtype=float)
    ginv = 1.0 / (f[:, None] ** 2 + lam**2)
    tr = np.sum(lam, axis=1)
    lead, last = lam[:, :-1], lam[:, -1:]
    a = 2.0 * (lead + last) * tr[:, None] * ginv[:, :-1]
    l_vec = (lead**2 - last**2) * ginv[:, :-1]
    p1 = 1.0 - (1.0 + eps) / (2.0 * tr) * np.sum(
        (lead - last) ** 2 * (lead + last) * ginv[:, :-1], axis=1
    )
    n1 = lam.shape[1] - 1
    mats = np.zeros((lam.shape[0], n1, n1))
    idx = np.arange(n1)
    mats[:, idx, idx] = a
    mats -= (1.0 + eps) * l_vec[:, :, None] * l_vec[:, None, :]
    return p1, _min_eig_normalized_batch(mats)


def hat_pair_margins_batch(
    lam: np.ndarray,
    f: np.ndarray,
    gamma: int,
    eps: float,
    eps_hat: float | None,
    low: bool,
):
    """Vectorised two-part split for one gamma.

    ``eps_hat=None`` with ``low=False`` selects the printed per-sample choice
    lam_n^2 / lam_gamma^2.  Returns (p1, p2, hat1_min, hat2_min) with
    ``p2 = nan`` where the negative-coefficient assumption does not apply.
    """
    lam = np.asarray(lam, dtype=float)
    f = np.asarray(f, dtype=float)
    b, n = lam.shape
    g = f[:, None] ** 2 + lam**2
    ginv = 1.0 / g
    tr = np.sum(lam, axis=1)
    last = lam[:, -1]

    if eps_hat is None:
        if low:
            raise DomainError("low splits need an explicit eps_hat")
        eh = last**2 / lam[:, gamma] ** 2
    else:
        eh = np.full(b, eps_hat)

    lead = lam[:, :-1]
    a = 2.0 * lead * tr[:, None] * ginv[:, :-1]
    wg = (1.0 + eh) if low else (1.0 - eh)
    a[:, gamma] = wg * lam[:, gamma] * tr * ginv[:, gamma]
    l_vec = (lead**2 - last[:, None] ** 2) * ginv[:, :-1]
    terms = (lead**2 - last[:, None] ** 2) ** 2 * ginv[:, :-1] / (2.0 * lead)
    if low:
        terms[:, gamma] = (
            (lam[:, gamma] ** 2 - last**2) ** 2
            * ginv[:, gamma]
            / ((1.0 + eh) * lam[:, gamma])
        )
    else:
        terms[:, gamma] = (
            (lam[:, gamma] ** 2 - last**2) * lam[:, gamma] * ginv[:, gamma]
        )
    p1 = 1.0 - (1.0 + eps) / tr * np.sum(terms, axis=1)

    n1 = n - 1
    mats = np.zeros((b, n1, n1))
    idx = np.arange(n1)
    mats[:, idx, idx] = a
    mats -= (1.0 + eps) * l_vec[:, :, None] * l_vec[:, None, :]
    hat1_min = _min_eig_normalized_batch(mats)

    tau_ig = g / g[:, gamma, None]
    c = 2.0 * (lam + lam[:, gamma, None] * tau_ig) * ginv**2
    wc = (1.0 - eh) if low else (1.0 + eh)
    c[:, gamma] = wc * lam[:, gamma] * ginv[:, gamma] ** 2
    c_last = (last + (lam[:, gamma] + last) * tau_ig[:, -1])
    c[:, -1] = 2.0 * c_last * ginv[:, -1] ** 2
    hat2_min = _constrained_diag_min_batch(c, ginv)

    applicable = c_last < 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        p2 = (2.0 / wc - 1.0) / lam[:, gamma]
        for i in range(n - 1):
            if i == gamma:
                continue
            p2 += 1.0 / (lam[:, i] + lam[:, gamma] * tau_ig[:, i]) - 1.0 / lam[:, i]
        p2 += np.where(applicable, 1.0 / np.where(applicable, c_last, -1.0), 0.0)
        p2 -= 1.0 / last
    p2 = np.where(applicable, p2, np.nan)
    return p1, p2, hat1_min, hat2_min


def convex_margins_batch(lam: np.ndarray, f: np.ndarray):
    """Vectorised convex-branch margins: (heads, constrained minima,
    sub-case tags)."""
    lam = np.asarray(lam, dtype=float)
    f = np.asarray(f, dtype=float)
    b, n = lam.shape
    if np.any(lam[:, -1] < 0.0):
        raise PreconditionError("convex batch requires lam_n >= 0")
    ginv = 1.0 / (f[:, None] ** 2 + lam**2)
    tr = np.sum(lam, axis=1)
    m_small = CONVEX_M_SMALL
    m_large = CONVEX_M_LARGE_FACTOR * n
    big_a = (4.0 * n**6 * f**4 + n * f**2) / m_small
    denom = big_a + tr

    interior = lam[:, -1] >= m_small
    bounded = ~interior & (lam[:, 0] <= m_large)
    split = ~interior & ~bounded
    eps = np.where(split, EPS_CONVEX_SPLIT, EPS_CONVEX_INTERIOR)

    heads = np.empty(b)
    heads[interior] = 1.0 - (1.0 + EPS_CONVEX_INTERIOR) / (
        2.0 * denom[interior]
    ) * np.sum(lam[interior] + (f[interior, None] ** 2) / m_small, axis=1)
    heads[bounded] = 1.0 - (1.0 + EPS_CONVEX_INTERIOR) * n * m_large / (
        2.0 * denom[bounded]
    )
    if np.any(split):
        k_mask = lam[split] >= m_small
        contrib = np.where(
            k_mask, lam[split] + (f[split, None] ** 2) / m_small, 0.0
        )
        heads[split] = 1.0 - (1.0 + EPS_CONVEX_SPLIT) * (
            2.0 / (3.0 * denom[split]) * np.sum(contrib, axis=1) + 1.0 / n**2
        )

    coeffs = 2.0 * lam * ginv
    basis = _basis_batch(ginv)
    proj = np.einsum("bik,bi,bil->bkl", basis, coeffs, basis)
    ones_proj = np.einsum("bik,bi->bk", basis, np.ones((b, n)))
    proj -= ((1.0 + eps) / denom)[:, None, None] * (
        ones_proj[:, :, None] * ones_proj[:, None, :]
    )
    cons_min = _min_eig_normalized_batch(proj)
    tags = np.where(interior, "interior", np.where(bounded, "bounded-top", "split"))
    return heads, cons_min, tags


# ---------------------------------------------------------------------------
# full-form recipe certification and counterexample records
# ---------------------------------------------------------------------------

def q_gamma_min_batch(
    lam: np.ndarray, f: np.ndarray, gamma: int, eps: float, big_a: float
):
    """Vectorised constrained minimum of the full Q_gamma form.

    Returns ``(raw_min, normalized_min)`` arrays; ``raw_min`` is in the
    form's own scale, ``normalized_min`` is scale-free (divided by the
    largest projected coefficient).
    """
    lam = np.asarray(lam, dtype=float)
    f = np.asarray(f, dtype=float)
    b, n = lam.shape
    ginv = 1.0 / (f[:, None] ** 2 + lam**2)
    gg = ginv[:, gamma]
    tr = np.sum(lam, axis=1)
    diag = 2.0 * lam * ginv**2
    cross = 2.0 * (lam + lam[:, gamma, None]) * ginv * gg[:, None]
    cross[:, gamma] = 0.0
    penalty = (1.0 + eps) / (big_a + tr) * gg
    basis = _basis_batch(ginv)
    proj = np.einsum("bik,bi,bil->bkl", basis, diag + cross, basis)
    ones_proj = np.einsum("bik,bi->bk", basis, np.ones((b, n)))
    proj -= penalty[:, None, None] * (
        ones_proj[:, :, None] * ones_proj[:, None, :]
    )
    scale = np.maximum(np.max(np.abs(proj), axis=(1, 2)), np.finfo(float).tiny)
    normed = jacobi_eigh(proj / scale[:, None, None])[0][..., -1]
    return normed * scale, normed


def counterexample_record(lam, f, gamma, params: dict, margin: float) -> str:
    """One-line delimited counterexample record (consumed by `report`)."""
    lam_txt = ",".join(f"{v:.17g}" for v in np.asarray(lam).ravel())
    par_txt = ",".join(f"{k}={v:.17g}" for k, v in sorted(params.items()))
    return f"lam={lam_txt};f={f:.17g};gamma={gamma};{par_txt};margin={margin:.3e}"


@dataclass
class CertificationResult:
    eps: float
    big_a: float
    delta: float
    worst_margin: float
    samples: int
    flagged_degenerate: int
    counterexamples: list

    @property
    def certified(self) -> bool:
        return self.worst_margin >= -1e-8 and not self.counterexamples


def certify_trace_jacobi(
    lam_batch: np.ndarray,
    f_batch: np.ndarray,
    eps_grid=None,
    a_grid=None,
    margin_floor: float = -1e-8,
) -> CertificationResult:
    """Search the printed-recipe neighbourhood for constants certifying
    Q_gamma >= 3 delta (A+tr)^-1 sum_i g^ii d_i^2 across a sample batch.

    For each (eps, A) on a logarithmic grid seeded at the printed values the
    constrained minimum of Q_gamma - 3 delta (A+tr)^-1 diag(g^ii) is taken
    over all gamma and samples; the widest-margin triple wins and delta is
    the largest value the winning margins support.  Near-degenerate spectra
    (eigenvalue gap below 1e-6 * ||lam||) are spread apart by 1e-6 with the
    top eigenvalue re-solved onto the level set, and counted.
    """
    lam_batch = np.asarray(lam_batch, dtype=float)
    f_batch = np.asarray(f_batch, dtype=float)
    count, n = lam_batch.shape
    f_max = float(f_batch.max())
    if eps_grid is None:
        eps_grid = (1e-2, 1e-3, 1e-4)
    if a_grid is None:
        recipe = (4.0 * n**6 * f_max**4 + n * f_max**2) / CONVEX_M_SMALL
        a_grid = (1.0, 10.0, 100.0, recipe)

    lam_use = lam_batch.copy()
    scale = np.abs(lam_batch).max(axis=1)
    gaps = -np.diff(lam_batch, axis=1)
    bad = np.flatnonzero(np.any(gaps < 1e-6 * scale[:, None], axis=1))
    flagged = bad.size
    for i in bad:
        # spread the tail apart and re-solve the top eigenvalue so the
        # perturbed sample stays on its level set
        theta_i = phase(lam_batch[i], float(f_batch[i]))
        tail = lam_batch[i, 1:] - 1e-6 * scale[i] * np.arange(1, n)
        try:
            top = solve_top_eigenvalue(tail, float(f_batch[i]), theta_i)
            lam_use[i] = np.concatenate([[top], tail])
        except (InfeasibleError, OrderingError):
            pass  # keep the original sample, counted as flagged

    ginv_all = 1.0 / (f_batch[:, None] ** 2 + lam_use**2)
    tr_all = np.sum(lam_use, axis=1)
    best = None
    for eps in eps_grid:
        for big_a in a_grid:
            big_a = max(float(big_a), 1.0)
            raw_margins = np.empty((count, n))
            worst = math.inf
            for gamma in range(n):
                raw, normed = q_gamma_min_batch(lam_use, f_batch, gamma, eps, big_a)
                raw_margins[:, gamma] = (
                    raw * (big_a + tr_all) / (3.0 * ginv_all.min(axis=1))
                )
                worst = min(worst, float(normed.min()))
            if best is None or worst > best[0]:
                best = (worst, eps, big_a, raw_margins)

    worst, eps, big_a, raw_margins = best
    delta = float(max(raw_margins.min(), 0.0))
    counterexamples = []
    if worst < margin_floor:
        idx = np.argwhere(raw_margins < margin_floor)
        for i, gamma in idx[:50]:
            counterexamples.append(
                counterexample_record(
                    lam_use[i], float(f_batch[i]), int(gamma),
                    {"eps": eps, "A": big_a},
                    float(raw_margins[i, gamma]),
                )
            )
    return CertificationResult(
        eps=eps,
        big_a=big_a,
        delta=delta,
        worst_margin=float(worst),
        samples=count,
        flagged_degenerate=flagged,
        counterexamples=counterexamples,
    )
