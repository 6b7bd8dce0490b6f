"""Dirichlet solver for the twisted phase equation on box domains.

The discrete problem prescribes, at every interior node of [-1, 1]^n,

    sum_i arctan( lam_i(H_h u) / f(x) ) = theta,

with H_h the centred finite-difference Hessian and Dirichlet values pinned
on the boundary nodes.  Newton's method with residual backtracking solves
each fixed problem; the linearisation at a node is the positive-definite
matrix sum_k [f/(f^2+lam_k^2)] v_k v_k^T contracted with the stencil, and
the resulting sparse system is solved by restarted GMRES with a diagonal
preconditioner.  Harder twists are reached by continuation along
f_t = 1 - t + t f with the boundary data blended the same way, warm-started
from the exact quadratic solution at t = 0 and bisecting any segment whose
Newton solve fails.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import LinearOperator, gmres

from .errors import (
    ConstructionError,
    ContinuationError,
    DomainError,
    LinearSolverError,
    NonconvergenceError,
)
from .grids import GridFunction, harmonic_extension, hessian_fd
from .spectral import calibrate_f, jacobi_eigh, phase


@dataclass
class NewtonConfig:
    newton_tol: float = 1e-10
    max_newton: int = 30
    max_backtrack: int = 20
    krylov_rtol: float = 1e-10
    krylov_restart: int = 50
    krylov_maxouter: int = 10  # restarts; total inner iterations <= 500


@dataclass
class ContinuationConfig:
    waypoints: int = 5
    max_bisect: int = 6
    newton: NewtonConfig = field(default_factory=NewtonConfig)

    def path(self):
        return np.linspace(0.0, 1.0, max(2, self.waypoints))


@dataclass
class SolveReport:
    iterations: list = field(default_factory=list)
    final_residual: float = np.inf
    hessian_range: tuple = (np.nan, np.nan)
    wall_time: float = 0.0
    path: list = field(default_factory=list)

    def merge(self, other: "SolveReport", t: float):
        self.iterations.extend(other.iterations)
        self.final_residual = other.final_residual
        self.hessian_range = other.hessian_range
        self.wall_time += other.wall_time
        self.path.append((t, other.final_residual, sum(other.iterations)))


def _check_twist(f: GridFunction):
    bad = np.argwhere(f.values <= 0.0)
    if bad.size:
        raise DomainError(
            f"twist field is non-positive at node {tuple(int(i) for i in bad[0])}"
        )


def _check_theta(n: int, theta: float):
    if not abs(theta) < n * np.pi / 2:
        raise DomainError(
            f"theta={theta!r} outside the phase range (-n*pi/2, n*pi/2)"
        )


def _interior_state(u: GridFunction, f: GridFunction, theta: float):
    """Residual and spectral data on interior nodes.

    Returns (residual flat, lam (m, n), frames (m, n, n), f flat).
    """
    inner = (slice(1, -1),) * u.n
    hess = hessian_fd(u.values, u.h)[inner]
    m = hess.shape[: u.n]
    lam, frames = jacobi_eigh(hess.reshape(-1, u.n, u.n))
    f_in = f.values[inner].reshape(-1)
    resid = phase(lam, f_in) - float(theta)
    return resid, lam, frames, f_in


def residual(u: GridFunction, f: GridFunction, theta: float) -> np.ndarray:
    """Pointwise phase residual on interior nodes (grid-shaped, zero on the
    boundary ring)."""
    _check_twist(f)
    _check_theta(u.n, theta)
    r, _, _, _ = _interior_state(u, f, theta)
    out = np.zeros_like(u.values)
    out[(slice(1, -1),) * u.n] = r.reshape((u.shape - 2,) * u.n)
    return out


def _stencil_offsets(n: int):
    """(offset vector, coefficient selector) pairs of the FD Hessian.

    The selector is ('diag', a) or ('cross', a, b, sign); coefficients are
    in units of 1/h^2.
    """
    offsets = []
    for a in range(n):
        e = np.zeros(n, dtype=int)
        e[a] = 1
        offsets.append((tuple(e), ("diag", a)))
        offsets.append((tuple(-e), ("diag", a)))
    for a, b in combinations(range(n), 2):
        for sa in (1, -1):
            for sb in (1, -1):
                o = np.zeros(n, dtype=int)
                o[a], o[b] = sa, sb
                offsets.append((tuple(o), ("cross", a, b, sa * sb)))
    return offsets


def jacobian_assemble(u: GridFunction, f: GridFunction, theta: float):
    """Sparse Jacobian of the interior residual with respect to interior
    values (Dirichlet neighbours dropped).

    Row weights are dF/dM = sum_k [f/(f^2+lam_k^2)] v_k v_k^T contracted
    with the Hessian stencil: the centre carries -2/h^2 sum_a dF_aa, axis
    neighbours dF_aa/h^2, diagonal neighbours +-dF_ab/(2 h^2).
    """
    _check_twist(f)
    _check_theta(u.n, theta)
    _, lam, frames, f_in = _interior_state(u, f, theta)
    return _jacobian_from_state(u, lam, frames, f_in)


def _jacobian_from_state(u, lam, frames, f_in):
    n, h = u.n, u.h
    inner = u.shape - 2
    m = inner**n
    coef = f_in[:, None] / (f_in[:, None] ** 2 + lam**2)
    dmat = np.einsum("mik,mk,mjk->mij", frames, coef, frames)

    idx = np.arange(m).reshape((inner,) * n)
    rows, cols, data = [], [], []

    center = -2.0 / h**2 * np.einsum("maa->m", dmat)
    rows.append(idx.reshape(-1))
    cols.append(idx.reshape(-1))
    data.append(center)

    def shifted_pairs(offset):
        src = []
        dst = []
        for k, o in enumerate(offset):
            if o == 0:
                src.append(slice(None))
                dst.append(slice(None))
            elif o == 1:
                src.append(slice(0, inner - 1))
                dst.append(slice(1, inner))
            else:
                src.append(slice(1, inner))
                dst.append(slice(0, inner - 1))
        return idx[tuple(src)].reshape(-1), idx[tuple(dst)].reshape(-1)

    for offset, tag in _stencil_offsets(n):
        r_idx, c_idx = shifted_pairs(offset)
        if tag[0] == "diag":
            vals = dmat[:, tag[1], tag[1]] / h**2
        else:
            _, a, b, sign = tag
            vals = sign * dmat[:, a, b] / (2.0 * h**2)
        rows.append(r_idx)
        cols.append(c_idx)
        data.append(vals[r_idx])

    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    data = np.concatenate(data)
    return sparse.csr_matrix((data, (rows, cols)), shape=(m, m))


def _solve_linear(jac, rhs, cfg: NewtonConfig):
    diag = jac.diagonal()
    if np.any(diag == 0.0):
        raise LinearSolverError("zero diagonal entry in the Jacobian")
    precond = LinearOperator(jac.shape, matvec=lambda x: x / diag)
    sol, info = gmres(
        jac,
        rhs,
        rtol=cfg.krylov_rtol,
        atol=0.0,
        restart=cfg.krylov_restart,
        maxiter=cfg.krylov_maxouter,
        M=precond,
    )
    if info != 0:
        raise LinearSolverError(f"GMRES failed to converge (info={info})")
    return sol


def newton_solve(
    u0: GridFunction,
    f: GridFunction,
    theta: float,
    cfg: NewtonConfig | None = None,
):
    """Damped Newton iteration from ``u0`` (whose boundary trace is kept
    fixed).  Returns (solution, SolveReport); raises NonconvergenceError
    carrying the best iterate on stall."""
    cfg = cfg or NewtonConfig()
    _check_twist(f)
    _check_theta(u0.n, theta)
    t_start = time.perf_counter()
    u = u0.copy()
    inner = (slice(1, -1),) * u.n
    report = SolveReport()

    resid, lam, frames, f_in = _interior_state(u, f, theta)
    norm = float(np.abs(resid).max())
    for iteration in range(cfg.max_newton):
        if norm <= cfg.newton_tol:
            break
        jac = _jacobian_from_state(u, lam, frames, f_in)
        step = _solve_linear(jac, -resid, cfg)

        alpha = 1.0
        for _ in range(cfg.max_backtrack):
            trial = u.copy()
            trial.values[inner] += alpha * step.reshape(trial.values[inner].shape)
            t_resid, t_lam, t_frames, _ = _interior_state(trial, f, theta)
            t_norm = float(np.abs(t_resid).max())
            if t_norm < norm:
                u, resid, lam, frames, norm = trial, t_resid, t_lam, t_frames, t_norm
                break
            alpha *= 0.5
        else:
            report.iterations.append(iteration + 1)
            report.final_residual = norm
            report.wall_time = time.perf_counter() - t_start
            raise NonconvergenceError(
                f"line search stalled at residual {norm:.3e}",
                best=u,
                residual_norm=norm,
            )
        report.iterations.append(1)
    else:
        if norm > cfg.newton_tol:
            report.final_residual = norm
            report.wall_time = time.perf_counter() - t_start
            raise NonconvergenceError(
                f"Newton cap reached at residual {norm:.3e}",
                best=u,
                residual_norm=norm,
            )

    report.iterations = [len(report.iterations)]
    report.final_residual = norm
    report.hessian_range = (float(lam[:, -1].min()), float(lam[:, 0].max()))
    report.wall_time = time.perf_counter() - t_start
    return u, report


# ---------------------------------------------------------------------------
# continuation
# ---------------------------------------------------------------------------

@dataclass
class DirichletProblem:
    """Target twist, phase and boundary data on one grid."""

    f: GridFunction
    theta: float
    phi: GridFunction  # full grid; only the boundary ring is binding

    def __post_init__(self):
        _check_twist(self.f)
        _check_theta(self.f.n, self.theta)
        if self.phi.shape != self.f.shape:
            raise DomainError("phi and f must share one grid")

    @property
    def n(self):
        return self.f.n


def anchor_solution(problem: DirichletProblem) -> GridFunction:
    """The explicit quadratic c|x|^2/2 with c = tan(theta/n), exact for
    f == 1."""
    c = np.tan(problem.theta / problem.n)
    return GridFunction.from_callable(
        problem.n, problem.f.shape, lambda x: 0.5 * c * np.sum(x**2, axis=-1)
    )


def _blend_problem(problem: DirichletProblem, anchor: GridFunction, t: float):
    f_t = GridFunction(
        problem.n, problem.f.shape, 1.0 - t + t * problem.f.values
    )
    phi_t = GridFunction(
        problem.n,
        problem.f.shape,
        (1.0 - t) * anchor.values + t * problem.phi.values,
    )
    return f_t, phi_t


def continuation_solve(
    problem: DirichletProblem, cfg: ContinuationConfig | None = None
):
    """Warm-started Newton along f_t = 1 - t + t f with matching boundary
    blend; failed segments are bisected up to ``cfg.max_bisect`` times."""
    cfg = cfg or ContinuationConfig()
    anchor = anchor_solution(problem)
    u = anchor.copy()
    total = SolveReport()
    bnd = ~anchor.interior_mask(1)

    t_prev = 0.0
    targets = [t for t in cfg.path() if t > 0.0]
    f0, phi0 = _blend_problem(problem, anchor, 0.0)
    u, rep = newton_solve(u, f0, problem.theta, cfg.newton)
    total.merge(rep, 0.0)

    queue = list(targets)
    depth = 0
    while queue:
        t = queue[0]
        f_t, phi_t = _blend_problem(problem, anchor, t)
        guess = u.copy()
        delta_b = GridFunction(problem.n, problem.f.shape)
        delta_b.values[bnd] = phi_t.values[bnd] - guess.values[bnd]
        guess.values += harmonic_extension(delta_b).values
        try:
            u_new, rep = newton_solve(guess, f_t, problem.theta, cfg.newton)
        except (NonconvergenceError, LinearSolverError):
            depth += 1
            if depth > cfg.max_bisect:
                raise ContinuationError(
                    f"segment bisection exhausted between t={t_prev} and t={t}",
                    last_good_t=t_prev,
                    best=u,
                )
            queue.insert(0, 0.5 * (t_prev + t))
            continue
        depth = 0
        u, t_prev = u_new, t
        total.merge(rep, t)
        queue.pop(0)
    return u, total


# ---------------------------------------------------------------------------
# barriers and manufactured problems
# ---------------------------------------------------------------------------

@dataclass
class BarrierReport:
    lower_margin: float
    upper_margin: float
    domain_note: str = "box adaptation: paraboloid shifted by |x|^2 - n"

    def passed(self, phi_inf: float, tol: float = 1e-8) -> bool:
        floor = -tol * (1.0 + phi_inf)
        return self.lower_margin >= floor and self.upper_margin >= floor


def barrier_check(
    u: GridFunction, phi: GridFunction, f: GridFunction, theta: float
) -> BarrierReport:
    """Explicit quadratic barrier envelopes around a solved u:

        -|phi|_inf + (|f|_inf / 2) tan(theta/2n) (|x|^2 - n)  <=  u
        u  <=  |phi|_inf + (1/2) tan(theta/2n) (|x|^2 - n),

    evaluated at every node.  On the box the paraboloid is shifted by
    |x|^2 - n (nonpositive up to the corners) instead of the ball's
    |x|^2 - 1; the report records that adaptation.
    """
    if not 0.0 < theta < u.n * np.pi / 2:
        raise DomainError("barrier envelopes need theta in (0, n*pi/2)")
    bnd = ~u.interior_mask(1)
    phi_inf = float(np.abs(phi.values[bnd]).max())
    f_inf = float(f.values.max())
    x2 = np.sum(u.coords() ** 2, axis=-1)
    shape_term = 0.5 * np.tan(theta / (2.0 * u.n)) * (x2 - u.n)
    lower = -phi_inf + f_inf * shape_term
    upper = phi_inf + shape_term
    return BarrierReport(
        lower_margin=float((u.values - lower).min()),
        upper_margin=float((upper - u.values).min()),
    )


def manufactured_problem(kind: str, n: int, shape: int, theta: float, **params):
    """Analytic (u*, f, phi, theta) with the equation holding identically.

    Kinds: ``quadratic`` (c), ``quartic`` (a, b), ``radial-bump``
    (c, amp, width).  The Hessian of u* is analytic (not FD); f solves the
    pointwise calibration problem so the phase residual of the triple is
    zero to bisection accuracy, and u* must be convex on the box.
    """
    _check_theta(n, theta)
    grid = GridFunction(n, shape)
    coords = grid.coords()

    if kind == "quadratic":
        c = params.get("c", 0.5)
        u_star = GridFunction(n, shape, 0.5 * c * np.sum(coords**2, axis=-1))
        lam = np.broadcast_to(np.full(n, c), coords.shape)
    elif kind == "quartic":
        a = params.get("a", 0.25)
        b = params.get("b", 0.05)
        u_star = GridFunction(
            n,
            shape,
            a * np.sum(coords**2, axis=-1) + b * np.sum(coords**4, axis=-1),
        )
        lam = 2.0 * a + 12.0 * b * coords**2
    elif kind == "radial-bump":
        c = params.get("c", 0.5)
        amp = params.get("amp", 1e-4)
        width = params.get("width", 2.0)
        r2 = np.sum(coords**2, axis=-1)
        u_star = GridFunction(
            n, shape, 0.5 * c * r2 + amp * np.exp(-width * r2)
        )
        bump = amp * np.exp(-width * r2)
        hess = (
            c * np.eye(n)
            + bump[..., None, None]
            * (
                4.0 * width**2 * coords[..., :, None] * coords[..., None, :]
                - 2.0 * width * np.eye(n)
            )
        )
        lam, _ = jacobi_eigh(hess)
        lam = lam[..., ::-1]  # ascending for the convexity check below
    else:
        raise DomainError(f"unknown manufactured kind {kind!r}")

    lam_sorted = np.sort(np.asarray(lam, dtype=float), axis=-1)
    if np.any(lam_sorted[..., 0] <= 0.0):
        raise ConstructionError(
            f"manufactured {kind!r} Hessian is not positive definite on the box"
        )
    f_vals = calibrate_f(lam_sorted, theta)
    f = GridFunction(n, shape, f_vals)
    resid = np.abs(phase(lam_sorted, f_vals) - theta).max()
    if resid > 1e-12:
        raise ConstructionError(f"calibration residual {resid:.2e} too large")
    phi = u_star.copy()
    return u_star, f, phi, theta
