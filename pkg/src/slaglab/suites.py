"""Named verification suites over the lemma machinery.

Each suite draws its own reproducible samples (seeded), evaluates the
relevant margins, and returns a :class:`SuiteResult` whose ``passed`` flag
is the acceptance verdict; any violating sample is dumped as a one-line
counterexample record.  The CLI ``verify`` subcommand and the acceptance
test module both run through these entry points.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import forms, geometry
from .spectral import (
    HALF_PI,
    PI,
    LevelSetSampler,
    Spectrum,
    jacobi_eigh,
    sigma_k,
)

EQUIV_TOL = 1e-9
DEAD_BAND = 1e-9
CHAIN_TOL = 1e-10
SIN_SUM_TOL = 1e-12
ORDERING_TOL = 1e-10
RECIP_TOL = 1e-12
TY_TOL = 1e-9


@dataclass
class SuiteResult:
    name: str
    passed: bool
    samples: int
    checks: dict = field(default_factory=dict)
    counterexamples: list = field(default_factory=list)
    runtime_s: float = 0.0

    def summary_lines(self):
        status = "PASS" if self.passed else "FAIL"
        yield (
            f"[{status}] suite={self.name} samples={self.samples} "
            f"runtime={self.runtime_s:.2f}s"
        )
        for key, val in self.checks.items():
            yield f"    {key}: {val}"
        if self.counterexamples:
            yield f"    counterexamples: {len(self.counterexamples)}"


def _record_violations(result, lam, f, mask, gamma, params, margins, cap=25):
    for i in np.flatnonzero(mask)[:cap]:
        result.counterexamples.append(
            forms.counterexample_record(
                lam[i], float(f[i]), gamma, params, float(margins[i])
            )
        )


def suite_equivalence(samples: int, seed: int) -> SuiteResult:
    """sigma_2 = f^2 (n=3, theta=pi/2) and sigma_3/sigma_1 = f^2 (n=3,4,
    theta=pi) on level-set samples, relative residual <= 1e-9."""
    t0 = time.perf_counter()
    result = SuiteResult("equivalence", True, 0)
    cases = [(3, HALF_PI, "sigma2"), (3, PI, "quotient"), (4, PI, "quotient")]
    rng = np.random.default_rng(seed)
    for n, theta, kind in cases:
        sampler = LevelSetSampler(n, theta)
        lam, f = sampler.sample(samples, rng)
        lam_ld = lam.astype(np.longdouble)
        f_ld = f.astype(np.longdouble)
        if kind == "sigma2":
            resid = sigma_k(lam_ld, 2) - f_ld**2
        else:
            resid = sigma_k(lam_ld, 3) / sigma_k(lam_ld, 1) - f_ld**2
        rel = np.abs(resid).astype(float) / np.maximum(1.0, f**2)
        key = f"n={n},{kind}"
        result.checks[f"max_rel_residual[{key}]"] = float(rel.max())
        result.checks[f"rejection_rate[{key}]"] = sampler.stats.rejection_rate
        bad = rel > EQUIV_TOL
        if np.any(bad):
            result.passed = False
            _record_violations(result, lam, f, bad, -1, {"theta": float(theta)}, rel)
        result.samples += samples
    result.runtime_s = time.perf_counter() - t0
    return result


def suite_appendix(samples: int, seed: int) -> SuiteResult:
    """Sign of 1 - sum L_i^2/a_i against PSD status of diag(a) - L L^T over
    random draws, n = 2..6; zero mismatches allowed outside the 1e-9 dead
    band around zero."""
    t0 = time.perf_counter()
    result = SuiteResult("appendix", True, 0)
    rng = np.random.default_rng(seed)
    dims = (2, 3, 4, 5, 6)
    per_dim = max(1, samples // len(dims))
    total_mismatch = 0
    ambiguous_total = 0
    for n in dims:
        a = np.exp(rng.uniform(math.log(0.1), math.log(10.0), (per_dim, n)))
        l_vec = rng.standard_normal((per_dim, n))
        crit, psd = forms.diagonalize_psd(a, l_vec)
        # refine near-singular classifications in extended precision
        mats = np.zeros((per_dim, n, n), dtype=np.longdouble)
        idx = np.arange(n)
        scale = np.maximum(np.max(a, axis=1), np.max(l_vec**2, axis=1))
        eig64 = None
        ambiguous = np.abs(crit) <= 10 * DEAD_BAND
        ambiguous_total += int(ambiguous.sum())
        if np.any(ambiguous):
            sub = np.flatnonzero(ambiguous)
            mats = np.zeros((sub.size, n, n), dtype=np.longdouble)
            mats[:, idx, idx] = a[sub]
            mats -= l_vec[sub][:, :, None] * l_vec[sub][:, None, :]
            mats /= scale[sub][:, None, None]
            eig_ld = jacobi_eigh(mats)[0][:, -1]
            psd = psd.copy()
            psd[sub] = eig_ld >= -np.longdouble(3e-17)
        decided = np.abs(crit) > DEAD_BAND
        mism = decided & ((crit > 0.0) != psd)
        total_mismatch += int(mism.sum())
        if np.any(mism):
            result.passed = False
            _record_violations(
                result, a, np.ones(per_dim), mism, n, {"kind": 0.0}, crit
            )
        result.samples += per_dim
    result.checks["mismatches"] = total_mismatch
    result.checks["ambiguous_refined"] = ambiguous_total
    result.runtime_s = time.perf_counter() - t0
    return result


def suite_jacobi(samples: int, seed: int) -> SuiteResult:
    """Split-form chain margins with the printed recipes: the gamma = n
    split at eps = 0.1 on (n=3, pi/2) negative samples, the full chain set
    on (n=4, pi) negative samples, and the convex branch with the
    A >= 4 n^6 |f|^4 / m recipe on both dimensions."""
    t0 = time.perf_counter()
    result = SuiteResult("jacobi", True, 0)
    rng = np.random.default_rng(seed)

    def check_min(key, margins, lam, f, gamma, params):
        result.checks[key] = float(np.nanmin(margins))
        bad = margins < -CHAIN_TOL
        bad &= ~np.isnan(margins)
        if np.any(bad):
            result.passed = False
            _record_violations(result, lam, f, bad, gamma, params, margins)

    # (a) n=3, theta=pi/2, lam_3 < 0: single split at the printed eps
    sampler = LevelSetSampler(3, HALF_PI, sign_mode="neg_last")
    lam, f = sampler.sample(samples, rng)
    p1, mins = forms.hat_top_margins_batch(lam, f, forms.EPS_TOP)
    check_min("hatQ_top_head[n=3]", p1, lam, f, 2, {"eps": forms.EPS_TOP})
    check_min("hatQ_top_min[n=3]", mins, lam, f, 2, {"eps": forms.EPS_TOP})
    result.samples += samples

    # (b) n=4, theta=pi, lam_4 < 0: all chains
    sampler = LevelSetSampler(4, PI, sign_mode="neg_last")
    lam, f = sampler.sample(samples, rng)
    p1, mins = forms.hat_top_margins_batch(lam, f, forms.EPS_TOP)
    check_min("hatQ_top_head[n=4]", p1, lam, f, 3, {"eps": forms.EPS_TOP})
    check_min("hatQ_top_min[n=4]", mins, lam, f, 3, {"eps": forms.EPS_TOP})
    for gamma in range(2):
        best_p1 = np.full(samples, -np.inf)
        best_p2 = np.full(samples, np.nan)
        for eps, eps_hat in (forms.EPS_PAIRS_LOW, forms.EPS_PAIRS_LOW_ALT):
            p1, p2, _, _ = forms.hat_pair_margins_batch(
                lam, f, gamma, eps, eps_hat, low=True
            )
            margin = np.where(np.isnan(p2), p1, np.minimum(p1, -p2))
            prev = np.where(np.isnan(best_p2), best_p1, np.minimum(best_p1, -best_p2))
            take = margin > prev
            best_p1 = np.where(take, p1, best_p1)
            best_p2 = np.where(take, p2, best_p2)
        check_min(
            f"low_split_head[n=4,g={gamma}]", best_p1, lam, f, gamma,
            {"eps": forms.EPS_PAIRS_LOW[0]},
        )
        check_min(
            f"low_split_recip[n=4,g={gamma}]", -best_p2, lam, f, gamma,
            {"eps": forms.EPS_PAIRS_LOW[0]},
        )
    p1, p2, _, _ = forms.hat_pair_margins_batch(
        lam, f, 2, forms.EPS_NEXT_TO_TOP, None, low=False
    )
    check_min("next_split_head[n=4]", p1, lam, f, 2, {"eps": forms.EPS_NEXT_TO_TOP})
    check_min("next_split_recip[n=4]", -p2, lam, f, 2, {"eps": forms.EPS_NEXT_TO_TOP})
    result.samples += samples

    # (c) convex branch, n = 3 and 4, printed A recipe
    for n, theta in ((3, HALF_PI), (4, PI)):
        sampler = LevelSetSampler(n, theta, sign_mode="nonneg")
        lam, f = sampler.sample(samples, rng)
        heads, cons, _ = forms.convex_margins_batch(lam, f)
        check_min(f"convex_head[n={n}]", heads, lam, f, -1, {"m": forms.CONVEX_M_SMALL})
        check_min(f"convex_min[n={n}]", cons, lam, f, -1, {"m": forms.CONVEX_M_SMALL})
        result.samples += samples

    result.runtime_s = time.perf_counter() - t0
    return result


def suite_wang_yuan(samples: int, seed: int) -> SuiteResult:
    """Ordering fact lam_i >= (n-i) max(-lam_n, 0) and reciprocal-sum fact
    on critical level sets, n = 3 and 4."""
    t0 = time.perf_counter()
    result = SuiteResult("wang-yuan", True, 0)
    rng = np.random.default_rng(seed)
    for n, theta in ((3, HALF_PI), (4, PI)):
        sampler = LevelSetSampler(n, theta)
        lam, f = sampler.sample(samples, rng)
        neg_part = np.maximum(-lam[:, -1], 0.0)
        weights = (n - np.arange(1, n))[None, :]
        order_margin = np.min(lam[:, :-1] - weights * neg_part[:, None], axis=1)
        result.checks[f"ordering_min[n={n}]"] = float(order_margin.min())
        bad = order_margin < -ORDERING_TOL
        if np.any(bad):
            result.passed = False
            _record_violations(result, lam, f, bad, -1, {}, order_margin)
        negative = lam[:, -1] < 0.0
        recip = np.full(samples, -np.inf)
        recip[negative] = np.sum(1.0 / lam[negative], axis=1)
        result.checks[f"reciprocal_max[n={n}]"] = float(recip[negative].max())
        result.checks[f"negative_fraction[n={n}]"] = float(negative.mean())
        bad = recip > RECIP_TOL
        if np.any(bad):
            result.passed = False
            _record_violations(result, lam, f, bad, -1, {}, recip)
        result.samples += samples
    result.runtime_s = time.perf_counter() - t0
    return result


def suite_lemma_sin2theta(samples: int, seed: int) -> SuiteResult:
    """Pairwise sums lam_i/(f^2+lam_i^2) + lam_n/(f^2+lam_n^2) <= 0 when
    lam_n <= -f, on critical level sets."""
    t0 = time.perf_counter()
    result = SuiteResult("lemma-4.1", True, 0)
    rng = np.random.default_rng(seed)
    for n, theta in ((3, HALF_PI), (4, PI)):
        sampler = LevelSetSampler(n, theta, sign_mode="neg_last")
        collected_lam = []
        collected_f = []
        got = 0
        while got < samples:
            lam, f = sampler.sample(samples, rng)
            keep = lam[:, -1] / f <= -1.0
            collected_lam.append(lam[keep])
            collected_f.append(f[keep])
            got += int(keep.sum())
        lam = np.concatenate(collected_lam)[:samples]
        f = np.concatenate(collected_f)[:samples]
        terms = lam / (f[:, None] ** 2 + lam**2)
        margins = np.max(terms[:, :-1] + terms[:, -1:], axis=1)
        result.checks[f"max_pair_sum[n={n}]"] = float(margins.max())
        bad = margins > SIN_SUM_TOL
        if np.any(bad):
            result.passed = False
            _record_violations(result, lam, f, bad, -1, {}, margins)
        result.samples += samples
    result.runtime_s = time.perf_counter() - t0
    return result


def suite_ty_identity(samples: int, seed: int) -> SuiteResult:
    """Trace identity T V f^(2-n) = trig expansion, relative gap <= 1e-9,
    over mixed-f level-set samples."""
    t0 = time.perf_counter()
    result = SuiteResult("ty-identity", True, 0)
    rng = np.random.default_rng(seed)
    for n, theta in ((3, HALF_PI), (3, PI), (4, PI)):
        sampler = LevelSetSampler(n, theta, f_range=(0.5, 4.0))
        lam, f = sampler.sample(samples, rng)
        gaps = np.empty(samples)
        for i in range(samples):
            _, _, gaps[i] = geometry.ty_identity_check(
                Spectrum(lam[i], float(f[i])), theta
            )
        result.checks[f"max_rel_gap[n={n},theta={float(theta):.3f}]"] = float(
            gaps.max()
        )
        bad = gaps > TY_TOL
        if np.any(bad):
            result.passed = False
            _record_violations(result, lam, f, bad, -1, {"theta": float(theta)}, gaps)
        result.samples += samples
    result.runtime_s = time.perf_counter() - t0
    return result


def suite_sigma_divergence(samples: int, seed: int) -> SuiteResult:
    """Divergence structure of sigma_k: k = 1 exact to rounding, k = 2 weak
    residual decaying at order >= 1.8, and d sigma_k / d lam_i >= 0 on
    critical samples."""
    t0 = time.perf_counter()
    result = SuiteResult("sigma-divergence", True, 0)

    rep1 = geometry.divergence_sigma_k(
        lambda x: 0.3 * np.sum(x**2, axis=-1) + 0.1 * x[..., 0] * x[..., 1],
        lambda x: np.maximum(0.0, 1.0 - np.sum(x**2, axis=-1) / 0.49) ** 2,
        1,
        3,
        shapes=(9, 17),
    )
    result.checks["k1_max_residual"] = max(rep1["residuals"])
    if max(rep1["residuals"]) > 1e-12:
        result.passed = False

    rep2 = geometry.divergence_sigma_k(
        lambda x: np.sum(x**4, axis=-1) / 12.0,
        lambda x: np.maximum(0.0, 1.0 - np.sum(x**2, axis=-1) / 0.49) ** 3,
        2,
        3,
        shapes=(9, 17, 33),
    )
    result.checks["k2_residuals"] = rep2["residuals"]
    result.checks["k2_slopes"] = rep2["slopes"]
    if min(rep2["slopes"]) < 1.8:
        result.passed = False

    rng = np.random.default_rng(seed)
    count = max(1, min(samples, 5000))
    worst = math.inf
    for n, theta in ((3, HALF_PI), (4, PI)):
        sampler = LevelSetSampler(n, theta)
        lam, _ = sampler.sample(count, rng)
        worst = min(worst, geometry.sigma_partials_nonneg(lam))
    result.checks["sigma_partial_min"] = worst
    if worst < -1e-12:
        result.passed = False
    result.samples = 2 * count
    result.runtime_s = time.perf_counter() - t0
    return result


SUITES = {
    "equivalence": suite_equivalence,
    "appendix": suite_appendix,
    "jacobi": suite_jacobi,
    "wang-yuan": suite_wang_yuan,
    "lemma-4.1": suite_lemma_sin2theta,
    "ty-identity": suite_ty_identity,
    "sigma-divergence": suite_sigma_divergence,
}


def run_suite(name: str, samples: int, seed: int) -> SuiteResult:
    if name not in SUITES:
        raise KeyError(
            f"unknown suite {name!r}; available: {', '.join(sorted(SUITES))}"
        )
    return SUITES[name](samples, seed)
