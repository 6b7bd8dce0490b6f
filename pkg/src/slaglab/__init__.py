"""slaglab: numerical laboratory for the twisted special Lagrangian equation.

The operator under study is sum_i arctan(lambda_i(D^2 u) / f(x)) = Theta on
box domains, with positive Lipschitz twist f.  The package provides

* :mod:`slaglab.spectral`   -- eigenvalue/phase kernel and level-set samplers
* :mod:`slaglab.geometry`   -- induced-graph geometry and integral checks
* :mod:`slaglab.forms`      -- quadratic-form certification machinery
* :mod:`slaglab.grids`      -- box grids, finite differences, persistence
* :mod:`slaglab.solver`     -- damped-Newton continuation Dirichlet solver
* :mod:`slaglab.estimates`  -- a priori estimate measurement and sharpness
* :mod:`slaglab.exprlang`   -- the tiny expression language for twist fields
* :mod:`slaglab.cli`        -- the batch front door (``slaglab`` command)
"""

from .errors import (
    ConstructionError,
    ContinuationError,
    DegenerateInputError,
    DomainError,
    InfeasibleError,
    InsufficientDataError,
    LinearSolverError,
    NonconvergenceError,
    OrderingError,
    PreconditionError,
    SlagError,
    TruncatedBallError,
)
from .spectral import (
    HALF_PI,
    PI,
    LevelSetSampler,
    PhaseSpec,
    Spectrum,
    calibrate_f,
    check_quotient_equivalence,
    eigs_sym,
    jacobi_eigh,
    lemma_sin2theta,
    phase,
    phase_linearization,
    sigma_k,
    solve_top_eigenvalue,
    wang_yuan_facts,
)
from .grids import GridFunction
from .geometry import (
    GraphGrid,
    GraphPointData,
    beltrami_apply,
    christoffel,
    divergence_sigma_k,
    induced_metric,
    mean_curvature,
    meanvalue_check,
    monotonicity_profile,
    sobolev_check,
    ty_identity_check,
    z_divergence,
)
from .forms import (
    JacobiFormParams,
    ThirdDerivSlice,
    certify_trace_jacobi,
    diagonalize_psd,
    q_gamma,
    q_gamma_min,
    verify_differentiated_identities,
    verify_split_forms,
)
from .solver import (
    ContinuationConfig,
    DirichletProblem,
    NewtonConfig,
    barrier_check,
    continuation_solve,
    jacobian_assemble,
    manufactured_problem,
    newton_solve,
    residual,
)
from .estimates import (
    estimate_report,
    gradient_testfunction,
    sharp_contrast_series,
    sharp_example,
)
from .exprlang import parse_expression
from .probspec import ProblemSpec
from .suites import SUITES, run_suite

__version__ = "0.1.0"
