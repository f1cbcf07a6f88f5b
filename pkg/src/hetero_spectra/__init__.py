"""Low-rank plus heteroskedastic-diagonal covariance decomposition.

Core solver: a convex nuclear-norm penalized fit of ``sigma = L + D``
with L positive semidefinite and D diagonal, solved by alternating
spectral shrinkage. Alongside it, the family of diagonal-imputation
spectral baselines, subspace metrics, a seeded synthetic-instance lab
and a solve/simulate/plot command line.
"""

from .matcore import (
    EigenDecomp,
    EigenSolverError,
    check_orthonormal,
    eig_sym,
    nuclear_norm_sym,
    pdiag,
    poffdiag,
    spectral_norm_sym,
    symmetrize,
)
from .shrinkage import (
    ProxSpec,
    apply_prox,
    best_rank_r,
    best_rank_r_psd,
    soft_threshold_psd,
    soft_threshold_sym,
)
from .solvers import (
    Decomposition,
    SolverTrace,
    StopRule,
    alternating_solve,
    deflated_heteropca,
    diag_deleted_pca,
    extract_subspace,
    heteropca,
    heteropca_psd,
    numerical_rank_sym,
    objective_F,
    pca_baseline,
    rmtfa,
    soft_impute_diag,
)
from .metrics import (
    SinThetaEvent,
    coherence,
    heywood_check,
    is_balanced,
    ledermann_bound,
    max_row_norm,
    psi_residual,
    reliability_coefficient,
    sin_theta,
    sin_theta_event,
    spike_pca_sin_theta,
)
from .simlab import (
    METHOD_TAGS,
    ExperimentConfig,
    Instance,
    ModelParams,
    ResultRow,
    gen_instance,
    gen_masked,
    gen_noise,
    gen_signal,
    resolve_tau,
    run_experiment,
)

__version__ = "0.1.0"
