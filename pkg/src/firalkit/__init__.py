"""firalkit: batch active learning for multiclass logistic regression.

The toolkit selects which unlabeled points to annotate by minimizing the
Fisher information ratio trace((H_o + H_z)^{-1} H_p) over candidate
weightings, then rounding the weights into concrete picks.  Two solver
stacks are provided: a dense exact one that doubles as the correctness
oracle, and a matrix-free approximate one built from Kronecker-structured
matvecs, Hutchinson gradient estimation, block-preconditioned CG, and a
block-diagonal rounding loop.
"""

from .baselines import entropy_select, kmeans_select, random_select
from .data import Dataset, generate_blobs, load_dataset, load_matrix, save_dataset, save_matrix
from .driver import ExperimentConfig, firal_select, run_experiment
from .errors import (
    BreakdownError,
    ConfigError,
    ConvergenceError,
    DenominatorNonpositiveError,
    NotPositiveDefiniteError,
    NumericalError,
    SingularMatrixError,
    SizeCapError,
)
from .fisher import (
    FisherContext,
    block_hessian_sum,
    block_preconditioner,
    dense_hessian,
    hessian_matvec,
    info_block_diag,
    info_matvec,
    info_operator,
    pool_matvec,
    pool_operator,
)
from .linalg import (
    LinearOperator,
    PcgResult,
    cholesky_factor,
    cholesky_solve,
    pcg_solve,
    rademacher,
    ridge_cholesky,
    solve_trace_shift,
    sym_eigvals,
)
from .logistic import (
    ClassProbTable,
    ModelWeights,
    class_probs,
    entropy_scores,
    fit,
    predict,
    predict_accuracy,
    prob_table,
)
from .relax import (
    RelaxConfig,
    RelaxTrace,
    estimate_gradients,
    exact_gradient,
    exact_objective,
    hutchinson_objective,
    mirror_step,
    solve_exact,
    solve_fast,
)
from .rounding import (
    RoundConfig,
    RoundResult,
    candidate_scores,
    default_eta_grid,
    rank_one_update,
    round_blockdiag,
    round_exact,
    tune_eta,
)

__version__ = "0.1.0"
