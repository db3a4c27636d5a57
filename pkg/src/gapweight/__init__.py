"""Neural contextual bandits from online regression with inverse gap weighting.

A smooth feedforward network is trained by projected online gradient descent
over a layer-wise Frobenius ball, on a sign-perturbed prediction whose
averaged loss has a unique minimizer.  Two policies reduce bandit feedback to
that regressor: plain inverse gap weighting on square-loss scores and
re-weighted inverse gap weighting on binary-KL scores.  A diagnostics suite
checks the structural conditions behind the approach and evaluates the
regret-bound formulas of matrix-inversion baselines on adversarial instances.
"""

from .net import (
    InitSnapshot,
    NetDims,
    NetworkConfig,
    NetworkParams,
    backward,
    forward,
    init_params,
)
from .ogd import (
    BallSpec,
    OgdConfig,
    RegressionStream,
    RegretTrace,
    estimate_comparator,
    ogd_step,
    project_ball,
    run_online_regression,
    step_size,
)
from .perturb import (
    PerturbationSet,
    PredictorConfig,
    averaged_loss,
    averaged_loss_grad,
    averaged_prediction,
    default_num_draws,
    make_perturbations,
    perturbed_output,
)
from .policies import (
    ArmDistribution,
    BanditLearner,
    PolicyConfig,
    bandit_round,
    bandit_update,
    gamma_at,
    igw_distribution,
    reweighted_igw_distribution,
)

__version__ = "0.1.0"

__all__ = [
    "ArmDistribution",
    "BallSpec",
    "BanditLearner",
    "InitSnapshot",
    "NetDims",
    "NetworkConfig",
    "NetworkParams",
    "OgdConfig",
    "PerturbationSet",
    "PolicyConfig",
    "PredictorConfig",
    "RegressionStream",
    "RegretTrace",
    "averaged_loss",
    "averaged_loss_grad",
    "averaged_prediction",
    "backward",
    "bandit_round",
    "bandit_update",
    "default_num_draws",
    "estimate_comparator",
    "forward",
    "gamma_at",
    "igw_distribution",
    "init_params",
    "make_perturbations",
    "ogd_step",
    "perturbed_output",
    "project_ball",
    "reweighted_igw_distribution",
    "run_online_regression",
    "step_size",
]
