"""Bayesian optimization with trusted-maximizers entropy search acquisitions."""

from .acquisition import OptConfig, batch_entropy, gain_vs_batch_size, optimize_acquisition
from .gp import (
    AugmentedConditioner,
    Domain,
    GPPosterior,
    KernelHyperparams,
    fit_hyperparams,
    fit_posterior,
    log_marginal_likelihood,
    predict_given_function_values,
    se_kernel,
    se_kernel_matrix,
)
from .harness import BenchmarkSpec, emit_plot, immediate_regret, run
from .objectives import objective
from .sampling import (
    FeatureFunctionSample,
    TrustedSet,
    build_trusted_set,
    maximize_sampled_function,
    sample_posterior_function,
    trusted_prob,
    trusted_probs,
)
from .tes_ep import (
    EPApprox,
    alpha_ep,
    alpha_ep_value_and_grad,
    ep_approximate,
    ep_gaussian,
    prepare_ep_state,
    predictive_projection,
    q_ep_predictive,
)
from .tes_sp import (
    ConditionedSampleSet,
    alpha_sp,
    alpha_sp_value_and_grad,
    group_by_maximizer,
    importance_sample,
    prepare_sp_state,
    q_sp_log_density,
    rejection_sample,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
