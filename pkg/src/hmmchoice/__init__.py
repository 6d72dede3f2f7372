"""Hidden Markov model with a multinomial logit choice kernel.

Latent preference classes differ in consideration sets and taste
parameters; class membership evolves as a first-order Markov chain driven
by covariates and by the expected maximum utility each class offers.  The
package covers data handling, exact-likelihood estimation (EM and
quasi-Newton), synthetic-panel simulation, left-censoring analysis, and
sample-enumeration forecasting under policy scenarios.
"""

from ._kernels import BACKEND as kernel_backend
from .choice import (
    class_choice_probs,
    class_emission_logprob,
    class_utilities,
    consumer_surplus,
)
from .estimation import (
    EstimationError,
    FitOptions,
    FitReport,
    dataset_ll_and_grad,
    em_fit,
    fit_metrics,
    gradient_fit,
    multi_start,
    null_log_likelihood,
    standard_errors,
)
from .forecast import (
    ForecastResult,
    Scenario,
    average_transition_probs,
    estimated_class_shares,
    forecast,
    lccm_fit_and_forecast,
    scenario_from_json,
    scenario_to_json,
)
from .hmm import (
    StatePosterior,
    ZeroLikelihoodError,
    forward_loglik,
    initialization_probs,
    propagate_marginals,
    smoothed_posteriors,
    transition_matrix,
)
from .model import (
    ClassSpec,
    ClassTasteParams,
    InitParams,
    ModelSpec,
    ParameterSet,
    SpecError,
    TransParams,
    params_from_json,
    params_to_json,
    spec_from_json,
    spec_to_json,
)
from .panel import (
    PanelDataset,
    PanelValidationError,
    censor_left,
    load_panel,
    select_wave,
    validate_dataset,
    write_panel,
)
from .simulation import GenerativeConfig, generate_panel, table1_experiment

__version__ = "0.1.0"
