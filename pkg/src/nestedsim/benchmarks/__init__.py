"""Case studies: straddle-option risk and newsvendor input uncertainty."""

from .baselines import laguerre_features, quadratic_features, regression_baseline, standard_design
from .erm import (
    StraddleConfig,
    erm_oracle,
    straddle_model,
    straddle_outer_scenarios,
    straddle_payoff,
    straddle_true_mu,
)
from .newsvendor import (
    NewsvendorConfig,
    newsvendor_profit,
    newsvendor_true_mu,
    posterior_sample,
)
from .studies import (
    budget_growth_study,
    coverage_study,
    run_macro_study,
    variance_ratio_diagnostic,
)
