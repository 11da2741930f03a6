"""Synthetic blip-effect estimation for dynamic treatment panels.

Units receive sequences of categorical actions, possibly chosen adaptively,
and outcomes follow a low-rank latent factor model.  This package simulates
such panels, materializes donor sets, solves linear donor weights, and runs
three counterfactual estimators (exact-sequence matching, per-period blips,
per-lag blips) together with exact oracles for verifying them.
"""

__version__ = "0.1.0"

from .donors import DonorIndex, DonorSet, control_donors, lti_action_donors, ltv_action_donors, si_donors
from .estimators import (
    CounterfactualEstimate,
    DonorDeficit,
    HorizonDeficit,
    LtiFit,
    LtvFit,
    estimate_lti,
    estimate_ltv,
    estimate_si,
    fit_lti,
    fit_ltv,
)
from .panel import (
    ControlSchedule,
    Panel,
    PanelValidationError,
    first_deviation_time,
    observed_sequence,
    read_panel_csv,
    validate_panel,
    write_panel_csv,
)
from .simulate import (
    ConstantRule,
    GeneralFactors,
    LtiFactors,
    LtiSystem,
    LtvFactors,
    LtvSystem,
    NoiseLog,
    RandomRule,
    ThresholdRule,
    UnitPolicy,
    counterfactual_replay,
    innovation_contributions,
    lti_factors,
    ltv_factors,
    simulate,
    simulate_general,
)
from .weights import (
    CovariateMatrix,
    OracleWeights,
    PcrConfig,
    PcrWeights,
    WeightVector,
    control_covariates,
    oracle_weights,
    pcr_fit,
)

__all__ = [name for name in dir() if not name.startswith("_")]
