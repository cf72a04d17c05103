"""Joint weighted hazard tests for factorial survival designs.

The test statistic contrasts groupwise cumulative hazard estimates through
several polynomial weights at once and compares the projected vector against
its estimated covariance; inference is asymptotic (chi-square) or by a
studentized permutation scheme that is finitely exact under exchangeability.
"""

__version__ = "0.1.0"

from .counting import StepProcesses, build_processes, nelson_aalen
from .errors import CasanovaError
from .linalg import HypothesisSpec, contrast
from .permutation import (
    PermutationPlan,
    PermutationResult,
    exact_assignments,
    permutation_test,
    permutation_test_views,
)
from .simulate import RejectionTable, ScenarioConfig, calibrate_censoring, run_scenario
from .statistic import TestResult, asymptotic_test, covariance, wald, z_vector
from .survdata import (
    FactorialLayout,
    Observation,
    SurvivalDataset,
    load_csv,
    load_veteran,
    validate,
)
from .theory import (
    LocalAlternative,
    PopulationConfig,
    limit_covariance,
    limit_functions,
    noncentral_chi2_sf,
    noncentrality,
    predicted_power,
)
from .weights import (
    WeightFunction,
    WeightSet,
    crossing_weight,
    default_weights,
    fleming_harrington,
    make_weight_set,
    parse_weight,
    parse_weight_set,
)

__all__ = [
    "CasanovaError",
    "FactorialLayout",
    "HypothesisSpec",
    "LocalAlternative",
    "Observation",
    "PermutationPlan",
    "PermutationResult",
    "PopulationConfig",
    "RejectionTable",
    "ScenarioConfig",
    "StepProcesses",
    "SurvivalDataset",
    "TestResult",
    "WeightFunction",
    "WeightSet",
    "asymptotic_test",
    "build_processes",
    "calibrate_censoring",
    "contrast",
    "covariance",
    "crossing_weight",
    "default_weights",
    "exact_assignments",
    "fleming_harrington",
    "limit_covariance",
    "limit_functions",
    "load_csv",
    "load_veteran",
    "make_weight_set",
    "nelson_aalen",
    "noncentral_chi2_sf",
    "noncentrality",
    "parse_weight",
    "parse_weight_set",
    "permutation_test",
    "permutation_test_views",
    "predicted_power",
    "run_scenario",
    "validate",
    "wald",
    "z_vector",
]
