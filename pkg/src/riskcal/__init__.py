"""Design-based absolute risk estimation for nonprobability cohorts.

Combines a cohort with a probability reference survey (kernel-smoothed
propensity pseudoweighting) and registry summary counts (poststratification),
fits a weighted Cox model, and projects absolute risk with design-based
Taylor-linearization variance.
"""

from .data_model import (COHORT, FINITE_POPULATION, SURVEY, CellRule, ColumnMap,
                         RegistrySummary, Sample, Unit, assign_cells,
                         ingest_registry, ingest_sample)
from .errors import (CellError, ConvergenceError, EstimabilityError, RiskcalError,
                     SchemaError, SeparationError, ValidationError)
from .propensity import PropensityFit, fit_propensity, resolve_scale
from .pseudoweight import (KW_ONLY, POST_POP, POST_RG, WeightSet,
                           balance_diagnostics, kw_only_weights, kw_weights,
                           poststratify, silverman_bandwidth)
from .survival import (BaselineCumHazard, RiskEstimate, RiskModelFit,
                       absolute_risk, breslow_baseline, compute_fp_truth,
                       cox_model_at, fit_weighted_cox, par_baseline)
from .simulation import (BASELINES, ESTIMATORS, PROFILES, MetricsTable,
                         PopulationConfig, ScenarioConfig, compute_truth,
                         draw_pps, emit_report, fp_profiles,
                         generate_population, registry_from_population,
                         run_gamma_sweep, run_scenario)
from .variance import (DeviateSet, PipelineState, Target, evaluate_targets,
                       fd_deviates, influence_deviate_sets, influence_deviates,
                       risk_interval, run_pipeline, tl_variance)

__version__ = "0.1.0"
