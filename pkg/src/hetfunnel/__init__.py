"""Evidence against treatment-effect homogeneity in exhaustive subgroup plots."""

__version__ = "0.1.0"

from .data import (  # noqa: F401
    BinnedCovariate,
    Covariate,
    CovariateSchema,
    Dataset,
    bin_all,
    load_dataset,
    tertile_bin,
)
from .errors import HetfunnelError  # noqa: F401
from .inference import (  # noqa: F401
    BonferroniReference,
    CorrelationModel,
    HomogeneityRegion,
    MvnReference,
    PermutationReference,
    SubgroupStats,
    compute_stats,
    correlation_matrix,
    homogeneity_region,
    individual_pvalues,
    nearest_pd_correlation,
    permutation_reference,
    pvalue_bonferroni,
    pvalue_mvn,
    simple_means_stats,
    surprise,
)
from .nuisance import (  # noqa: F401
    FoldAssignment,
    LearnerSpec,
    NuisanceEstimates,
    PropensityRule,
    assign_folds,
    cross_fit_nuisance,
    fit_regressor,
)
from .pseudo import PseudoOutcomes, compute_pseudo_outcomes, subgroup_means  # noqa: F401
from .report import InferenceReport, RunConfig, analyze, document_from_report  # noqa: F401
from .simulate import (  # noqa: F401
    CalibrationResult,
    ScenarioSpec,
    SimulationSummary,
    StudyConfig,
    calibrate,
    generate_covariates,
    mean_function,
    run_study,
    simulate_trial,
)
from .subgroups import (  # noqa: F401
    SubgroupDef,
    SubgroupIndex,
    enumerate_subgroups,
    overlap_count,
)
