"""Frozen surrogate variable analysis (fSVA).

Learn batch-effect surrogates on a labelled training matrix, remove them, and
reuse the frozen training quantities to clean new samples one at a time
(exact) or by a single projection (fast) before classification.
"""

__version__ = "0.1.0"

from .core import (Dataset, DesignMatrix, ExpressionMatrix, OutcomeLabels, ParseError,
                   align_features, encode_design, read_labels, read_matrix, write_matrix)
from .sva import (FeatureWeights, FrozenModel, SvaFit, WeightedSvd, clean_training,
                  empirical_bayes_weights, estimate_num_sv, fit_regression, freeze, sva_fit,
                  weighted_svd)
from .correct import CorrectionResult, compare_variants, fsva_exact, fsva_fast
from .classifier import NscModel, choose_shrinkage, nsc_predict, nsc_train
from .simulate import (ScenarioSpec, SimulatedStudy, assign_confounded_labels, builtin_scenarios,
                       simulate_study)
from .harness import AccuracyReport, ExperimentConfig, run_simulation_sweep, run_split_study
