"""Causal analysis of programming-contest data: DAGs, simulation, count regression, CI tests."""

from .citest import CiTestResult, DagValidationReport, regression_for_ci, run_ci_test, validate_dag
from .dag import (CondIndep, Dag, DagError, Path, adjustment_sets, backdoor_paths, classify_path,
                  d_separated, enumerate_paths, implied_independencies, parse_dag)
from .dataset import Dataset
from .glm import (GaussianRegressor, ModelSpec, NegativeBinomialRegressor, centered_effects,
                  compare_models, fit, forward_selection, parse_formula, wald_intervals)
from .pipeline import (AnalysisConfig, FilterConfig, RawSubmission, aggregate, analyze,
                       filter_dataset, load_csv, sweep, synth, write_csv)
from .scm import CodeJamParams, Intervention, Scm, codejam_scm, intervene, sample, true_language_effects

__version__ = "0.1.0"
