"""SGD with and without replacement on finite-sum convex problems, with coupling diagnostics."""

from .errors import *  # noqa: F401,F403
from .geometry import Ball, Box, FullSpace, project, diameter, set_from_dict
from .sampler import (Permutation, RandomStream, lambda_op, mismatch_count, uniform_permutation,
                      with_replacement_index)
from .problems import (LeastSquaresProblem, LogisticProblem, IdenticalComponentsProblem,
                       make_least_squares, make_logistic, make_identical_components,
                       suboptimality, verify_assumptions, problem_from_descriptor)
from .optimizer import (AveragingScheme, RegimeKind, StepRegime, Trajectory, average, run_gd,
                        run_sgd, run_sgdo, step_size)
from .harness import ExperimentConfig, RateFit, check_thm3_bound, emit_outputs, fit_rate, run_sweep

__version__ = "0.1.0"
