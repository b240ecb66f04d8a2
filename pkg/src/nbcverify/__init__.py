"""Verification-friendly training via neuron behaviour consistency, plus a
branch-and-bound local-robustness verifier built on numpy only."""

from .attacks import pgd_accuracy, pgd_attack
from .bab import (Budget, RobustnessProperty, Verdict, VerifierConfig, bab_verify,
                  check_counterexample, encode_property, leaf_check, select_branch_neuron)
from .bounds import (BoundsMap, BranchConstraints, InputBox, classify_neurons, compute_bounds,
                     ibp_bounds, intersect_bounds, linear_bounds, stable_percent)
from .data import (Dataset, gen_synthetic, load_mnist_idx, load_model, load_property, rng_stream,
                   save_model, save_property)
from .experiment import ExperimentConfig, MetricsReport, report_render, run_experiment
from .lp import LpProblem, solve_lp, solve_lp_many
from .nbc import (cosine_similarity, find_adversary_nbc, gamma_factors, kl_div, nbc_loss,
                  nbc_score)
from .network import Network, forward, lower, mlp
from .training import Phase, TrainConfig, train

__version__ = "0.1.0"
