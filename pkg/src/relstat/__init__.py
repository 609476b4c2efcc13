"""Compositional Gaussian-process kernel search for one or many time series."""

from .gp import (
    Dataset, GPPosterior, JitterPolicy, SingularCovarianceError, decompose_posterior,
    nll, nll_and_grad, nll_grad, predict, sample_prior,
)
from .grammar import DEFAULT_GRAMMAR, GrammarRules, canonicalize, expand, summands
from .io import load_csv, save_csv
from .kernels import (
    ChangePoint, ChangeWindow, Constant, Kernel, KernelError, Linear, ParamVector,
    Periodic, Product, SpectralMixture, SquaredExp, Sum, WhiteNoise, bind,
    bound_params, eval_kernel, gram, param_count,
)
from .optimize import OptimizeConfig, minimize_cg, optimize_model
from .relational import ScaleFactors, joint_nll
from .report import RunConfig, RunReport, export_plot_data, run_search
from .search import bic, ckl_search, overfit_diagnostic, rkl_search, srkl_search
from .synth import synth_experiment
from .text import KernelSyntaxError, describe, parse_kernel

__version__ = "0.1.0"
