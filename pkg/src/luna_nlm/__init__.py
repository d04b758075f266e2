"""Neural linear models with diversity-trained feature bases.

A neural linear model learns a deterministic feature map and performs exact
Bayesian linear regression on top of it. This package implements the
traditional training objectives (MLE, MAP, marginal likelihood) and the
multi-head diversity-penalized objective that makes the learned basis express
in-between uncertainty, plus the evaluation metrics, gap-dataset tooling, a
Gaussian-process reference, and a Bayesian-optimization loop.
"""

from ._kernels import BACKEND as KERNEL_BACKEND
from .blr import BlrPosterior, PredictiveDistribution, fit_posterior, log_marginal_likelihood, predict, sample_functions
from .data import GapDataset, gen_cubic_gap, gen_squiggle_gap, load_table, make_gap_split, standardize
from .metrics import MetricsReport, avg_ll, epistemic_sd, eurc, rmse
from .nn import FeatureMapParams, augment_bias, backward, forward, init_params, scale_last_layer
from .objectives import (
    AnnealSchedule,
    LunaParams,
    PerturbationConfig,
    anneal_weight,
    cos_sim_sq,
    fd_input_gradient,
    luna_diverse_loss,
    luna_fit_loss,
    luna_loss,
    map_loss,
    marginal_loss,
)
from .trainer import TrainConfig, TrainedModel, hyper_search, random_restarts, refit_head, select_model, train

__version__ = "0.1.0"
