"""Reward-driven channel pruning at desk scale.

Analytic FLOPs/parameter models over channel-width encodings, a reward
balancing accuracy against compute, evolutionary search over encodings,
and a hypernetwork meta-training pipeline that verifies the mechanism on
small image-classification tasks.
"""

from .arch import (
    ArchTemplate,
    LayerSpec,
    ScaleGrid,
    baseline_flops,
    baseline_params,
    builtin_template,
    channels_of,
    flops_of,
    full_nev,
    load_template,
    params_of,
    random_nev,
    resolve_template,
)
from .errors import MetapruneError
from .evosearch import (
    Gene,
    SearchConfig,
    flops_distribution,
    run_search,
)
from .hypernet import HyperNet, evaluate_nev, generate_weights, meta_train
from .pipeline import Dataset, PhaseEpochs, RunReport, ingest, retrain, run_all, synthetic_raw
from .reward import RewardParams, RewardValue, alpha, param_ratio, psi, reward, reward_surface
from .tensorcore import Schedule, Tensor, backward, sgd_step

__version__ = "0.1.0"

__all__ = [
    "ArchTemplate",
    "Dataset",
    "Gene",
    "HyperNet",
    "LayerSpec",
    "MetapruneError",
    "PhaseEpochs",
    "RewardParams",
    "RewardValue",
    "RunReport",
    "ScaleGrid",
    "Schedule",
    "SearchConfig",
    "Tensor",
    "alpha",
    "backward",
    "baseline_flops",
    "baseline_params",
    "builtin_template",
    "channels_of",
    "evaluate_nev",
    "flops_distribution",
    "flops_of",
    "full_nev",
    "generate_weights",
    "ingest",
    "load_template",
    "meta_train",
    "param_ratio",
    "params_of",
    "psi",
    "random_nev",
    "resolve_template",
    "retrain",
    "reward",
    "reward_surface",
    "run_all",
    "run_search",
    "sgd_step",
    "synthetic_raw",
    "__version__",
]
