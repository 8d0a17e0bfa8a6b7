"""Federated domain generalization with cross-client style transfer and
dual-stage representation alignment, on a small numpy autodiff core."""
from .augment import (
    AugmentConfig,
    EmptyPoolError,
    SampleStatistics,
    StatisticsPool,
    ccdt,
    channel_stats,
    difp_augmix,
    feature_extension,
    select_statistics,
)
from .config import ConfigError, parse_config
from .data import (
    ClientShard,
    DomainDataset,
    SyntheticConfig,
    generate_synthetic,
    leave_one_domain_out,
    load_image_folder,
    partition_clients,
)
from .federation import (
    AblationFlags,
    FederationConfig,
    Transport,
    fedavg_aggregate,
    run_experiment,
    run_round,
    run_single,
)
from .harness import RunSpec, run_ablation, run_comparison, run_sweep
from .kernels import BACKEND as KERNEL_BACKEND
from .losses import (
    LossWeights,
    classification_loss,
    js_alignment,
    overall_loss,
    representation_alignment,
    sup_contrastive,
)
from .model import ModelConfig, ModelParameters, adam_step, classify, cosine_lr, encode, init_params
from .tensor import NaNError, ShapeMismatchError, Tensor, TensorError, backward

__version__ = "0.1.0"
