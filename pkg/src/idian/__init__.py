"""Semi-supervised domain adaptation with an incomplete target domain.

Masked imputation, domain-specific autoencoders aligned by a contrastive
loss, and adversarial feature alignment, trained jointly by SGD on a small
tape-based autodiff core.
"""

from .core import DenseLayer, GradientSet, Mlp, Tape, Tensor, backward, forward, grad_check, sgd_step
from .data import (Batch, DomainDataset, Instance, MissingSpec, compose_batches, load_csv, make_synthetic,
                   minmax_normalize, shuffle_channels, simulate_missing, write_csv)
from .errors import ConfigError, DataError, NumericError, UsageError
from .losses import LossReport, loss_adv, loss_ae, loss_cls, loss_contrastive, loss_total
from .metrics import EvalReport, auc, evaluate
from .networks import IdianModel, NoiseSource, Widths, build_model, embed, impute
from .trainer import TrainConfig, TrainHistory, build_variant, train, update_step

__version__ = "0.1.0"
