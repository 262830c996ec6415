"""CloFormer: a lightweight vision backbone mixing gated local convolution with pooled attention.

Everything runs on numpy through a small reverse-mode autodiff core.
"""

from .accounting import CostReport, count_flops, count_params
from .analysis import SpectrumReport, band_energy, branch_spectra, feature_spectrum
from .attnconv import AttnConvParams, attnconv_forward, gen_context_weights, init_attnconv
from .block import clo_block_forward, convffn_forward, global_branch_forward
from .checkpoint import load_checkpoint, save_checkpoint
from .clot import load_tensor, save_tensor
from .data import SynthDataset, gen_synth_dataset
from .errors import ArgumentError, CloError, ConfigError, DimensionError, FormatError, NumericError
from .layers import (Conv2dParams, LinearParams, avg_pool2d, conv2d, count_macs, dwconv2d,
                     fully_connected, softmax_tokens)
from .loss import softmax_cross_entropy
from .model import Model, build_model, conv_stem, model_forward
from .optim import OptimState, adamw_step, cosine_lr
from .specs import VariantSpec, build_ablation, preset, spec_from_text, spec_to_text
from .tensor import Tensor, no_grad
from .train import TrainConfig, train_loop

__version__ = "0.1.0"
