"""Bitwise multi-scale residual tokenization and next-scale generation."""

from .correction import BscConfig, FlipTrace, encode_with_bsc, random_flip, two_arm_study
from .container import deserialize, serialize
from .featurizer import featurize, render
from .ivc import (
    IvcHead,
    bit_logits,
    bitwise_ce_loss,
    conventional_param_count,
    ivc_param_count,
    predict_bits,
    savings_fraction,
)
from .model import (
    ModelConfig,
    NextScaleModel,
    SequenceLayout,
    TrainConfig,
    Trainer,
    block_causal_mask,
    load_checkpoint,
    rope2d_rotate,
    save_checkpoint,
    train_on_task,
)
from .pyramid import TokenPyramid, encode, reconstruct, transformer_inputs
from .quantizer import (
    QuantizerConfig,
    QuantizerKind,
    bits_to_index,
    dequantize,
    entropy_penalty_exact,
    entropy_penalty_factorized,
    index_to_bits,
    quantize,
    soft_assignment,
)
from .resample import resize_bilinear
from .sampler import SamplerConfig, apply_cfg, cfg_schedule, generate
from .schedule import ScaleSchedule, schedule_by_id, schedule_for, validate
from .toydata import ToyTask, ToyTaskConfig, smooth_blob_field, toy_image

__version__ = "0.1.0"
