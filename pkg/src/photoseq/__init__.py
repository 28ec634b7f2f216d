"""Photosequencing toolkit.

Synthesizes short-long-short exposure triplets from high-frame-rate video,
trains a blur-decomposition network on them, and recursively decomposes a
motion-blurred long exposure into a sharp image sequence.
"""

from .config import ToolkitConfig, load_config
from .dataset import BuilderConfig, SampleBuilder, TrainingSample, augment, build_sample, select_blur_length
from .errors import (
    ConfigError,
    DataError,
    IllPosedError,
    NumericalError,
    PhotoseqError,
    ShapeError,
    WeightError,
)
from .evaluation import (
    EvalReport,
    eval_blur_sweep,
    eval_relative,
    eval_timepoints,
    psnr,
    relative_psnr,
    slice_xt_yt,
)
from .imaging import (
    DecompositionTriple,
    ExposureTriplet,
    FrameClip,
    average_frames,
    load_clip,
    load_image,
    make_triplet,
    recomposition_residual,
    save_clip,
    save_image,
)
from .network import (
    DecomposerNet,
    NetworkConfig,
    Weights,
    decompose,
    init_weights,
    load_weights,
    save_weights,
)
from .noise import NoiseParams, add_noise, estimate_noise_params, load_noise_params, save_noise_params
from .sequencer import PhotoSequence, RecursionPlan, build_plan, sequence, sequence_stream
from .training import (
    LossWeights,
    TrainSchedule,
    adversarial_step,
    learning_rate_at,
    perceptual_cost,
    sum_cost,
    supervised_cost,
    train,
    train_three_models,
    tv_cost,
)

__version__ = "0.1.0"
