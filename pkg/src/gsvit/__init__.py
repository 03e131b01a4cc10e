"""GSViT: an efficient vision-transformer engine with its own tensor core.

Gradient-taped tensors, an encoder built from sandwich blocks with
cascaded group attention, an asymmetric reconstruction decoder,
next-frame pre-training, a single-frame phase classifier, and a latency
benchmark harness.
"""

from . import ops
from .bench import BenchReport, bench_inference
from .checkpoint import (Checkpoint, checkpoint_from_params, load_checkpoint,
                         restore_params, save_checkpoint, weight_checksum)
from .config import Config, TrainConfig, config_to_text, load_config, parse_config
from .corpus import FrameCorpus, Video, load_corpus, read_ppm, write_ppm
from .decoder import Decoder, DecoderConfig, reconstruction_loss
from .encoder import Encoder, ModelConfig, count_params
from .errors import (CheckpointError, ConfigError, DataError, GsvitError,
                     NumericsError, ShapeError)
from .tensor import Tape, Tensor, backward, no_grad
from .training import (Adam, AugmentRanges, FramePair, PhaseHead, PhaseMetrics,
                       TrainReport, augment, build_frame_pairs, evaluate_phase,
                       exp_decay_lr, finetune, pretrain, second_gap, train_phase)

__version__ = "0.1.0"
