"""Attention-free sequence modeling with Grassmann/Pluecker mixing blocks."""

from .tensor import Tensor, NonFiniteError, grad_check
from .geometry import (pair_index, plucker_embed, plucker_normalize,
                       plucker_relation_residual)
from .blocks import (AttentionBlockParams, GrassmannBlockParams,
                     WindowSchedule, attention_block_forward,
                     grassmann_block_forward)
from .model import (LanguageModel, ModelConfig, PRESETS, generate,
                    init_params, lm_forward, named_parameters, param_count,
                    preset)
from .trainer import (Corpus, TrainConfig, evaluate, load_checkpoint,
                      load_corpus, save_checkpoint, train)
from .bench import BenchReport, scaling_report, time_mixing

__version__ = "0.1.0"
