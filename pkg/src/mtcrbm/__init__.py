"""Multi-task conditional restricted Boltzmann machines for time series:
generative, discriminative, multi-task, and multimodal variants with
contrastive-divergence training, bottom-up classification, and generative
sequence morphing."""

from .errors import (ConfigError, DataError, MtcrbmError, NumericError,
                     ShapeError)
from .model import (CrbmLayerParams, FrameSequence, FusionModel, ModelBundle,
                    ModelConfig, MultimodalSequence, Normalization, TaskHead,
                    TaskSpec, label_edge_parameter_audit, load_model,
                    new_model, rng_from_seed, save_model)
from .layers import (HistoryWindow, dynamic_biases, energy_crbm, energy_rbm,
                     hidden_mean, history_windows, sample_hidden,
                     sample_visible, visible_mean)
from .heads import (deep_task_head_forward, energy_mtcrbm, label_posterior,
                    softmax, task_posteriors)
from .fusion import (FusionState, energy_mtmcrbm, fusion_dynamic_bias,
                     fusion_forward)
from .training import (GradientSet, GridCell, TrainConfig, TrainReport,
                       WindowSample, cd_step, grid_search, train)
from .inference import (FramePosteriors, SequenceDecision, classify_dataset,
                        classify_frame, classify_sequence,
                        classify_sequence_full)
from .morphing import MorphEvalResult, morph_eval, morph_sequence
from .data import (Dataset, classification_metrics, fit_normalization,
                   kinect_upper_body_features, load_dataset, make_synthetic,
                   mocap_features, parse_frame_csv, split_by_source,
                   standardize_sequences, write_frame_csv)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
