"""Replay-based continual training for spatio-temporal forecasting on streams."""

from .augment import (Augmentation, AugmentationParams, GraphSample, add_edges,
                      drop_edges, drop_nodes, random_view_pair, sample_subgraph,
                      time_shifting)
from .config import ExperimentConfig, config_hash, parse_config, write_config
from .data import (NormalizationStats, ObservationSeries, SensorNetwork, StreamSegment,
                   WindowBatch, build_adjacency, load_dataset, make_windows,
                   min_max_normalize, split_stream)
from .losses import (LossBreakdown, ViewPairEmbeddings, cosine_similarity_stopgrad,
                     graphcl_batch_loss, task_loss_mae, total_loss)
from .model import (STDecoder, STEncoder, STForecaster, Projector, adaptive_adjacency,
                    load_model_checkpoint, save_model_checkpoint)
from .replay import (InterferenceScore, MixupConfig, ReplayBuffer, ReplayItem,
                     buffer_insert, interference_rank, pearson_similarity, rmir_sample,
                     stmixup, virtual_update)
from .training import (SegmentReport, evaluate_metrics, run_stream_experiment,
                       train_segment)

__version__ = "0.1.0"
