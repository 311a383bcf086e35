"""Evidential domain adaptation for remaining-useful-life prediction."""

from .data import (CMAPSS_SENSOR_SELECTION, DomainDataset, SyntheticConfig,
                   TimeWindow, generate_synthetic, load_cmapss, load_dataset,
                   make_windows, truncate_target)
from .encoder import EncoderConfig, FeatureBatch, RecurrentEncoder
from .errors import ConfigError, DataError, EviAdaptError, NumericalError
from .evaluation import EvalResult, ResultRecord, emit_report, evaluate_model, rmse, score
from .evidential import (EvidentialHead, EvidentialOutput, QuantileSet,
                         point_rul, quantile_constants)
from .losses import (KernelSpec, feature_mmd_loss, kernel_mean, median_bandwidth,
                     mse_loss, nll_loss, pretrain_loss, sea_loss, tilted_loss)
from .pipeline import (AdaptConfig, EncoderSettings, ExperimentData, SourceModel,
                       adapt, pretrain, pretrain_point_baseline, run_experiment,
                       synthetic_experiment_data)
from .staging import (HealthIndexCurve, StagePartition, apply_health_index,
                      health_index, segment_source, segment_target)

__version__ = "0.1.0"
