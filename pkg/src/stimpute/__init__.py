"""Spatio-temporal missing-data imputation with denoising autoencoders.

The package bundles a reverse-mode autodiff engine, five autoencoder
variants (dense, LSTM, BiLSTM, convolutional BiLSTM with and without a
residual shortcut), the preprocessing protocol (scaling, missing-block
injection, sliding windows), three classical baselines, and evaluation by
MAE/RMSE over the injected-missing index set.
"""

from .baselines import (
    PcaModel,
    WeeklyHourlyTable,
    build_wh_table,
    dtw_distance,
    knn_indices,
    knn_pca_impute,
    neighbor_value_impute,
    pca_fit,
    pca_project,
    rank_neighbors_by_dtw,
    wh_average_impute,
)
from .data import (
    MissingMask,
    ScalerParams,
    SpatioTemporalSeries,
    SynthSpec,
    WindowSet,
    generate_missing_blocks,
    inverse_scale,
    load_csv,
    minmax_scale,
    save_csv,
    slide_windows,
    synth_generate,
    train_test_split,
)
from .errors import (
    ConfigurationError,
    ContractError,
    DimensionError,
    ParseError,
    StimputeError,
    TrainingDiverged,
)
from .imputation import (
    ImputationReport,
    encode_latents,
    evaluate,
    latent_knn_impute,
    multiple_impute,
    pca_knn_impute_series,
    single_impute,
)
from .models import (
    LatentVector,
    LstmState,
    Model,
    ModelSpec,
    bilstm_forward,
    build_model,
    lstm_cell_step,
)
from .tensor import Graph, Tensor, backward
from .training import AdamState, TrainConfig, adam_step, mse_loss, train

__version__ = "0.1.0"
