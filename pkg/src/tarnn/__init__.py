"""Time-aware recurrent networks with dual-level attention for irregular visit sequences."""

from .autograd import Tensor, backward, grad_check
from .data import Dataset, PatientRecord, WindowedSample, generate_synthetic, load_dataset, save_dataset
from .metrics import auc_roc, confusion, f_beta, sensitivity
from .models import ModelArtifact, ModelConfig, ModelParams, explain, init_params, predict
from .rnn_cells import CellConfig
from .time_embedding import ElapsedTimes, TimeEmbedConfig, time_embed
from .training import TrainConfig, train, weighted_bce

__version__ = "0.1.0"
