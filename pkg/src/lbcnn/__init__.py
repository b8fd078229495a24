"""Light binary CNNs: +/-1 depthwise conv + max-pool expansion, closed-form output layer."""

from .data import Dataset, load_idx, load_pnm_dir, normalize, one_hot, split_stratified
from .elm import SolverConfig, accuracy, predict, residual_norm, solve_output_weights
from .model import LBCNN
from .model_store import inspect, load_model, save_model
from .quantize import QuantizedWeights, quantize, quantized_predict
from .refine import RefineConfig, refine_output, softmax_xent_loss_grad
from .search import SearchConfig, SearchReport, generate_kernels, random_search, run_trial
from .tensor_ops import (
    Architecture,
    KernelLayer,
    KernelSet,
    depthwise_conv3x3,
    feature_expand,
    maxpool_coverall,
    param_bits,
    pool_out_size,
)

__version__ = "0.1.0"
