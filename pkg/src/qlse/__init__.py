"""Gridless line spectral estimation from quantized multi-snapshot measurements."""
__version__ = "0.1.0"

from .ep import EpOptions, EstimateResult, run_mvalse_ep
from .model import ConfigError, RowSet, TruthConfig, doa_to_freq, freq_to_doa, generate_truth
from .quantizer import QuantizedData, QuantizerSpec, build_uniform, quantize_matrix

__all__ = [
    "ConfigError", "EpOptions", "EstimateResult", "QuantizedData", "QuantizerSpec", "RowSet",
    "TruthConfig", "build_uniform", "doa_to_freq", "freq_to_doa", "generate_truth",
    "quantize_matrix", "run_mvalse_ep",
]
