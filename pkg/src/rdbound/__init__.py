"""Riemannian Dimension generalization bounds for fully connected ReLU networks."""

from .bounds import (
    Baselines,
    LayerTerm,
    RdConfig,
    RdEvaluator,
    RdReport,
    analyze,
    bartlett_bound,
    eps_search,
    integral_bound,
    one_shot_bound,
    param_count,
    rd_dimension,
    spectral_bound,
    vc_proxy,
)
from .linalg import Spectrum, make_rng
from .network import FcnModel, LayerFeatureSet, forward_with_hooks, layer_gram_spectra, lipschitz_surrogates
from .spectra import ScaledSpectrum, effective_dimension, effective_rank
from .trainer import LabeledDataset, TrainConfig, kaiming_uniform_init, synth_blobs, train

__version__ = "0.1.0"
