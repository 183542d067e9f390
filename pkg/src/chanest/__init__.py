"""Uncertainty-aware deep-learning channel estimation for 5G NR resource grids.

The package simulates tapped-delay-line channels over an OFDM slot, builds
pilot-interpolated and perfect channel grids, trains a small residual CNN in
pure numpy, scores its Monte-Carlo-dropout uncertainty and retrains it on
adversarially perturbed uncertain examples.
"""

__version__ = "0.1.0"

from .channel import (ChannelRealization, TdlProfile, Waveform, add_awgn, apply_channel,
                      make_tdl_profile, perfect_channel_grid, realize_channel, static_channel)
from .dataset import (Dataset, DatasetExample, DatasetSpec, ExampleMeta, generate_dataset,
                      load_dataset, save_dataset, split)
from .errors import (ChanestError, DegenerateInput, DivisionByZero, FormatError, InsufficientSamples,
                     InvalidDistribution, InvalidLength, InvalidParameter, IoError, ShapeMismatch,
                     UnknownProfile)
from .nn import NeuralNet, TrainConfig, TrainReport, load_checkpoint, save_checkpoint, train
from .ofdm import OfdmConfig, PilotConfig, build_resource_grid, ofdm_demodulate, ofdm_modulate
from .pilot import interpolate_grid, ls_estimate_at_pilots, pilot_baseline
from .report import EvalResult, emit_report, evaluate, mse, pearson
from .retrain import IterationRecord, RetrainConfig, fgsm_perturb, retrain_loop
from .uncertainty import (McConfig, McPrediction, UncertaintySummary, confidence_interval,
                          mc_predict, predictive_entropy, sample_variance, summarize)
