"""PPG stress detection toolkit: CWT scalograms, a small numpy CNN, and the
pruning / int8 quantization / memory planning needed to fit it on a microcontroller."""

from .compress import PruneConfig, QuantModel, calibrate, prune_dense_units, quantize_ptq, quantize_tensor
from .fileformat import load_model, save_model
from .metrics import accuracy, auc, evaluate, pr_curve
from .model import Model, build_default_model, forward
from .ppg import PpgRecord, SynthParams, load_ppg_csv, segment_windows, synth_ppg
from .qengine import Budget, check_budget, plan_memory, qforward, requantize
from .scalogram import AugmentParams, CwtConfig, augment, cwt, render_image
from .train import TrainConfig, adam_step, backward, crossentropy

__version__ = "0.1.0"
