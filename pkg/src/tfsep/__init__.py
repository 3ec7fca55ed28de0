"""tfsep: time-frequency mask based speech separation toolkit.

Separation and enhancement models trained with deep clustering, PIT
mask-inference, or chimera objectives on a small reverse-mode autodiff
engine, with synthetic corpora, SDR evaluation, and a CLI.
"""

from .audio import MixtureTriple, SynthSpec, Waveform, read_wav, synth_mixture, write_wav
from .config import ConfigError, TrainConfig, config_from_dict, load_train_config
from .data import Batch, BatchLoader, FeatureOptions, Manifest, build_loader, \
    dominant_speaker_labels, generate_synthetic_manifest
from .dsp import Spectrogram, SpectrogramBatch, StftConfig, VAWeights, istft, \
    log_magnitude, stft, va_weights
from .losses import enumerate_permutations, loss_chimera_msa, loss_chimera_tpsa, \
    loss_dc, loss_dc_weighted, loss_mi_msa, loss_mi_tpsa, make_loss
from .metrics import EvalReport, eval_corpus, eval_pairing, sdr
from .models import ChimeraNet, DCNet, ModelConfig, UPitNet, build_model
from .separator import SeparationResult, kmeans, oracle_masks, \
    separate_with_clustering, separate_with_masks
from .tensor import AdamState, Parameter, Tensor, adam_step, clip_gradients, no_grad
from .trainer import CheckpointError, TrainingError, load_checkpoint, \
    save_checkpoint, train, train_loop, validate

__version__ = "0.1.0"
