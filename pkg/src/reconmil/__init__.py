"""Multiple-instance learning with latent space reconstruction and bi-stream global-local blocks."""

from reconmil.bagstore import FeatureBag, LabelRecord, SynthConfig, synth_bags
from reconmil.heads import ModelArch, ModelParams, model_forward

__all__ = ["FeatureBag", "LabelRecord", "SynthConfig", "synth_bags", "ModelArch", "ModelParams",
           "model_forward"]
__version__ = "0.1.0"
