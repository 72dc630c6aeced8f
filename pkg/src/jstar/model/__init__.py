from .checkpoint import load_checkpoint, load_model, save_checkpoint, save_model
from .config import ModelConfig
from .encoder import (Encoder, FeatureSequence, dependency_set, layer_interval,
                      time_reduce)
from .network import (SCOPES, JstarModel, Losses, init_from_checkpoint,
                      jstar_forward, mt_forward)

__all__ = [
    "Encoder", "FeatureSequence", "JstarModel", "Losses", "ModelConfig", "SCOPES",
    "dependency_set", "init_from_checkpoint", "jstar_forward", "layer_interval",
    "load_checkpoint", "load_model", "mt_forward", "save_checkpoint", "save_model",
    "time_reduce",
]
