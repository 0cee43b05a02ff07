"""Generative latent optimization: decoders, objectives, training and inference."""
from .decoder import Decoder, DecoderConfig
from .model import LatentCode, LatentKindError, ModelConfig, Observation, VairModel
from .train import (InferConfig, InferenceResult, TrainConfig, TrainState, TrainingError, grad_check, infer,
                    init_state, train, write_trace)
from .checkpoint import load_model, load_state, save_state

__all__ = [
    "Decoder", "DecoderConfig", "LatentCode", "LatentKindError", "ModelConfig", "Observation", "VairModel",
    "InferConfig", "InferenceResult", "TrainConfig", "TrainState", "TrainingError", "grad_check", "infer",
    "init_state", "train", "write_trace", "load_model", "load_state", "save_state",
]
