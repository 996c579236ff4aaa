"""Desk-scale lab for masked-input fine-tuning of a toy reasoning model."""

__version__ = "0.1.0"

from .tokenizer import Vocab, TokenSeq, build_vocab, encode, decode, is_numeric_token
from .noise import NoiseConfig, MaskSchedule
from .model import ModelConfig
from .trainer import TrainConfig

__all__ = [
    "Vocab", "TokenSeq", "build_vocab", "encode", "decode", "is_numeric_token",
    "NoiseConfig", "MaskSchedule", "ModelConfig", "TrainConfig",
]
