"""Embedding fusion, the seven sequence architectures and the readout heads."""

from .architectures import (
    MODEL_CLASSES,
    AEGANModel,
    AEModel,
    BERTModel,
    Discriminator,
    GPTModel,
    LSTMModel,
    SuffixModel,
    TransformerModel,
    WaveNetModel,
    build_model,
    length_mask,
)
from .config import LAYOUTS, AdversarialConfig, Architecture, ModelConfig
from .layers import attention_mask, causal_mask, sinusoidal_positions

__all__ = [name for name in dir() if not name.startswith("_")]
