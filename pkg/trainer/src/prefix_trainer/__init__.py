"""Prefix tuning for a frozen dual encoder over a creative-caption store."""

__version__ = "0.1.0"

from .data import CaptionExample, load_examples, split_examples
from .encoder import DEGREES, HashTokenizer, PrefixBank, TinyDualEncoder
from .export import export_image_embeddings, export_text_embeddings
from .training import TrainConfig, TrainResult, load_checkpoint, train, train_from_store

__all__ = [
    "CaptionExample",
    "DEGREES",
    "HashTokenizer",
    "PrefixBank",
    "TinyDualEncoder",
    "TrainConfig",
    "TrainResult",
    "export_image_embeddings",
    "export_text_embeddings",
    "load_checkpoint",
    "load_examples",
    "split_examples",
    "train",
    "train_from_store",
]
