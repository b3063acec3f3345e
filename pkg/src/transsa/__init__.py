"""Transformer-block sentence encoder with sentence-level attention for
distantly supervised relation extraction, on a small numpy autodiff core."""

from .bag_model import TransSA, bag_attention, bag_loss, classify, sentence_scores
from .config import SynthConfig, TrainConfig
from .corpus import Bag, EncodedSentence, RelationLabels, SentenceRecord, Vocab
from .trainer import Checkpoint, load_checkpoint, lr_schedule, save_checkpoint, train

__all__ = [
    "Bag",
    "Checkpoint",
    "EncodedSentence",
    "RelationLabels",
    "SentenceRecord",
    "SynthConfig",
    "TrainConfig",
    "TransSA",
    "Vocab",
    "bag_attention",
    "bag_loss",
    "classify",
    "load_checkpoint",
    "lr_schedule",
    "save_checkpoint",
    "sentence_scores",
    "train",
]
