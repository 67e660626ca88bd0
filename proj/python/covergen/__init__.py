"""Piano cover generation: tokenizer, alignment and metrics."""

from ._core import (
    CovergenError,
    Vocabulary,
    __version__,
    chromagram,
    detokenize,
    dtw,
    duration_deviation,
    filter_pair,
    finetune_loss,
    grooving_similarity,
    mca,
    pitch_class_entropy,
    tempo_deviation,
    tokenize,
)

__all__ = [
    "CovergenError",
    "Vocabulary",
    "__version__",
    "chromagram",
    "detokenize",
    "dtw",
    "duration_deviation",
    "filter_pair",
    "finetune_loss",
    "grooving_similarity",
    "mca",
    "pitch_class_entropy",
    "tempo_deviation",
    "tokenize",
]
