from .base import BackendUnavailableError, ClassifierBackend, argmax_group
from .lexicon import LexiconClassifier, load_lexicon
from .naive_bayes import (
    EmptyCorpusError,
    InvalidAlphaError,
    WindowNaiveBayes,
    train_naive_bayes,
)
from .remote import InvalidRemoteLabelError, RemoteBackend

__all__ = [
    "BackendUnavailableError",
    "ClassifierBackend",
    "EmptyCorpusError",
    "InvalidAlphaError",
    "InvalidRemoteLabelError",
    "LexiconClassifier",
    "RemoteBackend",
    "WindowNaiveBayes",
    "argmax_group",
    "load_lexicon",
    "train_naive_bayes",
]
