"""Unsupervised text style transfer with per-token style representations."""

from .config import RunConfig, desk
from .data import Corpus, TokenSequence, Vocabulary, gen_synthetic_corpus
from .model import MSSRNet
from .teacher import TeacherModel, select_stylistic_tokens, train_teacher
from .training import Trainer, run_training

__all__ = [
    "Corpus", "MSSRNet", "RunConfig", "TeacherModel", "TokenSequence", "Trainer", "Vocabulary", "desk",
    "gen_synthetic_corpus", "run_training", "select_stylistic_tokens", "train_teacher",
]
__version__ = "0.1.0"
