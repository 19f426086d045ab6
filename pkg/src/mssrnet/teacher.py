"""Pretrained style classifier (teacher) and span-ablation salience."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .config import TeacherConfig
from .data import Batch, Corpus, collate, make_batches, batch_stream
from .model import soft_embed
from .nn import Adam, AttentivePooling, EncoderStack, ParameterStore, reset_parameters

log = logging.getLogger(__name__)


class AttentiveClassifier(nn.Module):
    """Encoder, attentive pooling and a linear head producing raw scores."""

    def __init__(self, vocab_size: int, num_styles: int, d_model: int, layers: int, d_ff: int, n_heads: int,
                 dropout: float = 0.1, max_positions: int = 64):
        super().__init__()
        self.num_styles = num_styles
        self.word_emb = nn.Embedding(vocab_size, d_model)
        self.pos_emb = nn.Embedding(max_positions + 1, d_model)
        self.encoder = EncoderStack(layers, d_model, d_ff, n_heads, dropout)
        self.pool = AttentivePooling(d_model)
        self.head = nn.Linear(d_model, num_styles)
        reset_parameters(self)

    def embed(self, ids: torch.Tensor) -> torch.Tensor:
        return self.add_positions(self.word_emb(ids))

    def embed_soft(self, dist: torch.Tensor) -> torch.Tensor:
        return self.add_positions(soft_embed(dist, self.word_emb.weight))

    def add_positions(self, tok_emb: torch.Tensor) -> torch.Tensor:
        pos = torch.arange(tok_emb.shape[1], device=tok_emb.device)
        return tok_emb + self.pos_emb(pos)

    def encode_embedded(self, emb, pad_mask=None):
        return self.encoder(emb, pad_mask)

    def encode(self, ids, pad_mask=None):
        return self.encoder(self.embed(ids), pad_mask)

    def scores(self, states, pad_mask=None):
        """Raw head scores and pooling weights for per-token states."""
        pooled, alpha = self.pool(states, pad_mask)
        return self.head(pooled), alpha


class TeacherModel(AttentiveClassifier):
    def classify(self, states, pad_mask=None):
        """Class probabilities and pooling weights for a sequence of style vectors."""
        logits, alpha = self.scores(states, pad_mask)
        return torch.softmax(logits, dim=-1), alpha

    def logits(self, ids, pad_mask=None):
        return self.scores(self.encode(ids, pad_mask), pad_mask)[0]

    def forward(self, ids, pad_mask=None):
        return torch.softmax(self.logits(ids, pad_mask), dim=-1)

    def store(self) -> ParameterStore:
        return ParameterStore.from_module("teacher", self)

    def freeze(self) -> "TeacherModel":
        self.eval()
        for p in self.parameters():
            p.requires_grad_(False)
        return self


def build_teacher(vocab_size: int, num_styles: int, d_model: int, cfg: TeacherConfig,
                  max_positions: int = 64) -> TeacherModel:
    return TeacherModel(vocab_size, num_styles, d_model, cfg.layers, cfg.d_ff, cfg.n_heads, cfg.dropout,
                        max_positions)


@torch.no_grad()
def predict(model: AttentiveClassifier, corpus_or_seqs, batch_size: int = 256) -> np.ndarray:
    seqs = list(corpus_or_seqs.sequences if isinstance(corpus_or_seqs, Corpus) else corpus_or_seqs)
    was_training = model.training
    model.eval()
    preds = []
    for i in range(0, len(seqs), batch_size):
        b = collate(seqs[i:i + batch_size])
        logits, _ = model.scores(model.encode(b.ids, b.pad_mask), b.pad_mask)
        preds.append(logits.argmax(-1).numpy())
    model.train(was_training)
    return np.concatenate(preds) if preds else np.zeros(0, dtype=int)


def accuracy(model: AttentiveClassifier, corpus: Corpus) -> float:
    labels = np.array([s.style for s in corpus.sequences])
    return float((predict(model, corpus) == labels).mean())


@torch.no_grad()
def mean_loss(model: TeacherModel, corpus: Corpus, batch_size: int = 256) -> float:
    model.eval()
    total, count = 0.0, 0
    for b in make_batches(corpus, batch_size, seed=0):
        total += float(F.cross_entropy(model.logits(b.ids, b.pad_mask), b.styles, reduction="sum"))
        count += len(b)
    return total / count


@dataclass
class TeacherTrainResult:
    model: TeacherModel
    valid_accuracy: float
    best_step: int
    steps: int
    initial_loss: float
    final_loss: float
    history: List[dict] = field(default_factory=list)


def train_teacher(train: Corpus, cfg: TeacherConfig, vocab_size: int, d_model: int,
                  valid: Optional[Corpus] = None, max_positions: int = 64,
                  stop_at_accuracy: Optional[float] = 1.0) -> TeacherTrainResult:
    """Cross-entropy training with Adam; returns the best-validation model."""
    if train.num_styles < 2:
        raise ValueError("teacher training needs at least two styles")
    if valid is None:
        train, valid = train.split([1 - cfg.valid_fraction, cfg.valid_fraction], seed=cfg.seed)
    torch.manual_seed(cfg.seed)
    model = build_teacher(vocab_size, train.num_styles, d_model, cfg, max_positions)
    opt = Adam(model.store(), lr=cfg.lr, betas=(0.9, 0.98))
    initial = mean_loss(model, train)
    best_acc, best_step, best_state = -1.0, 0, None
    history = []
    stream = batch_stream(train, cfg.batch_size, cfg.seed)
    step = 0
    for step in range(1, cfg.max_steps + 1):
        model.train()
        b: Batch = next(stream)
        loss = F.cross_entropy(model.logits(b.ids, b.pad_mask), b.styles)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % cfg.eval_every == 0 or step == cfg.max_steps:
            acc = accuracy(model, valid)
            history.append({"step": step, "loss": loss.item(), "valid_accuracy": acc})
            log.info("teacher step %d loss %.4f valid acc %.4f", step, loss.item(), acc)
            if acc > best_acc:
                best_acc, best_step, best_state = acc, step, copy.deepcopy(model.state_dict())
            if stop_at_accuracy is not None and acc >= stop_at_accuracy:
                break
    model.load_state_dict(best_state)
    model.eval()
    return TeacherTrainResult(model, best_acc, best_step, step, initial, mean_loss(model, train), history)


# --- salience ---------------------------------------------------------------


@dataclass
class SalienceConfig:
    orders: Sequence[int] = (1, 2, 3)
    beta: float = 0.10
    renormalize: bool = True
    relative: bool = False

    def __post_init__(self):
        if not 0 < self.beta < 1:
            raise ValueError("beta must be in (0, 1)")


@dataclass
class StylisticSpan:
    start: int
    length: int
    tokens: tuple
    drop: float

    @property
    def end(self) -> int:
        return self.start + self.length


@dataclass
class SalienceResult:
    spans: List[StylisticSpan]
    label: int
    base_prob: float
    warning: Optional[str] = None


def disturbed_probability(states: torch.Tensor, alpha: torch.Tensor, head: nn.Linear, zeroed: Sequence[int],
                          renormalize: bool = True) -> torch.Tensor:
    """Class probabilities after forcing the pooling weights at ``zeroed`` to zero."""
    w = alpha.clone()
    w[list(zeroed)] = 0.0
    if renormalize:
        w = w / w.sum()
    return torch.softmax(head(w @ states), dim=-1)


@torch.no_grad()
def select_stylistic_tokens(ids: Sequence[int], label: int, model: AttentiveClassifier,
                            cfg: SalienceConfig = SalienceConfig(), vocab=None) -> SalienceResult:
    """Spans of 1-3 tokens whose pooling-weight ablation lowers P(label) by more than beta.

    A longer span is kept only when it contains no already-selected shorter
    span; overlapping survivors are merged.
    """
    was_training = model.training
    model.eval()
    x = torch.tensor([list(ids)], dtype=torch.long)
    states = model.encode(x)[0]
    logits, alpha = model.scores(states)
    base = float(torch.softmax(logits, -1)[label])
    n = len(ids)
    chosen: List[StylisticSpan] = []
    for k in sorted(cfg.orders):
        if k >= n:
            continue
        for i in range(n - k + 1):
            if any(s.start >= i and s.end <= i + k for s in chosen):
                continue
            p = float(disturbed_probability(states, alpha, model.head, range(i, i + k), cfg.renormalize)[label])
            drop = (base - p) / base if cfg.relative else base - p
            if drop > cfg.beta:
                chosen.append(StylisticSpan(i, k, tuple(ids[i:i + k]), drop))
    model.train(was_training)
    spans = merge_spans(chosen, ids)
    if vocab is not None:
        spans = [StylisticSpan(s.start, s.length, tuple(vocab.decode(s.tokens)), s.drop) for s in spans]
    warning = None
    if base < 0.5:
        warning = f"label {label} is not the predicted style (p={base:.3f})"
    return SalienceResult(spans, label, base, warning)


def merge_spans(spans: Sequence[StylisticSpan], ids: Sequence[int]) -> List[StylisticSpan]:
    merged: List[StylisticSpan] = []
    for s in sorted(spans, key=lambda s: (s.start, s.end)):
        if merged and s.start < merged[-1].end:
            last = merged[-1]
            end = max(last.end, s.end)
            merged[-1] = StylisticSpan(last.start, end - last.start, tuple(ids[last.start:end]),
                                       max(last.drop, s.drop))
        else:
            merged.append(s)
    return merged
