"""Wasserstein critics over style representations and (soft-)embedded text.

Both return raw K-dimensional scores with no output activation.
"""

from __future__ import annotations

import torch
from torch import nn

from .config import CriticConfig, ModelConfig
from .nn import AttentivePooling, EncoderStack, ParameterStore, relu, reset_parameters
from .teacher import AttentiveClassifier


class StyleCritic(nn.Module):
    def __init__(self, d_style: int, num_styles: int, cfg: CriticConfig, dropout: float = None):
        super().__init__()
        cfg.validate()
        self.kind = cfg.style_kind
        dropout = cfg.dropout if dropout is None else dropout
        if self.kind == "attention":
            self.body = EncoderStack(cfg.style_layers, d_style, cfg.d_ff, cfg.n_heads, dropout)
        else:
            self.fc1 = nn.Linear(d_style, d_style)
            self.fc2 = nn.Linear(d_style, d_style)
        self.pool = AttentivePooling(d_style)
        self.head = nn.Linear(d_style, num_styles)
        reset_parameters(self)

    def features(self, style, pad_mask=None):
        if self.kind == "attention":
            return self.body(style, pad_mask)
        return relu(self.fc2(relu(self.fc1(style))))

    def forward(self, style, pad_mask=None):
        pooled, _ = self.pool(self.features(style, pad_mask), pad_mask)
        return self.head(pooled)

    def store(self) -> ParameterStore:
        return ParameterStore.from_module("style_critic", self)


class TextCritic(AttentiveClassifier):
    """Same layout as the teacher, scoring embedded sequences directly."""

    def forward(self, emb, pad_mask=None):
        return self.scores(self.encode_embedded(emb, pad_mask), pad_mask)[0]

    def store(self) -> ParameterStore:
        return ParameterStore.from_module("text_critic", self)


def build_critics(model_cfg: ModelConfig, cfg: CriticConfig):
    style = StyleCritic(model_cfg.d_style, model_cfg.num_styles, cfg)
    text = TextCritic(model_cfg.vocab_size, model_cfg.num_styles, model_cfg.d_model, cfg.text_layers, cfg.d_ff,
                      cfg.n_heads, cfg.dropout, model_cfg.max_positions)
    return style, text


def style_disc_score(critic: StyleCritic, style: torch.Tensor, pad_mask=None) -> torch.Tensor:
    return critic(style, pad_mask)


def text_disc_score(critic: TextCritic, emb: torch.Tensor, pad_mask=None) -> torch.Tensor:
    return critic(emb, pad_mask)
