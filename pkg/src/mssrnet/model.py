"""The transfer model: style generator, content encoder, fusion and decoder."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import torch
from torch import nn
import torch.nn.functional as F

from .config import ModelConfig
from .data import BOS, EOS, PAD, UNK
from .nn import AttentivePooling, DecoderStack, EncoderStack, ParameterStore, ShapeError, reset_parameters


def soft_embed(dist: torch.Tensor, weight: torch.Tensor, tol: float = 1e-4) -> torch.Tensor:
    """Expected embedding ``dist @ weight`` of vocabulary distributions."""
    if dist.shape[-1] != weight.shape[0]:
        raise ShapeError(f"distribution width {dist.shape[-1]} != vocabulary size {weight.shape[0]}")
    sums = dist.detach().sum(-1)
    if (sums - 1).abs().max() > tol:
        raise ValueError(f"distribution rows must sum to 1 (max deviation {float((sums - 1).abs().max()):.2e})")
    return dist @ weight


def fuse(content: torch.Tensor, style: torch.Tensor, w_c: torch.Tensor, w_s: torch.Tensor) -> torch.Tensor:
    """Row-wise ``H = C W_c + S W_s``."""
    if content.shape[:-1] != style.shape[:-1]:
        raise ShapeError(f"content rows {tuple(content.shape[:-1])} != style rows {tuple(style.shape[:-1])}")
    return content @ w_c + style @ w_s


class StyleGenerator(nn.Module):
    """Encoder over ``[style slot; tokens]``; the style slot output is dropped."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.d_style
        self.style_emb = nn.Embedding(cfg.num_styles, d)
        self.word_emb = nn.Embedding(cfg.vocab_size, d, padding_idx=None)
        self.pos_emb = nn.Embedding(cfg.max_positions + 1, d)
        self.encoder = EncoderStack(cfg.style_layers, d, cfg.d_ff, cfg.n_heads, cfg.dropout)
        self.pool = AttentivePooling(d)  # used only by the fixed-vector ablation
        self.fixed_vector = cfg.fixed_style_vector
        self.num_styles = cfg.num_styles

    def forward(self, ids, pad_mask, styles):
        if styles.min() < 0 or styles.max() >= self.num_styles:
            raise ValueError(f"style ids must be in [0, {self.num_styles})")
        b, n = ids.shape
        pos = torch.arange(n + 1, device=ids.device)
        x = torch.cat([self.style_emb(styles)[:, None], self.word_emb(ids)], dim=1) + self.pos_emb(pos)
        mask = torch.cat([torch.zeros(b, 1, dtype=torch.bool, device=ids.device), pad_mask], dim=1)
        out = self.encoder(x, mask)[:, 1:]
        if self.fixed_vector:
            pooled, _ = self.pool(out, pad_mask)
            out = pooled[:, None].expand(-1, n, -1)
        return out


@dataclass
class SoftDecode:
    probs: torch.Tensor  # (B, M, T)
    lengths: torch.Tensor  # (B,) emitted steps, including a final <eos>
    ended: torch.Tensor  # (B,) bool, whether <eos> was emitted

    def content_mask(self) -> Tuple[torch.Tensor, torch.Tensor]:
        """Lengths and pad mask of the token rows, excluding a trailing <eos> row."""
        n = (self.lengths - self.ended.long()).clamp(min=1)
        steps = torch.arange(self.probs.shape[1], device=n.device)
        return n, steps[None, :] >= n[:, None]


class MSSRNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        if cfg.vocab_size < 5:
            raise ShapeError("vocab_size must be set")
        self.cfg = cfg
        d = cfg.d_model
        self.style_generator = StyleGenerator(cfg)
        self.word_emb = nn.Embedding(cfg.vocab_size, d)
        self.pos_emb = nn.Embedding(cfg.max_positions + 1, d)
        self.content_encoder = EncoderStack(cfg.enc_layers, d, cfg.d_ff, cfg.n_heads, cfg.dropout)
        self.w_c = nn.Parameter(torch.empty(d, d))
        self.w_s = nn.Parameter(torch.empty(cfg.d_style, d))
        self.decoder = DecoderStack(cfg.dec_layers, d, cfg.d_ff, cfg.n_heads, cfg.dropout)
        self.out_proj = nn.Linear(d, cfg.vocab_size)
        reset_parameters(self)
        blocked = torch.zeros(cfg.vocab_size, dtype=torch.bool)
        blocked[[PAD, BOS]] = True
        self.register_buffer("blocked", blocked, persistent=False)
        free = blocked.clone()
        free[UNK] = True
        self.register_buffer("blocked_free", free, persistent=False)

    # parameter roles
    def stores(self) -> Tuple[ParameterStore, ParameterStore]:
        phi = ParameterStore.from_module("style_generator", self.style_generator, "style_generator.")
        theta = ParameterStore("transfer", {n: p for n, p in self.named_parameters()
                                            if not n.startswith("style_generator.")})
        return theta, phi

    @property
    def embedding_weight(self) -> torch.Tensor:
        return self.word_emb.weight

    def embed(self, ids: torch.Tensor, offset: int = 0) -> torch.Tensor:
        pos = torch.arange(offset, offset + ids.shape[1], device=ids.device)
        return self.word_emb(ids) + self.pos_emb(pos)

    def generate_style(self, ids, pad_mask, styles):
        return self.style_generator(ids, pad_mask, styles)

    def encode_content(self, ids, pad_mask):
        return self.content_encoder(self.embed(ids), pad_mask)

    def fuse(self, content, style):
        return fuse(content, style, self.w_c, self.w_s)

    def encode(self, ids, pad_mask, styles):
        """Return ``(H, S_y, C)`` for the given target styles."""
        s = self.generate_style(ids, pad_mask, styles)
        c = self.encode_content(ids, pad_mask)
        return self.fuse(c, s), s, c

    def _logits(self, h, free_running: bool):
        logits = self.out_proj(h)
        return logits.masked_fill(self.blocked_free if free_running else self.blocked, float("-inf"))

    def decode_teacher_forced(self, memory, memory_mask, gold_ids, gold_mask):
        """Distributions for ``gold + <eos>`` given ``<bos> + gold`` as input; shape (B, n+1, T)."""
        return self.decode_teacher_forced_logits(memory, memory_mask, gold_ids, gold_mask).softmax(-1)

    def decode_teacher_forced_logits(self, memory, memory_mask, gold_ids, gold_mask):
        b = gold_ids.shape[0]
        bos = torch.full((b, 1), BOS, dtype=torch.long, device=gold_ids.device)
        inp = torch.cat([bos, gold_ids], dim=1)
        inp_mask = torch.cat([torch.zeros(b, 1, dtype=torch.bool, device=gold_ids.device), gold_mask], dim=1)
        h = self.decoder(memory, self.embed(inp), memory_mask, inp_mask)
        return self._logits(h, free_running=False)

    def gold_targets(self, gold_ids, gold_mask):
        """``gold + <eos>`` targets and their pad mask."""
        b = gold_ids.shape[0]
        tgt = torch.cat([gold_ids, torch.full((b, 1), PAD, dtype=torch.long, device=gold_ids.device)], dim=1)
        lengths = (~gold_mask).sum(1)
        tgt[torch.arange(b), lengths] = EOS
        return tgt, tgt.eq(PAD)

    def max_lengths(self, memory_mask) -> torch.Tensor:
        return (~memory_mask).sum(1) + self.cfg.decode_margin

    def decode_soft(self, memory, memory_mask, max_len: Optional[torch.Tensor] = None, hard: bool = False
                    ) -> SoftDecode:
        """Feed each step's full distribution back through ``soft_embed``.

        With ``hard=True`` every distribution is replaced by its argmax one-hot.
        """
        b = memory.shape[0]
        if max_len is None:
            max_len = self.max_lengths(memory_mask)
        max_len = torch.as_tensor(max_len, device=memory.device).expand(b)
        limit = min(int(max_len.max()), self.cfg.max_positions)
        bos = self.embed(torch.full((b, 1), BOS, dtype=torch.long, device=memory.device))
        inputs = [bos]
        probs = []
        done = torch.zeros(b, dtype=torch.bool, device=memory.device)
        lengths = torch.full((b,), limit, dtype=torch.long, device=memory.device)
        ended = torch.zeros(b, dtype=torch.bool, device=memory.device)
        for t in range(limit):
            h = self.decoder(memory, torch.cat(inputs, dim=1), memory_mask)[:, -1]
            p = torch.softmax(self._logits(h, free_running=True), dim=-1)
            top = p.argmax(-1)
            if hard:
                p = F.one_hot(top, p.shape[-1]).to(p.dtype)
            probs.append(p)
            stop = ~done & ((top == EOS) | (t + 1 >= max_len))
            lengths = torch.where(stop, torch.full_like(lengths, t + 1), lengths)
            ended = ended | (stop & (top == EOS))
            done = done | stop
            if bool(done.all()):
                break
            pos = self.pos_emb(torch.tensor([t + 1], device=memory.device))
            inputs.append((soft_embed(p, self.word_emb.weight) + pos)[:, None])
        return SoftDecode(torch.stack(probs, dim=1), lengths, ended)

    @torch.no_grad()
    def decode_greedy(self, memory, memory_mask, max_len: Optional[torch.Tensor] = None) -> List[List[int]]:
        b = memory.shape[0]
        if max_len is None:
            max_len = self.max_lengths(memory_mask)
        max_len = torch.as_tensor(max_len, device=memory.device).expand(b)
        limit = min(int(max_len.max()), self.cfg.max_positions)
        ids = torch.full((b, 1), BOS, dtype=torch.long, device=memory.device)
        out: List[List[int]] = [[] for _ in range(b)]
        done = [False] * b
        for t in range(limit):
            h = self.decoder(memory, self.embed(ids), memory_mask)[:, -1]
            top = self._logits(h, free_running=True).argmax(-1)
            for i in range(b):
                if done[i]:
                    continue
                tok = int(top[i])
                if tok == EOS:
                    done[i] = True
                else:
                    out[i].append(tok)
                    done[i] = t + 1 >= int(max_len[i])
            if all(done):
                break
            ids = torch.cat([ids, top[:, None]], dim=1)
        return out

    @torch.no_grad()
    def transfer(self, ids, pad_mask, styles) -> List[List[int]]:
        h, _, _ = self.encode(ids, pad_mask, styles)
        return self.decode_greedy(h, pad_mask)
