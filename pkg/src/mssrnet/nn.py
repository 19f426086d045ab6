"""Differentiable building blocks: attention stacks, attentive pooling, Adam,
role-tagged parameter stores and a central-difference gradient checker.

Tensors are torch tensors laid out batch-first: ``(B, n, d)``. Padding masks
are boolean with ``True`` marking padded positions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, Mapping, Optional, Tuple

import torch
from torch import nn
import torch.nn.functional as F

ROLES = ("transfer", "style_generator", "style_critic", "text_critic", "teacher")

# active only inside gradient_check: sign patterns of every relu input
_relu_signs: Optional[list] = None


def relu(x: torch.Tensor) -> torch.Tensor:
    if _relu_signs is not None:
        _relu_signs.append(x.detach() > 0)
    return F.relu(x)


class ShapeError(ValueError):
    """Input rejected because of a shape or mask mismatch."""


class NumericError(FloatingPointError):
    """A loss, gradient or penalty became non-finite."""


def init_weights(module: nn.Module) -> None:
    """Scaled-uniform init for matrices, zeros for biases."""
    for name, p in module.named_parameters(recurse=False):
        if p.dim() >= 2:
            nn.init.xavier_uniform_(p)
        elif name.endswith("bias"):
            nn.init.zeros_(p)


def reset_parameters(model: nn.Module) -> None:
    for m in model.modules():
        if isinstance(m, nn.LayerNorm):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)
        else:
            init_weights(m)


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int, dropout: float = 0.1):
        super().__init__()
        if d_model % n_heads:
            raise ShapeError(f"d_model={d_model} not divisible by n_heads={n_heads}")
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.q = nn.Linear(d_model, d_model)
        self.k = nn.Linear(d_model, d_model)
        self.v = nn.Linear(d_model, d_model)
        self.out = nn.Linear(d_model, d_model)
        self.dropout = nn.Dropout(dropout)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, n, _ = x.shape
        return x.view(b, n, self.n_heads, self.d_head).transpose(1, 2)

    def forward(self, query, key, value, key_pad_mask=None, causal=False):
        b, tq, d = query.shape
        tk = key.shape[1]
        q, k, v = self._split(self.q(query)), self._split(self.k(key)), self._split(self.v(value))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_head)
        if key_pad_mask is not None:
            scores = scores.masked_fill(key_pad_mask[:, None, None, :], float("-inf"))
        if causal:
            future = torch.ones(tq, tk, dtype=torch.bool, device=query.device).triu(1)
            scores = scores.masked_fill(future, float("-inf"))
        attn = self.dropout(torch.softmax(scores, dim=-1))
        ctx = (attn @ v).transpose(1, 2).reshape(b, tq, d)
        return self.out(ctx)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, d_ff: int, dropout: float = 0.1):
        super().__init__()
        self.fc1 = nn.Linear(d_model, d_ff)
        self.fc2 = nn.Linear(d_ff, d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x):
        return self.fc2(self.dropout(relu(self.fc1(x))))


class EncoderLayer(nn.Module):
    # post-norm, as in the original transformer
    def __init__(self, d_model, n_heads, d_ff, dropout):
        super().__init__()
        self.attn = MultiHeadAttention(d_model, n_heads, dropout)
        self.ff = FeedForward(d_model, d_ff, dropout)
        self.norm1 = nn.LayerNorm(d_model)
        self.norm2 = nn.LayerNorm(d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x, pad_mask=None):
        x = self.norm1(x + self.dropout(self.attn(x, x, x, key_pad_mask=pad_mask)))
        return self.norm2(x + self.dropout(self.ff(x)))


class DecoderLayer(nn.Module):
    def __init__(self, d_model, n_heads, d_ff, dropout):
        super().__init__()
        self.self_attn = MultiHeadAttention(d_model, n_heads, dropout)
        self.cross_attn = MultiHeadAttention(d_model, n_heads, dropout)
        self.ff = FeedForward(d_model, d_ff, dropout)
        self.norm1 = nn.LayerNorm(d_model)
        self.norm2 = nn.LayerNorm(d_model)
        self.norm3 = nn.LayerNorm(d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x, memory, memory_pad_mask=None, tgt_pad_mask=None):
        x = self.norm1(x + self.dropout(self.self_attn(x, x, x, key_pad_mask=tgt_pad_mask, causal=True)))
        x = self.norm2(x + self.dropout(self.cross_attn(x, memory, memory, key_pad_mask=memory_pad_mask)))
        return self.norm3(x + self.dropout(self.ff(x)))


def _check_seq(x: torch.Tensor, d: int, mask: Optional[torch.Tensor], what: str) -> None:
    if x.dim() != 3 or x.shape[-1] != d:
        raise ShapeError(f"{what}: expected (B, n, {d}), got {tuple(x.shape)}")
    if x.shape[1] < 1:
        raise ShapeError(f"{what}: empty sequence")
    if mask is not None and tuple(mask.shape) != tuple(x.shape[:2]):
        raise ShapeError(f"{what}: mask shape {tuple(mask.shape)} does not match {tuple(x.shape[:2])}")


class EncoderStack(nn.Module):
    """Stack of self-attention layers over already-embedded inputs."""

    def __init__(self, n_layers: int, d_model: int, d_ff: int, n_heads: int, dropout: float = 0.1):
        super().__init__()
        if n_layers < 1:
            raise ShapeError("encoder needs at least one layer")
        if d_model % n_heads:
            raise ShapeError(f"d_model={d_model} not divisible by n_heads={n_heads}")
        self.d_model = d_model
        self.layers = nn.ModuleList(EncoderLayer(d_model, n_heads, d_ff, dropout) for _ in range(n_layers))

    def forward(self, emb: torch.Tensor, pad_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        _check_seq(emb, self.d_model, pad_mask, "encoder input")
        x = emb
        for layer in self.layers:
            x = layer(x, pad_mask)
        return x


class DecoderStack(nn.Module):
    """Causal self-attention plus cross-attention over a memory."""

    def __init__(self, n_layers: int, d_model: int, d_ff: int, n_heads: int, dropout: float = 0.1):
        super().__init__()
        if n_layers < 1:
            raise ShapeError("decoder needs at least one layer")
        if d_model % n_heads:
            raise ShapeError(f"d_model={d_model} not divisible by n_heads={n_heads}")
        self.d_model = d_model
        self.layers = nn.ModuleList(DecoderLayer(d_model, n_heads, d_ff, dropout) for _ in range(n_layers))

    def forward(self, memory, prefix, memory_pad_mask=None, prefix_pad_mask=None):
        if memory.dim() != 3 or memory.shape[1] == 0:
            raise ShapeError("decoder memory is empty")
        _check_seq(memory, self.d_model, memory_pad_mask, "decoder memory")
        _check_seq(prefix, self.d_model, prefix_pad_mask, "decoder prefix")
        x = prefix
        for layer in self.layers:
            x = layer(x, memory, memory_pad_mask, prefix_pad_mask)
        return x


def attentive_pool(
    h: torch.Tensor, v: torch.Tensor, pad_mask: Optional[torch.Tensor] = None
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Softmax(v . h_i)-weighted average of the rows of ``h``.

    Accepts ``(n, d)`` or ``(B, n, d)``; returns ``(pooled, weights)``.
    """
    if h.dim() == 2:
        pooled, w = attentive_pool(h[None], v, None if pad_mask is None else pad_mask[None])
        return pooled[0], w[0]
    if h.shape[1] < 1 or v.shape[-1] != h.shape[-1]:
        raise ShapeError(f"cannot pool {tuple(h.shape)} with vector {tuple(v.shape)}")
    logits = h @ v
    if pad_mask is not None:
        logits = logits.masked_fill(pad_mask, float("-inf"))
    weights = torch.softmax(logits, dim=-1)
    return (weights.unsqueeze(-1) * h).sum(dim=1), weights


def softmax_linear_head(x: torch.Tensor, W: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if W.shape[-1] < 2 or x.shape[-1] != W.shape[0] or b.shape[-1] != W.shape[-1]:
        raise ShapeError(f"head shapes x={tuple(x.shape)} W={tuple(W.shape)} b={tuple(b.shape)}")
    return torch.softmax(x @ W + b, dim=-1)


class AttentivePooling(nn.Module):
    def __init__(self, d: int):
        super().__init__()
        bound = math.sqrt(6.0 / (d + 1))
        self.v = nn.Parameter(torch.empty(d).uniform_(-bound, bound))

    def forward(self, h, pad_mask=None):
        return attentive_pool(h, self.v, pad_mask)


class ParameterStore:
    """Named parameters carrying one role tag.

    The role decides which optimizer may step them; see ``ROLES``.
    """

    def __init__(self, role: str, params: Mapping[str, nn.Parameter]):
        if role not in ROLES:
            raise ValueError(f"unknown role {role!r}")
        self.role = role
        self.params: Dict[str, nn.Parameter] = dict(params)

    @classmethod
    def from_module(cls, role: str, module: nn.Module, prefix: str = "") -> "ParameterStore":
        return cls(role, {prefix + n: p for n, p in module.named_parameters()})

    def __iter__(self):
        return iter(self.params.values())

    def __len__(self):
        return len(self.params)

    def items(self):
        return self.params.items()

    def snapshot(self) -> Dict[str, torch.Tensor]:
        return {n: p.detach().clone() for n, p in self.params.items()}

    def set_trainable(self, flag: bool) -> None:
        for p in self.params.values():
            p.requires_grad_(flag)

    def grad_norm(self) -> float:
        total = 0.0
        for p in self.params.values():
            if p.grad is not None:
                total += float(p.grad.detach().pow(2).sum())
        return math.sqrt(total)


class Adam(torch.optim.Adam):
    """torch Adam that refuses to apply non-finite gradients."""

    def __init__(self, store: ParameterStore, lr=1e-4, betas=(0.5, 0.98), eps=1e-8):
        self.store = store
        self.names = list(store.params)
        super().__init__(list(store), lr=lr, betas=betas, eps=eps)

    def step(self, closure=None):
        for name, p in zip(self.names, self.store):
            if p.grad is not None and not torch.isfinite(p.grad).all():
                raise NumericError(f"non-finite gradient in {self.store.role}:{name}")
        return super().step(closure)

    def step_count(self) -> int:
        counts = [int(s["step"]) for s in self.state.values() if "step" in s]
        return max(counts, default=0)


def adam_step(opt: Adam, grads: Mapping[str, torch.Tensor]) -> Adam:
    """Load explicit gradients into ``opt.store`` and apply one Adam update."""
    for name, p in opt.store.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {tuple(g.shape)}, expected {tuple(p.shape)}")
        p.grad = g.detach().clone().to(p.dtype)
    opt.step()
    return opt


@dataclass
class GradCheckReport:
    errors: Dict[str, float]
    checked: int = 0
    skipped: int = 0

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def passed(self, tol: float = 1e-3) -> bool:
        return self.max_error <= tol


def _signs(fn: Callable[[], torch.Tensor]) -> Tuple[float, list]:
    global _relu_signs
    _relu_signs = []
    try:
        value = fn().item()
        return value, _relu_signs
    finally:
        _relu_signs = None


def gradient_check(
    loss_fn: Callable[[], torch.Tensor],
    params: Mapping[str, torch.Tensor] | Iterable[Tuple[str, torch.Tensor]],
    step: float = 1e-3,
) -> GradCheckReport:
    """Compare autograd gradients to central differences.

    ``loss_fn`` must rebuild the graph on each call from ``params`` (which
    should be float64 leaves). Per parameter tensor the reported error is
    ``max|a - n| / max(max|a|, max|n|, 1e-8)``. Entries whose +/- step
    flips the sign of any relu input straddle a kink, where the central
    difference is not a derivative; they are left out and counted in
    ``skipped``.
    """
    named = dict(params.items() if isinstance(params, Mapping) else params)
    loss = loss_fn()
    if not torch.isfinite(loss):
        raise NumericError(f"non-finite loss {loss.item()}")
    tensors = list(named.values())
    analytic = torch.autograd.grad(loss, tensors, allow_unused=True)
    errors = {}
    checked = skipped = 0
    with torch.no_grad():
        _, base = _signs(loss_fn)
        for (name, p), a in zip(named.items(), analytic):
            a = torch.zeros_like(p) if a is None else a
            numeric = torch.empty_like(p)
            keep = torch.ones_like(p, dtype=torch.bool)
            flat, nflat, kflat = p.view(-1), numeric.view(-1), keep.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + step
                up, s_up = _signs(loss_fn)
                flat[i] = orig - step
                down, s_down = _signs(loss_fn)
                flat[i] = orig
                if not (math.isfinite(up) and math.isfinite(down)):
                    raise NumericError(f"non-finite loss while perturbing {name}")
                nflat[i] = (up - down) / (2 * step)
                kflat[i] = all(torch.equal(b, u) and torch.equal(b, d) for b, u, d in zip(base, s_up, s_down))
            checked += int(keep.sum())
            skipped += int((~keep).sum())
            a, numeric = a[keep], numeric[keep]
            if a.numel() == 0:
                continue
            scale = max(a.abs().max().item(), numeric.abs().max().item(), 1e-8)
            errors[name] = (a - numeric).abs().max().item() / scale
    return GradCheckReport(errors, checked, skipped)
