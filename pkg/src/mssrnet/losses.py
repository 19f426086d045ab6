"""Training objectives: reconstruction NLL, teacher-student terms and WGAN-GP."""

from __future__ import annotations

from typing import Callable, Optional, Tuple

import torch
import torch.nn.functional as F

from .nn import NumericError


def masked_nll(log_probs: torch.Tensor, targets: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
    """Mean negative log-likelihood over unpadded target positions."""
    picked = log_probs.gather(-1, targets.clamp(min=0)[..., None])[..., 0]
    keep = ~pad_mask
    return -picked.masked_fill(pad_mask, 0.0).sum() / keep.sum()


def loss_self_reconstruction(model, noisy_ids, gold_ids, pad_mask, styles) -> torch.Tensor:
    """Token-level NLL of the clean sentence decoded from its noised copy."""
    h, _, _ = model.encode(noisy_ids, pad_mask, styles)
    logits = model.decode_teacher_forced_logits(h, pad_mask, gold_ids, pad_mask)
    targets, tgt_mask = model.gold_targets(gold_ids, pad_mask)
    return masked_nll(torch.log_softmax(logits, -1), targets, tgt_mask)


def loss_teach(student: torch.Tensor, teacher: torch.Tensor, pad_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Mean squared error over all unpadded entries."""
    if student.shape != teacher.shape:
        raise ValueError(f"style representation shapes differ: {tuple(student.shape)} vs {tuple(teacher.shape)}")
    sq = (student - teacher.detach()).pow(2)
    if pad_mask is None:
        return sq.mean()
    keep = (~pad_mask)[..., None].to(sq.dtype)
    return (sq * keep).sum() / (keep.sum() * sq.shape[-1])


def loss_style_polarity(style, pad_mask, targets, teacher) -> torch.Tensor:
    """Cross-entropy of the teacher's pooled prediction on generated style vectors."""
    logits, _ = teacher.scores(style, pad_mask)
    return F.cross_entropy(logits, targets)


def loss_text_polarity(dist, pad_mask, targets, teacher) -> torch.Tensor:
    """Cross-entropy of the teacher run on soft embeddings of generated distributions."""
    states = teacher.encode_embedded(teacher.embed_soft(dist), pad_mask)
    logits, _ = teacher.scores(states, pad_mask)
    return F.cross_entropy(logits, targets)


def pick(scores: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Score component of each example's (intended) style."""
    return scores.gather(1, labels[:, None])[:, 0]


def wgan_losses(real: torch.Tensor, fake: torch.Tensor, penalty: Optional[torch.Tensor] = None,
                gp_weight: float = 10.0) -> Tuple[torch.Tensor, torch.Tensor]:
    """``(critic_loss, generator_loss)`` for per-example critic gains."""
    critic = fake.mean() - real.mean()
    if penalty is not None and gp_weight:
        if not torch.isfinite(penalty):
            raise NumericError(f"non-finite gradient penalty {float(penalty)}")
        critic = critic + gp_weight * penalty
    return critic, -fake.mean()


def interpolate(real: torch.Tensor, real_mask: torch.Tensor, fake: torch.Tensor, fake_mask: torch.Tensor,
                eps: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """Per-example convex combinations, truncated to the shorter sequence."""
    n = torch.minimum((~real_mask).sum(1), (~fake_mask).sum(1)).clamp(min=1)
    width = int(n.max())
    mask = torch.arange(width, device=n.device)[None, :] >= n[:, None]
    e = eps.view(-1, 1, 1).to(real.dtype)
    mixed = e * real[:, :width] + (1 - e) * fake[:, :width]
    return mixed.masked_fill(mask[..., None], 0.0), mask


def gradient_penalty(score_fn: Callable, points: torch.Tensor, pad_mask: torch.Tensor,
                     labels: torch.Tensor) -> torch.Tensor:
    """``mean((||d score_label / d points||_2 - 1)^2)`` with per-example norms."""
    points = points.detach().requires_grad_(True)
    scores = pick(score_fn(points, pad_mask), labels)
    (grad,) = torch.autograd.grad(scores.sum(), points, create_graph=True)
    norms = (grad.flatten(1).pow(2).sum(1) + 1e-12).sqrt()
    return (norms - 1).pow(2).mean()
