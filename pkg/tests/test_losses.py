import math

import numpy as np
import pytest
import torch

from conftest import tiny_model_config
from mssrnet.data import PAD, TokenSequence, collate
from mssrnet.losses import (gradient_penalty, interpolate, loss_self_reconstruction, loss_style_polarity, loss_teach,
                            loss_text_polarity, masked_nll, pick, wgan_losses)
from mssrnet.model import MSSRNet
from mssrnet.nn import NumericError


def test_nll_certain_and_uniform():
    targets = torch.tensor([[2, 0, 1]])
    mask = torch.tensor([[False, False, True]])
    certain = torch.full((1, 3, 5), -math.inf)
    certain[0, 0, 2] = certain[0, 1, 0] = 0.0
    assert masked_nll(certain, targets, mask).item() == 0.0
    uniform = torch.full((1, 3, 5), -math.log(5))
    assert abs(masked_nll(uniform, targets, mask).item() - math.log(5)) < 1e-6


def test_reconstruction_loss_matches_cross_entropy_oracle():
    torch.manual_seed(0)
    model = MSSRNet(tiny_model_config()).eval()
    b = collate([TokenSequence((4, 5, 6), 0), TokenSequence((7, 8), 1)])
    got = loss_self_reconstruction(model, b.ids, b.ids, b.pad_mask, b.styles).item()
    h, _, _ = model.encode(b.ids, b.pad_mask, b.styles)
    logits = model.decode_teacher_forced_logits(h, b.pad_mask, b.ids, b.pad_mask).detach().numpy()
    golds = [[4, 5, 6, 3], [7, 8, 3]]
    terms = []
    for i, gold in enumerate(golds):
        for t, tok in enumerate(gold):
            row = logits[i, t]
            finite = row[np.isfinite(row)]
            terms.append(np.log(np.exp(finite - finite.max()).sum()) + finite.max() - row[tok])
    assert abs(got - np.mean(terms)) < 1e-5


def test_reconstruction_uniform_head():
    torch.manual_seed(0)
    model = MSSRNet(tiny_model_config()).eval()
    with torch.no_grad():
        model.out_proj.weight.zero_()
        model.out_proj.bias.zero_()
    b = collate([TokenSequence((4, 5, 6), 0)])
    loss = loss_self_reconstruction(model, b.ids, b.ids, b.pad_mask, b.styles).item()
    # <pad> and <bos> can never be emitted, so the head is uniform over T - 2 symbols
    assert abs(loss - math.log(12 - 2)) < 1e-6


def test_teach_examples():
    x = torch.randn(2, 3, 4, dtype=torch.float64)
    assert loss_teach(x, x).item() == 0.0
    assert abs(loss_teach(x + 2, x).item() - 4.0) < 1e-12
    rng = np.random.default_rng(0)
    for _ in range(20):
        a, b = rng.normal(size=(3, 5)), rng.normal(size=(3, 5))
        assert abs(loss_teach(torch.tensor(a), torch.tensor(b)).item() - ((a - b) ** 2).mean()) < 1e-6
    with pytest.raises(ValueError):
        loss_teach(torch.zeros(2, 3), torch.zeros(3, 2))


def test_teach_ignores_padding():
    a, b = torch.zeros(1, 3, 2), torch.zeros(1, 3, 2)
    a[0, 2] = 10.0
    mask = torch.tensor([[False, False, True]])
    assert loss_teach(a, b, mask).item() == 0.0


def test_polarity_examples(tiny_teacher):
    style = torch.randn(2, 4, 8)
    with torch.no_grad():
        saved = tiny_teacher.head.weight.clone(), tiny_teacher.head.bias.clone()
        tiny_teacher.head.weight.zero_()
        tiny_teacher.head.bias.zero_()
        loss = loss_style_polarity(style, None, torch.tensor([0, 1]), tiny_teacher).item()
        tiny_teacher.head.bias.copy_(torch.tensor([60.0, -60.0]))
        sure = loss_style_polarity(style, None, torch.tensor([0, 0]), tiny_teacher).item()
        tiny_teacher.head.weight.copy_(saved[0])
        tiny_teacher.head.bias.copy_(saved[1])
    assert abs(loss - math.log(2)) < 1e-6 and sure < 1e-12
    logits, _ = tiny_teacher.scores(style)
    p = torch.softmax(logits, -1)
    oracle = -(p[0, 1].log() + p[1, 0].log()) / 2
    got = loss_style_polarity(style, None, torch.tensor([1, 0]), tiny_teacher)
    assert abs(got.item() - oracle.item()) < 1e-6


def test_text_polarity_nonnegative(tiny_teacher):
    dist = torch.softmax(torch.randn(3, 5, tiny_teacher.word_emb.num_embeddings), -1)
    val = loss_text_polarity(dist, torch.zeros(3, 5, dtype=torch.bool), torch.tensor([0, 1, 1]), tiny_teacher)
    assert val.item() >= 0


def test_wgan_examples():
    c, g = wgan_losses(torch.tensor([2.0]), torch.tensor([0.5]), gp_weight=0)
    assert c.item() == -1.5 and g.item() == -0.5
    same = torch.tensor([0.3, -1.0, 2.0])
    c, _ = wgan_losses(same, same, penalty=torch.tensor(0.25), gp_weight=10)
    assert abs(c.item() - 2.5) < 1e-6
    with pytest.raises(NumericError):
        wgan_losses(same, same, penalty=torch.tensor(float("nan")))


def test_gradient_penalty_linear_unit_critic_is_zero():
    w = torch.tensor([0.6, 0.8])

    def score(points, mask):
        return torch.stack([(points * w).sum((1, 2)), -(points * w).sum((1, 2))], dim=1)

    pts = torch.randn(4, 1, 2)
    gp = gradient_penalty(score, pts, torch.zeros(4, 1, dtype=torch.bool), torch.tensor([0, 1, 0, 1]))
    assert gp.item() < 1e-10
    gp2 = gradient_penalty(lambda p, m: 2 * score(p, m), pts, None, torch.tensor([0, 1, 0, 1]))
    assert abs(gp2.item() - 1.0) < 1e-6


def test_interpolate_truncates_to_shorter():
    real, fake = torch.ones(2, 4, 3), torch.zeros(2, 5, 3)
    rmask = torch.tensor([[False] * 4, [False, False, True, True]])
    fmask = torch.tensor([[False] * 3 + [True] * 2, [False] * 5])
    mixed, mask = interpolate(real, rmask, fake, fmask, torch.tensor([0.25, 1.0]))
    assert mixed.shape == (2, 3, 3)
    assert mask.tolist() == [[False] * 3, [False, False, True]]
    assert torch.allclose(mixed[0], torch.full((3, 3), 0.25))
    assert torch.all(mixed[1, 2] == 0)


def test_pick():
    s = torch.tensor([[1.0, 2.0], [3.0, 4.0]])
    assert pick(s, torch.tensor([1, 0])).tolist() == [2.0, 3.0]
