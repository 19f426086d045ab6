import numpy as np
import pytest
import torch

from mssrnet.config import CriticConfig, ModelConfig, RunConfig, TeacherConfig, TrainSchedule
from mssrnet.data import gen_synthetic_corpus
from mssrnet.teacher import build_teacher, train_teacher

torch.set_num_threads(1)


def tiny_model_config(vocab_size=12, num_styles=2, **kw):
    base = dict(vocab_size=vocab_size, num_styles=num_styles, d_model=8, d_style=8, d_ff=16, n_heads=2,
                enc_layers=1, dec_layers=1, style_layers=1, dropout=0.0, max_positions=40)
    base.update(kw)
    return ModelConfig(**base)


def tiny_run_config(vocab_size, num_styles=2, seed=3, **schedule):
    sched = dict(iterations=2, batch_size=8, seed=seed, lr=1e-3, checkpoint_every=0, validate_every=0)
    sched.update(schedule)
    return RunConfig(
        model=tiny_model_config(vocab_size, num_styles),
        teacher=TeacherConfig(layers=1, d_ff=16, n_heads=2, dropout=0.0, lr=1e-3, max_steps=50, batch_size=16,
                              eval_every=25, seed=seed),
        critic=CriticConfig(style_layers=1, text_layers=1, d_ff=16, n_heads=2, dropout=0.0),
        schedule=TrainSchedule(**sched),
        seed=seed,
    ).validate()


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def small_corpus():
    return gen_synthetic_corpus(2, 40, seed=5)


@pytest.fixture(scope="session")
def tiny_teacher(small_corpus):
    cfg = tiny_run_config(len(small_corpus.vocab))
    torch.manual_seed(0)
    return build_teacher(len(small_corpus.vocab), 2, 8, cfg.teacher, cfg.model.max_positions).eval()


@pytest.fixture(scope="session")
def synthetic_teacher():
    """Teacher trained on the synthetic corpus at desk width (a few seconds)."""
    from mssrnet.config import desk

    corpus = gen_synthetic_corpus(2, 600, seed=11)
    cfg = desk(len(corpus.vocab), 2, seed=0)
    train, valid = corpus.split([0.9, 0.1], seed=0)
    res = train_teacher(train, cfg.teacher, len(corpus.vocab), cfg.model.d_style, valid=valid,
                        max_positions=cfg.model.max_positions)
    return res.model, corpus


def marker_classifier(vocab, num_styles=2, d=8, seed=0):
    """Hand-built classifier whose label is decided by a single marker token.

    Attention outputs and the feed-forward second layer are zeroed so every
    state depends only on its own token; positional embeddings are zero.
    Marker tokens of style ``k`` carry a pooling feature (dim 0) and a style
    feature (dim 1 + k); all other tokens share identical values on dims
    0..num_styles so they cannot favour any label.
    """
    from mssrnet.config import TeacherConfig
    from mssrnet.data import STYLE_MARKERS

    torch.manual_seed(seed)
    cfg = TeacherConfig(layers=1, d_ff=2 * d, n_heads=2, dropout=0.0)
    model = build_teacher(len(vocab), num_styles, d, cfg, max_positions=40).eval()
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for layer in model.encoder.layers:
            layer.attn.out.weight.zero_()
            layer.attn.out.bias.zero_()
            layer.ff.fc2.weight.zero_()
            layer.ff.fc2.bias.zero_()
        model.pos_emb.weight.zero_()
        emb = torch.zeros(len(vocab), d)
        emb[:, num_styles + 1:] = torch.randn(len(vocab), d - num_styles - 1, generator=g) * 0.3
        for k in range(num_styles):
            for tok in STYLE_MARKERS[k]:
                if tok in vocab:
                    i = vocab.stoi[tok]
                    emb[i, 0] = 3.0
                    emb[i, 1 + k] = 3.0
        model.word_emb.weight.copy_(emb)
        model.pool.v.zero_()
        model.pool.v[0] = 4.0
        model.head.weight.zero_()
        model.head.bias.zero_()
        for k in range(num_styles):
            model.head.weight[k, 1 + k] = 3.0
    return model


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for cid in sorted(RESULTS, key=lambda c: int(c[1:])):
            terminalreporter.write_line(RESULTS[cid])
