import csv
import json
import math

import numpy as np
import pytest
import torch

from conftest import marker_classifier, tiny_model_config
from mssrnet.data import gen_synthetic_corpus
from mssrnet.evaluation import EvalReport, evaluate
from mssrnet.metrics import (bleu, dump_representations, perplexity, r_bleu, span_ratio, stylistic_transfer_ratio,
                             summarize, train_ngram_lm, transfer_accuracy, write_ratio_csv)
from mssrnet.model import MSSRNet
from mssrnet.teacher import SalienceConfig


@pytest.fixture(scope="module")
def marked():
    c = gen_synthetic_corpus(2, 5, seed=4)
    return c.vocab, marker_classifier(c.vocab)


def test_transfer_accuracy_examples(marked):
    v, clf = marked
    pos, neg = v.tokenize("the food was great ."), v.tokenize("the food was awful .")
    assert transfer_accuracy([(pos, 0), (neg, 1)], clf) == 1.0
    assert transfer_accuracy([(pos, 1), (neg, 0)], clf) == 0.0
    assert transfer_accuracy([(pos, 0), (neg, 1), (pos, 0), (pos, 1)], clf) == 0.75


def test_bleu_examples():
    assert bleu(["the cat sat on the mat"], ["the cat sat on the mat"]) == 100.0
    assert bleu(["a b c d"], ["e f g h"]) == 0.0
    score = bleu(["the cat sat down"], ["the cat sat down quickly"])
    assert round(score, 2) == 77.88 and score == pytest.approx(100 * math.exp(1 - 5 / 4))
    with pytest.raises(ValueError):
        bleu(["a"], ["a", "b"])


def test_bleu_identity_on_any_corpus(rng):
    words = list("abcdefgh")
    corpus = [" ".join(rng.choice(words, size=rng.integers(4, 10))) for _ in range(20)]
    assert bleu(corpus, corpus) == 100.0


def test_bleu_lowercases():
    assert bleu(["The Cat sat down"], ["the cat SAT down"]) == 100.0
    assert bleu(["The Cat sat down"], ["the cat SAT down"], lowercase=False) == 0.0


def test_r_bleu_omitted_without_references():
    assert r_bleu(["a b"], None) is None
    assert r_bleu(["a b c d"], ["a b c d"]) == 100.0


def test_lm_near_deterministic_chain():
    lm = train_ngram_lm(["a b a b"] * 100)
    assert perplexity(lm, ["a b a b"]) <= 1.2


def test_lm_uniform_backstop():
    lm = train_ngram_lm(["w1 w2 w3 w4 w5"], order=3, discount=1.0)
    assert lm.vocab_size == 7
    assert perplexity(lm, ["x y z", "q"]) == pytest.approx(7.0, rel=1e-12)
    lm1 = train_ngram_lm(["w1 w2 w3 w4 w5"], order=1, discount=1.0)
    assert perplexity(lm1, ["w3 x w1"]) == pytest.approx(7.0, rel=1e-12)


def test_lm_context_distributions_sum_to_one():
    c = gen_synthetic_corpus(2, 100, seed=1)
    sents = [c.vocab.detokenize(s.ids) for s in c.sequences]
    lm = train_ngram_lm(sents, order=3)
    symbols = sorted(lm.vocab | {"</s>", "<unk>"})
    for ctx in (["<s>", "<s>"], ["the", "food"], ["food", "was"], ["zzz", "the"], ["qq", "rr"]):
        total = sum(lm.prob(w, ctx) for w in symbols)
        assert total == pytest.approx(1.0, abs=1e-6)


def test_lm_empty_text_rejected():
    lm = train_ngram_lm(["a b"])
    with pytest.raises(ValueError):
        perplexity(lm, [])


def test_ppl_decreases_with_concentration():
    ppls = [perplexity(train_ngram_lm(["a"] * k + ["b"] * (10 - k), order=1), ["a a a"]) for k in range(1, 10)]
    assert all(x > y for x, y in zip(ppls, ppls[1:]))


def test_ppl_training_text_below_shuffled(rng):
    c = gen_synthetic_corpus(2, 500, seed=3)
    train, test = c.split([0.9, 0.1], seed=0)
    lm = train_ngram_lm([c.vocab.detokenize(s.ids) for s in train.sequences])
    real = [c.vocab.decode(s.ids) for s in test.sequences]
    shuffled = [list(rng.permutation(r)) for r in real]
    assert perplexity(lm, real) < perplexity(lm, shuffled)


def test_span_ratio_examples():
    assert span_ratio([(5,), (7, 8)], [1, 2, 3]) == 1.0
    assert span_ratio([(5,), (7, 8)], [5, 7, 8]) == 0.0
    assert span_ratio([(5,), (7, 8)], [5, 8, 7]) == 0.5
    assert span_ratio([], [1]) is None


def test_stylistic_transfer_ratio_examples(marked):
    v, clf = marked
    cfg = SalienceConfig(beta=0.01, renormalize=False)
    x = v.tokenize("good food and great service .")
    pairs = [(x, 0, v.tokenize("bad food and awful service .")), (x, 0, x),
             (x, 0, v.tokenize("bad food and great service ."))]
    assert stylistic_transfer_ratio(pairs, clf, cfg) == [1.0, 0.0, 0.5]
    one = v.tokenize("the food was great .")
    flipped = stylistic_transfer_ratio([(one, 0, v.tokenize("the food was awful .")), (one, 0, one)], clf, flip=True)
    assert flipped == [1.0, 0.0]
    assert stylistic_transfer_ratio([(v.tokenize("the food was big ."), 0, one)], clf) == [None]


def test_summarize_and_csv(tmp_path):
    s = summarize([0.0, 1.0, None, 0.5, 0.5])
    assert s["count"] == 4 and s["median"] == 0.5 and s["mean"] == 0.5
    assert summarize([None]) == {"count": 0}
    write_ratio_csv(tmp_path / "r.csv", [0.5, None, 1.0])
    rows = list(csv.reader(open(tmp_path / "r.csv")))
    assert rows == [["sentence_id", "r"], ["0", "0.500000"], ["2", "1.000000"]]


def test_evaluate_report_fields(marked):
    v, clf = marked
    src = [("the food was great .", 0), ("the food was awful .", 1)]
    out = [("the food was awful .", 1), ("the food was awful .", 0)]
    report, ratios = evaluate(src, out, clf, v, ratio_classifier=clf)
    d = report.to_dict()
    assert "r_bleu" not in d and d["accuracy"] == 0.5 and d["count"] == 2
    assert ratios == [1.0, 0.0] and 0 <= d["bleu"] <= 100
    report, _ = evaluate(src, out, clf, v, references=["the food was awful .", "the food was great ."])
    assert "r_bleu" in report.to_dict() and "transfer_ratio" not in report.to_dict()
    assert set(report.per_style) == {"0", "1"}
    with pytest.raises(ValueError):
        evaluate(src, out[:1], clf, v)


def test_dump_representations(tmp_path, tiny_teacher, small_corpus):
    torch.manual_seed(0)
    model = MSSRNet(tiny_model_config(len(small_corpus.vocab)))
    seqs = small_corpus.sequences[:3]
    rows = dump_representations(model, tiny_teacher, seqs, tmp_path / "r.tsv")
    assert rows == 3 * sum(len(s) for s in seqs)
    lines = (tmp_path / "r.tsv").read_text().splitlines()
    assert lines[0].split("\t") == ["id", "pos", "role", "style", "vector"]
    assert {l.split("\t")[2] for l in lines[1:]} == {"content", "style_student", "style_teacher"}
    assert all(len(l.split("\t")[4].split()) == 8 for l in lines[1:])
