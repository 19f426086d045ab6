"""Evaluation metrics: transfer accuracy, n-gram perplexity, BLEU, stylistic
transfer ratio, and representation dumps for external plotting."""

from __future__ import annotations

import csv
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch

from .data import collate, TokenSequence

BOS_SYM, EOS_SYM, UNK_SYM = "<s>", "</s>", "<unk>"


# --- accuracy ---------------------------------------------------------------


def transfer_accuracy(outputs: Sequence[Tuple[Sequence[int], int]], classifier) -> float:
    """Fraction of outputs whose predicted style equals the intended target."""
    from .teacher import predict

    if not outputs:
        return 0.0
    seqs = [TokenSequence(ids if len(ids) else (1,), s) for ids, s in outputs]
    preds = predict(classifier, seqs)
    return float(np.mean([p == s for p, (_, s) in zip(preds, outputs)]))


# --- BLEU -------------------------------------------------------------------


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_stats(candidates: Sequence[Sequence[str]], references: Sequence[Sequence[str]], max_n: int = 4):
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates but {len(references)} references")
    matches, totals = [0] * max_n, [0] * max_n
    c_len = r_len = 0
    for cand, ref in zip(candidates, references):
        c_len += len(cand)
        r_len += len(ref)
        for n in range(1, max_n + 1):
            c, r = _ngrams(cand, n), _ngrams(ref, n)
            matches[n - 1] += sum(min(k, r[g]) for g, k in c.items())
            totals[n - 1] += max(len(cand) - n + 1, 0)
    return matches, totals, c_len, r_len


def bleu(candidates: Sequence[Sequence[str] | str], references: Sequence[Sequence[str] | str], max_n: int = 4,
         lowercase: bool = True) -> float:
    """Corpus BLEU in [0, 100] without smoothing, one reference per line."""
    cand = [_tok(c, lowercase) for c in candidates]
    ref = [_tok(r, lowercase) for r in references]
    matches, totals, c, r = bleu_stats(cand, ref, max_n)
    if c == 0 or any(m == 0 for m in matches):
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matches, totals)) / max_n
    bp = 1.0 if c >= r else math.exp(1 - r / c)
    return 100.0 * bp * math.exp(log_p)


def r_bleu(candidates, gold: Optional[Sequence] = None, **kw) -> Optional[float]:
    """BLEU against human-written transfers; ``None`` when no references exist."""
    if gold is None:
        return None
    return bleu(candidates, gold, **kw)


def _tok(x, lowercase: bool) -> List[str]:
    toks = x.split() if isinstance(x, str) else list(x)
    return [t.lower() for t in toks] if lowercase else toks


# --- n-gram LM --------------------------------------------------------------


@dataclass
class NGramLM:
    """Interpolated Kneser-Ney with a single absolute discount."""

    order: int = 5
    discount: float = 0.75
    vocab: set = field(default_factory=set)
    counts: List[Dict[tuple, Counter]] = field(default_factory=list)

    @property
    def vocab_size(self) -> int:
        # predictable symbols: words, </s>, <unk>
        return len(self.vocab | {EOS_SYM, UNK_SYM})

    def _context_table(self, n: int):
        return self.counts[n - 1]

    def prob(self, word: str, context: Sequence[str]) -> float:
        if word not in self.vocab and word != EOS_SYM:
            word = UNK_SYM
        context = tuple(context)[-(self.order - 1):] if self.order > 1 else ()
        return self._prob(word, context)

    def _prob(self, word: str, context: tuple) -> float:
        n = len(context) + 1
        if n == 1:
            table = self._context_table(1).get((), Counter())
            total = sum(table.values())
            uniform = 1.0 / self.vocab_size
            if total == 0:
                return uniform
            types = len(table)
            return max(table[word] - self.discount, 0) / total + self.discount * types / total * uniform
        table = self._context_table(n).get(context)
        lower = self._prob(word, context[1:])
        if not table:
            return lower
        total = sum(table.values())
        return max(table[word] - self.discount, 0) / total + self.discount * len(table) / total * lower

    def sentence_logprob(self, tokens: Sequence[str]) -> Tuple[float, int]:
        toks = [t if t in self.vocab else UNK_SYM for t in tokens] + [EOS_SYM]
        hist = [BOS_SYM] * (self.order - 1)
        total = 0.0
        for t in toks:
            total += math.log(self.prob(t, hist))
            hist = hist[1:] + [t] if self.order > 1 else hist
        return total, len(toks)


def train_ngram_lm(sentences: Iterable[Sequence[str] | str], order: int = 5, discount: float = 0.75) -> NGramLM:
    """Count tables for interpolated Kneser-Ney.

    The highest order keeps raw counts; lower orders keep continuation
    counts (number of distinct left contexts).
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    sents = [_tok(s, False) for s in sentences]
    vocab = {t for s in sents for t in s}
    raw: List[Counter] = [Counter() for _ in range(order)]
    for s in sents:
        padded = [BOS_SYM] * (order - 1) + s + [EOS_SYM]
        for n in range(1, order + 1):
            for i in range(order - n, len(padded) - n + 1):
                raw[n - 1][tuple(padded[i:i + n])] += 1
    tables: List[Dict[tuple, Counter]] = [defaultdict(Counter) for _ in range(order)]
    for gram, c in raw[order - 1].items():
        tables[order - 1][gram[:-1]][gram[-1]] += c
    for n in range(1, order):
        left = defaultdict(set)
        for gram in raw[n]:
            left[gram[1:]].add(gram[0])
        for gram, ctxs in left.items():
            tables[n - 1][gram[:-1]][gram[-1]] = len(ctxs)
    return NGramLM(order, discount, vocab, [dict(t) for t in tables])


def perplexity(lm: NGramLM, sentences: Iterable[Sequence[str] | str]) -> float:
    total, count = 0.0, 0
    for s in sentences:
        lp, n = lm.sentence_logprob(_tok(s, False))
        total += lp
        count += n
    if count == 0:
        raise ValueError("cannot compute perplexity of empty text")
    return math.exp(-total / count)


# --- stylistic transfer ratio -----------------------------------------------


def _contains(haystack: Sequence, needle: Sequence) -> bool:
    k = len(needle)
    return any(tuple(haystack[i:i + k]) == tuple(needle) for i in range(len(haystack) - k + 1))


def span_ratio(spans: Sequence[Sequence], output: Sequence) -> Optional[float]:
    """Fraction of spans that no longer occur contiguously in ``output``."""
    if not spans:
        return None
    return sum(not _contains(output, s) for s in spans) / len(spans)


def stylistic_transfer_ratio(pairs: Sequence[Tuple[Sequence[int], int, Sequence[int]]], classifier,
                             cfg=None, flip: bool = False) -> List[Optional[float]]:
    """Per-sentence ``r = num_s / num_a``; ``None`` where no span is selected.

    With ``flip=True`` a span counts as transferred when the classifier no
    longer predicts the source style for the output.
    """
    from .teacher import SalienceConfig, select_stylistic_tokens, predict

    cfg = cfg or SalienceConfig()
    out: List[Optional[float]] = []
    for x, s_x, y in pairs:
        spans = [s.tokens for s in select_stylistic_tokens(x, s_x, classifier, cfg).spans]
        if not spans:
            out.append(None)
        elif flip:
            pred = predict(classifier, [TokenSequence(y if len(y) else (1,), s_x)])[0]
            out.append(float(pred != s_x))
        else:
            out.append(span_ratio(spans, y))
    return out


def summarize(values: Iterable[Optional[float]]) -> Dict[str, float]:
    v = np.array([x for x in values if x is not None], dtype=float)
    if v.size == 0:
        return {"count": 0}
    q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75])
    return {"count": int(v.size), "mean": float(v.mean()), "min": float(v.min()), "q1": float(q1),
            "median": float(med), "q3": float(q3), "max": float(v.max())}


def write_ratio_csv(path: Path | str, ratios: Sequence[Optional[float]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sentence_id", "r"])
        for i, r in enumerate(ratios):
            if r is not None:
                w.writerow([i, f"{r:.6f}"])


# --- representation dumps ---------------------------------------------------


@torch.no_grad()
def dump_representations(model, teacher, sentences: Sequence[TokenSequence], path: Path | str,
                         batch_size: int = 128) -> int:
    """Write per-token content, student-style and teacher-style rows as TSV.

    Columns: sentence id, token position, role, style, vector (space-separated).
    Student style rows use the sentence's own style as target. Returns rows written.
    """
    model.eval()
    rows = 0
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("id\tpos\trole\tstyle\tvector\n")
        for start in range(0, len(sentences), batch_size):
            b = collate(sentences[start:start + batch_size])
            _, s, c = model.encode(b.ids, b.pad_mask, b.styles)
            t = teacher.encode(b.ids, b.pad_mask)
            for i, n in enumerate(b.lengths):
                sid, style = start + i, int(b.styles[i])
                for role, mat in (("content", c), ("style_student", s), ("style_teacher", t)):
                    for j in range(n):
                        vec = mat[i, j]
                        if not torch.isfinite(vec).all():
                            raise ValueError(f"non-finite {role} vector for sentence {sid}")
                        fh.write(f"{sid}\t{j}\t{role}\t{style}\t" + " ".join(f"{v:.6g}" for v in vec.tolist()) + "\n")
                        rows += 1
    return rows
