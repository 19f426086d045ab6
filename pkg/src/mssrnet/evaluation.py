"""Report assembly over transferred outputs, plus the style/content probe."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from .data import TokenSequence, Vocabulary, collate
from .metrics import (NGramLM, bleu, perplexity, r_bleu, stylistic_transfer_ratio, summarize, transfer_accuracy)

REPORT_FIELDS = ("accuracy", "bleu", "r_bleu", "ppl", "transfer_ratio", "per_style", "count")


def default_targets(styles: Sequence[int], num_styles: int) -> List[int]:
    return [(s + 1) % num_styles for s in styles]


@torch.no_grad()
def transfer_all(model, seqs: Sequence[TokenSequence], targets: Optional[Sequence[int]] = None,
                 batch_size: int = 128) -> List[List[int]]:
    """Greedy transfers in input order."""
    model.eval()
    if targets is None:
        targets = default_targets([s.style for s in seqs], model.cfg.num_styles)
    out: List[List[int]] = []
    for i in range(0, len(seqs), batch_size):
        b = collate(seqs[i:i + batch_size])
        tgt = torch.tensor(list(targets[i:i + batch_size]), dtype=torch.long)
        out.extend(model.transfer(b.ids, b.pad_mask, tgt))
    return out


def self_transfer_scores(model, seqs: Sequence[TokenSequence], judge, targets=None) -> Dict[str, float]:
    """Transfer accuracy under ``judge`` and BLEU of outputs against their sources."""
    if targets is None:
        targets = default_targets([s.style for s in seqs], model.cfg.num_styles)
    outs = transfer_all(model, seqs, targets)
    acc = transfer_accuracy(list(zip(outs, targets)), judge)
    sb = bleu([[str(t) for t in o] for o in outs], [[str(t) for t in s.ids] for s in seqs])
    return {"accuracy": acc, "self_bleu": sb}


@dataclass
class EvalReport:
    accuracy: float
    bleu: float
    ppl: Optional[float]
    r_bleu: Optional[float] = None
    transfer_ratio: Optional[Dict[str, float]] = None
    per_style: Dict[str, Dict[str, float]] = field(default_factory=dict)
    count: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.r_bleu is None:
            del d["r_bleu"]
        if self.transfer_ratio is None:
            del d["transfer_ratio"]
        return d

    def to_json(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def evaluate(sources: Sequence[Tuple[str, int]], outputs: Sequence[Tuple[str, int]], classifier,
             vocab: Vocabulary, lm: Optional[NGramLM] = None, references: Optional[Sequence[str]] = None,
             ratio_classifier=None) -> Tuple[EvalReport, List[Optional[float]]]:
    """Score line-aligned ``(sentence, style)`` sources against transferred outputs."""
    if len(sources) != len(outputs):
        raise ValueError(f"{len(sources)} sources but {len(outputs)} outputs")
    if references is not None and len(references) != len(outputs):
        raise ValueError(f"{len(references)} references but {len(outputs)} outputs")
    out_ids = [vocab.tokenize(o) for o, _ in outputs]
    acc = transfer_accuracy([(ids, s) for ids, (_, s) in zip(out_ids, outputs)], classifier)
    cand = [o for o, _ in outputs]
    report = EvalReport(
        accuracy=acc,
        bleu=bleu(cand, [s for s, _ in sources]),
        ppl=perplexity(lm, cand) if lm is not None else None,
        r_bleu=r_bleu(cand, references),
        count=len(outputs),
    )
    ratios: List[Optional[float]] = []
    if ratio_classifier is not None:
        pairs = [(vocab.tokenize(s), k, ids) for (s, k), ids in zip(sources, out_ids) if s.split()]
        ratios = stylistic_transfer_ratio(pairs, ratio_classifier)
        report.transfer_ratio = summarize(ratios)
    for k in sorted({s for _, s in outputs}):
        idx = [i for i, (_, s) in enumerate(outputs) if s == k]
        report.per_style[str(k)] = {
            "count": len(idx),
            "accuracy": transfer_accuracy([(out_ids[i], k) for i in idx], classifier),
            "bleu": bleu([cand[i] for i in idx], [sources[i][0] for i in idx]),
        }
    return report, ratios


@torch.no_grad()
def pooled_representations(model, seqs: Sequence[TokenSequence], targets: Sequence[int], batch_size: int = 256
                           ) -> Tuple[np.ndarray, np.ndarray]:
    """Mean-pooled style (for the given targets) and content vectors."""
    model.eval()
    style, content = [], []
    for i in range(0, len(seqs), batch_size):
        b = collate(seqs[i:i + batch_size])
        tgt = torch.tensor(list(targets[i:i + batch_size]), dtype=torch.long)
        _, s, c = model.encode(b.ids, b.pad_mask, tgt)
        keep = (~b.pad_mask)[..., None].float()
        style.append(((s * keep).sum(1) / keep.sum(1)).numpy())
        content.append(((c * keep).sum(1) / keep.sum(1)).numpy())
    return np.concatenate(style), np.concatenate(content)


def representation_probe(model, train: Sequence[TokenSequence], test: Sequence[TokenSequence], seed: int = 0
                         ) -> Dict[str, float]:
    """Linear-probe accuracy for the target style on pooled style vs content rows.

    Every sentence is encoded once per style; the label is the style the
    representation was generated for.
    """
    from sklearn.linear_model import LogisticRegression

    k = model.cfg.num_styles

    def expand(seqs):
        rows = [(s, t) for s in seqs for t in range(k)]
        style, content = pooled_representations(model, [s for s, _ in rows], [t for _, t in rows])
        return style, content, np.array([t for _, t in rows])

    s_tr, c_tr, y_tr = expand(train)
    s_te, c_te, y_te = expand(test)
    out = {}
    for name, xtr, xte in (("style", s_tr, s_te), ("content", c_tr, c_te)):
        clf = LogisticRegression(max_iter=2000, random_state=seed).fit(xtr, y_tr)
        out[name] = float(clf.score(xte, y_te))
    return out
