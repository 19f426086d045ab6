"""Vocabulary, corpora, noising, batching and the synthetic style corpus."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, List, Optional, Sequence

import numpy as np
import torch

log = logging.getLogger(__name__)

PAD, UNK, BOS, EOS = 0, 1, 2, 3
RESERVED = ("<pad>", "<unk>", "<bos>", "<eos>")
MAX_LEN = 32


class DataError(ValueError):
    pass


class Vocabulary:
    def __init__(self, tokens: Sequence[str]):
        self.itos: List[str] = list(RESERVED) + [t for t in tokens if t not in RESERVED]
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise DataError("duplicate tokens in vocabulary")
        if len(self.itos) < 5:
            raise DataError("vocabulary needs at least one non-reserved token")

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def encode(self, tokens: Iterable[str]) -> List[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids: Iterable[int]) -> List[str]:
        return [self.itos[i] for i in ids]

    def tokenize(self, line: str) -> List[int]:
        return self.encode(line.split())

    def detokenize(self, ids: Iterable[int]) -> str:
        return " ".join(self.decode(ids))

    def to_list(self) -> List[str]:
        return list(self.itos)

    @classmethod
    def from_list(cls, itos: Sequence[str]) -> "Vocabulary":
        if tuple(itos[:4]) != RESERVED:
            raise DataError("serialized vocabulary must start with the reserved tokens")
        return cls(itos[4:])


def build_vocab(lines: Iterable[str], min_freq: int = 1) -> Vocabulary:
    counts = Counter(tok for line in lines for tok in line.split())
    if not counts:
        raise DataError("cannot build a vocabulary from empty input")
    kept = [t for t, c in counts.items() if c >= min_freq and t not in RESERVED]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocabulary(kept)


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple
    style: int

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))
        if not 1 <= len(self.ids) <= MAX_LEN:
            raise DataError(f"sequence length {len(self.ids)} outside [1, {MAX_LEN}]")
        if any(i in (PAD, BOS, EOS) for i in self.ids):
            raise DataError("sequence contains reserved ids")

    def __len__(self):
        return len(self.ids)


@dataclass
class Corpus:
    sequences: List[TokenSequence]
    num_styles: int
    vocab: Optional[Vocabulary] = None

    def __post_init__(self):
        if self.num_styles < 1:
            raise DataError("num_styles must be positive")
        seen = set()
        for s in self.sequences:
            if not 0 <= s.style < self.num_styles:
                raise DataError(f"style label {s.style} outside [0, {self.num_styles})")
            seen.add(s.style)
        if len(seen) != self.num_styles:
            raise DataError(f"corpus has sentences for styles {sorted(seen)}, expected all of {self.num_styles}")

    def __len__(self):
        return len(self.sequences)

    def __getitem__(self, i):
        return self.sequences[i]

    def by_style(self, style: int) -> List[TokenSequence]:
        return [s for s in self.sequences if s.style == style]

    def split(self, fractions: Sequence[float], seed: int = 0) -> List["Corpus"]:
        """Stratified split; each part keeps every style."""
        rng = np.random.default_rng(seed)
        parts: List[List[TokenSequence]] = [[] for _ in fractions]
        for k in range(self.num_styles):
            items = self.by_style(k)
            order = rng.permutation(len(items))
            bounds = np.floor(np.cumsum([0.0, *fractions]) * len(items)).astype(int)
            bounds[-1] = len(items) if abs(sum(fractions) - 1) < 1e-9 else bounds[-1]
            for j in range(len(fractions)):
                parts[j].extend(items[i] for i in order[bounds[j]:bounds[j + 1]])
        return [Corpus(p, self.num_styles, self.vocab) for p in parts]


def noise_sequence(seq: TokenSequence, p: float, rng: np.random.Generator) -> TokenSequence:
    """Replace each token by <unk> independently with probability ``p``."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"noise probability {p} outside [0, 1]")
    hit = rng.random(len(seq)) < p
    return TokenSequence(tuple(UNK if h else t for t, h in zip(seq.ids, hit)), seq.style)


@dataclass
class Batch:
    ids: torch.Tensor  # (B, L) long
    pad_mask: torch.Tensor  # (B, L) bool, True = padding
    styles: torch.Tensor  # (B,) long
    lengths: List[int]
    sequences: List[TokenSequence] = field(repr=False, default_factory=list)

    def __len__(self):
        return len(self.lengths)


def collate(seqs: Sequence[TokenSequence]) -> Batch:
    width = max(len(s) for s in seqs)
    ids = torch.full((len(seqs), width), PAD, dtype=torch.long)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = torch.tensor(s.ids, dtype=torch.long)
    return Batch(
        ids=ids,
        pad_mask=ids.eq(PAD),
        styles=torch.tensor([s.style for s in seqs], dtype=torch.long),
        lengths=[len(s) for s in seqs],
        sequences=list(seqs),
    )


def make_batches(corpus: Corpus, batch_size: int, seed: int) -> List[Batch]:
    """One epoch of length-bucketed batches in a seeded random order."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(corpus))
    order = sorted(order, key=lambda i: len(corpus[i]))  # stable: shuffled ties
    chunks = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    chunks = [chunks[i] for i in rng.permutation(len(chunks))]
    return [collate([corpus[i] for i in c]) for c in chunks]


def batch_stream(corpus: Corpus, batch_size: int, seed: int) -> Iterator[Batch]:
    epoch = 0
    while True:
        yield from make_batches(corpus, batch_size, seed * 100003 + epoch)
        epoch += 1


# --- synthetic corpus -------------------------------------------------------

STYLE_MARKERS = (
    ("good", "great", "delicious", "friendly", "amazing", "excellent", "fantastic", "wonderful", "tasty", "lovely"),
    ("bad", "awful", "terrible", "rude", "bland", "horrible", "disgusting", "poor", "nasty", "dreadful"),
    ("decent", "fine", "okay", "reasonable", "fair", "solid", "average", "modest", "standard", "typical"),
    ("weird", "odd", "strange", "bizarre", "funny", "quirky", "crazy", "wild", "unusual", "curious"),
)
_SUBJECTS = ("food", "service", "staff", "place", "pizza", "coffee", "waiter", "menu",
             "room", "movie", "music", "price", "owner", "bar", "salad", "burger")
_DETS = ("the", "this", "our", "my")
_VERBS = ("was", "is", "seemed", "looked", "felt")
_NEUTRAL = ("big", "small", "hot", "cold", "new", "old", "busy", "quiet", "cheap", "open")
_TAILS = (("today",), ("again",), ("tonight",), ("as", "usual"), ("on", "tuesdays"), ("for", "us"),
          ("at", "lunch"), ("with", "my", "friends"), ("this", "time"), ("overall",))


def _template(rng: np.random.Generator, marker: str) -> List[str]:
    pick = lambda xs: xs[rng.integers(len(xs))]  # noqa: E731
    subj, subj2 = pick(_SUBJECTS), pick(_SUBJECTS)
    kind = int(rng.integers(7))
    if kind == 0:
        return [subj, pick(_VERBS), marker, "."]
    if kind == 1:
        return [pick(_DETS), subj, pick(_VERBS), marker, "."]
    if kind == 2:
        return [pick(_DETS), subj, pick(_VERBS), "very", marker, "."]
    if kind == 3:
        return [pick(_DETS), subj, pick(_VERBS), marker, *pick(_TAILS), "."]
    if kind == 4:
        return [pick(_DETS), subj, pick(_VERBS), marker, "and", pick(_DETS), subj2, pick(_VERBS), pick(_NEUTRAL), "."]
    if kind == 5:
        return ["i", "think", pick(_DETS), subj, pick(_VERBS), marker, *pick(_TAILS), "."]
    return [marker, subj, "and", pick(_NEUTRAL), subj2, *pick(_TAILS), "."]


def synthetic_sentences(num_styles: int, per_style: int, seed: int) -> List[List[tuple]]:
    """Per style, a list of ``(tokens, marker_index)`` pairs."""
    if num_styles not in (2, 3, 4):
        raise ValueError("synthetic corpus supports 2, 3 or 4 styles")
    rng = np.random.default_rng(seed)
    out = []
    for k in range(num_styles):
        rows = []
        for _ in range(per_style):
            j = int(rng.integers(len(STYLE_MARKERS[k])))
            rows.append((_template(rng, STYLE_MARKERS[k][j]), j))
        out.append(rows)
    return out


def synthetic_vocab(num_styles: int) -> Vocabulary:
    toks = set(_SUBJECTS) | set(_DETS) | set(_VERBS) | set(_NEUTRAL) | {t for tail in _TAILS for t in tail}
    toks |= {"very", "and", "i", "think", "."}
    for k in range(num_styles):
        toks |= set(STYLE_MARKERS[k])
    return Vocabulary(sorted(toks))


def gen_synthetic_corpus(num_styles: int, per_style: int, seed: int) -> Corpus:
    """Templated sentences whose style shows only through per-style marker words."""
    vocab = synthetic_vocab(num_styles)
    seqs = [
        TokenSequence(vocab.encode(toks), k)
        for k, rows in enumerate(synthetic_sentences(num_styles, per_style, seed))
        for toks, _ in rows
    ]
    return Corpus(seqs, num_styles, vocab)


def transfer_reference(tokens: Sequence[str], source: int, target: int) -> List[str]:
    """Gold transfer: swap each source marker for its paired target marker."""
    index = {m: j for j, m in enumerate(STYLE_MARKERS[source])}
    return [STYLE_MARKERS[target][index[t]] if t in index else t for t in tokens]


def marker_style(token: str) -> Optional[int]:
    for k, lex in enumerate(STYLE_MARKERS):
        if token in lex:
            return k
    return None


# --- corpus files -----------------------------------------------------------


def read_lines(path: Path | str) -> List[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh]


def write_lines(path: Path | str, lines: Iterable[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")


def read_labeled(paths: Sequence[Path | str]) -> List[tuple]:
    """Read ``(label, sentence)`` pairs from one-file-per-style files or one TSV."""
    pairs = []
    if len(paths) == 1 and str(paths[0]).endswith(".tsv"):
        for n, line in enumerate(read_lines(paths[0]), 1):
            if not line.strip():
                continue
            label, sep, text = line.partition("\t")
            if not sep or not label.strip().isdigit():
                raise DataError(f"{paths[0]}:{n}: expected 'label<TAB>sentence'")
            pairs.append((int(label), text))
    else:
        for k, p in enumerate(paths):
            pairs.extend((k, line) for line in read_lines(p) if line.strip())
    return pairs


def load_corpus(paths: Sequence[Path | str], vocab: Optional[Vocabulary] = None, min_freq: int = 1,
                max_len: int = MAX_LEN, lowercase: bool = True) -> Corpus:
    pairs = read_labeled(paths)
    if lowercase:
        pairs = [(k, s.lower()) for k, s in pairs]
    if vocab is None:
        vocab = build_vocab((s for _, s in pairs), min_freq)
    seqs, skipped = [], 0
    for k, s in pairs:
        ids = vocab.tokenize(s)
        if not 1 <= len(ids) <= max_len:
            skipped += 1
            continue
        seqs.append(TokenSequence(ids, k))
    if skipped:
        log.warning("skipped %d sentences longer than %d tokens or empty", skipped, max_len)
    num_styles = max((k for k, _ in pairs), default=-1) + 1
    return Corpus(seqs, num_styles, vocab)
