"""WER/CER, BLEU1, TTS frame L2, and retrieval recall / median rank."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np

from .config import EOS, VOCAB


def _strip(seq) -> list:
    out = []
    for t in seq:
        if isinstance(t, (int, np.integer)) and int(t) == EOS:
            break
        out.append(t)
    return out


def levenshtein(hyp, ref) -> int:
    """Unit-cost edit distance between two sequences."""
    prev = list(range(len(ref) + 1))
    for i, h in enumerate(hyp, 1):
        cur = [i] + [0] * len(ref)
        for j, r in enumerate(ref, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (h != r))
        prev = cur
    return prev[-1]


def _units(seq, unit: str) -> list:
    if isinstance(seq, str):
        words = seq.split()
    else:
        words = [VOCAB.symbols[int(t)] for t in _strip(seq)]
    if unit == "word":
        return words
    if unit == "char":
        return list(" ".join(words))
    raise ValueError(f"unit must be 'word' or 'char', not {unit!r}")


def edit_distance_rate(hyp, ref, unit: str = "word") -> float:
    """Edit distance over ``ref`` length, in percent (may exceed 100).

    Accepts token-id sequences (EOS and later ignored) or plain strings.
    """
    h, r = _units(hyp, unit), _units(ref, unit)
    if not r:
        raise ValueError("reference is empty")
    return 100.0 * levenshtein(h, r) / len(r)


def corpus_error_rate(hyps, refs, unit: str = "word") -> float:
    edits = total = 0
    for h, r in zip(hyps, refs):
        hu, ru = _units(h, unit), _units(r, unit)
        if not ru:
            raise ValueError("reference is empty")
        edits += levenshtein(hu, ru)
        total += len(ru)
    return 100.0 * edits / total


def _bleu1_counts(hyp, ref):
    h, r = _units(hyp, "word"), _units(ref, "word")
    if not r:
        raise ValueError("reference is empty")
    rc = Counter(r)
    clipped = sum(min(c, rc[w]) for w, c in Counter(h).items())
    return clipped, len(h), len(r)


def _brevity(hyp_len: int, ref_len: int) -> float:
    return math.exp(min(0.0, 1.0 - ref_len / hyp_len))


def bleu1(hyp, ref) -> float:
    clipped, hl, rl = _bleu1_counts(hyp, ref)
    if hl == 0:
        return 0.0
    return 100.0 * clipped / hl * _brevity(hl, rl)


def corpus_bleu1(hyps, refs) -> float:
    """Corpus-level BLEU1: pooled clipped matches and lengths."""
    clipped = hl = rl = 0
    for h, r in zip(hyps, refs):
        c, a, b = _bleu1_counts(h, r)
        clipped, hl, rl = clipped + c, hl + a, rl + b
    if hl == 0:
        return 0.0
    return 100.0 * clipped / hl * _brevity(hl, rl)


def tts_l2(pred: np.ndarray, ref: np.ndarray) -> float:
    """Mean per-frame squared L2 over the aligned prefix plus a length penalty.

    The penalty is ``|T_pred - T_ref| / T_ref`` times the mean per-frame
    energy of the reference.
    """
    pred, ref = np.asarray(pred, dtype=float), np.asarray(ref, dtype=float)
    if len(pred) == 0 or len(ref) == 0:
        raise ValueError("tts_l2 needs non-empty frame sequences")
    n = min(len(pred), len(ref))
    aligned = float(((pred[:n] - ref[:n]) ** 2).sum(axis=1).mean())
    energy = float((ref ** 2).sum(axis=1).mean())
    return aligned + abs(len(pred) - len(ref)) / len(ref) * energy


def ranks_of_truth(dist: np.ndarray, truth: list[int]) -> np.ndarray:
    """1-based rank of ``truth[q]`` in row ``q`` of a query x gallery distance
    matrix, ties broken by gallery index."""
    ranks = []
    for q, t in enumerate(truth):
        order = np.argsort(dist[q], kind="stable")
        ranks.append(int(np.flatnonzero(order == t)[0]) + 1)
    return np.array(ranks)


def median_rank(ranks) -> float:
    return float(np.median(np.asarray(ranks, dtype=float)))


def recall_at(ranks, k: int) -> float:
    return 100.0 * float(np.mean(np.asarray(ranks) <= k))


def retrieval_metrics(model, queries, gallery, truth=None, ks=(1, 5, 10)) -> dict:
    """Rank each query caption's true image among ``gallery``.

    ``truth[q]`` is the gallery index of query ``q``'s image (defaults to
    ``q``). Returns ``{"recall": {K: pct}, "median_rank": r, "ranks": [...]}``.
    """
    from . import autograd as ag

    truth = list(range(len(queries))) if truth is None else list(truth)
    for q, t in enumerate(truth):
        if t is None or not 0 <= t < len(gallery):
            raise ValueError(f"true image of query {q} is not in the gallery")
    with ag.no_grad():
        cap = model.embed_captions(list(queries)).data
        img = model.embed_images(list(gallery)).data
    dist = ((cap[:, None, :] - img[None, :, :]) ** 2).sum(axis=-1)
    ranks = ranks_of_truth(dist, truth)
    return {"recall": {k: recall_at(ranks, k) for k in ks},
            "median_rank": median_rank(ranks), "ranks": ranks.tolist()}


@dataclass
class MetricReport:
    wer: float
    cer: float
    tts_l2: float
    bleu1: float
    recall_at: dict = field(default_factory=dict)
    median_rank: float = 1.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["recall_at"] = {str(k): v for k, v in self.recall_at.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        d = dict(d)
        d["recall_at"] = {int(k): v for k, v in d.get("recall_at", {}).items()}
        return cls(**d)
