"""Batched beam search shared by the speech recognizer and the captioner.

A decoder adapter exposes three methods over row-batched state:

* ``init_state()`` -> state with one row per item,
* ``step(state, prev_tokens)`` -> ``(log_probs (rows, V), next_state)``,
* ``select(state, rows)`` -> state gathered at ``rows``.

Hypotheses are ranked by length-normalised log-probability (sum of token
log-probs, EOS included, divided by the number of tokens). At step
``max_len`` only EOS may be emitted, so every result is EOS-terminated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..config import BOS, EOS


@dataclass
class Hypothesis:
    tokens: np.ndarray
    log_prob: float

    @property
    def score(self) -> float:
        return self.log_prob / len(self.tokens)


def _force_eos(logp: np.ndarray) -> np.ndarray:
    forced = np.full_like(logp, -np.inf)
    forced[..., EOS] = logp[..., EOS]
    return forced


def beam_search(decoder, n_items: int, beam_size: int, max_len: int) -> list[Hypothesis]:
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    K = beam_size
    state = decoder.select(decoder.init_state(), np.repeat(np.arange(n_items), K))
    scores = np.full((n_items, K), -np.inf)
    scores[:, 0] = 0.0
    history = np.zeros((n_items, K, 0), dtype=np.int64)
    prev = np.full(n_items * K, BOS, dtype=np.int64)
    finished: list[list[Hypothesis]] = [[] for _ in range(n_items)]
    live = np.ones(n_items, dtype=bool)

    for t in range(1, max_len + 1):
        logp, state = decoder.step(state, prev)
        V = logp.shape[-1]
        logp = logp.reshape(n_items, K, V)
        if t == max_len:
            logp = _force_eos(logp)
        cand = (scores[:, :, None] + logp).reshape(n_items, K * V)
        new_scores = np.full((n_items, K), -np.inf)
        new_hist = np.zeros((n_items, K, t), dtype=np.int64)
        parents = np.repeat(np.arange(n_items) * K, K)
        tokens = np.full((n_items, K), EOS, dtype=np.int64)
        for i in np.flatnonzero(live):
            order = np.argsort(-cand[i], kind="stable")[:K]
            slot = 0
            for flat in order:
                s = cand[i, flat]
                if not np.isfinite(s):
                    break
                k, tok = divmod(int(flat), V)
                if tok == EOS:
                    seq = np.append(history[i, k], EOS)
                    finished[i].append(Hypothesis(seq, float(s)))
                    continue
                new_scores[i, slot] = s
                new_hist[i, slot, :t - 1] = history[i, k]
                new_hist[i, slot, t - 1] = tok
                parents[i * K + slot] = i * K + k
                tokens[i, slot] = tok
                slot += 1
            if slot == 0:
                live[i] = False
        scores, history = new_scores, new_hist
        if not live.any():
            break
        state = decoder.select(state, parents)
        prev = tokens.reshape(-1)

    results = []
    for hyps in finished:
        best = max(hyps, key=lambda h: h.score)  # max keeps the first of equal scores
        results.append(best)
    return results


def greedy_decode(decoder, n_items: int, max_len: int) -> list[np.ndarray]:
    state = decoder.init_state()
    prev = np.full(n_items, BOS, dtype=np.int64)
    out: list[list[int]] = [[] for _ in range(n_items)]
    done = np.zeros(n_items, dtype=bool)
    for t in range(1, max_len + 1):
        logp, state = decoder.step(state, prev)
        if t == max_len:
            logp = _force_eos(logp)
        prev = np.argmax(logp, axis=-1)
        for i in np.flatnonzero(~done):
            out[i].append(int(prev[i]))
            if prev[i] == EOS:
                done[i] = True
        if done.all():
            break
    return [np.array(o, dtype=np.int64) for o in out]


def exhaustive_best(decoder, max_len: int) -> Hypothesis:
    """Enumerate every EOS-terminated sequence up to ``max_len`` for one item.

    Exponential in ``max_len``; the reference oracle for small problems.
    """
    best: Hypothesis | None = None
    frontier = [(np.zeros(0, dtype=np.int64), 0.0, decoder.init_state(), BOS)]
    for t in range(1, max_len + 1):
        nxt = []
        for seq, lp, state, prev in frontier:
            logp, new_state = decoder.step(state, np.array([prev]))
            logp = logp[0]
            if t == max_len:
                logp = _force_eos(logp)
            for tok in range(logp.shape[0]):
                if not np.isfinite(logp[tok]):
                    continue
                s = lp + float(logp[tok])
                ext = np.append(seq, tok)
                if tok == EOS:
                    h = Hypothesis(ext, s)
                    if best is None or h.score > best.score:
                        best = h
                else:
                    nxt.append((ext, s, new_state, tok))
        frontier = nxt
    return best
