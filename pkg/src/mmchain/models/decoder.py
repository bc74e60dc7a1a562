"""Attention-based token decoder over an encoded memory."""

from __future__ import annotations

import numpy as np

from .. import autograd as ag
from ..autograd import Tensor
from ..config import BOS, EOS, PAD
from ..nn import GRU, Attention, Linear, Module, additive_mask, glorot, pad_sequences


def check_tokens(y, vocab_size: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    if y.ndim != 1 or y.size == 0:
        raise ValueError("token sequence must be a non-empty 1-d sequence")
    if y.min() < 0 or y.max() >= vocab_size:
        raise ValueError(f"token id out of range for vocabulary of {vocab_size}")
    if y[-1] != EOS:
        raise ValueError("token sequence must end with EOS")
    if np.any(y[:-1] == EOS) or np.any(y == PAD) or np.any(y == BOS):
        raise ValueError("token sequence has EOS before its end, or PAD/BOS symbols")
    return y


def masked_mean(memory: Tensor, mask: np.ndarray) -> Tensor:
    m = mask[:, :, None]
    counts = mask.sum(axis=1, keepdims=True)
    return ag.tsum(memory * m, axis=1) * (1.0 / counts)


class TokenDecoder(Module):
    """GRU decoder with location-aware MLP attention.

    At step ``t`` the context is computed from ``h[t-1]``, the GRU consumes
    ``[embed(y[t-1]); context]``, and the logits come from a tanh layer over
    ``[h[t]; context; embed(y[t-1])]``. PAD and BOS are never emitted.
    """

    def __init__(self, rng: np.random.Generator, vocab_size: int, token_embed: int,
                 mem_dim: int, hidden: int, att_dim: int):
        self.vocab_size = vocab_size
        self.embed = glorot(rng, vocab_size, token_embed)
        self.init = Linear(rng, mem_dim, hidden)
        self.attention = Attention(rng, mem_dim, hidden, att_dim)
        self.rnn = GRU(rng, token_embed + mem_dim, hidden)
        # deep output: one tanh layer over [h; context; previous embedding]
        self.deep = Linear(rng, hidden + mem_dim + token_embed, 2 * hidden)
        self.out = Linear(rng, 2 * hidden, vocab_size)
        self._logit_mask = np.zeros(vocab_size)
        self._logit_mask[[PAD, BOS]] = -1e9

    def start(self, memory: Tensor, mem_mask: np.ndarray):
        B, T = mem_mask.shape
        h = ag.tanh(self.init(masked_mean(memory, mem_mask)))
        keys = self.attention.keys(memory)
        zeros = np.zeros((B, T))
        return h, keys, additive_mask(mem_mask), zeros, zeros

    def step(self, memory, keys, mask_add, h, prev_att, cum_att, prev_tokens, row_mask=None):
        ctx, w = self.attention(keys, memory, h, mask_add, prev_att, cum_att)
        e = ag.embedding(self.embed, prev_tokens)
        h = self.rnn.cell(self.rnn.project(ag.concat([e, ctx], axis=-1)), h, row_mask)
        logits = self.out(ag.tanh(self.deep(ag.concat([h, ctx, e], axis=-1)))) + self._logit_mask
        return logits, h, w, cum_att + w

    def teacher_forced(self, memory: Tensor, mem_mask: np.ndarray, targets: list[np.ndarray],
                       return_attention: bool = False):
        """Mean per-token cross-entropy of ``targets`` under teacher forcing."""
        y, tmask = pad_sequences([np.asarray(t, dtype=np.int64) for t in targets], pad_value=PAD)
        B, L = y.shape
        inputs = np.concatenate([np.full((B, 1), BOS), y[:, :-1]], axis=1)
        h, keys, mask_add, prev, cum = self.start(memory, mem_mask)
        logits, atts = [], []
        for t in range(L):
            lg, h, prev, cum = self.step(memory, keys, mask_add, h, prev, cum, inputs[:, t], tmask[:, t])
            logits.append(lg)
            atts.append(prev)
        logp = ag.log_softmax(ag.stack(logits, axis=1), axis=-1)
        nll = ag.neg(ag.pick(logp, y)) * tmask
        loss = ag.tsum(nll) * (1.0 / tmask.sum())
        if return_attention:
            return loss, np.stack([a.data for a in atts], axis=1), tmask
        return loss


class DecoderAdapter:
    """Row-batched decoding state for :mod:`mmchain.models.beam` (no grad)."""

    def __init__(self, decoder: TokenDecoder, memory: Tensor, mem_mask: np.ndarray):
        self.decoder = decoder
        with ag.no_grad():
            h, keys, mask_add, prev, cum = decoder.start(memory, mem_mask)
        self._init = dict(memory=memory.data, keys=keys.data, mask_add=mask_add,
                          h=h.data, prev=prev, cum=cum)
        self.vocab_size = decoder.vocab_size

    def init_state(self):
        return self._init

    def select(self, state, rows):
        return {k: v[rows] for k, v in state.items()}

    def step(self, state, prev_tokens):
        with ag.no_grad():
            logits, h, w, cum = self.decoder.step(
                Tensor(state["memory"]), Tensor(state["keys"]), state["mask_add"],
                Tensor(state["h"]), state["prev"], state["cum"], prev_tokens)
            logp = ag.log_softmax(logits, axis=-1).data
        logp = np.where(logp < -1e8, -np.inf, logp)  # masked symbols are unreachable
        new = dict(state, h=h.data, prev=w.data, cum=cum.data)
        return logp, new
