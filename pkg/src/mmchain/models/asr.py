"""Listen-attend-spell style speech recognizer at toy scale."""

from __future__ import annotations

import numpy as np

from .. import autograd as ag
from ..autograd import Tensor
from ..config import ChainConfig
from ..nn import BiGRU, Module, pad_sequences
from .beam import Hypothesis, beam_search, greedy_decode
from .decoder import DecoderAdapter, TokenDecoder, check_tokens


def _check_frames(x, feature_dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError("speech features must be a non-empty (frames, dim) matrix")
    if x.shape[1] != feature_dim:
        raise ValueError(f"speech feature dim {x.shape[1]} != configured {feature_dim}")
    return x


class AsrModel(Module):
    def __init__(self, config: ChainConfig, rng: np.random.Generator):
        self.feature_dim = config.feature_dim
        self.stack = config.asr_frame_stack
        self.vocab_size = config.vocab_size
        self.max_len = config.max_len
        self.encoder = BiGRU(rng, self.stack * config.feature_dim, config.hidden // 2)
        self.decoder = TokenDecoder(rng, config.vocab_size, config.token_embed,
                                    config.hidden, config.hidden, config.att_dim)

    def encode(self, speech: list[np.ndarray]) -> tuple[Tensor, np.ndarray]:
        frames = [_check_frames(x, self.feature_dim) for x in speech]
        k = self.stack
        padded, mask = pad_sequences(frames, pad_value=0.0)
        B, T, F = padded.shape
        Tk = -(-T // k)
        if Tk * k != T:
            padded = np.concatenate([padded, np.zeros((B, Tk * k - T, F))], axis=1)
            mask = np.concatenate([mask, np.zeros((B, Tk * k - T))], axis=1)
        stacked = padded.reshape(B, Tk, k * F)
        enc_mask = mask[:, ::k].copy()
        memory, _ = self.encoder(Tensor(stacked), enc_mask)
        return memory, enc_mask

    def loss(self, speech: list[np.ndarray], texts: list[np.ndarray]) -> Tensor:
        """Mean per-token cross-entropy over the batch under teacher forcing."""
        texts = [check_tokens(y, self.vocab_size) for y in texts]
        memory, mask = self.encode(speech)
        return self.decoder.teacher_forced(memory, mask, texts)

    def decode(self, speech: list[np.ndarray], beam_size: int = 3,
               max_len: int | None = None) -> list[Hypothesis]:
        with ag.no_grad():
            memory, mask = self.encode(speech)
        adapter = DecoderAdapter(self.decoder, memory, mask)
        return beam_search(adapter, len(speech), beam_size, max_len or self.max_len)

    def greedy(self, speech: list[np.ndarray], max_len: int | None = None) -> list[np.ndarray]:
        with ag.no_grad():
            memory, mask = self.encode(speech)
        return greedy_decode(DecoderAdapter(self.decoder, memory, mask), len(speech),
                             max_len or self.max_len)


def asr_supervised_loss(model: AsrModel, x: np.ndarray, y) -> Tensor:
    return model.loss([x], [y])


def asr_decode(model: AsrModel, x: np.ndarray, beam_size: int = 3) -> Hypothesis:
    return model.decode([x], beam_size)[0]
