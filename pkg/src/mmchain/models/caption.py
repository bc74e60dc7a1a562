"""Region-attention image captioner."""

from __future__ import annotations

import numpy as np

from .. import autograd as ag
from ..autograd import Tensor
from ..config import ChainConfig
from ..nn import Linear, Module, glorot
from .beam import Hypothesis, beam_search, greedy_decode
from .decoder import DecoderAdapter, TokenDecoder, check_tokens


class CaptionModel(Module):
    """Projects each grid region, adds a learned per-region position vector,
    and decodes with attention over the regions."""

    def __init__(self, config: ChainConfig, rng: np.random.Generator):
        self.n_regions = config.n_regions
        self.region_dim = config.region_dim
        self.vocab_size = config.vocab_size
        self.max_len = config.max_len
        self.project = Linear(rng, config.region_dim, config.hidden)
        self.position = glorot(rng, config.n_regions, config.hidden)
        self.decoder = TokenDecoder(rng, config.vocab_size, config.token_embed,
                                    config.hidden, config.hidden, config.att_dim)

    def encode(self, images: list[np.ndarray]) -> tuple[Tensor, np.ndarray]:
        z = np.stack([np.asarray(im, dtype=np.float64) for im in images])
        if z.shape[1:] != (self.n_regions, self.region_dim):
            raise ValueError(f"image regions must be ({self.n_regions}, {self.region_dim}), got {z.shape[1:]}")
        memory = ag.tanh(self.project(Tensor(z)) + self.position)
        return memory, np.ones(z.shape[:2])

    def loss(self, images: list[np.ndarray], texts: list[np.ndarray], return_attention: bool = False):
        texts = [check_tokens(y, self.vocab_size) for y in texts]
        memory, mask = self.encode(images)
        return self.decoder.teacher_forced(memory, mask, texts, return_attention=return_attention)

    def decode(self, images: list[np.ndarray], beam_size: int = 3,
               max_len: int | None = None) -> list[Hypothesis]:
        with ag.no_grad():
            memory, mask = self.encode(images)
        return beam_search(DecoderAdapter(self.decoder, memory, mask), len(images), beam_size,
                           max_len or self.max_len)

    def greedy(self, images: list[np.ndarray], max_len: int | None = None) -> list[np.ndarray]:
        with ag.no_grad():
            memory, mask = self.encode(images)
        return greedy_decode(DecoderAdapter(self.decoder, memory, mask), len(images),
                             max_len or self.max_len)


def ic_supervised_loss(model: CaptionModel, z: np.ndarray, y) -> Tensor:
    return model.loss([z], [y])


def ic_decode(model: CaptionModel, z: np.ndarray, beam_size: int = 3) -> Hypothesis:
    return model.decode([z], beam_size)[0]
