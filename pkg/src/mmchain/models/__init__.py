from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..config import ChainConfig
from .asr import AsrModel, asr_decode, asr_supervised_loss
from .beam import Hypothesis, beam_search, exhaustive_best, greedy_decode
from .caption import CaptionModel, ic_decode, ic_supervised_loss
from .retrieval import (RetrievalModel, ir_embed_caption, ir_embed_image, ir_rank_loss,
                        ir_retrieve, ir_sample_hypothesis, pairwise_rank_loss)
from .tts import TtsModel, tts_forward

MODEL_NAMES = ("asr", "tts", "ic", "ir")


@dataclass
class ChainModels:
    asr: AsrModel
    tts: TtsModel
    ic: CaptionModel
    ir: RetrievalModel

    @classmethod
    def build(cls, config: ChainConfig) -> "ChainModels":
        def rng(k):
            return np.random.default_rng([config.seed, 1000 + k])
        return cls(AsrModel(config, rng(0)), TtsModel(config, rng(1)),
                   CaptionModel(config, rng(2)), RetrievalModel(config, rng(3)))

    def items(self):
        return [(name, getattr(self, name)) for name in MODEL_NAMES]

    def digests(self) -> dict[str, str]:
        return {name: m.param_digest() for name, m in self.items()}


__all__ = [
    "AsrModel", "TtsModel", "CaptionModel", "RetrievalModel", "ChainModels", "Hypothesis",
    "MODEL_NAMES", "asr_decode", "asr_supervised_loss", "beam_search", "exhaustive_best",
    "greedy_decode", "ic_decode", "ic_supervised_loss", "ir_embed_caption", "ir_embed_image",
    "ir_rank_loss", "ir_retrieve", "ir_sample_hypothesis", "pairwise_rank_loss", "tts_forward",
]
