"""Chain hyperparameters and the closed token inventory."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields

PAD, BOS, EOS = 0, 1, 2
SPECIALS = ("<pad>", "<s>", "</s>")

COLORS = ("red", "blue", "green", "yellow")
SHAPES = ("circle", "square", "triangle")
RELATIONS = ("above", "left-of")
WORDS = SPECIALS + ("a",) + COLORS + SHAPES + RELATIONS


class Vocabulary:
    def __init__(self, symbols=WORDS):
        self.symbols = tuple(symbols)
        self.index = {s: i for i, s in enumerate(self.symbols)}

    def __len__(self) -> int:
        return len(self.symbols)

    def encode(self, words) -> list[int]:
        if isinstance(words, str):
            words = words.split()
        try:
            return [self.index[w] for w in words] + [EOS]
        except KeyError as exc:
            raise ValueError(f"unknown word {exc.args[0]!r}") from None

    def decode(self, ids) -> str:
        """Render ids as text, dropping specials and stopping at EOS."""
        out = []
        for i in ids:
            i = int(i)
            if i == EOS:
                break
            if i >= len(SPECIALS):
                out.append(self.symbols[i])
        return " ".join(out)


VOCAB = Vocabulary()


@dataclass
class ChainConfig:
    # loss scales (supervised alpha/gamma, unsupervised beta/delta)
    alpha_asr: float = 1.0
    alpha_tts: float = 1.0
    beta_asr: float = 1.0
    beta_tts: float = 1.0
    gamma_ic: float = 1.0
    gamma_ir: float = 1.0
    delta_ic: float = 1.0
    delta_ir: float = 1.0
    # decoding and retrieval
    beam_size: int = 3
    margin: float = 0.2
    retrieval_candidates: int = 5
    max_len: int = 14
    max_frames: int = 48
    # TTS -> ASR trains on frames sampled from the TTS output distribution
    synthesis_sampling: bool = True
    # optimisation
    lr_asr: float = 1e-3
    lr_tts: float = 2.5e-4
    lr_ic: float = 1e-4
    lr_ir: float = 0.1
    ir_optimizer: str = "sgd"
    grad_clip: float = 5.0
    # model dimensions
    vocab_size: int = len(WORDS)
    hidden: int = 64
    token_embed: int = 32
    att_dim: int = 32
    embed_dim: int = 32
    feature_dim: int = 8
    grid_size: int = 4
    region_dim: int = 12
    asr_frame_stack: int = 2
    tts_reduction: int = 3
    seed: int = 0

    def __post_init__(self):
        errors = self.problems()
        if errors:
            raise ValueError("invalid ChainConfig: " + "; ".join(errors))

    def problems(self) -> list[str]:
        errs = []
        for name in ("alpha_asr", "alpha_tts", "beta_asr", "beta_tts",
                     "gamma_ic", "gamma_ir", "delta_ic", "delta_ir"):
            if getattr(self, name) < 0:
                errs.append(f"{name} must be >= 0")
        if self.beam_size < 1:
            errs.append("beam_size must be >= 1")
        if self.margin <= 0:
            errs.append("margin must be > 0")
        for name in ("lr_asr", "lr_tts", "lr_ic", "lr_ir"):
            if getattr(self, name) <= 0:
                errs.append(f"{name} must be > 0")
        if self.ir_optimizer not in ("sgd", "adam"):
            errs.append("ir_optimizer must be sgd or adam")
        if self.hidden % 2:
            errs.append("hidden must be even (bidirectional encoders split it)")
        for name in ("max_len", "max_frames", "asr_frame_stack", "tts_reduction", "retrieval_candidates"):
            if getattr(self, name) < 1:
                errs.append(f"{name} must be >= 1")
        return errs

    @property
    def n_regions(self) -> int:
        return self.grid_size ** 2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ChainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown ChainConfig keys: {sorted(unknown)}")
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()
