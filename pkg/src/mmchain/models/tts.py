"""Attention TTS regressing speech-feature frames from tokens.

The decoder emits ``reduction`` frames per step plus one stop logit per
frame; the next step is conditioned on the last frame of the previous group
(the teacher frame in loss mode, its own prediction when free-running).

Read as a Gaussian model, the squared-L2 loss makes each frame
``N(prediction, diag(residual_var))``. The residual variance is tracked as
an exponential moving average over teacher-forced training batches, and
``synthesize(..., rng=...)`` draws frames from that distribution instead of
returning its mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autograd as ag
from ..autograd import Tensor
from ..config import ChainConfig
from ..nn import GRU, Attention, BiGRU, Linear, Module, additive_mask, glorot, pad_sequences
from .decoder import check_tokens, masked_mean


@dataclass
class Synthesis:
    frames: np.ndarray
    stop_logits: np.ndarray
    truncated: bool


@dataclass
class TtsOutput:
    frames: Tensor          # (B, S*r, F)
    stop_logits: Tensor     # (B, S*r)
    loss: Tensor | None = None
    l2: Tensor | None = None
    stop_bce: Tensor | None = None


class TtsModel(Module):
    def __init__(self, config: ChainConfig, rng: np.random.Generator):
        self.vocab_size = config.vocab_size
        self.F = config.feature_dim
        self.r = config.tts_reduction
        self.max_frames = config.max_frames
        H = config.hidden
        self.embed = glorot(rng, config.vocab_size, config.token_embed)
        self.encoder = BiGRU(rng, config.token_embed, H // 2)
        self.init = Linear(rng, H, H)
        self.prenet = Linear(rng, self.F, config.token_embed)
        self.attention = Attention(rng, H, H, config.att_dim)
        self.rnn = GRU(rng, config.token_embed + H, H)
        self.out = Linear(rng, 2 * H, self.r * self.F + self.r)
        # bias-corrected EMA of the per-dimension squared residual
        self.residual_ema = np.zeros(self.F)
        self.residual_weight = np.zeros(1)

    VAR_MOMENTUM = 0.95

    def buffers(self) -> dict[str, np.ndarray]:
        return {"residual_ema": self.residual_ema, "residual_weight": self.residual_weight}

    @property
    def residual_var(self) -> np.ndarray:
        if self.residual_weight[0] == 0:
            return np.zeros(self.F)
        return self.residual_ema / self.residual_weight[0]

    def _track_residual(self, pred: np.ndarray, frames: np.ndarray, fmask: np.ndarray) -> None:
        sq = ((pred - frames) ** 2 * fmask[..., None]).sum(axis=(0, 1)) / fmask.sum()
        m = self.VAR_MOMENTUM
        self.residual_ema[...] = m * self.residual_ema + (1 - m) * sq
        self.residual_weight[...] = m * self.residual_weight + (1 - m)

    def encode(self, texts: list[np.ndarray]):
        texts = [check_tokens(y, self.vocab_size) for y in texts]
        ids, mask = pad_sequences(texts, pad_value=0)
        memory, _ = self.encoder(ag.embedding(self.embed, ids), mask)
        return memory, mask

    def _start(self, memory, mask):
        B, L = mask.shape
        h = ag.tanh(self.init(masked_mean(memory, mask)))
        zeros = np.zeros((B, L))
        return h, self.attention.keys(memory), additive_mask(mask), zeros, zeros

    def _step(self, memory, keys, mask_add, h, prev, cum, prev_frame, row_mask=None):
        ctx, w = self.attention(keys, memory, h, mask_add, prev, cum)
        x = ag.concat([ag.tanh(self.prenet(prev_frame)), ctx], axis=-1)
        h = self.rnn.cell(self.rnn.project(x), h, row_mask)
        o = self.out(ag.concat([h, ctx], axis=-1))
        return o, h, w, cum + w

    def teacher_forced(self, texts: list[np.ndarray], speech: list[np.ndarray]) -> TtsOutput:
        """Predict frames given teacher frames; loss is mean per-frame squared
        L2 plus mean stop-flag binary cross-entropy."""
        if len(texts) != len(speech):
            raise ValueError("texts and speech batches differ in length")
        memory, tmask = self.encode(texts)
        frames, fmask = pad_sequences([np.asarray(x, dtype=np.float64) for x in speech], pad_value=0.0)
        B, T, F = frames.shape
        if F != self.F:
            raise ValueError(f"speech feature dim {F} != configured {self.F}")
        r = self.r
        S = -(-T // r)
        if S * r != T:
            frames = np.concatenate([frames, np.zeros((B, S * r - T, F))], axis=1)
            fmask = np.concatenate([fmask, np.zeros((B, S * r - T))], axis=1)
        lengths = fmask.sum(axis=1).astype(int)
        stop_target = np.zeros((B, S * r))
        stop_target[np.arange(B), lengths - 1] = 1.0
        step_mask = fmask[:, ::r]

        h, keys, mask_add, prev, cum = self._start(memory, tmask)
        prev_frame = np.zeros((B, F))
        outs = []
        for s in range(S):
            o, h, prev, cum = self._step(memory, keys, mask_add, h, prev, cum, prev_frame, step_mask[:, s])
            outs.append(o)
            prev_frame = frames[:, (s + 1) * r - 1]
        o = ag.stack(outs, axis=1)                                      # (B, S, rF + r)
        pred = ag.reshape(o[:, :, :r * F], (B, S * r, F))
        stop = ag.reshape(o[:, :, r * F:], (B, S * r))
        n = fmask.sum()
        l2 = ag.tsum(ag.squared_l2(pred, frames, axis=-1) * fmask) * (1.0 / n)
        bce = ag.tsum(ag.bce_with_logits(stop, stop_target) * fmask) * (1.0 / n)
        if ag.grad_enabled() and pred.requires_grad:
            self._track_residual(pred.data, frames, fmask)
        return TtsOutput(pred, stop, l2 + bce, l2, bce)

    def loss(self, texts, speech) -> Tensor:
        return self.teacher_forced(texts, speech).loss

    def synthesize(self, texts: list[np.ndarray], max_frames: int | None = None,
                   rng: np.random.Generator | None = None) -> list[Synthesis]:
        """Free-running generation until a stop flag fires or ``max_frames``.

        With ``rng`` the returned frames are samples around the predicted
        means; the recurrence itself always runs on the means.
        """
        max_frames = max_frames or self.max_frames
        r, F = self.r, self.F
        with ag.no_grad():
            memory, tmask = self.encode(texts)
            B = len(texts)
            h, keys, mask_add, prev, cum = self._start(memory, tmask)
            prev_frame = np.zeros((B, F))
            stopped_at = np.full(B, -1)
            frames, stops = [], []
            for s in range(-(-max_frames // r)):
                o, h, prev, cum = self._step(memory, keys, mask_add, h, prev, cum, prev_frame)
                od = o.data
                group = od[:, :r * F].reshape(B, r, F)
                frames.append(group)
                stops.append(od[:, r * F:])
                prev_frame = group[:, -1]
                fired = od[:, r * F:] > 0.0                             # sigmoid > 0.5
                for i in np.flatnonzero((stopped_at < 0) & fired.any(axis=1)):
                    stopped_at[i] = s * r + int(np.argmax(fired[i]))
                if np.all(stopped_at >= 0):
                    break
        all_frames = np.concatenate(frames, axis=1)
        all_stops = np.concatenate(stops, axis=1)
        out = []
        for i in range(B):
            if stopped_at[i] >= 0 and stopped_at[i] < max_frames:
                end, trunc = stopped_at[i] + 1, False
            else:
                end, trunc = max_frames, True
            out.append(Synthesis(all_frames[i, :end].copy(), all_stops[i, :end].copy(), trunc))
        if rng is not None:
            sd = np.sqrt(self.residual_var)
            for syn in out:
                syn.frames += sd * rng.standard_normal(syn.frames.shape)
        return out


def tts_forward(model: TtsModel, y, teacher_x: np.ndarray | None = None):
    """Single-utterance entry point: ``(frames, stop_logits, loss or None)``.

    Without ``teacher_x`` the model free-runs; the result's ``truncated``
    flag is exposed as the third element's metadata via :class:`Synthesis`.
    """
    if teacher_x is not None:
        out = model.teacher_forced([y], [teacher_x])
        T = np.asarray(teacher_x).shape[0]
        return out.frames.data[0, :T], out.stop_logits.data[0, :T], out.loss
    syn = model.synthesize([y])[0]
    return syn.frames, syn.stop_logits, syn
