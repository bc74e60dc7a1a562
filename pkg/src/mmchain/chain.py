"""Dual-loop training of the speech chain (ASR/TTS) and visual chain (IC/IR).

Each unrolled process decodes an intermediate hypothesis with one model
(no gradient flows through the discrete decode) and trains the other model
to reconstruct the input. Loss terms are collected per model, scaled by the
chain coefficients, summed, and each model that received a term with a
non-zero scale takes one optimizer step:

    L_sc = a_asr L^P_asr + a_tts L^P_tts + b_asr L^U_asr + b_tts L^U_tts
    L_vc = g_ic  L^P_ic  + g_ir  L^P_ir  + d_ic  L^U_ic  + d_ir  L^U_ir
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autograd as ag
from .config import EOS, ChainConfig
from .models import MODEL_NAMES, ChainModels
from .models.retrieval import rank_by_distance
from .optim import Optimizer

REGIMES = ("Type1", "Type2a", "Type2b", "Type2c_speech", "Type2c_visual",
           "Type3a", "Type3b", "Type3c")


@dataclass
class Terms:
    """Loss terms per model: ``{model: [(label, scale, loss Tensor), ...]}``."""
    by_model: dict[str, list] = field(default_factory=dict)
    info: dict[str, int] = field(default_factory=dict)

    def add(self, model: str, label: str, scale: float, loss) -> None:
        self.by_model.setdefault(model, []).append((label, scale, loss))

    def merge(self, other: "Terms") -> "Terms":
        for m, items in other.by_model.items():
            self.by_model.setdefault(m, []).extend(items)
        for k, v in other.info.items():
            self.info[k] = self.info.get(k, 0) + v
        return self

    def combined(self, model: str):
        items = self.by_model.get(model, [])
        total = None
        for _, scale, loss in items:
            part = loss * scale
            total = part if total is None else total + part
        return total

    def values(self) -> dict[str, float]:
        return {label: float(loss.data) for items in self.by_model.values() for label, _, loss in items}


def _non_empty(hyp_tokens: np.ndarray) -> bool:
    return len(hyp_tokens) > 1 or (len(hyp_tokens) == 1 and hyp_tokens[0] != EOS)


class Chain:
    """The four models, their optimizers, and every training regime."""

    def __init__(self, config: ChainConfig, models: ChainModels | None = None):
        self.config = config
        self.models = models or ChainModels.build(config)
        c = config
        self.optimizers = {
            "asr": Optimizer(self.models.asr.parameters(), "adam", c.lr_asr, c.grad_clip),
            "tts": Optimizer(self.models.tts.parameters(), "adam", c.lr_tts, c.grad_clip),
            "ic": Optimizer(self.models.ic.parameters(), "adam", c.lr_ic, c.grad_clip),
            "ir": Optimizer(self.models.ir.parameters(), c.ir_optimizer, c.lr_ir, c.grad_clip),
        }

    # -- decoding with the current models ------------------------------------
    def transcribe(self, speech: list[np.ndarray]) -> list[np.ndarray]:
        return [h.tokens for h in self.models.asr.decode(speech, self.config.beam_size)]

    def synthesize(self, texts: list[np.ndarray], rng: np.random.Generator | None = None):
        """Free-run the TTS; with ``rng`` (and sampling enabled) frames are
        drawn around the predicted means."""
        rng = rng if self.config.synthesis_sampling else None
        syn = self.models.tts.synthesize(texts, rng=rng)
        return [s.frames for s in syn], sum(s.truncated for s in syn)

    def caption(self, images: list[np.ndarray]) -> list[np.ndarray]:
        return [h.tokens for h in self.models.ic.decode(images, self.config.beam_size)]

    def retrieve(self, texts: list[np.ndarray], gallery: list[np.ndarray],
                 rng: np.random.Generator) -> list[np.ndarray]:
        """For each caption rank the gallery and sample one of the top candidates."""
        ir = self.models.ir
        with ag.no_grad():
            g_emb = ir.embed_images(gallery).data
            q_emb = ir.embed_captions(texts).data
        picks = []
        for q in q_emb:
            order, _ = rank_by_distance(q, g_emb)
            n = min(self.config.retrieval_candidates, len(order))
            picks.append(gallery[int(order[int(rng.integers(n))])])
        return picks

    # -- loss terms (no parameter updates) -------------------------------------
    def type1_terms(self, batch: list[tuple]) -> Terms:
        for item in batch:
            if len(item) != 3 or any(v is None for v in item):
                raise ValueError("Type1 needs fully paired (speech, text, image) examples")
        c, m = self.config, self.models
        xs, ys, zs = [b[0] for b in batch], [b[1] for b in batch], [b[2] for b in batch]
        t = Terms()
        t.add("asr", "P_ASR", c.alpha_asr, m.asr.loss(xs, ys))
        t.add("tts", "P_TTS", c.alpha_tts, m.tts.loss(ys, xs))
        t.add("ic", "P_IC", c.gamma_ic, m.ic.loss(zs, ys))
        if len(batch) >= 2:
            t.add("ir", "P_IR", c.gamma_ir, m.ir.rank_loss(ys, zs))
        return t

    def asr_to_tts_terms(self, speech: list[np.ndarray],
                         transcribe: Callable | None = None) -> tuple[Terms, list[np.ndarray]]:
        hyps = (transcribe or self.transcribe)(speech)
        keep = [i for i, h in enumerate(hyps) if _non_empty(h)]
        t = Terms(info={"skipped_empty": len(hyps) - len(keep)})
        if keep:
            t.add("tts", "U_TTS", self.config.beta_tts,
                  self.models.tts.loss([hyps[i] for i in keep], [speech[i] for i in keep]))
        return t, hyps

    def tts_to_asr_terms(self, texts: list[np.ndarray], synthesize: Callable | None = None,
                         rng: np.random.Generator | None = None) -> Terms:
        if synthesize is None:
            frames, truncated = self.synthesize(texts, rng)
        else:
            frames, truncated = synthesize(texts), 0
        t = Terms(info={"truncated": int(truncated)})
        t.add("asr", "U_ASR", self.config.beta_asr, self.models.asr.loss(frames, texts))
        return t

    def ic_to_ir_terms(self, images: list[np.ndarray],
                       caption: Callable | None = None) -> tuple[Terms, list[np.ndarray]]:
        if len(images) < 2:
            raise ValueError("IC->IR needs a batch of at least 2 images for in-batch negatives")
        hyps = (caption or self.caption)(images)
        keep = [i for i, h in enumerate(hyps) if _non_empty(h)]
        t = Terms(info={"skipped_empty": len(hyps) - len(keep)})
        if len(keep) >= 2:
            t.add("ir", "U_IR", self.config.delta_ir,
                  self.models.ir.rank_loss([hyps[i] for i in keep], [images[i] for i in keep]))
        return t, hyps

    def ir_to_ic_terms(self, texts: list[np.ndarray], gallery: list[np.ndarray],
                       rng: np.random.Generator, retrieve: Callable | None = None) -> Terms:
        if not gallery:
            raise ValueError("IR->IC needs a non-empty retrieval gallery")
        keep = [y for y in texts if _non_empty(y)]
        t = Terms(info={"skipped_empty": len(texts) - len(keep)})
        if keep:
            images = (retrieve or self.retrieve)(keep, gallery, rng)
            t.add("ic", "U_IC", self.config.delta_ic, self.models.ic.loss(images, keep))
        return t

    def terms_for(self, regime: str, batch, gallery, rng) -> Terms:
        if regime == "Type1":
            return self.type1_terms(batch)
        if regime == "Type2a":
            return self.asr_to_tts_terms(batch)[0]
        if regime == "Type2b":
            return self.ic_to_ir_terms(batch)[0]
        if regime == "Type2c_speech":
            return self.tts_to_asr_terms(batch, rng=rng)
        if regime == "Type2c_visual":
            return self.ir_to_ic_terms(batch, gallery, rng)
        if regime == "Type3a":
            return self.tts_to_asr_terms(batch, rng=rng).merge(self.ir_to_ic_terms(batch, gallery, rng))
        if regime == "Type3b":
            t, hyps = self.asr_to_tts_terms(batch)
            return t.merge(self.ir_to_ic_terms(hyps, gallery, rng))
        if regime == "Type3c":
            t, hyps = self.ic_to_ir_terms(batch)
            keep = [h for h in hyps if _non_empty(h)]
            if keep:
                t.merge(self.tts_to_asr_terms(keep, rng=rng))
            return t
        raise ValueError(f"unknown regime {regime!r}")

    # -- updates ----------------------------------------------------------------
    def apply(self, terms: Terms) -> dict[str, float]:
        """Backpropagate each model's combined loss and step its optimizer.

        Models without terms, or whose terms all have scale 0, are untouched.
        """
        for name in MODEL_NAMES:
            items = terms.by_model.get(name)
            if not items or all(scale == 0 for _, scale, _ in items):
                continue
            opt = self.optimizers[name]
            opt.zero_grad()
            terms.combined(name).backward()
            opt.step()
        return terms.values()

    # -- public training ops --------------------------------------------------------
    def train_type1(self, batch) -> dict[str, float]:
        return self.apply(self.type1_terms(batch))

    def speech_chain_asr_to_tts(self, speech, transcribe=None) -> dict:
        t, _ = self.asr_to_tts_terms(speech, transcribe)
        out = self.apply(t)
        return {"U_TTS": out.get("U_TTS"), **t.info}

    def speech_chain_tts_to_asr(self, texts, synthesize=None, rng=None) -> dict:
        t = self.tts_to_asr_terms(texts, synthesize, rng)
        return {**self.apply(t), **t.info}

    def visual_chain_ic_to_ir(self, images, caption=None) -> dict:
        t, _ = self.ic_to_ir_terms(images, caption)
        out = self.apply(t)
        return {"U_IR": out.get("U_IR"), **t.info}

    def visual_chain_ir_to_ic(self, texts, gallery, rng, retrieve=None) -> dict:
        t = self.ir_to_ic_terms(texts, gallery, rng, retrieve)
        out = self.apply(t)
        return {"U_IC": out.get("U_IC"), **t.info}

    def chain_type3a_text_only(self, texts, gallery, rng) -> dict:
        return self.apply(self.terms_for("Type3a", texts, gallery, rng))

    def chain_type3b_speech_only(self, speech, gallery, rng) -> dict:
        return self.apply(self.terms_for("Type3b", speech, gallery, rng))

    def chain_type3c_image_only(self, images, rng=None) -> dict:
        return self.apply(self.terms_for("Type3c", images, None, rng))

    # -- state ------------------------------------------------------------------------
    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name, model in self.models.items():
            for path, p in model.parameters().items():
                out[f"model/{name}/{path}"] = p.data
            for key, arr in model.buffers().items():
                out[f"buffer/{name}/{key}"] = arr
            for key, arr in self.optimizers[name].state_arrays().items():
                out[f"optim/{name}/{key}"] = arr
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        from .checkpoint import load_into
        for name, model in self.models.items():
            load_into(model.parameters(), arrays, f"model/{name}/")
            for key, buf in model.buffers().items():
                buf[...] = arrays[f"buffer/{name}/{key}"]
            prefix = f"optim/{name}/"
            self.optimizers[name].load_state_arrays(
                {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)})
