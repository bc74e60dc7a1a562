"""Finite-difference cases: one per registered op, plus the four model losses.

Each builder returns ``(closure, params)``. Op outputs are reduced to a
scalar with a fixed random projection so every output entry matters.
"""

import numpy as np

from mmchain import autograd as ag
from mmchain.autograd import Tensor
from mmchain.config import EOS
from mmchain.models import ChainModels


def _p(rng, *shape, away_from_zero=False):
    x = rng.standard_normal(shape)
    if away_from_zero:
        x = np.sign(x) * (0.1 + np.abs(x))
    return Tensor(x, requires_grad=True)


def _case(fn, params, rng):
    probe = fn()
    w = rng.standard_normal(probe.shape)
    return (lambda: ag.tsum(fn() * w)), params


def op_cases(seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    a, b = _p(rng, 3, 4), _p(rng, 3, 4)
    row = _p(rng, 4)
    m1, m2 = _p(rng, 2, 3, 4), _p(rng, 4, 5)
    v = _p(rng, 4)
    pos = Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True)
    kinked = _p(rng, 3, 4, away_from_zero=True)
    logits = _p(rng, 3, 5)
    targets = (rng.random((3, 5)) > 0.5).astype(float)
    table = _p(rng, 6, 3)
    ids = np.array([[0, 2, 2], [5, 1, 0]])
    picks = np.array([4, 0, 2])
    H = 3
    gx, h = _p(rng, 2, 3 * H), _p(rng, 2, H)
    w_h, b_h = _p(rng, H, 3 * H), _p(rng, 3 * H)
    mask = np.array([1.0, 0.0])

    builders = {
        "add": (lambda: ag.add(a, row), {"a": a, "row": row}),
        "sub": (lambda: ag.sub(row, b), {"row": row, "b": b}),
        "mul": (lambda: ag.mul(a, b), {"a": a, "b": b}),
        "neg": (lambda: ag.neg(a), {"a": a}),
        "matmul": (lambda: ag.tsum(ag.matmul(m1, m2)) + ag.tsum(ag.matmul(a, v) * 0.5),
                   {"m1": m1, "m2": m2, "a": a, "v": v}),
        "tanh": (lambda: ag.tanh(a), {"a": a}),
        "sigmoid": (lambda: ag.sigmoid(a), {"a": a}),
        "relu": (lambda: ag.relu(kinked), {"x": kinked}),
        "log": (lambda: ag.log(pos), {"x": pos}),
        "exp": (lambda: ag.exp(a), {"a": a}),
        "softmax": (lambda: ag.softmax(logits, axis=-1), {"x": logits}),
        "log_softmax": (lambda: ag.log_softmax(logits, axis=0), {"x": logits}),
        "bce_with_logits": (lambda: ag.bce_with_logits(logits, targets), {"x": logits}),
        "sum": (lambda: ag.tsum(m1, axis=(0, 2), keepdims=True), {"m": m1}),
        "mean": (lambda: ag.mean(m1, axis=1), {"m": m1}),
        "reshape": (lambda: ag.reshape(m1, (6, 4)), {"m": m1}),
        "transpose": (lambda: ag.transpose(m1, (2, 0, 1)), {"m": m1}),
        "concat": (lambda: ag.concat([a, b], axis=0), {"a": a, "b": b}),
        "stack": (lambda: ag.stack([a, b], axis=1), {"a": a, "b": b}),
        "index": (lambda: ag.index(m1, (slice(None), np.array([2, 0, 2]))), {"m": m1}),
        "embedding": (lambda: ag.embedding(table, ids), {"table": table}),
        "pick": (lambda: ag.pick(logits, picks), {"x": logits}),
        "squared_l2": (lambda: ag.squared_l2(a, row, axis=-1), {"a": a, "row": row}),
        "gru_cell": (lambda: ag.gru_cell(gx, h, w_h, b_h, mask),
                     {"gx": gx, "h": h, "w_h": w_h, "b_h": b_h}),
    }
    return {name: _case(fn, params, rng) for name, (fn, params) in builders.items()}


def loss_cases(config, corpus) -> dict:
    """Closures over each model's full loss on a two-example batch."""
    models = ChainModels.build(config)
    ex = corpus.examples[:2]
    xs = [e.speech for e in ex]
    ys = [e.caption for e in ex]
    zs = [e.regions for e in ex]
    short = [e.speech[:2] for e in ex]  # 2-frame utterances
    tiny = [np.array([3, EOS]), np.array([5, 8, EOS])]
    return {
        "asr": (lambda: models.asr.loss(xs, ys), models.asr.parameters()),
        "asr_2frame": (lambda: models.asr.loss(short, tiny), models.asr.parameters()),
        "tts": (lambda: models.tts.loss(ys, xs), models.tts.parameters()),
        "ic": (lambda: models.ic.loss(zs, ys), models.ic.parameters()),
        "ir": (lambda: models.ir.rank_loss(ys, zs), models.ir.parameters()),
    }
