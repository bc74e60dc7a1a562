"""Parameter containers and layers shared by the four chain models."""

from __future__ import annotations

import hashlib

import numpy as np

from . import autograd as ag
from .autograd import Tensor

NEG_INF = -1e9


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> Tensor:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    shape = (fan_in, fan_out) if shape is None else shape
    return Tensor(rng.uniform(-s, s, size=shape), requires_grad=True)


def zeros(*shape: int) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


class Module:
    """Holds trainable tensors and child modules as attributes.

    ``parameters()`` returns a flat ``{dotted.path: Tensor}`` dict in
    attribute-definition order, which fixes checkpoint layout and the order
    optimizers walk parameters.
    """

    def parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for key, value in vars(self).items():
            path = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                out[path] = value
            elif isinstance(value, Module):
                out.update(value.parameters(path + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.parameters(f"{path}.{i}."))
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        """Non-trainable state that checkpoints must carry (none by default)."""
        return {}

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    def param_digest(self) -> str:
        h = hashlib.sha256()
        for name, p in self.parameters().items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()

    def n_params(self) -> int:
        return sum(p.size for p in self.parameters().values())


class Linear(Module):
    def __init__(self, rng: np.random.Generator, n_in: int, n_out: int, bias: bool = True):
        self.w = glorot(rng, n_in, n_out)
        self.b = zeros(n_out) if bias else None

    def __call__(self, x) -> Tensor:
        y = ag.matmul(x, self.w)
        return y if self.b is None else y + self.b


class GRU(Module):
    """Single-direction gated recurrent layer over ``(B, T, D)`` inputs."""

    def __init__(self, rng: np.random.Generator, n_in: int, hidden: int):
        self.hidden = hidden
        self.w_x = glorot(rng, n_in, 3 * hidden)
        self.b_x = zeros(3 * hidden)
        self.w_h = glorot(rng, hidden, 3 * hidden)
        self.b_h = zeros(3 * hidden)

    def project(self, x) -> Tensor:
        return ag.matmul(x, self.w_x) + self.b_x

    def cell(self, gx_t, h, mask=None) -> Tensor:
        return ag.gru_cell(gx_t, h, self.w_h, self.b_h, mask)

    def run(self, x: Tensor, mask: np.ndarray, reverse: bool = False) -> tuple[list[Tensor], Tensor]:
        """Return per-step states (in input order) and the final state.

        Padding sits at the end of each row; the reverse pass starts from the
        padded tail with a zero state, which the mask keeps at zero until the
        first real frame.
        """
        B, T = mask.shape
        gx = self.project(x)
        h = Tensor(np.zeros((B, self.hidden)))
        states: list[Tensor | None] = [None] * T
        steps = range(T - 1, -1, -1) if reverse else range(T)
        for t in steps:
            h = self.cell(gx[:, t, :], h, mask[:, t])
            states[t] = h
        return states, h


class BiGRU(Module):
    def __init__(self, rng: np.random.Generator, n_in: int, hidden: int):
        self.fwd = GRU(rng, n_in, hidden)
        self.bwd = GRU(rng, n_in, hidden)

    def __call__(self, x: Tensor, mask: np.ndarray) -> tuple[Tensor, Tensor]:
        """Return ``(outputs (B, T, 2H), final (B, 2H))``.

        The final state concatenates the forward state after the last real
        step with the backward state after the first step.
        """
        fs, fh = self.fwd.run(x, mask)
        bs, bh = self.bwd.run(x, mask, reverse=True)
        out = ag.stack([ag.concat([f, b], axis=-1) for f, b in zip(fs, bs)], axis=1)
        return out, ag.concat([fh, bh], axis=-1)


class Attention(Module):
    """Additive (MLP) attention with location features.

    The score for memory slot ``j`` is
    ``v . tanh(K_j + W_q q + W_loc [prev_j, cum_j])``, where ``prev`` and
    ``cum`` are the previous and cumulative attention weights.
    """

    def __init__(self, rng: np.random.Generator, mem_dim: int, query_dim: int, att_dim: int):
        self.w_k = glorot(rng, mem_dim, att_dim)
        self.w_q = glorot(rng, query_dim, att_dim)
        self.w_loc = glorot(rng, 2, att_dim)
        self.b = zeros(att_dim)
        self.v = glorot(rng, att_dim, 1, shape=(att_dim,))

    def keys(self, memory: Tensor) -> Tensor:
        return ag.matmul(memory, self.w_k) + self.b

    def __call__(self, keys: Tensor, memory: Tensor, query: Tensor, mask_add: np.ndarray,
                 prev: np.ndarray | Tensor, cum: np.ndarray | Tensor) -> tuple[Tensor, Tensor]:
        B, T, _ = keys.shape
        q = ag.reshape(ag.matmul(query, self.w_q), (B, 1, -1))
        loc = ag.stack([ag.as_tensor(prev), ag.as_tensor(cum)], axis=-1)
        e = ag.tanh(keys + q + ag.matmul(loc, self.w_loc))
        scores = ag.matmul(e, self.v) + mask_add
        weights = ag.softmax(scores, axis=-1)
        context = ag.reshape(ag.matmul(ag.reshape(weights, (B, 1, T)), memory), (B, -1))
        return context, weights


def pad_sequences(seqs: list[np.ndarray], pad_value=0) -> tuple[np.ndarray, np.ndarray]:
    """Stack variable-length arrays along a new batch axis; return (padded, mask)."""
    B = len(seqs)
    T = max(len(s) for s in seqs)
    first = np.asarray(seqs[0])
    padded = np.full((B, T) + first.shape[1:], pad_value, dtype=first.dtype)
    mask = np.zeros((B, T))
    for i, s in enumerate(seqs):
        padded[i, :len(s)] = s
        mask[i, :len(s)] = 1.0
    return padded, mask


def additive_mask(mask: np.ndarray) -> np.ndarray:
    return np.where(mask > 0, 0.0, NEG_INF)
