"""Adam and SGD over named parameter dicts, with global-norm clipping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor


class MissingGradientError(RuntimeError):
    pass


def clip_grad_norm(params: dict[str, Tensor], max_norm: float | None) -> float:
    """Scale grads in place so their global L2 norm is at most ``max_norm``.

    Returns the norm before clipping. Parameters without a grad are ignored.
    """
    grads = [p.grad for p in params.values() if p.grad is not None]
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if max_norm is not None and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


@dataclass
class OptimizerState:
    kind: str
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


class Optimizer:
    """Updates a fixed set of named parameters in place.

    Every parameter must carry a grad when :meth:`step` is called; a
    parameter the loss never reached is a wiring bug, not a zero gradient.
    Use ``allow_missing=True`` to treat absent grads as zeros.
    """

    def __init__(self, params: dict[str, Tensor], kind: str = "adam", lr: float = 1e-3,
                 clip: float | None = 5.0, allow_missing: bool = False):
        self.params = params
        self.state = OptimizerState(kind=kind, learning_rate=lr)
        self.clip = clip
        self.allow_missing = allow_missing

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> float:
        for name, p in self.params.items():
            if p.grad is None:
                if not self.allow_missing:
                    raise MissingGradientError(f"parameter {name!r} has no gradient")
                p.grad = np.zeros_like(p.data)
        norm = clip_grad_norm(self.params, self.clip)
        st = self.state
        st.step_count += 1
        if st.kind == "sgd":
            for p in self.params.values():
                p.data -= st.learning_rate * p.grad
            return norm
        t = st.step_count
        c1 = 1.0 - st.beta1 ** t
        c2 = 1.0 - st.beta2 ** t
        for name, p in self.params.items():
            g = p.grad
            m = st.m.get(name)
            if m is None:
                m = st.m[name] = np.zeros_like(p.data)
                st.v[name] = np.zeros_like(p.data)
            v = st.v[name]
            m *= st.beta1
            m += (1.0 - st.beta1) * g
            v *= st.beta2
            v += (1.0 - st.beta2) * g * g
            p.data -= st.learning_rate * (m / c1) / (np.sqrt(v / c2) + st.eps)
        return norm

    # checkpoint helpers ----------------------------------------------------
    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"step_count": np.array([self.state.step_count], dtype=np.float64)}
        for name in self.state.m:
            out[f"m/{name}"] = self.state.m[name]
            out[f"v/{name}"] = self.state.v[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.state.step_count = int(arrays["step_count"][0])
        self.state.m = {k[2:]: v.copy() for k, v in arrays.items() if k.startswith("m/")}
        self.state.v = {k[2:]: v.copy() for k, v in arrays.items() if k.startswith("v/")}
