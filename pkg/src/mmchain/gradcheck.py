"""Central finite-difference checks against the autodiff engine."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autograd import Tensor


class NondeterministicClosureError(RuntimeError):
    pass


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    worst_index: tuple[int, ...]
    n_checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance

    def __str__(self) -> str:
        verdict = "pass" if self.passed else "FAIL"
        return (f"gradcheck {verdict}: max rel err {self.max_rel_error:.3e} at "
                f"{self.worst_param}{list(self.worst_index)} over {self.n_checked} coords "
                f"(tol {self.tolerance:g})")


def relative_error(a: float, b: float, floor: float = 1e-6) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def gradient_check(closure: Callable[[], Tensor], params: dict[str, Tensor],
                   tolerance: float = 1e-4, n_coords: int = 100, step: float = 1e-5,
                   rng: np.random.Generator | None = None,
                   analytic: dict[str, np.ndarray] | None = None) -> GradCheckReport:
    """Compare autodiff gradients of ``closure()`` with central differences.

    ``closure`` must rebuild the scalar loss from the current parameter
    values on every call. Coordinates are sampled uniformly over all
    parameter entries. ``analytic`` overrides the autodiff gradients, which
    is how the negative-control tests inject a wrong gradient.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    first = float(closure().data)
    second = float(closure().data)
    if first != second:
        raise NondeterministicClosureError(
            f"closure returned {first!r} then {second!r} for identical parameters")

    if analytic is None:
        for p in params.values():
            p.grad = None
        closure().backward()
        analytic = {k: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                    for k, p in params.items()}

    names = list(params)
    sizes = np.array([params[k].data.size for k in names])
    total = int(sizes.sum())
    picks = rng.choice(total, size=min(n_coords, total), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    worst = (0.0, names[0], (0,))
    for flat in picks:
        i = int(np.searchsorted(offsets, flat, side="right") - 1)
        name = names[i]
        p = params[name]
        idx = np.unravel_index(int(flat - offsets[i]), p.data.shape)
        orig = p.data[idx]
        p.data[idx] = orig + step
        up = float(closure().data)
        p.data[idx] = orig - step
        down = float(closure().data)
        p.data[idx] = orig
        numeric = (up - down) / (2.0 * step)
        err = relative_error(float(analytic[name][idx]), numeric)
        if err > worst[0]:
            worst = (err, name, tuple(int(j) for j in idx))
    return GradCheckReport(worst[0], worst[1], worst[2], len(picks), tolerance)
