import numpy as np
import pytest

from conftest import small_config
from grad_cases import loss_cases
from mmchain import autograd as ag
from mmchain.autograd import Tensor
from mmchain.gradcheck import NondeterministicClosureError, gradient_check


def _linear():
    rng = np.random.default_rng(1)
    w = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    b = Tensor(rng.standard_normal(3), requires_grad=True)
    x = rng.standard_normal((5, 4))
    return (lambda: ag.tsum((ag.matmul(x, w) + b) * (ag.matmul(x, w) + b))), {"w": w, "b": b}


def test_linear_model_passes():
    closure, params = _linear()
    report = gradient_check(closure, params, tolerance=1e-4)
    assert report.passed and report.n_checked == 15


def test_injected_wrong_gradient_fails_and_names_coordinate():
    closure, params = _linear()
    wrong = {"w": np.zeros((4, 3)), "b": np.zeros(3)}
    for p in params.values():
        p.grad = None
    closure().backward()
    wrong["w"] = params["w"].grad.copy()
    wrong["b"] = params["b"].grad.copy()
    wrong["w"][2, 1] += 1.0
    report = gradient_check(closure, params, tolerance=1e-4, analytic=wrong)
    assert not report.passed
    assert (report.worst_param, report.worst_index) == ("w", (2, 1))
    assert "FAIL" in str(report) and "w[2, 1]" in str(report)


def test_nondeterministic_closure_detected():
    rng = np.random.default_rng(0)
    w = Tensor(np.ones(2), requires_grad=True)
    with pytest.raises(NondeterministicClosureError):
        gradient_check(lambda: ag.tsum(w * rng.standard_normal(2)), {"w": w})


@pytest.mark.parametrize("name", ["asr", "asr_2frame", "tts", "ic", "ir"])
def test_model_loss_gradients(name, corpus):
    closure, params = loss_cases(small_config(), corpus)[name]
    report = gradient_check(closure, params, tolerance=1e-3, n_coords=100)
    assert report.passed, str(report)
