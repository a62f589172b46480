import math

import numpy as np
import pytest

from filigrain.late_interaction import SimilarityPair
from filigrain.objective import (TAU_FLOOR, clamp_temperature, image_to_text_loss, make_temperature,
                                 multi_positive_targets, one_hot_targets, text_to_image_loss, total_loss)
from filigrain.tensor import Tensor, backward, numerical_grad

from oracles import contrastive_total

DIAG = np.eye(2)


def test_loss_reference_values():
    li = image_to_text_loss(Tensor(DIAG), 1.0).item()
    assert li == pytest.approx(2 * 0.5 * math.log(1 + math.exp(-1)), abs=1e-12)
    assert li == pytest.approx(0.313262, abs=1e-6)
    assert text_to_image_loss(Tensor(DIAG.T), 1.0).item() == pytest.approx(li, abs=1e-15)
    assert total_loss(SimilarityPair(Tensor(DIAG), Tensor(DIAG)), 1.0).item() == pytest.approx(0.313262, abs=1e-6)
    assert text_to_image_loss(Tensor(np.full((2, 2), 0.3)), 1.0).item() == pytest.approx(math.log(2), abs=1e-12)


def test_single_sample_is_exactly_zero():
    one = Tensor([[0.42]])
    assert image_to_text_loss(one, 0.07).item() == 0.0
    assert text_to_image_loss(one, 0.07).item() == 0.0
    assert total_loss(SimilarityPair(one, one), make_temperature()).item() == 0.0


def test_row_shift_invariance(rng):
    s = rng.normal(size=(4, 4))
    shifted = s.copy()
    shifted[2] += 3.7
    assert image_to_text_loss(Tensor(s), 0.5).item() == pytest.approx(image_to_text_loss(Tensor(shifted), 0.5).item())


def test_matches_loop_oracle(rng):
    s_I, s_T = rng.uniform(-1, 1, size=(2, 5, 5))
    got = total_loss(SimilarityPair(Tensor(s_I), Tensor(s_T)), 0.2).item()
    assert got == pytest.approx(contrastive_total(s_I.tolist(), s_T.tolist(), 0.2), abs=1e-12)


def test_text_direction_softmax_runs_over_images():
    s_T = Tensor([[5.0, 0.0], [0.0, 0.0]])  # text 0 strongly prefers image 0
    rows = text_to_image_loss(s_T, 1.0).item()
    expect = 0.5 * (-(5 - math.log(math.exp(5) + 1)) - (0 - math.log(2)))
    assert rows == pytest.approx(expect)


def test_temperature_gradient_matches_finite_difference(rng):
    s_I = Tensor(rng.uniform(-1, 1, size=(3, 3)), requires_grad=True)
    s_T = Tensor(rng.uniform(-1, 1, size=(3, 3)), requires_grad=True)
    tau = make_temperature(0.3)
    f = lambda: total_loss(SimilarityPair(s_I, s_T), tau).item()
    backward(total_loss(SimilarityPair(s_I, s_T), tau))
    assert tau.grad != 0
    for p in (tau, s_I, s_T):
        num = numerical_grad(f, p)
        assert np.allclose(p.grad, num, rtol=1e-4, atol=1e-9)


def test_targets():
    assert np.array_equal(multi_positive_targets([[0], [1], [2]], 3), one_hot_targets(3))
    assert multi_positive_targets([[0, 2]], 4).tolist() == [[0.5, 0.0, 0.5, 0.0]]
    with pytest.raises(ValueError):
        multi_positive_targets([[]], 2)
    with pytest.raises(IndexError):
        multi_positive_targets([[3]], 2)


def test_multi_positive_never_worse_than_single_assignment():
    # texts 0-1 describe image 0, texts 2-3 describe image 1; both captions score equally well
    s = Tensor(np.array([[0.9, 0.9, 0.1, 0.1], [0.1, 0.1, 0.9, 0.9],
                         [0.9, 0.9, 0.1, 0.1], [0.1, 0.1, 0.9, 0.9]]))
    multi = multi_positive_targets([[0, 1], [2, 3], [0, 1], [2, 3]], 4)
    single = one_hot_targets(4)
    assert image_to_text_loss(s, 0.1, multi).item() <= image_to_text_loss(s, 0.1, single).item()


def test_bad_inputs():
    with pytest.raises(ValueError):
        image_to_text_loss(Tensor(np.ones((2, 3))), 1.0)
    with pytest.raises(ValueError):
        image_to_text_loss(Tensor(np.eye(2)), 1.0, np.ones((2, 2)))


def test_clamp_and_nonnegativity(rng):
    tau = make_temperature(0.001)
    clamp_temperature(tau)
    assert tau.item() == TAU_FLOOR
    for _ in range(20):
        s = Tensor(rng.normal(size=(4, 4)))
        assert total_loss(SimilarityPair(s, s), 0.07).item() >= 0.0


def test_free_logit_descent_is_monotone(rng):
    s = Tensor(rng.normal(size=(4, 4)) * 0.1, requires_grad=True)
    prev = math.inf
    for _ in range(100):
        s.zero_grad()
        loss = total_loss(SimilarityPair(s, s), 1.0)
        assert loss.item() < prev
        prev = loss.item()
        backward(loss)
        s.data = s.data - 0.5 * s.grad
    assert prev < 0.1
