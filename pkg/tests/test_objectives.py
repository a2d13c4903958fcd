import math
from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtdnn.errors import InputError
from mtdnn.gradcheck import grad_check
from mtdnn.objectives import cross_entropy, mse, positive_index, ranking_nll, ranking_probs
from mtdnn.tensor import Tensor, softmax


def t(x, grad=False):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad)


def test_cross_entropy_cases():
    assert cross_entropy(t([0.0, 1.0, 0.0]), 1).item() == 0.0
    assert abs(cross_entropy(t([1 / 3] * 3), 0).item() - math.log(3)) < 1e-15
    clamped = cross_entropy(t([1.0, 0.0]), 1).item()
    assert math.isfinite(clamped) and abs(clamped - (-math.log(1e-12))) < 1e-9


def test_cross_entropy_batch_mean():
    pred = t([[0.5, 0.5], [0.25, 0.75]])
    assert abs(cross_entropy(pred, [0, 1]).item() - (math.log(2) - math.log(0.75)) / 2) < 1e-15


def test_cross_entropy_errors():
    with pytest.raises(InputError):
        cross_entropy(t([0.5, 0.5]), 2)
    with pytest.raises(InputError):
        cross_entropy(t([[0.5, 0.5]]), [0, 1])


def test_mse_cases():
    assert mse(t([1.5, -2.0]), [1.5, -2.0]).item() == 0.0
    assert mse(t(0.0), 2.0).item() == 4.0
    assert mse(t([0.0, 1.0]), [1.0, 3.0]).item() == 2.5
    with pytest.raises(InputError):
        mse(t([1.0, 2.0]), [1.0])


def test_ranking_nll_cases():
    assert abs(ranking_nll(t([0.4, 0.4]), 0).item() - math.log(2)) < 1e-15
    getcontext().prec = 40
    e = Decimal(1).exp()
    want = float(-(e / (e + 1)).ln())
    assert abs(ranking_nll(t([1.0, 0.0]), 0).item() - want) < 1e-15
    assert abs(want - 0.3133) < 1e-4


def test_ranking_gamma_scales_scores():
    a = ranking_nll(t([0.9, 0.1, 0.3]), 0, gamma=2.0).item()
    b = ranking_nll(t([1.8, 0.2, 0.6]), 0, gamma=1.0).item()
    assert abs(a - b) < 1e-15


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=2, max_size=6), st.floats(-5, 5))
def test_ranking_probs_and_shift_invariance(scores, c):
    p = ranking_probs(scores)
    assert abs(p.sum() - 1.0) < 1e-12
    a = ranking_nll(t(scores), 0).item()
    b = ranking_nll(t(np.asarray(scores) + c), 0).item()
    assert abs(a - b) < 1e-10


def test_ranking_nll_decreases_with_positive_score():
    values = [ranking_nll(t([s, 0.3, 0.7, 0.5]), 0).item() for s in np.linspace(0.01, 0.99, 25)]
    assert all(x > y for x, y in zip(values, values[1:]))


def test_ranking_errors():
    with pytest.raises(InputError):
        positive_index([0, 0, 0])
    with pytest.raises(InputError):
        positive_index([1, 0, 1])
    assert positive_index([0, 0, 1, 0]) == 2
    with pytest.raises(InputError):
        ranking_nll(t([0.5]), 0)
    with pytest.raises(InputError):
        ranking_nll(t([0.5, 0.2]), 3)
    with pytest.raises(InputError):
        ranking_nll(t([0.5, 0.2]), 0, gamma=0.0)


def test_ranking_batch_of_queries():
    sets = [t([0.9, 0.1]), t([0.2, 0.3, 0.8])]
    got = ranking_nll(sets, [0, 2]).item()
    want = (ranking_nll(sets[0], 0).item() + ranking_nll(sets[1], 2).item()) / 2
    assert abs(got - want) < 1e-15


def test_losses_gradcheck_at_tighter_tolerance():
    rng = np.random.default_rng(0)
    z = t(rng.normal(size=(4, 3)), True)
    assert grad_check(lambda: cross_entropy(softmax(z), [0, 2, 1, 1]).value, z, tol=1e-5).passed
    s = t(rng.normal(size=5), True)
    y = rng.normal(size=5)
    assert grad_check(lambda: mse(s, y).value, s, tol=1e-5).passed
    r = [t(rng.uniform(size=4), True), t(rng.uniform(size=3), True)]
    assert grad_check(lambda: ranking_nll(r, [2, 0]).value, r, tol=1e-5).passed
