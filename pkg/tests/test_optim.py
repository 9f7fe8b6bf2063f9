import numpy as np
import pytest

from orspoken.errors import DivergenceError, RuntimeFailure
from orspoken.optim import minibatch_gd


def _quadratic(target):
    def loss_and_grads(w, idx):
        d = w["x"] - target
        return float(d @ d), {"x": 2 * d}

    return loss_and_grads


def test_converges_on_quadratic():
    w = {"x": np.zeros(3)}
    losses = minibatch_gd(w, _quadratic(np.array([1.0, -2.0, 3.0])), 4, lr=0.1, epochs=50, batch=2,
                          rng=np.random.default_rng(0))
    assert len(losses) == 50 and losses[-1] < 1e-8
    assert np.allclose(w["x"], [1, -2, 3])


def test_minibatches_cover_every_example():
    seen = []

    def loss_and_grads(w, idx):
        if idx is not None:
            seen.append(sorted(idx.tolist()))
        return 0.0, {}

    minibatch_gd({}, loss_and_grads, 7, lr=0.1, epochs=1, batch=3, rng=np.random.default_rng(1))
    assert [len(b) for b in seen] == [3, 3, 1]
    assert sorted(sum(seen, [])) == list(range(7))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_epoch():
    with pytest.raises(DivergenceError) as info:
        minibatch_gd({"x": np.ones(1)}, _quadratic(np.zeros(1)), 1, lr=1e3, epochs=500, batch=1,
                     rng=np.random.default_rng(0))
    assert isinstance(info.value, RuntimeFailure)
    assert info.value.epoch > 1


def test_needs_examples():
    with pytest.raises(ValueError):
        minibatch_gd({}, _quadratic(np.zeros(1)), 0, lr=0.1, epochs=1, batch=1, rng=np.random.default_rng(0))
