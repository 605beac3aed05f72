import numpy as np
import pytest

from conftest import central_difference
from diff_net import (
    AdamState,
    DiffNet,
    critic_fit_episode,
    critic_table,
    mse_loss_grad,
    scheduled_rate,
)


def small_net(head="softmax", out=4, seed=0):
    return DiffNet(3, out, hidden_width=6, head=head, rng=np.random.default_rng(seed))


def test_zero_weights_give_uniform_softmax():
    net = DiffNet(3, 4, hidden_width=5, params=np.zeros(5 * 4 + 4 * 6))
    assert net.forward(np.array([1.0, -2.0, 0.5])).tolist() == pytest.approx([0.25] * 4)


def test_parameter_count_and_dimension_check():
    net = DiffNet(7, 3, hidden_width=100)
    assert net.parameter_count == 100 * 8 + 3 * 101
    with pytest.raises(ValueError):
        net.forward(np.zeros(6))


def test_masked_softmax_puts_no_mass_on_masked_entries():
    net = small_net(out=5)
    mask = np.array([True, False, True, True, False])
    probs = net.forward(np.array([0.2, 0.1, -0.3]), mask)
    assert probs[~mask].tolist() == [0.0, 0.0]
    assert probs.sum() == pytest.approx(1.0, abs=1e-12)


FD_SEEDS = range(20)


def scaled_net(seed, head="softmax", out=4):
    net = small_net(head=head, out=out, seed=seed)
    net.set_params(net.params * 20)
    return net


@pytest.mark.parametrize("seed", FD_SEEDS)
def test_log_prob_grad_matches_finite_differences(seed):
    net = scaled_net(seed)
    x = np.random.default_rng(seed).normal(size=3)
    index = seed % 4
    grad, _ = net.log_prob_grad(x, index)
    numeric = central_difference(lambda: float(np.log(net.forward(x)[index])), net.params)
    assert np.allclose(grad, numeric, rtol=1e-5, atol=1e-6)


@pytest.mark.parametrize("seed", FD_SEEDS)
def test_entropy_grad_matches_finite_differences(seed):
    net = scaled_net(seed)
    x = np.random.default_rng(seed).normal(size=3)

    def entropy():
        p = net.forward(x)
        return float(-np.sum(p * np.log(p)))

    grad, value = net.entropy_grad(x)
    assert value == pytest.approx(entropy())
    assert np.allclose(grad, central_difference(entropy, net.params), rtol=1e-5, atol=1e-6)


def test_score_and_entropy_grads_agree_with_separate_calls():
    net = small_net(seed=5)
    x = np.array([0.3, 0.3, -1.0])
    score, entropy = net.score_and_entropy_grads(x, 1)
    assert np.allclose(score, net.log_prob_grad(x, 1)[0])
    assert np.allclose(entropy, net.entropy_grad(x)[0])


@pytest.mark.parametrize("seed", FD_SEEDS)
def test_masked_output_grad_matches_finite_differences(seed):
    net = scaled_net(seed, out=5)
    draw = np.random.default_rng(seed)
    x = draw.normal(size=(2, 3))
    mask = draw.random((2, 5)) < 0.7
    mask[:, 0] = True
    weights = draw.normal(size=(2, 5))
    grad = net.output_grad(x, weights, mask)
    numeric = central_difference(lambda: float(np.sum(net.forward(x, mask) * weights)), net.params)
    assert np.allclose(grad, numeric, rtol=1e-5, atol=1e-6)


def test_linear_head_rejects_log_prob():
    net = small_net(head="linear", out=1)
    with pytest.raises(ValueError):
        net.log_prob_grad(np.zeros(3), 0)


@pytest.mark.parametrize("seed", FD_SEEDS)
def test_mse_grad_matches_finite_differences(seed):
    net = scaled_net(seed, head="linear", out=1)
    draw = np.random.default_rng(seed)
    inputs = draw.normal(size=(4, 3))
    targets = draw.normal(size=4) * 3
    grad, loss = mse_loss_grad(net, inputs, targets)
    numeric = central_difference(lambda: mse_loss_grad(net, inputs, targets)[1], net.params)
    assert loss > 0
    assert np.allclose(grad, numeric, rtol=1e-5, atol=1e-6)


def test_mse_grad_and_empty_batch():
    net = small_net(head="linear", out=1, seed=2)
    inputs = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    targets = np.array([1.0, -2.0, 0.5])
    grad, loss = mse_loss_grad(net, inputs, targets)
    numeric = central_difference(lambda: mse_loss_grad(net, inputs, targets)[1], net.params)
    assert loss > 0
    assert np.allclose(grad, numeric, rtol=1e-5, atol=1e-6)
    with pytest.raises(ValueError):
        mse_loss_grad(net, np.zeros((0, 3)), np.zeros(0))


def test_critic_fit_reduces_loss():
    net = DiffNet(4, 1, hidden_width=20, head="linear", rng=np.random.default_rng(0))
    adam = AdamState.for_net(net, lr=0.01)
    states = list(np.eye(4))
    targets = [3.0, -1.0, 0.0, 2.0]
    _, first = critic_fit_episode(net, states, targets, adam)
    for _ in range(1500):
        net, last = critic_fit_episode(net, states, targets, adam)
    assert last < 0.05 * first
    assert critic_table(net, 4) == pytest.approx(targets, abs=0.3)


def test_snapshot_roundtrip_and_bad_magic(tmp_path):
    net = small_net(seed=9)
    path = tmp_path / "policy.dnet"
    net.save(str(path))
    loaded = DiffNet.load(str(path))
    assert loaded.head == "softmax"
    assert np.array_equal(loaded.params, net.params)
    blob = net.to_bytes()
    with pytest.raises(ValueError):
        DiffNet.from_bytes(b"XXXX" + blob[4:])
    bumped = blob[:4] + np.array([2], dtype="<u4").tobytes() + blob[8:]
    with pytest.raises(ValueError):
        DiffNet.from_bytes(bumped)


def test_scheduled_rate():
    assert scheduled_rate(0.001, 0) == 0.001
    assert scheduled_rate(0.001, 499) == 0.001
    assert scheduled_rate(0.001, 500) == 0.0005
    assert scheduled_rate(0.001, 1500) == 0.00025
