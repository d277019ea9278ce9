import numpy as np
import pytest

from lir import nn
from lir.gradcheck import grad_check
from lir.tensor import Tensor, sum_

from conftest import t64


def as64(module):
    module.to(np.float64)
    return module


def loss_fn(module, x, seed=11):
    r = None

    def fn():
        nonlocal r
        y = module(x)
        if r is None:
            r = Tensor(np.random.default_rng(seed).standard_normal(y.shape))
        return sum_(y * r)
    return fn


def randomize(module, rng, bias=0.3):
    for name, p in module.named_parameters():
        if name.endswith("bias"):
            p.data = rng.uniform(-bias, bias, p.shape)
        elif name.endswith("gamma"):
            p.data = np.full(1, 0.7)


def test_parameter_names_are_hierarchical(rng):
    blk = nn.ResCABlock(8, rng=rng)
    names = [n for n, _ in blk.named_parameters()]
    assert names == ["conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias", "gamma",
                     "ca.down.weight", "ca.down.bias", "ca.up.weight", "ca.up.bias"]
    assert len(set(names)) == len(names)


def test_init_bounds_and_zero_biases(rng):
    conv = nn.Conv2d(16, 8, 3, rng=rng)
    assert np.abs(conv.weight.data).max() <= 1 / np.sqrt(16 * 9)
    assert not conv.bias.data.any()
    assert conv.bias.no_decay and not conv.weight.no_decay


def test_resblock_gamma_zero_is_identity(rng):
    blk = nn.ResBlock(4, gamma_init=0.0, rng=rng)
    x = Tensor(rng.standard_normal((4, 6, 6)).astype(np.float32))
    np.testing.assert_array_equal(blk(x).data, x.data)


def test_resblock_zero_input_zero_output(rng):
    blk = nn.ResBlock(4, rng=rng)
    assert not blk(Tensor(np.zeros((4, 6, 6), np.float32))).data.any()


def test_resblock_channel_mismatch(rng):
    with pytest.raises(ValueError):
        nn.ResBlock(4, rng=rng)(Tensor(np.zeros((3, 6, 6), np.float32)))


def test_resblock_gradcheck(rng):
    blk = as64(nn.ResBlock(4, rng=rng))
    randomize(blk, rng)
    x = t64(rng.standard_normal((4, 6, 6)))
    assert grad_check(loss_fn(blk, x), [x] + blk.parameters()) < 1e-6


def test_channel_attention_zero_weights_halves(rng):
    ca = nn.ChannelAttention(8, rng=rng)
    for p in ca.parameters():
        p.data[...] = 0
    x = Tensor(rng.standard_normal((8, 4, 4)))
    np.testing.assert_array_equal(ca(x).data, 0.5 * x.data)


def test_channel_attention_pools_channel_constants(rng):
    x = np.broadcast_to(np.arange(8.0)[:, None, None], (8, 4, 4)).copy()
    from lir.tensor import global_average_pool
    np.testing.assert_array_equal(global_average_pool(Tensor(x[None])).data.ravel(), np.arange(8.0))


def test_channel_attention_rejects_bad_reduction():
    with pytest.raises(ValueError):
        nn.ChannelAttention(6, reduction=4)


def test_channel_attention_gradcheck(rng):
    ca = as64(nn.ChannelAttention(8, rng=rng))
    randomize(ca, rng)
    x = t64(rng.standard_normal((8, 4, 4)))
    assert grad_check(loss_fn(ca, x), [x] + ca.parameters()) < 1e-6


def test_rescablock_gamma_zero_identity(rng):
    blk = nn.ResCABlock(8, gamma_init=0.0, rng=rng)
    x = Tensor(rng.standard_normal((8, 5, 5)).astype(np.float32))
    np.testing.assert_array_equal(blk(x).data, x.data)


def test_rescablock_with_unit_gains_equals_resblock(rng):
    ca_blk = nn.ResCABlock(8, rng=np.random.default_rng(5))
    plain = nn.ResBlock(8, rng=np.random.default_rng(5))
    ca_blk.ca.bypass = True
    x = Tensor(rng.standard_normal((8, 5, 5)).astype(np.float32))
    np.testing.assert_array_equal(ca_blk(x).data, plain(x).data)


def test_rescablock_gradcheck(rng):
    blk = as64(nn.ResCABlock(8, rng=rng))
    randomize(blk, rng)
    x = t64(rng.standard_normal((8, 4, 4)))
    assert grad_check(loss_fn(blk, x), [x] + blk.parameters()) < 1e-6


def test_simple_gate(rng):
    a = rng.standard_normal((3, 4, 4))
    y = nn.simple_gate(Tensor(np.concatenate([a, np.ones_like(a)])))
    np.testing.assert_array_equal(y.data, a)
    assert not nn.simple_gate(Tensor(np.zeros((6, 2, 2)))).data.any()
    assert nn.simple_gate(Tensor(np.zeros((96, 2, 2)))).shape == (48, 2, 2)
    with pytest.raises(ValueError):
        nn.simple_gate(Tensor(np.zeros((5, 2, 2))))


def test_simple_gate_gradcheck(rng):
    x = t64(rng.standard_normal((4, 3, 3)))
    r = Tensor(rng.standard_normal((2, 3, 3)))
    assert grad_check(lambda: sum_(nn.simple_gate(x) * r), [x]) < 1e-6


def test_mlp_zero_weights_zero_output(rng):
    mlp = nn.MLP(5, 3, 2, rng=rng)
    for p in mlp.parameters():
        p.data[...] = 0
    assert not mlp(Tensor(rng.standard_normal((4, 5)))).data.any()


def test_mlp_hand_computation():
    mlp = nn.MLP(2, 1, 1)
    mlp.fc1.weight.data = np.array([[2.0], [-1.0]])
    mlp.fc1.bias.data = np.array([0.5])
    mlp.fc2.weight.data = np.array([[3.0]])
    mlp.fc2.bias.data = np.array([-1.0])
    out = mlp(Tensor(np.array([[1.0, 1.0], [0.0, 4.0]]))).data
    # row 1: relu(2 - 1 + 0.5) = 1.5 -> 3.5; row 2: relu(-4 + 0.5) = 0 -> -1
    np.testing.assert_array_equal(out, [[3.5], [-1.0]])


def test_mlp_dimension_mismatch(rng):
    with pytest.raises(ValueError):
        nn.MLP(5, 3, 2, rng=rng)(Tensor(np.zeros((4, 4))))


def test_mlp_gradcheck(rng):
    mlp = as64(nn.MLP(6, 5, 2, rng=rng))
    randomize(mlp, rng)
    x = t64(rng.standard_normal((7, 6)))
    assert grad_check(loss_fn(mlp, x), [x] + mlp.parameters()) < 1e-8


def test_conv_transpose_layer_doubles(rng):
    up = nn.ConvTranspose2d(4, 4, rng=rng)
    assert up(Tensor(np.zeros((4, 5, 7), np.float32))).shape == (4, 10, 14)


def test_state_dict_roundtrip_reproduces_output(rng):
    a = nn.ResCABlock(8, rng=np.random.default_rng(1))
    b = nn.ResCABlock(8, rng=np.random.default_rng(2))
    b.load_state_dict(a.state_dict())
    x = Tensor(rng.standard_normal((8, 4, 4)).astype(np.float32))
    np.testing.assert_array_equal(a(x).data, b(x).data)
    with pytest.raises(KeyError):
        b.load_state_dict({"conv1.weight": a.conv1.weight.data})
