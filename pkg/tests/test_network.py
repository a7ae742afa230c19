import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deepsplit.checks import check_input_gradient, check_param_gradient
from deepsplit.network import (BatchNormState, NetworkArchitecture, NetworkError, ParameterVector,
                               StaleCacheError, forward, grad_params, grad_x, init_params,
                               layout_for)
from deepsplit.rng import Stream


def hand_network():
    arch = NetworkArchitecture(1, 1, batch_norm_sites=())
    blocks = {"W0": [[2.0]], "b0": [0.0], "W1": [[1.0]], "b1": [-1.0], "W2": [[3.0]], "b2": [0.5]}
    return ParameterVector(arch, layout_for(arch).pack(blocks)), BatchNormState.fresh(arch)


def test_hand_network_values_and_gradient():
    params, bn = hand_network()
    x = np.array([[1.0], [-1.0]])
    v, _, _ = forward(params, bn, x, "infer")
    assert np.array_equal(v, [3.5, 0.5])
    assert np.array_equal(grad_x(params, bn, x)[:, 0], [6.0, 0.0])


def test_parameter_count():
    arch = NetworkArchitecture(10, 20)
    layout = layout_for(arch)
    assert layout.affine_size == 661
    assert arch.num_params == 661 + 2 * (10 + 3 * 20)
    # general formula l(d+1) + (k-2) l(l+1) + (l+1) + 2 (d + k l)
    for d, l, k in [(3, 5, 3), (7, 4, 5), (100, 110, 3)]:
        a = NetworkArchitecture(d, l, depth=k)
        assert a.num_params == l * (d + 1) + (k - 2) * l * (l + 1) + (l + 1) + 2 * (d + k * l)


def test_layout_blocks_partition_vector():
    arch = NetworkArchitecture(4, 6, depth=4, batch_norm_sites=(0, 2, 4))
    layout = layout_for(arch)
    covered = np.zeros(layout.size, dtype=int)
    for start, shape in layout.blocks.values():
        covered[start:start + int(np.prod(shape))] += 1
    assert np.all(covered == 1)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_layout_roundtrip(seed):
    arch = NetworkArchitecture(3, 5)
    layout = layout_for(arch)
    flat = np.random.default_rng(seed).normal(size=layout.size)
    assert np.array_equal(layout.pack(layout.unpack(flat)), flat)


def test_init_conventions():
    arch = NetworkArchitecture(100, 110)
    p = init_params(arch, Stream(0))
    for r in range(3):
        assert np.all(p.bias(r) == 0.0)
    for s in arch.batch_norm_sites:
        assert np.all(p.block(f"bn{s}.scale") == 1.0) and np.all(p.block(f"bn{s}.shift") == 0.0)
    w = p.weight(0)
    assert w.shape == (110, 100)
    assert abs(w.var() - 6.0 / 210 / 3) < 0.1 * 6.0 / 210 / 3
    assert np.abs(w).max() <= np.sqrt(6.0 / 210)
    assert np.array_equal(init_params(arch, 0).data, p.data)


def test_zero_network_outputs_zero():
    arch = NetworkArchitecture(4, 6)
    flat = np.zeros(arch.num_params)
    layout = layout_for(arch)
    for s in arch.batch_norm_sites:
        layout.view(flat, f"bn{s}.scale")[...] = 1.0
    v, bn, _ = forward(ParameterVector(arch, flat), BatchNormState.fresh(arch),
                       np.random.default_rng(0).normal(size=(5, 4)), "infer")
    assert np.all(v == 0.0)


def test_identical_inputs_normalize_to_zero():
    arch = NetworkArchitecture(3, 4)
    p = init_params(arch, 1)
    x = np.tile([[0.3, -1.0, 2.0]], (2, 1))
    _, _, cache = forward(p, BatchNormState.fresh(arch), x, "train")
    bn_ops = [op for op in cache.ops if op[0] == "bn"]
    assert bn_ops and all(np.all(op[2] == 0.0) for op in bn_ops)


def test_train_mode_updates_running_statistics():
    arch = NetworkArchitecture(2, 3, batch_norm_sites=(0,))
    p = init_params(arch, 2)
    x = np.array([[1.0, 2.0], [3.0, 6.0]])
    _, bn, _ = forward(p, BatchNormState.fresh(arch), x, "train")
    # the first batch replaces the fresh state
    assert np.array_equal(bn.running_mean, [2.0, 4.0])
    assert np.array_equal(bn.running_var, [1.0, 4.0])
    assert bn.count == 1
    _, bn1, _ = forward(p, bn, 2.0 * x, "train")
    assert np.allclose(bn1.running_mean, 0.99 * np.array([2.0, 4.0]) + 0.01 * np.array([4.0, 8.0]))
    assert np.allclose(bn1.running_var, 0.99 * np.array([1.0, 4.0]) + 0.01 * np.array([4.0, 16.0]))
    assert bn1.count == 2
    _, same, _ = forward(p, bn, x, "train")
    assert np.array_equal(same.running_mean, bn.running_mean)
    _, untouched, _ = forward(p, bn, x, "batch")
    assert untouched is bn
    _, bn2, _ = forward(p, bn, x, "infer")
    assert bn2 is bn


def test_infer_mode_is_batch_independent():
    arch = NetworkArchitecture(6, 9)
    p = init_params(arch, 3)
    rng = np.random.default_rng(1)
    bn = BatchNormState._frozen(rng.normal(size=arch.num_bn_features),
                                rng.uniform(0.5, 2, arch.num_bn_features), 3)
    x = rng.normal(size=(13, 6))
    joint = forward(p, bn, x, "infer")[0]
    single = np.array([forward(p, bn, x[j:j + 1], "infer")[0][0] for j in range(13)])
    assert np.array_equal(joint, single)
    assert np.array_equal(grad_x(p, bn, x)[4], grad_x(p, bn, x[4:5])[0])


def test_relu_kink_contributes_nothing():
    params, bn = hand_network()
    # first pre-activation is exactly 0 at x = 0
    assert grad_x(params, bn, np.array([[0.0]]))[0, 0] == 0.0
    v, _, cache = forward(params, bn, np.array([[0.0], [0.0]]), "train")
    g = grad_params(cache, np.ones(2))
    layout = params.layout
    assert layout.view(g, "W0")[0, 0] == 0.0 and layout.view(g, "b0")[0] == 0.0


def test_affine_network_gradient_is_weight_product():
    arch = NetworkArchitecture(4, 5, activation="identity", batch_norm_sites=())
    p = init_params(arch, 4)
    x = np.random.default_rng(2).normal(size=(3, 4))
    g = grad_x(p, BatchNormState.fresh(arch), x)
    prod = p.weight(2) @ p.weight(1) @ p.weight(0)
    assert np.allclose(g, np.broadcast_to(prod, (3, 4)), rtol=1e-13, atol=1e-15)


def test_logistic_activation_gradients():
    arch = NetworkArchitecture(3, 4, activation="logistic")
    p = init_params(arch, 5)
    bn = BatchNormState.fresh(arch)
    x = np.random.default_rng(3).normal(size=(4, 3))
    g = grad_x(p, bn, x)
    h = 1e-6
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        fd = (forward(p, bn, x + e, "infer")[0] - forward(p, bn, x - e, "infer")[0]) / (2 * h)
        assert np.allclose(fd, g[:, i], rtol=1e-6, atol=1e-10)


def test_gradients_match_finite_differences():
    assert check_param_gradient(trials=20, coords=100, seed=10).passed
    assert check_input_gradient(trials=40, seed=11).passed


def test_upstream_zero_gives_zero_gradient():
    arch = NetworkArchitecture(3, 4)
    p = init_params(arch, 6)
    _, _, cache = forward(p, BatchNormState.fresh(arch), np.random.default_rng(0).normal(size=(5, 3)))
    assert np.all(grad_params(cache, np.zeros(5)) == 0.0)


def test_output_bias_gradient_is_upstream_sum():
    arch = NetworkArchitecture(3, 4, batch_norm_sites=(0, 1, 2))
    p = init_params(arch, 7)
    u = np.array([0.5, -2.0, 1.25, 3.0])
    _, _, cache = forward(p, BatchNormState.fresh(arch), np.random.default_rng(1).normal(size=(4, 3)))
    assert p.layout.view(grad_params(cache, u), "b2")[0] == u.sum()


def test_stale_cache_detected():
    arch = NetworkArchitecture(3, 4)
    p = init_params(arch, 8)
    _, _, cache = forward(p, BatchNormState.fresh(arch), np.ones((3, 3)) * [[1], [2], [3]])
    p.assign(p.data * 2)
    assert p.generation == 1
    with pytest.raises(StaleCacheError):
        grad_params(cache, np.ones(3))


def test_errors():
    arch = NetworkArchitecture(2, 3)
    p = init_params(arch, 9)
    bn = BatchNormState.fresh(arch)
    with pytest.raises(ValueError):
        forward(p, bn, np.ones((1, 2)), "train")
    with pytest.raises(ValueError):
        forward(p, bn, np.ones((3, 5)), "infer")
    with pytest.raises(ValueError):
        forward(p, bn, np.ones((3, 2)), "eval")
    _, _, cache = forward(p, bn, np.ones((3, 2)), "infer")
    with pytest.raises(ValueError):
        grad_params(cache, np.ones(3))
    with pytest.raises(NetworkError, match="layer 0"):
        forward(p, bn, np.array([[1.0, 2.0], [np.inf, 0.0], [0.0, 1.0]]), "infer")
    with pytest.raises(ValueError):
        NetworkArchitecture(2, 3, depth=2)
    with pytest.raises(ValueError):
        NetworkArchitecture(2, 3, batch_norm_sites=(5,))
    with pytest.raises(ValueError):
        NetworkArchitecture(2, 3, activation="tanh")
    with pytest.raises(ValueError):
        p.data[0] = 1.0


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), J=st.integers(3, 40))
def test_batch_norm_invariants(seed, J):
    rng = np.random.default_rng(seed)
    arch = NetworkArchitecture(4, 6)
    p = init_params(arch, seed)
    x = rng.normal(loc=rng.normal(size=4) * 5, scale=rng.uniform(0.1, 10, 4), size=(J, 4))
    _, bn, cache = forward(p, BatchNormState.fresh(arch), x, "train")
    assert np.all(bn.running_var >= 0)
    for op in cache.ops:
        if op[0] != "bn":
            continue
        xhat, floored = op[2], op[4]
        assert np.abs(xhat.mean(axis=0)).max() <= 1e-12
        assert np.abs(xhat[:, ~floored].var(axis=0) - 1.0).max(initial=0.0) <= 1e-10
