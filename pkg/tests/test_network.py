import numpy as np
import pytest

from igcv3 import linalg
from igcv3 import network as netmod
from igcv3.blocks import BlockSpec
from igcv3.cost import NetworkSpec, StageSpec, StemSpec, count_params
from igcv3.errors import ConfigError, ContractError, ShapeError


def small_spec(head=3):
    return NetworkSpec(
        StemSpec(3, 8, 3, 1),
        (StageSpec(BlockSpec("IGCV3", 8, 8, expansion=2, g1=2, g2=2, skip=True), 2),),
        head=head, input_resolution=(4, 4),
    )


def test_param_names_and_no_decay():
    net = netmod.build_network(small_spec(), np.random.default_rng(0))
    names = set(net.params)
    assert {"stem.w", "stem.bn.scale", "stem.bn.shift", "fc.w", "fc.b"} <= names
    assert "blocks.1.expand.w" in names
    nd = netmod.no_decay_names(net)
    assert "fc.b" in nd and "blocks.0.project_bn.shift" in nd
    assert not any(k.endswith(".w") or k.endswith(".scale") for k in nd)


def test_num_params_matches_cost_model():
    spec = small_spec()
    net = netmod.build_network(spec, np.random.default_rng(0))
    rep = count_params(spec)
    assert net.num_params() == rep.params_backbone + rep.params_classifier


def test_softmax_cross_entropy():
    logits = np.array([[0.0, 0.0], [10.0, 0.0]])
    loss, d = netmod.softmax_cross_entropy(logits, np.array([0, 0]))
    expected = (np.log(2) + np.log1p(np.exp(-10))) / 2
    assert np.isclose(loss, expected)
    num = linalg.finite_difference_jacobian(
        lambda v: netmod.softmax_cross_entropy(v.reshape(2, 2), np.array([0, 0]))[0], logits)
    assert np.allclose(d.ravel(), num.ravel(), atol=1e-9)


def test_network_gradients_match_finite_differences():
    rng = np.random.default_rng(1)
    net = netmod.build_network(small_spec(), rng)
    x = rng.normal(size=(3, 3, 4, 4))
    labels = np.array([0, 1, 2])

    def loss(params):
        logits, _ = netmod.forward(net.with_params(params), x, "train")
        return netmod.softmax_cross_entropy(logits, labels)[0]

    logits, cache = netmod.forward(net, x, "train")
    _, dlogits = netmod.softmax_cross_entropy(logits, labels)
    grads = netmod.backward(net, dlogits, cache)
    assert set(grads) == set(net.params)
    for name in ("stem.w", "blocks.0.expand.w", "blocks.1.depthwise.w", "fc.w", "fc.b",
                 "stem.bn.scale", "blocks.1.project_bn.scale"):
        p = net.params[name]

        def f(v, name=name, shape=p.shape):
            return loss({**net.params, name: v.reshape(shape)})

        num = linalg.finite_difference_jacobian(f, p).ravel()
        assert linalg.rel_error(grads[name].ravel(), num) < 1e-5, name


def test_forward_updates_state_only_through_cache():
    net = netmod.build_network(small_spec(), np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(2, 3, 4, 4))
    _, cache = netmod.forward(net, x, "train")
    assert np.array_equal(net.stem_state.mean, np.zeros(8))
    updated = net.with_bn_state(cache.stem_state, cache.block_states)
    assert not np.array_equal(updated.stem_state.mean, np.zeros(8))
    assert netmod.predict(updated, x).shape == (2,)


def test_errors():
    with pytest.raises(ConfigError):
        netmod.build_network(small_spec(head=None))
    net = netmod.build_network(small_spec(), np.random.default_rng(0))
    other = netmod.build_network(small_spec(), np.random.default_rng(0))
    logits, cache = netmod.forward(net, np.ones((1, 3, 4, 4)))
    with pytest.raises(ContractError):
        netmod.backward(other, logits, cache)
    with pytest.raises(ShapeError):
        netmod.forward(net, np.ones((1, 4, 4, 4)))
