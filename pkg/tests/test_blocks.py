import numpy as np
import pytest

from igcv3 import blocks as blk
from igcv3 import linalg
from igcv3.complementary import support_density, verify_dense
from igcv3.errors import ComplementarityError, ConfigError, ContractError, ShapeError
from igcv3.kernels import compose_dense, materialize

PLACEMENTS = ("AfterFirstAndMiddle", "AfterMiddle", "AfterLast")


def relu_inputs(block, x):
    _, cache = blk.forward(block, x, "train")
    return [c for layer, c in zip(block.layers, cache.records) if isinstance(layer, blk.ReLU)]


def kink_free_input(block, shape, rng, margin=1e-3, tries=200):
    """Draw inputs until no ReLU sees a value within ``margin`` of zero."""
    for _ in range(tries):
        x = rng.normal(size=shape)
        if all(np.min(np.abs(r)) > margin for r in relu_inputs(block, x)):
            return x
    pytest.skip("could not draw a kink-free input")


def grad_error(analytic, numeric, floor=1e-7):
    """Relative error; gradients that vanish on both sides (a BN shift followed by
    another train-mode BN with no ReLU between is cancelled exactly) agree."""
    if max(np.linalg.norm(analytic), np.linalg.norm(numeric)) < floor:
        return 0.0
    return linalg.rel_error(analytic, numeric)


def fd_check(block, x, rng):
    y, cache = blk.forward(block, x, "train")
    up = rng.normal(size=y.shape)
    dx, grads = blk.backward(block, up, cache)

    def loss_x(v):
        return np.sum(up * blk.forward(block, v.reshape(x.shape), "train")[0])

    errs = {"x": grad_error(dx.ravel(), linalg.finite_difference_jacobian(loss_x, x).ravel())}
    for name, p in block.params.items():
        def loss_p(v, name=name, shape=p.shape):
            params = dict(block.params)
            params[name] = v.reshape(shape)
            return np.sum(up * blk.forward(block.replace(params=params), x, "train")[0])

        num = linalg.finite_difference_jacobian(loss_p, p).ravel()
        errs[name] = grad_error(grads[name].ravel(), num)
    return errs


@pytest.mark.parametrize("placement", PLACEMENTS)
@pytest.mark.parametrize("family,kw", [
    ("IGCV3", dict(expansion=2, g1=2, g2=2)),
    ("MNV2", dict(expansion=2)),
    ("IGCV3", dict(expansion=2, g1=2, g2=2, inverted=False, skip=True)),
    ("IGCV1", dict(g1=2, g2=2)),
    ("IGCV2", dict(g1=2, g2=4)),
    ("MNV1", dict()),
])
def test_gradients_match_finite_differences(family, kw, placement):
    rng = np.random.default_rng(0)
    block = blk.build(blk.BlockSpec(family, 8, 8, relu_placement=placement, **kw), rng)
    x = kink_free_input(block, (2, 8, 5, 5), rng)
    errs = fd_check(block, x, rng)
    assert max(errs.values()) < 1e-4, errs


def test_gradients_with_stride_and_width_change():
    rng = np.random.default_rng(1)
    block = blk.build(blk.BlockSpec("IGCV3", 4, 8, expansion=2, g1=2, g2=2, stride=2), rng)
    x = kink_free_input(block, (2, 4, 5, 5), rng)
    assert max(fd_check(block, x, rng).values()) < 1e-4


def effective_kernel(block):
    """Dense (out, in, k, k) kernel of a linear IGCV3/MNV2 block, built from the weights.

    Inverted:      E[o, i] = sum_j A[o, j] S[j] B[j, i]
    Non-inverted:  E[o, i] = (A B)[o, i] S[i]
    with the permutations folded into A and B.
    """
    convs = block.convs
    mats, perm_after = {}, {}
    for i, layer in enumerate(block.layers):
        if isinstance(layer, blk.Shuffle):
            prev = [l for l in block.layers[:i] if isinstance(l, blk.Conv)][-1]
            perm_after[prev.name] = layer.perm.matrix()
    for conv in convs:
        if conv.kind == blk.CHANNELWISE_SPATIAL:
            continue
        m = materialize(block.stage(conv.name))
        mats[conv.name] = perm_after.get(conv.name, np.eye(m.shape[0])) @ m
    dw = next(c for c in convs if c.kind == blk.CHANNELWISE_SPATIAL)
    k = dw.side
    s = block.params[dw.name + ".w"].reshape(dw.out_channels, k, k)
    first, last = [mats[c.name] for c in convs if c.name in mats]
    if convs[0].kind == blk.CHANNELWISE_SPATIAL:
        return np.einsum("oi,ikl->oikl", last @ first, s)
    return np.einsum("oj,jkl,ji->oikl", last, s, first)


@pytest.mark.parametrize("placement", ["none", "AfterLast"])
@pytest.mark.parametrize("family,kw", [
    ("IGCV3", dict(expansion=2, g1=2, g2=2)),
    ("IGCV3", dict(expansion=4, g1=2, g2=4, stride=2)),
    ("IGCV3", dict(expansion=2, g1=2, g2=2, inverted=False)),
    ("MNV2", dict(expansion=3)),
])
def test_linear_block_equals_single_effective_conv(family, kw, placement):
    rng = np.random.default_rng(2)
    for _ in range(5):
        spec = blk.BlockSpec(family, 8, 8, relu_placement=placement, **kw)
        block = blk.build(spec, rng).with_identity_batchnorm()
        x = rng.normal(size=(2, 8, 6, 6))
        y, _ = blk.forward(block, x, "eval")
        e = effective_kernel(block)
        ref = linalg.conv2d(x, e.reshape(8, -1), e.shape[2], e.shape[3], spec.stride, e.shape[2] // 2)
        if placement == "AfterLast":
            ref = linalg.relu(ref)
        assert np.max(np.abs(y - ref)) < 1e-10


def test_equivalent_dense_pointwise_matches_pointwise_product():
    rng = np.random.default_rng(3)
    block = blk.build(blk.BlockSpec("IGCV3", 8, 8, expansion=2, g1=2, g2=2, relu_placement="none"), rng)
    e = effective_kernel(block)
    dw = block.params["depthwise.w"]
    # with every depthwise tap set to one, summing the effective kernel over taps
    # equals 9x the pointwise product
    ones = block.replace(params={**block.params, "depthwise.w": np.ones_like(dw)})
    assert np.allclose(effective_kernel(ones).sum(axis=(2, 3)), 9 * blk.equivalent_dense_pointwise(block))
    assert e.shape == (8, 8, 3, 3)


def test_igcv3_block_is_dense_and_loose_but_not_strict():
    block = blk.build(blk.BlockSpec("IGCV3", 8, 8, expansion=1, g1=2, g2=2), np.random.default_rng(0))
    assert block.loose_condition() and not block.strict_condition()
    assert verify_dense(block.composed_kernel())


def test_strict_holds_when_every_channel_is_a_super_channel():
    block = blk.build(blk.BlockSpec("IGCV3", 4, 4, expansion=1, g1=2, g2=2), np.random.default_rng(0))
    assert block.strict_condition() and block.loose_condition()


def test_dropping_permutation_fails_loudly_or_reports_block_diagonal():
    spec = blk.BlockSpec("IGCV3", 8, 8, expansion=2, g1=2, g2=2, permute=False)
    with pytest.raises(ComplementarityError):
        blk.build(spec, np.random.default_rng(0))
    block = blk.build(spec, np.random.default_rng(0), check=False)
    assert not verify_dense(block.composed_kernel())
    assert support_density(block.composed_kernel()) == 0.5


@pytest.mark.parametrize("family,kw", [
    ("IGCV1", dict(g1=2, g2=4)), ("IGCV2", dict(g1=4, g2=2)), ("MNV1", {}), ("MNV2", {}),
])
def test_other_families_are_dense(family, kw):
    block = blk.build(blk.BlockSpec(family, 8, 8, **kw), np.random.default_rng(0))
    assert verify_dense(block.composed_kernel())


def test_layer_order_and_relu_positions():
    spec = blk.BlockSpec("IGCV3", 8, 8, expansion=2, g1=2, g2=2, relu_placement="AfterFirstAndMiddle")
    names = [type(l).__name__ for l in blk.build(spec, np.random.default_rng(0)).layers]
    assert names == ["Conv", "BatchNorm", "ReLU", "Shuffle", "Conv", "BatchNorm", "ReLU",
                     "Conv", "BatchNorm", "Shuffle"]
    for placement, count in [("AfterMiddle", 1), ("AfterLast", 1), ("none", 0)]:
        b = blk.build(spec.replace(relu_placement=placement), np.random.default_rng(0))
        assert sum(isinstance(l, blk.ReLU) for l in b.layers) == count
    last = blk.build(spec.replace(relu_placement="AfterLast"), np.random.default_rng(0))
    assert isinstance(last.layers[-2], blk.ReLU)


def test_skip_adds_input():
    rng = np.random.default_rng(4)
    spec = blk.BlockSpec("MNV2", 4, 4, expansion=2)
    a = blk.build(spec, np.random.default_rng(0))
    b = blk.build(spec.replace(skip=True), np.random.default_rng(0))
    x = rng.normal(size=(2, 4, 3, 3))
    assert np.allclose(blk.forward(b, x)[0], blk.forward(a, x)[0] + x)


def test_forward_does_not_mutate_running_stats():
    block = blk.build(blk.BlockSpec("MNV2", 4, 4, expansion=2), np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(2, 4, 3, 3))
    _, cache = blk.forward(block, x, "train")
    name = "expand_bn"
    assert np.array_equal(block.bn_state[name].mean, np.zeros(8))
    assert not np.array_equal(cache.bn_state[name].mean, np.zeros(8))
    _, ev = blk.forward(block, x, "eval")
    assert ev.bn_state[name] is block.bn_state[name]


def test_stale_cache_and_bad_input():
    spec = blk.BlockSpec("MNV2", 4, 4, expansion=2)
    a = blk.build(spec, np.random.default_rng(0))
    b = blk.build(spec, np.random.default_rng(0))
    y, cache = blk.forward(a, np.ones((1, 4, 3, 3)))
    with pytest.raises(ContractError):
        blk.backward(b, y, cache)
    with pytest.raises(ShapeError):
        blk.forward(a, np.ones((1, 5, 3, 3)))


@pytest.mark.parametrize("kw", [
    dict(family="IGCV9", in_channels=4, out_channels=4),
    dict(family="IGCV3", in_channels=4, out_channels=4, g1=3),
    dict(family="MNV2", in_channels=4, out_channels=4, g1=2),
    dict(family="IGCV3", in_channels=4, out_channels=8, skip=True),
    dict(family="IGCV3", in_channels=4, out_channels=4, spatial_kernel=2),
    dict(family="IGCV3", in_channels=4, out_channels=4, relu_placement="Everywhere"),
    dict(family="MNV2", in_channels=4, out_channels=4, expansion=1.3),
])
def test_invalid_specs(kw):
    with pytest.raises(ConfigError):
        blk.BlockSpec(**kw)


def test_structural_equality_ignores_weights():
    spec = blk.BlockSpec("IGCV3", 8, 8, expansion=2, g1=2, g2=2)
    a = blk.build(spec, np.random.default_rng(0))
    b = blk.build(spec, np.random.default_rng(1))
    assert blk.structurally_equal(a, b)
    assert not blk.structurally_equal(a, blk.build(spec.replace(g2=1), np.random.default_rng(0)))


def test_grouped_spatial_block_has_no_dense_pointwise_form():
    block = blk.build(blk.BlockSpec("IGCV1", 8, 8, g1=2, g2=2, relu_placement="none"),
                      np.random.default_rng(0))
    with pytest.raises(Exception):
        blk.equivalent_dense_pointwise(block)
    assert not blk.is_linear_pointwise_chain(
        blk.build(blk.BlockSpec("IGCV3", 8, 8, expansion=2, g1=2, g2=2), np.random.default_rng(0)))


def test_compose_dense_of_linear_pointwise_block():
    block = blk.build(blk.BlockSpec("IGCV2", 8, 8, g1=2, g2=4, relu_placement="none"),
                      np.random.default_rng(0))
    g1 = materialize(block.stage("group1"))
    g2 = materialize(block.stage("group2"))
    perm = next(l.perm for l in block.layers if isinstance(l, blk.Shuffle))
    assert np.allclose(blk.equivalent_dense_pointwise(block), g2 @ perm.matrix() @ g1)
    assert np.allclose(compose_dense([block.stage("group1"), perm, block.stage("group2")]),
                       g2 @ perm.matrix() @ g1)
