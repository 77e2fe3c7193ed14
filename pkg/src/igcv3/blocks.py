"""Block recipes (IGCV1/2/3, MobileNet V1/V2) built as explicit layer lists
with forward and analytic backward passes.

A block is a chain of convolutions, each followed by batch normalization,
with ReLUs placed per ``relu_placement`` and interleaving permutations
between group convolutions. Blocks are immutable; parameter and running
statistic updates produce new blocks via :meth:`Block.replace`.
"""
from dataclasses import dataclass, field, replace as dc_replace
from math import gcd

import numpy as np

from . import linalg
from .complementary import (
    block_assignments,
    check_strict,
    loose_condition_holds,
)
from .errors import (
    ComplementarityError,
    ConfigError,
    ContractError,
    ShapeError,
    UnsupportedCompositionError,
)
from .kernels import (
    CHANNELWISE_SPATIAL,
    GROUPED_POINTWISE,
    GROUPED_SPATIAL,
    ComposedKernel,
    KernelStage,
    Permutation,
    compose_dense,
    interleave_permutation,
)

FAMILIES = ("IGCV1", "IGCV2", "IGCV3", "MNV1", "MNV2")
RELU_PLACEMENTS = ("AfterFirstAndMiddle", "AfterMiddle", "AfterLast", "none")
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass(frozen=True)
class BlockSpec:
    """Recipe for one block.

    ``spatial_kernel`` is the kernel side (3 for 3x3, i.e. 9 taps).
    ``expansion`` sets the intermediate width ``expansion * in_channels``
    for IGCV3 and MNV2; the other families keep ``in_channels``. ``cs``
    defaults to ``g1 * g2``. ``inverted=False`` gives the channel-wise-first
    IGCV3 ordering; ``permute=False`` drops the interleaving permutations
    (used to demonstrate the non-dense failure mode).
    """

    family: str
    in_channels: int
    out_channels: int
    expansion: float = 6
    spatial_kernel: int = 3
    stride: int = 1
    g1: int = 1
    g2: int = 1
    cs: int = None
    relu_placement: str = "AfterMiddle"
    skip: bool = False
    inverted: bool = True
    permute: bool = True

    def __post_init__(self):
        if self.cs is None:
            object.__setattr__(self, "cs", self.g1 * self.g2)
        validate_spec(self)

    @property
    def inner_channels(self):
        if self.family in ("IGCV3", "MNV2"):
            return int(round(self.expansion * self.in_channels))
        return self.in_channels

    def replace(self, **changes):
        if ("g1" in changes or "g2" in changes) and "cs" not in changes:
            changes["cs"] = None
        return dc_replace(self, **changes)


def validate_spec(spec):
    def fail(msg):
        raise ConfigError(msg)

    if spec.family not in FAMILIES:
        fail(f"family must be one of {FAMILIES}, got {spec.family!r}")
    if spec.relu_placement not in RELU_PLACEMENTS:
        fail(f"relu_placement must be one of {RELU_PLACEMENTS}, got {spec.relu_placement!r}")
    for name in ("in_channels", "out_channels", "spatial_kernel", "stride", "g1", "g2", "cs"):
        value = getattr(spec, name)
        if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 1:
            fail(f"{name} must be a positive integer, got {value!r}")
    if spec.spatial_kernel % 2 == 0:
        fail("spatial_kernel must be odd")
    if spec.expansion <= 0:
        fail("expansion must be positive")
    if spec.family in ("MNV1", "MNV2") and (spec.g1, spec.g2) != (1, 1):
        fail(f"{spec.family} blocks use dense pointwise convolutions (g1 = g2 = 1)")
    if spec.skip and (spec.stride != 1 or spec.in_channels != spec.out_channels):
        fail("skip needs stride 1 and in_channels == out_channels")
    inner = spec.expansion * spec.in_channels
    if spec.family in ("IGCV3", "MNV2") and abs(inner - round(inner)) > 1e-9:
        fail(f"expansion {spec.expansion} x {spec.in_channels} channels is not an integer width")
    g = spec.g1 * spec.g2
    if spec.family == "IGCV3" and gcd(spec.in_channels, spec.out_channels) % g:
        fail(
            f"g1*g2 = {g} must divide gcd(in_channels, out_channels) = "
            f"{gcd(spec.in_channels, spec.out_channels)}"
        )
    if spec.family in ("IGCV1", "IGCV2"):
        if spec.in_channels % g:
            fail(f"g1*g2 = {g} must divide in_channels = {spec.in_channels}")
        if spec.out_channels % spec.g2:
            fail(f"g2 = {spec.g2} must divide out_channels = {spec.out_channels}")
    inner = spec.inner_channels
    for name in ("g1", "g2", "cs"):
        if inner % getattr(spec, name):
            fail(f"{name} = {getattr(spec, name)} must divide the intermediate width {inner}")


@dataclass(frozen=True)
class Conv:
    name: str
    kind: str
    in_channels: int
    out_channels: int
    groups: int
    side: int = 1
    stride: int = 1

    @property
    def spatial_size(self):
        return self.side * self.side

    @property
    def weight_shape(self):
        return (
            self.groups,
            self.out_channels // self.groups,
            (self.in_channels // self.groups) * self.spatial_size,
        )


@dataclass(frozen=True)
class BatchNorm:
    name: str
    channels: int


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class Shuffle:
    perm: Permutation


@dataclass(frozen=True, eq=False)
class Block:
    spec: BlockSpec
    layers: tuple
    params: dict = field(repr=False)
    bn_state: dict = field(repr=False)
    # (width, g1, permutation or None, g2) for the interleaved conv pair
    pair: tuple = field(default=None, repr=False)

    def replace(self, **changes):
        return dc_replace(self, **changes)

    @property
    def convs(self):
        return [layer for layer in self.layers if isinstance(layer, Conv)]

    def stage(self, name):
        conv = next(c for c in self.convs if c.name == name)
        return KernelStage(
            conv.kind, conv.in_channels, conv.out_channels, conv.groups,
            conv.spatial_size, self.params[name + ".w"],
        )

    def kernel_stages(self):
        """Convolution stages and permutations, in application order."""
        out = []
        for layer in self.layers:
            if isinstance(layer, Conv):
                out.append(self.stage(layer.name))
            elif isinstance(layer, Shuffle):
                out.append(layer.perm)
        return out

    def composed_kernel(self):
        return ComposedKernel(self.kernel_stages())

    def loose_condition(self):
        width, g1, perm, g2 = self.pair
        return loose_condition_holds(width, g1, perm, g2, self.spec.cs)

    def strict_condition(self):
        width, g1, perm, g2 = self.pair
        try:
            _, first, second = block_assignments(width, g1, perm, g2, width)
        except ComplementarityError:
            return False
        return check_strict(first, second)

    def with_identity_batchnorm(self):
        """Eval-mode BN becomes the identity map (scale 1, shift 0, unit std)."""
        params = dict(self.params)
        state = {}
        for layer in self.layers:
            if isinstance(layer, BatchNorm):
                params[layer.name + ".scale"] = np.ones(layer.channels)
                params[layer.name + ".shift"] = np.zeros(layer.channels)
                state[layer.name] = linalg.BatchNormState(
                    np.zeros(layer.channels), np.full(layer.channels, 1.0 - BN_EPS)
                )
        return self.replace(params=params, bn_state=state)


def _relu_after(placement, n_convs):
    if placement == "AfterFirstAndMiddle":
        return set(range(n_convs - 1))
    if placement == "AfterMiddle":
        return {n_convs - 2}
    if placement == "AfterLast":
        return {n_convs - 1}
    return set()


def _conv_plan(spec):
    """Convolutions and permutations of ``spec`` as ("conv", Conv) / ("perm", p)."""
    k, s = spec.spatial_kernel, spec.stride
    c_in, c_out, inner = spec.in_channels, spec.out_channels, spec.inner_channels
    g1, g2 = spec.g1, spec.g2

    def shuffle(before, after, width):
        if not spec.permute:
            return None
        p = interleave_permutation(before, after, width)
        return None if p.is_identity else p

    if spec.family in ("IGCV3", "MNV2"):
        if spec.family == "MNV2":
            g1 = g2 = 1
        p1 = shuffle(g1, g2, inner)
        p2 = shuffle(g2, g1, c_out)
        if spec.inverted:
            plan = [
                ("conv", Conv("expand", GROUPED_POINTWISE, c_in, inner, g1)),
                ("perm", p1),
                ("conv", Conv("depthwise", CHANNELWISE_SPATIAL, inner, inner, inner, k, s)),
                ("conv", Conv("project", GROUPED_POINTWISE, inner, c_out, g2)),
                ("perm", p2),
            ]
        else:
            plan = [
                ("conv", Conv("depthwise", CHANNELWISE_SPATIAL, c_in, c_in, c_in, k, s)),
                ("conv", Conv("reduce", GROUPED_POINTWISE, c_in, inner, g1)),
                ("perm", p1),
                ("conv", Conv("restore", GROUPED_POINTWISE, inner, c_out, g2)),
                ("perm", p2),
            ]
        pair = (inner, g1, p1, g2)
    elif spec.family == "IGCV1":
        p1 = shuffle(g1, g2, c_in)
        p2 = p1.inverse() if (p1 is not None and c_in == c_out) else None
        plan = [
            ("conv", Conv("primary", GROUPED_SPATIAL, c_in, c_in, g1, k, s)),
            ("perm", p1),
            ("conv", Conv("secondary", GROUPED_POINTWISE, c_in, c_out, g2)),
            ("perm", p2),
        ]
        pair = (c_in, g1, p1, g2)
    elif spec.family == "IGCV2":
        p1 = shuffle(g1, g2, c_in)
        plan = [
            ("conv", Conv("depthwise", CHANNELWISE_SPATIAL, c_in, c_in, c_in, k, s)),
            ("conv", Conv("group1", GROUPED_POINTWISE, c_in, c_in, g1)),
            ("perm", p1),
            ("conv", Conv("group2", GROUPED_POINTWISE, c_in, c_out, g2)),
        ]
        pair = (c_in, g1, p1, g2)
    else:  # MNV1
        plan = [
            ("conv", Conv("depthwise", CHANNELWISE_SPATIAL, c_in, c_in, c_in, k, s)),
            ("conv", Conv("pointwise", GROUPED_POINTWISE, c_in, c_out, 1)),
        ]
        pair = (c_in, 1, None, 1)
    return [(kind, item) for kind, item in plan if item is not None], pair


def build(spec, rng=None, check=True):
    """Instantiate ``spec`` with He-normal conv weights and unit/zero BN.

    With ``check=True`` the interleaving permutation is validated by the
    loose complementary condition and a failure raises
    :class:`ComplementarityError`.
    """
    rng = np.random.default_rng() if rng is None else rng
    plan, pair = _conv_plan(spec)
    convs = [item for kind, item in plan if kind == "conv"]
    relu_after = _relu_after(spec.relu_placement, len(convs))

    layers, params, state = [], {}, {}
    n_conv = 0
    for kind, item in plan:
        if kind == "perm":
            layers.append(Shuffle(item))
            continue
        shape = item.weight_shape
        params[item.name + ".w"] = rng.normal(0.0, np.sqrt(2.0 / shape[2]), size=shape)
        bn = BatchNorm(item.name + "_bn", item.out_channels)
        params[bn.name + ".scale"] = np.ones(bn.channels)
        params[bn.name + ".shift"] = np.zeros(bn.channels)
        state[bn.name] = linalg.BatchNormState.initial(bn.channels)
        layers.extend([item, bn])
        if n_conv in relu_after:
            layers.append(ReLU())
        n_conv += 1

    block = Block(spec, tuple(layers), params, state, pair)
    if check and not block.loose_condition():
        width, g1, _, g2 = pair
        first, second = convs[0].name, convs[-1].name
        if spec.family == "IGCV2":
            first = "group1"
        raise ComplementarityError(
            f"{first} (g1={g1}) and {second} (g2={g2}) are not complementary over "
            f"{spec.cs} super-channels of the {width}-channel interleave"
        )
    return block


class ForwardCache:
    def __init__(self, block, mode, x, records, bn_state):
        self.block = block
        self.mode = mode
        self.x_shape = x.shape
        self.records = records
        self.bn_state = bn_state


def forward(block, x, mode="train"):
    """Run ``block`` on the NCHW input ``x``.

    Returns ``(y, cache)``; ``cache.bn_state`` holds the updated running
    statistics (unchanged in eval mode).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4 or x.shape[1] != block.spec.in_channels:
        raise ShapeError(
            f"block expects {block.spec.in_channels} input channels, got shape {x.shape}"
        )
    h = x
    records = []
    new_state = dict(block.bn_state)
    for layer in block.layers:
        if isinstance(layer, Conv):
            w = block.params[layer.name + ".w"].reshape(layer.out_channels, -1)
            h, c = linalg.conv2d_forward(
                h, w, layer.side, layer.side, layer.stride, layer.side // 2, layer.groups
            )
        elif isinstance(layer, BatchNorm):
            h, c, new_state[layer.name] = linalg.batchnorm_forward(
                h,
                block.params[layer.name + ".scale"],
                block.params[layer.name + ".shift"],
                block.bn_state[layer.name],
                mode, BN_EPS, BN_MOMENTUM,
            )
        elif isinstance(layer, ReLU):
            c = h
            h = linalg.relu(h)
        else:
            c = None
            h = layer.perm.apply(h, axis=1)
        records.append(c)
    if block.spec.skip:
        h = h + x
    return h, ForwardCache(block, mode, x, records, new_state)


def backward(block, upstream, cache):
    """Return ``(dx, grads)`` with ``grads`` keyed like ``block.params``."""
    if cache.block is not block:
        raise ContractError("cache was produced by a different block")
    upstream = np.asarray(upstream, dtype=np.float64)
    grads = {}
    d = upstream
    for layer, c in zip(reversed(block.layers), reversed(cache.records)):
        if isinstance(layer, Conv):
            d, dw = linalg.conv2d_backward(d, c)
            grads[layer.name + ".w"] = dw.reshape(layer.weight_shape)
        elif isinstance(layer, BatchNorm):
            d, dscale, dshift = linalg.batchnorm_backward(d, c)
            grads[layer.name + ".scale"] = dscale
            grads[layer.name + ".shift"] = dshift
        elif isinstance(layer, ReLU):
            d = linalg.relu_backward(c, d)
        else:
            d = layer.perm.inverse().apply(d, axis=1)
    if block.spec.skip:
        d = d + upstream
    return d, grads


def equivalent_dense_pointwise(block):
    """Product of the block's pointwise stages and permutations.

    Channel-wise stages are skipped: they only mix spatial taps within a
    channel and commute with channel relabeling.
    """
    chain = []
    for st in block.kernel_stages():
        if isinstance(st, KernelStage) and st.kind == CHANNELWISE_SPATIAL:
            continue
        if isinstance(st, KernelStage) and st.kind == GROUPED_SPATIAL:
            raise UnsupportedCompositionError(
                "grouped spatial stages mix channels across taps and cannot be dropped"
            )
        chain.append(st)
    return compose_dense(ComposedKernel(chain))


def is_linear_pointwise_chain(block):
    """True when no ReLU sits between the first and last convolution."""
    seen_conv = 0
    total = len(block.convs)
    for layer in block.layers:
        if isinstance(layer, Conv):
            seen_conv += 1
        elif isinstance(layer, ReLU) and 0 < seen_conv < total:
            return False
    return True


def structurally_equal(a, b):
    """Same layer list (names, kinds, widths, groups, permutations)."""
    return a.layers == b.layers and set(a.params) == set(b.params) and all(
        a.params[k].shape == b.params[k].shape for k in a.params
    )
