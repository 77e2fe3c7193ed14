"""Structured-sparse kernel factors and their composition.

A :class:`KernelStage` stores only the dense per-group blocks of a grouped
(block-diagonal) or channel-wise weight; zeros between groups are implicit
and appear only on :func:`materialize`. A :class:`ComposedKernel` is an
ordered chain of stages and :class:`Permutation` objects, listed in the
order they are applied to the input.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError, UnsupportedCompositionError

GROUPED_POINTWISE = "grouped-pointwise"
GROUPED_SPATIAL = "grouped-spatial"
CHANNELWISE_SPATIAL = "channelwise-spatial"
STAGE_KINDS = (GROUPED_POINTWISE, GROUPED_SPATIAL, CHANNELWISE_SPATIAL)


@dataclass(frozen=True, eq=False)
class KernelStage:
    """One factor of a composed kernel.

    ``blocks`` has shape ``(groups, out_channels // groups,
    (in_channels // groups) * spatial_size)``. ``spatial_size`` is the number
    of taps (9 for a 3x3 kernel) and is 1 for pointwise stages.
    """

    kind: str
    in_channels: int
    out_channels: int
    groups: int
    spatial_size: int
    blocks: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.kind not in STAGE_KINDS:
            raise ConfigError(f"unknown stage kind {self.kind!r}")
        if self.groups < 1:
            raise ConfigError("groups must be >= 1")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ConfigError(
                f"{self.in_channels}->{self.out_channels} channels not divisible by "
                f"{self.groups} groups"
            )
        if self.kind == GROUPED_POINTWISE and self.spatial_size != 1:
            raise ConfigError("pointwise stages have spatial_size 1")
        if self.kind == CHANNELWISE_SPATIAL and not (
            self.groups == self.in_channels == self.out_channels
        ):
            raise ConfigError("channel-wise stages need groups == in_channels == out_channels")
        blocks = np.array(self.blocks, dtype=np.float64)
        if blocks.shape != self.block_shape:
            raise ShapeError(f"blocks have shape {blocks.shape}, expected {self.block_shape}")
        blocks.setflags(write=False)
        object.__setattr__(self, "blocks", blocks)

    @property
    def block_shape(self):
        return (
            self.groups,
            self.out_channels // self.groups,
            (self.in_channels // self.groups) * self.spatial_size,
        )

    @property
    def is_pointwise(self):
        return self.kind == GROUPED_POINTWISE

    @property
    def kernel_side(self):
        side = int(round(self.spatial_size ** 0.5))
        if side * side != self.spatial_size:
            raise ConfigError(f"spatial_size {self.spatial_size} is not a square kernel")
        return side

    def weight_matrix(self):
        """Blocks stacked row-wise, the layout :func:`conv2d` expects."""
        return self.blocks.reshape(self.out_channels, -1)

    def with_blocks(self, blocks):
        return KernelStage(
            self.kind, self.in_channels, self.out_channels, self.groups, self.spatial_size, blocks
        )


def make_stage(kind, in_channels, out_channels, groups=1, spatial_size=1, rng=None, init="he"):
    """Build a stage with random (``init="he"``), all-one or all-zero blocks."""
    if kind == CHANNELWISE_SPATIAL:
        groups = in_channels
    if groups < 1 or in_channels % groups or out_channels % groups:
        raise ConfigError(
            f"{in_channels}->{out_channels} channels not divisible by {groups} groups"
        )
    shape = (groups, out_channels // groups, (in_channels // groups) * spatial_size)
    if init == "he":
        rng = np.random.default_rng() if rng is None else rng
        blocks = rng.normal(0.0, np.sqrt(2.0 / shape[2]), size=shape)
    elif init == "ones":
        blocks = np.ones(shape)
    elif init == "zeros":
        blocks = np.zeros(shape)
    else:
        raise ValueError(f"unknown init {init!r}")
    return KernelStage(kind, in_channels, out_channels, groups, spatial_size, blocks)


@dataclass(frozen=True, eq=False)
class Permutation:
    """Channel reindexing: source channel ``i`` moves to ``indices[i]``."""

    indices: np.ndarray

    def __post_init__(self):
        idx = np.array(self.indices, dtype=np.intp).ravel()
        if not np.array_equal(np.sort(idx), np.arange(idx.size)):
            raise ConfigError("permutation indices are not a bijection")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    def __eq__(self, other):
        return isinstance(other, Permutation) and np.array_equal(self.indices, other.indices)

    def __hash__(self):
        return hash(self.indices.tobytes())

    @property
    def size(self):
        return self.indices.size

    @property
    def is_identity(self):
        return bool(np.array_equal(self.indices, np.arange(self.size)))

    def inverse(self):
        inv = np.empty_like(self.indices)
        inv[self.indices] = np.arange(self.size)
        return Permutation(inv)

    def matrix(self):
        m = np.zeros((self.size, self.size))
        m[self.indices, np.arange(self.size)] = 1.0
        return m

    def apply(self, x, axis=1):
        """Move entry ``i`` along ``axis`` to position ``indices[i]``."""
        x = np.asarray(x)
        if x.shape[axis] != self.size:
            raise ShapeError(f"permutation of size {self.size} applied to axis of {x.shape[axis]}")
        return np.take(x, self.inverse().indices, axis=axis)


def identity_permutation(size):
    return Permutation(np.arange(size))


def interleave_permutation(groups_before, groups_after, channels):
    """Channel-shuffle permutation between two group convolutions.

    Channel ``g * M + m`` (branch ``g`` of the earlier convolution,
    ``M = channels // groups_before``) moves to ``m * groups_before + g``, so
    each contiguous branch of the later convolution receives
    ``channels // (groups_before * groups_after)`` channels from every
    earlier branch.
    """
    if groups_before < 1 or groups_after < 1 or channels % (groups_before * groups_after):
        raise ConfigError(
            f"{channels} channels not divisible by {groups_before} x {groups_after} groups"
        )
    per = channels // groups_before
    g, m = np.divmod(np.arange(channels), per)
    return Permutation(m * groups_before + g)


class ComposedKernel:
    """Chain of stages and permutations applied left to right."""

    def __init__(self, stages):
        stages = tuple(stages)
        if not stages:
            raise ShapeError("a composed kernel needs at least one stage")
        width = None
        for pos, st in enumerate(stages):
            if isinstance(st, Permutation):
                n_in = n_out = st.size
            elif isinstance(st, KernelStage):
                n_in, n_out = st.in_channels, st.out_channels
            else:
                raise TypeError(f"stage {pos} is a {type(st).__name__}")
            if width is not None and n_in != width:
                raise ShapeError(f"stage {pos} expects {n_in} channels but receives {width}")
            if width is None:
                self.in_channels = n_in
            width = n_out
        self.out_channels = width
        self.stages = stages

    def __len__(self):
        return len(self.stages)

    def __repr__(self):
        return f"ComposedKernel({self.in_channels}->{self.out_channels}, {len(self.stages)} stages)"


def materialize(stage):
    """Dense block-diagonal matrix ``(out, in * spatial_size)``."""
    g, rows, cols = stage.block_shape
    dense = np.zeros((stage.out_channels, stage.in_channels * stage.spatial_size))
    for i in range(g):
        dense[i * rows:(i + 1) * rows, i * cols:(i + 1) * cols] = stage.blocks[i]
    return dense


def stage_connectivity(stage):
    """Boolean ``(out, in)`` channel connectivity, spatial taps collapsed."""
    if isinstance(stage, Permutation):
        return stage.matrix().astype(bool)
    if stage.kind == CHANNELWISE_SPATIAL:
        return np.eye(stage.in_channels, dtype=bool)
    g, rows, _ = stage.block_shape
    per_in = stage.in_channels // stage.groups
    return np.kron(np.eye(g, dtype=bool), np.ones((rows, per_in), dtype=bool))


def compose_support(kernel):
    """Entry ``(o, i)`` is true iff output ``o`` has a path to input ``i``."""
    if not isinstance(kernel, ComposedKernel):
        kernel = ComposedKernel(kernel)
    support = np.eye(kernel.in_channels, dtype=np.int64)
    for st in kernel.stages:
        support = (stage_connectivity(st).astype(np.int64) @ support > 0).astype(np.int64)
    return support.astype(bool)


def compose_dense(kernel):
    """Numeric product ``P_L W_L ... P_1 W_1`` of a pointwise chain."""
    if not isinstance(kernel, ComposedKernel):
        kernel = ComposedKernel(kernel)
    out = np.eye(kernel.in_channels)
    for pos, st in enumerate(kernel.stages):
        if isinstance(st, Permutation):
            out = st.apply(out, axis=0)
        elif st.is_pointwise:
            out = materialize(st) @ out
        else:
            raise UnsupportedCompositionError(
                f"stage {pos} is {st.kind}; only pointwise stages collapse to one matrix"
            )
    return out


def param_count(stage):
    """Number of structurally nonzero weights of ``stage``."""
    return stage.out_channels * (stage.in_channels // stage.groups) * stage.spatial_size
