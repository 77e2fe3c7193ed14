"""Super-channels and the complementary conditions between two group
convolutions.

Both checkers take one :class:`BranchAssignment` per group convolution,
listing which branch each unit (channel or super-channel) belongs to on
either side of the interleaving permutation.
"""
from dataclasses import dataclass
from math import gcd

import numpy as np

from .errors import ComplementarityError, ConfigError
from .kernels import ComposedKernel, compose_support, interleave_permutation


@dataclass(frozen=True)
class SuperChannelPartition:
    """``total_channels`` split into ``num_super`` contiguous runs."""

    total_channels: int
    num_super: int

    def __post_init__(self):
        if self.num_super < 1 or self.total_channels % self.num_super:
            raise ConfigError(
                f"{self.total_channels} channels cannot form {self.num_super} equal super-channels"
            )

    @property
    def size(self):
        return self.total_channels // self.num_super

    @property
    def assignment(self):
        return np.arange(self.total_channels) // self.size


@dataclass(frozen=True)
class BranchAssignment:
    num_branches: int
    branches: tuple

    def __post_init__(self):
        branches = tuple(int(b) for b in self.branches)
        object.__setattr__(self, "branches", branches)
        if self.num_branches < 1:
            raise ConfigError("num_branches must be >= 1")
        if any(b < 0 or b >= self.num_branches for b in branches):
            raise ConfigError(f"branch ids must lie in 0..{self.num_branches - 1}")
        counts = np.bincount(branches, minlength=self.num_branches)
        if len(set(counts.tolist())) != 1:
            raise ConfigError(f"unbalanced branches: sizes {counts.tolist()}")

    def __len__(self):
        return len(self.branches)

    def members(self, branch):
        return [i for i, b in enumerate(self.branches) if b == branch]


def contiguous_assignment(units, num_branches):
    if num_branches < 1 or units % num_branches:
        raise ConfigError(f"{units} units cannot form {num_branches} equal branches")
    return BranchAssignment(num_branches, tuple(np.arange(units) // (units // num_branches)))


def _one_way(a, b):
    everything = set(range(b.num_branches))
    for branch in range(a.num_branches):
        landed = [b.branches[i] for i in a.members(branch)]
        if len(set(landed)) != len(landed) or set(landed) != everything:
            return False
    return True


def check_strict(first, second):
    """Units sharing a branch on one side occupy distinct branches and
    cover every branch on the other side, in both directions."""
    if len(first) != len(second):
        raise ConfigError(f"assignments cover {len(first)} and {len(second)} units")
    return _one_way(first, second) and _one_way(second, first)


def check_loose(partition, first, second):
    """The strict predicate evaluated over the super-channels of ``partition``."""
    for name, a in (("first", first), ("second", second)):
        if len(a) != partition.num_super:
            raise ConfigError(
                f"{name} assignment covers {len(a)} units, partition has {partition.num_super}"
            )
    return check_strict(first, second)


def _units_of(channel_branch, partition):
    """Per-super-channel branch id, or None when a super-channel straddles branches."""
    ids = np.asarray(channel_branch).reshape(partition.num_super, partition.size)
    if np.any(ids != ids[:, :1]):
        return None
    return ids[:, 0]


def block_assignments(channels, groups_first, permutation, groups_second, num_super):
    """Super-channel branch assignments on both sides of ``permutation``.

    ``channels`` is the width shared by the two group convolutions; units are
    super-channels of the first convolution's output, followed through
    ``permutation`` (``None`` means identity) into the second's input.
    Raises :class:`ComplementarityError` when a super-channel is split
    across branches.
    """
    partition = SuperChannelPartition(channels, num_super)
    if channels % groups_first or channels % groups_second:
        raise ConfigError(
            f"{channels} channels not divisible by groups {groups_first} and {groups_second}"
        )
    before = np.arange(channels) // (channels // groups_first)
    target = np.arange(channels) if permutation is None else permutation.indices
    after = target // (channels // groups_second)
    first_ids = _units_of(before, partition)
    second_ids = _units_of(after, partition)
    if first_ids is None or second_ids is None:
        raise ComplementarityError(
            f"super-channels of {partition.size} channels straddle branch boundaries"
        )
    try:
        first = BranchAssignment(groups_first, tuple(first_ids))
        second = BranchAssignment(groups_second, tuple(second_ids))
    except ConfigError as exc:
        raise ComplementarityError(str(exc)) from exc
    return partition, first, second


def loose_condition_holds(channels, groups_first, permutation, groups_second, num_super):
    try:
        partition, first, second = block_assignments(
            channels, groups_first, permutation, groups_second, num_super
        )
    except ComplementarityError:
        return False
    return check_loose(partition, first, second)


def support_density(kernel):
    return float(compose_support(kernel).mean())


def verify_dense(kernel):
    """True iff every output channel reaches every input channel."""
    if not isinstance(kernel, ComposedKernel):
        kernel = ComposedKernel(kernel)
    return bool(compose_support(kernel).all())


def enumerate_configs(in_channels, out_channels, max_groups):
    """All ``(g1, g2, cs)`` with ``g1 * g2`` dividing both widths.

    Each candidate uses ``cs = g1 * g2`` super-channels and is kept only if
    the interleaved assignment passes :func:`check_loose`. Sorted by
    ``(g1 * g2, g1)``.
    """
    common = gcd(in_channels, out_channels)
    found = []
    for g1 in range(1, max_groups + 1):
        for g2 in range(1, max_groups + 1):
            cs = g1 * g2
            if common % cs:
                continue
            perm = interleave_permutation(g1, g2, cs)
            if loose_condition_holds(cs, g1, perm, g2, cs):
                found.append((g1, g2, cs))
    return sorted(found, key=lambda t: (t[0] * t[1], t[0]))
