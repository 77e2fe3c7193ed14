"""Parameter and multiply-add accounting for stacked block networks.

Convolution parameters are structural nonzeros (grouped blocks only), each
convolution carries 2 BN parameters per output channel, and the classifier
is reported apart from the backbone. MAdds count convolution weights times
output positions; BN and ReLU cost nothing.
"""
from dataclasses import dataclass, field, replace as dc_replace
from math import gcd

from .blocks import BlockSpec, _conv_plan
from .errors import ConfigError
from .linalg import conv_output_size


@dataclass(frozen=True)
class StemSpec:
    in_channels: int = 3
    out_channels: int = 32
    kernel: int = 3
    stride: int = 2


@dataclass(frozen=True)
class StageSpec:
    block: BlockSpec
    repeats: int = 1

    def __post_init__(self):
        if not isinstance(self.repeats, int) or self.repeats < 1:
            raise ConfigError(f"repeats must be >= 1, got {self.repeats!r}")

    def block_specs(self):
        """First block as given, repeats at stride 1 with identity skips."""
        first = self.block
        rest = first.replace(in_channels=first.out_channels, stride=1, skip=True)
        return [first] + [rest] * (self.repeats - 1)


@dataclass(frozen=True)
class NetworkSpec:
    """Stem conv, stages of repeated blocks, optional classifier of ``head`` classes."""

    stem: StemSpec = None
    stages: tuple = ()
    head: int = None
    input_resolution: tuple = (32, 32)

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        object.__setattr__(self, "input_resolution", tuple(self.input_resolution))
        width = self.stem.out_channels if self.stem else None
        for i, stage in enumerate(self.stages):
            if width is not None and stage.block.in_channels != width:
                raise ConfigError(
                    f"stage {i} expects {stage.block.in_channels} channels but receives {width}"
                )
            width = stage.block.out_channels
        if self.head is not None and self.head < 1:
            raise ConfigError("head must be a positive class count")

    @property
    def in_channels(self):
        if self.stem:
            return self.stem.in_channels
        return self.stages[0].block.in_channels if self.stages else None

    @property
    def out_channels(self):
        if self.stages:
            return self.stages[-1].block.out_channels
        return self.stem.out_channels if self.stem else None

    def block_specs(self):
        return [spec for stage in self.stages for spec in stage.block_specs()]

    def num_blocks(self):
        return sum(stage.repeats for stage in self.stages)

    def replace(self, **changes):
        return dc_replace(self, **changes)


@dataclass(frozen=True)
class LayerCost:
    name: str
    conv_params: int
    bn_params: int
    madds: int

    @property
    def params(self):
        return self.conv_params + self.bn_params


@dataclass(frozen=True)
class CostReport:
    params_backbone: int
    params_classifier: int
    madds: int
    madds_classifier: int = 0
    breakdown: tuple = field(default=(), repr=False)

    @property
    def conv_params(self):
        return sum(row.conv_params for row in self.breakdown)


def _block_cost(name, spec, resolution):
    h, w = resolution
    conv_params = bn_params = madds = 0
    plan, _ = _conv_plan(spec)
    for kind, conv in plan:
        if kind != "conv":
            continue
        h = conv_output_size(h, conv.side, conv.stride, conv.side // 2)
        w = conv_output_size(w, conv.side, conv.stride, conv.side // 2)
        p = conv.out_channels * (conv.in_channels // conv.groups) * conv.spatial_size
        conv_params += p
        bn_params += 2 * conv.out_channels
        madds += p * h * w
    return LayerCost(name, conv_params, bn_params, madds), (h, w)


def count_params(net):
    """Full :class:`CostReport` for ``net`` (parameters and MAdds)."""
    rows = []
    res = net.input_resolution
    if net.stem:
        s = net.stem
        h = conv_output_size(res[0], s.kernel, s.stride, s.kernel // 2)
        w = conv_output_size(res[1], s.kernel, s.stride, s.kernel // 2)
        p = s.out_channels * s.in_channels * s.kernel * s.kernel
        rows.append(LayerCost("stem", p, 2 * s.out_channels, p * h * w))
        res = (h, w)
    for i, stage in enumerate(net.stages):
        for j, spec in enumerate(stage.block_specs()):
            row, res = _block_cost(f"stage{i}.block{j}", spec, res)
            rows.append(row)
    classifier = madds_cls = 0
    if net.head:
        classifier = net.out_channels * net.head + net.head
        madds_cls = net.out_channels * net.head
    return CostReport(
        params_backbone=sum(r.params for r in rows),
        params_classifier=classifier,
        madds=sum(r.madds for r in rows) + madds_cls,
        madds_classifier=madds_cls,
        breakdown=tuple(rows),
    )


def count_madds(net):
    return count_params(net).madds


def _width_divisors(family, g1, g2):
    """(divisor for input width, divisor for output width) of one block."""
    if family == "IGCV3":
        return g1 * g2, g1 * g2
    if family in ("IGCV1", "IGCV2"):
        return g1 * g2, g2
    return 1, 1


def _lcm(a, b):
    return a * b // gcd(a, b)


def _nearest_multiples(target, divisor):
    """Positive multiples of ``divisor`` by distance to ``target``, ties upward."""
    base = int(target // divisor)
    below, above = base * divisor, (base + 1) * divisor
    lo, hi = below, above
    out = []
    while len(out) < 64:
        if lo > 0 and (target - lo) < (hi - target):
            out.append(lo)
            lo -= divisor
        else:
            out.append(hi)
            hi += divisor
    return out


def _rewidth(net, alpha, family=None, g1=None, g2=None):
    """Scale every channel width by ``alpha`` and optionally regroup blocks."""
    if alpha <= 0:
        raise ConfigError("alpha must be positive")
    recipes = []
    for stage in net.stages:
        b = stage.block
        fam = family or b.family
        gg1 = g1 if g1 is not None else b.g1
        gg2 = g2 if g2 is not None else b.g2
        if fam in ("MNV1", "MNV2"):
            gg1 = gg2 = 1
        recipes.append((stage, fam, gg1, gg2))

    # widths[0] is the stem/input width, widths[i + 1] the output of stage i
    widths = [net.stages[0].block.in_channels] if net.stages else []
    widths += [stage.block.out_channels for stage in net.stages]
    divisors = [1] * len(widths)
    for i, (stage, fam, gg1, gg2) in enumerate(recipes):
        d_in, d_out = _width_divisors(fam, gg1, gg2)
        divisors[i] = _lcm(divisors[i], d_in)
        divisors[i + 1] = _lcm(divisors[i + 1], d_out)
        if stage.repeats > 1:
            divisors[i + 1] = _lcm(divisors[i + 1], d_in)

    scaled = []
    for w, d in zip(widths, divisors):
        if w * alpha / d < 0.5:
            raise ConfigError(f"width {w} x {alpha} collapses to 0 (divisor {d})")
        scaled.append(_nearest_multiples(w * alpha, d))

    def make_stage(i, cin, cout):
        stage, fam, gg1, gg2 = recipes[i]
        block = dc_replace(
            stage.block, family=fam, in_channels=cin, out_channels=cout,
            g1=gg1, g2=gg2, cs=gg1 * gg2, skip=stage.block.skip and cin == cout,
        )
        return StageSpec(block, stage.repeats)

    chosen = [cands[0] for cands in scaled]
    stages = []
    for i in range(len(recipes)):
        for cout in scaled[i + 1]:
            try:
                st = make_stage(i, chosen[i], cout)
                st.block_specs()
            except ConfigError:
                continue
            chosen[i + 1] = cout
            stages.append(st)
            break
        else:
            raise ConfigError(f"no valid width near {widths[i + 1] * alpha:.1f} for stage {i}")

    stem = net.stem
    if stem is not None and widths:
        stem = dc_replace(stem, out_channels=chosen[0])
    return net.replace(stem=stem, stages=tuple(stages))


def apply_width_multiplier(net, alpha):
    """Scale all channel widths by ``alpha``, rounding each to the nearest
    multiple (ties upward) that keeps every block's group divisibility."""
    if alpha == 1:
        return net
    return _rewidth(net, alpha)


def _within(params, target, tol):
    return abs(params - target) <= tol * target


def build_igcv3_network(variant, base, tolerance=0.05, g_deeper=2, g_wider=4):
    """IGCV3 counterpart of an MNV2-style ``base`` at a matched parameter budget.

    ``"deeper"`` keeps the widths, uses ``g1 = g2 = 2`` and adds block repeats
    (to the stage with the lowest repeat growth first) until the backbone
    parameters land within ``tolerance`` of ``base``. ``"wider"`` keeps the
    repeats, uses ``g1 = g2 = 4`` and scales all widths up.
    """
    target = count_params(base).params_backbone
    if variant == "deeper":
        net = _rewidth(base, 1.0, family="IGCV3", g1=g_deeper, g2=g_deeper)
        base_reps = [s.repeats for s in net.stages]
        reps = list(base_reps)

        def with_reps(r):
            return net.replace(stages=tuple(StageSpec(s.block, n) for s, n in zip(net.stages, r)))

        nearest = []
        while True:
            params = count_params(with_reps(reps)).params_backbone
            if _within(params, target, tolerance):
                return with_reps(reps)
            if params > target * (1 + tolerance):
                break
            order = sorted(range(len(reps)), key=lambda i: (reps[i] / base_reps[i], i))
            for i in order:
                trial = reps.copy()
                trial[i] += 1
                p = count_params(with_reps(trial)).params_backbone
                nearest.append((p, tuple(trial)))
                if p <= target * (1 + tolerance):
                    reps = trial
                    break
            else:
                break
        pts = sorted(nearest, key=lambda t: abs(t[0] - target))[:3]
        raise ConfigError(
            f"no repeat pattern within {tolerance:.0%} of {target} params; nearest: "
            + ", ".join(f"{r} -> {p}" for p, r in pts)
        )
    if variant == "wider":
        best = None
        tried = []
        for step in range(0, 301):
            alpha = 1.0 + step / 100
            try:
                net = _rewidth(base, alpha, family="IGCV3", g1=g_wider, g2=g_wider)
            except ConfigError:
                continue
            params = count_params(net).params_backbone
            tried.append((params, alpha))
            if _within(params, target, tolerance):
                if best is None or abs(params - target) < abs(best[0] - target):
                    best = (params, net)
            elif params > target * (1 + tolerance):
                break
        if best is None:
            pts = sorted(tried, key=lambda t: abs(t[0] - target))[:3]
            raise ConfigError(
                f"no width scaling within {tolerance:.0%} of {target} params; nearest: "
                + ", ".join(f"x{a:.2f} -> {p}" for p, a in pts)
            )
        return best[1]
    raise ConfigError(f"variant must be 'deeper' or 'wider', got {variant!r}")
