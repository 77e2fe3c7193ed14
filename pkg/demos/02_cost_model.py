"""Where the parameter savings come from, and how cost scales with width.

Lists every complementary (g1, g2) choice for a 16-channel block with its
parameter count, then applies width multipliers to the MobileNetV2-pattern
reference backbone.
"""
from igcv3.complementary import enumerate_configs
from igcv3.config import reference_network
from igcv3.cost import NetworkSpec, StageSpec, apply_width_multiplier, count_params
from igcv3.blocks import BlockSpec


def block_params(spec):
    return count_params(NetworkSpec(stages=(StageSpec(spec),))).conv_params


print("16 -> 16 channels, expansion 6:")
print("  g1 g2 cs  conv params")
for g1, g2, cs in enumerate_configs(16, 16, 4):
    spec = BlockSpec("IGCV3", 16, 16, expansion=6, g1=g1, g2=g2, cs=cs)
    print(f"  {g1:>2} {g2:>2} {cs:>2}  {block_params(spec):>6}")
print(f"  MNV2 block for comparison: {block_params(BlockSpec('MNV2', 16, 16, expansion=6))}")

ref = reference_network()
base = count_params(ref)
print(f"\nReference backbone at 224x224: {base.params_backbone:,} params, {base.madds / 1e6:.1f}M MAdds")
for alpha in (0.35, 0.5, 0.75, 1.0, 1.4):
    rep = count_params(apply_width_multiplier(ref, alpha))
    print(f"  alpha {alpha:<4}  params {rep.params_backbone:>9,}  MAdds ratio {rep.madds / base.madds:.3f}"
          f"  (alpha^2 = {alpha * alpha:.3f})")
