"""Spending an MNV2 parameter budget on IGCV3 blocks: deeper or wider.

The deeper variant keeps widths and adds blocks (g1 = g2 = 2); the wider
variant keeps depth and widens every stage (g1 = g2 = 4).
"""
from igcv3.config import reference_network
from igcv3.cost import build_igcv3_network, count_params

ref = reference_network()
rows = [("MNV2 reference", ref)]
rows += [(f"IGCV3 {v}", build_igcv3_network(v, ref)) for v in ("deeper", "wider")]
print(f"{'network':<16} {'blocks':>6} {'params':>10} {'MAdds':>8}  widths")
for name, net in rows:
    rep = count_params(net)
    widths = [s.block.out_channels for s in net.stages]
    print(f"{name:<16} {net.num_blocks():>6} {rep.params_backbone:>10,} {rep.madds / 1e6:>7.1f}M  {widths}")
deeper = rows[1][1]
print("\nrepeats per stage, MNV2 vs deeper:",
      [s.repeats for s in ref.stages], "->", [s.repeats for s in deeper.stages])
