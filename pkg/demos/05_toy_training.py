"""Train the 4-block IGCV3-D toy net and a parameter-matched MNV2 net.

The task is a sign-ambiguous pattern classification on 8x8 images: each
class is a channel direction times a blob, multiplied by a random sign,
so class means are zero and a linear readout of pixels fails.
"""
import numpy as np

from igcv3.config import bundled_config, parse_config
from igcv3.cost import count_params
from igcv3.network import build_network
from igcv3.trainer import make_toy_dataset, train

for name in ("toy_igcv3_d.yaml", "toy_mnv2.yaml"):
    cfg = parse_config(bundled_config(name))
    d = cfg.dataset
    tr = make_toy_dataset(d.num_classes, d.per_class, (8, 8), d.seed, noise=d.noise, xor=d.xor)
    ev = make_toy_dataset(d.num_classes, d.eval_per_class, (8, 8), d.seed, noise=d.noise,
                          xor=d.xor, sample_seed=d.seed + 10_007)
    net = build_network(cfg.network, np.random.default_rng(cfg.train.seed))
    _, hist = train(net, tr, cfg.train, ev)
    params = count_params(cfg.network).params_backbone
    print(f"{name:<18} {params} backbone params")
    for h in hist[::10] + [hist[-1]]:
        print(f"  epoch {h['epoch']:>2}  lr {h['lr']:<7g} loss {h['train_loss']:.4f}  "
              f"train {h['train_acc']:.3f}  held-out {h['eval_acc']:.3f}")
