"""Command-line entry point: ``igcv3 <command> ...``.

Exit codes: 0 success, 1 semantic failure (a block fails the density check,
training diverges, a dense export is impossible), 2 usage or config errors.

Export formats:

* support: one line per output channel, one ``0``/``1`` character per
  input channel, no separators.
* dense: comma-separated rows, values printed with ``%.17g``. The matrix is
  the product of the block's pointwise weights and permutations; BN is not
  folded in.
* config: the network section re-serialized as YAML.
"""
import argparse
import csv
import io
import sys

import numpy as np

from . import blocks as blk
from .complementary import enumerate_configs, support_density, verify_dense
from .config import Config, DatasetConfig, dump_config, load_config
from .cost import apply_width_multiplier, count_params, _block_cost
from .errors import ConfigError, TrainingError, UnsupportedCompositionError
from .kernels import compose_support
from .network import build_network
from .trainer import TrainConfig, make_toy_dataset, train


class UsageError(Exception):
    pass


def _load(path):
    try:
        return load_config(path)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from exc
    except ConfigError as exc:
        raise UsageError(f"{path}: {exc}") from exc


def _block_names(spec):
    return [f"stage{i}.block{j}" for i, st in enumerate(spec.stages) for j in range(st.repeats)]


def _build_blocks(spec, seed):
    rng = np.random.default_rng(seed)
    return [blk.build(b, rng, check=False) for b in spec.block_specs()]


def _write(text, out):
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        with open(out, "w", newline="") as fh:
            fh.write(text)


def _fmt_bool(value):
    return "n/a" if value is None else ("yes" if value else "no")


def cmd_verify(args):
    cfg = _load(args.config)
    if cfg.network.num_blocks() == 0:
        raise UsageError(f"{args.config}: no blocks to verify")
    rows, ok = [], True
    for name, block in zip(_block_names(cfg.network), _build_blocks(cfg.network, args.seed)):
        grouped = block.spec.family not in ("MNV1", "MNV2")
        loose = block.loose_condition() if grouped else None
        strict = block.strict_condition() if grouped else None
        kernel = block.composed_kernel()
        dense = verify_dense(kernel)
        ok &= dense
        rows.append((name, block.spec.family, _fmt_bool(loose), _fmt_bool(strict),
                     f"{support_density(kernel):.6f}", "PASS" if dense else "FAIL"))
    header = ("block", "family", "loose", "strict", "density", "result")
    widths = [max(len(r[i]) for r in rows + [header]) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in [header] + rows]
    lines.append(f"{sum(r[-1] == 'PASS' for r in rows)}/{len(rows)} blocks dense")
    print("\n".join(lines))
    return 0 if ok else 1


def cmd_cost(args):
    cfg = _load(args.config)
    net = cfg.network
    if args.classes is not None:
        net = net.replace(head=args.classes)
    try:
        net = apply_width_multiplier(net, args.alpha)
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    rep = count_params(net)
    rows = [(r.name, r.conv_params, r.bn_params, r.params, r.madds) for r in rep.breakdown]
    rows.append(("backbone", rep.conv_params, rep.params_backbone - rep.conv_params,
                 rep.params_backbone, rep.madds - rep.madds_classifier))
    rows.append(("classifier", rep.params_classifier, 0, rep.params_classifier,
                 rep.madds_classifier))
    rows.append(("total", rep.conv_params + rep.params_classifier,
                 rep.params_backbone - rep.conv_params,
                 rep.params_backbone + rep.params_classifier, rep.madds))
    header = ("layer", "conv_params", "bn_params", "params", "madds")
    if args.csv:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        sys.stdout.write(buf.getvalue())
        return 0
    table = [header] + [tuple(str(c) for c in r) for r in rows]
    widths = [max(len(r[i]) for r in table) for i in range(len(header))]
    for r in table:
        print("  ".join([r[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(r[1:], widths[1:])]))
    return 0


def cmd_enumerate(args):
    if min(args.in_channels, args.out_channels, args.max_groups) < 1:
        raise UsageError("--in, --out and --max-groups must be positive")
    print(f"g1  g2  cs  conv_params  (IGCV3, {args.in_channels}->{args.out_channels}, "
          f"expansion {args.expansion:g})")
    for g1, g2, cs in enumerate_configs(args.in_channels, args.out_channels, args.max_groups):
        try:
            spec = blk.BlockSpec("IGCV3", args.in_channels, args.out_channels,
                                 expansion=args.expansion, g1=g1, g2=g2, cs=cs)
            params = str(_block_cost("b", spec, (1, 1))[0].conv_params)
        except ConfigError:
            params = "-"
        print(f"{g1:<3} {g2:<3} {cs:<3} {params}")
    return 0


def _toy_setup(cfg, seed):
    train_cfg = cfg.train or TrainConfig()
    data = cfg.dataset or DatasetConfig(num_classes=cfg.network.head or 4)
    if seed is not None:
        train_cfg = TrainConfig(**{**train_cfg.__dict__, "seed": seed})
        data = DatasetConfig(**{**data.__dict__, "seed": seed})
    return train_cfg, data


def cmd_train_toy(args):
    cfg = _load(args.config)
    if cfg.train is None:
        raise UsageError(f"{args.config}: a 'train' section is required")
    if not cfg.network.head:
        raise UsageError(f"{args.config}: network.head (class count) is required")
    train_cfg, data = _toy_setup(cfg, args.seed)
    res = cfg.network.input_resolution
    channels = cfg.network.in_channels
    tr = make_toy_dataset(data.num_classes, data.per_class, res, data.seed, channels,
                          data.noise, data.xor)
    ev = None
    if data.eval_per_class:
        ev = make_toy_dataset(data.num_classes, data.eval_per_class, res, data.seed, channels,
                              data.noise, data.xor, sample_seed=data.seed + 10_007)
    net = build_network(cfg.network, np.random.default_rng(train_cfg.seed))

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("epoch", "lr", "train_loss", "train_acc", "eval_acc"))

    def log(rec):
        w.writerow((rec["epoch"],) + tuple(
            "%.17g" % rec[k] for k in ("lr", "train_loss", "train_acc", "eval_acc")))

    status = 0
    try:
        _, history = train(net, tr, train_cfg, ev, on_epoch=log)
        last = history[-1] if history else None
        if last is None:
            print("trained 0 epochs", file=sys.stderr)
        else:
            print(f"final epoch {last['epoch']}: train_acc={last['train_acc']:.4f} "
                  f"eval_acc={last['eval_acc']:.4f} train_loss={last['train_loss']:.6f}",
                  file=sys.stderr)
    except TrainingError as exc:
        print(f"diverged at epoch {exc.epoch}: {exc}", file=sys.stderr)
        status = 1
    _write(buf.getvalue(), args.out)
    return status


def cmd_export(args):
    cfg = _load(args.config)
    if args.what == "config":
        _write(dump_config(Config(cfg.network)), args.out)
        return 0
    blocks = _build_blocks(cfg.network, args.seed)
    if not blocks:
        raise UsageError(f"{args.config}: no blocks to export")
    if not 0 <= args.block < len(blocks):
        raise UsageError(f"--block must lie in [0, {len(blocks) - 1}]")
    block = blocks[args.block]
    if args.what == "support":
        grid = compose_support(block.composed_kernel())
        text = "".join("".join("1" if v else "0" for v in row) + "\n" for row in grid)
    else:
        if not blk.is_linear_pointwise_chain(block):
            print(f"block {args.block} has a ReLU between its convolutions "
                  f"(relu_placement={block.spec.relu_placement}); the composed kernel is "
                  "only a single matrix for linear blocks (use relu_placement AfterLast "
                  "or none)", file=sys.stderr)
            return 1
        try:
            dense = blk.equivalent_dense_pointwise(block)
        except UnsupportedCompositionError as exc:
            print(f"block {args.block}: {exc}", file=sys.stderr)
            return 1
        text = "".join(",".join("%.17g" % v for v in row) + "\n" for row in dense)
    _write(text, args.out)
    return 0


def make_parser():
    p = argparse.ArgumentParser(prog="igcv3", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", help="check complementarity and density of every block")
    v.add_argument("config")
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify)

    c = sub.add_parser("cost", help="parameter and MAdd report")
    c.add_argument("config")
    c.add_argument("--alpha", type=float, default=1.0, help="width multiplier")
    c.add_argument("--classes", type=int, default=None, help="override classifier classes")
    c.add_argument("--csv", action="store_true", help="machine-readable output")
    c.set_defaults(func=cmd_cost)

    e = sub.add_parser("enumerate", help="list complementary (g1, g2, cs) choices")
    e.add_argument("--in", dest="in_channels", type=int, required=True)
    e.add_argument("--out", dest="out_channels", type=int, required=True)
    e.add_argument("--max-groups", type=int, required=True)
    e.add_argument("--expansion", type=float, default=6.0)
    e.set_defaults(func=cmd_enumerate)

    t = sub.add_parser("train-toy", help="train on the synthetic dataset, CSV per epoch")
    t.add_argument("config")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--out", default=None, help="CSV path (default stdout)")
    t.set_defaults(func=cmd_train_toy)

    x = sub.add_parser("export", help="write a block's composed support or dense kernel")
    x.add_argument("config")
    x.add_argument("--what", choices=("support", "dense", "config"), default="support")
    x.add_argument("--block", type=int, default=0, help="block index across all stages")
    x.add_argument("--seed", type=int, default=0)
    x.add_argument("--out", default=None, help="output path (default stdout)")
    x.set_defaults(func=cmd_export)
    return p


def main(argv=None):
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
