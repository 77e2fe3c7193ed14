"""YAML config files describing a network, its training run and its toy data.

Schema (keys mirror the dataclass fields)::

    network:
      input_resolution: [8, 8]
      stem: {in_channels: 3, out_channels: 16, kernel: 3, stride: 1}   # optional
      head: 4                                                           # classes, optional
      stages:
        - repeats: 4
          block: {family: IGCV3, in_channels: 16, out_channels: 16, expansion: 3,
                  spatial_kernel: 3, stride: 1, g1: 2, g2: 2, cs: 4,
                  relu_placement: AfterMiddle, skip: true, inverted: true, permute: true}
    train:                                                              # optional
      lr0: 0.1
      momentum: 0.9
      weight_decay: 0.0001
      schedule: {type: step, milestones: [30, 45, 52], factor: 10}      # or
      # schedule: {type: exponential, gamma: 0.98, interval: 1}
      epochs: 60
      batch_size: 32
      seed: 0
      shuffle: true
    dataset:                                                            # optional
      num_classes: 4
      per_class: 16
      eval_per_class: 16
      noise: 0.5
      xor: true
      seed: 0
"""
from dataclasses import dataclass, fields
from importlib import resources

import yaml

from .blocks import BlockSpec
from .cost import NetworkSpec, StageSpec, StemSpec
from .errors import ConfigError
from .trainer import ExponentialDecay, StepDecay, TrainConfig


class ConfigParseError(ConfigError):
    def __init__(self, message, path=(), line=None):
        where = ".".join(str(p) if isinstance(p, str) else f"[{p}]" for p in path)
        where = where.replace(".[", "[")
        prefix = where or "<root>"
        if line is not None:
            prefix += f" (line {line})"
        super().__init__(f"{prefix}: {message}")
        self.path = tuple(path)
        self.line = line


@dataclass(frozen=True)
class DatasetConfig:
    num_classes: int = 4
    per_class: int = 16
    eval_per_class: int = 16
    noise: float = 0.5
    xor: bool = True
    seed: int = 0


@dataclass(frozen=True)
class Config:
    network: NetworkSpec
    train: TrainConfig = None
    dataset: DatasetConfig = None


class _Lines:
    """Maps key paths of a YAML document to 1-based line numbers."""

    def __init__(self, text):
        try:
            self.root = yaml.compose(text)
        except yaml.YAMLError:
            self.root = None

    def __call__(self, path):
        node = self.root
        line = node.start_mark.line + 1 if node is not None else None
        for key in path:
            if isinstance(node, yaml.MappingNode):
                nxt = next((v for k, v in node.value if k.value == key), None)
                if nxt is None:
                    return line
                line = next(k for k, v in node.value if k.value == key).start_mark.line + 1
                node = nxt
            elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
                node = node.value[key]
                line = node.start_mark.line + 1
            else:
                return line
        return line


_INT, _NUM, _BOOL, _STR = "integer", "number", "boolean", "string"

_BLOCK_KEYS = {
    "family": _STR, "in_channels": _INT, "out_channels": _INT, "expansion": _NUM,
    "spatial_kernel": _INT, "stride": _INT, "g1": _INT, "g2": _INT, "cs": _INT,
    "relu_placement": _STR, "skip": _BOOL, "inverted": _BOOL, "permute": _BOOL,
}
_STEM_KEYS = {"in_channels": _INT, "out_channels": _INT, "kernel": _INT, "stride": _INT}
_TRAIN_KEYS = {
    "lr0": _NUM, "momentum": _NUM, "weight_decay": _NUM, "schedule": None, "epochs": _INT,
    "batch_size": _INT, "seed": _INT, "shuffle": _BOOL,
}
_DATASET_KEYS = {
    "num_classes": _INT, "per_class": _INT, "eval_per_class": _INT, "noise": _NUM,
    "xor": _BOOL, "seed": _INT,
}


class _Parser:
    def __init__(self, text):
        self.lines = _Lines(text)

    def fail(self, message, path):
        raise ConfigParseError(message, path, self.lines(path))

    def mapping(self, value, path, schema, required=()):
        if not isinstance(value, dict):
            self.fail(f"expected a mapping, got {type(value).__name__}", path)
        for key in value:
            if key not in schema:
                self.fail(f"unknown key {key!r}; allowed: {', '.join(schema)}", path + (key,))
        for key in required:
            if key not in value:
                self.fail(f"missing required key {key!r}", path)
        out = {}
        for key, kind in schema.items():
            if key in value and kind is not None:
                out[key] = self.scalar(value[key], path + (key,), kind)
        return out

    def scalar(self, value, path, kind):
        ok = {
            _INT: isinstance(value, int) and not isinstance(value, bool),
            _NUM: isinstance(value, (int, float)) and not isinstance(value, bool),
            _BOOL: isinstance(value, bool),
            _STR: isinstance(value, str),
        }[kind]
        if value is None and path[-1] == "cs":
            return None
        if not ok:
            self.fail(f"expected {kind}, got {value!r}", path)
        return value

    def build(self, factory, kwargs, path):
        try:
            return factory(**kwargs)
        except ConfigError as exc:
            self.fail(str(exc), path)

    def network(self, raw, path=("network",)):
        top = self.mapping(
            raw, path, {"input_resolution": None, "stem": None, "head": None, "stages": None}
        )
        res = raw.get("input_resolution", [32, 32])
        if (not isinstance(res, list) or len(res) != 2
                or not all(isinstance(v, int) and not isinstance(v, bool) and v > 0 for v in res)):
            self.fail(f"expected two positive integers, got {res!r}", path + ("input_resolution",))
        stem = None
        if raw.get("stem") is not None:
            kw = self.mapping(raw["stem"], path + ("stem",), _STEM_KEYS)
            stem = self.build(StemSpec, kw, path + ("stem",))
        head = raw.get("head")
        if head is not None:
            head = self.scalar(head, path + ("head",), _INT)
        stages_raw = raw.get("stages") or []
        if not isinstance(stages_raw, list):
            self.fail("expected a list of stages", path + ("stages",))
        stages = []
        width = stem.out_channels if stem else None
        for i, st in enumerate(stages_raw):
            sp = path + ("stages", i)
            self.mapping(st, sp, {"block": None, "repeats": _INT}, required=("block",))
            kw = self.mapping(
                st["block"], sp + ("block",), _BLOCK_KEYS,
                required=("family", "in_channels", "out_channels"),
            )
            if width is not None and kw["in_channels"] != width:
                self.fail(f"expected {width} to match the previous output width, "
                          f"got {kw['in_channels']}", sp + ("block", "in_channels"))
            width = kw["out_channels"]
            block = self.build(BlockSpec, kw, sp + ("block",))
            stages.append(self.build(StageSpec, {"block": block, "repeats": st.get("repeats", 1)}, sp))
        del top
        return self.build(
            NetworkSpec,
            {"stem": stem, "stages": tuple(stages), "head": head, "input_resolution": tuple(res)},
            path,
        )

    def train(self, raw, path=("train",)):
        kw = self.mapping(raw, path, _TRAIN_KEYS)
        if "schedule" in raw:
            sp = path + ("schedule",)
            sched = raw["schedule"]
            if not isinstance(sched, dict) or sched.get("type") not in ("step", "exponential"):
                self.fail("schedule needs type: step or type: exponential", sp)
            if sched["type"] == "step":
                skw = self.mapping(sched, sp, {"type": _STR, "milestones": None, "factor": _NUM})
                ms = sched.get("milestones", [])
                if not isinstance(ms, list) or not all(isinstance(m, int) for m in ms):
                    self.fail("milestones must be a list of integers", sp + ("milestones",))
                kw["schedule"] = self.build(
                    StepDecay, {"milestones": tuple(ms), "factor": skw.get("factor", 10.0)}, sp
                )
            else:
                skw = self.mapping(sched, sp, {"type": _STR, "gamma": _NUM, "interval": _INT})
                skw.pop("type")
                kw["schedule"] = self.build(ExponentialDecay, skw, sp)
        return self.build(TrainConfig, kw, path)

    def dataset(self, raw, path=("dataset",)):
        kw = self.mapping(raw, path, _DATASET_KEYS)
        cfg = self.build(DatasetConfig, kw, path)
        if cfg.num_classes < 2 or cfg.per_class < 1 or cfg.eval_per_class < 0 or cfg.noise < 0:
            self.fail("need num_classes >= 2, per_class >= 1, eval_per_class >= 0, noise >= 0", path)
        return cfg


def parse_config(text):
    """Parse and validate config ``text``; raises :class:`ConfigParseError`."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigParseError(
            f"invalid YAML: {getattr(exc, 'problem', exc)}",
            line=mark.line + 1 if mark else None,
        ) from exc
    p = _Parser(text)
    if not isinstance(raw, dict):
        p.fail("config must be a mapping with a 'network' key", ())
    p.mapping(raw, (), {"network": None, "train": None, "dataset": None}, required=("network",))
    net = p.network(raw["network"])
    train = p.train(raw["train"]) if raw.get("train") is not None else None
    data = p.dataset(raw["dataset"]) if raw.get("dataset") is not None else None
    if data is not None and net.head is not None and data.num_classes != net.head:
        p.fail(f"num_classes {data.num_classes} differs from network head {net.head}",
               ("dataset", "num_classes"))
    return Config(net, train, data)


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())


def _block_dict(spec):
    return {f.name: getattr(spec, f.name) for f in fields(spec)}


def config_to_dict(config):
    net = config.network
    out = {"network": {
        "input_resolution": list(net.input_resolution),
        "stem": None if net.stem is None else {f.name: getattr(net.stem, f.name) for f in fields(net.stem)},
        "head": net.head,
        "stages": [{"repeats": s.repeats, "block": _block_dict(s.block)} for s in net.stages],
    }}
    if config.train is not None:
        t = config.train
        if isinstance(t.schedule, StepDecay):
            sched = {"type": "step", "milestones": list(t.schedule.milestones),
                     "factor": t.schedule.factor}
        else:
            sched = {"type": "exponential", "gamma": t.schedule.gamma,
                     "interval": t.schedule.interval}
        out["train"] = {f.name: getattr(t, f.name) for f in fields(t)}
        out["train"]["schedule"] = sched
    if config.dataset is not None:
        out["dataset"] = {f.name: getattr(config.dataset, f.name) for f in fields(config.dataset)}
    return out


def dump_config(config):
    if isinstance(config, NetworkSpec):
        config = Config(config)
    return yaml.safe_dump(config_to_dict(config), sort_keys=False, default_flow_style=None)


def bundled_config(name):
    """Text of a config shipped in ``igcv3/configs`` (e.g. ``"reference_mnv2.yaml"``)."""
    return resources.files("igcv3").joinpath("configs", name).read_text()


def reference_network():
    """MobileNetV2-pattern reference backbone (a documented assumption, see the file)."""
    return parse_config(bundled_config("reference_mnv2.yaml")).network
