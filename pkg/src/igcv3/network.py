"""Runnable classifier assembled from a :class:`NetworkSpec`: stem conv,
stacked blocks, global average pooling and a linear head."""
from dataclasses import dataclass, field, replace as dc_replace

import numpy as np

from . import blocks as blk
from . import linalg
from .errors import ConfigError, ContractError, ShapeError


@dataclass(frozen=True, eq=False)
class Network:
    spec: object
    blocks: tuple
    stem: dict = field(default=None, repr=False)
    stem_state: object = field(default=None, repr=False)
    fc: dict = field(default=None, repr=False)

    @property
    def params(self):
        """Flat name -> array view of every trainable value."""
        out = {}
        if self.stem is not None:
            out.update({f"stem.{k}": v for k, v in self.stem.items()})
        for i, b in enumerate(self.blocks):
            out.update({f"blocks.{i}.{k}": v for k, v in b.params.items()})
        out.update({f"fc.{k}": v for k, v in self.fc.items()})
        return out

    def with_params(self, flat):
        stem = None
        if self.stem is not None:
            stem = {k: flat[f"stem.{k}"] for k in self.stem}
        new_blocks = tuple(
            b.replace(params={k: flat[f"blocks.{i}.{k}"] for k in b.params})
            for i, b in enumerate(self.blocks)
        )
        fc = {k: flat[f"fc.{k}"] for k in self.fc}
        return dc_replace(self, stem=stem, blocks=new_blocks, fc=fc)

    def with_bn_state(self, stem_state, block_states):
        new_blocks = tuple(b.replace(bn_state=s) for b, s in zip(self.blocks, block_states))
        return dc_replace(self, stem_state=stem_state, blocks=new_blocks)

    def num_params(self):
        return sum(v.size for v in self.params.values())


def no_decay_names(net):
    """BN shifts and the classifier bias are excluded from weight decay."""
    return {k for k in net.params if k.endswith(".shift") or k == "fc.b"}


def build_network(spec, rng=None, check=True):
    if not spec.head:
        raise ConfigError("a runnable network needs a classifier head")
    rng = np.random.default_rng() if rng is None else rng
    stem = stem_state = None
    if spec.stem is not None:
        s = spec.stem
        fan_in = s.in_channels * s.kernel * s.kernel
        stem = {
            "w": rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(s.out_channels, fan_in)),
            "bn.scale": np.ones(s.out_channels),
            "bn.shift": np.zeros(s.out_channels),
        }
        stem_state = linalg.BatchNormState.initial(s.out_channels)
    built = tuple(blk.build(b, rng, check=check) for b in spec.block_specs())
    width = spec.out_channels
    fc = {
        "w": rng.normal(0.0, np.sqrt(1.0 / width), size=(spec.head, width)),
        "b": np.zeros(spec.head),
    }
    return Network(spec, built, stem, stem_state, fc)


class NetworkCache:
    def __init__(self, net, stem, blocks, feats_shape, feats, stem_state, block_states):
        self.net = net
        self.stem = stem
        self.blocks = blocks
        self.feats_shape = feats_shape
        self.feats = feats
        self.stem_state = stem_state
        self.block_states = block_states


def forward(net, x, mode="train"):
    """Return ``(logits, cache)`` for the NCHW batch ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4 or x.shape[1] != net.spec.in_channels:
        raise ShapeError(f"network expects {net.spec.in_channels} channels, got shape {x.shape}")
    h = x
    stem_cache = None
    stem_state = net.stem_state
    if net.stem is not None:
        s = net.spec.stem
        h, c_conv = linalg.conv2d_forward(h, net.stem["w"], s.kernel, s.kernel, s.stride, s.kernel // 2)
        h, c_bn, stem_state = linalg.batchnorm_forward(
            h, net.stem["bn.scale"], net.stem["bn.shift"], net.stem_state, mode,
            blk.BN_EPS, blk.BN_MOMENTUM,
        )
        stem_cache = (c_conv, c_bn, h)
        h = linalg.relu(h)
    block_caches = []
    for b in net.blocks:
        h, c = blk.forward(b, h, mode)
        block_caches.append(c)
    feats_shape = h.shape
    feats = h.mean(axis=(2, 3))
    logits = feats @ net.fc["w"].T + net.fc["b"]
    cache = NetworkCache(
        net, stem_cache, block_caches, feats_shape, feats, stem_state,
        [c.bn_state for c in block_caches],
    )
    return logits, cache


def backward(net, dlogits, cache):
    """Gradients of every entry of ``net.params`` (same keys)."""
    if cache.net is not net:
        raise ContractError("cache was produced by a different network")
    grads = {"fc.w": dlogits.T @ cache.feats, "fc.b": dlogits.sum(axis=0)}
    n, c, hh, ww = cache.feats_shape
    d = np.broadcast_to((dlogits @ net.fc["w"])[:, :, None, None] / (hh * ww), cache.feats_shape)
    d = np.array(d)
    for i in reversed(range(len(net.blocks))):
        d, g = blk.backward(net.blocks[i], d, cache.blocks[i])
        grads.update({f"blocks.{i}.{k}": v for k, v in g.items()})
    if net.stem is not None:
        c_conv, c_bn, pre = cache.stem
        d = linalg.relu_backward(pre, d)
        d, dscale, dshift = linalg.batchnorm_backward(d, c_bn)
        _, dw = linalg.conv2d_backward(d, c_conv)
        grads.update({"stem.w": dw, "stem.bn.scale": dscale, "stem.bn.shift": dshift})
    return grads


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy loss and its gradient with respect to ``logits``."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    d = np.exp(logp)
    d[np.arange(n), labels] -= 1.0
    return float(loss), d / n


def predict(net, x, batch_size=256):
    out = [forward(net, x[i:i + batch_size], mode="eval")[0] for i in range(0, len(x), batch_size)]
    return np.concatenate(out).argmax(axis=1)
