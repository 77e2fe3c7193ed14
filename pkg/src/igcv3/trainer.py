"""SGD with momentum, learning-rate schedules, a synthetic image dataset and
the epoch loop that ties them to a :class:`~igcv3.network.Network`."""
from dataclasses import dataclass, field

import numpy as np

from . import network as netmod
from .errors import ConfigError, ContractError, TrainingError


@dataclass(frozen=True)
class StepDecay:
    """Divide the rate by ``factor`` at each milestone epoch."""

    milestones: tuple = (200, 300, 350)
    factor: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "milestones", tuple(self.milestones))
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ConfigError(f"milestones must be strictly increasing, got {self.milestones}")
        if self.factor <= 0:
            raise ConfigError("factor must be positive")


@dataclass(frozen=True)
class ExponentialDecay:
    """Multiply the rate by ``gamma`` once every ``interval`` epochs."""

    gamma: float = 0.98
    interval: int = 1

    def __post_init__(self):
        if self.gamma <= 0 or self.interval < 1:
            raise ConfigError("gamma must be positive and interval >= 1")


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    schedule: object = field(default_factory=StepDecay)
    epochs: int = 400
    batch_size: int = 64
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.lr0 < 0:
            raise ConfigError("lr0 must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")


def cifar_config(**overrides):
    """CIFAR protocol: lr 0.1 divided by 10 at epochs 200/300/350, batch 64."""
    base = dict(lr0=0.1, momentum=0.9, weight_decay=1e-4,
                schedule=StepDecay((200, 300, 350), 10.0), epochs=400, batch_size=64)
    base.update(overrides)
    return TrainConfig(**base)


def imagenet_config(**overrides):
    """ImageNet protocol: lr 0.045 scaled by 0.98 every epoch, batch 96."""
    base = dict(lr0=0.045, momentum=0.9, weight_decay=4e-5,
                schedule=ExponentialDecay(0.98, 1), epochs=480, batch_size=96)
    base.update(overrides)
    return TrainConfig(**base)


def scaled_step_schedule(epochs, reference=StepDecay((200, 300, 350), 10.0), reference_epochs=400):
    """Milestones of ``reference`` stretched to a run of ``epochs`` epochs."""
    ms = tuple(int(m * epochs / reference_epochs) for m in reference.milestones)
    return StepDecay(ms, reference.factor)


def lr_at(config, epoch):
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    sched = config.schedule
    if isinstance(sched, StepDecay):
        passed = sum(1 for m in sched.milestones if epoch >= m)
        return config.lr0 / sched.factor ** passed
    return config.lr0 * sched.gamma ** (epoch // sched.interval)


def sgd_step(params, grads, velocity, lr, momentum, weight_decay, no_decay=()):
    """One momentum step; returns new ``(params, velocity)`` dicts.

    ``v' = momentum * v + grad + weight_decay * param`` (decay skipped for
    names in ``no_decay``) and ``param' = param - lr * v'``.
    """
    if set(params) != set(grads) or set(params) != set(velocity):
        raise ContractError("params, grads and velocity must share the same keys")
    new_p, new_v = {}, {}
    for k, p in params.items():
        g, v = grads[k], velocity[k]
        if np.shape(g) != np.shape(p) or np.shape(v) != np.shape(p):
            raise ContractError(
                f"{k}: param {np.shape(p)}, grad {np.shape(g)}, velocity {np.shape(v)}"
            )
        step = g if k in no_decay or weight_decay == 0 else g + weight_decay * p
        new_v[k] = momentum * v + step
        new_p[k] = p - lr * new_v[k]
    return new_p, new_v


@dataclass(frozen=True, eq=False)
class ToyDataset:
    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    prototypes: np.ndarray = field(repr=False)
    noise: float = 0.5
    seed: int = 0

    def __len__(self):
        return len(self.labels)

    @property
    def samples(self):
        return list(zip(self.images, self.labels))


def make_toy_dataset(num_classes, per_class, resolution=(8, 8), seed=0, channels=3,
                     noise=0.5, xor=False, sample_seed=None):
    """Gaussian-blob class patterns in channel space plus white noise.

    Each class owns a unit channel direction and a blob centre; a sample is
    that pattern (times a random sign when ``xor`` is set) plus
    ``noise``-scaled Gaussian noise. With ``xor`` the sign is independent
    of the label, so every class mean is zero and no linear readout of the
    raw pixels separates the classes. ``seed`` fixes the class patterns,
    ``sample_seed`` (default ``seed``) the draws, so two calls differing
    only in ``sample_seed`` give train/eval splits of one task.
    """
    if num_classes < 2:
        raise ConfigError("num_classes must be >= 2")
    h, w = resolution
    proto_rng = np.random.default_rng(seed)
    dirs = proto_rng.normal(size=(num_classes, channels))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    centres = proto_rng.uniform(0, 1, size=(num_classes, 2)) * [h - 1, w - 1]
    yy, xx = np.mgrid[0:h, 0:w]
    sigma = max(h, w) / 3
    blobs = np.exp(-((yy - centres[:, :1, None]) ** 2 + (xx - centres[:, 1:, None]) ** 2)
                   / (2 * sigma ** 2))
    prototypes = 2.0 * dirs[:, :, None, None] * blobs[:, None]

    rng = np.random.default_rng(seed if sample_seed is None else sample_seed)
    labels = np.tile(np.arange(num_classes), per_class)
    signs = rng.choice([-1.0, 1.0], size=labels.size) if xor else np.ones(labels.size)
    images = signs[:, None, None, None] * prototypes[labels]
    images = images + noise * rng.normal(size=images.shape)
    return ToyDataset(images, labels, num_classes, prototypes, noise, seed)


def evaluate(net, dataset):
    return float(np.mean(netmod.predict(net, dataset.images) == dataset.labels))


def train(net, dataset, config, eval_dataset=None, on_epoch=None):
    """Train ``net`` on ``dataset``; returns ``(net, history)``.

    ``history`` holds one dict per epoch with ``epoch, lr, train_loss,
    train_acc, eval_acc``. Train metrics come from the train-mode
    minibatch passes; ``eval_acc`` uses running BN statistics on
    ``eval_dataset`` (or the training set).
    """
    rng = np.random.default_rng(config.seed)
    no_decay = netmod.no_decay_names(net)
    velocity = {k: np.zeros_like(v) for k, v in net.params.items()}
    history = []
    n = len(dataset)
    for epoch in range(config.epochs):
        lr = lr_at(config, epoch)
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        loss_sum = 0.0
        correct = 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            with np.errstate(over="ignore", invalid="ignore"):
                logits, cache = netmod.forward(net, dataset.images[idx], mode="train")
                loss, dlogits = netmod.softmax_cross_entropy(logits, dataset.labels[idx])
                if not np.isfinite(loss):
                    raise TrainingError(
                        f"loss became non-finite at epoch {epoch}; try a smaller learning rate",
                        epoch,
                    )
                grads = netmod.backward(net, dlogits, cache)
                params, velocity = sgd_step(
                    net.params, grads, velocity, lr, config.momentum, config.weight_decay,
                    no_decay,
                )
            if not all(np.all(np.isfinite(v)) for v in params.values()):
                raise TrainingError(
                    f"parameters became non-finite at epoch {epoch}; try a smaller learning rate",
                    epoch,
                )
            loss_sum += loss * len(idx)
            correct += int((logits.argmax(axis=1) == dataset.labels[idx]).sum())
            net = net.with_params(params).with_bn_state(cache.stem_state, cache.block_states)
        with np.errstate(over="ignore", invalid="ignore"):
            eval_acc = evaluate(net, eval_dataset if eval_dataset is not None else dataset)
        record = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": loss_sum / n,
            "train_acc": correct / n,
            "eval_acc": eval_acc,
        }
        history.append(record)
        if on_epoch is not None:
            on_epoch(record)
    return net, history
