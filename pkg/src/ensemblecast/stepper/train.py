"""AdamW training of one-step steppers with warmup + cosine learning rate."""

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from .. import seeding
from ..errors import DivergedLoss, EnsembleCastError
from .core import batch_loss, one_step_samples

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-5
    warmup_epochs: int = 5
    epochs: int = 150
    batch_size: int = 4
    beta1: float = 0.9
    beta2: float = 0.95
    weight_decay: float = 0.1
    adam_eps: float = 1e-8
    rollout_steps: int = 1
    schedule: str = "cosine"
    optimizer: str = "adamw"

    def __post_init__(self):
        if not self.lr >= 0:
            raise EnsembleCastError(f"learning rate must be >= 0, got {self.lr}")
        if self.epochs < 1 or not 0 <= self.warmup_epochs <= self.epochs:
            raise EnsembleCastError("need epochs >= 1 and 0 <= warmup_epochs <= epochs")
        if self.batch_size < 1:
            raise EnsembleCastError("batch_size must be >= 1")
        if self.rollout_steps != 1:
            raise EnsembleCastError("only one-step training (rollout_steps = 1) is supported")
        if self.schedule != "cosine" or self.optimizer != "adamw":
            raise EnsembleCastError("only the adamw optimizer with a cosine schedule is available")

    def to_dict(self):
        return asdict(self)


# Full-scale reference hyperparameters; far too slow for desk-scale data.
REFERENCE_TRAIN = TrainConfig()


def lr_at(cfg, step, total_steps, warmup_steps):
    if step < warmup_steps:
        return cfg.lr * (step + 1) / warmup_steps
    span = max(total_steps - warmup_steps, 1)
    progress = min((step - warmup_steps) / span, 1.0)
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * progress))


class AdamW:
    def __init__(self, params, cfg):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def update(self, params, grads, lr):
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        out = {}
        for k, p in params.items():
            g = grads[k]
            self.m[k] = c.beta1 * self.m[k] + (1.0 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1.0 - c.beta2) * g * g
            mhat = self.m[k] / bc1
            vhat = self.v[k] / bc2
            out[k] = p - lr * (mhat / (np.sqrt(vhat) + c.adam_eps) + c.weight_decay * p)
        return out


def dataset_loss(model, ctx, x, samples, batch=32):
    total = 0.0
    for i in range(0, len(samples), batch):
        sl = slice(i, i + batch)
        loss, _ = batch_loss(model, ctx, x[sl], samples.prev1[sl], samples.target[sl], want_grad=False)
        total += loss * len(samples.days[sl])
    return total / len(samples)


def train(model, ctx, series, split, cfg, seed, history=None):
    """Minimize the weighted one-step MSE over the train range.

    Batches follow a seeded permutation per epoch. The full train loss is
    evaluated after every epoch and the best parameters seen (the initial
    ones included) are returned. ``history``, when given, receives one dict
    per epoch.
    """
    if model.kind == "persistence":
        return model
    days = split.train
    if len(days) < 3:
        raise EnsembleCastError("train range must hold at least 3 days")
    samples = one_step_samples(series, days)
    x = samples.features(ctx)
    n = len(samples)
    spe = math.ceil(n / cfg.batch_size)
    total_steps = cfg.epochs * spe
    warmup_steps = cfg.warmup_epochs * spe
    gen = seeding.rng(seed)
    opt = AdamW(model.params, cfg)

    best_loss = dataset_loss(model, ctx, x, samples)
    if not np.isfinite(best_loss):
        raise DivergedLoss(f"initial loss is {best_loss}")
    best = model
    log.info("epoch 0 train loss %.6g", best_loss)
    step_i = 0
    for epoch in range(1, cfg.epochs + 1):
        order = gen.permutation(n)
        for b in range(spe):
            idx = np.sort(order[b * cfg.batch_size : (b + 1) * cfg.batch_size])
            loss, grads = batch_loss(model, ctx, x[idx], samples.prev1[idx], samples.target[idx])
            if not np.isfinite(loss):
                raise DivergedLoss(f"non-finite loss at epoch {epoch}, step {step_i}")
            lr = lr_at(cfg, step_i, total_steps, warmup_steps)
            model = model.replace(opt.update(model.params, grads, lr))
            step_i += 1
        epoch_loss = dataset_loss(model, ctx, x, samples)
        if not np.isfinite(epoch_loss):
            raise DivergedLoss(f"non-finite train loss after epoch {epoch}")
        if history is not None:
            history.append({"epoch": epoch, "train_loss": epoch_loss, "lr": lr})
        log.info("epoch %d train loss %.6g", epoch, epoch_loss)
        if epoch_loss <= best_loss:
            best_loss, best = epoch_loss, model
    return best
