"""Next-token training loop for the toy transformer."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, NumericFailure
from .model import ModelCheckpoint, ModelConfig, init_model, loss_and_grads

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 600
    batch_size: int = 8
    seq_len: int = 256
    lr: float = 3e-3
    warmup: int = 50
    min_lr_ratio: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    grad_clip: float = 1.0


class Adam:
    """Adam with bias correction, updating a list of arrays in place."""

    def __init__(self, params: list[np.ndarray], beta1=0.9, beta2=0.99, eps=1e-8):
        self.params = params
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, grads: list[np.ndarray], lr: float) -> None:
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def learning_rate(step: int, tc: TrainConfig) -> float:
    if step < tc.warmup:
        return tc.lr * (step + 1) / tc.warmup
    progress = (step - tc.warmup) / max(1, tc.steps - tc.warmup)
    cosine = 0.5 * (1 + math.cos(math.pi * min(progress, 1.0)))
    return tc.lr * (tc.min_lr_ratio + (1 - tc.min_lr_ratio) * cosine)


def train(corpus: bytes, config: ModelConfig = ModelConfig(), tc: TrainConfig = TrainConfig()) -> ModelCheckpoint:
    """Train a fresh model on ``corpus`` and return a float32 checkpoint.

    Batches are random windows drawn with ``config.seed``, so the same corpus,
    config and schedule always give a bit-identical checkpoint.
    """
    if len(corpus) < 64 * config.max_seq_len:
        raise InvalidInputError(
            f"corpus has {len(corpus)} bytes; need at least {64 * config.max_seq_len}"
        )
    seq_len = min(tc.seq_len, config.max_seq_len)
    model = init_model(config)
    params = [a for _, a in model.named_arrays()]
    opt = Adam(params, tc.beta1, tc.beta2, tc.eps)
    data = np.frombuffer(corpus, dtype=np.uint8)
    rng = np.random.default_rng(config.seed + 1)
    window = seq_len + 1
    for step in range(tc.steps):
        starts = rng.integers(0, len(data) - window + 1, size=tc.batch_size)
        batch = np.stack([data[s:s + window] for s in starts]).astype(np.int64)
        loss, grads = loss_and_grads(model, batch, dtype=np.float32)
        if not math.isfinite(loss):
            raise NumericFailure(f"training diverged at step {step}")
        g = [a for _, a in grads.named_arrays()]
        norm = math.sqrt(sum(float(np.vdot(x, x)) for x in g))
        if tc.grad_clip and norm > tc.grad_clip:
            g = [x * (tc.grad_clip / norm) for x in g]
        opt.step(g, learning_rate(step, tc))
        if step % 100 == 0 or step == tc.steps - 1:
            log.info("step %d loss %.4f lr %.2e", step, loss, learning_rate(step, tc))
    return model
