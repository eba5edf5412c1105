"""Cross-entropy training with momentum SGD, and evaluation."""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .network import backward, forward, predict
from .tensor import softmax_cross_entropy, sgd_step

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch):
        super().__init__(f"loss diverged (non-finite) at epoch {epoch}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 20
    batch: int = 8
    seed: int = 0
    predictor_lr_mult: float = 1.0


@dataclass
class TrainResult:
    loss_curve: list = field(default_factory=list)  # mean training loss per epoch
    initial_loss: float = float("nan")


def train(graph, images, labels, hp, log_every=0):
    """Train a copy of ``graph``; returns ``(trained_graph, TrainResult)``.

    Deterministic for a fixed ``hp.seed``. The learning rate is cosine-annealed
    over the run; scale-predictor parameters use ``lr * predictor_lr_mult``
    and stay fixed when the multiplier is 0.
    """
    g = graph.copy()
    result = TrainResult()
    n = len(labels)
    if n == 0:
        raise ValueError("empty dataset")
    if hp.epochs == 0:
        return g, result
    rng = np.random.default_rng(hp.seed)
    velocity = {}
    steps_per_epoch = math.ceil(n / hp.batch)
    total_steps = hp.epochs * steps_per_epoch
    step = 0
    for epoch in range(hp.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, hp.batch):
            idx = order[start:start + hp.batch]
            logits, trace = forward(g, images[idx], keep_cache=True)
            loss, dlogits = softmax_cross_entropy(logits, labels[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch)
            if step == 0:
                result.initial_loss = loss
            losses.append(loss * len(idx))
            grads = backward(g, trace, dlogits)
            lr = 0.5 * hp.lr * (1.0 + math.cos(math.pi * step / total_steps))
            for k, gr in grads.items():
                mult = hp.predictor_lr_mult if ".pred_" in k else 1.0
                if mult == 0.0:
                    continue  # frozen
                g.weights[k], velocity[k] = sgd_step(g.weights[k], gr, lr * mult, hp.momentum,
                                                     hp.weight_decay, velocity.get(k))
            step += 1
        epoch_loss = sum(losses) / n
        if not math.isfinite(epoch_loss):
            raise TrainingDiverged(epoch)
        result.loss_curve.append(epoch_loss)
        if log_every and (epoch + 1) % log_every == 0:
            log.info("epoch %d loss %.4f", epoch + 1, epoch_loss)
    return g, result


def evaluate(graph, images, labels, scale_mode="predict"):
    """``{"accuracy", "loss"}`` of ``graph`` on a labelled set."""
    if len(labels) == 0:
        raise ValueError("empty dataset")
    logits = predict(graph, images, scale_mode=scale_mode)
    loss, _ = softmax_cross_entropy(logits, labels)
    acc = float(np.mean(logits.argmax(axis=1) == labels))
    return {"accuracy": acc, "loss": loss}
