"""Mini-batch Adam training with per-epoch validation and best-checkpoint retention."""
import logging
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import nn
from .errors import InvalidConfigError, InvalidInputError, TrainingDivergedError
from .model import Checkpoint, loss, topk_from_probs

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 0.005
    decay: float = 0.01
    l2: float = 0.0
    seed: int = 0
    # stop once the inference-mode training loss falls below this value
    stop_loss: Optional[float] = None

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise InvalidConfigError("epochs must be >= 0 and batch_size >= 1")


@dataclass
class Example:
    track_id: str
    x: np.ndarray
    target: np.ndarray
    genres: tuple


def recall_at(probs, genres, k):
    return int(any(g in genres for g in topk_from_probs(probs, k)))


def evaluate_examples(model, examples, ks=(1, 3)):
    """Inference-mode mean loss and Recall@k over ``examples``."""
    if not examples:
        return {"loss": None, **{f"recall@{k}": None for k in ks}}
    losses, hits = [], {k: 0 for k in ks}
    for ex in examples:
        out = model.forward(ex.x)
        losses.append(float(loss(out, ex.target).data))
        for k in ks:
            hits[k] += recall_at(out.genre_probs, ex.genres, min(k, model.config.genres))
    result = {"loss": float(np.mean(losses))}
    result.update({f"recall@{k}": hits[k] / len(examples) for k in ks})
    return result


def _snapshot(model):
    return {name: (p.data.copy(), p.adam_m.copy(), p.adam_v.copy(), p.step_count)
            for name, p in model.params.items()}


def _restore(model, snap):
    for name, (data, m, v, step) in snap.items():
        p = model.params[name]
        p.data, p.adam_m, p.adam_v, p.step_count = data.copy(), m.copy(), v.copy(), step


def train(model, train_set, val_set=(), config=None, on_epoch=None):
    """Train ``model`` in place and return the best-validation Checkpoint.

    Without a validation set the final parameters are kept.  ``on_epoch`` is
    called with each epoch's log record.
    """
    config = config or TrainConfig()
    if not train_set:
        raise InvalidInputError("training set is empty")
    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    history = []
    best = None
    best_loss = math.inf
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_set))
        batch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = [train_set[i] for i in order[start:start + config.batch_size]]
            for ex in batch:
                with nn.Tape() as tape:
                    value = loss(model.forward(ex.x, training=True, rng=rng), ex.target)
                lv = float(value.data)
                if not math.isfinite(lv):
                    raise TrainingDivergedError(
                        f"loss became {lv} at epoch {epoch} on track {ex.track_id}; "
                        f"try a lower learning rate (currently {config.lr})")
                batch_losses.append(lv)
                tape.backward(value, seed=np.array(1.0 / len(batch)))
            nn.adam_step(params, lr=config.lr, decay=config.decay, l2=config.l2)
        record = {"epoch": epoch, "train_loss": float(np.mean(batch_losses))}
        if config.stop_loss is not None:
            record["train_eval_loss"] = evaluate_examples(model, train_set)["loss"]
        if val_set:
            val = evaluate_examples(model, val_set)
            record.update(val_loss=val["loss"], val_recall3=val["recall@3"])
            if val["loss"] < best_loss:
                best_loss = val["loss"]
                best = (epoch, _snapshot(model))
        history.append(record)
        log.info("epoch", extra={"fields": record})
        if on_epoch is not None:
            on_epoch(record)
        if config.stop_loss is not None and record["train_eval_loss"] < config.stop_loss:
            break
    epochs_run = len(history)
    best_epoch = epochs_run
    if best is not None:
        best_epoch, snap = best
        _restore(model, snap)
    meta = {"epoch": best_epoch, "epochs_run": epochs_run, "history": history,
            "train_config": asdict(config)}
    return Checkpoint.from_model(model, meta)
