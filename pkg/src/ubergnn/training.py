"""Mini-batch training loop, evaluation and top-k recommendation."""
from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .checkpoint import Model
from .data import ItemVocabulary, Session, UserFeatureSchema, encode_user, expand_all
from .errors import InvalidArgumentError, RecommendationError, TrainingDivergenceError
from .metrics import DEFAULT_K, EvalResult, evaluate_ranks, ranks_from_scores
from .model import ModelParameters, TrainConfig, forward, loss_and_grad, make_batch
from .numeric import adam_step, lr_at_epoch, make_rng
from .session_graph import build_graph

log = logging.getLogger(__name__)


class PairSet:
    """(prefix, label) pairs with their graphs and encoded user features cached."""

    def __init__(self, sessions: Sequence[Session], portraits: Mapping[str, Mapping],
                 schema: UserFeatureSchema):
        pairs = expand_all(sessions)
        self.graphs = [build_graph(prefix.items) for prefix, _ in pairs]
        self.labels = np.array([label for _, label in pairs], dtype=np.intp)
        cache: dict[str, np.ndarray] = {}
        rows = []
        for prefix, _ in pairs:
            if prefix.user_id not in cache:
                cache[prefix.user_id] = encode_user(portraits.get(prefix.user_id), schema)
            rows.append(cache[prefix.user_id])
        self.features = np.stack(rows) if rows else np.zeros((0, schema.width))

    def __len__(self):
        return len(self.labels)

    def batch(self, idx: Sequence[int]):
        idx = list(idx)
        return make_batch([self.graphs[i] for i in idx], self.features[idx], self.labels[idx])

    def batches(self, batch_size: int, order: Sequence[int] | None = None):
        order = np.arange(len(self)) if order is None else order
        for lo in range(0, len(order), batch_size):
            yield self.batch(order[lo:lo + batch_size])


def predict_scores(params: ModelParameters, config: TrainConfig, pairs: PairSet,
                   batch_size: int = 256) -> np.ndarray:
    out = [forward(params, config, b, track_grad=False).scores.value
           for b in pairs.batches(batch_size)]
    return np.concatenate(out, axis=0)


def evaluate(params: ModelParameters, config: TrainConfig, pairs: PairSet,
             k: int = DEFAULT_K) -> EvalResult:
    if len(pairs) == 0:
        raise InvalidArgumentError("no evaluation cases")
    ranks = ranks_from_scores(predict_scores(params, config, pairs), pairs.labels)
    return evaluate_ranks(ranks, k)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_p20: float
    val_mrr20: float
    lr: float

    def to_json(self) -> str:
        return json.dumps({"epoch": self.epoch, "train_loss": self.train_loss,
                           "val_p20": self.val_p20, "val_mrr20": self.val_mrr20, "lr": self.lr})


@dataclass
class TrainResult:
    model: Model                      # best-validation parameters
    history: list[EpochRecord] = field(default_factory=list)
    final_params: ModelParameters | None = None


def _snapshot(params: ModelParameters) -> ModelParameters:
    return copy.deepcopy(params)


def train(train_sessions: Sequence[Session], val_sessions: Sequence[Session],
          vocab: ItemVocabulary, schema: UserFeatureSchema,
          portraits: Mapping[str, Mapping], config: TrainConfig,
          metrics_log: str | Path | None = None) -> TrainResult:
    train_pairs = PairSet(train_sessions, portraits, schema)
    if len(train_pairs) == 0:
        raise InvalidArgumentError("empty training set")
    val_pairs = PairSet(val_sessions, portraits, schema) if val_sessions else None

    params = ModelParameters.initialize(config, len(vocab), schema.width)
    log.info("model has %d trainable values in %d matrices", params.count(), len(params))
    rng = make_rng(config.seed)
    log_fh = open(metrics_log, "a", encoding="utf-8") if metrics_log else None

    history: list[EpochRecord] = []
    best = (-math.inf, None, -1, None)   # (val p20, params, epoch, metrics)
    stale = 0
    try:
        for epoch in range(config.epochs):
            lr = config.lr_scale * lr_at_epoch(epoch)
            order = rng.permutation(len(train_pairs))
            total, seen = 0.0, 0
            for b_idx, batch in enumerate(train_pairs.batches(config.batch_size, order)):
                params.zero_grad()
                loss = loss_and_grad(params, config, batch)
                if not math.isfinite(loss):
                    raise TrainingDivergenceError(f"non-finite loss at epoch {epoch}, batch {b_idx}")
                for p in params:
                    adam_step(p, params.adam[p.name], lr, config.l2)
                total += loss * batch.size
                seen += batch.size
            val = evaluate(params, config, val_pairs) if val_pairs else None
            rec = EpochRecord(epoch, total / seen, val.p_at_k if val else float("nan"),
                              val.mrr_at_k if val else float("nan"), lr)
            history.append(rec)
            log.info("epoch %d loss %.5f val P@20 %.4f MRR@20 %.4f lr %g",
                     epoch, rec.train_loss, rec.val_p20, rec.val_mrr20, lr)
            if log_fh:
                log_fh.write(rec.to_json() + "\n")
                log_fh.flush()
            score = rec.val_p20 if val else -epoch   # without validation keep the last epoch
            if score > best[0] or best[1] is None:
                best = (score, _snapshot(params), epoch,
                        {"val_p20": rec.val_p20, "val_mrr20": rec.val_mrr20, "train_loss": rec.train_loss})
                stale = 0
            else:
                stale += 1
                if config.patience and stale >= config.patience:
                    log.info("early stop after epoch %d", epoch)
                    break
    finally:
        if log_fh:
            log_fh.close()

    model = Model(config, best[1], vocab, schema, dict(portraits), best[2], best[3])
    return TrainResult(model, history, params)


def recommend(model: Model, user_id: str | None, session_prefix: Sequence[str],
              k: int = DEFAULT_K) -> list[tuple[str, float]]:
    """Top-k ``(item_id, probability)`` for a session prefix given as raw item ids."""
    if k < 1:
        raise InvalidArgumentError("k must be >= 1")
    if len(session_prefix) == 0:
        raise InvalidArgumentError("session prefix must contain at least one item")
    known = [model.vocab.index(i) for i in session_prefix if i in model.vocab]
    if not known:
        raise RecommendationError("no item of the session prefix is in the vocabulary")
    x = encode_user(model.portraits.get(user_id) if user_id is not None else None, model.schema)
    batch = make_batch([build_graph(known)], x[None, :])
    probs = forward(model.params, model.config, batch, track_grad=False).probs.value[0]
    order = np.lexsort((np.arange(probs.size), -probs))[:k]
    return [(model.vocab.item_id(int(i)), float(probs[i])) for i in order]
