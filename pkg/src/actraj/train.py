"""Losses, displacement / classification metrics, training loop and k-fold cross-validation."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import nn
from .ingest import FoldAssignment, assign_folds
from .models import Batch, Model, ModelSpec, build_model, integrate, make_batch, predict_batch
from .nn import Tensor
from .vocab import PRED_LEN, Tracklet, Vocabulary

log = logging.getLogger(__name__)

LOG_CLAMP = 1e-12


class NumericalError(RuntimeError):
    pass


class MetricError(ValueError):
    pass


# losses --------------------------------------------------------------------

def loss_tp(true_pos, pred_pos) -> Tensor:
    """Mean over steps of squared L2 error, then mean over the batch."""
    pred = pred_pos if isinstance(pred_pos, Tensor) else Tensor(pred_pos)
    true = np.asarray(true_pos, dtype=pred.dtype)
    if true.shape != pred.shape:
        raise nn.ShapeError(f"position shapes differ: {true.shape} vs {pred.shape}")
    diff = pred - true
    per_step = (diff * diff).sum(axis=-1)
    return per_step.mean()


def loss_action(true_actions, probs) -> Tensor:
    """Cross-entropy of predicted per-step probabilities against integer labels or one-hot rows."""
    probs = probs if isinstance(probs, Tensor) else Tensor(probs)
    target = np.asarray(true_actions)
    if target.shape == probs.shape:
        onehot = target.astype(probs.dtype)
    elif target.shape == probs.shape[:-1]:
        onehot = np.eye(probs.shape[-1], dtype=probs.dtype)[target]
    else:
        raise nn.ShapeError(f"label shape {target.shape} does not fit probabilities {probs.shape}")
    logp = nn.log(nn.clamp_min(probs, LOG_CLAMP))
    per_step = -(logp * onehot).sum(axis=-1)
    return per_step.mean()


def loss_mtl(true_pos, pred_pos, true_actions, probs, lam: float = 1.0) -> Tensor:
    return loss_tp(true_pos, pred_pos) + lam * loss_action(true_actions, probs)


def model_loss(model: Model, batch: Batch, lam: float | None = None) -> Tensor:
    """Task loss for one batch, built on the active tape (if any)."""
    spec = model.spec
    lam = spec.lam if lam is None else lam
    vel, logits = model(batch.features, batch.agent)
    loss = None
    if vel is not None:
        pred = integrate(np.zeros((len(batch), 2)), vel)
        loss = loss_tp(batch.future_rel, pred)
    if logits is not None:
        la = loss_action(batch.future_actions, nn.softmax(logits, axis=-1))
        loss = la if loss is None else loss + lam * la
    return loss


# metrics -------------------------------------------------------------------

def _displacements(true_pos, pred_pos) -> np.ndarray:
    true, pred = np.asarray(true_pos, float), np.asarray(pred_pos, float)
    if true.shape != pred.shape or true.shape[-1] != 2:
        raise MetricError(f"position shapes differ: {true.shape} vs {pred.shape}")
    return np.linalg.norm(true - pred, axis=-1)


def ade(true_pos, pred_pos) -> float:
    """Mean L2 error over steps (and over samples for batched input)."""
    return float(_displacements(true_pos, pred_pos).mean())


def fde(true_pos, pred_pos) -> float:
    """L2 error at the final step (mean over samples for batched input)."""
    return float(_displacements(true_pos, pred_pos)[..., -1].mean())


def accuracy(true_actions, pred_actions) -> float:
    t, p = np.asarray(true_actions).reshape(-1), np.asarray(pred_actions).reshape(-1)
    if t.size != p.size:
        raise MetricError(f"label counts differ: {t.size} vs {p.size}")
    if t.size == 0:
        raise MetricError("empty prediction set")
    return float(np.mean(t == p))


def macro_f1(true_actions, pred_actions, vocab: Sequence | int | None = None,
             average: str = "macro") -> float:
    """Per-class F1 averaged without weights ("macro") or by support ("weighted").

    Classes absent from both truth and prediction are left out of the average.
    """
    t, p = np.asarray(true_actions).reshape(-1), np.asarray(pred_actions).reshape(-1)
    if t.size != p.size:
        raise MetricError(f"label counts differ: {t.size} vs {p.size}")
    if t.size == 0:
        raise MetricError("empty prediction set")
    if vocab is None:
        classes = np.union1d(t, p)
    elif isinstance(vocab, int):
        classes = np.arange(vocab)
    else:
        classes = list(vocab)
    scores, weights = [], []
    for c in classes:
        tp = np.sum((p == c) & (t == c))
        fp = np.sum((p == c) & (t != c))
        fn = np.sum((p != c) & (t == c))
        if tp + fp + fn == 0:
            continue
        scores.append(2 * tp / (2 * tp + fp + fn))
        weights.append(tp + fn)
    if average == "macro":
        return float(np.mean(scores))
    if average == "weighted":
        w = np.asarray(weights, float)
        return float(np.dot(scores, w) / w.sum()) if w.sum() else 0.0
    raise MetricError(f"unknown average {average!r}")


def evaluate(model: Model, batch: Batch, average: str = "macro") -> dict:
    out = predict_batch(model, batch)
    res: dict = {}
    if model.spec.predicts_trajectory:
        truth = batch.origin[:, None, :] + batch.future_rel
        res["ade"] = ade(truth, out.positions)
        res["fde"] = fde(truth, out.positions)
    if model.spec.predicts_actions:
        res["acc"] = accuracy(batch.future_actions, out.action_indices)
        res["f1"] = macro_f1(batch.future_actions, out.action_indices,
                             model.spec.action_vocab_size, average)
    return res


# training ------------------------------------------------------------------

@dataclass
class TrainSpec:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    max_epochs: int = 200
    early_stop_patience: int = 10
    seed: int = 0
    lam: float | None = None
    dtype: str = "float32"
    max_steps: int | None = None
    f1_average: str = "macro"

    def validate(self) -> None:
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainSpec":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown train spec field(s): {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


class EarlyStopping:
    """Track the best validation loss; ``stop`` turns true after ``patience`` non-improving epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = -1
        self.bad_epochs = 0

    def update(self, value: float, epoch: int) -> bool:
        """Record one epoch; return True when it is the new best."""
        if value < self.best:
            self.best, self.best_epoch, self.bad_epochs = value, epoch, 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def stop(self) -> bool:
        return self.bad_epochs >= self.patience


@dataclass
class FoldResult:
    state: dict
    metrics: dict
    epochs_run: int
    best_epoch: int
    steps: int
    history: list = field(default_factory=list)


def _batch_loss_value(model: Model, batch: Batch, lam: float, chunk: int = 512) -> float:
    total = 0.0
    for lo in range(0, len(batch), chunk):
        part = batch.take(slice(lo, lo + chunk))
        total += model_loss(model, part, lam).item() * len(part)
    return total / len(batch)


def train_fold(train: Sequence[Tracklet] | Batch, val: Sequence[Tracklet] | Batch,
               model_spec: ModelSpec, train_spec: TrainSpec,
               vocab: Vocabulary | None = None) -> FoldResult:
    """Mini-batch Adam with early stopping on validation loss; returns the best checkpoint."""
    train_spec.validate()
    dtype = np.dtype(train_spec.dtype)
    lam = model_spec.lam if train_spec.lam is None else train_spec.lam
    if not isinstance(train, Batch):
        train = make_batch(train, vocab, model_spec.use_actions_in_input, dtype)
    if not isinstance(val, Batch):
        val = make_batch(val, vocab, model_spec.use_actions_in_input, dtype)
    if len(train) == 0 or len(val) == 0:
        raise ValueError("train and validation splits must be non-empty")
    model = build_model(model_spec, train_spec.seed, dtype)
    params = model.parameters()
    opt = nn.Adam(params, train_spec.lr, (train_spec.beta1, train_spec.beta2), train_spec.eps)
    rng = np.random.default_rng(train_spec.seed + 1)
    stopper = EarlyStopping(train_spec.early_stop_patience)
    best_state = model.state_dict()
    history = []
    epoch = 0
    while epoch < train_spec.max_epochs:
        order = rng.permutation(len(train))
        train_total = 0.0
        for lo in range(0, len(train), train_spec.batch_size):
            if train_spec.max_steps is not None and opt.t >= train_spec.max_steps:
                break
            mb = train.take(order[lo:lo + train_spec.batch_size])
            opt.zero_grad()
            with nn.Tape() as tape:
                loss = model_loss(model, mb, lam)
            value = loss.item()
            if not math.isfinite(value):
                raise NumericalError(f"non-finite training loss at step {opt.t + 1}")
            tape.backward(loss)
            opt.step()
            train_total += value * len(mb)
        epoch += 1
        val_loss = _batch_loss_value(model, val, lam)
        if not math.isfinite(val_loss):
            raise NumericalError(f"non-finite validation loss at epoch {epoch}")
        history.append({"epoch": epoch, "train_loss": train_total / len(train),
                        "val_loss": val_loss})
        if stopper.update(val_loss, epoch):
            best_state = model.state_dict()
        if stopper.stop:
            break
        if train_spec.max_steps is not None and opt.t >= train_spec.max_steps:
            break
    model.load_state_dict(best_state)
    metrics = evaluate(model, val, train_spec.f1_average)
    metrics["val_loss"] = stopper.best
    return FoldResult(best_state, metrics, epoch, stopper.best_epoch, opt.t, history)


# cross-validation ----------------------------------------------------------

@dataclass
class MetricsReport:
    per_fold: list[dict]
    aggregate: dict

    @classmethod
    def from_folds(cls, per_fold: list[dict]) -> "MetricsReport":
        keys = [k for k in ("ade", "fde", "acc", "f1") if all(k in f for f in per_fold)]
        agg = {}
        for k in keys:
            vals = np.array([f[k] for f in per_fold], float)
            agg[k] = {"mean": float(vals.mean()), "std": float(vals.std())}
        return cls(per_fold, agg)

    def records(self) -> list[dict]:
        rows = [{"record": "fold", **f} for f in self.per_fold]
        rows.append({"record": "aggregate", "k": len(self.per_fold), **self.aggregate})
        return rows

    def table(self) -> str:
        keys = list(self.aggregate)
        lines = ["fold  " + "  ".join(f"{k:>14}" for k in keys)]
        for f in self.per_fold:
            lines.append(f"{f['fold']:>4}  " + "  ".join(f"{f[k]:>14.4f}" for k in keys))
        lines.append("mean  " + "  ".join(
            f"{self.aggregate[k]['mean']:>7.4f}±{self.aggregate[k]['std']:<6.4f}" for k in keys))
        return "\n".join(lines)


def _run_fold(args):
    fold, train, val, model_spec, train_spec = args
    res = train_fold(train, val, model_spec, train_spec)
    log.info("fold %d: %s after %d epochs", fold, res.metrics, res.epochs_run)
    return fold, res


def cross_validate(tracklets: Sequence[Tracklet], model_spec: ModelSpec, train_spec: TrainSpec,
                   vocab: Vocabulary, k: int = 5, folds: FoldAssignment | None = None,
                   jobs: int = 1) -> tuple[MetricsReport, list[FoldResult]]:
    """Train on k-1 folds, validate on the held-out one, for each fold in turn."""
    folds = folds or assign_folds(tracklets, k, train_spec.seed)
    dtype = np.dtype(train_spec.dtype)
    jobs_args = []
    for i in range(folds.k):
        tr, va = folds.split(tracklets, i)
        jobs_args.append((i, make_batch(tr, vocab, model_spec.use_actions_in_input, dtype),
                          make_batch(va, vocab, model_spec.use_actions_in_input, dtype),
                          model_spec, train_spec))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = dict(pool.map(_run_fold, jobs_args))
    else:
        results = dict(map(_run_fold, jobs_args))
    ordered = [results[i] for i in range(folds.k)]
    per_fold = [{"fold": i, **{k: v for k, v in r.metrics.items() if k != "val_loss"},
                 "val_loss": r.metrics["val_loss"], "epochs": r.epochs_run}
                for i, r in enumerate(ordered)]
    return MetricsReport.from_folds(per_fold), ordered
