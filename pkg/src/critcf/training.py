"""Mini-batch Adagrad training of the scorer and bound factors together.

Each batch performs one joint update: the shared score matrix is computed
once, the combined multi-behavior loss differentiates into the scores and
the bound factors, the scorer backpropagates the score gradient into its
own parameters, and a single Adagrad step moves everything.  After every
step embedding rows are projected back into the unit ball and bound factors
are clamped to the positivity floor.

Variants share this loop:
    full  criterion loss, both bound factor matrices learned
    U     user factors frozen at 1 (bounds carried by items alone)
    I     item factors frozen at 1 (bounds carried by users alone)
    H     bounds learned, but residuals regress to the bounds (no hinge)
    O     plain 1/0 regression per behavior, no bounds, one output layer
          per behavior (gmf only for the extra layers)
"""

import copy
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError
from .losses import (
    LossConfig,
    POSITIVITY_FLOOR,
    bounded_regression_total_loss,
    criterion_total_loss,
    get_penalty,
    regression_loss,
)
from .models import MODEL_KINDS, init_bounds, init_model, project_rows
from .ranking import evaluate

ADAGRAD_EPS = 1e-8

VARIANTS = ("full", "O", "H", "U", "I")


@dataclass
class TrainConfig:
    model: str = "gmf"
    dim: int = 64
    lr: float = 0.05
    batch_size: int = 512
    epochs: int = 200
    dropout: float = 0.5
    neg_weight: float = 0.1
    bound_ratio: float = 0.5
    behavior_weights: tuple = (1.0 / 6.0, 4.0 / 6.0, 1.0 / 6.0)
    penalty: str = "square"
    seed: int = 42
    patience: int = 10
    num_layers: int = 3
    variant: str = "full"
    eval_cutoff: int = 100

    def validate(self, num_behaviors):
        if self.model not in MODEL_KINDS:
            raise ConfigError("model must be one of %s" % (MODEL_KINDS,))
        if self.variant not in VARIANTS:
            raise ConfigError("variant must be one of %s" % (VARIANTS,))
        if self.dim < 1:
            raise ConfigError("dim must be >= 1")
        if self.lr <= 0.0:
            raise ConfigError("lr must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.neg_weight < 0.0:
            raise ConfigError("neg_weight must be >= 0")
        if not 0.0 <= self.bound_ratio <= 1.0:
            raise ConfigError("bound_ratio must lie in [0, 1]")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.variant == "O" and self.model != "gmf":
            raise ConfigError("variant O uses per-behavior output layers; model must be gmf")
        self.loss_config().validate(num_behaviors)

    def loss_config(self):
        return LossConfig(self.neg_weight, tuple(self.behavior_weights),
                          get_penalty(self.penalty))


@dataclass
class TrainResult:
    model: object
    bounds: object  # None for variant O
    history: list  # (epoch, loss, val_hr, val_ndcg)
    best_epoch: int
    config: TrainConfig


class AdagradState:
    """Per-parameter accumulated squared gradients."""

    def __init__(self):
        self.acc = {}

    def ensure(self, name, shape):
        if name not in self.acc:
            self.acc[name] = np.zeros(shape)
        return self.acc[name]


def adagrad_step(params, grads, state, lr):
    """One Adagrad update over named parameter arrays, in place.

    acc += grad^2; param -= lr * grad / (sqrt(acc) + eps).  Gradients must
    be finite; a non-finite entry aborts with the parameter name.
    """
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise NumericalError("non-finite gradient for parameter %r" % name)
        acc = state.ensure(name, grad.shape)
        acc += grad * grad
        params[name] -= lr * grad / (np.sqrt(acc) + ADAGRAD_EPS)


def _trainable_params(model, bounds, variant):
    params = dict(model.param_arrays())
    if bounds is not None:
        if variant != "U":
            params["user_bound"] = bounds.user_bound
        if variant != "I":
            params["item_bound"] = bounds.item_bound
    return params


def batch_gradients(model, bounds, user_ids, positives, loss_cfg, variant="full",
                    mask=None):
    """Loss and joint gradients for one batch of users.

    Returns (loss, grads) where grads maps every trainable parameter name
    (model parameters plus unfrozen bound factors) to a dense gradient
    array.  Scores are validated to be finite before the loss is taken.
    """
    user_ids = np.asarray(user_ids, dtype=np.int64)
    num_behaviors = len(positives)

    if variant == "O":
        total = 0.0
        grads = None
        for k in range(num_behaviors):
            lam = loss_cfg.behavior_weights[k]
            scores, cache = model.score_batch(user_ids, mask=mask, layer=k)
            if not np.all(np.isfinite(scores)):
                raise NumericalError("non-finite scores in batch")
            batch_pos = [positives[k][u] for u in user_ids]
            lk, d_scores = regression_loss(scores, batch_pos, loss_cfg.neg_weight)
            gk = model.backward(cache, lam * d_scores)
            total += lam * lk
            if grads is None:
                grads = gk
            else:
                for name in grads:
                    grads[name] += gk[name]
        return total, grads

    scores, cache = model.score_batch(user_ids, mask=mask)
    if not np.all(np.isfinite(scores)):
        raise NumericalError("non-finite scores in batch")
    if variant == "H":
        loss, d_scores, d_user, d_item = bounded_regression_total_loss(
            scores, user_ids, positives, bounds, loss_cfg
        )
    else:
        loss, d_scores, d_user, d_item = criterion_total_loss(
            scores, user_ids, positives, bounds, loss_cfg
        )
    grads = model.backward(cache, d_scores)
    if variant != "U":
        d_user_full = np.zeros_like(bounds.user_bound)
        np.add.at(d_user_full, user_ids, d_user)
        grads["user_bound"] = d_user_full
    if variant != "I":
        grads["item_bound"] = d_item
    return loss, grads


def batch_loss(model, bounds, user_ids, positives, loss_cfg, variant="full", mask=None):
    """Forward-only loss of one batch (used by finite-difference checks)."""
    return batch_gradients(model, bounds, user_ids, positives, loss_cfg, variant, mask)[0]


def _apply_constraints(model, bounds):
    for name in model.embedding_param_names():
        project_rows(model.param_arrays()[name])
    if bounds is not None:
        np.maximum(bounds.user_bound, POSITIVITY_FLOOR, out=bounds.user_bound)
        np.maximum(bounds.item_bound, POSITIVITY_FLOOR, out=bounds.item_bound)


def train_epoch(train, model, bounds, state, cfg, rng, step_callback=None,
                step_offset=0):
    """One pass over all users in seeded-shuffle order; returns summed loss.

    Users are shuffled without replacement and cut into ceil(U / B) batches;
    each batch takes one joint Adagrad step followed by the projection and
    positivity clamps.
    """
    loss_cfg = cfg.loss_config()
    num_users = train.num_users
    perm = rng.permutation(num_users)
    params = _trainable_params(model, bounds, cfg.variant)
    total = 0.0
    steps = step_offset
    use_dropout = model.kind == "gmf" and cfg.dropout > 0.0
    for start in range(0, num_users, cfg.batch_size):
        batch = perm[start:start + cfg.batch_size]
        mask = None
        if use_dropout:
            keep = rng.random((len(batch), model.dim)) >= cfg.dropout
            mask = keep / (1.0 - cfg.dropout)
        loss, grads = batch_gradients(model, bounds, batch, train.positives,
                                      loss_cfg, cfg.variant, mask)
        total += loss
        adagrad_step(params, grads, state, cfg.lr)
        _apply_constraints(model, bounds)
        steps += 1
        if step_callback is not None:
            step_callback(steps, model, bounds)
    if not np.isfinite(total):
        raise NumericalError("non-finite epoch loss")
    return total, steps


def _snapshot(model, bounds):
    arrays = {name: arr.copy() for name, arr in model.param_arrays().items()}
    bound_copy = None if bounds is None else bounds.copy()
    return arrays, bound_copy


def _restore(model, snapshot):
    arrays, bounds = snapshot
    for name, arr in model.param_arrays().items():
        arr[...] = arrays[name]
    return bounds


def train(split, cfg, step_callback=None, epoch_callback=None):
    """Full training run with early stopping on validation ranking quality.

    An epoch improves when its (HR@cutoff, NDCG@cutoff) pair is
    lexicographically larger than the best so far; cfg.patience epochs
    without improvement stop the run.  NDCG participates because HR
    saturates once the candidate pool is not much larger than the cutoff.
    Returns the best-validation parameters and the full per-epoch history.
    """
    train_ds = split.train
    cfg.validate(train_ds.num_behaviors)
    rng = np.random.default_rng(cfg.seed)
    model = init_model(
        cfg.model, train_ds.num_users, train_ds.num_items, cfg.dim, rng,
        num_layers=cfg.num_layers,
        num_pred_layers=train_ds.num_behaviors if cfg.variant == "O" else 1,
        random_pred=cfg.variant == "O",
        train=train_ds,
    )
    bounds = None
    if cfg.variant != "O":
        bounds = init_bounds(train_ds.num_users, train_ds.num_items,
                             train_ds.num_behaviors, cfg.bound_ratio, rng)
        if cfg.variant == "U":
            bounds.user_bound[...] = 1.0
        elif cfg.variant == "I":
            bounds.item_bound[...] = 1.0

    state = AdagradState()
    history = []
    best_key = None
    best_epoch = 0
    best_snapshot = _snapshot(model, bounds)
    since_best = 0
    steps = 0
    cutoff = cfg.eval_cutoff
    for epoch in range(1, cfg.epochs + 1):
        loss, steps = train_epoch(train_ds, model, bounds, state, cfg, rng,
                                  step_callback, steps)
        report = evaluate(model, bounds, train_ds, split.validation, cutoffs=(cutoff,))
        hr, ndcg = report.hr[cutoff], report.ndcg[cutoff]
        history.append((epoch, loss, hr, ndcg))
        if epoch_callback is not None:
            epoch_callback(epoch, loss, hr, ndcg)
        key = (hr, ndcg)
        if best_key is None or key > best_key:
            best_key = key
            best_epoch = epoch
            best_snapshot = _snapshot(model, bounds)
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    bounds = _restore(model, best_snapshot)
    return TrainResult(model, bounds, history, best_epoch, copy.deepcopy(cfg))
