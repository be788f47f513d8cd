"""Weighted binary cross-entropy training with Adam.

The loss is L = -(1/N) sum_i [ y_i log p_i + w * (1 - y_i) log(1 - p_i) ],
with fake = 1 as the positive class and ``w`` the real-class (minority)
weight. Gradients are analytic, computed sample by sample in a fixed order,
so runs with the same seed are bit-reproducible.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import metrics, models
from .data import DatasetManifest, class_weight, features_for_records
from .errors import ConfigError, DataError

LOSS_CLAMP_EPS = 1e-7  # scores are clamped to [eps, 1 - eps] before log


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings.

    The 1e-6 default learning rate matches the published fine-tuning setup
    for full-scale backbones; toy runs want something around 1e-3.
    ``real_class_weight=None`` derives the weight from the training-split
    class counts.
    """

    learning_rate: float = 1e-6
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 30
    real_class_weight: float | None = None
    seed: int = 0
    early_stop_patience: int | None = 5

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        for name in ("adam_beta1", "adam_beta2"):
            beta = getattr(self, name)
            if not 0.0 <= beta < 1.0:
                raise ConfigError(f"{name} must be in [0, 1), got {beta}")
        if self.adam_eps <= 0:
            raise ConfigError(f"adam_eps must be > 0, got {self.adam_eps}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 0:
            raise ConfigError(f"max_epochs must be >= 0, got {self.max_epochs}")
        if self.real_class_weight is not None and self.real_class_weight <= 0:
            raise ConfigError(
                f"real_class_weight must be > 0, got {self.real_class_weight}"
            )
        if self.early_stop_patience is not None and self.early_stop_patience < 1:
            raise ConfigError(
                "early_stop_patience must be >= 1 (or None to disable), "
                f"got {self.early_stop_patience}"
            )


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_auc: float
    val_eer: float
    wall_time_s: float


def weighted_bce(scores, labels, w_real: float) -> float:
    """Class-weighted binary cross-entropy; fake = 1 is the positive class."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError(
            f"scores and labels must be equal-length vectors, got "
            f"{scores.shape} and {labels.shape}"
        )
    if scores.size == 0:
        raise ValueError("empty input")
    if w_real <= 0:
        raise ValueError(f"w_real must be > 0, got {w_real}")
    p = np.clip(scores, LOSS_CLAMP_EPS, 1.0 - LOSS_CLAMP_EPS)
    terms = labels * np.log(p) + w_real * (1.0 - labels) * np.log1p(-p)
    return float(-terms.mean())


def _loss_and_grad(model: models.ClassifierModel, batch, labels, w_real: float):
    """Mean weighted-BCE loss and its exact gradient over trainable params.

    Per-sample contributions are accumulated in batch order and divided by N
    once at the end.
    """
    labels = np.asarray(labels)
    if len(batch) != labels.size:
        raise ValueError(
            f"batch and labels must align, got {len(batch)} and {labels.size}"
        )
    if len(batch) == 0:
        raise ValueError("empty batch")
    backbone_trainable = model.spec.trainable
    grads: dict[str, np.ndarray] = {
        p.name: np.zeros_like(p.array) for p in model.parameters(trainable_only=True)
    }
    loss_sum = 0.0
    n = len(batch)
    for x, y in zip(batch, labels):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != model.spec.input_shape:
            raise DataError(
                f"input shape {x.shape} does not match model input "
                f"{model.spec.input_shape}"
            )
        if not np.all(np.isfinite(x)):
            raise DataError("non-finite values in model input")
        emb, bb_cache = model.backbone.forward_one(x)
        p, head_cache = model.head.forward_one(emb)
        pc = min(max(p, LOSS_CLAMP_EPS), 1.0 - LOSS_CLAMP_EPS)
        if y == 1:
            loss_sum += -math.log(pc)
            d_z2 = p - 1.0
        else:
            loss_sum += -w_real * math.log1p(-pc)
            d_z2 = w_real * p
        head_grads, d_emb = model.head.backward_one(head_cache, d_z2)
        for name, g in head_grads.items():
            grads[f"head.{name}"] += g
        if backbone_trainable:
            for name, g in model.backbone.backward_one(bb_cache, d_emb).items():
                grads[f"backbone.{name}"] += g
    for name in grads:
        grads[name] /= n
    return loss_sum / n, grads


def loss_gradient(model, batch, labels, w_real: float) -> dict[str, np.ndarray]:
    """Gradient of weighted_bce(forward(batch)) w.r.t. every trainable
    parameter, keyed like the model's parameter enumeration."""
    _, grads = _loss_and_grad(model, batch, labels, w_real)
    return grads


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def init_adam_state(params: dict[str, np.ndarray]) -> AdamState:
    return AdamState(
        step=0,
        m={k: np.zeros_like(a) for k, a in params.items()},
        v={k: np.zeros_like(a) for k, a in params.items()},
    )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    config: TrainConfig,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update. Pure: returns new arrays and state."""
    if set(params) != set(grads):
        raise ValueError(
            f"parameter/gradient keys differ: {sorted(set(params) ^ set(grads))}"
        )
    t = state.step + 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    new_params: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for name, theta in params.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise ValueError(
                f"gradient shape {g.shape} does not match parameter "
                f"{name!r} shape {theta.shape}"
            )
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_params[name] = theta - config.learning_rate * m_hat / (
            np.sqrt(v_hat) + config.adam_eps
        )
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(step=t, m=new_m, v=new_v)


# ---------------------------------------------------------------------------
# Fit loop
# ---------------------------------------------------------------------------


@dataclass
class FitResult:
    """Outcome of fit(): stats plus the best-val-AUC parameter snapshot.

    The model object is left at ``final_params``; apply ``best_params`` with
    model.set_parameters() to recover the selected checkpoint.
    """

    best_epoch: int | None
    best_val_auc: float | None
    best_params: dict[str, np.ndarray]
    final_params: dict[str, np.ndarray]
    stats: list[EpochStats]
    real_class_weight: float = 1.0


def _check_split(records, labels, name: str):
    if len(records) == 0:
        raise DataError(f"{name} split empty")
    present = set(int(y) for y in labels)
    if present != {0, 1}:
        raise DataError(f"{name} split single-class: needs both real and fake samples")


def fit(
    model: models.ClassifierModel,
    train_manifest: DatasetManifest,
    val_manifest: DatasetManifest,
    config: TrainConfig,
) -> FitResult:
    """Epoch loop with seeded shuffling and validation-AUC model selection.

    Stops early after ``early_stop_patience`` epochs without a strictly
    better validation AUC; the last incomplete batch of each epoch is kept.
    """
    train_records = train_manifest.split_records("train")
    if len(train_records) == 0:
        raise DataError("train split empty")
    xs_train, ys_train = features_for_records(train_records, model.spec.input_shape)
    _check_split(train_records, ys_train, "train")

    val_records = val_manifest.split_records("val")
    if len(val_records) == 0:
        raise DataError("validation split empty")
    xs_val, ys_val = features_for_records(val_records, model.spec.input_shape)
    _check_split(val_records, ys_val, "validation")

    if config.real_class_weight is not None:
        w_real = config.real_class_weight
    else:
        w_real = class_weight(
            int((ys_train == 0).sum()), int((ys_train == 1).sum())
        )

    def snapshot() -> dict[str, np.ndarray]:
        return {k: a.copy() for k, a in model.param_dict().items()}

    best_params = snapshot()
    best_auc: float | None = None
    best_epoch: int | None = None
    stats: list[EpochStats] = []
    rng = np.random.default_rng(config.seed)
    adam = init_adam_state(model.param_dict(trainable_only=True))
    n = len(xs_train)
    epochs_since_improve = 0

    for epoch in range(1, config.max_epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(n)
        loss_sum = 0.0
        for lo in range(0, n, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            batch = [xs_train[i] for i in idx]
            batch_labels = ys_train[idx]
            loss, grads = _loss_and_grad(model, batch, batch_labels, w_real)
            loss_sum += loss * len(batch)
            updated, adam = adam_step(
                model.param_dict(trainable_only=True), grads, adam, config
            )
            model.set_parameters(updated)

        val_scores = models.forward(model, xs_val)
        curve = metrics.roc_curve(val_scores, ys_val)
        val_auc = metrics.auc(curve)
        val_eer = metrics.eer(curve)
        stats.append(
            EpochStats(
                epoch=epoch,
                train_loss=loss_sum / n,
                val_auc=val_auc,
                val_eer=val_eer,
                wall_time_s=time.perf_counter() - started,
            )
        )
        if best_auc is None or val_auc > best_auc:
            best_auc = val_auc
            best_epoch = epoch
            best_params = snapshot()
            epochs_since_improve = 0
        else:
            epochs_since_improve += 1
            if (
                config.early_stop_patience is not None
                and epochs_since_improve >= config.early_stop_patience
            ):
                break

    return FitResult(
        best_epoch=best_epoch,
        best_val_auc=best_auc,
        best_params=best_params,
        final_params=snapshot(),
        stats=stats,
        real_class_weight=w_real,
    )
