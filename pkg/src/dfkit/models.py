"""Classifier model: pluggable backbone plus a two-dense-layer sigmoid head.

Backbones map one input array to a fixed-size embedding. Two toy families
ship with the package (a single dense layer over flattened input, and a
tiny 3x3 conv stack); full-scale feature extractors plug in through the
external-backbone registry. The head is dense(embed -> hidden) -> ReLU ->
dense(hidden -> 1) -> sigmoid.

Everything is float64 and processed one sample at a time, so batched calls
are bit-identical to singleton calls and gradients have no reduction-order
ambiguity.
"""

from __future__ import annotations

import io
import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import ConfigError, DataError

CHECKPOINT_FORMAT_VERSION = 1

_CONV_FILTERS = 3 * 3  # fixed 3x3 kernel
_TOY_CONV_CHANNELS = 4  # filter count of the toy conv backbone

_SCORE_MIN = float(np.nextafter(0.0, 1.0))
_SCORE_MAX = float(np.nextafter(1.0, 0.0))


def sigmoid(z: float) -> float:
    """Numerically stable sigmoid, clipped into the open interval (0, 1)."""
    if z >= 0:
        p = 1.0 / (1.0 + np.exp(-z))
    else:
        e = np.exp(z)
        p = e / (1.0 + e)
    return float(min(max(p, _SCORE_MIN), _SCORE_MAX))


class Param(NamedTuple):
    name: str
    array: np.ndarray
    trainable: bool


@dataclass(frozen=True)
class BackboneSpec:
    """Configuration that fully determines a backbone realization.

    ``input_shape`` is (H, W, C) for image backbones; flat feature vectors
    (as produced by the synthetic generator) use a 1-tuple ``(dim,)``.
    Toy kinds are deterministic functions of (kind, input_shape, embed_dim,
    seed); ``external`` resolves ``external_id`` through the registry.
    """

    kind: str
    input_shape: tuple[int, ...]
    embed_dim: int
    seed: int = 0
    external_id: str | None = None
    trainable: bool = True

    def __post_init__(self):
        if self.kind not in ("toy_mlp", "toy_conv", "external"):
            raise ConfigError(f"unknown backbone kind {self.kind!r}")
        shape = tuple(int(s) for s in self.input_shape)
        if not shape or any(s < 1 for s in shape):
            raise ConfigError(f"invalid input_shape {self.input_shape!r}")
        object.__setattr__(self, "input_shape", shape)
        if self.embed_dim < 1:
            raise ConfigError(f"embed_dim must be >= 1, got {self.embed_dim}")
        if self.kind == "toy_conv" and (len(shape) != 3):
            raise ConfigError("toy_conv requires an (H, W, C) input shape")
        if self.kind == "external" and not self.external_id:
            raise ConfigError("external backbone requires external_id")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "input_shape": list(self.input_shape),
            "embed_dim": self.embed_dim,
            "seed": self.seed,
            "external_id": self.external_id,
            "trainable": self.trainable,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BackboneSpec":
        return cls(
            kind=data["kind"],
            input_shape=tuple(data["input_shape"]),
            embed_dim=int(data["embed_dim"]),
            seed=int(data.get("seed", 0)),
            external_id=data.get("external_id"),
            trainable=bool(data.get("trainable", True)),
        )


def _fan_in_uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Backbone:
    """Feature extractor interface; subclass to adapt external models."""

    spec: BackboneSpec

    def param_arrays(self) -> dict[str, np.ndarray]:
        """Ordered mapping of parameter name -> array. Empty if stateless."""
        return {}

    def forward_one(self, x: np.ndarray):
        """Return (embedding, cache); cache feeds backward_one."""
        raise NotImplementedError

    def backward_one(self, cache, d_embed: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of the loss w.r.t. param_arrays given d(loss)/d(embedding)."""
        raise NotImplementedError(
            f"backbone {self.spec.kind!r} does not support training"
        )


class ToyMlpBackbone(Backbone):
    """Flatten -> dense -> tanh. Parameters: weight (d, embed), bias (embed)."""

    def __init__(self, spec: BackboneSpec):
        self.spec = spec
        d = int(np.prod(spec.input_shape))
        rng = np.random.default_rng(spec.seed)
        self.weight = _fan_in_uniform(rng, d, (d, spec.embed_dim))
        self.bias = np.zeros(spec.embed_dim)

    def param_arrays(self):
        return {"weight": self.weight, "bias": self.bias}

    def forward_one(self, x):
        flat = np.ascontiguousarray(x, dtype=np.float64).reshape(-1)
        emb = np.tanh(flat @ self.weight + self.bias)
        return emb, (flat, emb)

    def backward_one(self, cache, d_embed):
        flat, emb = cache
        du = d_embed * (1.0 - emb * emb)
        return {"weight": np.outer(flat, du), "bias": du}


class ToyConvBackbone(Backbone):
    """3x3 same-padding conv -> ReLU -> global mean pool -> dense -> tanh.

    Parameters: conv_weight (3, 3, C, F), conv_bias (F), proj_weight
    (F, embed), proj_bias (embed), with F = 4 filters.
    """

    def __init__(self, spec: BackboneSpec):
        self.spec = spec
        _, _, c = spec.input_shape
        f = _TOY_CONV_CHANNELS
        rng = np.random.default_rng(spec.seed)
        self.conv_weight = _fan_in_uniform(rng, _CONV_FILTERS * c, (3, 3, c, f))
        self.conv_bias = np.zeros(f)
        self.proj_weight = _fan_in_uniform(rng, f, (f, spec.embed_dim))
        self.proj_bias = np.zeros(spec.embed_dim)

    def param_arrays(self):
        return {
            "conv_weight": self.conv_weight,
            "conv_bias": self.conv_bias,
            "proj_weight": self.proj_weight,
            "proj_bias": self.proj_bias,
        }

    @staticmethod
    def _im2col(x: np.ndarray) -> np.ndarray:
        h, w, c = x.shape
        padded = np.zeros((h + 2, w + 2, c))
        padded[1:-1, 1:-1, :] = x
        cols = np.empty((h * w, 9 * c))
        for k, (di, dj) in enumerate((i, j) for i in range(3) for j in range(3)):
            cols[:, k * c : (k + 1) * c] = padded[di : di + h, dj : dj + w, :].reshape(
                h * w, c
            )
        return cols

    def forward_one(self, x):
        x = np.asarray(x, dtype=np.float64)
        h, w, c = x.shape
        cols = self._im2col(x)
        pre = cols @ self.conv_weight.reshape(9 * c, -1) + self.conv_bias
        act = np.maximum(pre, 0.0)
        pooled = act.sum(axis=0) / (h * w)
        emb = np.tanh(pooled @ self.proj_weight + self.proj_bias)
        return emb, (cols, pre, pooled, emb)

    def backward_one(self, cache, d_embed):
        cols, pre, pooled, emb = cache
        h_w = pre.shape[0]
        dv = d_embed * (1.0 - emb * emb)
        d_proj_w = np.outer(pooled, dv)
        d_pooled = self.proj_weight @ dv
        d_act = np.broadcast_to(d_pooled / h_w, pre.shape)
        d_pre = np.where(pre > 0.0, d_act, 0.0)
        d_conv_w = (cols.T @ d_pre).reshape(self.conv_weight.shape)
        return {
            "conv_weight": d_conv_w,
            "conv_bias": d_pre.sum(axis=0),
            "proj_weight": d_proj_w,
            "proj_bias": dv,
        }


_EXTERNAL_BACKBONES: dict[str, Callable[[BackboneSpec], Backbone]] = {}


def register_backbone(external_id: str, factory: Callable[[BackboneSpec], Backbone]):
    """Register a factory for ``BackboneSpec(kind="external", external_id=...)``.

    The repo ships no external backbones; adapters for full-scale feature
    extractors hook in here without touching the rest of the pipeline.
    """
    _EXTERNAL_BACKBONES[external_id] = factory


def _realize_backbone(spec: BackboneSpec) -> Backbone:
    if spec.kind == "toy_mlp":
        return ToyMlpBackbone(spec)
    if spec.kind == "toy_conv":
        return ToyConvBackbone(spec)
    factory = _EXTERNAL_BACKBONES.get(spec.external_id)
    if factory is None:
        raise ConfigError(f"external backbone {spec.external_id!r} not registered")
    return factory(spec)


class ClassifierHead:
    """dense(embed -> hidden) -> ReLU -> dense(hidden -> 1) -> sigmoid.

    Parameter count is embed*hidden + hidden + hidden + 1.
    """

    def __init__(self, embed_dim: int, hidden: int, seed: int):
        if hidden < 1:
            raise ConfigError(f"head hidden width must be >= 1, got {hidden}")
        self.embed_dim = embed_dim
        self.hidden = hidden
        # Separate stream from the backbone initializer so spec.seed == seed
        # does not replay the same draws.
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x_6EAD]))
        self.w1 = _fan_in_uniform(rng, embed_dim, (embed_dim, hidden))
        self.b1 = np.zeros(hidden)
        self.w2 = _fan_in_uniform(rng, hidden, (hidden, 1))
        self.b2 = np.zeros(1)

    def param_arrays(self):
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def forward_one(self, emb: np.ndarray):
        z1 = emb @ self.w1 + self.b1
        a1 = np.maximum(z1, 0.0)
        z2 = float(a1 @ self.w2[:, 0] + self.b2[0])
        return sigmoid(z2), (emb, z1, a1)

    def backward_one(self, cache, d_z2: float):
        """Given d(loss)/d(logit), return (head grads, d(loss)/d(embedding))."""
        emb, z1, a1 = cache
        grads = {
            "w2": (a1 * d_z2)[:, None],
            "b2": np.array([d_z2]),
        }
        d_a1 = d_z2 * self.w2[:, 0]
        d_z1 = np.where(z1 > 0.0, d_a1, 0.0)
        grads["w1"] = np.outer(emb, d_z1)
        grads["b1"] = d_z1
        d_emb = self.w1 @ d_z1
        return grads, d_emb


@dataclass
class ClassifierModel:
    """A realized backbone plus head, with stable parameter enumeration."""

    model_id: str
    backbone: Backbone
    head: ClassifierHead
    spec: BackboneSpec = field(init=False)

    def __post_init__(self):
        self.spec = self.backbone.spec

    def parameters(self, trainable_only: bool = False) -> list[Param]:
        """Backbone arrays first, then head arrays, in construction order."""
        params = [
            Param(f"backbone.{name}", arr, self.spec.trainable)
            for name, arr in self.backbone.param_arrays().items()
        ]
        params += [
            Param(f"head.{name}", arr, True)
            for name, arr in self.head.param_arrays().items()
        ]
        if trainable_only:
            params = [p for p in params if p.trainable]
        return params

    def param_dict(self, trainable_only: bool = False) -> dict[str, np.ndarray]:
        return {p.name: p.array for p in self.parameters(trainable_only)}

    def set_parameters(self, arrays: dict[str, np.ndarray]):
        """Replace parameter arrays by qualified name, validating shapes."""
        for name, value in arrays.items():
            scope, _, attr = name.partition(".")
            owner = {"backbone": self.backbone, "head": self.head}.get(scope)
            if owner is None or attr not in owner.param_arrays():
                raise ConfigError(f"unknown parameter {name!r}")
            current = owner.param_arrays()[attr]
            value = np.asarray(value, dtype=np.float64)
            if value.shape != current.shape:
                raise ConfigError(
                    f"parameter {name!r} expects shape {current.shape}, "
                    f"got {value.shape}"
                )
            setattr(owner, attr, value)


def build_model(
    spec: BackboneSpec,
    head_hidden: int = 256,
    seed: int = 0,
    model_id: str | None = None,
) -> ClassifierModel:
    """Realize the backbone and initialize the head.

    Identical (spec, head_hidden, seed) produce bit-identical parameters:
    backbone weights come from spec.seed, head weights from ``seed``.
    """
    backbone = _realize_backbone(spec)
    head = ClassifierHead(spec.embed_dim, head_hidden, seed)
    if model_id is None:
        model_id = f"{spec.kind}-e{spec.embed_dim}-h{head_hidden}-s{seed}"
    return ClassifierModel(model_id=model_id, backbone=backbone, head=head)


def forward_one(model: ClassifierModel, x: np.ndarray) -> float:
    """Score one sample; pure function of (parameters, input)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != model.spec.input_shape:
        raise DataError(
            f"input shape {x.shape} does not match model input "
            f"{model.spec.input_shape}"
        )
    if not np.all(np.isfinite(x)):
        raise DataError("non-finite values in model input")
    emb, _ = model.backbone.forward_one(x)
    score, _ = model.head.forward_one(emb)
    return score


def forward(model: ClassifierModel, batch) -> list[float]:
    """Score a batch in order. Each sample is processed independently, so
    results are identical to singleton calls."""
    if len(batch) == 0:
        raise DataError("empty batch")
    return [forward_one(model, x) for x in batch]


def count_params(model, trainable_only: bool = False) -> int:
    """Exact element count over the parameter enumeration."""
    return sum(int(p.array.size) for p in model.parameters(trainable_only))


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(model: ClassifierModel, path_or_file, head_hidden: int | None = None):
    """Write a self-describing checkpoint: spec, head config, named arrays."""
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "model_id": model.model_id,
        "backbone": model.spec.to_dict(),
        "head_hidden": model.head.hidden if head_hidden is None else head_hidden,
    }
    arrays = {f"param/{name}": arr for name, arr in model.param_dict().items()}
    np.savez(path_or_file, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_checkpoint(path_or_file) -> ClassifierModel:
    """Reconstruct a model from a checkpoint written by save_checkpoint."""
    try:
        with np.load(path_or_file, allow_pickle=False) as bundle:
            if "__meta__" not in bundle:
                raise DataError("not a dfkit checkpoint: missing metadata entry")
            meta = json.loads(str(bundle["__meta__"][()]))
            arrays = {
                key[len("param/") :]: np.asarray(bundle[key], dtype=np.float64)
                for key in bundle.files
                if key.startswith("param/")
            }
    except DataError:
        raise
    except Exception as exc:
        raise DataError(f"cannot read checkpoint: {exc}") from None
    version = meta.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise DataError(f"unsupported checkpoint format version {version!r}")
    spec = BackboneSpec.from_dict(meta["backbone"])
    model = build_model(spec, head_hidden=int(meta["head_hidden"]), model_id=meta["model_id"])
    expected = set(model.param_dict())
    if set(arrays) != expected:
        raise DataError(
            f"checkpoint arrays {sorted(arrays)} do not match model "
            f"parameters {sorted(expected)}"
        )
    model.set_parameters(arrays)
    return model


def checkpoint_nbytes(model: ClassifierModel) -> int:
    """Serialized checkpoint size in bytes (in-memory round trip)."""
    buf = io.BytesIO()
    save_checkpoint(model, buf)
    return buf.tell()


# ---------------------------------------------------------------------------
# Profiling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProfileRecord:
    """Measurement row: parameter count, mean latency, serialized size."""

    model_id: str
    param_count: int
    inference_ms: float
    size_mb: float


def profile(
    model: ClassifierModel,
    batch_of_1,
    warmup: int = 3,
    reps: int = 10,
) -> ProfileRecord:
    """Time single-sample inference after warmup; report mean ms/sample."""
    if reps < 1:
        raise ConfigError(f"reps must be >= 1, got {reps}")
    if len(batch_of_1) != 1:
        raise ConfigError("profile expects a batch of exactly one sample")
    for _ in range(warmup):
        forward(model, batch_of_1)
    timings = []
    for _ in range(reps):
        start = time.perf_counter()
        forward(model, batch_of_1)
        timings.append((time.perf_counter() - start) * 1e3)
    mean_ms = math.fsum(timings) / len(timings)
    return ProfileRecord(
        model_id=model.model_id,
        param_count=count_params(model),
        inference_ms=mean_ms,
        size_mb=checkpoint_nbytes(model) / 1e6,
    )


def format_profile_row(name: str, record: ProfileRecord) -> str:
    """Render one model-comparison row: name & params (M) & ms & MB."""
    return (
        f"{name} & {record.param_count / 1e6:.1f} & "
        f"{record.inference_ms:.1f} & {record.size_mb:.0f}"
    )
