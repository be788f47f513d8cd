"""Dataset manifests, class weights, preprocessing and synthetic data.

A manifest is a line-delimited UTF-8 file: one sample per line, written as
``key=value`` tokens (shell-style quoting for values with spaces). Lines
starting with ``#`` and blank lines are ignored. Required keys are
``sample_id``, ``label`` (``real``/``fake``) and ``split``
(``train``/``val``/``test``); exactly one of ``path`` (image file) or
``inline`` (hex-encoded little-endian float64 vector) names the pixel
source.
"""

from __future__ import annotations

import math
import shlex
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError

LABEL_REAL = 0
LABEL_FAKE = 1

LABEL_TOKENS = {"real": LABEL_REAL, "fake": LABEL_FAKE}
LABEL_NAMES = {LABEL_REAL: "real", LABEL_FAKE: "fake"}
SPLITS = ("train", "val", "test")

# Conventional channel statistics for pretrained backbones; override per
# backbone config when an external feature extractor expects different ones.
DEFAULT_TARGET = (224, 224)
DEFAULT_MEAN = (0.485, 0.456, 0.406)
DEFAULT_STD = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class SampleRecord:
    """One labeled image: identity, pixel source, label and split."""

    sample_id: str
    label: int
    split: str
    path: str | None = None
    inline: np.ndarray | None = None

    def __post_init__(self):
        if self.label not in (LABEL_REAL, LABEL_FAKE):
            raise DataError(f"label must be 0 (real) or 1 (fake), got {self.label!r}")
        if self.split not in SPLITS:
            raise DataError(f"unknown split {self.split!r}")
        if (self.path is None) == (self.inline is None):
            raise DataError(
                f"sample {self.sample_id!r} needs exactly one of path or inline"
            )
        if self.inline is not None:
            arr = np.asarray(self.inline, dtype=np.float64)
            if arr.ndim != 1 or arr.size == 0:
                raise DataError(
                    f"inline source of {self.sample_id!r} must be a nonempty vector"
                )
            object.__setattr__(self, "inline", arr)


@dataclass(frozen=True)
class DatasetManifest:
    """Immutable collection of SampleRecords with per-(split, label) counts.

    ``counts`` maps split -> {"real": n, "fake": n} and is always recomputed
    from the records; passing explicit counts that disagree is a validation
    error.
    """

    records: tuple[SampleRecord, ...]
    counts: dict[str, dict[str, int]] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        records = tuple(self.records)
        object.__setattr__(self, "records", records)
        seen = set()
        for rec in records:
            if rec.sample_id in seen:
                raise DataError(f"duplicate sample_id: {rec.sample_id}")
            seen.add(rec.sample_id)
        tallies = _tally(records)
        if self.counts is not None and dict(self.counts) != tallies:
            raise DataError(
                f"manifest counts {self.counts!r} do not match records {tallies!r}"
            )
        object.__setattr__(self, "counts", tallies)

    def split_records(self, split: str) -> tuple[SampleRecord, ...]:
        if split not in SPLITS:
            raise DataError(f"unknown split {split!r}")
        return tuple(r for r in self.records if r.split == split)

    def split_counts(self, split: str) -> dict[str, int]:
        return self.counts.get(split, {"real": 0, "fake": 0})


def _tally(records) -> dict[str, dict[str, int]]:
    counts: dict[str, dict[str, int]] = {}
    for rec in records:
        per = counts.setdefault(rec.split, {"real": 0, "fake": 0})
        per[LABEL_NAMES[rec.label]] += 1
    return counts


# ---------------------------------------------------------------------------
# Manifest file I/O
# ---------------------------------------------------------------------------

_MANIFEST_HEADER = "# dfkit manifest v1"


def _encode_inline(vec: np.ndarray) -> str:
    return np.asarray(vec, dtype="<f8").tobytes().hex()


def _decode_inline(text: str) -> np.ndarray:
    try:
        raw = bytes.fromhex(text)
    except ValueError as exc:
        raise DataError(f"inline value is not valid hex: {exc}") from None
    if len(raw) == 0 or len(raw) % 8 != 0:
        raise DataError("inline value must encode a nonempty float64 vector")
    return np.frombuffer(raw, dtype="<f8").astype(np.float64)


def _parse_line(line: str, lineno: int) -> SampleRecord:
    try:
        tokens = shlex.split(line, comments=False)
    except ValueError as exc:
        raise DataError(f"malformed line {lineno}: {exc}") from None
    fields: dict[str, str] = {}
    for tok in tokens:
        key, sep, value = tok.partition("=")
        if not sep or not key:
            raise DataError(f"malformed line {lineno}: expected key=value, got {tok!r}")
        if key in fields:
            raise DataError(f"malformed line {lineno}: repeated key {key!r}")
        fields[key] = value

    unknown = set(fields) - {"sample_id", "label", "split", "path", "inline"}
    if unknown:
        raise DataError(f"malformed line {lineno}: unknown keys {sorted(unknown)}")
    for required in ("sample_id", "label", "split"):
        if required not in fields:
            raise DataError(f"malformed line {lineno}: missing {required!r}")
    if fields["label"] not in LABEL_TOKENS:
        raise DataError(
            f"malformed line {lineno}: unknown label token {fields['label']!r}"
        )
    if fields["split"] not in SPLITS:
        raise DataError(
            f"malformed line {lineno}: unknown split token {fields['split']!r}"
        )
    if ("path" in fields) == ("inline" in fields):
        raise DataError(
            f"malformed line {lineno}: exactly one of path/inline is required"
        )
    inline = _decode_inline(fields["inline"]) if "inline" in fields else None
    return SampleRecord(
        sample_id=fields["sample_id"],
        label=LABEL_TOKENS[fields["label"]],
        split=fields["split"],
        path=fields.get("path"),
        inline=inline,
    )


def load_manifest(path: str | Path) -> DatasetManifest:
    """Load and validate a manifest file; counts are computed from records."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest file not found: {path}")
    records = []
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            records.append(_parse_line(stripped, lineno))
    if not records:
        raise DataError("empty manifest")
    return DatasetManifest(records=tuple(records))


def write_manifest(manifest: DatasetManifest, path: str | Path) -> Path:
    """Write a manifest in the line-delimited key=value format."""
    path = Path(path)
    lines = [_MANIFEST_HEADER]
    for rec in manifest.records:
        parts = [
            f"sample_id={shlex.quote(rec.sample_id)}",
            f"label={LABEL_NAMES[rec.label]}",
            f"split={rec.split}",
        ]
        if rec.path is not None:
            parts.append(f"path={shlex.quote(rec.path)}")
        else:
            parts.append(f"inline={_encode_inline(rec.inline)}")
        lines.append(" ".join(parts))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# Class imbalance
# ---------------------------------------------------------------------------


def class_weight(n_real: int, n_fake: int) -> float:
    """Multiplier applied to real-class (minority) loss terms.

    w = n_fake / n_real equalizes the expected per-class gradient mass when
    fake samples outnumber real ones.
    """
    if n_real <= 0 or n_fake <= 0:
        raise DataError(
            f"class weight undefined for counts real={n_real}, fake={n_fake}"
        )
    return n_fake / n_real


# ---------------------------------------------------------------------------
# Image preprocessing
# ---------------------------------------------------------------------------


def preprocess(
    raw,
    target: tuple[int, int] = DEFAULT_TARGET,
    *,
    mean: tuple[float, float, float] = DEFAULT_MEAN,
    std: tuple[float, float, float] = DEFAULT_STD,
) -> np.ndarray:
    """Decode, resize and normalize an image to an H x W x 3 float64 tensor.

    Accepts a file path, a PIL image, or a numeric array (H x W or
    H x W x {1,3}); array values are interpreted on the 0..255 scale
    regardless of dtype. Resizing is bilinear per channel; grayscale input
    is replicated across 3 channels; output values are
    (pixel/255 - mean_c) / std_c.
    """
    arr = _decode_to_array(raw)
    h, w = int(target[0]), int(target[1])
    if h < 1 or w < 1:
        raise ConfigError(f"target shape must be positive, got {target!r}")
    if arr.shape[:2] != (h, w):
        arr = _resize_bilinear(arr, (h, w))
    arr = arr / 255.0
    out = (arr - np.asarray(mean, dtype=np.float64)) / np.asarray(std, dtype=np.float64)
    if not np.all(np.isfinite(out)):
        raise DataError("preprocessed image contains non-finite values")
    return out


def _decode_to_array(raw) -> np.ndarray:
    if isinstance(raw, (str, Path)):
        try:
            with Image.open(raw) as img:
                img = img.convert("RGB")
                arr = np.asarray(img, dtype=np.float64)
        except DataError:
            raise
        except Exception as exc:
            raise DataError(f"cannot decode image {raw!r}: {exc}") from None
    elif isinstance(raw, Image.Image):
        arr = np.asarray(raw.convert("RGB"), dtype=np.float64)
    else:
        arr = np.asarray(raw, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise DataError(f"expected H x W x {{1,3}} image, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DataError(f"zero-size image: shape {arr.shape}")
    if arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    return arr


def _resize_bilinear(arr: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    h, w = target
    channels = []
    for c in range(arr.shape[2]):
        img = Image.fromarray(arr[:, :, c].astype(np.float32), mode="F")
        channels.append(
            np.asarray(img.resize((w, h), Image.BILINEAR), dtype=np.float64)
        )
    return np.stack(channels, axis=2)


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------


def class_direction(seed: int, dim: int) -> np.ndarray:
    """Unit vector separating the synthetic classes, determined by seed.

    Exposed so oracle classifiers can recompute the generating direction.
    """
    if dim < 1:
        raise ConfigError(f"dim must be >= 1, got {dim}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x_D1F]))
    vec = rng.standard_normal(dim)
    return vec / np.linalg.norm(vec)


def synth_dataset(
    seed: int,
    n_real: int,
    n_fake: int,
    dim: int,
    separation: float,
    split_fractions: tuple[float, float, float] = (0.7, 0.15, 0.15),
) -> DatasetManifest:
    """Deterministic two-Gaussian dataset with inline feature vectors.

    Real samples are drawn from N(-(separation/2) u, I) and fake samples
    from N(+(separation/2) u, I), where u = class_direction(seed, dim).
    Sample ids are "synth-<index>"; each class is sliced into train/val/test
    by ``split_fractions`` in id order.
    """
    if n_real < 0 or n_fake < 0:
        raise ConfigError("sample counts must be >= 0")
    if dim < 1:
        raise ConfigError(f"dim must be >= 1, got {dim}")
    if separation < 0:
        raise ConfigError(f"separation must be >= 0, got {separation}")
    fracs = tuple(float(f) for f in split_fractions)
    if len(fracs) != 3 or any(f < 0 for f in fracs) or not math.isclose(
        sum(fracs), 1.0, rel_tol=0, abs_tol=1e-9
    ):
        raise ConfigError(f"split fractions must be >= 0 and sum to 1, got {fracs!r}")

    direction = class_direction(seed, dim)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x_DA7A]))
    offset = (separation / 2.0) * direction

    records = []
    index = 0
    for label, count, sign in ((LABEL_REAL, n_real, -1.0), (LABEL_FAKE, n_fake, 1.0)):
        features = rng.standard_normal((count, dim)) + sign * offset
        splits = _split_assignment(count, fracs)
        for i in range(count):
            records.append(
                SampleRecord(
                    sample_id=f"synth-{index}",
                    label=label,
                    split=splits[i],
                    inline=features[i],
                )
            )
            index += 1
    return DatasetManifest(records=tuple(records))


def _split_assignment(count: int, fracs: tuple[float, float, float]) -> list[str]:
    n_train = int(count * fracs[0])
    n_val = int(count * fracs[1])
    out = ["train"] * n_train + ["val"] * n_val
    out += ["test"] * (count - len(out))
    return out


def with_label_noise(
    manifest: DatasetManifest,
    fraction: float,
    seed: int,
    splits: tuple[str, ...] = ("train",),
) -> DatasetManifest:
    """Return a copy with ``fraction`` of the labels flipped in the given splits.

    The flipped subset is a seeded uniform draw without replacement;
    evaluation splits are usually left clean.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ConfigError(f"noise fraction must be in [0, 1], got {fraction}")
    idx = [i for i, r in enumerate(manifest.records) if r.split in splits]
    n_flip = int(round(fraction * len(idx)))
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x_F11B]))
    flip = set(rng.choice(len(idx), size=n_flip, replace=False).tolist()) if n_flip else set()
    records = list(manifest.records)
    for j, i in enumerate(idx):
        if j in flip:
            records[i] = replace(records[i], label=1 - records[i].label)
    return DatasetManifest(records=tuple(records))


# ---------------------------------------------------------------------------
# Feature materialization
# ---------------------------------------------------------------------------


def features_for_records(
    records,
    input_shape: tuple[int, ...],
    *,
    mean: tuple[float, float, float] = DEFAULT_MEAN,
    std: tuple[float, float, float] = DEFAULT_STD,
    base_dir: str | Path | None = None,
) -> tuple[list[np.ndarray], np.ndarray]:
    """Resolve records into model-ready arrays plus a label vector.

    Inline vectors must match ``prod(input_shape)`` elements and are reshaped
    to ``input_shape``; path sources are decoded and preprocessed to
    ``input_shape`` which must then be (H, W, 3).
    """
    shape = tuple(int(s) for s in input_shape)
    size = int(np.prod(shape))
    xs: list[np.ndarray] = []
    ys = np.empty(len(records), dtype=np.int64)
    for i, rec in enumerate(records):
        if rec.inline is not None:
            if rec.inline.size != size:
                raise DataError(
                    f"sample {rec.sample_id!r}: inline size {rec.inline.size} "
                    f"does not match model input shape {shape}"
                )
            xs.append(rec.inline.reshape(shape))
        else:
            if len(shape) != 3 or shape[2] != 3:
                raise DataError(
                    f"sample {rec.sample_id!r}: image source requires an "
                    f"(H, W, 3) input shape, model expects {shape}"
                )
            path = Path(rec.path)
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            xs.append(preprocess(path, (shape[0], shape[1]), mean=mean, std=std))
        ys[i] = rec.label
    return xs, ys
