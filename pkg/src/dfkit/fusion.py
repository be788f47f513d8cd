"""Score-level ensemble fusion.

Member models each emit a per-sample sigmoid score in [0, 1]; the ensemble
score is the arithmetic mean. Sums are carried in exact rational arithmetic
(every float is a dyadic rational) and rounded to float64 once, which makes
fusion exactly idempotent, permutation-invariant, and bounded by the member
min/max. Score files are CSV with ``# key = value`` metadata comments.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from fractions import Fraction

from .errors import ConfigError, DataError

_HEADER = ("sample_id", "score")


def _check_scores(scores: Mapping[str, float]) -> dict[str, float]:
    clean: dict[str, float] = {}
    for sample_id, score in scores.items():
        if not isinstance(sample_id, str) or not sample_id:
            raise DataError(f"bad sample id: {sample_id!r}")
        score = float(score)
        if not math.isfinite(score) or not 0.0 <= score <= 1.0:
            raise DataError(
                f"score for {sample_id!r} outside [0, 1]: {score!r}"
            )
        clean[sample_id] = score
    return clean


@dataclass(frozen=True)
class ScoreSet:
    """Per-sample scores from one model, in a fixed sample order."""

    model_id: str
    scores: dict[str, float]

    def __post_init__(self):
        if not self.model_id:
            raise DataError("empty model_id")
        object.__setattr__(self, "scores", _check_scores(self.scores))

    def __len__(self) -> int:
        return len(self.scores)


@dataclass(frozen=True)
class FusedScores:
    """Mean-fused scores plus the member model ids, in fusion order."""

    member_ids: tuple[str, ...]
    scores: dict[str, float]

    def __post_init__(self):
        if len(self.member_ids) == 0:
            raise DataError("fused scores need at least one member id")
        object.__setattr__(self, "member_ids", tuple(self.member_ids))
        object.__setattr__(self, "scores", _check_scores(self.scores))

    def __len__(self) -> int:
        return len(self.scores)


def fuse(score_sets: Sequence[ScoreSet]) -> FusedScores:
    """Average member scores per sample.

    Every member must cover exactly the same sample ids; the output keeps
    the first member's sample order. The mean is exact up to one final
    rounding, so fusing a set with itself returns the identical floats.
    """
    if len(score_sets) == 0:
        raise DataError("no score sets to fuse")
    base_ids = list(score_sets[0].scores)
    base_set = set(base_ids)
    for member in score_sets[1:]:
        diff = base_set.symmetric_difference(member.scores)
        if diff:
            raise DataError(
                "score coverage mismatch between "
                f"{score_sets[0].model_id!r} and {member.model_id!r}: "
                + ", ".join(sorted(diff))
            )
    k = len(score_sets)
    fused = {
        sid: float(
            sum((Fraction(member.scores[sid]) for member in score_sets), Fraction(0))
            / k
        )
        for sid in base_ids
    }
    return FusedScores(
        member_ids=tuple(member.model_id for member in score_sets), scores=fused
    )


def classify(
    scores: Mapping[str, float] | ScoreSet | FusedScores, threshold: float = 0.5
) -> dict[str, int]:
    """Threshold scores into labels: fake (1) iff score >= threshold."""
    threshold = float(threshold)
    if not 0.0 <= threshold <= 1.0:
        raise ConfigError(f"threshold must be in [0, 1], got {threshold}")
    if isinstance(scores, (ScoreSet, FusedScores)):
        scores = scores.scores
    return {sid: int(score >= threshold) for sid, score in scores.items()}


# ---------------------------------------------------------------------------
# Score files
# ---------------------------------------------------------------------------


def write_scores(path, scores: ScoreSet | FusedScores) -> None:
    """Write a score CSV; floats use repr() so reading restores exact values."""
    buf = io.StringIO()
    if isinstance(scores, FusedScores):
        buf.write(f"# member_ids = {json.dumps(list(scores.member_ids))}\n")
    elif isinstance(scores, ScoreSet):
        buf.write(f"# model_id = {scores.model_id}\n")
    else:
        raise TypeError(f"expected ScoreSet or FusedScores, got {type(scores)}")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_HEADER)
    for sample_id, score in scores.scores.items():
        writer.writerow([sample_id, repr(score)])
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(buf.getvalue())


def read_scores(path) -> ScoreSet | FusedScores:
    """Read a score CSV written by write_scores().

    Returns FusedScores when a ``# member_ids`` metadata line is present,
    otherwise a ScoreSet whose model_id falls back to the file stem.
    """
    meta: dict[str, str] = {}
    rows: list[list[str]] = []
    try:
        with open(path, encoding="utf-8", newline="") as handle:
            lines = handle.read().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read score file {path}: {exc}") from exc
    body: list[str] = []
    for line in lines:
        if line.startswith("#"):
            text = line.lstrip("#").strip()
            if " = " in text:
                key, _, value = text.partition(" = ")
                meta[key.strip()] = value.strip()
            continue
        body.append(line)
    rows = [row for row in csv.reader(body) if row]
    if not rows or tuple(rows[0]) != _HEADER:
        raise DataError(
            f"bad score file header in {path}: expected 'sample_id,score'"
        )
    scores: dict[str, float] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 2:
            raise DataError(f"malformed score row {lineno} in {path}: {row!r}")
        sample_id, text = row
        if sample_id in scores:
            raise DataError(f"duplicate sample_id: {sample_id}")
        try:
            value = float(text)
        except ValueError as exc:
            raise DataError(
                f"malformed score row {lineno} in {path}: {text!r}"
            ) from exc
        scores[sample_id] = value
    if "member_ids" in meta:
        try:
            member_ids = json.loads(meta["member_ids"])
        except json.JSONDecodeError as exc:
            raise DataError(f"malformed member_ids metadata in {path}") from exc
        if not isinstance(member_ids, list) or not all(
            isinstance(m, str) for m in member_ids
        ):
            raise DataError(f"malformed member_ids metadata in {path}")
        return FusedScores(member_ids=tuple(member_ids), scores=scores)
    model_id = meta.get("model_id") or os.path.splitext(os.path.basename(path))[0]
    return ScoreSet(model_id=model_id, scores=scores)
