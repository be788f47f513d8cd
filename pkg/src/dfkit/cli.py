"""Command-line front end.

Subcommands cover the full workflow: ``synth`` writes a manifest, ``train``
fits a model into a run directory, ``predict`` scores a split, ``fuse``
averages score files, ``eval`` renders a report plus figures, and
``profile`` prints a size/latency row.

Settings come from an optional JSON config file; command-line flags override
it. Exit codes: 0 success, 1 configuration or usage error, 2 data error,
3 anything else. Errors are reported as a single ``dfkit: error: ...`` line
on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import figures, fusion, metrics, models, training
from .data import (
    SPLITS,
    DatasetManifest,
    features_for_records,
    load_manifest,
    synth_dataset,
    with_label_noise,
    write_manifest,
)
from .errors import ConfigError, DataError

_SYNTH_DEFAULTS = {
    "n_real": 128,
    "n_fake": 128,
    "dim": 16,
    "separation": 4.0,
    "split_fractions": (0.7, 0.15, 0.15),
    "label_noise": 0.0,
}
_MODEL_DEFAULTS = {
    "backbone": "toy_mlp",
    "embed_dim": 16,
    "head_hidden": 256,
    "trainable": True,
    "external_id": None,
    "model_id": None,
}


class _Parser(argparse.ArgumentParser):
    """argparse parser whose usage errors exit 1 via ConfigError."""

    def error(self, message):
        raise ConfigError(message)


# ---------------------------------------------------------------------------
# Config file handling
# ---------------------------------------------------------------------------


def _load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as handle:
            cfg = json.load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    _check_keys(cfg, ("seed", "data", "model", "train", "eval"), "config")
    return cfg


def _check_keys(mapping, allowed, where: str):
    unknown = sorted(set(mapping) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown config key in {where}: {unknown[0]!r}")


def _section(cfg: dict, name: str) -> dict:
    value = cfg.get(name, {})
    if not isinstance(value, dict):
        raise ConfigError(f"config section {name!r} must be a JSON object")
    return value


def _coerce(value, kind: str, key: str):
    """Convert a JSON config value, rejecting lossy or mismatched types."""
    try:
        if kind == "int":
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ValueError
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if kind == "float":
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ValueError
            return float(value)
        if kind == "str":
            if not isinstance(value, str):
                raise ValueError
            return value
        if kind == "bool":
            if not isinstance(value, bool):
                raise ValueError
            return value
        if kind == "shape":
            if isinstance(value, (list, tuple)) and len(value) >= 1:
                return tuple(_coerce(v, "int", key) for v in value)
            raise ValueError
        if kind == "fracs":
            if isinstance(value, (list, tuple)) and len(value) == 3:
                return tuple(_coerce(v, "float", key) for v in value)
            raise ValueError
    except (TypeError, ValueError):
        pass
    raise ConfigError(f"config key {key!r} has invalid value {value!r}")


def _get(section: dict, key: str, kind: str, default, where: str):
    if key in section and section[key] is not None:
        return _coerce(section[key], kind, f"{where}.{key}")
    return default


def _resolve_synth(section: dict, default_seed: int) -> dict:
    _check_keys(
        section,
        ("seed", "n_real", "n_fake", "dim", "separation", "split_fractions", "label_noise"),
        "data.synth",
    )
    where = "data.synth"
    return {
        "seed": _get(section, "seed", "int", default_seed, where),
        "n_real": _get(section, "n_real", "int", _SYNTH_DEFAULTS["n_real"], where),
        "n_fake": _get(section, "n_fake", "int", _SYNTH_DEFAULTS["n_fake"], where),
        "dim": _get(section, "dim", "int", _SYNTH_DEFAULTS["dim"], where),
        "separation": _get(
            section, "separation", "float", _SYNTH_DEFAULTS["separation"], where
        ),
        "split_fractions": _get(
            section,
            "split_fractions",
            "fracs",
            _SYNTH_DEFAULTS["split_fractions"],
            where,
        ),
        "label_noise": _get(
            section, "label_noise", "float", _SYNTH_DEFAULTS["label_noise"], where
        ),
    }


def _materialize_synth(params: dict) -> DatasetManifest:
    manifest = synth_dataset(
        seed=params["seed"],
        n_real=params["n_real"],
        n_fake=params["n_fake"],
        dim=params["dim"],
        separation=params["separation"],
        split_fractions=params["split_fractions"],
    )
    if params["label_noise"] > 0.0:
        manifest = with_label_noise(manifest, params["label_noise"], params["seed"])
    return manifest


def _resolve_model(section: dict, default_seed: int, fallback_shape=None):
    """Build the model from the config's model section; returns
    (model, resolved-section-dict for the config snapshot)."""
    _check_keys(
        section,
        (
            "backbone",
            "input_shape",
            "embed_dim",
            "head_hidden",
            "seed",
            "trainable",
            "external_id",
            "model_id",
        ),
        "model",
    )
    where = "model"
    kind = _get(section, "backbone", "str", _MODEL_DEFAULTS["backbone"], where)
    input_shape = _get(section, "input_shape", "shape", fallback_shape, where)
    if input_shape is None:
        raise ConfigError("model.input_shape is required with a manifest data source")
    resolved = {
        "backbone": kind,
        "input_shape": list(input_shape),
        "embed_dim": _get(section, "embed_dim", "int", _MODEL_DEFAULTS["embed_dim"], where),
        "head_hidden": _get(
            section, "head_hidden", "int", _MODEL_DEFAULTS["head_hidden"], where
        ),
        "seed": _get(section, "seed", "int", default_seed, where),
        "trainable": _get(section, "trainable", "bool", _MODEL_DEFAULTS["trainable"], where),
        "external_id": _get(section, "external_id", "str", None, where),
        "model_id": _get(section, "model_id", "str", None, where),
    }
    spec = models.BackboneSpec(
        kind=kind,
        input_shape=tuple(input_shape),
        embed_dim=resolved["embed_dim"],
        seed=resolved["seed"],
        external_id=resolved["external_id"],
        trainable=resolved["trainable"],
    )
    model = models.build_model(
        spec,
        head_hidden=resolved["head_hidden"],
        seed=resolved["seed"],
        model_id=resolved["model_id"],
    )
    resolved["model_id"] = model.model_id
    return model, resolved


def _resolve_train(section: dict, default_seed: int) -> training.TrainConfig:
    allowed = (
        "learning_rate",
        "adam_beta1",
        "adam_beta2",
        "adam_eps",
        "batch_size",
        "max_epochs",
        "real_class_weight",
        "seed",
        "early_stop_patience",
    )
    _check_keys(section, allowed, "train")
    where = "train"
    kwargs = {"seed": _get(section, "seed", "int", default_seed, where)}
    for key, kind in (
        ("learning_rate", "float"),
        ("adam_beta1", "float"),
        ("adam_beta2", "float"),
        ("adam_eps", "float"),
        ("batch_size", "int"),
        ("max_epochs", "int"),
    ):
        if key in section and section[key] is not None:
            kwargs[key] = _coerce(section[key], kind, f"{where}.{key}")
    if section.get("real_class_weight") is not None:
        kwargs["real_class_weight"] = _coerce(
            section["real_class_weight"], "float", f"{where}.real_class_weight"
        )
    if "early_stop_patience" in section:
        value = section["early_stop_patience"]
        kwargs["early_stop_patience"] = (
            None if value is None else _coerce(value, "int", f"{where}.early_stop_patience")
        )
    return training.TrainConfig(**kwargs)


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


def _ensure_fresh(path, overwrite: bool):
    if os.path.exists(path) and not overwrite:
        raise ConfigError(f"refusing to overwrite {path} (pass --overwrite)")


def _write_text(path, text: str, overwrite: bool):
    _ensure_fresh(path, overwrite)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(text)
    print(f"wrote {path}")


def _split_records(manifest: DatasetManifest, split: str):
    records = manifest.split_records(split)
    if len(records) == 0:
        raise DataError(f"{split} split empty")
    return records


def _as_member(scores) -> fusion.ScoreSet:
    if isinstance(scores, fusion.FusedScores):
        return fusion.ScoreSet(
            model_id=" + ".join(scores.member_ids), scores=scores.scores
        )
    return scores


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_synth(args) -> int:
    cfg = _load_config(args.config) if args.config else {}
    top_seed = args.seed if args.seed is not None else _get(cfg, "seed", "int", 0, "config")
    params = _resolve_synth(_section(_section(cfg, "data"), "synth"), top_seed)
    if args.seed is not None:
        params["seed"] = args.seed
    for key in ("n_real", "n_fake", "dim", "separation", "label_noise"):
        value = getattr(args, key)
        if value is not None:
            params[key] = value
    if args.split_fractions is not None:
        params["split_fractions"] = tuple(args.split_fractions)
    manifest = _materialize_synth(params)
    _ensure_fresh(args.out, args.overwrite)
    write_manifest(manifest, args.out)
    n_real = sum(per["real"] for per in manifest.counts.values())
    n_fake = sum(per["fake"] for per in manifest.counts.values())
    print(
        f"wrote {args.out} ({len(manifest.records)} samples: "
        f"{n_real} real, {n_fake} fake)"
    )
    return 0


def _cmd_train(args) -> int:
    cfg = _load_config(args.config) if args.config else {}
    top_seed = args.seed if args.seed is not None else _get(cfg, "seed", "int", 0, "config")

    data_cfg = _section(cfg, "data")
    _check_keys(data_cfg, ("manifest", "synth"), "data")
    manifest_path = args.manifest or _get(data_cfg, "manifest", "str", None, "data")
    synth_requested = args.manifest is None and "synth" in data_cfg
    if manifest_path is None and not synth_requested:
        raise ConfigError("no data source: set data.manifest or data.synth, or pass --manifest")
    if manifest_path is not None and synth_requested:
        raise ConfigError("ambiguous data source: set only one of data.manifest and data.synth")

    if manifest_path is not None:
        manifest = load_manifest(manifest_path)
        data_resolved = {"manifest": str(manifest_path)}
        fallback_shape = None
    else:
        synth_params = _resolve_synth(_section(data_cfg, "synth"), top_seed)
        manifest = _materialize_synth(synth_params)
        data_resolved = {
            "synth": {**synth_params, "split_fractions": list(synth_params["split_fractions"])}
        }
        fallback_shape = (synth_params["dim"],)

    model, model_resolved = _resolve_model(_section(cfg, "model"), top_seed, fallback_shape)
    train_config = _resolve_train(_section(cfg, "train"), top_seed)
    eval_cfg = _section(cfg, "eval")
    _check_keys(eval_cfg, ("threshold",), "eval")
    threshold = _get(eval_cfg, "threshold", "float", 0.5, "eval")

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    snapshot = {
        "seed": top_seed,
        "data": data_resolved,
        "model": model_resolved,
        "train": asdict(train_config),
        "eval": {"threshold": threshold},
    }
    _write_text(
        out_dir / "config.json",
        json.dumps(snapshot, indent=2, sort_keys=True) + "\n",
        args.overwrite,
    )
    manifest_out = out_dir / "manifest.txt"
    _ensure_fresh(manifest_out, args.overwrite)
    write_manifest(manifest, manifest_out)
    print(f"wrote {manifest_out}")

    result = training.fit(model, manifest, manifest, train_config)

    stats_lines = [json.dumps(asdict(s), sort_keys=True) for s in result.stats]
    _write_text(
        out_dir / "stats.jsonl",
        "".join(line + "\n" for line in stats_lines),
        args.overwrite,
    )

    final_path = out_dir / "final.npz"
    _ensure_fresh(final_path, args.overwrite)
    models.save_checkpoint(model, final_path)
    print(f"wrote {final_path}")

    best_path = out_dir / "best.npz"
    _ensure_fresh(best_path, args.overwrite)
    model.set_parameters(result.best_params)
    models.save_checkpoint(model, best_path)
    print(f"wrote {best_path}")

    if result.stats:
        history_path = out_dir / "history.png"
        _ensure_fresh(history_path, args.overwrite)
        figures.save_history_figure(history_path, result.stats, title=model.model_id)
        print(f"wrote {history_path}")
        print(f"best epoch {result.best_epoch} val AUC {result.best_val_auc:.6f}")
    else:
        print("no epochs run; saved initial parameters")
    return 0


def _cmd_predict(args) -> int:
    model = models.load_checkpoint(args.checkpoint)
    manifest = load_manifest(args.manifest)
    records = _split_records(manifest, args.split)
    xs, _ = features_for_records(
        records, model.spec.input_shape, base_dir=Path(args.manifest).parent
    )
    scores = models.forward(model, xs)
    score_set = fusion.ScoreSet(
        model_id=model.model_id,
        scores={rec.sample_id: score for rec, score in zip(records, scores)},
    )
    _ensure_fresh(args.out, args.overwrite)
    fusion.write_scores(args.out, score_set)
    print(f"wrote {args.out} ({len(score_set)} scores, model {model.model_id})")
    return 0


def _cmd_fuse(args) -> int:
    members = [_as_member(fusion.read_scores(path)) for path in args.scores]
    fused = fusion.fuse(members)
    _ensure_fresh(args.out, args.overwrite)
    fusion.write_scores(args.out, fused)
    print(f"wrote {args.out} ({len(fused)} scores, {len(fused.member_ids)} members)")
    return 0


def _cmd_eval(args) -> int:
    cfg = _load_config(args.config) if args.config else {}
    eval_cfg = _section(cfg, "eval")
    _check_keys(eval_cfg, ("threshold",), "eval")
    threshold = (
        args.threshold
        if args.threshold is not None
        else _get(eval_cfg, "threshold", "float", 0.5, "eval")
    )

    scores = fusion.read_scores(args.scores)
    manifest = load_manifest(args.manifest)
    records = _split_records(manifest, args.split)
    ids = [rec.sample_id for rec in records]
    diff = set(ids).symmetric_difference(scores.scores)
    if diff:
        raise DataError(
            f"score coverage mismatch for split {args.split}: "
            + ", ".join(sorted(diff))
        )
    vector = [scores.scores[sample_id] for sample_id in ids]
    labels = [rec.label for rec in records]
    if isinstance(scores, fusion.FusedScores):
        member_ids = scores.member_ids
        default_name = " + ".join(member_ids)
    else:
        member_ids = None
        default_name = scores.model_id
    name = args.name or default_name

    report = metrics.evaluate(vector, labels, threshold=threshold, member_ids=member_ids)
    rendered = metrics.render_report(report)
    row = metrics.format_eval_row(name, report)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_text(out_dir / "report.txt", rendered, args.overwrite)
    _write_text(out_dir / "row.txt", row + "\n", args.overwrite)
    roc_path = out_dir / "roc.png"
    _ensure_fresh(roc_path, args.overwrite)
    figures.save_roc_figure(roc_path, report.curve, title=name)
    print(f"wrote {roc_path}")
    sys.stdout.write(rendered)
    print(row)
    return 0


def _cmd_profile(args) -> int:
    model = models.load_checkpoint(args.checkpoint)
    rng = np.random.default_rng(
        np.random.SeedSequence([int(args.seed or 0), 0x_B10B])
    )
    sample = rng.standard_normal(model.spec.input_shape)
    record = models.profile(model, [sample], warmup=args.warmup, reps=args.reps)
    print(models.format_profile_row(args.name or model.model_id, record))
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _build_parser() -> _Parser:
    parser = _Parser(prog="dfkit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p: _Parser, config=True, seed=True):
        if config:
            p.add_argument("--config", help="JSON config file")
        if seed:
            p.add_argument("--seed", type=int, help="override the top-level seed")

    p = sub.add_parser("synth", help="generate a synthetic manifest")
    common(p)
    p.add_argument("--out", required=True, help="manifest path to write")
    p.add_argument("--n-real", type=int, dest="n_real")
    p.add_argument("--n-fake", type=int, dest="n_fake")
    p.add_argument("--dim", type=int)
    p.add_argument("--separation", type=float)
    p.add_argument("--label-noise", type=float, dest="label_noise")
    p.add_argument("--split-fractions", type=float, nargs=3, dest="split_fractions")
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="fit a model into a run directory")
    common(p)
    p.add_argument("--manifest", help="dataset manifest (overrides config data section)")
    p.add_argument("--out-dir", required=True, dest="out_dir", help="run directory")
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="score one split with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=SPLITS)
    p.add_argument("--out", required=True, help="score CSV to write")
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("fuse", help="average score files into an ensemble")
    p.add_argument("scores", nargs="+", help="member score CSVs")
    p.add_argument("--out", required=True, help="fused score CSV to write")
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=_cmd_fuse)

    p = sub.add_parser("eval", help="report metrics for a score file")
    common(p, seed=False)
    p.add_argument("--scores", required=True, help="score CSV to evaluate")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=SPLITS)
    p.add_argument("--threshold", type=float, help="decision threshold (default 0.5)")
    p.add_argument("--out-dir", required=True, dest="out_dir")
    p.add_argument("--name", help="row label (default: model or member ids)")
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("profile", help="print a size/latency row for a checkpoint")
    common(p, config=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--name", help="row label (default: model id)")
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--reps", type=int, default=10)
    p.set_defaults(func=_cmd_profile)

    return parser


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"dfkit: error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"dfkit: error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        raise
    except Exception as exc:
        print(f"dfkit: error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
