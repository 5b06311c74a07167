"""Command-line surface: one subcommand per pipeline stage.

stdout carries machine-readable JSON only; diagnostics go to stderr.
Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np

from .experiment import (
    ExperimentConfig,
    config_from_dict,
    labeled_subset,
    make_manifest,
    resolve_graph,
    run_arm,
    run_repeats,
    split_windows,
)
from .graphs import load_layout_csv, save_graph_csv, standard_1020_layout
from .model import init_params
from .pretext import STRATEGIES, CorruptionSpec, apply_corruption
from .signals import (
    SplitManifest,
    featurize,
    load_corpus,
    save_corpus,
    synth_corpus,
)
from .train import (
    Checkpoint,
    PRESETS,
    config_from_dict as train_config_from_dict,
    evaluate,
    load_checkpoint,
    save_checkpoint,
)


class UsageError(Exception):
    """Bad flags or config; maps to exit code 2."""


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


def _load_config(path: str | None, preset: str | None) -> ExperimentConfig:
    if path is None:
        cfg = ExperimentConfig()
    else:
        try:
            obj = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        _validate_config(obj, path)
        try:
            cfg = config_from_dict(obj)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"invalid config {path}: {exc}") from exc
    if preset is not None:
        if preset not in PRESETS:
            raise UsageError(f"unknown preset {preset!r}; valid: {', '.join(sorted(PRESETS))}")
        cfg = replace(cfg, train=PRESETS[preset])
    return cfg


def _validate_config(obj: dict, path: str) -> None:
    import jsonschema

    schema = json.loads(
        resources.files("eegssl.data").joinpath("config.schema.json").read_text()
    )
    try:
        jsonschema.validate(obj, schema)
    except jsonschema.ValidationError as exc:
        raise UsageError(f"config {path} violates schema: {exc.message}") from exc


def _train_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    train = cfg.train
    updates = {}
    for name in ("batch_size", "learning_rate", "feature_steps"):
        value = getattr(args, name, None)
        if value is not None:
            updates[name] = value
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if updates:
        train = replace(train, **updates)
    exp_updates = {}
    for flag in ("window_seconds", "val_frac", "test_frac", "labeled_fraction",
                 "kappa", "threshold_mode", "k_neighbors", "repeats"):
        value = getattr(args, flag, None)
        if value is not None:
            exp_updates[flag] = value
    return replace(cfg, train=train, **exp_updates)


def _strategy_from_args(args, seed: int) -> CorruptionSpec:
    kwargs = {"strategy": args.strategy, "seed": seed}
    for flag, field_name in (
        ("noise_fraction", "noise_variance_fraction"),
        ("point_fraction", "point_fraction"),
        ("channel", "channel"),
        ("sample_mode", "sample_mode"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            kwargs[field_name] = value
    try:
        return CorruptionSpec(**kwargs)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _layout(args):
    path = getattr(args, "layout", None)
    return load_layout_csv(path) if path else standard_1020_layout()


def _read_manifest(path: str) -> SplitManifest:
    try:
        return SplitManifest.from_json(Path(path).read_text())
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read split manifest {path}: {exc}") from exc


# -- commands ---------------------------------------------------------------


def cmd_synth_data(args) -> int:
    if args.subjects <= 0 or args.windows_per_subject <= 0:
        raise UsageError("--subjects and --windows-per-subject must be positive")
    if not 0.0 <= args.seizure_fraction <= 1.0:
        raise UsageError("--seizure-fraction must be in [0, 1]")
    names = standard_1020_layout().names if args.channels == 19 else None
    recordings = synth_corpus(
        args.subjects,
        args.windows_per_subject,
        args.seizure_fraction,
        seed=args.seed,
        n_channels=args.channels,
        sampling_rate_hz=args.fs,
        window_len=args.window_len,
        channel_names=names,
    )
    out = Path(args.out)
    paths = save_corpus(recordings, out)
    manifest = make_manifest(
        recordings, ExperimentConfig(val_frac=args.val_frac, test_frac=args.test_frac), args.seed
    )
    (out / "split.json").write_text(manifest.to_json() + "\n")
    _log(f"wrote {len(paths)} recordings to {out}")
    _emit(
        {
            "recordings": len(paths),
            "windows_per_subject": args.windows_per_subject,
            "window_len": args.window_len,
            "seizure_fraction": args.seizure_fraction,
            "out": str(out),
            "split": json.loads(manifest.to_json()),
        }
    )
    return 0


def cmd_preprocess(args) -> int:
    recordings = load_corpus(args.corpus)
    from .signals import segment_windows

    windows = []
    for rec in recordings:
        windows.extend(segment_windows(rec, args.window_seconds))
    if not windows:
        raise UsageError("corpus yields no windows at this window length")
    feats = np.stack([featurize(w, args.feature_steps).x for w in windows])
    labels = np.array([w.label for w in windows], dtype=np.int8)
    sources = [{"subject": w.source[0], "start": w.source[1]} for w in windows]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    np.save(out / "features.npy", feats)
    np.save(out / "labels.npy", labels)
    (out / "sources.json").write_text(json.dumps(sources, sort_keys=True) + "\n")
    _emit(
        {
            "windows": len(windows),
            "features_shape": list(feats.shape),
            "positives": int(labels.sum()),
            "out": str(out),
        }
    )
    return 0


def cmd_build_graph(args) -> int:
    cfg = _train_overrides(_load_config(args.config, None), args)
    if args.mode == "distance":
        graph = resolve_graph("distance", cfg, [], _layout(args))
    else:
        if args.corpus is None:
            raise UsageError("--corpus is required for correlation graphs")
        recordings = load_corpus(args.corpus)
        if args.split:
            manifest = _read_manifest(args.split)
            windows = split_windows(recordings, manifest, cfg.window_seconds)["train"]
        else:
            from .signals import segment_windows

            windows = []
            for rec in recordings:
                windows.extend(segment_windows(rec, cfg.window_seconds))
        graph = resolve_graph("correlation", cfg, windows)
    save_graph_csv(graph, args.out)
    _emit(
        {
            "mode": args.mode,
            "nodes": graph.num_nodes,
            "nonzeros": int(np.count_nonzero(graph.w)),
            "out": str(args.out),
        }
    )
    return 0


def cmd_pretrain(args) -> int:
    from .pretext import make_pairs
    from .train import pretrain
    from .experiment import derive_model_config

    cfg = _train_overrides(_load_config(args.config, args.preset), args)
    if args.epochs is not None:
        cfg = replace(cfg, train=replace(cfg.train, pretrain_epochs=args.epochs))
    recordings = load_corpus(args.corpus)
    manifest = _read_manifest(args.split)
    windows = split_windows(recordings, manifest, cfg.window_seconds)
    seed = cfg.train.seed
    strategy = _strategy_from_args(args, seed)
    model = derive_model_config(cfg.train.model, windows["train"], cfg.train.feature_steps)
    train_cfg = replace(cfg.train, graph_mode=args.graph_mode, strategy=strategy, model=model)
    graph = resolve_graph(args.graph_mode, cfg, windows["train"], _layout(args))
    pairs = make_pairs(windows["train"], strategy)
    _log(f"pretraining on {len(pairs)} windows ({args.strategy}, {args.graph_mode} graph)")
    ckpt = pretrain(pairs, graph, train_cfg)
    save_checkpoint(ckpt, args.out)
    _emit(
        {
            "checkpoint": str(args.out),
            "epochs": ckpt.epoch,
            "train_loss": ckpt.train_loss,
            "strategy": args.strategy,
            "graph_mode": args.graph_mode,
            "pairs": len(pairs),
        }
    )
    return 0


def cmd_finetune(args) -> int:
    cfg = _train_overrides(_load_config(args.config, args.preset), args)
    if args.epochs is not None:
        cfg = replace(cfg, train=replace(cfg.train, finetune_epochs=args.epochs))
    recordings = load_corpus(args.corpus)
    manifest = _read_manifest(args.split)
    seed = cfg.train.seed

    if args.no_pretrain:
        pretrained = None
        graph_mode = args.graph_mode or cfg.train.graph_mode
        strategy = cfg.train.strategy
    else:
        if args.pretrained is None:
            raise UsageError("provide --pretrained CHECKPOINT or --no-pretrain")
        pretrained = load_checkpoint(args.pretrained)
        stored = train_config_from_dict(pretrained.config)
        graph_mode = stored.graph_mode
        strategy = stored.strategy
        cfg = replace(cfg, train=replace(cfg.train, feature_steps=stored.feature_steps,
                                         model=stored.model))

    results, summary = run_repeats(
        recordings, manifest, cfg, strategy, graph_mode, seed,
        use_pretraining=not args.no_pretrain, pretrained=pretrained, layout=_layout(args),
    )
    save_checkpoint(results[0].checkpoint, args.out)
    report_json = summary.to_json()
    if args.report:
        Path(args.report).write_text(report_json + "\n")
    print(report_json)
    return 0


def cmd_evaluate(args) -> int:
    cfg = _train_overrides(_load_config(args.config, None), args)
    ckpt = load_checkpoint(args.checkpoint)
    train_cfg = train_config_from_dict(ckpt.config)
    recordings = load_corpus(args.corpus)
    manifest = _read_manifest(args.split)
    windows = split_windows(recordings, manifest, cfg.window_seconds)
    graph = resolve_graph(train_cfg.graph_mode, cfg, windows["train"], _layout(args))
    scores, test_auroc = evaluate(windows["test"], graph, ckpt.param_store(), train_cfg)
    from .train import EvalReport

    report = EvalReport(
        auroc=test_auroc,
        epochs=ckpt.epoch,
        train_loss=ckpt.train_loss,
        val_auroc=[],
        counts={name: len(windows[name]) for name in ("train", "val", "test")},
    )
    report_json = report.to_json()
    if args.report:
        Path(args.report).write_text(report_json + "\n")
    print(report_json)
    return 0


def cmd_inspect_transform(args) -> int:
    spec = _strategy_from_args(args, args.seed)
    if args.corpus:
        recordings = load_corpus(args.corpus)
        from .signals import segment_windows

        windows = []
        for rec in recordings:
            windows.extend(segment_windows(rec, args.window_seconds))
        if not 0 <= args.window_index < len(windows):
            raise UsageError(f"--window-index {args.window_index} out of range [0, {len(windows)})")
        window = windows[args.window_index]
    else:
        names = standard_1020_layout().names
        rec = synth_corpus(1, 1, 0.0, seed=args.seed, channel_names=names)[0]
        from .signals import segment_windows

        window = segment_windows(rec, rec.samples.shape[1] / rec.sampling_rate_hz)[0]
    corrupted = apply_corruption(window, spec)
    with Path(args.out).open("w") as f:
        for title, mat in (("before", window.matrix), ("after", corrupted.matrix)):
            f.write(f"# {title}\n")
            for row in mat:
                f.write(",".join(repr(float(v)) for v in row) + "\n")
    _emit(
        {
            "strategy": args.strategy,
            "channels": window.num_channels,
            "timepoints": window.num_timepoints,
            "out": str(args.out),
        }
    )
    return 0


# -- parser -----------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser, *, seed_default=None) -> None:
    p.add_argument("--config", help="JSON experiment config (flags override)")
    p.add_argument("--seed", type=int, default=seed_default)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=sorted(PRESETS), help="named hyperparameter preset")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--feature-steps", dest="feature_steps", type=int)
    p.add_argument("--window-seconds", dest="window_seconds", type=float)
    p.add_argument("--layout", help="electrode layout CSV (default: bundled 10-20)")


def _add_strategy_flags(p: argparse.ArgumentParser, required: bool) -> None:
    p.add_argument("--strategy", choices=STRATEGIES, required=required)
    p.add_argument("--noise-fraction", dest="noise_fraction", type=float)
    p.add_argument("--point-fraction", dest="point_fraction", type=float)
    p.add_argument("--channel", type=int)
    p.add_argument("--sample-mode", dest="sample_mode", choices=("neighbor_average", "zeros"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eegssl",
        description="Self-supervised pretraining for graph-recurrent seizure detection.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic corpus with a subject split")
    _add_common(p, seed_default=0)
    p.add_argument("--subjects", type=int, required=True)
    p.add_argument("--windows-per-subject", dest="windows_per_subject", type=int, default=25)
    p.add_argument("--seizure-fraction", dest="seizure_fraction", type=float, default=0.3)
    p.add_argument("--channels", type=int, default=19)
    p.add_argument("--fs", type=float, default=50.0)
    p.add_argument("--window-len", dest="window_len", type=int, default=200)
    p.add_argument("--val-frac", dest="val_frac", type=float, default=0.1)
    p.add_argument("--test-frac", dest="test_frac", type=float, default=0.2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("preprocess", help="materialize FFT log-amplitude features")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--window-seconds", dest="window_seconds", type=float, default=4.0)
    p.add_argument("--feature-steps", dest="feature_steps", type=int, default=4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("build-graph", help="export a distance or correlation adjacency CSV")
    _add_common(p)
    p.add_argument("--mode", choices=("distance", "correlation"), required=True)
    p.add_argument("--corpus")
    p.add_argument("--split")
    p.add_argument("--layout")
    p.add_argument("--kappa", type=float)
    p.add_argument("--threshold-mode", dest="threshold_mode", choices=("distance", "weight"))
    p.add_argument("--k-neighbors", dest="k_neighbors", type=int)
    p.add_argument("--window-seconds", dest="window_seconds", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("pretrain", help="denoising pretraining on the train split")
    _add_common(p, seed_default=None)
    _add_train_flags(p)
    _add_strategy_flags(p, required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--graph-mode", dest="graph_mode", choices=("distance", "correlation"),
                   default="distance")
    p.add_argument("--kappa", type=float)
    p.add_argument("--threshold-mode", dest="threshold_mode", choices=("distance", "weight"))
    p.add_argument("--k-neighbors", dest="k_neighbors", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="supervised training, optionally from a pretrained encoder")
    _add_common(p, seed_default=None)
    _add_train_flags(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--pretrained", help="pretraining checkpoint to transfer from")
    p.add_argument("--no-pretrain", dest="no_pretrain", action="store_true",
                   help="baseline arm: random encoder init")
    p.add_argument("--graph-mode", dest="graph_mode", choices=("distance", "correlation"))
    p.add_argument("--kappa", type=float)
    p.add_argument("--threshold-mode", dest="threshold_mode", choices=("distance", "weight"))
    p.add_argument("--k-neighbors", dest="k_neighbors", type=int)
    p.add_argument("--labeled-fraction", dest="labeled_fraction", type=float)
    p.add_argument("--repeats", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", help="test-split AUROC of a finetuned checkpoint")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--layout")
    p.add_argument("--window-seconds", dest="window_seconds", type=float)
    p.add_argument("--kappa", type=float)
    p.add_argument("--threshold-mode", dest="threshold_mode", choices=("distance", "weight"))
    p.add_argument("--k-neighbors", dest="k_neighbors", type=int)
    p.add_argument("--report")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("inspect-transform", help="before/after CSV for one corruption strategy")
    _add_common(p, seed_default=0)
    _add_strategy_flags(p, required=True)
    p.add_argument("--corpus")
    p.add_argument("--window-index", dest="window_index", type=int, default=0)
    p.add_argument("--window-seconds", dest="window_seconds", type=float, default=4.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_inspect_transform)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        _log(f"error: {exc}")
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        _log(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
