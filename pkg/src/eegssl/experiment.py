"""End-to-end experiment wiring: corpus -> split -> graph -> pretrain ->
transfer -> finetune -> test AUROC, with repeat aggregation.

Model width is derived from the data (node count from the recordings,
feature count from the windowing parameters), so configs stay consistent
by construction.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .graphs import (
    ElectrodeLayout,
    Graph,
    build_correlation_graph_from_windows,
    build_distance_graph,
    load_layout_csv,
    standard_1020_layout,
)
from .model import DcgruConfig, init_params
from .pretext import CorruptionSpec, make_pairs
from .signals import Recording, SignalWindow, SplitManifest, split_by_subject, windows_for_subjects
from .train import (
    Checkpoint,
    EvalReport,
    ScheduledSampling,
    TrainConfig,
    evaluate,
    finetune,
    pretrain,
    transfer_weights,
)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything an experiment run needs beyond the corpus itself."""

    train: TrainConfig = field(default_factory=TrainConfig)
    window_seconds: float = 4.0
    val_frac: float = 0.1
    test_frac: float = 0.2
    labeled_fraction: float = 1.0
    kappa: float = 0.9
    threshold_mode: str = "distance"
    k_neighbors: int = 3
    repeats: int = 1

    def to_dict(self) -> dict:
        return asdict(self)


def config_from_dict(obj: dict) -> ExperimentConfig:
    from .train import config_from_dict as train_from_dict

    obj = dict(obj)
    if "train" in obj:
        obj["train"] = train_from_dict(obj["train"])
    return ExperimentConfig(**obj)


def split_windows(
    recordings: list[Recording], manifest: SplitManifest, window_seconds: float
) -> dict[str, list[SignalWindow]]:
    return {
        name: windows_for_subjects(recordings, getattr(manifest, name), window_seconds)
        for name in ("train", "val", "test")
    }


def derive_model_config(
    base: DcgruConfig, windows: list[SignalWindow], feature_steps: int
) -> DcgruConfig:
    """Fix node and feature counts from the actual data."""
    w = windows[0]
    m = w.num_timepoints // feature_steps
    return replace(base, num_nodes=w.num_channels, input_dim=m // 2)


def resolve_graph(
    mode: str,
    cfg: ExperimentConfig,
    train_windows: list[SignalWindow],
    layout: ElectrodeLayout | None = None,
) -> Graph:
    if mode == "distance":
        return build_distance_graph(
            layout or standard_1020_layout(), kappa=cfg.kappa, threshold_mode=cfg.threshold_mode
        )
    if mode == "correlation":
        return build_correlation_graph_from_windows(train_windows, cfg.k_neighbors)
    raise ValueError(f"unknown graph mode {mode!r}")


def labeled_subset(windows: list[SignalWindow], fraction: float, seed: int) -> list[SignalWindow]:
    """Stratified label subsampling; keeps at least one window per class."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"labeled fraction must be in (0, 1], got {fraction}")
    if fraction == 1.0:
        return list(windows)
    rng = np.random.default_rng(seed)
    chosen: list[int] = []
    for label in (0, 1):
        idx = [i for i, w in enumerate(windows) if w.label == label]
        if not idx:
            continue
        n = max(1, int(round(fraction * len(idx))))
        chosen.extend(rng.choice(idx, size=n, replace=False).tolist())
    return [windows[i] for i in sorted(chosen)]


@dataclass
class ArmResult:
    """One (strategy, graph mode, seed) run."""

    test_auroc: float
    val_auroc: float
    report: EvalReport
    checkpoint: Checkpoint
    pretrained: Checkpoint | None


def run_arm(
    recordings: list[Recording],
    manifest: SplitManifest,
    cfg: ExperimentConfig,
    strategy: CorruptionSpec,
    graph_mode: str,
    seed: int,
    use_pretraining: bool = True,
    pretrained: Checkpoint | None = None,
    layout: ElectrodeLayout | None = None,
) -> ArmResult:
    windows = split_windows(recordings, manifest, cfg.window_seconds)
    model = derive_model_config(cfg.train.model, windows["train"], cfg.train.feature_steps)
    train_cfg = replace(
        cfg.train, seed=seed, graph_mode=graph_mode, strategy=replace(strategy, seed=seed),
        model=model,
    )
    graph = resolve_graph(graph_mode, cfg, windows["train"], layout)

    if use_pretraining:
        if pretrained is None:
            pairs = make_pairs(windows["train"], train_cfg.strategy)
            pretrained = pretrain(pairs, graph, train_cfg)
        weights = transfer_weights(pretrained, model, seed)
    else:
        pretrained = None
        weights = init_params(model, seed, parts=("encoder", "classifier"))

    labeled = labeled_subset(windows["train"], cfg.labeled_fraction, seed)
    ckpt, report = finetune(labeled, windows["val"], graph, weights, train_cfg)
    _, test_auroc = evaluate(windows["test"], graph, ckpt.param_store(), train_cfg)
    return ArmResult(
        test_auroc=test_auroc,
        val_auroc=report.auroc,
        report=report,
        checkpoint=ckpt,
        pretrained=pretrained,
    )


def run_repeats(
    recordings: list[Recording],
    manifest: SplitManifest,
    cfg: ExperimentConfig,
    strategy: CorruptionSpec,
    graph_mode: str,
    base_seed: int,
    use_pretraining: bool = True,
    pretrained: Checkpoint | None = None,
    layout: ElectrodeLayout | None = None,
) -> tuple[list[ArmResult], EvalReport]:
    """Independent runs with seeds base_seed + i; mean/std test AUROC."""
    results = [
        run_arm(
            recordings, manifest, cfg, strategy, graph_mode, base_seed + i,
            use_pretraining=use_pretraining, pretrained=pretrained, layout=layout,
        )
        for i in range(cfg.repeats)
    ]
    aurocs = np.array([r.test_auroc for r in results])
    first = results[0].report
    summary = EvalReport(
        auroc=float(aurocs.mean()),
        epochs=first.epochs,
        train_loss=first.train_loss,
        val_auroc=first.val_auroc,
        counts={**first.counts, "repeats": cfg.repeats},
        auroc_mean=float(aurocs.mean()),
        auroc_std=float(aurocs.std()),
    )
    return results, summary


def make_manifest(recordings: list[Recording], cfg: ExperimentConfig, seed: int) -> SplitManifest:
    return split_by_subject(recordings, cfg.val_frac, cfg.test_frac, seed)
