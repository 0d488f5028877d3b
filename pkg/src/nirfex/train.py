"""Training loop, evaluation, cross-validation driver, feature export, and
the spectrum-weight sweep.

One logical trainer owns the parameters; batches are stacked into a single
tensor so gradient reduction order is fixed and runs with the same config
and seed reproduce checkpoints bit-identically.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger("nirfex.train")

from . import autodiff as ad
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig
from .data import Dataset, FoldSplit, generate_synthetic, load_image_dir, preprocess, split_subject_kfold
from .hypergraph import Hypergraph, default_hypergraph, load_incidence, parse_incidence
from .hyperhead import predict
from .metrics import MetricsReport, compute_metrics
from .model import (
    NIR,
    ModelConfig,
    ModelParams,
    forward,
    init_model,
    joint_loss,
)
from .optim import AdamW, one_cycle_lr


@dataclass
class TrainResult:
    params: ModelParams
    config: TrainConfig
    graph: Hypergraph
    log: list[dict]
    digest: str | None = None
    metrics: MetricsReport | None = None


def resolve_graph(cfg: TrainConfig) -> Hypergraph:
    return load_incidence(cfg.graph) if cfg.graph else default_hypergraph()


def resolve_dataset(cfg: TrainConfig, graph: Hypergraph | None = None) -> Dataset:
    if cfg.data_dir is not None:
        return load_image_dir(cfg.data_dir)
    graph = graph if graph is not None else resolve_graph(cfg)
    if cfg.data.n_classes != cfg.model.n_classes:
        raise ValueError(
            f"generator classes {cfg.data.n_classes} != model classes {cfg.model.n_classes}"
        )
    return generate_synthetic(cfg.data, graph=graph)


def _graph_doc(graph: Hypergraph) -> dict:
    return {
        "vertices": list(graph.vertex_names),
        "edges": list(graph.edge_names),
        "incidence": graph.incidence.tolist(),
    }


def _graph_from_doc(doc: dict) -> Hypergraph:
    return parse_incidence(json.dumps(doc))


def _prepare_pixels(sample, cfg: TrainConfig, train: bool, seed) -> np.ndarray:
    size = cfg.model.image_size
    needs = cfg.crop_margin > 0 or sample.pixels.shape != (cfg.model.channels, size, size)
    if not needs:
        return sample.pixels
    return preprocess(sample, size, train=train, seed=seed, margin=cfg.crop_margin).pixels


def stack_batch(
    dataset: Dataset, idxs, cfg: TrainConfig, train: bool, epoch: int = 0
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    images = np.stack(
        [
            _prepare_pixels(dataset.samples[i], cfg, train, seed=[cfg.seed, epoch, int(i)])
            for i in idxs
        ]
    )
    y = np.array([dataset.samples[i].expression for i in idxs])
    m = np.array([dataset.samples[i].modality for i in idxs])
    return images, y, m


def train(
    cfg: TrainConfig,
    dataset: Dataset | None = None,
    graph: Hypergraph | None = None,
    train_subjects=None,
    checkpoint_path: str | Path | None = None,
    log_path: str | Path | None = None,
) -> TrainResult:
    """Optimize the joint loss over shuffled mini-batches.

    `train_subjects` restricts training to those subjects (subject-independent
    protocols pass the complement of the evaluation fold).
    """
    graph = graph if graph is not None else resolve_graph(cfg)
    dataset = dataset if dataset is not None else resolve_dataset(cfg, graph)
    idxs = dataset.indices(subjects=train_subjects)
    if not idxs:
        raise ValueError("no training samples after subject filtering")

    params = init_model(cfg.model, graph, seed=cfg.seed)
    groups = list(params.named_parameters())
    optimizer = AdamW(groups, weight_decay=cfg.weight_decay)
    n_batches = (len(idxs) + cfg.batch_size - 1) // cfg.batch_size
    total_steps = cfg.epochs * n_batches

    records: list[dict] = []
    step = 0
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(idxs))
        epoch_loss = epoch_cls = epoch_spec = 0.0
        last_out = None
        last_lr = 0.0
        for b in range(n_batches):
            batch = [idxs[int(j)] for j in order[b * cfg.batch_size : (b + 1) * cfg.batch_size]]
            images, y, m = stack_batch(dataset, batch, cfg, train=True, epoch=epoch)
            params.zero_grad()
            out = forward(params, cfg.model, graph, images)
            total, part_cls, part_spec = joint_loss(out, y, m, cfg.spectrum_weight)
            if not np.isfinite(total.data):
                raise RuntimeError(
                    f"loss diverged to {float(total.data)} at epoch {epoch} batch {b}"
                )
            total.backward()
            last_lr = one_cycle_lr(step, total_steps, cfg.learning_rate)
            optimizer.step(last_lr)
            step += 1
            w = len(batch) / len(idxs)
            epoch_loss += float(total.data) * w
            epoch_cls += part_cls * w
            epoch_spec += part_spec * w
            last_out = out
        record = {
            "epoch": epoch,
            "loss": epoch_loss,
            "loss_cls": epoch_cls,
            "loss_spectrum": epoch_spec,
            "lr": last_lr,
            "ortho_residual": last_out.orthogonality_residual(),
        }
        records.append(record)
        log.info(
            "epoch %d loss %.4f (cls %.4f spectrum %.4f) lr %.2e ortho %.2e",
            epoch, epoch_loss, epoch_cls, epoch_spec, last_lr, record["ortho_residual"],
        )

    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        with open(log_path, "w", encoding="utf-8") as fh:
            for record in records:
                fh.write(json.dumps(record) + "\n")

    digest = None
    if checkpoint_path is not None:
        digest = save_result_checkpoint(checkpoint_path, cfg, graph, params, optimizer)
    return TrainResult(params=params, config=cfg, graph=graph, log=records, digest=digest)


def save_result_checkpoint(
    path: str | Path,
    cfg: TrainConfig,
    graph: Hypergraph,
    params: ModelParams,
    optimizer: AdamW | None = None,
) -> str:
    config_echo = cfg.to_dict()
    config_echo["graph_data"] = _graph_doc(graph)
    arrays = {name: p.data for name, p, _ in params.named_parameters()}
    opt_state = optimizer.state_arrays() if optimizer is not None else None
    return save_checkpoint(path, config_echo, arrays, opt_state)


def restore(path: str | Path) -> tuple[TrainConfig, ModelParams, Hypergraph, str]:
    """Rebuild (config, params, graph, digest) from a checkpoint."""
    meta, arrays, _, digest = load_checkpoint(path)
    config_echo = dict(meta["config"])
    graph = _graph_from_doc(config_echo.pop("graph_data"))
    cfg = TrainConfig.from_dict(config_echo)
    params = init_model(cfg.model, graph, seed=cfg.seed)
    names = set()
    for name, p, _ in params.named_parameters():
        if name not in arrays:
            raise ValueError(f"checkpoint missing parameter {name!r}")
        if arrays[name].shape != p.data.shape:
            raise ValueError(f"checkpoint parameter {name!r} has shape {arrays[name].shape}")
        p.data = arrays[name].astype(cfg.model.np_dtype)
        names.add(name)
    extra = set(arrays) - names
    if extra:
        raise ValueError(f"checkpoint holds unknown parameters {sorted(extra)}")
    return cfg, params, graph, digest


def evaluate(
    params: ModelParams,
    cfg: TrainConfig,
    graph: Hypergraph,
    dataset: Dataset,
    subjects=None,
    modality: int | None = NIR,
    batch_size: int = 256,
) -> MetricsReport:
    """Metrics over the (subject, modality)-filtered samples, center-cropped."""
    idxs = dataset.indices(subjects=subjects, modality=modality)
    if not idxs:
        raise ValueError("no samples match the evaluation filter")
    y_true: list[int] = []
    y_pred: list[int] = []
    with ad.no_grad():
        for start in range(0, len(idxs), batch_size):
            chunk = idxs[start : start + batch_size]
            images, y, _ = stack_batch(dataset, chunk, cfg, train=False)
            out = forward(params, cfg.model, graph, images)
            y_true.extend(int(v) for v in y)
            y_pred.extend(int(v) for v in predict(out.logits.data))
    return compute_metrics(y_true, y_pred, dataset.n_classes)


@dataclass
class CvReport:
    per_fold: list[MetricsReport]
    mean_accuracy: float
    std_accuracy: float
    mean_macro_f1: float
    std_macro_f1: float

    def table(self) -> str:
        lines = ["fold  accuracy  macro_f1  samples"]
        for i, rep in enumerate(self.per_fold):
            lines.append(f"{i:4d}  {rep.accuracy:8.4f}  {rep.macro_f1:8.4f}  {rep.n_samples}")
        lines.append(
            f"mean  {self.mean_accuracy:8.4f}  {self.mean_macro_f1:8.4f}"
            f"  (std {self.std_accuracy:.4f} / {self.std_macro_f1:.4f})"
        )
        return "\n".join(lines)

    def csv(self) -> str:
        lines = ["fold,accuracy,macro_f1,n_samples"]
        for i, rep in enumerate(self.per_fold):
            lines.append(f"{i},{rep.accuracy!r},{rep.macro_f1!r},{rep.n_samples}")
        lines.append(f"mean,{self.mean_accuracy!r},{self.mean_macro_f1!r},")
        lines.append(f"std,{self.std_accuracy!r},{self.std_macro_f1!r},")
        return "\n".join(lines) + "\n"


def run_cv(cfg: TrainConfig, dataset: Dataset | None = None, folds=None) -> CvReport:
    """Train one model per fold from scratch; report NIR-part metrics."""
    graph = resolve_graph(cfg)
    dataset = dataset if dataset is not None else resolve_dataset(cfg, graph)
    split = split_subject_kfold(dataset, k=cfg.k_folds, seed=cfg.seed)
    folds = list(range(cfg.k_folds)) if folds is None else list(folds)
    reports: list[MetricsReport] = []
    for fold in folds:
        fold_cfg = TrainConfig.from_dict({**cfg.to_dict(), "seed": cfg.seed + fold})
        result = train(fold_cfg, dataset=dataset, graph=graph,
                       train_subjects=split.train_subjects(fold))
        reports.append(
            evaluate(result.params, fold_cfg, graph, dataset,
                     subjects=split.fold_subjects(fold), modality=NIR)
        )
    acc = np.array([r.accuracy for r in reports])
    f1 = np.array([r.macro_f1 for r in reports])
    ddof = 1 if len(reports) > 1 else 0
    return CvReport(
        per_fold=reports,
        mean_accuracy=float(acc.mean()),
        std_accuracy=float(acc.std(ddof=ddof)),
        mean_macro_f1=float(f1.mean()),
        std_macro_f1=float(f1.std(ddof=ddof)),
    )


def export_features(
    params: ModelParams,
    cfg: TrainConfig,
    graph: Hypergraph,
    dataset: Dataset,
    which: str = "class",
    batch_size: int = 256,
) -> str:
    """CSV of per-sample features: the normalized [class] embedding
    ("class") or the hypergraph-aggregated embedding ("aggregate")."""
    if which not in ("class", "aggregate"):
        raise ValueError(f"which must be 'class' or 'aggregate', got {which!r}")
    rows: list[str] = []
    width = None
    with ad.no_grad():
        for start in range(0, len(dataset), batch_size):
            idxs = list(range(start, min(start + batch_size, len(dataset))))
            images, _, _ = stack_batch(dataset, idxs, cfg, train=False)
            out = forward(params, cfg.model, graph, images)
            feats = out.e_cls.data if which == "class" else out.e_agg.data
            width = feats.shape[1]
            for i, row in zip(idxs, feats):
                s = dataset.samples[i]
                values = ",".join(repr(float(v)) for v in row)
                rows.append(f"{i},{s.modality},{s.expression},{s.subject},{values}")
    header = "index,modality,expression,subject," + ",".join(f"f{j}" for j in range(width))
    return header + "\n" + "\n".join(rows) + "\n"


def sweep_spectrum_weight(
    cfg: TrainConfig, weights, dataset: Dataset | None = None, seeds=None
) -> str:
    """Accuracy-vs-weight CSV over the generator's held-out subjects (or
    fold 0 when none are designated), averaged over the given seeds."""
    graph = resolve_graph(cfg)
    dataset = dataset if dataset is not None else resolve_dataset(cfg, graph)
    seeds = [cfg.seed] if seeds is None else list(seeds)
    if dataset.heldout_subjects:
        holdout = set(dataset.heldout_subjects)
    else:
        holdout = split_subject_kfold(dataset, k=cfg.k_folds, seed=cfg.seed).fold_subjects(0)
    train_subjects = set(dataset.subjects()) - holdout

    lines = ["spectrum_weight,seed,accuracy,macro_f1"]
    for weight in weights:
        for seed in seeds:
            run_cfg = TrainConfig.from_dict(
                {**cfg.to_dict(), "spectrum_weight": float(weight), "seed": int(seed)}
            )
            result = train(run_cfg, dataset=dataset, graph=graph, train_subjects=train_subjects)
            rep = evaluate(result.params, run_cfg, graph, dataset, subjects=holdout, modality=NIR)
            lines.append(f"{float(weight)!r},{int(seed)},{rep.accuracy!r},{rep.macro_f1!r}")
    return "\n".join(lines) + "\n"
