"""Command-line interface.

Subcommands: train, eval, cv, sweep, gen-data, export-features,
check-invariants, inspect. Every flag overrides the corresponding config
key; `--set a.b=c` reaches anything without a dedicated flag. The
NIRFEX_LOG environment variable controls log verbosity only (e.g. INFO,
DEBUG).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import TrainConfig, apply_overrides, load_train_config
from .data import manifest_csv, split_subject_kfold
from .hypergraph import Hypergraph
from .model import MODALITY_NAMES, NIR, VIS
from .train import (
    evaluate,
    export_features,
    resolve_dataset,
    resolve_graph,
    restore,
    run_cv,
    sweep_spectrum_weight,
    train,
)

log = logging.getLogger("nirfex")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None, help="JSON config file")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--spectrum-weight", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--k-folds", type=int, default=None)
    p.add_argument("--data-dir", type=str, default=None)
    p.add_argument("--graph", type=str, default=None, help="incidence file")
    p.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override any config key by dotted path",
    )


_FLAG_KEYS = (
    ("epochs", "epochs"),
    ("batch_size", "batch_size"),
    ("learning_rate", "learning_rate"),
    ("weight_decay", "weight_decay"),
    ("spectrum_weight", "spectrum_weight"),
    ("seed", "seed"),
    ("k_folds", "k_folds"),
    ("data_dir", "data_dir"),
    ("graph", "graph"),
)


def _build_config(args) -> TrainConfig:
    cfg = load_train_config(args.config) if args.config else TrainConfig()
    overrides = []
    for attr, key in _FLAG_KEYS:
        value = getattr(args, attr, None)
        if value is not None:
            overrides.append(f"{key}={json.dumps(value)}")
    overrides.extend(args.overrides)
    return apply_overrides(cfg, overrides) if overrides else cfg


def _parse_modality(name: str) -> int | None:
    lowered = name.lower()
    if lowered == "all":
        return None
    for idx, label in enumerate(MODALITY_NAMES):
        if lowered == label.lower():
            return idx
    raise SystemExit(f"unknown modality {name!r}; use NIR, VIS, or all")


def _write_or_print(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")
        print(f"wrote {out}")


def cmd_train(args) -> int:
    cfg = _build_config(args)
    result = train(cfg, checkpoint_path=args.checkpoint, log_path=args.log)
    last = result.log[-1]
    print(
        f"trained {cfg.epochs} epochs: loss {last['loss']:.4f} "
        f"(cls {last['loss_cls']:.4f}, spectrum {last['loss_spectrum']:.4f}), "
        f"orthogonality residual {last['ortho_residual']:.2e}"
    )
    if result.digest:
        print(f"checkpoint digest {result.digest}")
    if args.eval_holdout:
        dataset = resolve_dataset(cfg, result.graph)
        if not dataset.heldout_subjects:
            raise SystemExit("--eval-holdout requires generator-designated held-out subjects")
        rep = evaluate(
            result.params, cfg, result.graph, dataset,
            subjects=set(dataset.heldout_subjects), modality=NIR,
        )
        print(rep.table(dataset.class_names))
    return 0


def cmd_eval(args) -> int:
    cfg, params, graph, digest = restore(args.checkpoint)
    if args.data_dir is not None:
        cfg = apply_overrides(cfg, [f"data_dir={json.dumps(args.data_dir)}"])
    dataset = resolve_dataset(cfg, graph)
    subjects = None
    if args.holdout:
        if not dataset.heldout_subjects:
            raise SystemExit("--holdout requires generator-designated held-out subjects")
        subjects = set(dataset.heldout_subjects)
    rep = evaluate(
        params, cfg, graph, dataset, subjects=subjects,
        modality=_parse_modality(args.modality),
    )
    print(f"checkpoint digest {digest}")
    print(rep.table(dataset.class_names))
    if args.csv:
        _write_or_print(rep.csv(dataset.class_names), args.csv)
    return 0


def cmd_cv(args) -> int:
    cfg = _build_config(args)
    report = run_cv(cfg)
    print(report.table())
    if args.csv:
        _write_or_print(report.csv(), args.csv)
    return 0


def cmd_sweep(args) -> int:
    cfg = _build_config(args)
    weights = [float(w) for w in args.weights.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
    text = sweep_spectrum_weight(cfg, weights, seeds=seeds)
    _write_or_print(text, args.out)
    return 0


def cmd_gen_data(args) -> int:
    from PIL import Image

    cfg = _build_config(args)
    if cfg.data is None:
        raise SystemExit("gen-data needs a synthetic data config")
    graph = resolve_graph(cfg)
    dataset = resolve_dataset(cfg, graph)
    out = Path(args.out)
    counters: dict[tuple[int, int, int], int] = {}
    for sample in dataset.samples:
        key = (sample.modality, sample.expression, sample.subject)
        idx = counters.get(key, 0)
        counters[key] = idx + 1
        folder = out / MODALITY_NAMES[sample.modality] / dataset.class_names[sample.expression]
        folder.mkdir(parents=True, exist_ok=True)
        arr = np.round(sample.pixels * 255.0).astype(np.uint8)
        img = Image.fromarray(arr[0] if arr.shape[0] == 1 else arr.transpose(1, 2, 0))
        img.save(folder / f"{sample.subject}_{idx}.png")
    split = split_subject_kfold(dataset, k=cfg.k_folds, seed=cfg.seed)
    (out / "manifest.csv").write_text(manifest_csv(dataset, split), encoding="utf-8")
    print(f"wrote {len(dataset)} samples under {out} (8-bit PNG) and manifest.csv")
    return 0


def cmd_export_features(args) -> int:
    cfg, params, graph, _ = restore(args.checkpoint)
    if args.data_dir is not None:
        cfg = apply_overrides(cfg, [f"data_dir={json.dumps(args.data_dir)}"])
    dataset = resolve_dataset(cfg, graph)
    text = export_features(params, cfg, graph, dataset, which=args.which)
    _write_or_print(text, args.out)
    return 0


def cmd_check_invariants(args) -> int:
    from .invariants import (
        gradient_suite,
        hgnn_suite,
        householder_suite,
        orthogonality_suite,
    )

    draws = 120 if args.quick else args.draws
    reports = [
        orthogonality_suite(n_draws=draws, seed=args.seed),
        householder_suite(n_draws=max(20, draws // 5), seed=args.seed + 1),
        hgnn_suite(n_draws=max(10, draws // 10), seed=args.seed + 2),
    ]
    ok = True
    for report in reports:
        ok &= report.passed
        print("\n".join(report.lines()))
    grad = gradient_suite(seed=args.seed + 3)
    mark = "PASS" if grad.passed else "FAIL"
    print(f"[{mark}] full-model gradient check (max rel err {grad.max_rel_error:.3e} <= {grad.tol:.0e})")
    if args.verbose_gradients:
        print("\n".join("  " + line for line in grad.lines()))
    ok &= grad.passed
    return 0 if ok else 1


def _describe_graph(graph: Hypergraph) -> str:
    lines = [
        f"hypergraph: {graph.n_vertices} vertices x {graph.n_edges} edges",
        "edges: " + " ".join(graph.edge_names),
    ]
    for name, row in zip(graph.vertex_names, graph.incidence):
        members = [e for e, bit in zip(graph.edge_names, row) if bit]
        lines.append(f"  {name}: {' '.join(members)}")
    return "\n".join(lines)


def cmd_inspect(args) -> int:
    if args.checkpoint:
        cfg, params, graph, digest = restore(args.checkpoint)
        print(f"checkpoint digest {digest}")
    else:
        cfg = _build_config(args)
        graph = resolve_graph(cfg)
        from .model import init_model

        params = init_model(cfg.model, graph, seed=cfg.seed)
    print(json.dumps(cfg.to_dict(), indent=2))
    print(_describe_graph(graph))
    total = 0
    print(f"{'parameter':44s} {'shape':16s} decay")
    for name, p, decay in params.named_parameters():
        total += p.data.size
        print(f"{name:44s} {str(p.shape):16s} {'yes' if decay else 'no'}")
    print(f"total parameters: {total}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nirfex",
        description="Disentangled NIR/VIS facial expression recognition harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_config_flags(p)
    p.add_argument("--checkpoint", type=Path, default=None, help="checkpoint output path")
    p.add_argument("--log", type=Path, default=None, help="per-epoch JSONL log path")
    p.add_argument(
        "--eval-holdout",
        action="store_true",
        help="evaluate the NIR part of generator-designated held-out subjects",
    )
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data-dir", type=str, default=None, help="evaluate on a directory dataset")
    p.add_argument("--modality", default="NIR", help="NIR (default), VIS, or all")
    p.add_argument("--holdout", action="store_true", help="restrict to held-out subjects")
    p.add_argument("--csv", type=Path, default=None, help="also write metrics CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cv", help="subject-independent k-fold cross-validation")
    _add_config_flags(p)
    p.add_argument("--csv", type=Path, default=None)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("sweep", help="accuracy vs spectrum-loss weight CSV")
    _add_config_flags(p)
    p.add_argument("--weights", default="0.01,0.1,1,5,10", help="comma-separated weights")
    p.add_argument("--seeds", default=None, help="comma-separated seeds (default: config seed)")
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gen-data", help="write the synthetic dataset as PNG files")
    _add_config_flags(p)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("export-features", help="per-sample feature CSV from a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--which", choices=("class", "aggregate"), default="class")
    p.add_argument("--data-dir", type=str, default=None)
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=cmd_export_features)

    p = sub.add_parser("check-invariants", help="run the orthogonality/gradient suites")
    p.add_argument("--draws", type=int, default=1008)
    p.add_argument("--quick", action="store_true", help="use a reduced draw count")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--verbose-gradients", action="store_true")
    p.set_defaults(func=cmd_check_invariants)

    p = sub.add_parser("inspect", help="dump config, hypergraph, and parameter shapes")
    _add_config_flags(p)
    p.add_argument("--checkpoint", type=Path, default=None)
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("NIRFEX_LOG", "WARNING"))
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
