"""Command-line interface.

Verbs: synth, sample, pretrain, finetune, eval, kshot, ablate, sweep-alpha,
sweep-k-context. Global flags (--config, --seed, --out) attach to every verb;
artifacts are written under the --out directory with fixed names so reruns
are comparable. GFM4GA_THREADS caps evaluation parallelism.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, load_config, save_config
from .experiments import (
    EvalReport,
    FULL_VARIANT,
    cells_csv,
    curve_csv,
    evaluate,
    finetune_config,
    pretrain_pipeline,
    run_ablations,
    run_kshot_sweep,
    sweep_alpha,
    sweep_context_k,
)
from .finetune import finetune
from .graph import Dataset, load_dataset, save_dataset
from .synth import SynthConfig, generate_synthetic, load_base_graph, make_kshot_splits, sample_group_subgraphs


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--seed", type=int, default=0, help="master seed for init/pretraining")
    common.add_argument("--out", default=".", help="output directory")
    return common


def _load_cfg(args) -> ExperimentConfig:
    return load_config(args.config) if args.config else ExperimentConfig()


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _int_list(raw: str) -> list[int]:
    return [int(p) for p in raw.replace(",", " ").split() if p]


def _float_list(raw: str) -> list[float]:
    return [float(p) for p in raw.replace(",", " ").split() if p]


def _write_report(report: EvalReport, out: Path, plot: bool = False) -> None:
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    (out / "summary.csv").write_text(curve_csv(report), encoding="utf-8")
    (out / "cells.csv").write_text(cells_csv(report), encoding="utf-8")
    print(f"report: {out / 'report.json'}")
    if report.runtime_seconds is not None:
        print(f"runtime: {report.runtime_seconds:.1f}s")
    for key, row in report.summary.items():
        print(f"  {key}: AUROC {row['auroc_mean']:.4f}+-{row['auroc_std']:.4f} "
              f"AUPRC {row['auprc_mean']:.4f}+-{row['auprc_std']:.4f}")
    if plot:
        _plot_report(report, out)


def _plot_report(report: EvalReport, out: Path) -> None:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("matplotlib not installed; skipping --plot", file=sys.stderr)
        return
    by_variant: dict[str, list[tuple[int, float, float]]] = {}
    for key, row in report.summary.items():
        variant, shot_part = key.split("|", 1)
        shot = int(shot_part.split("=", 1)[1])
        by_variant.setdefault(variant, []).append((shot, row["auroc_mean"], row["auroc_std"]))
    fig, ax = plt.subplots(figsize=(6, 4))
    if all(len(v) == 1 for v in by_variant.values()):
        names = sorted(by_variant)
        means = [by_variant[n][0][1] for n in names]
        stds = [by_variant[n][0][2] for n in names]
        ax.bar(names, means, yerr=stds)
        ax.set_ylabel("AUROC")
        ax.tick_params(axis="x", rotation=30)
    else:
        for name, rows in sorted(by_variant.items()):
            rows.sort()
            xs = [r[0] for r in rows]
            ys = [r[1] for r in rows]
            es = [r[2] for r in rows]
            ax.errorbar(xs, ys, yerr=es, marker="o", label=name)
        ax.set_xlabel("shots")
        ax.set_ylabel("AUROC")
        ax.legend()
    fig.tight_layout()
    fig.savefig(out / "report.png", dpi=120)
    plt.close(fig)
    print(f"plot: {out / 'report.png'}")


def cmd_synth(args) -> int:
    cfg = SynthConfig(
        num_subgraphs=args.num_subgraphs,
        size_mean=args.size_mean,
        size_std=args.size_std,
        feature_dim=args.feature_dim,
        pattern=args.pattern,
        group_mean=args.group_mean,
        group_std=args.group_std,
        feature_shift=args.feature_shift,
        inner_density=args.inner_density,
        camouflage_rate=args.camouflage_rate,
        num_relations=args.num_relations,
        seed=args.seed,
    )
    dataset = generate_synthetic(cfg)
    out = _out_dir(args)
    path = out / args.name
    save_dataset(dataset, path)
    print(f"wrote {len(dataset)} subgraphs to {path}")
    return 0


def cmd_sample(args) -> int:
    base = load_base_graph(args.edges, args.labels, args.features, directed=args.directed)
    dataset = sample_group_subgraphs(
        base,
        min_interconnected=args.min_interconnected,
        dedup_threshold=args.dedup_threshold,
        hop_fraction=args.hop_fraction,
        seed=args.seed,
    )
    out = _out_dir(args)
    path = out / args.name
    save_dataset(dataset, path)
    print(f"wrote {len(dataset)} sampled subgraphs to {path}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _load_cfg(args)
    if args.epochs is not None:
        cfg.pretrain_epochs = args.epochs
    corpus = load_dataset(args.data)
    started = time.monotonic()
    pipeline = pretrain_pipeline(corpus, cfg, seed=args.seed)
    out = _out_dir(args)
    ckpt = out / "pretrained.ckpt"
    save_checkpoint(ckpt, pipeline.encoder, pipeline.estimator, head=None, meta={"stage": "pretrain"})
    curve_path = out / "pretrain_curve.csv"
    lines = ["epoch,loss_sub,loss_node,loss_total"]
    lines += [
        f"{row['epoch']},{row['loss_sub']!r},{row['loss_node']!r},{row['loss_total']!r}"
        for row in pipeline.curve
    ]
    curve_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    save_config(cfg, out / "config.txt")
    print(f"checkpoint: {ckpt}")
    print(f"loss curve: {curve_path}")
    print(f"runtime: {time.monotonic() - started:.1f}s")
    return 0


def cmd_finetune(args) -> int:
    cfg = _load_cfg(args)
    encoder, estimator, _, _ = load_checkpoint(args.checkpoint)
    labeled = load_dataset(args.data)
    seeds = _int_list(args.seeds) if args.seeds else list(cfg.seeds)
    splits = make_kshot_splits(labeled, args.k, seeds)
    ft_cfg = finetune_config(cfg)
    out = _out_dir(args)
    for split in splits:
        batch = [labeled.by_id(i) for i in split.finetune_ids]
        result = finetune(encoder, estimator, batch, ft_cfg)
        ckpt = out / f"finetuned_seed{split.seed}.ckpt"
        save_checkpoint(
            ckpt,
            result.encoder,
            result.estimator,
            head=result.head,
            meta={"stage": "finetune", "k": split.k, "seed": split.seed},
        )
        scores = {}
        for sid in split.eval_ids:
            sub = labeled.by_id(sid)
            from .finetune import predict

            scores[sid] = [float(v) for v in predict(sub, result.encoder, result.estimator, result.head, ft_cfg)]
        (out / f"scores_seed{split.seed}.json").write_text(
            json.dumps(scores, sort_keys=True) + "\n", encoding="utf-8"
        )
        (out / f"split_seed{split.seed}.txt").write_text(
            "\n".join(split.finetune_ids) + "\n", encoding="utf-8"
        )
        print(f"seed {split.seed}: checkpoint {ckpt}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    encoder, estimator, head, _ = load_checkpoint(args.checkpoint)
    if head is None:
        from .finetune import ContextHead

        head = ContextHead.zeros(encoder.layer_dims[-1])
    labeled = load_dataset(args.data)
    exclude = set()
    if args.exclude_ids:
        exclude = {line.strip() for line in Path(args.exclude_ids).read_text().splitlines() if line.strip()}
    subgraphs = [s for s in labeled.labeled() if s.id not in exclude]
    metrics = evaluate(encoder, estimator, head, subgraphs, finetune_config(cfg), pooling=args.pooling)
    out = _out_dir(args)
    (out / "eval.json").write_text(json.dumps(metrics, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(metrics, sort_keys=True))
    return 0


def cmd_kshot(args) -> int:
    cfg = _load_cfg(args)
    corpus = load_dataset(args.corpus)
    labeled = load_dataset(args.data)
    shots = _int_list(args.shots) if args.shots else cfg.shots()
    seeds = _int_list(args.seeds) if args.seeds else None
    report = run_kshot_sweep(corpus, labeled, cfg, shots=shots, seeds=seeds, seed=args.seed)
    _write_report(report, _out_dir(args), plot=args.plot)
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_cfg(args)
    corpus = load_dataset(args.corpus)
    labeled = load_dataset(args.data)
    seeds = _int_list(args.seeds) if args.seeds else None
    report = run_ablations(corpus, labeled, cfg, shot=args.shot, seeds=seeds, seed=args.seed)
    _write_report(report, _out_dir(args), plot=args.plot)
    return 0


def cmd_sweep_alpha(args) -> int:
    cfg = _load_cfg(args)
    corpus = load_dataset(args.corpus)
    labeled = load_dataset(args.data)
    alphas = _float_list(args.alphas)
    seeds = _int_list(args.seeds) if args.seeds else None
    report = sweep_alpha(corpus, labeled, cfg, alphas, shot=args.shot, seeds=seeds, seed=args.seed)
    _write_report(report, _out_dir(args), plot=args.plot)
    return 0


def cmd_sweep_k_context(args) -> int:
    cfg = _load_cfg(args)
    corpus = load_dataset(args.corpus)
    labeled = load_dataset(args.data)
    sizes = _int_list(args.context_sizes)
    seeds = _int_list(args.seeds) if args.seeds else None
    report = sweep_context_k(corpus, labeled, cfg, sizes, shot=args.shot, seeds=seeds, seed=args.seed)
    _write_report(report, _out_dir(args), plot=args.plot)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(prog="gfm4ga", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic group-anomaly dataset")
    p.add_argument("--num-subgraphs", type=int, default=200)
    p.add_argument("--size-mean", type=float, default=25.0)
    p.add_argument("--size-std", type=float, default=5.0)
    p.add_argument("--feature-dim", type=int, default=32)
    p.add_argument("--pattern", choices=("dense", "chain", "mixed"), default="mixed")
    p.add_argument("--group-mean", type=float, default=8.0)
    p.add_argument("--group-std", type=float, default=2.0)
    p.add_argument("--feature-shift", type=float, default=5.0)
    p.add_argument("--inner-density", type=float, default=0.8)
    p.add_argument("--camouflage-rate", type=float, default=0.05)
    p.add_argument("--num-relations", type=int, default=2)
    p.add_argument("--name", default="dataset.jsonl")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("sample", parents=[common], help="sample group subgraphs from a labeled base graph")
    p.add_argument("--edges", required=True, help="tab-separated 'u v rel' lines")
    p.add_argument("--labels", required=True, help="'node label' lines")
    p.add_argument("--features", help="optional 'node v1 v2 ...' lines")
    p.add_argument("--min-interconnected", type=int, default=3)
    p.add_argument("--dedup-threshold", type=float, default=0.8)
    p.add_argument("--hop-fraction", type=float, default=0.6)
    p.add_argument("--directed", action="store_true")
    p.add_argument("--name", default="dataset.jsonl")
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("pretrain", parents=[common], help="contrastive pretraining on unlabeled subgraphs")
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, help="override the configured epoch count")
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("finetune", parents=[common], help="k-shot finetuning from a pretrained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--seeds", help="comma-separated split seeds")
    p.set_defaults(fn=cmd_finetune)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on labeled subgraphs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--exclude-ids", help="file of subgraph ids to skip (e.g. the finetune split)")
    p.add_argument("--pooling", choices=("micro", "macro"), default="micro")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("kshot", parents=[common], help="k-shot sweep: pretrain once, finetune per cell")
    p.add_argument("--corpus", required=True, help="pretraining dataset")
    p.add_argument("--data", required=True, help="labeled dataset")
    p.add_argument("--shots", help="comma-separated shot counts")
    p.add_argument("--seeds", help="comma-separated split seeds")
    p.add_argument("--plot", action="store_true")
    p.set_defaults(fn=cmd_kshot)

    p = sub.add_parser("ablate", parents=[common], help="run the four ablation configurations")
    p.add_argument("--corpus", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--shot", type=int, default=10)
    p.add_argument("--seeds", help="comma-separated split seeds")
    p.add_argument("--plot", action="store_true")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("sweep-alpha", parents=[common], help="sweep the subgraph-level contrastive weight")
    p.add_argument("--corpus", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--alphas", default="0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")
    p.add_argument("--shot", type=int, default=10)
    p.add_argument("--seeds", help="comma-separated split seeds")
    p.add_argument("--plot", action="store_true")
    p.set_defaults(fn=cmd_sweep_alpha)

    p = sub.add_parser("sweep-k-context", parents=[common], help="sweep the context neighbor count")
    p.add_argument("--corpus", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--context-sizes", default="5,10,15,20")
    p.add_argument("--shot", type=int, default=10)
    p.add_argument("--seeds", help="comma-separated split seeds")
    p.add_argument("--plot", action="store_true")
    p.set_defaults(fn=cmd_sweep_k_context)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
