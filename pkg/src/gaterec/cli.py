"""Command-line entry point: preprocess, train, evaluate, visualize-attention.

Every command is a pure function of (inputs, config, seed): identical
invocations reproduce their output files byte for byte. Exit codes: 0 ok,
2 config error, 3 data error, 4 numeric abort.
"""

import argparse
import sys
from dataclasses import asdict
from pathlib import Path

from .bundle import Bundle, PreprocessConfig, load_bundle, run_preprocess, write_bundle
from .config import (
    apply_overrides,
    config_fingerprint,
    load_config,
    parse_k_list,
    write_manifest,
)
from .errors import ConfigError, DataError, NumericError
from .evaluator import aggregate_folds, evaluate_fold
from .model import ModelHyper
from .params import AdamConfig, load_checkpoint
from .report import plot_metric_curves, plot_training_curve, write_metrics_tsv, write_report_text
from .trainer import TrainConfig, train
from .version import TOOL_VERSION
from .visualize import build_renderings, render_terminal, write_html

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gaterec",
        description="Content-aware top-N recommender: preprocessing, training, "
        "ranking evaluation, and attention visualization.",
    )
    parser.add_argument("--version", action="version", version=f"gaterec {TOOL_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    pre = sub.add_parser("preprocess", help="build a processed bundle from raw TSV files")
    pre.add_argument("--ratings", required=True, help="TSV: user<TAB>item[<TAB>score]")
    pre.add_argument("--docs", required=True, help="TSV: item<TAB>text")
    pre.add_argument("--relations", help="optional TSV: item<TAB>item")
    pre.add_argument("--out-dir", required=True)
    pre.add_argument("--config")
    pre.add_argument("--seed", type=int)
    for flag, key in (
        ("--binarize-threshold", "binarize_threshold"),
        ("--min-user-ratings", "min_user_ratings"),
        ("--min-item-ratings", "min_item_ratings"),
        ("--max-vocab", "max_vocab"),
        ("--min-df", "min_df"),
        ("--max-len", "max_len"),
        ("--sim-threshold", "sim_threshold"),
        ("--max-neighbors", "max_neighbors"),
        ("--test-frac", "test_frac"),
        ("--n-folds", "n_folds"),
    ):
        pre.add_argument(flag, dest=f"data__{key}")
    pre.set_defaults(func=cmd_preprocess)

    tr = sub.add_parser("train", help="train on one fold of a bundle")
    tr.add_argument("--data-dir", required=True)
    tr.add_argument("--out-dir", required=True)
    tr.add_argument("--fold", type=int, default=0)
    tr.add_argument("--config")
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--resume", help="checkpoint to continue from")
    tr.add_argument("--quiet", action="store_true")
    for flag, key in (
        ("--hidden1", "hidden1"),
        ("--latent", "latent"),
        ("--d-a", "d_a"),
        ("--rho", "rho"),
        ("--l2-reg", "l2_reg"),
        ("--attention", "attention"),
        ("--ablation", "ablation"),
        ("--neighbor-grad", "neighbor_grad"),
        ("--decoder-activation", "decoder_activation"),
    ):
        tr.add_argument(flag, dest=f"model__{key}")
    for flag, key in (
        ("--epochs", "epochs"),
        ("--batch-size", "batch_size"),
        ("--learning-rate", "learning_rate"),
        ("--eval-every", "eval_every"),
        ("--early-stop-patience", "early_stop_patience"),
    ):
        tr.add_argument(flag, dest=f"train__{key}")
    tr.add_argument("--no-neighbors", action="store_true",
                    help="drop the neighbor module (e.g. for attention-width sweeps)")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("evaluate", help="ranking metrics for one or more fold checkpoints")
    ev.add_argument("--data-dir", required=True)
    ev.add_argument("--checkpoint", action="append", required=True,
                    help="checkpoint path; repeat or comma-separate for multiple folds")
    ev.add_argument("--out-dir", required=True)
    ev.add_argument("--config")
    ev.add_argument("--k-list", dest="eval__k_list")
    ev.set_defaults(func=cmd_evaluate)

    vz = sub.add_parser("visualize-attention",
                        help="render word weights and neighbor scores for items")
    vz.add_argument("--data-dir", required=True)
    vz.add_argument("--checkpoint", required=True)
    vz.add_argument("--items", required=True, help="comma-separated external item ids")
    vz.add_argument("--out-dir", required=True)
    vz.set_defaults(func=cmd_visualize)
    return parser


def _collect_overrides(args, section: str) -> dict:
    prefix = f"{section}__"
    return {
        (section, name[len(prefix):]): value
        for name, value in vars(args).items()
        if name.startswith(prefix)
    }


def cmd_preprocess(args) -> int:
    cfg = apply_overrides(load_config(args.config), _collect_overrides(args, "data"))
    data_cfg = cfg["data"]
    pre_cfg = PreprocessConfig(
        seed=args.seed if args.seed is not None else 0,
        binarize_threshold=data_cfg["binarize_threshold"],
        min_user_ratings=data_cfg["min_user_ratings"],
        min_item_ratings=data_cfg["min_item_ratings"],
        max_vocab=data_cfg["max_vocab"],
        min_df=data_cfg["min_df"],
        max_len=data_cfg["max_len"],
        sim_threshold=data_cfg["sim_threshold"],
        max_neighbors=data_cfg["max_neighbors"],
        sim_metric=data_cfg["sim_metric"],
        test_frac=data_cfg["test_frac"],
        n_folds=data_cfg["n_folds"],
    )
    bundle = run_preprocess(args.ratings, args.docs, args.relations, pre_cfg)
    out = write_bundle(bundle, args.out_dir)
    counts = bundle.manifest["counts"]
    print(
        f"bundle written to {out}: {counts['users']} users, {counts['items']} items, "
        f"{counts['pairs']} pairs, vocab {counts['vocab']}, {counts['folds']} folds "
        f"({bundle.neighbor_source} neighbors)"
    )
    return EXIT_OK


def _hyper_from_bundle(bundle: Bundle, model_cfg: dict, no_neighbors: bool) -> ModelHyper:
    ablation = model_cfg["ablation"]
    if no_neighbors and ablation == "full":
        ablation = "ae_word_gate"
    uses_words = ablation != "ae_only"
    return ModelHyper(
        num_users=bundle.num_users,
        num_items=bundle.num_items,
        num_embeddings=bundle.corpus.num_embeddings if uses_words else 0,
        hidden1=model_cfg["hidden1"],
        latent=model_cfg["latent"],
        att_dims=model_cfg["d_a"],
        max_len=bundle.corpus.max_len,
        rho=model_cfg["rho"],
        l2_reg=model_cfg["l2_reg"],
        attention_mode=model_cfg["attention"],
        ablation=ablation,
        neighbor_grad=model_cfg["neighbor_grad"],
        decoder_activation=model_cfg["decoder_activation"],
    )


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    apply_overrides(cfg, _collect_overrides(args, "model"))
    apply_overrides(cfg, _collect_overrides(args, "train"))
    bundle = load_bundle(args.data_dir)
    if not 0 <= args.fold < bundle.n_folds:
        raise ConfigError(f"fold {args.fold} out of range (bundle has {bundle.n_folds})")

    hyper = _hyper_from_bundle(bundle, cfg["model"], args.no_neighbors)
    train_cfg = TrainConfig(
        hyper=hyper,
        adam=AdamConfig(learning_rate=cfg["train"]["learning_rate"]),
        epochs=cfg["train"]["epochs"],
        batch_size=cfg["train"]["batch_size"],
        seed=args.seed,
        eval_every=cfg["train"]["eval_every"],
        early_stop_patience=cfg["train"]["early_stop_patience"],
        val_frac=cfg["train"]["val_frac"],
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_cfg.checkpoint_dir = str(out / "checkpoints")

    split = bundle.split(args.fold)
    graph = bundle.graph(args.fold) if hyper.uses_neighbors else None
    corpus = bundle.corpus if hyper.uses_words else None

    effective = {
        "model": cfg["model"],
        "train": cfg["train"],
        "no_neighbors": bool(args.no_neighbors),
        "effective_ablation": hyper.ablation,
        "fold": args.fold,
        "seed": args.seed,
    }
    manifest = {
        "command": "train",
        "tool_version": TOOL_VERSION,
        "bundle_fingerprint": bundle.fingerprint,
        "config_fingerprint": config_fingerprint(effective),
        "effective_config": effective,
    }
    extra_meta = {
        "bundle_fingerprint": bundle.fingerprint,
        "config_fingerprint": manifest["config_fingerprint"],
    }
    params, log = train(
        split,
        corpus,
        graph,
        train_cfg,
        log_path=out / "train_log.jsonl",
        resume=args.resume,
        quiet=args.quiet,
        extra_meta=extra_meta,
    )
    write_manifest(out / "manifest.json", manifest)
    plot_training_curve(log.records, out / "loss_curve.png")
    final = log.records[-1]
    print(
        f"trained fold {args.fold} for {final.epoch} epochs; final loss {final.loss:.6f}; "
        f"checkpoints in {out / 'checkpoints'}"
    )
    return EXIT_OK


def _load_fold_checkpoint(path, bundle: Bundle):
    params, meta = load_checkpoint(path)
    if meta.get("bundle_fingerprint") != bundle.fingerprint:
        raise DataError(
            f"checkpoint {path} was trained on a different bundle "
            "(fingerprint mismatch)"
        )
    hyper = ModelHyper(**meta["model"])
    return params, meta, hyper


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    apply_overrides(cfg, _collect_overrides(args, "eval"))
    ks = parse_k_list(cfg["eval"]["k_list"])
    bundle = load_bundle(args.data_dir)
    paths = [p for chunk in args.checkpoint for p in chunk.split(",") if p]

    folds = []
    fold_indices = set()
    for path in paths:
        params, meta, hyper = _load_fold_checkpoint(path, bundle)
        fold = int(meta["fold"])
        if fold in fold_indices:
            raise ConfigError(f"duplicate checkpoint for fold {fold}: {path}")
        fold_indices.add(fold)
        split = bundle.split(fold)
        graph = bundle.graph(fold) if hyper.uses_neighbors else None
        corpus = bundle.corpus if hyper.uses_words else None
        folds.append(evaluate_fold(params, split, corpus, graph, hyper, ks=ks))
    folds.sort(key=lambda f: f.fold)
    report = aggregate_folds(folds, ks, expected=bundle.n_folds)
    report.dataset_fingerprint = bundle.fingerprint
    report.config_fingerprint = config_fingerprint(
        {"k_list": ks, "checkpoints": sorted(fold_indices)}
    )

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_tsv(report, out / "metrics.tsv")
    write_report_text(report, out / "report.txt")
    plot_metric_curves(report, out)
    write_manifest(
        out / "manifest.json",
        {
            "command": "evaluate",
            "tool_version": TOOL_VERSION,
            "bundle_fingerprint": bundle.fingerprint,
            "config_fingerprint": report.config_fingerprint,
            "k_list": ks,
            "folds": sorted(fold_indices),
        },
    )
    for k in ks:
        print(f"k={k:<3d} recall={report.mean_recall[k]:.6f} ndcg={report.mean_ndcg[k]:.6f}")
    print(f"report written to {out}")
    return EXIT_OK


def cmd_visualize(args) -> int:
    bundle = load_bundle(args.data_dir)
    params, meta, hyper = _load_fold_checkpoint(args.checkpoint, bundle)
    wanted = [item for item in args.items.split(",") if item]
    if not wanted:
        raise ConfigError("--items must name at least one item")
    positions = []
    for item in wanted:
        if item not in bundle.item_index:
            raise DataError(f"item {item!r} not in bundle (see items.tsv)")
        positions.append(bundle.item_index[item])

    fold = int(meta["fold"])
    split = bundle.split(fold)
    graph = bundle.graph(fold) if hyper.uses_neighbors else None
    renderings = build_renderings(
        params, hyper, split.train, bundle.corpus, graph, positions, bundle.items
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    html_path = write_html(renderings, out / "attention.html")
    for rendering in renderings:
        print(render_terminal(rendering))
        print()
    print(f"html written to {html_path}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
