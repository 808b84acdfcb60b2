"""Metric tables and figures for evaluation and training reports.

Writes a delimited metrics table plus matplotlib renderings of the
recall/NDCG-versus-k curves (per fold, mean highlighted) and the training
loss curve. Figures strip writer metadata so identical runs produce
byte-identical PNGs.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .evaluator import MetricReport

_FIG_KW = dict(figsize=(5.0, 3.4), dpi=150)
_SAVE_KW = dict(metadata={"Software": None})


def write_metrics_tsv(report: MetricReport, path) -> Path:
    lines = ["scope\tk\trecall\tndcg"]
    for fold in report.folds:
        for k in report.ks:
            lines.append(f"fold{fold.fold}\t{k}\t{fold.recall[k]:.10f}\t{fold.ndcg[k]:.10f}")
    for k in report.ks:
        lines.append(f"mean\t{k}\t{report.mean_recall[k]:.10f}\t{report.mean_ndcg[k]:.10f}")
    path = Path(path)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def write_report_text(report: MetricReport, path) -> Path:
    lines = [
        "ranking evaluation report",
        f"config fingerprint:  {report.config_fingerprint or '-'}",
        f"dataset fingerprint: {report.dataset_fingerprint or '-'}",
        f"folds: {len(report.folds)}",
        "",
    ]
    for fold in report.folds:
        lines.append(f"fold {fold.fold} ({fold.num_users} test users)")
        for k in report.ks:
            lines.append(
                f"  k={k:<3d} recall={fold.recall[k]:.6f} ndcg={fold.ndcg[k]:.6f}"
            )
    lines.append("mean over folds")
    for k in report.ks:
        lines.append(
            f"  k={k:<3d} recall={report.mean_recall[k]:.6f} ndcg={report.mean_ndcg[k]:.6f}"
        )
    path = Path(path)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _curve_figure(report: MetricReport, metric: str, title: str):
    fig, ax = plt.subplots(**_FIG_KW)
    ks = report.ks
    for fold in report.folds:
        values = [getattr(fold, metric)[k] for k in ks]
        ax.plot(ks, values, color="0.75", linewidth=0.9, marker=".", markersize=3)
    mean = report.mean_recall if metric == "recall" else report.mean_ndcg
    ax.plot(ks, [mean[k] for k in ks], color="C0", linewidth=2.0, marker="o",
            markersize=4, label="mean")
    ax.set_xlabel("k")
    ax.set_ylabel(title)
    ax.set_xticks(ks)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="lower right", frameon=False)
    fig.tight_layout()
    return fig


def plot_metric_curves(report: MetricReport, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for metric, title, filename in (
        ("recall", "Recall@k", "recall_at_k.png"),
        ("ndcg", "NDCG@k", "ndcg_at_k.png"),
    ):
        fig = _curve_figure(report, metric, title)
        path = out / filename
        fig.savefig(path, **_SAVE_KW)
        plt.close(fig)
        paths.append(path)
    return paths


def plot_training_curve(records, path) -> Path:
    fig, ax = plt.subplots(**_FIG_KW)
    epochs = [r.epoch for r in records]
    ax.plot(epochs, [r.loss for r in records], color="C0", linewidth=1.5, label="train loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean batch loss")
    ax.grid(True, alpha=0.3)
    evals = [(r.epoch, r.ndcg10) for r in records if r.ndcg10 is not None]
    if evals:
        twin = ax.twinx()
        twin.plot(*zip(*evals), color="C1", linewidth=1.2, marker="o", markersize=3,
                  label="val NDCG@10")
        twin.set_ylabel("validation NDCG@10")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path
