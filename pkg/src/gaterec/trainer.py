"""Mini-batch training loop: shuffling, gradient steps, checkpoints, logging.

Training iterates over items (the encoder input is an item's user column).
Determinism contract: with a fixed seed, parameter trajectories and the
persisted log are bit-identical across runs, and resuming from a checkpoint
reproduces the uninterrupted run exactly. To keep that property, every RNG
is derived per purpose (init / per-epoch shuffle / validation carve), never
shared, and the persisted per-epoch records contain no wall-clock fields
(timings go to the console only).
"""

import json
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import DataSplit, SparseBinaryRatings
from .errors import ConfigError, NumericError
from .model import GateModel, ModelHyper, build_item_batch
from .params import AdamConfig, ParameterSet, adam_step, load_checkpoint, save_checkpoint
from .seeding import seeded_rng


@dataclass
class TrainConfig:
    hyper: ModelHyper
    adam: AdamConfig = field(default_factory=AdamConfig)
    epochs: int = 100
    batch_size: int = 1024
    seed: int = 0
    eval_every: int = 0  # 0 disables validation/early stopping
    early_stop_patience: int = 0  # evaluations without improvement; 0 disables
    val_frac: float = 0.1
    checkpoint_dir: str | None = None


def validate_config(cfg: TrainConfig) -> TrainConfig:
    """Reject invalid values; defaults already encode the standard protocol."""
    cfg.hyper.validate()
    cfg.adam.validate()
    if cfg.epochs < 1:
        raise ConfigError(f"epochs must be >= 1, got {cfg.epochs}")
    if cfg.batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {cfg.batch_size}")
    if cfg.seed < 0:
        raise ConfigError(f"seed must be >= 0, got {cfg.seed}")
    if cfg.eval_every < 0 or cfg.early_stop_patience < 0:
        raise ConfigError("eval_every and early_stop_patience must be >= 0")
    if not 0.0 < cfg.val_frac < 1.0:
        raise ConfigError(f"val_frac must be in (0, 1), got {cfg.val_frac}")
    return cfg


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    wall_time_s: float
    recall10: float | None = None
    ndcg10: float | None = None

    def to_json(self) -> str:
        # wall time is intentionally excluded: persisted logs are bit-identical
        # across reruns with the same seed
        payload: dict = {"epoch": self.epoch, "loss": self.loss}
        if self.recall10 is not None:
            payload["recall10"] = self.recall10
            payload["ndcg10"] = self.ndcg10
        return json.dumps(payload, sort_keys=True)


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    def append(self, record: EpochRecord) -> None:
        if self.records and record.epoch <= self.records[-1].epoch:
            raise ValueError("epoch indices must be strictly increasing")
        if not np.isfinite(record.loss):
            raise NumericError(f"non-finite loss in epoch {record.epoch}")
        self.records.append(record)

    def to_jsonl(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.records)

    def write(self, path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")


def carve_validation(
    train: SparseBinaryRatings, frac: float, seed: int
) -> tuple[SparseBinaryRatings, list[np.ndarray]]:
    """Hold out `frac` of each user's train items for early-stopping metrics."""
    core_pairs = []
    val_sets: list[np.ndarray] = []
    for u, items in enumerate(train.by_user):
        if len(items) < 2:
            val_sets.append(np.empty(0, dtype=np.int64))
            if len(items):
                core_pairs.append((u, int(items[0])))
            continue
        k = max(1, int(np.floor(frac * len(items) + 0.5)))
        perm = seeded_rng(seed, "val", u).permutation(items)
        val_sets.append(np.sort(perm[:k]))
        core_pairs.extend((u, int(i)) for i in perm[k:])
    core = SparseBinaryRatings.from_pairs(
        np.array(core_pairs, dtype=np.int64), train.num_users, train.num_items
    )
    return core, val_sets


def _check_inputs(split: DataSplit, corpus, graph, hyper: ModelHyper) -> None:
    if split.num_users != hyper.num_users or split.num_items != hyper.num_items:
        raise ConfigError(
            f"split has {split.num_users} users / {split.num_items} items, "
            f"model expects {hyper.num_users} / {hyper.num_items}"
        )
    if hyper.uses_words:
        if corpus is None or corpus.num_items != hyper.num_items:
            raise ConfigError("corpus missing or item count mismatch")
        if corpus.num_embeddings != hyper.num_embeddings:
            raise ConfigError(
                f"corpus has {corpus.num_embeddings} embedding ids, "
                f"model expects {hyper.num_embeddings}"
            )
    if hyper.uses_neighbors and (graph is None or graph.num_items != hyper.num_items):
        raise ConfigError("neighbor graph missing or item count mismatch")


def train(
    split: DataSplit,
    corpus,
    graph,
    cfg: TrainConfig,
    log_path=None,
    resume=None,
    quiet: bool = True,
    extra_meta: dict | None = None,
) -> tuple[ParameterSet, TrainLog]:
    """Run the optimization; returns best-validation parameters when
    validation is enabled, otherwise the final ones."""
    from .evaluator import ranking_metrics, score_all  # local import, no cycle at module load

    cfg = validate_config(cfg)
    hyper = cfg.hyper
    _check_inputs(split, corpus, graph, hyper)
    model = GateModel(hyper)

    validating = cfg.eval_every > 0
    if validating:
        train_core, val_sets = carve_validation(split.train, cfg.val_frac, cfg.seed)
    else:
        train_core, val_sets = split.train, None

    start_epoch = 0
    if resume is not None:
        params, meta = load_checkpoint(resume)
        if meta.get("model") != _hyper_meta(hyper):
            raise ConfigError(f"checkpoint {resume} was trained with a different model config")
        start_epoch = int(meta.get("epoch", 0))
    else:
        params = model.init_params(cfg.seed)

    if hyper.uses_neighbors and not quiet:
        isolated = sum(1 for lst in graph.neighbors if len(lst) == 0)
        if isolated:
            print(f"note: {isolated}/{hyper.num_items} items have empty neighborhoods",
                  file=sys.stderr)

    ckpt_dir = Path(cfg.checkpoint_dir) if cfg.checkpoint_dir else None
    if ckpt_dir:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    log = TrainLog()
    log_file = open(log_path, "w", encoding="utf-8") if log_path else None
    best_metric = -np.inf
    best_params: ParameterSet | None = None
    strikes = 0
    n = hyper.num_items

    try:
        for epoch in range(start_epoch + 1, cfg.epochs + 1):
            t0 = time.perf_counter()
            order = seeded_rng(cfg.seed, "shuffle", epoch).permutation(n)
            batch_losses = []
            for lo in range(0, n, cfg.batch_size):
                ids = order[lo : lo + cfg.batch_size]
                batch = build_item_batch(ids, train_core, corpus, graph, hyper)
                trace = model.forward_batch(params, batch)
                loss = model.batch_loss(params, batch, trace)
                if not np.isfinite(loss):
                    raise NumericError(
                        f"non-finite loss at epoch {epoch}, batch {lo // cfg.batch_size}"
                    )
                grads = model.backward_batch(params, batch, trace)
                for name, g in grads.items():
                    if not np.all(np.isfinite(g)):
                        raise NumericError(
                            f"non-finite gradient in slot {name!r} at epoch {epoch}, "
                            f"batch {lo // cfg.batch_size}"
                        )
                adam_step(params, grads, cfg.adam)
                batch_losses.append(loss)
            record = EpochRecord(
                epoch=epoch,
                loss=float(np.mean(batch_losses)),
                wall_time_s=time.perf_counter() - t0,
            )

            at_eval_point = validating and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs)
            if at_eval_point:
                sink = score_all(params, train_core, corpus, graph, hyper)
                metrics = ranking_metrics(sink, val_sets, [10])
                record.recall10, record.ndcg10 = metrics[10]
                if ckpt_dir:
                    save_checkpoint(params, ckpt_dir / f"epoch_{epoch}.ckpt",
                                    _meta(cfg, split, epoch, record, extra_meta))
                if record.ndcg10 > best_metric:
                    best_metric = record.ndcg10
                    best_params = params.copy()
                    strikes = 0
                    if ckpt_dir:
                        save_checkpoint(params, ckpt_dir / "best.ckpt",
                                        _meta(cfg, split, epoch, record, extra_meta))
                else:
                    strikes += 1
            log.append(record)
            if log_file:
                log_file.write(record.to_json() + "\n")
                log_file.flush()
            if not quiet:
                extra = ""
                if record.ndcg10 is not None:
                    extra = f" val_recall10={record.recall10:.4f} val_ndcg10={record.ndcg10:.4f}"
                print(
                    f"[epoch {epoch}/{cfg.epochs}] loss={record.loss:.6f}"
                    f" ({record.wall_time_s:.2f}s){extra}",
                    file=sys.stderr,
                )
            if (
                validating
                and cfg.early_stop_patience
                and strikes >= cfg.early_stop_patience
            ):
                if not quiet:
                    print(f"early stop at epoch {epoch} (patience exhausted)", file=sys.stderr)
                break
        if ckpt_dir and log.records:
            last = log.records[-1]
            save_checkpoint(params, ckpt_dir / f"epoch_{last.epoch}.ckpt",
                            _meta(cfg, split, last.epoch, last, extra_meta))
            if not validating:
                save_checkpoint(params, ckpt_dir / "best.ckpt",
                                _meta(cfg, split, last.epoch, last, extra_meta))
    finally:
        if log_file:
            log_file.close()

    final = best_params if (validating and best_params is not None) else params
    return final, log


def _hyper_meta(hyper: ModelHyper) -> dict:
    return asdict(hyper)


def _meta(
    cfg: TrainConfig, split: DataSplit, epoch: int, record: EpochRecord,
    extra: dict | None = None,
) -> dict:
    meta = {
        "model": _hyper_meta(cfg.hyper),
        "adam": asdict(cfg.adam),
        "epoch": epoch,
        "seed": cfg.seed,
        "fold": split.fold_index,
        "loss": record.loss,
        "val_ndcg10": record.ndcg10,
    }
    if extra:
        meta.update(extra)
    return meta
