"""Processed-bundle directory format and the preprocess orchestration.

A bundle is a directory of deterministic text files: given identical raw
inputs and seed, every byte is reproduced. Layout:

    manifest.json        counts, thresholds, seed, fingerprints (no timestamps)
    users.tsv            dense_id -> external id
    items.tsv            dense_id -> external id
    vocab.tsv            token -> token id
    docs.tsv             item, textless flag, space-joined token ids
    pairs.tsv            all kept (user, item) pairs, dense ids
    fold_<k>_test.tsv    held-out pairs of fold k
    neighbors_<k>.tsv    per-fold similarity neighbors (similarity source)
    neighbors_shared.tsv relation-graph neighbors (adjacency source)

Similarity neighbor lists are built from each fold's TRAIN pairs only.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import (
    DataSplit,
    NeighborGraph,
    SparseBinaryRatings,
    binarize_ratings,
    build_neighbors_from_adjacency,
    build_neighbors_from_similarity,
    filter_sparse,
    make_folds,
)
from .errors import DataError
from .text import ItemCorpus, build_vocab
from .version import TOOL_VERSION

BUNDLE_FORMAT_VERSION = 1


@dataclass
class PreprocessConfig:
    seed: int = 0
    binarize_threshold: float = 4.0
    min_user_ratings: int = 10
    min_item_ratings: int = 5
    max_vocab: int = 8000
    min_df: int = 1
    max_len: int = 300
    sim_threshold: float = 0.2
    max_neighbors: int = 50
    sim_metric: str = "cosine"
    test_frac: float = 0.2
    n_folds: int = 5


@dataclass
class Bundle:
    manifest: dict
    users: list[str]
    items: list[str]
    corpus: ItemCorpus
    pairs: np.ndarray  # (P, 2) dense ids
    fold_tests: list[np.ndarray]  # per fold, (T, 2)
    neighbor_graphs: list[NeighborGraph]  # per fold, or a single shared graph
    neighbor_source: str  # "similarity" | "adjacency"
    user_index: dict = field(default_factory=dict)
    item_index: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.user_index:
            self.user_index = {u: k for k, u in enumerate(self.users)}
        if not self.item_index:
            self.item_index = {i: k for k, i in enumerate(self.items)}

    @property
    def num_users(self) -> int:
        return len(self.users)

    @property
    def num_items(self) -> int:
        return len(self.items)

    @property
    def n_folds(self) -> int:
        return len(self.fold_tests)

    @property
    def fingerprint(self) -> str:
        return self.manifest.get("bundle_fingerprint", "")

    def split(self, fold: int) -> DataSplit:
        if not 0 <= fold < self.n_folds:
            raise DataError(f"fold {fold} out of range (bundle has {self.n_folds})")
        test = self.fold_tests[fold]
        n = self.num_items
        all_keys = self.pairs[:, 0] * n + self.pairs[:, 1]
        test_keys = test[:, 0] * n + test[:, 1]
        train_pairs = self.pairs[~np.isin(all_keys, test_keys)]
        train = SparseBinaryRatings.from_pairs(train_pairs, self.num_users, n)
        test_sets = [np.empty(0, dtype=np.int64) for _ in range(self.num_users)]
        for u in np.unique(test[:, 0]):
            test_sets[u] = np.sort(test[test[:, 0] == u, 1])
        return DataSplit(
            train=train,
            test=test_sets,
            seed=int(self.manifest.get("seed", 0)),
            fold_index=fold,
        )

    def graph(self, fold: int) -> NeighborGraph:
        if self.neighbor_source == "adjacency":
            return self.neighbor_graphs[0]
        return self.neighbor_graphs[fold]


# -- raw-file parsing --------------------------------------------------------


def _unescape(text: str) -> str:
    return text.replace("\\n", " ").replace("\\t", " ")


def parse_ratings_file(path) -> list[tuple]:
    """`user<TAB>item[<TAB>score]` per line; missing score means pre-binarized."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"ratings file not found: {path}")
    triples = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) == 2:
            triples.append((parts[0], parts[1], None))
        elif len(parts) == 3:
            try:
                triples.append((parts[0], parts[1], float(parts[2])))
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad score {parts[2]!r}") from None
        else:
            raise DataError(f"{path}:{lineno}: expected 2 or 3 tab-separated fields")
    if not triples:
        raise DataError(f"{path}: no interactions found")
    return triples


def parse_docs_file(path) -> dict:
    """`item<TAB>text` per line; embedded newlines arrive escaped as \\n."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"documents file not found: {path}")
    docs: dict = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t", 1)
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected `item<TAB>text`")
        item, text = parts
        if item in docs:
            raise DataError(f"{path}:{lineno}: duplicate document for item {item!r}")
        docs[item] = _unescape(text)
    return docs


def parse_relations_file(path) -> list[tuple]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"relations file not found: {path}")
    edges = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected `item<TAB>item`")
        edges.append((parts[0], parts[1]))
    return edges


def _file_sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_preprocess(
    ratings_path,
    docs_path,
    relations_path,
    cfg: PreprocessConfig,
) -> Bundle:
    """Binarize -> filter -> vocabulary -> folds -> neighbor lists."""
    triples = parse_ratings_file(ratings_path)
    raw_docs = parse_docs_file(docs_path)
    kept = binarize_ratings(triples, threshold=cfg.binarize_threshold)
    if not kept:
        raise DataError("no interactions pass the binarization threshold")
    dense_pairs, users, items = filter_sparse(
        kept, cfg.min_user_ratings, cfg.min_item_ratings
    )
    users = [str(u) for u in users]
    items = [str(i) for i in items]
    texts = [raw_docs.get(item, "") for item in items]
    corpus = build_vocab(texts, cfg.max_vocab, cfg.min_df, cfg.max_len)

    ratings = SparseBinaryRatings.from_pairs(dense_pairs, len(users), len(items))
    folds = make_folds(ratings, cfg.n_folds, cfg.test_frac, cfg.seed)
    fold_tests = []
    for split in folds:
        rows = [
            (u, int(i)) for u, held in enumerate(split.test) for i in held
        ]
        fold_tests.append(np.array(sorted(rows), dtype=np.int64).reshape(-1, 2))

    dropped_edges = 0
    if relations_path is not None:
        raw_edges = parse_relations_file(relations_path)
        item_index = {item: k for k, item in enumerate(items)}
        edges = []
        for a, b in raw_edges:
            if a in item_index and b in item_index:
                edges.append((item_index[a], item_index[b]))
            else:
                dropped_edges += 1
        graphs = [build_neighbors_from_adjacency(edges, len(items))]
        neighbor_source = "adjacency"
    else:
        graphs = [
            build_neighbors_from_similarity(
                split.train, cfg.sim_threshold, cfg.max_neighbors, cfg.sim_metric
            )
            for split in folds
        ]
        neighbor_source = "similarity"

    manifest = {
        "format_version": BUNDLE_FORMAT_VERSION,
        "tool_version": TOOL_VERSION,
        "seed": cfg.seed,
        "neighbor_source": neighbor_source,
        "neighbors_capped_and_symmetrized": neighbor_source == "similarity",
        "dropped_relation_edges": dropped_edges,
        "counts": {
            "users": len(users),
            "items": len(items),
            "pairs": int(len(dense_pairs)),
            "vocab": corpus.vocab_size,
            "textless_items": int(sum(corpus.textless)),
            "folds": cfg.n_folds,
        },
        "thresholds": {k: v for k, v in asdict(cfg).items() if k != "seed"},
        "input_fingerprint": _input_fingerprint(ratings_path, docs_path, relations_path),
    }
    return Bundle(
        manifest=manifest,
        users=users,
        items=items,
        corpus=corpus,
        pairs=dense_pairs,
        fold_tests=fold_tests,
        neighbor_graphs=graphs,
        neighbor_source=neighbor_source,
    )


def _input_fingerprint(ratings_path, docs_path, relations_path) -> str:
    digest = hashlib.sha256()
    for path in (ratings_path, docs_path, relations_path):
        if path is not None:
            digest.update(_file_sha256(Path(path)).encode())
    return digest.hexdigest()


# -- bundle directory I/O ----------------------------------------------------


def _write_lines(path: Path, lines) -> None:
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def _pairs_lines(pairs: np.ndarray):
    return [f"{u}\t{i}" for u, i in pairs]


def _graph_lines(graph: NeighborGraph):
    return [
        f"{i}\t{' '.join(str(j) for j in lst)}"
        for i, lst in enumerate(graph.neighbors)
        if len(lst)
    ]


def write_bundle(bundle: Bundle, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_lines(out / "users.tsv", [f"{k}\t{u}" for k, u in enumerate(bundle.users)])
    _write_lines(out / "items.tsv", [f"{k}\t{i}" for k, i in enumerate(bundle.items)])
    _write_lines(
        out / "vocab.tsv",
        [f"{tok}\t{tid}" for tok, tid in sorted(bundle.corpus.vocab.items(), key=lambda kv: kv[1])],
    )
    _write_lines(
        out / "docs.tsv",
        [
            f"{i}\t{1 if bundle.corpus.textless[i] else 0}\t"
            + " ".join(str(t) for t in doc)
            for i, doc in enumerate(bundle.corpus.docs)
        ],
    )
    _write_lines(out / "pairs.tsv", _pairs_lines(bundle.pairs))
    for k, test in enumerate(bundle.fold_tests):
        _write_lines(out / f"fold_{k}_test.tsv", _pairs_lines(test))
    if bundle.neighbor_source == "adjacency":
        _write_lines(out / "neighbors_shared.tsv", _graph_lines(bundle.neighbor_graphs[0]))
    else:
        for k, graph in enumerate(bundle.neighbor_graphs):
            _write_lines(out / f"neighbors_{k}.tsv", _graph_lines(graph))

    data_files = sorted(p for p in out.iterdir() if p.name != "manifest.json")
    digest = hashlib.sha256()
    for path in data_files:
        digest.update(path.name.encode())
        digest.update(path.read_bytes())
    bundle.manifest["bundle_fingerprint"] = digest.hexdigest()
    (out / "manifest.json").write_text(
        json.dumps(bundle.manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return out


def _read_lines(path: Path):
    if not path.exists():
        raise DataError(f"bundle file missing: {path}")
    return [line for line in path.read_text(encoding="utf-8").splitlines() if line]


def _read_pairs(path: Path) -> np.ndarray:
    rows = [tuple(int(x) for x in line.split("\t")) for line in _read_lines(path)]
    if not rows:
        return np.empty((0, 2), dtype=np.int64)
    return np.array(rows, dtype=np.int64)


def load_bundle(bundle_dir) -> Bundle:
    out = Path(bundle_dir)
    manifest_path = out / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"not a bundle directory (no manifest.json): {out}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("format_version") != BUNDLE_FORMAT_VERSION:
        raise DataError(f"unsupported bundle format version {manifest.get('format_version')}")

    users = [line.split("\t", 1)[1] for line in _read_lines(out / "users.tsv")]
    items = [line.split("\t", 1)[1] for line in _read_lines(out / "items.tsv")]
    vocab = {}
    for line in _read_lines(out / "vocab.tsv"):
        tok, tid = line.split("\t")
        vocab[tok] = int(tid)
    docs: list[list[int]] = [[] for _ in items]
    textless = [False] * len(items)
    for line in _read_lines(out / "docs.tsv"):
        item_s, flag, ids = line.split("\t")
        docs[int(item_s)] = [int(t) for t in ids.split()]
        textless[int(item_s)] = flag == "1"
    corpus = ItemCorpus(
        vocab=vocab,
        docs=docs,
        textless=textless,
        max_len=int(manifest["thresholds"]["max_len"]),
    )
    corpus.validate()

    pairs = _read_pairs(out / "pairs.tsv")
    n_folds = int(manifest["counts"]["folds"])
    fold_tests = [_read_pairs(out / f"fold_{k}_test.tsv") for k in range(n_folds)]

    def read_graph(path: Path) -> NeighborGraph:
        graph = NeighborGraph.empty(len(items))
        for line in _read_lines(path) if path.exists() else []:
            item_s, _, ids = line.partition("\t")
            graph.neighbors[int(item_s)] = np.array(
                sorted(int(j) for j in ids.split()), dtype=np.int64
            )
        return graph

    neighbor_source = manifest["neighbor_source"]
    if neighbor_source == "adjacency":
        graphs = [read_graph(out / "neighbors_shared.tsv")]
    else:
        graphs = [read_graph(out / f"neighbors_{k}.tsv") for k in range(n_folds)]

    return Bundle(
        manifest=manifest,
        users=users,
        items=items,
        corpus=corpus,
        pairs=pairs,
        fold_tests=fold_tests,
        neighbor_graphs=graphs,
        neighbor_source=neighbor_source,
    )
