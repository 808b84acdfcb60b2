"""Word- and neighbor-attention renderings: terminal text and static HTML.

Word weights are the attention matrix summed over its aspect rows, min-max
normalized to [0, 1]; a constant vector maps to 0.5 everywhere. Tokens below
the coloring floor are left unhighlighted. The HTML file is self-contained
(inline styles, no scripts) and byte-deterministic for fixed inputs.
"""

import html
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import SparseBinaryRatings
from .errors import DataError
from .model import GateModel, ModelHyper
from .params import ParameterSet

COLOR_FLOOR = 0.05


def accumulate_word_weights(att: np.ndarray) -> np.ndarray:
    """Sum the aspect rows of an attention matrix into per-token weights."""
    att = np.asarray(att)
    return att.sum(axis=0) if att.ndim == 2 else att.copy()


def minmax_normalize(weights: np.ndarray) -> np.ndarray:
    weights = np.asarray(weights, dtype=np.float64)
    lo, hi = weights.min(), weights.max()
    if hi - lo < 1e-12:
        return np.full_like(weights, 0.5)
    return (weights - lo) / (hi - lo)


@dataclass
class NeighborRow:
    item_id: str
    label: str
    score: float


@dataclass
class AttentionRendering:
    item_id: str
    tokens: list[str]
    weights: np.ndarray  # normalized to [0, 1]
    neighbors: list[NeighborRow]
    textless: bool


def build_renderings(
    params: ParameterSet,
    hyper: ModelHyper,
    train: SparseBinaryRatings,
    corpus,
    graph,
    item_positions: list[int],
    item_labels: list[str],
) -> list[AttentionRendering]:
    """Compute attention weights and neighbor scores for the chosen items."""
    model = GateModel(hyper)
    if not hyper.uses_words:
        raise DataError("this checkpoint was trained without the word-attention module")
    tokens_all = [np.asarray(d, dtype=np.int64) for d in corpus.docs]
    _, _, _, _, z_fused = model.representations(params, train.by_item, tokens_all)

    out = []
    for pos in item_positions:
        doc = tokens_all[pos]
        padded = doc[None, :]
        valid = np.ones_like(padded, dtype=bool)
        _, _, att, _, _ = model._attention_internals(params, padded, valid)
        att_item = att[0].T if hyper.attention_mode == "multi_dim" else att[0][None, :]
        weights = minmax_normalize(accumulate_word_weights(att_item))

        neighbor_rows: list[NeighborRow] = []
        if hyper.uses_neighbors and graph is not None:
            nbrs = graph.neighbors[pos]
            if len(nbrs):
                _, nbr_weights, _ = model.neighbor_pool(
                    params, z_fused, [pos], [nbrs]
                )
                order = np.argsort(-nbr_weights[0], kind="stable")
                for j in order:
                    nbr_pos = int(nbrs[j])
                    neighbor_rows.append(
                        NeighborRow(
                            item_id=item_labels[nbr_pos],
                            label=_doc_snippet(corpus, nbr_pos),
                            score=float(nbr_weights[0][j]),
                        )
                    )
        out.append(
            AttentionRendering(
                item_id=item_labels[pos],
                tokens=corpus.token_strings(doc.tolist()),
                weights=weights,
                neighbors=neighbor_rows,
                textless=corpus.textless[pos],
            )
        )
    return out


def _doc_snippet(corpus, item: int, max_tokens: int = 6) -> str:
    return " ".join(corpus.token_strings(corpus.docs[item][:max_tokens]))


def render_terminal(rendering: AttentionRendering, floor: float = COLOR_FLOOR) -> str:
    """ANSI rendering: background intensity proportional to token weight."""
    pieces = []
    for token, weight in zip(rendering.tokens, rendering.weights):
        if weight < floor:
            pieces.append(token)
        else:
            level = 232 + int(round(weight * 18))  # grayscale ramp 232..250
            fg = 30 if weight > 0.5 else 37
            pieces.append(f"\x1b[48;5;{level}m\x1b[{fg}m{token}\x1b[0m")
    lines = [f"item {rendering.item_id}", "  " + " ".join(pieces)]
    if rendering.textless:
        lines.append("  (item had no usable text; showing the learned unknown token)")
    if rendering.neighbors:
        lines.append("  neighbors (attention score):")
        for row in rendering.neighbors:
            lines.append(f"    {row.score:.5f}  {row.item_id}  {row.label}")
    else:
        lines.append("  neighbors: none")
    return "\n".join(lines)


def render_html(renderings: list[AttentionRendering], floor: float = COLOR_FLOOR) -> str:
    """One self-contained page; token background opacity encodes weight."""
    parts = [
        "<!DOCTYPE html>",
        "<html><head><meta charset=\"utf-8\">",
        "<title>attention visualization</title></head>",
        "<body style=\"font-family: Georgia, serif; margin: 2em; max-width: 60em;\">",
        "<h1 style=\"font-size: 1.4em;\">Word and neighbor attention</h1>",
    ]
    for rendering in renderings:
        parts.append(
            f"<h2 style=\"font-size: 1.1em;\">Item {html.escape(rendering.item_id)}</h2>"
        )
        if rendering.textless:
            parts.append("<p><em>No usable text; the document is the learned unknown token.</em></p>")
        tokens_html = []
        for token, weight in zip(rendering.tokens, rendering.weights):
            safe = html.escape(token)
            if weight < floor:
                tokens_html.append(safe)
            else:
                tokens_html.append(
                    f"<span style=\"background: rgba(80, 160, 230, {weight:.3f});"
                    f" border-radius: 2px; padding: 0 2px;\">{safe}</span>"
                )
        parts.append(
            "<p style=\"line-height: 1.7;\">" + " ".join(tokens_html) + "</p>"
        )
        if rendering.neighbors:
            parts.append(
                "<table style=\"border-collapse: collapse; margin: 0.5em 0 1.5em;\">"
                "<tr><th style=\"text-align: left; padding: 2px 10px;\">Neighbor</th>"
                "<th style=\"text-align: left; padding: 2px 10px;\">Snippet</th>"
                "<th style=\"text-align: right; padding: 2px 10px;\">Score</th></tr>"
            )
            for row in rendering.neighbors:
                parts.append(
                    "<tr>"
                    f"<td style=\"padding: 2px 10px;\">{html.escape(row.item_id)}</td>"
                    f"<td style=\"padding: 2px 10px;\">{html.escape(row.label)}</td>"
                    f"<td style=\"padding: 2px 10px; text-align: right;\">{row.score:.5f}</td>"
                    "</tr>"
                )
            parts.append("</table>")
        else:
            parts.append("<p><em>No neighbors.</em></p>")
    parts.append("</body></html>")
    return "\n".join(parts) + "\n"


def write_html(renderings: list[AttentionRendering], path) -> Path:
    path = Path(path)
    path.write_text(render_html(renderings), encoding="utf-8")
    return path
