"""Forward and hand-derived backward passes of the gated attentive autoencoder.

The model encodes an item three ways and fuses them:

* a two-layer autoencoder over the item's binary user-rating column,
* a word-attention encoder over the item's token sequence (multi-aspect
  score matrix, or a single-vector "vanilla" variant kept as an ablation),
* a learned sigmoid gate that convexly combines the two representations,
* neighbor attention that pools related items' fused representations,
* a shared two-layer decoder applied to the fused and the neighborhood
  representation, summed before the output activation.

Gradients are derived by hand (no autodiff); `finite_diff_check` in the test
suite is the authority on their correctness. The batched path recomputes the
word-attention internals during backward from stored token ids so that trace
memory stays O(K * latent) rather than O(K * att_dims * max_len).
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .linalg import sigmoid
from .params import ParameterSet, glorot_uniform
from .seeding import seeded_rng
from .text import PAD_ID

ABLATIONS = ("ae_only", "ae_word_gate", "full")
ATTENTION_MODES = ("multi_dim", "vanilla")
NEIGHBOR_GRAD_MODES = ("flow", "stop")
DECODER_ACTIVATIONS = ("tanh", "sigmoid")

_CHUNK = 256


@dataclass
class ModelHyper:
    """Architecture sizes and behavior switches.

    The layer widths follow the [num_users, hidden1, latent, hidden1,
    num_users] stacked-autoencoder layout; the word embedding width is tied
    to `latent`.
    """

    num_users: int
    num_items: int
    num_embeddings: int = 0
    hidden1: int = 100
    latent: int = 50
    att_dims: int = 20
    max_len: int = 300
    rho: float = 5.0
    l2_reg: float = 0.001
    attention_mode: str = "multi_dim"
    ablation: str = "full"
    neighbor_grad: str = "flow"
    decoder_activation: str = "tanh"

    def validate(self) -> "ModelHyper":
        if self.num_users < 1 or self.num_items < 1:
            raise ConfigError("num_users and num_items must be >= 1")
        for name in ("hidden1", "latent", "att_dims"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.max_len < 1:
            raise ConfigError(f"max_len must be >= 1, got {self.max_len}")
        if not self.rho > 1.0:
            raise ConfigError(f"rho must be > 1, got {self.rho}")
        if self.l2_reg < 0:
            raise ConfigError(f"l2_reg must be >= 0, got {self.l2_reg}")
        if self.attention_mode not in ATTENTION_MODES:
            raise ConfigError(f"attention_mode must be one of {ATTENTION_MODES}")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}")
        if self.neighbor_grad not in NEIGHBOR_GRAD_MODES:
            raise ConfigError(f"neighbor_grad must be one of {NEIGHBOR_GRAD_MODES}")
        if self.decoder_activation not in DECODER_ACTIVATIONS:
            raise ConfigError(f"decoder_activation must be one of {DECODER_ACTIVATIONS}")
        if self.uses_words and self.num_embeddings < 3:
            raise ConfigError("num_embeddings must cover pad, unk, and at least one token")
        return self

    @property
    def uses_words(self) -> bool:
        return self.ablation != "ae_only"

    @property
    def uses_neighbors(self) -> bool:
        return self.ablation == "full"


def init_parameters(hyper: ModelHyper, seed: int, dtype=np.float64) -> ParameterSet:
    """Glorot-uniform weights, zero biases; slots depend on the ablation."""
    hyper.validate()
    rng = seeded_rng(seed, "init")
    params = ParameterSet(dtype=dtype)
    m, h1, h = hyper.num_users, hyper.hidden1, hyper.latent

    def weight(name: str, shape):
        params.register(name, glorot_uniform(rng, shape), regularized=True)

    def bias(name: str, size: int):
        params.register(name, np.zeros(size), regularized=False)

    weight("enc1_w", (h1, m))
    bias("enc1_b", h1)
    weight("enc2_w", (h, h1))
    bias("enc2_b", h)
    weight("dec1_w", (h1, h))
    bias("dec1_b", h1)
    weight("dec2_w", (m, h1))
    bias("dec2_b", m)
    if hyper.uses_words:
        params.register(
            "word_emb", glorot_uniform(rng, (h, hyper.num_embeddings)), regularized=False
        )
        weight("att_proj_w", (h, h))
        bias("att_proj_b", h)
        if hyper.attention_mode == "multi_dim":
            weight("att_score_w", (hyper.att_dims, h))
            bias("att_score_b", hyper.att_dims)
            weight("att_pool_w", (hyper.att_dims,))
        else:
            weight("att_score_w", (h,))
        weight("gate_rating_w", (h, h))
        weight("gate_content_w", (h, h))
        bias("gate_b", h)
    if hyper.uses_neighbors:
        weight("nbr_score_w", (h, h))
    return params


# ---------------------------------------------------------------------------
# Single-item operations. These are the readable reference forms; the batched
# path below must agree with them exactly (asserted in tests).
# ---------------------------------------------------------------------------


def encode_ratings(r_vec: np.ndarray, params: ParameterSet):
    """Two tanh layers over an item's binary user column."""
    w1, b1 = params["enc1_w"], params["enc1_b"]
    r_vec = np.asarray(r_vec, dtype=params.dtype)
    if r_vec.shape != (w1.shape[1],):
        raise ValueError(f"rating vector must have shape ({w1.shape[1]},), got {r_vec.shape}")
    z1 = np.tanh(w1 @ r_vec + b1)
    z_rating = np.tanh(params["enc2_w"] @ z1 + params["enc2_b"])
    return z1, z_rating


def _masked_softmax_rows(scores: np.ndarray, valid: np.ndarray) -> np.ndarray:
    scores = np.where(valid[None, :], scores, -np.inf)
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def word_attention_multi(tokens: np.ndarray, params: ParameterSet, valid: np.ndarray | None = None):
    """Multi-aspect attention over token positions -> pooled content vector.

    `tokens` may include pad entries when `valid` marks them; padded positions
    receive exactly zero attention mass.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    if valid is None:
        valid = np.ones(len(tokens), dtype=bool)
    if tokens.ndim != 1 or len(tokens) == 0 or not valid.any():
        raise DataError("word attention needs at least one non-pad token")
    emb = params["word_emb"]
    d = emb[:, tokens]  # (h, l)
    proj = np.tanh(params["att_proj_w"] @ d + params["att_proj_b"][:, None])
    scores = params["att_score_w"] @ proj + params["att_score_b"][:, None]  # (da, l)
    att = _masked_softmax_rows(scores, valid)
    content_mat = att @ d.T  # (da, h)
    z_content = np.tanh(content_mat.T @ params["att_pool_w"])
    return att, z_content


def word_attention_vanilla(tokens: np.ndarray, params: ParameterSet, valid: np.ndarray | None = None):
    """Single-score attention; the content vector is the plain weighted sum."""
    tokens = np.asarray(tokens, dtype=np.int64)
    if valid is None:
        valid = np.ones(len(tokens), dtype=bool)
    if tokens.ndim != 1 or len(tokens) == 0 or not valid.any():
        raise DataError("word attention needs at least one non-pad token")
    emb = params["word_emb"]
    d = emb[:, tokens]
    proj = np.tanh(params["att_proj_w"] @ d + params["att_proj_b"][:, None])
    scores = params["att_score_w"] @ proj  # (l,)
    weights = _masked_softmax_rows(scores[None, :], valid)[0]
    z_content = d @ weights
    return weights, z_content


def gate_fuse(z_rating: np.ndarray, z_content: np.ndarray, params: ParameterSet):
    """Sigmoid gate; output is an elementwise convex combination."""
    if z_rating.shape != z_content.shape:
        raise ValueError(f"shape mismatch: {z_rating.shape} vs {z_content.shape}")
    pre = (
        params["gate_rating_w"] @ z_rating
        + params["gate_content_w"] @ z_content
        + params["gate_b"]
    )
    gate = sigmoid(pre)
    z_fused = gate * z_rating + (1.0 - gate) * z_content
    return gate, z_fused


def neighbor_attention(z_fused: np.ndarray, neighbor_reps, params: ParameterSet):
    """Bilinear-scored softmax pooling of neighbor representations.

    Empty neighborhoods yield (empty weights, zero vector); the decoder's
    neighbor branch then degrades to a bias-only path.
    """
    reps = np.asarray(neighbor_reps, dtype=z_fused.dtype).reshape(-1, len(z_fused))
    if reps.shape[0] == 0:
        return np.empty(0, dtype=z_fused.dtype), np.zeros_like(z_fused)
    scores = np.tanh(reps @ (params["nbr_score_w"].T @ z_fused))
    shifted = scores - scores.max()
    e = np.exp(shifted)
    weights = e / e.sum()
    return weights, weights @ reps


def _out_activation(pre: np.ndarray, kind: str) -> np.ndarray:
    return np.tanh(pre) if kind == "tanh" else sigmoid(pre)


def _out_activation_deriv(out: np.ndarray, kind: str) -> np.ndarray:
    return 1.0 - out**2 if kind == "tanh" else out * (1.0 - out)


def decode(
    z_fused: np.ndarray,
    z_nbr: np.ndarray | None,
    params: ParameterSet,
    ablation: str = "full",
    activation: str = "tanh",
) -> np.ndarray:
    """Shared-weight two-layer decoder; full mode sums both branches pre-activation."""
    w3, b3 = params["dec1_w"], params["dec1_b"]
    w4, b4 = params["dec2_w"], params["dec2_b"]
    z3_fused = np.tanh(w3 @ z_fused + b3)
    if ablation == "full":
        if z_nbr is None:
            raise ValueError("full decoder needs a neighborhood representation")
        z3_nbr = np.tanh(w3 @ z_nbr + b3)
        return _out_activation(w4 @ z3_fused + w4 @ z3_nbr + b4, activation)
    return _out_activation(w4 @ z3_fused + b4, activation)


def weighted_square_error(r_hat: np.ndarray, rated_users: np.ndarray, rho: float) -> float:
    """Sum over users of (c * (r - r_hat))^2 with c = rho on rated entries else 1."""
    resid = r_hat.copy()
    resid[rated_users] -= 1.0
    sq = resid**2
    sq[rated_users] *= rho**2
    return float(sq.sum())


def weighted_loss(
    r_hat: np.ndarray,
    r_vec: np.ndarray,
    rho: float,
    params: ParameterSet | None = None,
    l2_reg: float = 0.0,
) -> float:
    """Confidence-weighted square loss for one item, plus the L2 penalty."""
    if not rho > 1.0:
        raise ConfigError(f"rho must be > 1, got {rho}")
    r_vec = np.asarray(r_vec)
    if r_hat.shape != r_vec.shape:
        raise ValueError(f"shape mismatch: {r_hat.shape} vs {r_vec.shape}")
    if not np.all(np.isfinite(r_hat)):
        raise DataError("non-finite reconstruction passed to weighted_loss")
    rated = np.flatnonzero(r_vec)
    loss = weighted_square_error(np.asarray(r_hat, dtype=np.float64), rated, rho)
    if params is not None and l2_reg:
        loss += l2_reg * params.l2()
    return loss


@dataclass
class ItemTrace:
    """Full forward trace of a single item, for tests and visualization."""

    z1: np.ndarray
    z_rating: np.ndarray
    att_weights: np.ndarray | None
    z_content: np.ndarray | None
    gate: np.ndarray | None
    z_fused: np.ndarray
    nbr_weights: np.ndarray | None
    z_nbr: np.ndarray | None
    r_hat: np.ndarray


def forward_item(
    params: ParameterSet,
    hyper: ModelHyper,
    r_vec: np.ndarray,
    tokens: np.ndarray | None = None,
    neighbor_reps=None,
) -> ItemTrace:
    """Compose the single-item ops according to the configured ablation."""
    z1, z_rating = encode_ratings(r_vec, params)
    att = z_content = gate = None
    z_fused = z_rating
    if hyper.uses_words:
        if tokens is None:
            raise ValueError("this configuration needs a token sequence")
        if hyper.attention_mode == "multi_dim":
            att, z_content = word_attention_multi(tokens, params)
        else:
            att, z_content = word_attention_vanilla(tokens, params)
        gate, z_fused = gate_fuse(z_rating, z_content, params)
    nbr_weights = z_nbr = None
    if hyper.uses_neighbors:
        reps = neighbor_reps if neighbor_reps is not None else np.empty((0, hyper.latent))
        nbr_weights, z_nbr = neighbor_attention(z_fused, reps, params)
    r_hat = decode(z_fused, z_nbr, params, hyper.ablation, hyper.decoder_activation)
    return ItemTrace(z1, z_rating, att, z_content, gate, z_fused, nbr_weights, z_nbr, r_hat)


# ---------------------------------------------------------------------------
# Batched path used by the trainer and evaluator.
# ---------------------------------------------------------------------------


@dataclass
class ItemBatch:
    """A mini-batch of items plus the neighbor closure needed to score them.

    Neighbor positions are padded to the batch's max degree; `nbr_valid`
    marks real entries. `rated_rows`/`rated_cols` index the positive entries
    of the batch's target block for the weighted loss.
    """

    item_ids: np.ndarray
    closure_ids: np.ndarray
    pos_in_closure: np.ndarray
    rater_lists: list
    tokens: list | None
    nbr_idx: np.ndarray | None  # (B, J) positions into the closure
    nbr_valid: np.ndarray | None  # (B, J)
    rated_rows: np.ndarray
    rated_cols: np.ndarray

    @property
    def size(self) -> int:
        return len(self.item_ids)


def _pad_neighbor_positions(closure: np.ndarray, nbr_lists: list):
    max_deg = max((len(lst) for lst in nbr_lists), default=0)
    b = len(nbr_lists)
    idx = np.zeros((b, max(max_deg, 1)), dtype=np.int64)
    valid = np.zeros((b, max(max_deg, 1)), dtype=bool)
    if max_deg == 0:
        return idx[:, :0], valid[:, :0]
    flat = np.concatenate([lst for lst in nbr_lists if len(lst)]) if any(
        len(lst) for lst in nbr_lists
    ) else np.empty(0, dtype=np.int64)
    positions = np.searchsorted(closure, flat)
    offset = 0
    for row, lst in enumerate(nbr_lists):
        n = len(lst)
        idx[row, :n] = positions[offset : offset + n]
        valid[row, :n] = True
        offset += n
    return idx, valid


def build_item_batch(item_ids, train, corpus, graph, hyper: ModelHyper) -> ItemBatch:
    """Assemble rating columns, documents, and the neighbor closure for a batch."""
    ids = np.asarray(item_ids, dtype=np.int64)
    if len(np.unique(ids)) != len(ids):
        raise ValueError("batch contains duplicate item ids")
    if hyper.uses_neighbors:
        if graph is None:
            raise ValueError("full model needs a neighbor graph")
        nbr_lists = [graph.neighbors[i] for i in ids]
        closure = np.unique(np.concatenate([ids] + nbr_lists)) if nbr_lists else np.unique(ids)
    else:
        nbr_lists = None
        closure = np.unique(ids)
    pos = np.searchsorted(closure, ids)
    rater_lists = [train.by_item[c] for c in closure]
    tokens = None
    if hyper.uses_words:
        if corpus is None:
            raise ValueError("this configuration needs an item corpus")
        tokens = [np.asarray(corpus.docs[c], dtype=np.int64) for c in closure]
    nbr_idx = nbr_valid = None
    if hyper.uses_neighbors:
        nbr_idx, nbr_valid = _pad_neighbor_positions(closure, nbr_lists)

    row_chunks, col_chunks = [], []
    for b, p in enumerate(pos):
        raters = rater_lists[p]
        if len(raters):
            row_chunks.append(np.full(len(raters), b, dtype=np.int64))
            col_chunks.append(raters)
    rated_rows = np.concatenate(row_chunks) if row_chunks else np.empty(0, dtype=np.int64)
    rated_cols = np.concatenate(col_chunks) if col_chunks else np.empty(0, dtype=np.int64)
    return ItemBatch(
        ids, closure, pos, rater_lists, tokens, nbr_idx, nbr_valid, rated_rows, rated_cols
    )


@dataclass
class BatchTrace:
    """Stacked intermediate activations; closure-indexed unless noted."""

    z1: np.ndarray
    z_rating: np.ndarray
    z_content: np.ndarray | None
    gate: np.ndarray | None
    z_fused: np.ndarray
    nbr_scores: list | None  # per batch item
    nbr_weights: list | None  # per batch item
    z_nbr: np.ndarray | None  # (B, h)
    z3_fused: np.ndarray  # (B, h1)
    z3_nbr: np.ndarray | None  # (B, h1)
    r_hat: np.ndarray  # (B, m)


class GateModel:
    """Batched forward/backward around a ParameterSet."""

    def __init__(self, hyper: ModelHyper):
        self.hyper = hyper.validate()

    def init_params(self, seed: int, dtype=np.float64) -> ParameterSet:
        return init_parameters(self.hyper, seed, dtype=dtype)

    # -- forward ------------------------------------------------------------

    def _dense_ratings(self, rater_lists, lo: int, hi: int, dtype) -> np.ndarray:
        r = np.zeros((hi - lo, self.hyper.num_users), dtype=dtype)
        for k in range(lo, hi):
            r[k - lo, rater_lists[k]] = 1.0
        return r

    def _pad_tokens(self, tokens, lo: int, hi: int):
        lengths = [len(tokens[k]) for k in range(lo, hi)]
        max_len = max(lengths)
        padded = np.full((hi - lo, max_len), PAD_ID, dtype=np.int64)
        valid = np.zeros((hi - lo, max_len), dtype=bool)
        for k in range(lo, hi):
            padded[k - lo, : lengths[k - lo]] = tokens[k]
            valid[k - lo, : lengths[k - lo]] = True
        return padded, valid

    def _attention_internals(self, params: ParameterSet, padded, valid):
        """Forward of the word-attention block on a padded chunk.

        Returns everything backward needs; called again during backward
        instead of keeping these tensors in the trace.
        """
        emb_t = params["word_emb"].T  # (V, h)
        demb = emb_t[padded]  # (K, L, h)
        proj = np.tanh(demb @ params["att_proj_w"].T + params["att_proj_b"])
        if self.hyper.attention_mode == "multi_dim":
            scores = proj @ params["att_score_w"].T + params["att_score_b"]  # (K, L, da)
            scores = np.where(valid[:, :, None], scores, -np.inf)
            shifted = scores - scores.max(axis=1, keepdims=True)
            e = np.exp(shifted)
            att = e / e.sum(axis=1, keepdims=True)  # (K, L, da)
            content_mat = att.transpose(0, 2, 1) @ demb  # (K, da, h)
            pooled = params["att_pool_w"] @ content_mat  # (K, h)
            z_content = np.tanh(pooled)
        else:
            scores = proj @ params["att_score_w"]  # (K, L)
            scores = np.where(valid, scores, -np.inf)
            shifted = scores - scores.max(axis=1, keepdims=True)
            e = np.exp(shifted)
            att = e / e.sum(axis=1, keepdims=True)  # (K, L)
            content_mat = None
            z_content = (att[:, :, None] * demb).sum(axis=1)  # (K, h)
        return demb, proj, att, content_mat, z_content

    def representations(self, params: ParameterSet, rater_lists, tokens):
        """Closure-stage forward: rating encoder, word attention, gate.

        Returns (z1, z_rating, z_content, gate, z_fused) stacked over items;
        content/gate are None for the rating-only ablation.
        """
        hyper = self.hyper
        n = len(rater_lists)
        z1 = np.empty((n, hyper.hidden1), dtype=params.dtype)
        z_rating = np.empty((n, hyper.latent), dtype=params.dtype)
        z_content = np.empty((n, hyper.latent), dtype=params.dtype) if hyper.uses_words else None
        gate = np.empty((n, hyper.latent), dtype=params.dtype) if hyper.uses_words else None
        z_fused = np.empty((n, hyper.latent), dtype=params.dtype)
        for lo in range(0, n, _CHUNK):
            hi = min(lo + _CHUNK, n)
            r = self._dense_ratings(rater_lists, lo, hi, params.dtype)
            z1_c = np.tanh(r @ params["enc1_w"].T + params["enc1_b"])
            zr_c = np.tanh(z1_c @ params["enc2_w"].T + params["enc2_b"])
            z1[lo:hi] = z1_c
            z_rating[lo:hi] = zr_c
            if hyper.uses_words:
                padded, valid = self._pad_tokens(tokens, lo, hi)
                _, _, _, _, zc_c = self._attention_internals(params, padded, valid)
                pre = (
                    zr_c @ params["gate_rating_w"].T
                    + zc_c @ params["gate_content_w"].T
                    + params["gate_b"]
                )
                g_c = sigmoid(pre)
                z_content[lo:hi] = zc_c
                gate[lo:hi] = g_c
                z_fused[lo:hi] = g_c * zr_c + (1.0 - g_c) * zc_c
            else:
                z_fused[lo:hi] = zr_c
        return z1, z_rating, z_content, gate, z_fused

    def neighbor_pool(
        self,
        params: ParameterSet,
        z_fused_all: np.ndarray,
        self_pos,
        nbr_pos,
        neighbor_values: np.ndarray | None = None,
    ):
        """Neighbor attention for a list of items against precomputed fused reps.

        `neighbor_values` substitutes a detached copy for the neighbor side of
        the scores and the pooled sum. Training never passes it (the values
        are identical either way); the gradient checker uses it to express
        stop-gradient semantics as an actual loss function.
        """
        h = self.hyper.latent
        source = z_fused_all if neighbor_values is None else neighbor_values
        scores_out, weights_out = [], []
        z_nbr = np.zeros((len(self_pos), h), dtype=params.dtype)
        w_nbr = params["nbr_score_w"]
        for b, p in enumerate(self_pos):
            positions = nbr_pos[b]
            if len(positions) == 0:
                scores_out.append(np.empty(0, dtype=params.dtype))
                weights_out.append(np.empty(0, dtype=params.dtype))
                continue
            reps = source[positions]
            s = np.tanh(reps @ (w_nbr.T @ z_fused_all[p]))
            e = np.exp(s - s.max())
            a = e / e.sum()
            scores_out.append(s)
            weights_out.append(a)
            z_nbr[b] = a @ reps
        return scores_out, weights_out, z_nbr

    def decode_batch(self, params: ParameterSet, z_self: np.ndarray, z_nbr: np.ndarray | None):
        """Decoder over batch rows; returns (z3_self, z3_nbr, r_hat)."""
        w3, b3 = params["dec1_w"], params["dec1_b"]
        w4, b4 = params["dec2_w"], params["dec2_b"]
        z3_self = np.tanh(z_self @ w3.T + b3)
        if self.hyper.uses_neighbors:
            z3_nbr = np.tanh(z_nbr @ w3.T + b3)
            pre = (z3_self + z3_nbr) @ w4.T + b4
        else:
            z3_nbr = None
            pre = z3_self @ w4.T + b4
        return z3_self, z3_nbr, _out_activation(pre, self.hyper.decoder_activation)

    def forward_batch(
        self,
        params: ParameterSet,
        batch: ItemBatch,
        frozen_neighbor_reps: np.ndarray | None = None,
    ) -> BatchTrace:
        z1, z_rating, z_content, gate, z_fused = self.representations(
            params, batch.rater_lists, batch.tokens
        )
        nbr_scores = nbr_weights = z_nbr = None
        if self.hyper.uses_neighbors:
            nbr_scores, nbr_weights, z_nbr = self.neighbor_pool(
                params, z_fused, batch.pos_in_closure, batch.nbr_pos,
                neighbor_values=frozen_neighbor_reps,
            )
        z_self = z_fused[batch.pos_in_closure]
        z3_fused, z3_nbr, r_hat = self.decode_batch(params, z_self, z_nbr)
        return BatchTrace(
            z1, z_rating, z_content, gate, z_fused,
            nbr_scores, nbr_weights, z_nbr, z3_fused, z3_nbr, r_hat,
        )

    # -- loss ---------------------------------------------------------------

    def data_loss(self, batch: ItemBatch, trace: BatchTrace) -> float:
        rho = self.hyper.rho
        total = 0.0
        for b, p in enumerate(batch.pos_in_closure):
            total += weighted_square_error(
                np.asarray(trace.r_hat[b], dtype=np.float64), batch.rater_lists[p], rho
            )
        return total

    def batch_loss(self, params: ParameterSet, batch: ItemBatch, trace: BatchTrace) -> float:
        return self.data_loss(batch, trace) + self.hyper.l2_reg * params.l2()

    # -- backward -----------------------------------------------------------

    def _grad_r_hat(self, batch: ItemBatch, trace: BatchTrace) -> np.ndarray:
        rho2 = self.hyper.rho**2
        d = trace.r_hat.copy()
        for b, p in enumerate(batch.pos_in_closure):
            rated = batch.rater_lists[p]
            d[b, rated] -= 1.0
            row = d[b]
            row *= 2.0
            row[rated] *= rho2
        return d

    def _attention_backward(self, params, grads, padded, valid, d_z_content):
        """Recompute the word-attention forward for a chunk, then push
        d(z_content) back onto the attention parameters and embeddings."""
        demb, proj, att, content_mat, z_content = self._attention_internals(
            params, padded, valid
        )
        k, l, h = demb.shape
        if self.hyper.attention_mode == "multi_dim":
            pool_w = params["att_pool_w"]
            d_pool = d_z_content * (1.0 - z_content**2)  # (K, h)
            grads["att_pool_w"] += (content_mat * d_pool[:, None, :]).sum(axis=(0, 2))
            d_content_mat = pool_w[None, :, None] * d_pool[:, None, :]  # (K, da, h)
            d_att = (d_content_mat @ demb.transpose(0, 2, 1)).transpose(0, 2, 1)  # (K, L, da)
            d_demb = att @ d_content_mat  # (K, L, da) @ (K, da, h) -> (K, L, h)
            d_scores = att * (d_att - (att * d_att).sum(axis=1, keepdims=True))
            da = d_scores.shape[2]
            grads["att_score_w"] += d_scores.reshape(-1, da).T @ proj.reshape(-1, h)
            grads["att_score_b"] += d_scores.sum(axis=(0, 1))
            d_proj = d_scores @ params["att_score_w"]  # (K, L, h)
        else:
            d_att = (demb @ d_z_content[:, :, None])[:, :, 0]  # (K, L)
            d_demb = att[:, :, None] * d_z_content[:, None, :]
            d_scores = att * (d_att - (att * d_att).sum(axis=1, keepdims=True))
            grads["att_score_w"] += d_scores.reshape(-1) @ proj.reshape(-1, h)
            d_proj = d_scores[:, :, None] * params["att_score_w"][None, None, :]
        d_pre = d_proj * (1.0 - proj**2)
        grads["att_proj_w"] += d_pre.reshape(-1, h).T @ demb.reshape(-1, h)
        grads["att_proj_b"] += d_pre.sum(axis=(0, 1))
        d_demb += d_pre @ params["att_proj_w"]
        # padded positions carry exactly zero gradient by construction
        emb_grad_t = np.zeros((params["word_emb"].shape[1], self.hyper.latent), dtype=params.dtype)
        np.add.at(emb_grad_t, padded.ravel(), d_demb.reshape(-1, self.hyper.latent))
        grads["word_emb"] += emb_grad_t.T

    def backward_batch(
        self, params: ParameterSet, batch: ItemBatch, trace: BatchTrace
    ) -> dict[str, np.ndarray]:
        """Analytic gradients of batch_loss for every slot (L2 term included)."""
        hyper = self.hyper
        grads = params.zero_grads()
        w3, w4 = params["dec1_w"], params["dec2_w"]

        # output + decoder
        d_r_hat = self._grad_r_hat(batch, trace)
        d_pre4 = d_r_hat * _out_activation_deriv(trace.r_hat, hyper.decoder_activation)
        grads["dec2_b"] += d_pre4.sum(axis=0)
        z_self = trace.z_fused[batch.pos_in_closure]
        if hyper.uses_neighbors:
            grads["dec2_w"] += d_pre4.T @ (trace.z3_fused + trace.z3_nbr)
            d_sum = d_pre4 @ w4
            d_pre3g = d_sum * (1.0 - trace.z3_fused**2)
            d_pre3n = d_sum * (1.0 - trace.z3_nbr**2)
            grads["dec1_w"] += d_pre3g.T @ z_self + d_pre3n.T @ trace.z_nbr
            grads["dec1_b"] += d_pre3g.sum(axis=0) + d_pre3n.sum(axis=0)
            d_z_self = d_pre3g @ w3
            d_z_nbr = d_pre3n @ w3
        else:
            grads["dec2_w"] += d_pre4.T @ trace.z3_fused
            d_pre3g = (d_pre4 @ w4) * (1.0 - trace.z3_fused**2)
            grads["dec1_w"] += d_pre3g.T @ z_self
            grads["dec1_b"] += d_pre3g.sum(axis=0)
            d_z_self = d_pre3g @ w3
            d_z_nbr = None

        # scatter decoder gradients onto the closure, then add neighbor terms
        d_fused = np.zeros_like(trace.z_fused)
        np.add.at(d_fused, batch.pos_in_closure, d_z_self)
        if hyper.uses_neighbors:
            w_nbr = params["nbr_score_w"]
            flow = hyper.neighbor_grad == "flow"
            for b, p in enumerate(batch.pos_in_closure):
                positions = batch.nbr_pos[b]
                if len(positions) == 0:
                    continue
                reps = trace.z_fused[positions]
                a = trace.nbr_weights[b]
                s = trace.nbr_scores[b]
                d_a = reps @ d_z_nbr[b]
                d_s = a * (d_a - a @ d_a)
                d_t = d_s * (1.0 - s**2)
                zi = trace.z_fused[p]
                weighted_reps = d_t @ reps
                grads["nbr_score_w"] += np.outer(zi, weighted_reps)
                d_fused[p] += w_nbr @ weighted_reps
                if flow:
                    d_fused[positions] += (
                        a[:, None] * d_z_nbr[b][None, :]
                        + d_t[:, None] * (w_nbr.T @ zi)[None, :]
                    )

        # closure stage: gate, word attention, rating encoder (chunked)
        n = len(batch.rater_lists)
        for lo in range(0, n, _CHUNK):
            hi = min(lo + _CHUNK, n)
            d_fused_c = d_fused[lo:hi]
            zr_c = trace.z_rating[lo:hi]
            if hyper.uses_words:
                zc_c = trace.z_content[lo:hi]
                g_c = trace.gate[lo:hi]
                d_gate = d_fused_c * (zr_c - zc_c)
                d_pre_g = d_gate * g_c * (1.0 - g_c)
                grads["gate_rating_w"] += d_pre_g.T @ zr_c
                grads["gate_content_w"] += d_pre_g.T @ zc_c
                grads["gate_b"] += d_pre_g.sum(axis=0)
                d_zr = d_fused_c * g_c + d_pre_g @ params["gate_rating_w"]
                d_zc = d_fused_c * (1.0 - g_c) + d_pre_g @ params["gate_content_w"]
                padded, valid = self._pad_tokens(batch.tokens, lo, hi)
                self._attention_backward(params, grads, padded, valid, d_zc)
            else:
                d_zr = d_fused_c
            z1_c = trace.z1[lo:hi]
            d_pre2 = d_zr * (1.0 - zr_c**2)
            grads["enc2_w"] += d_pre2.T @ z1_c
            grads["enc2_b"] += d_pre2.sum(axis=0)
            d_z1 = d_pre2 @ params["enc2_w"]
            d_pre1 = d_z1 * (1.0 - z1_c**2)
            r = self._dense_ratings(batch.rater_lists, lo, hi, params.dtype)
            grads["enc1_w"] += d_pre1.T @ r
            grads["enc1_b"] += d_pre1.sum(axis=0)

        params.add_l2_grads(grads, hyper.l2_reg)
        return grads
