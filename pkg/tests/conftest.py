import numpy as np
import pytest

from gaterec.data import NeighborGraph, SparseBinaryRatings
from gaterec.model import GateModel, ModelHyper, build_item_batch, init_parameters
from gaterec.text import ItemCorpus


def toy_hyper(**overrides) -> ModelHyper:
    """Small shapes used throughout the gradient and invariant tests."""
    base = dict(
        num_users=6,
        num_items=4,
        num_embeddings=8,
        hidden1=4,
        latent=3,
        att_dims=2,
        max_len=5,
        rho=2.5,
        l2_reg=0.01,
        attention_mode="multi_dim",
        ablation="full",
        neighbor_grad="flow",
    )
    base.update(overrides)
    return ModelHyper(**base)


def toy_corpus() -> ItemCorpus:
    # token ids start at 2 (0 pad, 1 unk); lengths vary, one single-token doc
    vocab = {f"tok{i}": i for i in range(2, 8)}
    docs = [[2, 3, 4], [5, 2], [6], [7, 3, 4, 5, 2]]
    return ItemCorpus(vocab=vocab, docs=docs, textless=[False] * 4, max_len=5)


def toy_ratings() -> SparseBinaryRatings:
    pairs = [(0, 0), (1, 0), (2, 0), (0, 1), (3, 1), (4, 2), (5, 2), (1, 2), (2, 3), (5, 3)]
    return SparseBinaryRatings.from_pairs(np.array(pairs), num_users=6, num_items=4)


def toy_graph() -> NeighborGraph:
    # item 2 has an empty neighborhood on purpose
    return NeighborGraph(
        [
            np.array([1, 3], dtype=np.int64),
            np.array([0], dtype=np.int64),
            np.empty(0, dtype=np.int64),
            np.array([0, 1, 2], dtype=np.int64),
        ]
    )


@pytest.fixture
def toy_setup():
    hyper = toy_hyper()
    params = init_parameters(hyper, seed=7)
    return hyper, params, toy_ratings(), toy_corpus(), toy_graph()


def full_batch(hyper, ratings, corpus, graph):
    return build_item_batch(
        np.arange(hyper.num_items), ratings, corpus, graph, hyper
    )


def make_model_loss(hyper, ratings, corpus, graph, params=None):
    """(loss_fn, grads_fn, batch) over the whole toy dataset as one batch.

    For stop-gradient configurations the loss function itself must treat the
    neighbor representations as constants, so they are captured once from
    `params` and substituted into every evaluation.
    """
    model = GateModel(hyper)
    batch = full_batch(hyper, ratings, corpus, graph)
    frozen = None
    if hyper.uses_neighbors and hyper.neighbor_grad == "stop":
        if params is None:
            raise ValueError("stop-mode loss needs the reference params")
        frozen = model.forward_batch(params, batch).z_fused.copy()

    def loss_fn(p):
        trace = model.forward_batch(p, batch, frozen_neighbor_reps=frozen)
        return model.batch_loss(p, batch, trace)

    def grads_fn(p):
        trace = model.forward_batch(p, batch, frozen_neighbor_reps=frozen)
        return model.backward_batch(p, batch, trace)

    return loss_fn, grads_fn, batch
