import numpy as np
import pytest

from gaterec.errors import ConfigError, DataError
from gaterec.model import (
    GateModel,
    decode,
    encode_ratings,
    forward_item,
    gate_fuse,
    init_parameters,
    neighbor_attention,
    weighted_loss,
    word_attention_multi,
    word_attention_vanilla,
)

from conftest import full_batch, toy_corpus, toy_graph, toy_hyper, toy_ratings


def _zeroed(params):
    for name in params.names():
        params[name][...] = 0.0
    return params


class TestEncodeRatings:
    def test_zero_params_give_zero(self, toy_setup):
        hyper, params, ratings, _, _ = toy_setup
        _zeroed(params)
        _, z_rating = encode_ratings(np.ones(hyper.num_users), params)
        assert np.array_equal(z_rating, np.zeros(hyper.latent))

    def test_no_raters_independent_of_first_layer_weights(self, toy_setup):
        hyper, params, _, _, _ = toy_setup
        r = np.zeros(hyper.num_users)
        _, before = encode_ratings(r, params)
        expected = np.tanh(
            params["enc2_w"] @ np.tanh(params["enc1_b"]) + params["enc2_b"]
        )
        assert np.allclose(before, expected, atol=1e-12)
        params["enc1_w"][...] = np.random.default_rng(1).normal(size=params["enc1_w"].shape)
        _, after = encode_ratings(r, params)
        assert np.allclose(before, after, atol=1e-12)

    def test_matches_scripted_two_layer_oracle(self, toy_setup):
        hyper, params, _, _, _ = toy_setup
        rng = np.random.default_rng(2)
        r = (rng.random(hyper.num_users) < 0.5).astype(float)
        z1, z_rating = encode_ratings(r, params)
        # independent straight-line evaluation
        pre1 = params["enc1_b"].copy()
        for j in range(hyper.hidden1):
            pre1[j] += float(np.dot(params["enc1_w"][j], r))
        step1 = np.tanh(pre1)
        pre2 = params["enc2_b"].copy()
        for j in range(hyper.latent):
            pre2[j] += float(np.dot(params["enc2_w"][j], step1))
        assert np.allclose(z1, step1, atol=1e-12)
        assert np.allclose(z_rating, np.tanh(pre2), atol=1e-12)

    def test_length_mismatch_rejected(self, toy_setup):
        _, params, _, _, _ = toy_setup
        with pytest.raises(ValueError):
            encode_ratings(np.zeros(3), params)


class TestWordAttentionMulti:
    def test_single_token(self, toy_setup):
        hyper, params, _, _, _ = toy_setup
        att, z_content = word_attention_multi(np.array([4]), params)
        assert att.shape == (hyper.att_dims, 1)
        assert np.allclose(att, 1.0)
        e = params["word_emb"][:, 4]
        content_mat = att @ e[None, :]  # every row equals the embedding
        assert np.allclose(content_mat, np.tile(e, (hyper.att_dims, 1)), atol=1e-12)
        expected = np.tanh(e * params["att_pool_w"].sum())
        assert np.allclose(z_content, expected, atol=1e-12)

    def test_duplicated_token_shares_weight(self, toy_setup):
        _, params, _, _, _ = toy_setup
        att, _ = word_attention_multi(np.array([5, 5]), params)
        assert np.allclose(att, 0.5, atol=1e-12)

    def test_matches_scripted_oracle(self, toy_setup):
        hyper, params, _, _, _ = toy_setup
        tokens = np.array([2, 6, 3])
        att, z_content = word_attention_multi(tokens, params)
        # transliteration of the layer equations, scalar loops only
        emb = params["word_emb"]
        d = np.stack([emb[:, t] for t in tokens], axis=1)
        hidden = np.tanh(params["att_proj_w"] @ d + params["att_proj_b"][:, None])
        scores = params["att_score_w"] @ hidden + params["att_score_b"][:, None]
        expected_att = np.empty_like(scores)
        for row in range(scores.shape[0]):
            e = np.exp(scores[row] - scores[row].max())
            expected_att[row] = e / e.sum()
        content_mat = expected_att @ d.T
        expected_z = np.tanh(content_mat.T @ params["att_pool_w"])
        assert np.allclose(att, expected_att, atol=1e-12)
        assert np.allclose(z_content, expected_z, atol=1e-12)

    def test_padding_gets_zero_mass_and_matches_unpadded(self, toy_setup):
        _, params, _, _, _ = toy_setup
        tokens = np.array([2, 6, 3])
        att, z_content = word_attention_multi(tokens, params)
        padded = np.array([2, 6, 3, 0, 0])
        valid = np.array([True, True, True, False, False])
        att_p, z_p = word_attention_multi(padded, params, valid=valid)
        assert np.all(att_p[:, ~valid] == 0.0)
        assert np.allclose(att_p[:, valid], att, atol=1e-12)
        assert np.allclose(z_p, z_content, atol=1e-12)

    def test_all_pad_rejected(self, toy_setup):
        _, params, _, _, _ = toy_setup
        with pytest.raises(DataError):
            word_attention_multi(np.array([0, 0]), params, valid=np.array([False, False]))

    def test_token_permutation_permutes_columns_keeps_pooled(self, toy_setup):
        _, params, _, _, _ = toy_setup
        tokens = np.array([2, 3, 4, 5])
        perm = np.array([3, 0, 2, 1])
        att, z_content = word_attention_multi(tokens, params)
        att_p, z_p = word_attention_multi(tokens[perm], params)
        assert np.allclose(att_p, att[:, perm], atol=1e-12)
        assert np.allclose(z_p, z_content, atol=1e-12)


class TestWordAttentionVanilla:
    @pytest.fixture
    def vanilla_params(self):
        hyper = toy_hyper(attention_mode="vanilla")
        return hyper, init_parameters(hyper, seed=7)

    def test_single_token_weight_one_no_activation(self, vanilla_params):
        _, params = vanilla_params
        weights, z_content = word_attention_vanilla(np.array([3]), params)
        assert np.allclose(weights, [1.0])
        assert np.allclose(z_content, params["word_emb"][:, 3], atol=1e-12)

    def test_identical_embeddings_uniform(self, vanilla_params):
        _, params = vanilla_params
        weights, _ = word_attention_vanilla(np.array([4, 4, 4]), params)
        assert np.allclose(weights, 1.0 / 3.0, atol=1e-12)

    def test_matches_multi_dim_with_one_aspect_up_to_activation(self):
        hyper_v = toy_hyper(attention_mode="vanilla")
        params_v = init_parameters(hyper_v, seed=3)
        hyper_m = toy_hyper(att_dims=1)
        params_m = init_parameters(hyper_m, seed=3)
        # align the shared slots, neutralize the extra aggregation layer
        for name in ("word_emb", "att_proj_w", "att_proj_b"):
            params_m[name][...] = params_v[name]
        params_m["att_score_w"][...] = params_v["att_score_w"][None, :]
        params_m["att_score_b"][...] = 0.0
        params_m["att_pool_w"][...] = 1.0
        tokens = np.array([2, 5, 7])
        weights_v, z_v = word_attention_vanilla(tokens, params_v)
        att_m, z_m = word_attention_multi(tokens, params_m)
        assert np.allclose(att_m[0], weights_v, atol=1e-12)
        assert np.allclose(z_m, np.tanh(z_v), atol=1e-12)


class TestGateFuse:
    def test_identical_inputs_fixed_point(self, toy_setup):
        _, params, _, _, _ = toy_setup
        x = np.array([0.3, -0.2, 0.9])
        _, z_fused = gate_fuse(x, x, params)
        assert np.allclose(z_fused, x, atol=1e-12)

    def test_zero_params_average(self, toy_setup):
        hyper, params, _, _, _ = toy_setup
        for name in ("gate_rating_w", "gate_content_w", "gate_b"):
            params[name][...] = 0.0
        a, b = np.array([1.0, 0.0, -1.0]), np.array([0.0, 2.0, 1.0])
        gate, z_fused = gate_fuse(a, b, params)
        assert np.allclose(gate, 0.5, atol=1e-12)
        assert np.allclose(z_fused, (a + b) / 2.0, atol=1e-12)

    def test_matches_scripted_oracle(self, toy_setup):
        _, params, _, _, _ = toy_setup
        rng = np.random.default_rng(5)
        a, b = rng.normal(size=3), rng.normal(size=3)
        gate, z_fused = gate_fuse(a, b, params)
        pre = params["gate_rating_w"] @ a + params["gate_content_w"] @ b + params["gate_b"]
        expected_gate = 1.0 / (1.0 + np.exp(-pre))
        assert np.allclose(gate, expected_gate, atol=1e-12)
        assert np.allclose(z_fused, expected_gate * a + (1 - expected_gate) * b, atol=1e-12)

    def test_convexity_bounds(self, toy_setup):
        _, params, _, _, _ = toy_setup
        rng = np.random.default_rng(6)
        for _ in range(20):
            a, b = rng.normal(size=3), rng.normal(size=3)
            gate, z_fused = gate_fuse(a, b, params)
            assert np.all(gate > 0) and np.all(gate < 1)
            assert np.all(z_fused >= np.minimum(a, b) - 1e-12)
            assert np.all(z_fused <= np.maximum(a, b) + 1e-12)


class TestNeighborAttention:
    def test_single_neighbor(self, toy_setup):
        _, params, _, _, _ = toy_setup
        z = np.array([0.1, -0.5, 0.3])
        nbr = np.array([[0.7, 0.2, -0.1]])
        weights, z_nbr = neighbor_attention(z, nbr, params)
        assert np.allclose(weights, [1.0])
        assert np.allclose(z_nbr, nbr[0], atol=1e-12)

    def test_identical_neighbors_share_weight(self, toy_setup):
        _, params, _, _, _ = toy_setup
        z = np.array([0.1, -0.5, 0.3])
        nbr = np.tile(np.array([0.7, 0.2, -0.1]), (2, 1))
        weights, _ = neighbor_attention(z, nbr, params)
        assert np.allclose(weights, 0.5, atol=1e-12)

    def test_matches_scripted_oracle(self, toy_setup):
        _, params, _, _, _ = toy_setup
        rng = np.random.default_rng(7)
        z = rng.normal(size=3)
        nbrs = rng.normal(size=(3, 3))
        weights, z_nbr = neighbor_attention(z, nbrs, params)
        raw = np.array([np.tanh(z @ params["nbr_score_w"] @ nbrs[j]) for j in range(3)])
        e = np.exp(raw - raw.max())
        expected_w = e / e.sum()
        expected_z = sum(expected_w[j] * nbrs[j] for j in range(3))
        assert np.allclose(weights, expected_w, atol=1e-12)
        assert np.allclose(z_nbr, expected_z, atol=1e-12)

    def test_empty_neighborhood(self, toy_setup):
        _, params, _, _, _ = toy_setup
        weights, z_nbr = neighbor_attention(np.array([0.1, 0.2, 0.3]), [], params)
        assert weights.size == 0
        assert np.array_equal(z_nbr, np.zeros(3))

    def test_permutation_invariance(self, toy_setup):
        _, params, _, _, _ = toy_setup
        rng = np.random.default_rng(8)
        z = rng.normal(size=3)
        nbrs = rng.normal(size=(3, 3))
        perm = np.array([2, 0, 1])
        w1, z1 = neighbor_attention(z, nbrs, params)
        w2, z2 = neighbor_attention(z, nbrs[perm], params)
        assert np.allclose(w2, w1[perm], atol=1e-12)
        assert np.allclose(z1, z2, atol=1e-12)


class TestDecode:
    def test_zero_weights_bias_only(self, toy_setup):
        hyper, params, _, _, _ = toy_setup
        _zeroed(params)
        params["dec2_b"][...] = np.linspace(-1, 1, hyper.num_users)
        out = decode(np.zeros(3), np.zeros(3), params, "full")
        assert np.allclose(out, np.tanh(params["dec2_b"]), atol=1e-12)

    def test_equal_branches_double_preactivation(self, toy_setup):
        _, params, _, _, _ = toy_setup
        z = np.array([0.2, -0.4, 0.6])
        z3 = np.tanh(params["dec1_w"] @ z + params["dec1_b"])
        expected = np.tanh(2.0 * (params["dec2_w"] @ z3) + params["dec2_b"])
        assert np.allclose(decode(z, z, params, "full"), expected, atol=1e-12)

    def test_matches_scripted_oracle(self, toy_setup):
        _, params, _, _, _ = toy_setup
        rng = np.random.default_rng(9)
        z_fused, z_nbr = rng.normal(size=3), rng.normal(size=3)
        out = decode(z_fused, z_nbr, params, "full")
        a = np.tanh(params["dec1_w"] @ z_fused + params["dec1_b"])
        b = np.tanh(params["dec1_w"] @ z_nbr + params["dec1_b"])
        expected = np.tanh(params["dec2_w"] @ a + params["dec2_w"] @ b + params["dec2_b"])
        assert np.allclose(out, expected, atol=1e-12)

    def test_branch_swap_symmetry(self, toy_setup):
        _, params, _, _, _ = toy_setup
        rng = np.random.default_rng(10)
        a, b = rng.normal(size=3), rng.normal(size=3)
        assert np.allclose(
            decode(a, b, params, "full"), decode(b, a, params, "full"), atol=1e-12
        )

    def test_single_branch_ablation(self, toy_setup):
        _, params, _, _, _ = toy_setup
        z = np.array([0.5, 0.1, -0.3])
        out = decode(z, None, params, "ae_only")
        z3 = np.tanh(params["dec1_w"] @ z + params["dec1_b"])
        assert np.allclose(out, np.tanh(params["dec2_w"] @ z3 + params["dec2_b"]), atol=1e-12)


class TestWeightedLoss:
    def test_perfect_reconstruction_zero(self):
        r = np.array([1.0, 0.0, 1.0])
        assert weighted_loss(r.copy(), r, rho=5.0) == 0.0

    def test_single_rated_user_weight(self):
        # one user, rated, reconstruction 0: contribution (rho * 1)^2
        assert weighted_loss(np.array([0.0]), np.array([1.0]), rho=5.0) == pytest.approx(25.0)

    def test_unrated_weight_one(self):
        assert weighted_loss(np.array([0.5]), np.array([0.0]), rho=17.0) == pytest.approx(0.25)

    def test_includes_l2(self, toy_setup):
        _, params, _, _, _ = toy_setup
        r = np.array([0.0] * 6)
        base = weighted_loss(np.zeros(6), r, rho=2.0)
        with_reg = weighted_loss(np.zeros(6), r, rho=2.0, params=params, l2_reg=0.5)
        assert with_reg == pytest.approx(base + 0.5 * params.l2())

    def test_rho_must_exceed_one(self):
        with pytest.raises(ConfigError):
            weighted_loss(np.zeros(2), np.zeros(2), rho=1.0)


class TestBatchedForwardConsistency:
    def test_batched_equals_per_item_composition(self, toy_setup):
        hyper, params, ratings, corpus, graph = toy_setup
        model = GateModel(hyper)
        batch = full_batch(hyper, ratings, corpus, graph)
        trace = model.forward_batch(params, batch)

        # independent per-item composition of the single-item ops
        dense = np.zeros((hyper.num_items, hyper.num_users))
        for i, users in enumerate(ratings.by_item):
            dense[i, users] = 1.0
        fused = []
        for i in range(hyper.num_items):
            _, z_rating = encode_ratings(dense[i], params)
            _, z_content = word_attention_multi(np.array(corpus.docs[i]), params)
            _, z_fused = gate_fuse(z_rating, z_content, params)
            fused.append(z_fused)
        for i in range(hyper.num_items):
            _, z_nbr = neighbor_attention(
                fused[i], [fused[j] for j in graph.neighbors[i]], params
            )
            expected = decode(fused[i], z_nbr, params, "full")
            assert np.allclose(trace.z_fused[i], fused[i], atol=1e-12)
            assert np.allclose(trace.r_hat[list(batch.item_ids).index(i)], expected, atol=1e-12)

    def test_forward_item_matches_batch(self, toy_setup):
        hyper, params, ratings, corpus, graph = toy_setup
        model = GateModel(hyper)
        batch = full_batch(hyper, ratings, corpus, graph)
        trace = model.forward_batch(params, batch)
        dense = np.zeros((hyper.num_items, hyper.num_users))
        for i, users in enumerate(ratings.by_item):
            dense[i, users] = 1.0
        for b, i in enumerate(batch.item_ids):
            nbr_reps = trace.z_fused[batch.nbr_pos[b]]
            item = forward_item(params, hyper, dense[i], np.array(corpus.docs[i]), nbr_reps)
            assert np.allclose(item.r_hat, trace.r_hat[b], atol=1e-12)

    def test_all_outputs_finite(self, toy_setup):
        hyper, params, ratings, corpus, graph = toy_setup
        model = GateModel(hyper)
        trace = model.forward_batch(params, full_batch(hyper, ratings, corpus, graph))
        for arr in (trace.z1, trace.z_rating, trace.z_content, trace.z_fused, trace.r_hat):
            assert np.all(np.isfinite(arr))

    def test_attention_rows_sum_to_one_with_zero_pad_mass(self, toy_setup):
        hyper, params, ratings, corpus, graph = toy_setup
        model = GateModel(hyper)
        batch = full_batch(hyper, ratings, corpus, graph)
        padded, valid = model._pad_tokens(batch.tokens, 0, len(batch.tokens))
        _, _, att, _, _ = model._attention_internals(params, padded, valid)
        sums = att.sum(axis=1)  # (K, da)
        assert np.allclose(sums, 1.0, atol=1e-6)
        assert np.all(att[~valid] == 0.0)

    def test_neighbor_weights_sum_to_one(self, toy_setup):
        hyper, params, ratings, corpus, graph = toy_setup
        model = GateModel(hyper)
        trace = model.forward_batch(params, full_batch(hyper, ratings, corpus, graph))
        for b, weights in enumerate(trace.nbr_weights):
            if len(weights):
                assert abs(weights.sum() - 1.0) <= 1e-6
