import numpy as np
import pytest

from subsketch.diffcore import Tape
from subsketch.encoder import (
    BoundEncoder,
    EncoderParams,
    bind_encoder,
    encode_nodes,
    init_encoder_params,
    intra_attention,
    intra_attention_weights,
    propagation_matrix,
    subgraph_features,
)
from subsketch.sampler import SubgraphEntry, sample_subgraphs

from _synth import random_graph
from gradcheck import assert_grads_close, finite_diff_grads


def entry_for(adjacency, real, central=0):
    s = adjacency.shape[0]
    mask = np.zeros(s, dtype=bool)
    mask[:real] = True
    return SubgraphEntry(
        central_node=central,
        node_ids=tuple(range(real)),
        local_adjacency=adjacency.astype(float),
        mask=mask,
    )


def bind_arrays(tape, layer_weights, w_intra, a_intra):
    return BoundEncoder(
        layer_weights=tuple(tape.param(w) for w in layer_weights),
        w_intra=tape.param(w_intra),
        a_intra=tape.param(a_intra),
    )


def test_zero_weights_give_zero_output():
    entry = entry_for(np.array([[0.0, 1.0], [1.0, 0.0]]), real=2)
    feats = np.array([[1.0, 2.0], [3.0, 4.0]])
    tape = Tape()
    bound = bind_arrays(tape, [np.zeros((2, 3)), np.zeros((3, 3))], np.eye(3), np.ones((3, 1)))
    h = encode_nodes(entry, feats, bound, tape)
    np.testing.assert_array_equal(h.value, np.zeros((2, 3)))


def test_single_node_single_layer_hand_value():
    entry = entry_for(np.zeros((1, 1)), real=1)
    feats = np.array([[1.0]])
    tape = Tape()
    bound = bind_arrays(tape, [np.array([[0.7]])], np.eye(1), np.ones((1, 1)))
    h = encode_nodes(entry, feats, bound, tape)
    assert h.value[0, 0] == pytest.approx(np.tanh(0.7), abs=1e-12)


def gcn_oracle(entry, graph_features, layer_weights):
    """Per-node message loops over the real sub-block; independent of the tape."""
    k = len(entry.node_ids)
    a = entry.local_adjacency[:k, :k] + np.eye(k)
    deg = a.sum(axis=1)
    h = graph_features[list(entry.node_ids)].astype(float)
    for w in layer_weights:
        hw = h @ w
        nxt = np.zeros((k, w.shape[1]))
        for i in range(k):
            for j in range(k):
                if a[i, j]:
                    nxt[i] += hw[j] / np.sqrt(deg[i] * deg[j])
        h = np.tanh(nxt)
    padded = np.zeros((entry.mask.shape[0], h.shape[1]))
    padded[:k] = h
    return padded


@pytest.mark.parametrize("seed", range(4))
def test_matches_dense_message_oracle(seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, num_nodes=10, edge_prob=0.35)
    entry = sample_subgraphs(g, n=1, s=4).subgraphs[0]
    weights = [rng.standard_normal((2, 5)), rng.standard_normal((5, 5))]
    tape = Tape()
    bound = bind_arrays(tape, weights, np.eye(5), np.ones((5, 1)))
    h = encode_nodes(entry, g.features, bound, tape)
    assert np.max(np.abs(h.value - gcn_oracle(entry, g.features, weights))) <= 1e-10


def test_padded_rows_stay_zero():
    adjacency = np.zeros((4, 4))
    adjacency[0, 1] = adjacency[1, 0] = 1.0
    entry = entry_for(adjacency, real=2)
    feats = np.array([[1.0, 0.0], [0.0, 1.0]])
    rng = np.random.default_rng(0)
    tape = Tape()
    bound = bind_arrays(
        tape,
        [rng.standard_normal((2, 3)), rng.standard_normal((3, 3))],
        np.eye(3),
        np.ones((3, 1)),
    )
    h = encode_nodes(entry, feats, bound, tape)
    np.testing.assert_array_equal(h.value[2:], np.zeros((2, 3)))
    prop = propagation_matrix(entry)
    np.testing.assert_array_equal(prop, prop.T)
    assert subgraph_features(entry, feats).shape == (4, 2)


def test_attention_single_real_node_returns_its_row():
    entry = entry_for(np.zeros((3, 3)), real=1)
    rng = np.random.default_rng(1)
    tape = Tape()
    bound = bind_arrays(
        tape, [np.eye(2)], rng.standard_normal((2, 2)), rng.standard_normal((2, 1))
    )
    h = tape.constant(np.array([[0.3, -0.7], [9.0, 9.0], [9.0, 9.0]]))
    z = intra_attention(h, entry.mask, bound, tape)
    np.testing.assert_allclose(z.value, [[0.3, -0.7]], atol=1e-12)


def test_attention_identical_rows_average_to_that_row():
    entry = entry_for(np.zeros((3, 3)), real=3)
    rng = np.random.default_rng(2)
    tape = Tape()
    bound = bind_arrays(
        tape, [np.eye(2)], rng.standard_normal((2, 2)), rng.standard_normal((2, 1))
    )
    h = tape.constant(np.tile([[0.5, -1.5]], (3, 1)))
    z = intra_attention(h, entry.mask, bound, tape)
    np.testing.assert_allclose(z.value, [[0.5, -1.5]], atol=1e-12)
    w = intra_attention_weights(h, entry.mask, bound, tape)
    np.testing.assert_allclose(w.value, np.full((1, 3), 1 / 3), atol=1e-12)


def test_attention_hand_evaluation():
    h_rows = np.array([[0.2, 0.0, 0.0], [0.0, 0.4, 0.0], [-0.3, 0.1, 0.0]])
    mask = np.array([True, True, True])
    tape = Tape()
    bound = bind_arrays(tape, [np.eye(3)], np.eye(3), np.array([[1.0], [0.0], [0.0]]))
    z = intra_attention(tape.constant(h_rows), mask, bound, tape)
    # Direct evaluation: logits tanh(first column), softmax, weighted row sum.
    logits = np.tanh(h_rows[:, 0])
    weights = np.exp(logits) / np.exp(logits).sum()
    np.testing.assert_allclose(z.value, (weights[:, None] * h_rows).sum(0, keepdims=True), atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_weights_normalized_and_masked(seed):
    rng = np.random.default_rng(seed)
    entry = entry_for((lambda a: a + a.T)(np.triu(rng.random((5, 5)) < 0.4, 1).astype(float)), real=3)
    tape = Tape()
    bound = bind_arrays(
        tape,
        [rng.standard_normal((2, 4)), rng.standard_normal((4, 4))],
        rng.standard_normal((4, 4)),
        rng.standard_normal((4, 1)),
    )
    h = encode_nodes(entry, rng.standard_normal((3, 2)), bound, tape)
    w = intra_attention_weights(h, entry.mask, bound, tape).value
    assert abs(w.sum() - 1.0) <= 1e-9
    np.testing.assert_array_equal(w[0, 3:], [0.0, 0.0])

    z = intra_attention(h, entry.mask, bound, tape).value
    real = h.value[:3]
    assert np.all(z[0] <= real.max(axis=0) + 1e-12)
    assert np.all(z[0] >= real.min(axis=0) - 1e-12)


def test_all_masked_rejected():
    entry = entry_for(np.zeros((2, 2)), real=0)
    tape = Tape()
    bound = bind_arrays(tape, [np.eye(2)], np.eye(2), np.ones((2, 1)))
    with pytest.raises(ValueError, match="at least one real node"):
        intra_attention(tape.constant(np.zeros((2, 2))), entry.mask, bound, tape)


@pytest.mark.parametrize("seed", range(6))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(40 + seed)
    g = random_graph(rng, num_nodes=9, edge_prob=0.3)
    entry = sample_subgraphs(g, n=2, s=4).subgraphs[1]
    weighting = rng.standard_normal((1, 3))
    arrays = [
        rng.standard_normal((2, 3)) * 0.6,
        rng.standard_normal((3, 3)) * 0.6,
        rng.standard_normal((3, 3)) * 0.6,
        rng.standard_normal((3, 1)) * 0.6,
    ]

    def build(arrs):
        tape = Tape(training=False)
        nodes = [tape.param(a) for a in arrs]
        bound = BoundEncoder(
            layer_weights=tuple(nodes[:2]), w_intra=nodes[2], a_intra=nodes[3]
        )
        h = encode_nodes(entry, g.features, bound, tape)
        z = intra_attention(h, entry.mask, bound, tape)
        loss = tape.sum(tape.mul(z, tape.constant(weighting)))
        return tape, loss, nodes

    tape, loss, nodes = build(arrays)
    grads = tape.backward(loss)
    got = [grads[node] for node in nodes]
    want = finite_diff_grads(lambda arrs: build(arrs)[1].value[0, 0], arrays)
    assert_grads_close(got, want, tol=1e-4)


def test_init_shapes_and_binding():
    params = init_encoder_params(np.random.default_rng(0), feature_dim=7, hidden=16)
    assert [w.shape for w in params.layer_weights] == [(7, 16), (16, 16)]
    assert params.w_intra.shape == (16, 16)
    assert params.a_intra.shape == (16, 1)
    tape = Tape()
    bound = bind_encoder(params, tape)
    assert bound.layer_weights[0].value is params.layer_weights[0]
    assert all(node.is_param for node in tape.params)


def test_dropout_only_between_layers_in_training():
    entry = entry_for(np.zeros((1, 1)), real=1)
    feats = np.array([[1.0]])
    params = EncoderParams(
        layer_weights=(np.array([[1.0]]), np.array([[1.0]])),
        w_intra=np.eye(1),
        a_intra=np.ones((1, 1)),
    )
    eval_tape = Tape(training=False)
    h_eval = encode_nodes(
        entry, feats, bind_encoder(params, eval_tape), eval_tape, dropout_rate=0.5,
        rng=np.random.default_rng(0),
    )
    # Evaluation mode ignores dropout entirely.
    assert h_eval.value[0, 0] == pytest.approx(np.tanh(np.tanh(1.0)), abs=1e-12)

    dropped = one = 0
    for seed in range(40):
        tape = Tape(training=True)
        h = encode_nodes(
            entry, feats, bind_encoder(params, tape), tape, dropout_rate=0.5,
            rng=np.random.default_rng(seed),
        )
        val = h.value[0, 0]
        if val == 0.0:
            dropped += 1
        else:
            # Kept units are rescaled by 1/(1-rate) = 2 before the second layer.
            assert val == pytest.approx(np.tanh(2.0 * np.tanh(1.0)), abs=1e-12)
            one += 1
    assert dropped > 5 and one > 5
