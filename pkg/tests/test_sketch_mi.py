import numpy as np
import pytest

from subsketch.dataset import Graph
from subsketch.diffcore import Tape
from subsketch.errors import ConfigError
from subsketch.sampler import SketchedGraph
from subsketch.sketch_mi import (
    BoundSketch,
    MIBatchPlan,
    bilinear_logits,
    bind_sketch,
    corrupt,
    discriminate,
    init_sketch_params,
    inter_attention,
    inter_attention_details,
    mi_loss,
    readout,
)

from _synth import random_graph
from gradcheck import assert_grads_close, finite_diff_grads


def sketch_of(m, edges=()):
    return SketchedGraph(supernodes=tuple(range(m)), edges=tuple(edges), b_com=0)


def bind_arrays(tape, w_list, a_list, w_mi):
    return BoundSketch(
        w_inter=tuple(tape.param(w) for w in w_list),
        a_inter=tuple(tape.param(a) for a in a_list),
        w_mi=tape.param(w_mi),
    )


def test_single_supernode_passes_through_projection():
    rng = np.random.default_rng(0)
    w = rng.standard_normal((3, 2))
    tape = Tape()
    bound = bind_arrays(tape, [w], [rng.standard_normal((6, 1))], np.eye(3))
    zs = tape.constant(np.array([[0.4, -1.2]]))
    out = inter_attention(sketch_of(1), zs, bound, tape)
    np.testing.assert_allclose(out.value, zs.value @ w.T, atol=1e-12)


def test_identical_supernodes_get_identical_outputs():
    rng = np.random.default_rng(1)
    tape = Tape()
    bound = bind_arrays(
        tape, [rng.standard_normal((4, 3))], [rng.standard_normal((8, 1))], np.eye(4)
    )
    zs = tape.constant(np.tile([[0.2, 0.5, -0.3]], (2, 1)))
    out = inter_attention(sketch_of(2, [(0, 1)]), zs, bound, tape)
    np.testing.assert_allclose(out.value[0], out.value[1], atol=1e-12)


def gat_oracle(adjacency_with_self, zs, w_list, a_list, slope=0.2):
    """Per-pair concatenation evaluation, later averaged over heads."""
    m = zs.shape[0]
    heads = []
    for w, a in zip(w_list, a_list):
        projected = zs @ w.T
        logits = np.full((m, m), -np.inf)
        for i in range(m):
            for j in range(m):
                if adjacency_with_self[i, j]:
                    raw = float(a[:, 0] @ np.concatenate([projected[i], projected[j]]))
                    logits[i, j] = raw if raw > 0 else slope * raw
        alpha = np.exp(logits - logits.max(axis=1, keepdims=True))
        alpha /= alpha.sum(axis=1, keepdims=True)
        heads.append(alpha @ projected)
    return sum(heads) / len(heads)


@pytest.mark.parametrize("seed", range(4))
def test_matches_pairwise_concatenation_oracle(seed):
    rng = np.random.default_rng(10 + seed)
    sk = sketch_of(4, [(0, 1), (1, 2), (0, 3)])
    zs_value = rng.standard_normal((4, 3))
    w_list = [rng.standard_normal((5, 3)) for _ in range(2)]
    a_list = [rng.standard_normal((10, 1)) for _ in range(2)]
    tape = Tape()
    bound = bind_arrays(tape, w_list, a_list, np.eye(5))
    out = inter_attention(sk, tape.constant(zs_value), bound, tape)
    want = gat_oracle(sk.adjacency_matrix() + np.eye(4), zs_value, w_list, a_list)
    assert np.max(np.abs(out.value - want)) <= 1e-10


def test_coefficients_normalized_per_head():
    rng = np.random.default_rng(5)
    sk = sketch_of(5, [(0, 1), (2, 3), (3, 4)])
    tape = Tape()
    bound = bind_arrays(
        tape,
        [rng.standard_normal((4, 3)) for _ in range(3)],
        [rng.standard_normal((8, 1)) for _ in range(3)],
        np.eye(4),
    )
    _, alphas = inter_attention_details(
        sk, tape.constant(rng.standard_normal((5, 3))), bound, tape
    )
    assert len(alphas) == 3
    allowed = sk.adjacency_matrix() + np.eye(5)
    for alpha in alphas:
        np.testing.assert_allclose(alpha.value.sum(axis=1), np.ones(5), atol=1e-9)
        assert np.all(alpha.value[allowed == 0] == 0.0)


def test_embedding_count_must_match_supernodes():
    tape = Tape()
    bound = bind_arrays(
        tape, [np.eye(2)], [np.ones((4, 1))], np.eye(2)
    )
    with pytest.raises(ValueError, match="supernodes"):
        inter_attention(sketch_of(3), tape.constant(np.ones((2, 2))), bound, tape)


def test_readout_single_row_identity():
    tape = Tape()
    z = tape.constant(np.array([[0.1, 0.9]]))
    np.testing.assert_allclose(readout(z, tape).value, [[0.1, 0.9]], atol=1e-12)


def test_readout_mean_and_permutation_invariance():
    tape = Tape()
    z = tape.constant(np.array([[1.0, 0.0], [0.0, 1.0]]))
    np.testing.assert_allclose(readout(z, tape).value, [[0.5, 0.5]], atol=1e-12)
    rng = np.random.default_rng(0)
    rows = rng.standard_normal((6, 4))
    base = readout(tape.constant(rows), tape).value
    for _ in range(5):
        perm = rng.permutation(6)
        again = readout(tape.constant(rows[perm]), tape).value
        np.testing.assert_allclose(again, base, atol=1e-12)


def test_discriminator_values():
    tape = Tape()
    d2 = 4
    z = tape.constant(np.eye(d2)[:1])
    r = tape.constant(np.eye(d2)[:1])
    zero = discriminate(z, r, tape.constant(np.zeros((d2, d2))), tape)
    assert zero.value[0, 0] == pytest.approx(0.5)
    ident = discriminate(z, r, tape.constant(np.eye(d2)), tape)
    assert ident.value[0, 0] == pytest.approx(1 / (1 + np.exp(-1)), abs=1e-6)
    orthogonal = discriminate(
        z, tape.constant(np.eye(d2)[1:2]), tape.constant(np.eye(d2)), tape
    )
    assert orthogonal.value[0, 0] == pytest.approx(0.5)


def logit(p):
    return float(np.log(p / (1 - p)))


def test_mi_loss_uninformative_is_ln2():
    tape = Tape()
    loss = mi_loss(
        tape.constant(np.zeros((3, 1))), tape.constant(np.zeros((3, 1))), tape
    )
    assert loss.value[0, 0] == pytest.approx(np.log(2.0), abs=1e-12)


def test_mi_loss_perfect_discrimination_vanishes():
    tape = Tape()
    loss = mi_loss(
        tape.constant(np.full((2, 1), 30.0)), tape.constant(np.full((2, 1), -30.0)), tape
    )
    assert 0.0 <= loss.value[0, 0] < 1e-12


def test_mi_loss_hand_arithmetic():
    tape = Tape()
    pos = tape.constant(np.array([[logit(0.9)], [logit(0.8)]]))
    neg = tape.constant(np.array([[logit(0.2)], [logit(0.1)]]))
    loss = mi_loss(pos, neg, tape)
    want = -0.25 * (np.log(0.9) + np.log(0.8) + np.log(0.8) + np.log(0.9))
    assert loss.value[0, 0] == pytest.approx(want, abs=1e-9)
    assert loss.value[0, 0] == pytest.approx(0.1643, abs=5e-5)


@pytest.mark.parametrize("seed", range(4))
def test_mi_loss_nonnegative_and_finite(seed):
    rng = np.random.default_rng(seed)
    tape = Tape()
    loss = mi_loss(
        tape.constant(rng.standard_normal((5, 1)) * 10),
        tape.constant(rng.standard_normal((4, 1)) * 10),
        tape,
    )
    value = loss.value[0, 0]
    assert np.isfinite(value) and value >= 0.0


@pytest.mark.parametrize("seed", range(5))
def test_mi_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(20 + seed)
    zp = rng.standard_normal((4, 3))
    r_own = rng.standard_normal((1, 3))
    r_other = rng.standard_normal((1, 3))
    w_mi = rng.standard_normal((3, 3)) * 0.5

    def build(arrs):
        tape = Tape(training=False)
        w = tape.param(arrs[0])
        pos = bilinear_logits(tape.constant(zp), tape.constant(r_own), w, tape)
        neg = bilinear_logits(tape.constant(zp), tape.constant(r_other), w, tape)
        return tape, mi_loss(pos, neg, tape), w

    tape, loss, w = build([w_mi])
    got = [tape.backward(loss)[w]]
    want = finite_diff_grads(lambda arrs: build(arrs)[1].value[0, 0], [w_mi])
    assert_grads_close(got, want, tol=1e-4)


def test_corrupt_single_node_unchanged():
    g = random_graph(np.random.default_rng(0), num_nodes=1, edge_prob=0.0)
    c = corrupt(g, np.random.default_rng(1))
    np.testing.assert_array_equal(c.features, g.features)
    assert c.edges == g.edges


def test_corrupt_identical_rows_unchanged():
    uniform = Graph(
        index=0,
        label=0,
        edges=((0, 1), (2, 3)),
        node_labels=(0, 0, 0, 0),
        features=np.ones((4, 2)),
    )
    c = corrupt(uniform, np.random.default_rng(2))
    np.testing.assert_array_equal(c.features, uniform.features)


def test_corrupt_preserves_multiset_and_adjacency():
    g = random_graph(np.random.default_rng(3), num_nodes=5, edge_prob=0.5)
    c = corrupt(g, np.random.default_rng(4))
    assert c.edges == g.edges
    assert c.num_nodes == g.num_nodes
    assert sorted(c.node_labels) == sorted(g.node_labels)
    assert sorted(map(tuple, c.features)) == sorted(map(tuple, g.features))
    # Labels stay aligned with their permuted feature rows.
    for cat, row in zip(c.node_labels, c.features):
        assert row[cat] == 1.0


def test_plan_validation():
    MIBatchPlan(strategy="none", n_neg=0)
    MIBatchPlan(strategy="alternative_graph", n_neg=3)
    with pytest.raises(ConfigError, match="n_neg"):
        MIBatchPlan(strategy="corrupt_features", n_neg=0)
    with pytest.raises(ConfigError, match="unknown MI strategy"):
        MIBatchPlan(strategy="shuffle", n_neg=1)


def test_init_shapes():
    params = init_sketch_params(np.random.default_rng(0), d1=16, d2=96, heads=2)
    assert params.heads == 2
    assert all(w.shape == (96, 16) for w in params.w_inter)
    assert all(a.shape == (192, 1) for a in params.a_inter)
    assert params.w_mi.shape == (96, 96)
    tape = Tape()
    bound = bind_sketch(params, tape)
    assert bound.w_mi.is_param
    with pytest.raises(ConfigError):
        init_sketch_params(np.random.default_rng(0), heads=0)
