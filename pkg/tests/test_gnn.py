import numpy as np
import pytest
import scipy.sparse as sp

from deepdds.chem import featurize, mol_from_smiles, N_ATOM_FEATURES
from deepdds.gnn import (
    EmptyBatch,
    GatLayer,
    GcnLayer,
    GraphEncoder,
    WidthMismatch,
    batch_graphs,
    gat_attention,
    gat_forward,
    gcn_forward,
    global_max_pool,
)
from deepdds.tensor import ShapeMismatch, Tensor, elu

from .helpers import check_gradients, graph_input, leaf, random_smiles


def _gcn_identity(c):
    return GcnLayer(Tensor(np.eye(c)), Tensor(np.zeros(c)))


def test_gcn_single_node_is_identity():
    g, _ = graph_input("C")
    x = np.array([[0.0, 2.0, 3.5]])
    out = gcn_forward(_gcn_identity(3), batch_graphs([(g, x)]))
    np.testing.assert_array_equal(out.data, x)


def test_gcn_two_node_normalization():
    g, x = graph_input("CC")
    np.testing.assert_allclose(batch_graphs([(g, x)]).normalized_adjacency.toarray(), [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)


def test_gcn_disconnected_blocks_are_independent():
    g, _ = graph_input("C")
    rng = np.random.default_rng(0)
    layer = GcnLayer.init(rng, 4, 3)
    x1, x2 = rng.normal(size=(1, 4)), rng.normal(size=(1, 4))
    before = gcn_forward(layer, batch_graphs([(g, x1), (g, x2)])).data
    after = gcn_forward(layer, batch_graphs([(g, x1), (g, x2 + 5.0)])).data
    np.testing.assert_array_equal(before[0], after[0])


def test_gcn_width_mismatch():
    g, x = graph_input("CC")
    with pytest.raises(ShapeMismatch):
        gcn_forward(GcnLayer.init(np.random.default_rng(0), 5, 2), batch_graphs([(g, x)]))


def test_gat_isolated_node():
    g, _ = graph_input("C")
    rng = np.random.default_rng(1)
    layer = GatLayer.init(rng, 3, 4, heads=1)
    x = rng.normal(size=(1, 3))
    batch = batch_graphs([(g, x)])
    alpha, _ = gat_attention(layer.weights[0], layer.attention[0], batch, Tensor(x))
    np.testing.assert_array_equal(alpha.data, [1.0])
    out = gat_forward(layer, batch).data
    np.testing.assert_allclose(out, elu(Tensor(x @ layer.weights[0].data)).data, atol=1e-15)


def test_gat_symmetric_pair_has_half_attention():
    g, _ = graph_input("CC")
    rng = np.random.default_rng(2)
    layer = GatLayer.init(rng, 3, 4, heads=2)
    row = rng.normal(size=3)
    batch = batch_graphs([(g, np.stack([row, row]))])
    for w, a in zip(layer.weights, layer.attention):
        alpha, _ = gat_attention(w, a, batch, Tensor(batch.node_features))
        np.testing.assert_allclose(alpha.data, 0.5, atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_gat_attention_rows_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    g = mol_from_smiles(random_smiles(rng, 5))
    x = rng.normal(size=(5, 6))
    batch = batch_graphs([(g, x)])
    layer = GatLayer.init(rng, 6, 4, heads=3)
    target, _ = batch.attention_edges
    for w, a in zip(layer.weights, layer.attention):
        alpha, _ = gat_attention(w, a, batch, Tensor(x))
        np.testing.assert_allclose(np.bincount(target, weights=alpha.data, minlength=5), 1.0, rtol=0, atol=1e-12)


def test_global_max_pool_examples():
    np.testing.assert_array_equal(global_max_pool(Tensor([[1.0, 5.0], [3.0, 2.0]]), [(0, 2)]).data, [[3.0, 5.0]])
    np.testing.assert_array_equal(global_max_pool(Tensor([[7.0, -1.0]]), [(0, 1)]).data, [[7.0, -1.0]])
    x = np.arange(10.0).reshape(5, 2)
    out = global_max_pool(Tensor(x), [(0, 2), (2, 3)]).data
    assert out.shape == (2, 2)
    x2 = x.copy()
    x2[2:] += 100.0
    np.testing.assert_array_equal(global_max_pool(Tensor(x2), [(0, 2), (2, 3)]).data[0], out[0])


def test_batch_graphs_construction():
    ga, xa = graph_input("CC")
    gb, xb = graph_input("CCO")
    batch = batch_graphs([(ga, xa), (gb, xb)])
    adj = batch.adjacency.toarray()
    assert adj.shape == (5, 5)
    assert not adj[:2, 2:].any() and not adj[2:, :2].any()
    assert batch.graph_offsets == [(0, 2), (2, 3)]
    single = batch_graphs([(gb, xb)])
    np.testing.assert_array_equal(single.node_features, xb)
    np.testing.assert_array_equal(single.adjacency.toarray(), gb.adjacency)


def test_batch_graphs_errors():
    g, x = graph_input("CC")
    with pytest.raises(EmptyBatch):
        batch_graphs([])
    with pytest.raises(WidthMismatch):
        batch_graphs([(g, x), (g, x[:, :10])])


@pytest.mark.parametrize("kind", ["gcn", "gat"])
@pytest.mark.parametrize("seed", range(5))
def test_batching_equivalence(kind, seed):
    rng = np.random.default_rng(seed)
    enc = GraphEncoder.init(kind, rng, N_ATOM_FEATURES, (16, 8), heads=3)
    graphs = [graph_input(random_smiles(rng, int(rng.integers(1, 15)))) for _ in range(4)]
    together = enc(batch_graphs(graphs)).data
    apart = np.vstack([enc(batch_graphs([g])).data for g in graphs])
    np.testing.assert_allclose(together, apart, rtol=0, atol=1e-12)
    nodes = enc.node_embeddings(batch_graphs(graphs)).data
    np.testing.assert_allclose(nodes, np.vstack([enc.node_embeddings(batch_graphs([g])).data for g in graphs]), rtol=0, atol=1e-12)


@pytest.mark.parametrize("kind", ["gcn", "gat"])
@pytest.mark.parametrize("seed", range(10))
def test_permutation_invariance(kind, seed):
    rng = np.random.default_rng(seed)
    enc = GraphEncoder.init(kind, rng, N_ATOM_FEATURES, (16, 8), heads=2)
    g = mol_from_smiles(random_smiles(rng, int(rng.integers(3, 31))))
    h = g.permute(rng.permutation(g.n_atoms))
    a = enc(batch_graphs([(g, featurize(g))])).data
    b = enc(batch_graphs([(h, featurize(h))])).data
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-9)


def _layer_loss(kind, rng):
    g = mol_from_smiles(random_smiles(rng, int(rng.integers(2, 7))))
    batch = batch_graphs([(g, rng.normal(size=(g.n_atoms, 5)))])
    x = leaf(rng, g.n_atoms, 5)
    target = rng.normal(size=(g.n_atoms, 3))
    if kind == "gcn":
        layer = GcnLayer(leaf(rng, 5, 3), leaf(rng, 3))
        run = lambda: (gcn_forward(layer, batch, x) * Tensor(target)).sum()
    else:
        layer = GatLayer([leaf(rng, 5, 3) for _ in range(2)], [leaf(rng, 6) for _ in range(2)])
        run = lambda: (gat_forward(layer, batch, x) * Tensor(target)).sum()
    return run, [x, *layer.parameters]


@pytest.mark.parametrize("kind", ["gcn", "gat"])
@pytest.mark.parametrize("seed", range(20))
def test_layer_gradients(kind, seed):
    run, params = _layer_loss(kind, np.random.default_rng(seed))
    assert check_gradients(run, params) <= 1e-4


def test_normalized_adjacency_is_cached():
    g, x = graph_input("CCO")
    batch = batch_graphs([(g, x)])
    assert batch.normalized_adjacency is batch.normalized_adjacency
    assert sp.issparse(batch.normalized_adjacency)
