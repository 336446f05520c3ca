"""Shared helpers for building synthetic graphs and datasets in tests."""

import numpy as np

from subsketch.dataset import Graph


def random_graph(rng, num_nodes, edge_prob=0.3, index=0, label=0):
    """Erdos-Renyi style graph with one-hot degree-parity features."""
    edges = []
    for u in range(num_nodes):
        for v in range(u + 1, num_nodes):
            if rng.random() < edge_prob:
                edges.append((u, v))
    degree = [0] * num_nodes
    for u, v in edges:
        degree[u] += 1
        degree[v] += 1
    cats = tuple(d % 2 for d in degree)
    features = np.zeros((num_nodes, 2), dtype=np.float64)
    features[np.arange(num_nodes), cats] = 1.0
    return Graph(
        index=index,
        label=label,
        edges=tuple(edges),
        node_labels=cats,
        features=features,
    )


def ring_graph(num_nodes, index=0, label=0):
    edges = tuple(
        (min(i, (i + 1) % num_nodes), max(i, (i + 1) % num_nodes))
        for i in range(num_nodes)
    )
    features = np.ones((num_nodes, 1), dtype=np.float64)
    return Graph(
        index=index,
        label=label,
        edges=tuple(sorted(set(edges))),
        node_labels=(0,) * num_nodes,
        features=features,
    )


def planted_motif_dataset(rng, num_graphs=40, base_nodes=10):
    """Binary-classified graphs: class 1 carries a planted 4-clique.

    Every graph is a sparse random background over ``base_nodes`` nodes made
    connected by a spanning path.  Class-1 graphs additionally wire nodes
    0..3 into a clique, so subgraph structure (not size or node count)
    separates the classes.
    """
    graphs = []
    for index in range(num_graphs):
        label = index % 2
        n = base_nodes + int(rng.integers(0, 3))
        edges = {(i, i + 1) for i in range(n - 1)}
        for u in range(n):
            for v in range(u + 2, n):
                if rng.random() < 0.08:
                    edges.add((u, v))
        if label == 1:
            for u in range(4):
                for v in range(u + 1, 4):
                    edges.add((u, v))
        degree = [0] * n
        for u, v in edges:
            degree[u] += 1
            degree[v] += 1
        cats = tuple(min(d, 3) for d in degree)
        features = np.zeros((n, 4), dtype=np.float64)
        features[np.arange(n), cats] = 1.0
        graphs.append(
            Graph(
                index=index,
                label=label,
                edges=tuple(sorted(edges)),
                node_labels=cats,
                features=features,
            )
        )
    return graphs
