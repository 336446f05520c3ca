"""Per-graph inspection: which subgraphs the model selected and why.

``explain_graph`` replays one graph through the trained pipeline in
evaluation mode and gathers projection scores, gates, attention weights,
and per-subgraph class votes.  The result renders two ways: a DOT file
(selected subgraphs as clusters, node fill color by label category, node
size growing with intra-subgraph attention weight over a small legibility
floor, omitted nodes grey) and a JSON file with the raw numbers.
"""

from __future__ import annotations

import json

import numpy as np

from .dataset import Graph
from .diffcore import Tape
from .trainer import (
    ModelParams,
    TrainConfig,
    batch_forward,
    bind_model,
    precompute_tensors,
    predict_label,
)

PALETTE = (
    "#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2",
    "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac",
)


def explain_graph(
    model: ModelParams, config: TrainConfig, graph: Graph, k: float
) -> dict:
    tensors = precompute_tensors(graph, config.n, config.s)
    tape = Tape(training=False)
    bound = bind_model(model, tape)
    result = batch_forward(
        bound, [tensors], [graph.label], k, config, tape, compute_loss=False
    )
    state = result.state
    values = state.values.value[:, 0]
    gates = state.gates.value[:, 0]
    sub_dists = result.sub_dists.value
    intra = state.intra_weights.value
    selected = state.selected_local[0]
    entries = tensors.subgraph_set.subgraphs

    subgraphs = []
    for i, entry in enumerate(entries):
        subgraphs.append(
            {
                "index": i,
                "central_node": entry.central_node,
                "nodes": list(entry.node_ids),
                "val": float(values[i]),
                "selected": i in selected,
            }
        )
    selected_detail = []
    for rank, i in enumerate(selected):
        entry = entries[i]
        selected_detail.append(
            {
                "index": i,
                "val": float(values[i]),
                "gate": float(gates[rank]),
                "nodes": list(entry.node_ids),
                "intra_weights": {
                    str(node): float(w)
                    for node, w in zip(entry.node_ids, intra[i][entry.mask])
                },
                "class_distribution": [float(x) for x in sub_dists[rank]],
            }
        )
    sketch = state.sketches[0]
    return {
        "graph_id": graph.index,
        "true_label": graph.label,
        "k": k,
        "selection_count": len(selected),
        "predicted_label": predict_label(result.graph_dists.value[0]),
        "graph_distribution": [float(x) for x in result.graph_dists.value[0]],
        "subgraphs": subgraphs,
        "selected_subgraphs": selected_detail,
        "sketch_edges": [
            [selected[i], selected[j]] for i, j in sketch.edges
        ],
    }


def write_graph_json(path: str, detail: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(detail, fh, indent=2)
        fh.write("\n")


def write_dot(path: str, graph: Graph, detail: dict) -> None:
    """Render the explanation as an undirected Graphviz graph."""
    owner: dict[int, int] = {}  # node -> first selected subgraph that holds it
    weight: dict[int, float] = {}
    for sub in detail["selected_subgraphs"]:
        for node in sub["nodes"]:
            owner.setdefault(node, sub["index"])
            if node not in weight:
                weight[node] = sub["intra_weights"][str(node)]

    def node_line(node: int) -> str:
        label_color = PALETTE[graph.node_labels[node] % len(PALETTE)]
        if node in owner:
            size = 0.25 + 0.9 * weight[node]
            return (
                f'n{node} [label="{node}", fillcolor="{label_color}", '
                f"width={size:.3f}, height={size:.3f}, fixedsize=true];"
            )
        return (
            f'n{node} [label="{node}", fillcolor="grey", '
            f"width=0.25, height=0.25, fixedsize=true];"
        )

    lines = [f"graph explain_{detail['graph_id']} {{", "  node [style=filled];"]
    for sub in detail["selected_subgraphs"]:
        members = [n for n in sub["nodes"] if owner.get(n) == sub["index"]]
        if not members:
            continue
        lines.append(f"  subgraph cluster_{sub['index']} {{")
        lines.append(
            f'    label="subgraph {sub["index"]} (gate {sub["gate"]:.2f})";'
        )
        lines.extend("    " + node_line(n) for n in members)
        lines.append("  }")
    for node in range(graph.num_nodes):
        if node not in owner:
            lines.append("  " + node_line(node))
    for u, v in graph.edges:
        lines.append(f"  n{u} -- n{v};")
    lines.append("}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
