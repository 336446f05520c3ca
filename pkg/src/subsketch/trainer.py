"""Joint training: classification + mutual information + L2, with the
ratio-tuning agent stepped between epochs and 10-fold cross-validation.

The forward pass is fully batched for CPU efficiency: every subgraph of
every graph in the batch lives in one big tape, with block-diagonal
propagation for the per-subgraph convolutions and a block-diagonal additive
mask keeping sketch attention inside each graph.  Per-graph bookkeeping
(top-k selection, sketched-graph construction) happens on plain numpy
values between tape ops.

Variants:
    full        adaptive k, negatives from the next graph in the batch
    fixed_k     agent frozen at k0, same objective as full
    no_mi       classification + L2 only
    mi_corrupt  negatives from re-encoding feature-shuffled copies
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dataset import FoldPlan, Graph, batches, dataset_stats, make_folds
from .diffcore import MASK_OFF, Node, Tape
from .encoder import (
    BoundEncoder,
    EncoderParams,
    bind_encoder,
    glorot,
    init_encoder_params,
    propagation_matrix,
    subgraph_features,
)
from .errors import ConfigError
from .pooling import PoolingAgent, annealed_epsilon, rank_topk
from .sampler import SketchedGraph, SubgraphSet, build_sketched_graph, sample_subgraphs
from .sketch_mi import (
    BoundSketch,
    SketchParams,
    attention_mask,
    bind_sketch,
    corrupt,
    init_sketch_params,
    inter_attention_with_mask,
    mi_loss,
)

VARIANTS = ("full", "fixed_k", "no_mi", "mi_corrupt")


@dataclass
class TrainConfig:
    n: int = 12
    s: int = 5
    k0: float = 0.5
    dk: float | None = None  # defaults to 1/n
    b_com: int = 0
    d1: int = 16
    d2: int = 96
    heads: int = 2
    beta: float = 0.8
    l2: float = 0.01
    lr: float = 0.01
    momentum: float = 0.9
    dropout: float = 0.5
    epochs: int = 300
    batch_size: int = 32
    seed: int = 0
    variant: str = "full"
    patience: int = 50
    fold_count: int = 10
    jobs: int = 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(
                f"unknown variant {self.variant!r}; expected one of {VARIANTS}"
            )
        if self.beta < 0:
            raise ConfigError(f"beta must be non-negative, got {self.beta}")
        if self.l2 < 0:
            raise ConfigError(f"l2 must be non-negative, got {self.l2}")
        if not 0.0 < self.k0 <= 1.0:
            raise ConfigError(f"k0 must lie in (0, 1], got {self.k0}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        for name in ("n", "s", "d1", "d2", "heads", "epochs", "batch_size", "jobs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.dk is not None and not 0.0 < self.dk <= 1.0:
            raise ConfigError(f"dk must lie in (0, 1], got {self.dk}")

    @property
    def resolved_dk(self) -> float:
        return self.dk if self.dk is not None else 1.0 / self.n

    @property
    def mi_strategy(self) -> str:
        if self.variant == "no_mi":
            return "none"
        if self.variant == "mi_corrupt":
            return "corrupt_features"
        return "alternative_graph"


@dataclass
class ModelParams:
    """All trainable arrays, updated in place by the optimizer."""

    encoder: EncoderParams
    projection: np.ndarray  # (d1, 1)
    sketch: SketchParams
    classifier_w: np.ndarray  # (d2, classes)
    classifier_b: np.ndarray  # (1, classes)

    def registry(self) -> dict[str, np.ndarray]:
        """Every trainable matrix under a stable name; the L2 term and the
        optimizer both walk exactly this mapping."""
        out = {
            f"encoder.layer{i}": w for i, w in enumerate(self.encoder.layer_weights)
        }
        out["encoder.w_intra"] = self.encoder.w_intra
        out["encoder.a_intra"] = self.encoder.a_intra
        out["pool.p"] = self.projection
        for m, w in enumerate(self.sketch.w_inter):
            out[f"sketch.w_inter{m}"] = w
        for m, a in enumerate(self.sketch.a_inter):
            out[f"sketch.a_inter{m}"] = a
        out["sketch.w_mi"] = self.sketch.w_mi
        out["classifier.w"] = self.classifier_w
        out["classifier.b"] = self.classifier_b
        return out


@dataclass
class BoundModel:
    encoder: BoundEncoder
    projection: Node
    sketch: BoundSketch
    classifier_w: Node
    classifier_b: Node
    by_name: dict[str, Node]


def init_model(
    rng: np.random.Generator, feature_dim: int, num_classes: int, config: TrainConfig
) -> ModelParams:
    return ModelParams(
        encoder=init_encoder_params(rng, feature_dim, hidden=config.d1),
        projection=glorot(rng, config.d1, 1),
        sketch=init_sketch_params(rng, d1=config.d1, d2=config.d2, heads=config.heads),
        classifier_w=glorot(rng, config.d2, num_classes),
        classifier_b=np.zeros((1, num_classes)),
    )


def bind_model(model: ModelParams, tape: Tape) -> BoundModel:
    by_name = {name: tape.param(arr, name=name) for name, arr in model.registry().items()}
    layer_count = len(model.encoder.layer_weights)
    return BoundModel(
        encoder=BoundEncoder(
            layer_weights=tuple(by_name[f"encoder.layer{i}"] for i in range(layer_count)),
            w_intra=by_name["encoder.w_intra"],
            a_intra=by_name["encoder.a_intra"],
        ),
        projection=by_name["pool.p"],
        sketch=BoundSketch(
            w_inter=tuple(
                by_name[f"sketch.w_inter{m}"] for m in range(model.sketch.heads)
            ),
            a_inter=tuple(
                by_name[f"sketch.a_inter{m}"] for m in range(model.sketch.heads)
            ),
            w_mi=by_name["sketch.w_mi"],
        ),
        classifier_w=by_name["classifier.w"],
        classifier_b=by_name["classifier.b"],
        by_name=by_name,
    )


@dataclass(eq=False)
class GraphTensors:
    """Sampling-dependent constants for one graph, reused every epoch."""

    graph: Graph
    subgraph_set: SubgraphSet
    prop_blocks: np.ndarray  # (n, s, s)
    feats: np.ndarray  # (n*s, d)
    attn_off: np.ndarray  # (n, s): 0 for real nodes, MASK_OFF for padding


def precompute_tensors(graph: Graph, n: int, s: int) -> GraphTensors:
    ss = sample_subgraphs(graph, n, s)
    prop = np.stack([propagation_matrix(e) for e in ss.subgraphs])
    feats = np.vstack([subgraph_features(e, graph.features) for e in ss.subgraphs])
    attn_off = np.stack(
        [np.where(e.mask, 0.0, MASK_OFF) for e in ss.subgraphs]
    )
    return GraphTensors(graph, ss, prop, feats, attn_off)


def classify_graph(
    z_primes: Node, weights: Node, bias: Node, tape: Tape
) -> tuple[Node, Node]:
    """Subgraph voting: per-subgraph softmax, summed and renormalized.

    Because each per-subgraph distribution sums to one, the renormalized sum
    is exactly the arithmetic mean of the rows.
    """
    m = z_primes.shape[0]
    if m < 1:
        raise ValueError("classification needs at least one supernode")
    logits = tape.add(
        tape.matmul(z_primes, weights),
        tape.matmul(tape.constant(np.ones((m, 1))), bias),
    )
    sub_dists = tape.softmax_rows(logits)
    mean = tape.constant(np.full((1, m), 1.0 / m))
    return tape.matmul(mean, sub_dists), sub_dists


def predict_label(distribution: np.ndarray) -> int:
    """Argmax with ties resolved to the lower class index."""
    return int(np.argmax(distribution))


def total_loss(
    graph_dists: Node,
    labels: list[int],
    mi_value: Node | None,
    param_nodes: list[Node],
    beta: float,
    l2: float,
    tape: Tape,
) -> Node:
    """Cross-entropy + beta * MI + l2 * ||params||^2, means over the batch."""
    b, classes = graph_dists.shape
    onehot = np.zeros((b, classes))
    onehot[np.arange(b), labels] = 1.0
    picked = tape.matmul(
        tape.mul(graph_dists, tape.constant(onehot)),
        tape.constant(np.ones((classes, 1))),
    )
    loss = tape.scale(tape.sum(tape.log(picked)), -1.0 / b)
    if mi_value is not None and beta != 0.0:
        loss = tape.add(loss, tape.scale(mi_value, beta))
    if l2 != 0.0:
        reg = None
        for theta in param_nodes:
            term = tape.sum(tape.mul(theta, theta))
            reg = term if reg is None else tape.add(reg, term)
        loss = tape.add(loss, tape.scale(reg, l2))
    return loss


def sgd_momentum_step(
    arrays: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    lr: float,
    momentum: float,
    velocity: dict[str, np.ndarray],
) -> None:
    """v <- momentum * v + g; theta <- theta - lr * v (in place)."""
    for name, theta in arrays.items():
        v = velocity.setdefault(name, np.zeros_like(theta))
        v *= momentum
        v += grads[name]
        theta -= lr * v


@dataclass(eq=False)
class PipelineState:
    """Tape nodes and per-graph bookkeeping from one selection pipeline."""

    embeddings: Node  # (B*n, d1) subgraph embeddings before selection
    values: Node  # (B*n, 1) projection scores
    intra_weights: Node  # (B*n, s)
    selected_local: list[list[int]]  # per graph, local subgraph indices
    selected_rows: list[int]  # global row ids into embeddings
    gates: Node  # (m', 1)
    sketches: list[SketchedGraph]
    z_primes: Node  # (m', d2)
    alphas: list[Node]  # per-head (m', m') coefficients


def _run_pipeline(
    bound: BoundModel,
    tensors: list[GraphTensors],
    k: float,
    config: TrainConfig,
    tape: Tape,
    rng: np.random.Generator | None,
    feats_override: list[np.ndarray] | None = None,
) -> PipelineState:
    n, s, d1 = config.n, config.s, config.d1
    batch = len(tensors)
    m = batch * n
    prop = np.concatenate([t.prop_blocks for t in tensors])
    feats = np.vstack(
        feats_override if feats_override is not None else [t.feats for t in tensors]
    )
    attn_off = np.vstack([t.attn_off for t in tensors])

    # Message passing over all subgraphs at once (block-diagonal propagation).
    h = tape.constant(feats, name="h0")
    for layer, weight in enumerate(bound.encoder.layer_weights):
        if layer > 0 and config.dropout > 0.0:
            h = tape.dropout(h, config.dropout, rng)
        h = tape.tanh(tape.block_diag_matmul(prop, tape.matmul(h, weight)))

    # Intra-subgraph attention -> one embedding per subgraph.
    direction = tape.matmul(tape.transpose(bound.encoder.w_intra), bound.encoder.a_intra)
    scores = tape.tanh(tape.matmul(h, direction))  # (m*s, 1)
    grid = tape.add(tape.reshape(scores, m, s), tape.constant(attn_off))
    intra_weights = tape.softmax_rows(grid)
    embeddings = tape.rowblock_weighted_sum(intra_weights, h)  # (m, d1)

    # Projection scores; the norm stays on the tape so p trains through it.
    p = bound.projection
    norm = tape.sqrt(tape.sum(tape.mul(p, p)))
    raw = tape.matmul(embeddings, p)
    values = tape.div(raw, tape.matmul(tape.constant(np.ones((m, 1))), norm))

    # Per-graph top-k on the numeric scores.
    flat = values.value[:, 0]
    selected_local: list[list[int]] = []
    selected_rows: list[int] = []
    sketches: list[SketchedGraph] = []
    for b, tensor in enumerate(tensors):
        local = rank_topk(flat[b * n : (b + 1) * n], k)
        selected_local.append(local)
        selected_rows.extend(b * n + i for i in local)
        sketches.append(build_sketched_graph(tensor.subgraph_set, local, config.b_com))

    chosen = tape.take_rows(embeddings, selected_rows)
    gates = tape.sigmoid(tape.take_rows(values, selected_rows))
    gated = tape.mul(chosen, tape.matmul(gates, tape.constant(np.ones((1, d1)))))

    # Sketch attention across the whole batch under a block-diagonal mask.
    m_sel = len(selected_rows)
    mask = np.full((m_sel, m_sel), MASK_OFF)
    offset = 0
    for sk in sketches:
        size = len(sk.supernodes)
        mask[offset : offset + size, offset : offset + size] = attention_mask(sk)
        offset += size
    z_primes, alphas = inter_attention_with_mask(mask, gated, bound.sketch, tape)

    return PipelineState(
        embeddings=embeddings,
        values=values,
        intra_weights=intra_weights,
        selected_local=selected_local,
        selected_rows=selected_rows,
        gates=gates,
        sketches=sketches,
        z_primes=z_primes,
        alphas=alphas,
    )


def _per_graph_average(selected_local: list[list[int]]) -> np.ndarray:
    """(B, m') matrix whose rows average the supernode block of each graph."""
    counts = [len(sel) for sel in selected_local]
    total = sum(counts)
    out = np.zeros((len(counts), total))
    offset = 0
    for b, count in enumerate(counts):
        out[b, offset : offset + count] = 1.0 / count
        offset += count
    return out


@dataclass(eq=False)
class ForwardResult:
    loss: Node | None
    mi: Node | None
    graph_dists: Node
    sub_dists: Node
    readouts: Node
    state: PipelineState
    correct: int


def batch_forward(
    bound: BoundModel,
    tensors: list[GraphTensors],
    labels: list[int],
    k: float,
    config: TrainConfig,
    tape: Tape,
    rng: np.random.Generator | None = None,
    corrupt_rng: np.random.Generator | None = None,
    compute_loss: bool = True,
) -> ForwardResult:
    state = _run_pipeline(bound, tensors, k, config, tape, rng)
    averager = tape.constant(_per_graph_average(state.selected_local))
    readouts = tape.matmul(averager, state.z_primes)  # (B, d2)

    m_sel = state.z_primes.shape[0]
    logits = tape.add(
        tape.matmul(state.z_primes, bound.classifier_w),
        tape.matmul(tape.constant(np.ones((m_sel, 1))), bound.classifier_b),
    )
    sub_dists = tape.softmax_rows(logits)
    graph_dists = tape.matmul(averager, sub_dists)

    correct = int(
        np.sum(np.argmax(graph_dists.value, axis=1) == np.asarray(labels))
    )
    if not compute_loss:
        return ForwardResult(None, None, graph_dists, sub_dists, readouts, state, correct)

    mi = None
    strategy = config.mi_strategy
    if strategy != "none":
        expand_pos = _expansion(state.selected_local)  # (m', B)
        scored = tape.matmul(state.z_primes, bound.sketch.w_mi)
        d2_ones = tape.constant(np.ones((config.d2, 1)))
        pos = tape.matmul(
            tape.mul(scored, tape.matmul(tape.constant(expand_pos), readouts)),
            d2_ones,
        )
        if strategy == "alternative_graph":
            if len(tensors) < 2:
                raise ConfigError(
                    "alternative_graph negatives need a batch of at least 2 graphs"
                )
            expand_neg = np.roll(expand_pos, -1, axis=1)  # next graph, cyclic
            neg = tape.matmul(
                tape.mul(scored, tape.matmul(tape.constant(expand_neg), readouts)),
                d2_ones,
            )
        else:  # corrupt_features: re-run the pipeline on shuffled features
            shuffled = [
                np.vstack(
                    [
                        subgraph_features(e, corrupt(t.graph, corrupt_rng).features)
                        for e in t.subgraph_set.subgraphs
                    ]
                )
                for t in tensors
            ]
            twisted = _run_pipeline(
                bound, tensors, k, config, tape, rng, feats_override=shuffled
            )
            scored_neg = tape.matmul(twisted.z_primes, bound.sketch.w_mi)
            expand_neg = _expansion(twisted.selected_local)
            neg = tape.matmul(
                tape.mul(scored_neg, tape.matmul(tape.constant(expand_neg), readouts)),
                d2_ones,
            )
        mi = mi_loss(pos, neg, tape)

    loss = total_loss(
        graph_dists,
        labels,
        mi,
        list(bound.by_name.values()),
        config.beta,
        config.l2,
        tape,
    )
    return ForwardResult(loss, mi, graph_dists, sub_dists, readouts, state, correct)


def _expansion(selected_local: list[list[int]]) -> np.ndarray:
    """(m', B) one-hot rows mapping each supernode to its graph column."""
    counts = [len(sel) for sel in selected_local]
    out = np.zeros((sum(counts), len(counts)))
    offset = 0
    for b, count in enumerate(counts):
        out[offset : offset + count, b] = 1.0
        offset += count
    return out


@dataclass(eq=False)
class FoldResult:
    fold: int
    model: ModelParams
    final_k: float
    trajectory: list[dict]
    stopped_epoch: int
    test_accuracy: float | None = None


@dataclass
class RunReport:
    fold_accuracies: list[float]
    mean_accuracy: float
    std_accuracy: float
    trajectories: list[list[dict]]
    wall_clock_seconds: float


def _fold_seed(config: TrainConfig, fold: int) -> int:
    return int(np.random.SeedSequence([config.seed, fold]).generate_state(1)[0])


def evaluate_accuracy(
    model: ModelParams,
    tensors: dict[int, GraphTensors],
    graph_ids: list[int],
    k: float,
    config: TrainConfig,
) -> float:
    """Dropout-free accuracy of the model at ratio k over the given graphs."""
    correct = 0
    for start in range(0, len(graph_ids), config.batch_size):
        chunk = graph_ids[start : start + config.batch_size]
        chunk_tensors = [tensors[i] for i in chunk]
        labels = [tensors[i].graph.label for i in chunk]
        tape = Tape(training=False)
        bound = bind_model(model, tape)
        result = batch_forward(
            bound, chunk_tensors, labels, k, config, tape, compute_loss=False
        )
        correct += result.correct
    return correct / len(graph_ids)


def train_fold(
    graphs: list[Graph],
    plan: FoldPlan,
    fold: int,
    config: TrainConfig,
    tensors: dict[int, GraphTensors] | None = None,
) -> FoldResult:
    train_ids, _ = plan.split(fold)
    if tensors is None:
        tensors = {
            g.index: precompute_tensors(g, config.n, config.s) for g in graphs
        }
    stats = dataset_stats(graphs)
    seed = _fold_seed(config, fold)
    rng_init = np.random.default_rng([seed, 0])
    rng_dropout = np.random.default_rng([seed, 1])
    rng_agent = np.random.default_rng([seed, 2])
    rng_corrupt = np.random.default_rng([seed, 3])

    model = init_model(rng_init, stats.feature_dim, stats.num_classes, config)
    arrays = model.registry()
    velocity: dict[str, np.ndarray] = {}
    agent = PoolingAgent(
        k=config.k0, dk=config.resolved_dk, gamma=1.0, epsilon=0.9, alpha=0.1
    )
    if config.variant == "fixed_k":
        agent.frozen = True

    trajectory: list[dict] = []
    best_loss = np.inf
    best_epoch = -1
    stopped_epoch = config.epochs - 1
    for epoch in range(config.epochs):
        if not agent.frozen:
            agent.epsilon = annealed_epsilon(epoch)
        if np.linalg.norm(model.projection) < 1e-8:
            model.projection[:] = glorot(rng_init, config.d1, 1)
        k_used = agent.k
        epoch_loss = 0.0
        epoch_correct = 0
        epoch_graphs = 0
        for batch_ids in batches(train_ids, config.batch_size, seed, epoch):
            batch_tensors = [tensors[i] for i in batch_ids]
            labels = [tensors[i].graph.label for i in batch_ids]
            tape = Tape(training=True)
            bound = bind_model(model, tape)
            result = batch_forward(
                bound,
                batch_tensors,
                labels,
                k_used,
                config,
                tape,
                rng=rng_dropout,
                corrupt_rng=rng_corrupt,
            )
            grads = tape.backward(result.loss)
            sgd_momentum_step(
                arrays,
                {name: grads[node] for name, node in bound.by_name.items()},
                config.lr,
                config.momentum,
                velocity,
            )
            epoch_loss += result.loss.value[0, 0] * len(batch_ids)
            epoch_correct += result.correct
            epoch_graphs += len(batch_ids)

        train_acc = epoch_correct / epoch_graphs
        mean_loss = epoch_loss / epoch_graphs
        agent.step_epoch(train_acc, rng_agent)
        trajectory.append(
            {
                "fold": fold,
                "epoch": epoch,
                "loss": mean_loss,
                "train_acc": train_acc,
                "k": k_used,
                "reward": agent.last_reward,
                "terminated": agent.frozen,
            }
        )
        if mean_loss < best_loss - 1e-9:
            best_loss = mean_loss
            best_epoch = epoch
        # Early stop only once k is frozen, so ratio exploration cannot be
        # cut short by a stale loss plateau.
        if agent.frozen and epoch - best_epoch >= config.patience:
            stopped_epoch = epoch
            break
        stopped_epoch = epoch

    return FoldResult(
        fold=fold,
        model=model,
        final_k=agent.k,
        trajectory=trajectory,
        stopped_epoch=stopped_epoch,
    )


def _fold_worker(args) -> FoldResult:
    graphs, plan, fold, config = args
    result = train_fold(graphs, plan, fold, config)
    tensors = {g.index: precompute_tensors(g, config.n, config.s) for g in graphs}
    _, test_ids = plan.split(fold)
    result.test_accuracy = evaluate_accuracy(
        result.model, tensors, test_ids, result.final_k, config
    )
    return result


def cross_validate(
    graphs: list[Graph], config: TrainConfig
) -> tuple[RunReport, list[FoldResult]]:
    start = time.perf_counter()
    plan = make_folds(graphs, config.seed, config.fold_count)
    folds = list(range(config.fold_count))
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(
                pool.map(_fold_worker, [(graphs, plan, f, config) for f in folds])
            )
    else:
        tensors = {
            g.index: precompute_tensors(g, config.n, config.s) for g in graphs
        }
        results = []
        for fold in folds:
            result = train_fold(graphs, plan, fold, config, tensors)
            _, test_ids = plan.split(fold)
            result.test_accuracy = evaluate_accuracy(
                result.model, tensors, test_ids, result.final_k, config
            )
            results.append(result)

    accuracies = [r.test_accuracy for r in results]
    report = RunReport(
        fold_accuracies=accuracies,
        mean_accuracy=float(np.mean(accuracies)),
        std_accuracy=float(np.std(accuracies)),
        trajectories=[r.trajectory for r in results],
        wall_clock_seconds=time.perf_counter() - start,
    )
    return report, results
