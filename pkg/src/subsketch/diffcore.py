"""Minimal dense-matrix reverse-mode autodiff.

All values are 2-D C-contiguous float64 numpy arrays ("matrices"). A Tape
records every operation in creation order, which is automatically a
topological order: an operand node always exists before its consumer.
Calling ``Tape.backward`` on a scalar (1x1) node walks the tape in reverse
and accumulates gradients into every parameter node.

There is no broadcasting. Binary elementwise ops require equal shapes;
scalar broadcasts are expressed with explicit ones-matrix matmuls by the
callers. This keeps every backward rule a two-line closure.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Matrix", "Node", "Tape", "as_matrix", "ELEMENTWISE_KINDS"]

# Values are plain numpy arrays; the alias documents intent in signatures.
Matrix = np.ndarray

ELEMENTWISE_KINDS = (
    "add", "mul", "sigmoid", "tanh", "leaky_relu", "log", "exp", "neg", "scale",
)

# Additive mask value: finite (so tape values stay inf-free) but large enough
# that exp(x - rowmax) underflows to exactly 0.0 for masked entries.
MASK_OFF = -1e30


def as_matrix(value) -> Matrix:
    """Coerce to a 2-D float64 array, rejecting anything else."""
    m = np.ascontiguousarray(value, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got ndim={m.ndim}")
    return m


class Node:
    """One recorded value on a tape: output, operands, and a backward rule."""

    __slots__ = ("value", "grad", "parents", "backward_rule", "is_param", "name")

    def __init__(self, value, parents, backward_rule, is_param=False, name=None):
        self.value = value
        self.grad = None
        self.parents = parents
        self.backward_rule = backward_rule
        self.is_param = is_param
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = self.name or ("param" if self.is_param else "node")
        return f"<Node {tag} {self.value.shape[0]}x{self.value.shape[1]}>"


class Tape:
    """Linear record of operations with reverse-mode gradient accumulation.

    Single-threaded by design: one tape per training step. ``training``
    toggles dropout behavior; everything else is mode-independent.
    """

    def __init__(self, training: bool = True):
        self.nodes: list[Node] = []
        self.params: list[Node] = []
        self.training = training

    # ------------------------------------------------------------------ leaves

    def _record(self, value, parents=(), backward_rule=None, is_param=False, name=None) -> Node:
        node = Node(value, tuple(parents), backward_rule, is_param, name)
        self.nodes.append(node)
        if is_param:
            self.params.append(node)
        return node

    def param(self, value, name=None) -> Node:
        """Leaf that accumulates a gradient during backward."""
        return self._record(as_matrix(value), is_param=True, name=name)

    def constant(self, value, name=None) -> Node:
        """Leaf with no gradient tracking."""
        return self._record(as_matrix(value), name=name)

    # --------------------------------------------------------------- structure

    @staticmethod
    def _require_same_shape(op, a, b):
        if a.value.shape != b.value.shape:
            raise ValueError(
                f"{op} shape mismatch: {a.value.shape} vs {b.value.shape}"
            )

    def matmul(self, a: Node, b: Node) -> Node:
        if a.value.shape[1] != b.value.shape[0]:
            raise ValueError(
                f"matmul dimension mismatch: {a.value.shape} @ {b.value.shape}"
            )
        out = self._record(a.value @ b.value, (a, b))

        def rule(g):
            return (g @ b.value.T, a.value.T @ g)

        out.backward_rule = rule
        return out

    def transpose(self, x: Node) -> Node:
        out = self._record(np.ascontiguousarray(x.value.T), (x,))
        out.backward_rule = lambda g: (np.ascontiguousarray(g.T),)
        return out

    def reshape(self, x: Node, rows: int, cols: int) -> Node:
        if rows * cols != x.value.size:
            raise ValueError(
                f"reshape size mismatch: {x.value.shape} -> ({rows}, {cols})"
            )
        shape = x.value.shape
        out = self._record(x.value.reshape(rows, cols), (x,))
        out.backward_rule = lambda g: (g.reshape(shape),)
        return out

    def take_rows(self, x: Node, indices) -> Node:
        """Gather rows (duplicates allowed); backward scatter-adds."""
        idx = np.asarray(indices, dtype=np.intp)
        out = self._record(x.value[idx, :].copy(), (x,))

        def rule(g):
            gx = np.zeros_like(x.value)
            np.add.at(gx, idx, g)
            return (gx,)

        out.backward_rule = rule
        return out

    def sum(self, x: Node) -> Node:
        """Sum of all entries as a 1x1 matrix."""
        out = self._record(np.array([[x.value.sum()]]), (x,))
        out.backward_rule = lambda g: (np.full_like(x.value, g[0, 0]),)
        return out

    def block_diag_matmul(self, blocks: np.ndarray, h: Node) -> Node:
        """Multiply a constant block-diagonal matrix by ``h``.

        ``blocks`` has shape (m, s, s); ``h`` has shape (m*s, d). Block i acts
        on rows [i*s, (i+1)*s). Equivalent to a dense (m*s)x(m*s) block-diag
        matmul without materializing it.
        """
        m, s, s2 = blocks.shape
        if s != s2 or h.value.shape[0] != m * s:
            raise ValueError(
                f"block_diag_matmul mismatch: blocks {blocks.shape}, h {h.value.shape}"
            )
        d = h.value.shape[1]
        hr = h.value.reshape(m, s, d)
        out = self._record(np.einsum("bij,bjk->bik", blocks, hr).reshape(m * s, d), (h,))

        def rule(g):
            gr = g.reshape(m, s, d)
            return (np.einsum("bij,bik->bjk", blocks, gr).reshape(m * s, d),)

        out.backward_rule = rule
        return out

    def rowblock_weighted_sum(self, w: Node, h: Node) -> Node:
        """out[i] = sum_j w[i, j] * h[i*s + j]  (w: m x s, h: (m*s) x d)."""
        m, s = w.value.shape
        if h.value.shape[0] != m * s:
            raise ValueError(
                f"rowblock_weighted_sum mismatch: w {w.value.shape}, h {h.value.shape}"
            )
        d = h.value.shape[1]
        hr = h.value.reshape(m, s, d)
        out = self._record(np.einsum("ms,msd->md", w.value, hr), (w, h))

        def rule(g):
            gw = np.einsum("md,msd->ms", g, hr)
            gh = np.einsum("ms,md->msd", w.value, g).reshape(m * s, d)
            return (gw, gh)

        out.backward_rule = rule
        return out

    # -------------------------------------------------------------- elementwise

    def add(self, a: Node, b: Node) -> Node:
        self._require_same_shape("add", a, b)
        out = self._record(a.value + b.value, (a, b))
        out.backward_rule = lambda g: (g, g)
        return out

    def mul(self, a: Node, b: Node) -> Node:
        self._require_same_shape("mul", a, b)
        out = self._record(a.value * b.value, (a, b))
        out.backward_rule = lambda g: (g * b.value, g * a.value)
        return out

    def div(self, a: Node, b: Node) -> Node:
        self._require_same_shape("div", a, b)
        if np.any(b.value == 0.0):
            raise ValueError("div: zero entry in denominator")
        out = self._record(a.value / b.value, (a, b))
        out.backward_rule = lambda g: (g / b.value, -g * a.value / (b.value**2))
        return out

    def neg(self, x: Node) -> Node:
        out = self._record(-x.value, (x,))
        out.backward_rule = lambda g: (-g,)
        return out

    def scale(self, x: Node, c: float) -> Node:
        c = float(c)
        out = self._record(x.value * c, (x,))
        out.backward_rule = lambda g: (g * c,)
        return out

    def sigmoid(self, x: Node) -> Node:
        # tanh form is overflow-free for large |x|
        y = 0.5 * (1.0 + np.tanh(0.5 * x.value))
        out = self._record(y, (x,))
        out.backward_rule = lambda g: (g * y * (1.0 - y),)
        return out

    def tanh(self, x: Node) -> Node:
        y = np.tanh(x.value)
        out = self._record(y, (x,))
        out.backward_rule = lambda g: (g * (1.0 - y * y),)
        return out

    def leaky_relu(self, x: Node, slope: float = 0.2) -> Node:
        y = np.where(x.value > 0, x.value, slope * x.value)
        out = self._record(y, (x,))
        out.backward_rule = lambda g: (g * np.where(x.value > 0, 1.0, slope),)
        return out

    def log(self, x: Node) -> Node:
        if np.any(x.value <= 0.0):
            raise ValueError("log: non-positive operand entry")
        out = self._record(np.log(x.value), (x,))
        out.backward_rule = lambda g: (g / x.value,)
        return out

    def exp(self, x: Node) -> Node:
        y = np.exp(x.value)
        out = self._record(y, (x,))
        out.backward_rule = lambda g: (g * y,)
        return out

    def sqrt(self, x: Node) -> Node:
        if np.any(x.value <= 0.0):
            raise ValueError("sqrt: non-positive operand entry")
        y = np.sqrt(x.value)
        out = self._record(y, (x,))
        out.backward_rule = lambda g: (g * 0.5 / y,)
        return out

    def softplus(self, x: Node) -> Node:
        """log(1 + exp(x)), overflow-free; gradient is sigmoid(x)."""
        v = x.value
        y = np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v)))
        out = self._record(y, (x,))
        out.backward_rule = lambda g: (g * 0.5 * (1.0 + np.tanh(0.5 * v)),)
        return out

    def elementwise(self, kind: str, *inputs) -> Node:
        """Dispatch by op name; same contracts as the named methods."""
        if kind not in ELEMENTWISE_KINDS:
            raise ValueError(f"unknown elementwise kind {kind!r}")
        return getattr(self, kind)(*inputs)

    # ----------------------------------------------------------- row softmax

    def softmax_rows(self, x: Node) -> Node:
        shifted = x.value - x.value.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        y = e / e.sum(axis=1, keepdims=True)
        out = self._record(y, (x,))

        def rule(g):
            dot = (g * y).sum(axis=1, keepdims=True)
            return (y * (g - dot),)

        out.backward_rule = rule
        return out

    # -------------------------------------------------------------- dropout

    def dropout(self, x: Node, rate: float, rng: np.random.Generator) -> Node:
        """Inverted dropout; identity (same node) when not training."""
        if not (0.0 <= rate < 1.0):
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        if not self.training or rate == 0.0:
            return x
        keep = 1.0 - rate
        mask = (rng.random(x.value.shape) < keep) / keep
        out = self._record(x.value * mask, (x,))
        out.backward_rule = lambda g: (g * mask,)
        return out

    # -------------------------------------------------------------- backward

    def backward(self, loss: Node) -> dict[Node, np.ndarray]:
        """Accumulate gradients of a scalar loss into every parameter.

        Parameters not reachable from the loss get an exact zero gradient.
        Returns {param_node: gradient}, a view of each node's ``grad``.
        """
        if loss.value.shape != (1, 1):
            raise ValueError(
                f"backward needs a scalar (1x1) loss, got shape {loss.value.shape}"
            )
        for node in self.nodes:
            node.grad = None
        loss.grad = np.ones((1, 1))
        for node in reversed(self.nodes):
            if node.grad is None or node.backward_rule is None:
                continue
            for parent, g in zip(node.parents, node.backward_rule(node.grad)):
                if parent.grad is None:
                    parent.grad = g.copy() if isinstance(g, np.ndarray) else g
                else:
                    parent.grad = parent.grad + g
        for p in self.params:
            if p.grad is None:
                p.grad = np.zeros_like(p.value)
        return {p: p.grad for p in self.params}
