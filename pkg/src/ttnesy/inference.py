"""Layered forward pass through sketched summaries and its reverse-mode gradient.

Every routine works on a leading batch axis: a distribution is an array of
shape ``(batch, size)`` and a value an array of shape ``(batch,)``.  Single
examples can be passed without the batch axis.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .program import OutputKind, ProgramGraph
from .sketch import TTSketch
from .tensor_core import NumericError


class ConfigurationError(ValueError):
    pass


class TapeMismatchError(RuntimeError):
    pass


@dataclass(frozen=True)
class RBFConfig:
    sigma: float = 0.5
    squared: bool = False

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")


def _batch(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim != 2:
        raise ValueError(f"expected a distribution or a batch of them, got shape {x.shape}")
    return x, False


# -- contractions -----------------------------------------------------------

def _sweep(cores: Sequence[np.ndarray], inputs: Sequence[np.ndarray]) -> list:
    """Left environments ``L_0 .. L_k``: ``L_{j+1}[b, c] = sum_{a,n} L_j[b, a] t_j[a, n, c] p_j[b, n]``."""
    batch = inputs[0].shape[0]
    envs = [np.ones((batch, 1))]
    for core, p in zip(cores, inputs):
        if p.shape[1] != core.shape[1]:
            raise ValueError(f"distribution of size {p.shape[1]} for a core axis of size {core.shape[1]}")
        if p.shape[0] != batch:
            raise ValueError("inputs disagree on batch size")
        r0, n, r1 = core.shape
        t = (envs[-1] @ core.reshape(r0, n * r1)).reshape(batch, n, r1)
        envs.append(np.einsum("bnc,bn->bc", t, p))
    return envs


def _prepare(s: TTSketch, inputs, n_inputs: int):
    if len(inputs) != n_inputs:
        raise ValueError(f"sketch expects {n_inputs} input distributions, got {len(inputs)}")
    batched = [_batch(p) for p in inputs]
    single = all(flag for _, flag in batched)
    return [p for p, _ in batched], single


def contract_value(s: TTSketch, inputs) -> np.ndarray | float:
    """Expected value ``sum_r phi[r] prod_i p_i[r_i]`` of a sketched VALUE summary,
    one core at a time."""
    ps, single = _prepare(s, inputs, s.ndim)
    v = _sweep(s.cores, ps)[-1][:, 0]
    return float(v[0]) if single else v


def _onehot_raw(s: TTSketch, ps) -> tuple[np.ndarray, list]:
    envs = _sweep(s.cores[:-1], ps)
    last = s.cores[-1][:, :, 0]
    return envs[-1] @ last, envs


def normalize_onehot(q: np.ndarray):
    """Clamp negatives, L1-normalize; all-zero rows become uniform.

    Returns ``(probs, totals, degenerate_mask)``.
    """
    qc = np.maximum(q, 0.0)
    totals = qc.sum(axis=1)
    degenerate = totals <= 0.0
    safe = np.where(degenerate, 1.0, totals)
    probs = qc / safe[:, None]
    probs[degenerate] = 1.0 / q.shape[1]
    return probs, totals, degenerate


def contract_onehot(s: TTSketch, inputs) -> np.ndarray:
    """Output distribution of a sketched ONEHOT summary (input axes first, output axis last)."""
    ps, single = _prepare(s, inputs, s.ndim - 1)
    q, _ = _onehot_raw(s, ps)
    probs, _, _ = normalize_onehot(q)
    return probs[0] if single else probs


def _rbf_logits(v: np.ndarray, support: int, cfg: RBFConfig) -> np.ndarray:
    dist = v[:, None] - np.arange(support)[None, :]
    if cfg.squared:
        return -(dist * dist) / (2 * cfg.sigma**2)
    return -np.abs(dist) / (2 * cfg.sigma**2)


def rbf_normalize(v, cfg: RBFConfig, support: int) -> np.ndarray:
    """``p[j] ∝ exp(-|v - j| / (2 sigma^2))`` over ``j = 0..support-1`` (squared distance if ``cfg.squared``)."""
    arr = np.atleast_1d(np.asarray(v, dtype=np.float64))
    if not np.all(np.isfinite(arr)):
        raise NumericError("RBF input must be finite")
    logits = _rbf_logits(arr, support, cfg)
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    p = w / w.sum(axis=1, keepdims=True)
    return p[0] if np.ndim(v) == 0 else p


def rbf_weights(v: float, cfg: RBFConfig, support: int) -> np.ndarray:
    """Unnormalized kernel weights."""
    return np.exp(_rbf_logits(np.array([float(v)]), support, cfg))[0]


def rbf_backward(v: np.ndarray, p: np.ndarray, g: np.ndarray, cfg: RBFConfig) -> np.ndarray:
    """Gradient wrt ``v`` given upstream ``g`` on the normalized distribution ``p``."""
    support = p.shape[1]
    dist = v[:, None] - np.arange(support)[None, :]
    if cfg.squared:
        dlog = -dist / cfg.sigma**2
    else:
        dlog = -np.sign(dist) / (2 * cfg.sigma**2)
    mean_dlog = np.sum(p * dlog, axis=1, keepdims=True)
    return np.sum(g * p * (dlog - mean_dlog), axis=1)


# -- graph forward / backward -----------------------------------------------

@dataclass
class NodeRecord:
    node: int
    inputs: list
    envs: list
    kind: OutputKind
    value: np.ndarray | None = None
    raw: np.ndarray | None = None
    totals: np.ndarray | None = None
    degenerate: np.ndarray | None = None
    output: np.ndarray | None = None
    rbf_applied: bool = False


@dataclass
class TraceTape:
    graph: ProgramGraph
    sketches: Mapping
    batch: int
    single: bool
    records: list = field(default_factory=list)
    rbf: RBFConfig = field(default_factory=RBFConfig)

    def __len__(self):
        return len(self.records)

    @property
    def flagged_uniform(self) -> list:
        """Nodes whose one-hot contraction came out all-zero for some example."""
        return [r.node for r in self.records if r.degenerate is not None and r.degenerate.any()]


def scalar_root(graph: ProgramGraph) -> bool:
    """True when the root's expected value is the task output (no RBF at the root)."""
    return graph.readout == "value" and graph.node_program(graph.root).output_kind is OutputKind.VALUE


def _sketch_for(sketches: Mapping, graph: ProgramGraph, i: int) -> TTSketch:
    name = graph.nodes[i].sub_program
    if name not in sketches:
        raise ConfigurationError(f"no sketch for sub-program {name!r} (node {i})")
    return sketches[name]


def forward(graph: ProgramGraph, sketches: Mapping, leaf_dists, cfg: RBFConfig = RBFConfig()):
    """Run every layer in order.

    VALUE nodes are contracted to an expected value and, unless they are the
    scalar root, turned into a distribution with the RBF kernel; ONEHOT nodes
    emit distributions directly.  Returns ``(root_output, tape)``.
    """
    if len(leaf_dists) != graph.n_leaves:
        raise ConfigurationError(f"{graph.name} has {graph.n_leaves} leaves, got {len(leaf_dists)} distributions")
    leaves = []
    flags = []
    for i, p in enumerate(leaf_dists):
        arr, single = _batch(p)
        if arr.shape[1] != graph.leaf_domains[i]:
            raise ConfigurationError(f"leaf {i}: expected {graph.leaf_domains[i]} symbols, got {arr.shape[1]}")
        leaves.append(arr)
        flags.append(single)
    batch = leaves[0].shape[0]
    if any(a.shape[0] != batch for a in leaves):
        raise ConfigurationError("leaf distributions disagree on batch size")
    single = all(flags)

    tape = TraceTape(graph, sketches, batch, single, rbf=cfg)
    outputs: list = []
    values: list = []
    scalar = scalar_root(graph)
    for i, node in enumerate(graph.nodes):
        sp = graph.sub_programs[node.sub_program]
        s = _sketch_for(sketches, graph, i)
        ins = [leaves[w.index] if w.kind == "leaf" else outputs[w.index] for w in node.inputs]
        if any(x is None for x in ins):
            raise ConfigurationError(f"node {i} reads a node without a distribution output")
        if sp.output_kind is OutputKind.VALUE:
            if s.ndim != len(ins):
                raise ConfigurationError(f"node {i}: sketch has {s.ndim} cores for {len(ins)} inputs")
            envs = _sweep(s.cores, ins)
            v = envs[-1][:, 0]
            rec = NodeRecord(i, ins, envs, sp.output_kind, value=v)
            if i == graph.root and scalar:
                out = None
            else:
                if sp.output_size is None:
                    raise ConfigurationError(f"node {i}: {sp.name} has no output support for the RBF kernel")
                out = rbf_normalize(v, cfg, sp.output_size).reshape(batch, -1)
                rec.rbf_applied = True
            rec.output = out
            values.append(v)
        else:
            if s.ndim != len(ins) + 1:
                raise ConfigurationError(f"node {i}: one-hot sketch needs {len(ins) + 1} cores, has {s.ndim}")
            q, envs = _onehot_raw(s, ins)
            out, totals, degenerate = normalize_onehot(q)
            rec = NodeRecord(i, ins, envs, sp.output_kind, raw=q, totals=totals,
                             degenerate=degenerate, output=out)
            values.append(None)
        outputs.append(rec.output)
        tape.records.append(rec)

    root = values[graph.root] if scalar else outputs[graph.root]
    if single:
        root = float(root[0]) if scalar else root[0]
    return root, tape


def node_outputs(tape: TraceTape) -> list:
    return [r.output for r in tape.records]


def _backward_through_cores(cores, inputs, envs, right: np.ndarray, grads_out: list) -> None:
    """Given the right environment after the last input core, push gradients into each input."""
    for j in range(len(inputs) - 1, -1, -1):
        r0, n, r1 = cores[j].shape
        batch = right.shape[0]
        # t[b, a, n] = sum_c core[a, n, c] right[b, c]
        t = (right @ cores[j].reshape(r0 * n, r1).T).reshape(batch, r0, n)
        grads_out[j] = np.einsum("ba,ban->bn", envs[j], t)
        right = np.einsum("ban,bn->ba", t, inputs[j])


def backward(tape: TraceTape, upstream) -> list:
    """Gradients of a scalar loss wrt every leaf distribution.

    ``upstream`` maps node index -> gradient on that node's output: shape
    ``(batch,)`` for the scalar root, ``(batch, size)`` for distributions.  A
    bare array is taken as the root's gradient.  Sketch cores are constants.
    """
    graph, sketches = tape.graph, tape.sketches
    if len(tape) != len(graph.nodes) or any(r.node != i for i, r in enumerate(tape.records)):
        raise TapeMismatchError(f"tape does not cover every node of {graph.name}")
    if not isinstance(upstream, Mapping):
        upstream = {graph.root: upstream}
    batch = tape.batch
    node_grads: dict = {}
    for i, g in upstream.items():
        g = np.asarray(g, dtype=np.float64)
        rec = tape.records[i]
        expected = (batch,) if rec.output is None else rec.output.shape
        node_grads[i] = g.reshape(expected)
    leaf_grads = [np.zeros((batch, d)) for d in graph.leaf_domains]

    for rec in reversed(tape.records):
        i = rec.node
        if i not in node_grads:
            continue
        g = node_grads.pop(i)
        s = _sketch_for(sketches, graph, i)
        node = graph.nodes[i]
        if rec.kind is OutputKind.VALUE:
            gv = rbf_backward(rec.value, rec.output, g, tape.rbf) if rec.rbf_applied else g
            cores = s.cores
            right = gv[:, None]
        else:
            z = np.where(rec.degenerate, 1.0, rec.totals)
            gq = (g - np.sum(g * rec.output, axis=1, keepdims=True)) / z[:, None]
            gq = gq * (rec.raw > 0)
            gq[rec.degenerate] = 0.0
            cores = s.cores[:-1]
            right = gq @ s.cores[-1][:, :, 0].T
        grads = [None] * len(rec.inputs)
        _backward_through_cores(cores, rec.inputs, rec.envs, right, grads)
        for w, gi in zip(node.inputs, grads):
            if w.kind == "leaf":
                leaf_grads[w.index] += gi
            elif w.index in node_grads:
                node_grads[w.index] = node_grads[w.index] + gi
            else:
                node_grads[w.index] = gi
    if tape.single:
        return [g[0] for g in leaf_grads]
    return leaf_grads


# -- sudoku board harness ---------------------------------------------------

def sudoku_cell_marginals(cell_sketch: TTSketch, board_dists, units) -> np.ndarray:
    """Per-cell digit distributions from three constraint instances per cell.

    ``board_dists`` is ``(81, 10)`` (symbol 0 = unfilled) and ``units(c)``
    lists the row, column and block peers of cell ``c``.  All 3 x 81 instances
    run as one batch; the three outputs of a cell are multiplied and
    renormalized (uniform when the product vanishes).  Returns ``(81, 9)``.
    """
    board = np.asarray(board_dists, dtype=np.float64)
    cells = board.shape[0]
    peers = np.array([p for c in range(cells) for p in units(c)])      # (3 * cells, 8)
    inputs = [board[peers[:, k]] for k in range(peers.shape[1])]
    per_unit = contract_onehot(cell_sketch, inputs).reshape(cells, 3, -1)
    merged = np.prod(per_unit, axis=1)
    probs, _, _ = normalize_onehot(merged)
    return probs
