"""Sub-programs, summary tensors and layered program graphs."""
from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .tensor_core import ResourceError, check_budget


class OutputKind(str, enum.Enum):
    VALUE = "value"
    ONEHOT = "onehot"


class GraphError(ValueError):
    pass


class ForwardWireError(GraphError):
    pass


class ArityMismatchError(GraphError):
    pass


class DomainMismatchError(GraphError):
    pass


class UnreachableNodeError(GraphError):
    pass


@dataclass(frozen=True)
class SubProgram:
    """One node type of a decomposed program.

    ``evaluator`` maps a tuple of input symbol indices to a real (VALUE) or to
    a set of output indices (ONEHOT).  ``output_size`` is the number of output
    symbols; for a VALUE program it is the support used when its value is
    turned back into a distribution (``None`` for a real-valued final output).
    ``vectorized`` is an optional numpy version of the evaluator over index
    grids (single-valued programs only); ``dense_builder`` bypasses the grid
    entirely for programs that know their summary's sparsity, and
    ``exact_tt`` returns exact tensor-train cores for summaries too large to
    enumerate.
    """

    name: str
    input_domains: tuple
    output_kind: OutputKind
    evaluator: Callable
    output_size: int | None = None
    vectorized: Callable | None = field(default=None, compare=False)
    dense_builder: Callable | None = field(default=None, compare=False)
    exact_tt: Callable | None = field(default=None, compare=False)
    builtin: str | None = None
    params: Mapping = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "input_domains", tuple(int(d) for d in self.input_domains))
        object.__setattr__(self, "output_kind", OutputKind(self.output_kind))
        if not self.input_domains or any(d < 1 for d in self.input_domains):
            raise ValueError(f"{self.name}: input domains must be positive")
        if self.output_kind is OutputKind.ONEHOT and not self.output_size:
            raise ValueError(f"{self.name}: ONEHOT programs need an output_size")

    @property
    def arity(self) -> int:
        return len(self.input_domains)

    @property
    def summary_dims(self) -> tuple:
        if self.output_kind is OutputKind.ONEHOT:
            return self.input_domains + (self.output_size,)
        return self.input_domains

    @property
    def summary_entries(self) -> int:
        return math.prod(self.summary_dims)

    def __call__(self, *symbols):
        out = self.evaluator(*symbols)
        if self.output_kind is OutputKind.ONEHOT:
            out = frozenset(int(y) for y in out)
            if any(not 0 <= y < self.output_size for y in out):
                raise ValueError(f"{self.name}{symbols}: output {sorted(out)} outside 0..{self.output_size - 1}")
            return out
        return float(out)

    def to_config(self) -> dict:
        if self.builtin is None:
            raise GraphError(f"{self.name}: only builtin sub-programs serialize to config")
        return {"builtin": self.builtin, "params": dict(self.params),
                "output_kind": self.output_kind.value}


# -- summary construction ---------------------------------------------------

@dataclass(frozen=True)
class Enumerate:
    pass


@dataclass(frozen=True)
class Sample:
    count: int
    seed: int = 0


ENUMERATE = Enumerate()


def build_summary(sp: SubProgram, mode=ENUMERATE, budget: int | None = None) -> np.ndarray:
    """Dense summary: ``phi[r] = c(r)`` (VALUE) or the indicator ``phi[r, y] = [y in c(r)]`` (ONEHOT)."""
    dims = sp.summary_dims
    if isinstance(mode, Sample):
        return _sampled_summary(sp, mode, budget)
    try:
        check_budget(math.prod(dims), f"enumerating summary of {sp.name} {dims}", budget)
    except ResourceError as exc:
        raise ResourceError(f"{exc}; decompose the program further or use SAMPLE mode") from None
    if sp.dense_builder is not None:
        phi = np.asarray(sp.dense_builder(), dtype=np.float64)
    elif sp.vectorized is not None:
        grids = np.indices(sp.input_domains, sparse=True)
        values = np.broadcast_to(sp.vectorized(*grids), sp.input_domains)
        if sp.output_kind is OutputKind.VALUE:
            phi = np.array(values, dtype=np.float64)
        else:
            phi = np.zeros(dims)
            idx = np.asarray(values, dtype=np.int64)
            np.put_along_axis(phi, idx[..., None], 1.0, axis=-1)
    else:
        phi = np.zeros(dims)
        for r in itertools.product(*(range(n) for n in sp.input_domains)):
            _fill(phi, sp, r)
    if phi.shape != dims:
        raise ValueError(f"{sp.name}: builder produced {phi.shape}, expected {dims}")
    return phi


def _fill(phi, sp, r):
    out = sp(*r)
    if sp.output_kind is OutputKind.VALUE:
        phi[r] = out
    else:
        for y in out:
            phi[r + (y,)] = 1.0


def _sampled_summary(sp, mode: Sample, budget):
    # unvisited cells stay 0 / all-zero rows
    check_budget(sp.summary_entries, f"summary of {sp.name}", budget)
    phi = np.zeros(sp.summary_dims)
    rng = np.random.default_rng(mode.seed)
    for _ in range(mode.count):
        r = tuple(int(rng.integers(n)) for n in sp.input_domains)
        _fill(phi, sp, r)
    return phi


# -- builtin sub-programs ---------------------------------------------------

def pairwise_sum(left: int, right: int, onehot: bool = False, name: str | None = None,
                 output_size: int | None = None) -> SubProgram:
    """``phi[a, b] = a + b`` over ``0..left-1`` x ``0..right-1``."""
    size = output_size or left + right - 1
    kind = OutputKind.ONEHOT if onehot else OutputKind.VALUE
    return SubProgram(
        name=name or f"sum_{left}x{right}" + ("_oh" if onehot else ""),
        input_domains=(left, right),
        output_kind=kind,
        evaluator=(lambda a, b: {a + b}) if onehot else (lambda a, b: a + b),
        output_size=size,
        vectorized=lambda a, b: a + b,
        builtin="pairwise_sum",
        params={"left": left, "right": right, "output_size": size, "name": name},
    )


def nary_sum(arity: int, domain: int, onehot: bool = False, name: str | None = None) -> SubProgram:
    """Sum of ``arity`` inputs each in ``0..domain-1`` (an undecomposed block)."""
    size = arity * (domain - 1) + 1
    kind = OutputKind.ONEHOT if onehot else OutputKind.VALUE
    return SubProgram(
        name=name or f"sum{arity}_{domain}" + ("_oh" if onehot else ""),
        input_domains=(domain,) * arity,
        output_kind=kind,
        evaluator=(lambda *r: {sum(r)}) if onehot else (lambda *r: sum(r)),
        output_size=size,
        vectorized=lambda *r: sum(r),
        builtin="nary_sum",
        params={"arity": arity, "domain": domain, "name": name},
    )


def carry_sum(onehot: bool = False, name: str | None = None) -> SubProgram:
    """Place sum ``s`` in 0..18 plus the carry out of the previous place output ``c`` in 0..19."""
    def fn(s, c):
        return s + (c >= 10)

    return SubProgram(
        name=name or ("carry_oh" if onehot else "carry"),
        input_domains=(19, 20),
        output_kind=OutputKind.ONEHOT if onehot else OutputKind.VALUE,
        evaluator=(lambda s, c: {fn(s, c)}) if onehot else fn,
        output_size=20,
        vectorized=lambda s, c: s + (c >= 10).astype(np.int64),
        builtin="carry_sum",
        params={"name": name},
    )


def equality(n: int, onehot: bool = True, name: str | None = None) -> SubProgram:
    """``phi[i, j] = (i == j)``."""
    return SubProgram(
        name=name or (f"eq{n}_oh" if onehot else f"eq{n}"),
        input_domains=(n, n),
        output_kind=OutputKind.ONEHOT if onehot else OutputKind.VALUE,
        evaluator=(lambda i, j: {int(i == j)}) if onehot else (lambda i, j: int(i == j)),
        output_size=2,
        vectorized=lambda i, j: (i == j).astype(np.int64),
        builtin="equality",
        params={"n": n, "name": name},
    )


def boolean_gate(op: str, name: str | None = None) -> SubProgram:
    """Two-input boolean gate as a 2x2x2 one-hot summary; ``op`` is ``or`` or ``nor``."""
    table = {"or": lambda a, b: a | b, "nor": lambda a, b: 1 - (a | b)}
    fn = table[op]
    return SubProgram(
        name=name or op,
        input_domains=(2, 2),
        output_kind=OutputKind.ONEHOT,
        evaluator=lambda a, b: {fn(a, b)},
        output_size=2,
        vectorized=fn,
        builtin="boolean_gate",
        params={"op": op, "name": name},
    )


def sudoku_cell() -> SubProgram:
    """Values a cell may take given the 8 other cells of its row, column or block.

    Inputs are 0 (unfilled) or 1..9; output ``v`` in 0..8 stands for digit
    ``v + 1``.  Duplicated filled values give the empty set.
    """
    def evaluate(*cells):
        filled = [c for c in cells if c]
        if len(set(filled)) != len(filled):
            return set()
        return {v - 1 for v in range(1, 10) if v not in filled}

    return SubProgram(
        name="sudoku_cell",
        input_domains=(10,) * 8,
        output_kind=OutputKind.ONEHOT,
        evaluator=evaluate,
        output_size=9,
        exact_tt=sudoku_cell_cores,
        builtin="sudoku_cell",
        params={},
    )


def sudoku_cell_cores() -> list:
    """Exact tensor-train cores of the sudoku cell indicator tensor.

    The bond index after ``k`` inputs is the set of digits used so far
    (subsets of size <= k), so the 10^8 x 9 tensor is never materialized.
    """
    subsets = [frozenset()]
    index = {frozenset(): 0}
    cores = []
    for _ in range(8):
        nxt, nxt_index, entries = [], {}, []
        for s in subsets:
            for n in range(10):
                if n == 0:
                    t = s
                elif n in s:
                    continue
                else:
                    t = s | {n}
                if t not in nxt_index:
                    nxt_index[t] = len(nxt)
                    nxt.append(t)
                entries.append((index[s], n, nxt_index[t]))
        core = np.zeros((len(subsets), 10, len(nxt)))
        for a, n, b in entries:
            core[a, n, b] = 1.0
        cores.append(core)
        subsets, index = nxt, nxt_index
    last = np.zeros((len(subsets), 9, 1))
    for s, a in index.items():
        for v in range(1, 10):
            if v not in s:
                last[a, v - 1, 0] = 1.0
    cores.append(last)
    return cores


HWF_OPS = "+-*/"
HWF_SYMBOLS = tuple(str(d) for d in range(10)) + tuple(HWF_OPS)


def hwf_evaluate(symbols: Sequence[int]) -> float:
    """Evaluate digit/operator alternation with ``* /`` binding tighter than ``+ -``.

    Malformed formulas and division by zero give 0.
    """
    if len(symbols) % 2 == 0:
        return 0.0
    for k, s in enumerate(symbols):
        if (s < 10) != (k % 2 == 0):
            return 0.0
    terms = []
    current = float(symbols[0])
    pending_sign = 1.0
    for k in range(1, len(symbols), 2):
        op = HWF_OPS[symbols[k] - 10]
        operand = float(symbols[k + 1])
        if op == "*":
            current = current * operand
        elif op == "/":
            if operand == 0.0:
                return 0.0
            current = current / operand
        else:
            terms.append(pending_sign * current)
            pending_sign = 1.0 if op == "+" else -1.0
            current = operand
    terms.append(pending_sign * current)
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return float(total)


def hwf(length: int) -> SubProgram:
    if length % 2 == 0 or not 1 <= length <= 7:
        raise ValueError("formula length must be 1, 3, 5 or 7")

    def builder():
        phi = np.zeros((14,) * length)
        digit_choices = [range(10)] * ((length + 1) // 2)
        op_choices = [range(10, 14)] * (length // 2)
        for digits in itertools.product(*digit_choices):
            for ops in itertools.product(*op_choices):
                r = [0] * length
                r[0::2] = digits
                r[1::2] = ops
                phi[tuple(r)] = hwf_evaluate(r)
        return phi

    return SubProgram(
        name=f"hwf{length}",
        input_domains=(14,) * length,
        output_kind=OutputKind.VALUE,
        evaluator=lambda *r: hwf_evaluate(r),
        output_size=None,
        dense_builder=builder,
        builtin="hwf",
        params={"length": length},
    )


def table(mapping: Mapping, domains: Sequence[int], output_kind=OutputKind.ONEHOT,
          output_size: int | None = None, name: str = "table",
          strict: bool = True) -> SubProgram:
    """Lookup-backed sub-program for black-box functions.

    ONEHOT tables map tuples to an output index or a collection of indices;
    VALUE tables map tuples to reals.  With ``strict`` every tuple of the grid
    must be present when the summary is enumerated.
    """
    output_kind = OutputKind(output_kind)
    entries = {tuple(int(x) for x in k): v for k, v in mapping.items()}

    def evaluate(*r):
        if r not in entries:
            if strict:
                raise KeyError(f"{name}: no entry for {r}")
            return set() if output_kind is OutputKind.ONEHOT else 0.0
        v = entries[r]
        if output_kind is OutputKind.ONEHOT:
            return {v} if isinstance(v, (int, np.integer)) else set(v)
        return v

    def builder():
        dims = tuple(domains) + ((output_size,) if output_kind is OutputKind.ONEHOT else ())
        phi = np.zeros(dims)
        for r in itertools.product(*(range(n) for n in domains)):
            try:
                out = evaluate(*r)
            except KeyError as exc:
                raise ValueError(str(exc)) from None
            if output_kind is OutputKind.VALUE:
                phi[r] = out
            else:
                for y in out:
                    phi[r + (int(y),)] = 1.0
        return phi

    serial = {",".join(map(str, k)): (sorted(v) if isinstance(v, (set, frozenset, list, tuple)) else v)
              for k, v in entries.items()}
    return SubProgram(
        name=name,
        input_domains=tuple(domains),
        output_kind=output_kind,
        evaluator=evaluate,
        output_size=output_size,
        dense_builder=builder,
        builtin="table",
        params={"mapping": serial, "domains": list(domains), "output_size": output_size,
                "name": name, "strict": strict},
    )


def _table_from_params(params, output_kind):
    mapping = {}
    for k, v in params["mapping"].items():
        key = tuple(int(x) for x in k.split(",")) if k != "" else ()
        mapping[key] = set(v) if isinstance(v, list) else v
    return table(mapping, params["domains"], output_kind, params.get("output_size"),
                 params.get("name", "table"), params.get("strict", True))


def subprogram_from_config(name: str, cfg: Mapping) -> SubProgram:
    builtin = cfg["builtin"]
    params = dict(cfg.get("params", {}))
    kind = OutputKind(cfg.get("output_kind", "value"))
    onehot = kind is OutputKind.ONEHOT
    if builtin == "pairwise_sum":
        sp = pairwise_sum(params["left"], params["right"], onehot, name, params.get("output_size"))
    elif builtin == "nary_sum":
        sp = nary_sum(params["arity"], params["domain"], onehot, name)
    elif builtin == "carry_sum":
        sp = carry_sum(onehot, name)
    elif builtin == "equality":
        sp = equality(params["n"], onehot, name)
    elif builtin == "boolean_gate":
        sp = boolean_gate(params["op"], name)
    elif builtin == "sudoku_cell":
        sp = sudoku_cell()
    elif builtin == "hwf":
        sp = hwf(params["length"])
    elif builtin == "table":
        sp = _table_from_params(params, kind)
    else:
        raise GraphError(f"unknown builtin sub-program {builtin!r}")
    if sp.output_kind is not kind:
        raise GraphError(f"{name}: builtin {builtin} does not support output_kind {kind.value}")
    if sp.name != name:
        sp = _renamed(sp, name)
    return sp


def _renamed(sp: SubProgram, name: str) -> SubProgram:
    params = dict(sp.params)
    if "name" in params:
        params["name"] = name
    return SubProgram(name, sp.input_domains, sp.output_kind, sp.evaluator, sp.output_size,
                      sp.vectorized, sp.dense_builder, sp.exact_tt, sp.builtin, params)


# -- program graphs ---------------------------------------------------------

@dataclass(frozen=True)
class Wire:
    """Either perceptual leaf ``index`` or the output of flat node ``index``."""

    kind: str
    index: int

    def __post_init__(self):
        if self.kind not in ("leaf", "node"):
            raise GraphError(f"wire kind must be 'leaf' or 'node', got {self.kind!r}")

    @classmethod
    def leaf(cls, i):
        return cls("leaf", int(i))

    @classmethod
    def node(cls, i):
        return cls("node", int(i))


@dataclass(frozen=True)
class Node:
    sub_program: str
    inputs: tuple


READOUTS = ("value", "class", "digits")


@dataclass(frozen=True)
class ProgramGraph:
    """Layered DAG of sub-program instances.

    Nodes are numbered layer by layer (``flat index``); ``readout`` says how
    the task output is read: ``value`` (real root), ``class`` (root symbol) or
    ``digits`` (multi-digit sum assembled from ``readout_nodes``).
    """

    name: str
    leaf_domains: tuple
    sub_programs: Mapping
    layers: tuple
    root: int | None = None
    readout: str = "value"
    readout_nodes: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "leaf_domains", tuple(int(d) for d in self.leaf_domains))
        object.__setattr__(self, "layers", tuple(tuple(layer) for layer in self.layers))
        object.__setattr__(self, "sub_programs", dict(self.sub_programs))
        n = sum(len(layer) for layer in self.layers)
        if self.root is None:
            object.__setattr__(self, "root", n - 1)
        if not self.readout_nodes:
            object.__setattr__(self, "readout_nodes", (self.root,))
        object.__setattr__(self, "readout_nodes", tuple(int(i) for i in self.readout_nodes))
        self.validate()

    @property
    def nodes(self) -> list:
        return [node for layer in self.layers for node in layer]

    @property
    def node_layers(self) -> list:
        return [li for li, layer in enumerate(self.layers) for _ in layer]

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_domains)

    def node_program(self, i: int) -> SubProgram:
        return self.sub_programs[self.nodes[i].sub_program]

    def wire_domain(self, w: Wire) -> int | None:
        if w.kind == "leaf":
            return self.leaf_domains[w.index]
        return self.node_program(w.index).output_size

    def validate(self) -> None:
        nodes = self.nodes
        if not nodes:
            raise GraphError("graph has no nodes")
        layer_of = self.node_layers
        if self.readout not in READOUTS:
            raise GraphError(f"readout must be one of {READOUTS}")
        if not 0 <= self.root < len(nodes):
            raise GraphError(f"root {self.root} out of range")
        for i, node in enumerate(nodes):
            if node.sub_program not in self.sub_programs:
                raise GraphError(f"node {i}: unknown sub-program {node.sub_program!r}")
            sp = self.sub_programs[node.sub_program]
            if len(node.inputs) != sp.arity:
                raise ArityMismatchError(
                    f"node {i}: {sp.name} takes {sp.arity} inputs, got {len(node.inputs)}")
            for k, w in enumerate(node.inputs):
                if w.kind == "leaf":
                    if not 0 <= w.index < self.n_leaves:
                        raise GraphError(f"node {i}: leaf {w.index} out of range")
                    if layer_of[i] != 0:
                        raise ForwardWireError(f"node {i}: leaf wires are only allowed in layer 1")
                else:
                    if not 0 <= w.index < len(nodes):
                        raise GraphError(f"node {i}: node wire {w.index} out of range")
                    if layer_of[w.index] >= layer_of[i]:
                        raise ForwardWireError(
                            f"node {i} (layer {layer_of[i] + 1}) reads node {w.index} "
                            f"(layer {layer_of[w.index] + 1}); wires must point to earlier layers")
                dom = self.wire_domain(w)
                if dom != sp.input_domains[k]:
                    raise DomainMismatchError(
                        f"node {i} input {k}: wire carries {dom} symbols, {sp.name} expects "
                        f"{sp.input_domains[k]}")
        reached = set()
        stack = [self.root]
        while stack:
            i = stack.pop()
            if i in reached:
                continue
            reached.add(i)
            stack.extend(w.index for w in nodes[i].inputs if w.kind == "node")
        missing = sorted(set(range(len(nodes))) - reached)
        if missing:
            raise UnreachableNodeError(f"nodes {missing} are not reachable from root {self.root}")
        for i in self.readout_nodes:
            if i not in reached:
                raise GraphError(f"readout node {i} out of range")

    # -- symbolic execution (no tensors) --

    def execute(self, symbols: Sequence[int]) -> list:
        """Run every node on concrete leaf symbols; returns each node's output.

        VALUE outputs consumed downstream are rounded to the nearest symbol;
        ONEHOT outputs are frozensets (``None`` marks a non-singleton set fed
        to a later node, which has no single symbolic continuation).
        """
        outs = []
        for node in self.nodes:
            args = []
            for w in node.inputs:
                if w.kind == "leaf":
                    args.append(int(symbols[w.index]))
                else:
                    args.append(as_symbol(outs[w.index]))
            if any(a is None for a in args):
                outs.append(None)
            else:
                outs.append(self.sub_programs[node.sub_program](*args))
        return outs

    def task_output(self, symbols: Sequence[int]):
        return read_task_output(self, self.execute(symbols))

    # -- config round trip --

    def to_config(self, ranks: Mapping | None = None) -> dict:
        cfg = {
            "name": self.name,
            "leaf_domains": list(self.leaf_domains),
            "sub_programs": {k: sp.to_config() for k, sp in self.sub_programs.items()},
            "layers": [[{"sub_program": n.sub_program,
                         "inputs": [[w.kind, w.index] for w in n.inputs]} for n in layer]
                       for layer in self.layers],
            "root": self.root,
            "readout": self.readout,
            "readout_nodes": list(self.readout_nodes),
        }
        if ranks:
            cfg["ranks"] = {k: v for k, v in ranks.items()}
        return cfg


def as_symbol(out):
    if out is None:
        return None
    if isinstance(out, frozenset):
        return next(iter(out)) if len(out) == 1 else None
    return int(round(out))


def read_task_output(g: ProgramGraph, outs: Sequence):
    if g.readout == "value":
        return outs[g.root]
    if g.readout == "class":
        return as_symbol(outs[g.root])
    places = [as_symbol(outs[i]) for i in g.readout_nodes]
    if any(p is None for p in places):
        return None
    # readout nodes run least significant first; the last carries out
    digits = [p % 10 for p in places]
    return (places[-1] // 10, *reversed(digits))


def graph_from_config(cfg: Mapping) -> ProgramGraph:
    try:
        sps = {name: subprogram_from_config(name, spec) for name, spec in cfg["sub_programs"].items()}
        layers = [[Node(n["sub_program"], tuple(Wire(k, int(i)) for k, i in n["inputs"]))
                   for n in layer] for layer in cfg["layers"]]
        return ProgramGraph(cfg.get("name", "task"), tuple(cfg["leaf_domains"]), sps, tuple(layers),
                            cfg.get("root"), cfg.get("readout", "value"),
                            tuple(cfg.get("readout_nodes", ())))
    except (KeyError, TypeError) as exc:
        raise GraphError(f"malformed task config: {exc!r}") from None


# -- builtin graphs ---------------------------------------------------------

def _is_power_of_two(n: int) -> bool:
    return n >= 2 and n & (n - 1) == 0


def builtin_sum_tree(n: int, digit_base: int = 10, onehot_internal: bool = False,
                     onehot_root: bool = False) -> ProgramGraph:
    """Binary tree of pairwise sums over ``n`` digits (``log2 n`` layers).

    Layer ``i`` reads two inputs of ``(base-1) * 2**(i-1) + 1`` symbols; all
    nodes of a layer share one sub-program.
    """
    if not _is_power_of_two(n):
        raise ValueError(f"n must be a power of two >= 2, got {n}")
    depth = n.bit_length() - 1
    sps, layers = {}, []
    prev = [Wire.leaf(i) for i in range(n)]
    flat = 0
    for i in range(1, depth + 1):
        size_in = (digit_base - 1) * 2 ** (i - 1) + 1
        is_root = i == depth
        onehot = onehot_root if is_root else onehot_internal
        name = f"sum_L{i}"
        sps[name] = pairwise_sum(size_in, size_in, onehot, name)
        layer, nxt = [], []
        for k in range(0, len(prev), 2):
            layer.append(Node(name, (prev[k], prev[k + 1])))
            nxt.append(Wire.node(flat))
            flat += 1
        layers.append(tuple(layer))
        prev = nxt
    readout = "class" if onehot_root else "value"
    return ProgramGraph(f"sum_{n}", (digit_base,) * n, sps, tuple(layers), readout=readout)


def builtin_sum_decomposed(splits: Sequence[int], digit_base: int = 10,
                           onehot: bool = False, onehot_root: bool = False) -> ProgramGraph:
    """Sum of ``prod(splits)`` digits as layers of ``splits[i]``-ary sums.

    ``(16,)`` is the undecomposed program, ``(2, 2, 2, 2)`` the binary tree.
    """
    splits = [int(s) for s in splits]
    n = math.prod(splits)
    sps, layers = {}, []
    prev = [Wire.leaf(i) for i in range(n)]
    domain = digit_base
    flat = 0
    for i, k in enumerate(splits, start=1):
        is_root = i == len(splits)
        name = f"sum{k}_L{i}"
        sps[name] = nary_sum(k, domain, onehot_root if is_root else onehot, name)
        layer, nxt = [], []
        for j in range(0, len(prev), k):
            layer.append(Node(name, tuple(prev[j:j + k])))
            nxt.append(Wire.node(flat))
            flat += 1
        layers.append(tuple(layer))
        prev = nxt
        domain = k * (domain - 1) + 1
    return ProgramGraph("sum_" + "x".join(map(str, splits)), (digit_base,) * n, sps, tuple(layers),
                        readout="class" if onehot_root else "value")


def builtin_carry_add(n_digits: int, onehot: bool = False) -> ProgramGraph:
    """Two ``n``-digit numbers as a chain of place sums and carries.

    Leaves ``0..n-1`` are the first number's digits and ``n..2n-1`` the
    second's, least significant first.  The lowest place sum declares 20
    output symbols so it can feed the 19 x 20 carry node directly.
    """
    if n_digits < 1:
        raise ValueError("n_digits must be >= 1")
    n = n_digits
    sps = {"place_sum": pairwise_sum(10, 10, onehot, "place_sum")}
    if n > 1:
        sps["place_sum_low"] = pairwise_sum(10, 10, onehot, "place_sum_low", output_size=20)
        sps["carry"] = carry_sum(onehot, "carry")
        first = [Node("place_sum_low", (Wire.leaf(0), Wire.leaf(n)))]
    else:
        first = [Node("place_sum", (Wire.leaf(0), Wire.leaf(n)))]
    first += [Node("place_sum", (Wire.leaf(i), Wire.leaf(n + i))) for i in range(1, n)]
    layers = [tuple(first)]
    readout = [0]
    prev = 0
    for i in range(1, n):
        flat = n + i - 1
        layers.append((Node("carry", (Wire.node(i), Wire.node(prev))),))
        readout.append(flat)
        prev = flat
    return ProgramGraph(f"add_{n}", (10,) * (2 * n), sps, tuple(layers),
                        readout="digits", readout_nodes=tuple(readout))


def visudo_pairs(n: int) -> list:
    """Cell index pairs sharing a row, column or block of an ``n x n`` board."""
    box = int(math.isqrt(n))
    pairs = []
    cells = n * n
    for a in range(cells):
        for b in range(a + 1, cells):
            ra, ca = divmod(a, n)
            rb, cb = divmod(b, n)
            same_box = (ra // box, ca // box) == (rb // box, cb // box)
            if ra == rb or ca == cb or same_box:
                pairs.append((a, b))
    return pairs


def builtin_visudo(n: int) -> ProgramGraph:
    """Board validity: pairwise equality checks, then a balanced OR tree capped by a NOR.

    Root output 1 means valid (no equal pair).
    """
    if n not in (4, 9):
        raise ValueError("N must be 4 or 9")
    pairs = visudo_pairs(n)
    sps = {"eq": equality(n, True, "eq"), "or": boolean_gate("or", "or"),
           "nor": boolean_gate("nor", "nor")}
    layers = [tuple(Node("eq", (Wire.leaf(a), Wire.leaf(b))) for a, b in pairs)]
    pending = [Wire.node(i) for i in range(len(pairs))]
    flat = len(pairs)
    while len(pending) > 1:
        last = len(pending) == 2
        layer, nxt = [], []
        for k in range(0, len(pending) - 1, 2):
            layer.append(Node("nor" if last else "or", (pending[k], pending[k + 1])))
            nxt.append(Wire.node(flat))
            flat += 1
        if len(pending) % 2:
            nxt.append(pending[-1])
        layers.append(tuple(layer))
        pending = nxt
    return ProgramGraph(f"visudo_{n}", (n,) * (n * n), sps, tuple(layers), readout="class")


def builtin_hwf(length: int) -> ProgramGraph:
    sp = hwf(length)
    return ProgramGraph(f"hwf_{length}", (14,) * length, {sp.name: sp},
                        ((Node(sp.name, tuple(Wire.leaf(i) for i in range(length))),),))


def builtin_sudoku_cell_graph() -> ProgramGraph:
    sp = sudoku_cell()
    return ProgramGraph("sudoku_cell", (10,) * 8, {sp.name: sp},
                        ((Node(sp.name, tuple(Wire.leaf(i) for i in range(8))),),),
                        readout="class")


def sudoku_units(cell: int) -> list:
    """The three lists of 8 peer cells (row, column, block) of a 9x9 board cell."""
    r, c = divmod(cell, 9)
    row = [r * 9 + k for k in range(9) if k != c]
    col = [k * 9 + c for k in range(9) if k != r]
    br, bc = 3 * (r // 3), 3 * (c // 3)
    block = [(br + i) * 9 + bc + j for i in range(3) for j in range(3)
             if (br + i, bc + j) != (r, c)]
    return [row, col, block]


def builtin_task(name: str) -> ProgramGraph:
    """Builtin graph by task name: ``sum_N``, ``add_N``, ``visudo_N``, ``hwf_L``,
    ``sudoku_cell`` and ``sumdec_AxB..`` (explicit decomposition)."""
    kind, _, arg = name.partition("_")
    flags = set()
    while arg.endswith(("_oh", "_ohr")):
        arg, _, flag = arg.rpartition("_")
        flags.add(flag)
    if kind == "sum":
        return builtin_sum_tree(int(arg), onehot_internal="oh" in flags or "ohr" in flags,
                                onehot_root="ohr" in flags)
    if kind == "sumdec":
        return builtin_sum_decomposed([int(s) for s in arg.split("x")],
                                      onehot="oh" in flags or "ohr" in flags, onehot_root="ohr" in flags)
    if kind == "add":
        return builtin_carry_add(int(arg), onehot="oh" in flags)
    if kind == "visudo":
        return builtin_visudo(int(arg))
    if kind == "hwf":
        return builtin_hwf(int(arg))
    if name == "sudoku_cell":
        return builtin_sudoku_cell_graph()
    raise GraphError(f"unknown builtin task {name!r}")
