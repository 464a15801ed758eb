"""Structural-equation DSL: parsing, panel simulation, interventions, MC truth.

The DSL defines one node distribution per line, optionally templated over a
time range::

    L[1] ~ N(0, 0.25)
    L[t] ~ N(L[t-1] + A[t-1], 0.25) for t in 2..3
    A[t] ~ B(expit(L[t] + 2*A[t-1] - L[t-1])) for t in 2..3
    intervention A
    outcome Y

Node order is time-major (declaration order breaks ties within a time).
Expressions support +, -, *, numeric constants, node references with an
absolute time or a relative lag, and expit(x) = 1/(1+exp(-x)); Bernoulli
nodes must wrap their mean in expit so probabilities stay in [0, 1].

Simulation draws each node from a counter-based stream keyed on
(seed, node index), with the unit index as the counter position, so output
is bit-identical for a given (spec, n, seed) under any unit partitioning.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np
from scipy.special import expit as _expit
from scipy.special import ndtri as _ndtri

from .panel import (
    MedianWindowRule,
    NodeOrdering,
    NodeRef,
    PanelDataset,
    PanelError,
    Regime,
    StaticRule,
)

_RESERVED = {"t", "N", "B", "expit", "for", "in", "intervention", "outcome"}


class DgpParseError(ValueError):
    def __init__(self, message: str, line: int, col: int):
        self.line = line
        self.col = col
        super().__init__(f"line {line}, col {col}: {message}")


# ---------------------------------------------------------------------------
# Expression AST
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Ref:
    """Node reference: absolute time when ``time`` is set, else lag behind t."""

    name: str
    lag: Union[int, None] = None
    time: Union[int, None] = None

    def resolve(self, t: int) -> NodeRef:
        return NodeRef(self.name, self.time if self.time is not None else t - self.lag)


@dataclass(frozen=True)
class BinOp:
    op: str  # '+', '-', '*'
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Expit:
    arg: "Expr"


Expr = Union[Const, Ref, BinOp, Expit]


def expr_refs(expr: Expr) -> list[Ref]:
    if isinstance(expr, Ref):
        return [expr]
    if isinstance(expr, BinOp):
        return expr_refs(expr.left) + expr_refs(expr.right)
    if isinstance(expr, Expit):
        return expr_refs(expr.arg)
    return []


def eval_expr(expr: Expr, t: int, env: Mapping[NodeRef, np.ndarray]):
    if isinstance(expr, Const):
        return expr.value
    if isinstance(expr, Ref):
        node = expr.resolve(t)
        try:
            return env[node]
        except KeyError:
            raise PanelError(f"expression references unsimulated node {node}") from None
    if isinstance(expr, BinOp):
        a = eval_expr(expr.left, t, env)
        b = eval_expr(expr.right, t, env)
        if expr.op == "+":
            return a + b
        if expr.op == "-":
            return a - b
        return a * b
    return _expit(eval_expr(expr.arg, t, env))


def _fmt_num(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


_PREC = {"+": 1, "-": 1, "*": 2}


def format_expr(expr: Expr) -> str:
    """Print an expression so that parsing it back yields an identical tree."""
    if isinstance(expr, Const):
        return _fmt_num(expr.value)
    if isinstance(expr, Ref):
        if expr.time is not None:
            return f"{expr.name}[{expr.time}]"
        if expr.lag == 0:
            return f"{expr.name}[t]"
        return f"{expr.name}[t-{expr.lag}]"
    if isinstance(expr, Expit):
        return f"expit({format_expr(expr.arg)})"
    left = format_expr(expr.left)
    right = format_expr(expr.right)
    if isinstance(expr.left, BinOp) and _PREC[expr.left.op] < _PREC[expr.op]:
        left = f"({left})"
    # the grammar is left-associative, so a right-nested operand of equal
    # precedence must keep its parentheses to round-trip
    if isinstance(expr.right, BinOp) and _PREC[expr.right.op] <= _PREC[expr.op]:
        right = f"({right})"
    return f"{left} {expr.op} {right}"


# ---------------------------------------------------------------------------
# Distributions and node definitions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NormalDist:
    mean: Expr
    var: float


@dataclass(frozen=True)
class BernoulliDist:
    logit: Expr  # success probability is expit(logit)


Dist = Union[NormalDist, BernoulliDist]


@dataclass(frozen=True)
class NodeDef:
    name: str
    times: tuple[int, ...]
    dist: Dist


@dataclass(frozen=True)
class DgpSpec:
    """Parsed structural-equation model plus its implied node ordering."""

    defs: tuple[NodeDef, ...]
    intervention_var: str
    outcome_var: str

    def __post_init__(self):
        object.__setattr__(self, "_expanded", _expand(self))

    @property
    def nodes(self) -> tuple[NodeRef, ...]:
        return self._expanded[0]

    def dist_of(self, node: NodeRef) -> Dist:
        return self._expanded[1][node]

    @property
    def ordering(self) -> NodeOrdering:
        return self._expanded[2]


@dataclass(frozen=True)
class InterventionedSpec:
    """A DgpSpec whose governed intervention nodes follow a regime."""

    base: DgpSpec
    regime: Regime


def _expand(spec: DgpSpec):
    seen: dict[NodeRef, Dist] = {}
    order: list[tuple[int, int, NodeRef]] = []
    for decl_index, nd in enumerate(spec.defs):
        for t in nd.times:
            ref = NodeRef(nd.name, t)
            if ref in seen:
                raise PanelError(f"node {ref} defined twice")
            seen[ref] = nd.dist
            order.append((t, decl_index, ref))
    order.sort()
    nodes = tuple(ref for _, _, ref in order)
    if not nodes:
        raise PanelError("empty DGP")
    names = {nd.name for nd in spec.defs}
    if spec.intervention_var not in names:
        raise PanelError(f"intervention variable {spec.intervention_var!r} is not defined")
    if spec.outcome_var not in names:
        raise PanelError(f"outcome variable {spec.outcome_var!r} is not defined")
    if nodes[-1].name != spec.outcome_var:
        raise PanelError(
            f"terminal node {nodes[-1]} does not belong to outcome variable {spec.outcome_var!r}"
        )
    roles = []
    for i, ref in enumerate(nodes):
        if ref.name == spec.intervention_var:
            if not isinstance(seen[ref], BernoulliDist):
                raise PanelError(f"intervention node {ref} must be Bernoulli")
            roles.append("intervention")
        elif i == len(nodes) - 1:
            roles.append("outcome")
        else:
            roles.append("covariate")
    ordering = NodeOrdering(nodes, tuple(roles))
    # no forward references: every expression must resolve to an earlier node
    pos = {ref: i for i, ref in enumerate(nodes)}
    for i, ref in enumerate(nodes):
        dist = seen[ref]
        expr = dist.mean if isinstance(dist, NormalDist) else dist.logit
        for r in expr_refs(expr):
            target = r.resolve(ref.t)
            if target not in pos:
                raise PanelError(f"definition of {ref} references undefined node {target}")
            if pos[target] >= i:
                raise PanelError(f"definition of {ref} references {target}, which does not precede it")
    return nodes, seen, ordering


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""(?P<ws>[ \t]+)
      | (?P<comment>\#[^\n]*)
      | (?P<newline>\n)
      | (?P<number>\d+\.\d+(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)
      | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
      | (?P<dots>\.\.)
      | (?P<op>[~()\[\],+\-*])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Tok:
    kind: str
    value: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    toks, line, col, i = [], 1, 1, 0
    while i < len(text):
        m = _TOKEN_RE.match(text, i)
        if not m:
            raise DgpParseError(f"unexpected character {text[i]!r}", line, col)
        kind = m.lastgroup
        val = m.group()
        if kind == "newline":
            toks.append(_Tok("newline", val, line, col))
            line += 1
            col = 1
        else:
            if kind not in ("ws", "comment"):
                toks.append(_Tok(kind, val, line, col))
            col += len(val)
        i = m.end()
    toks.append(_Tok("eof", "", line, col))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def next(self) -> _Tok:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def fail(self, message: str, tok: Union[_Tok, None] = None):
        tok = tok or self.peek()
        raise DgpParseError(message, tok.line, tok.col)

    def expect(self, kind: str, value: Union[str, None] = None) -> _Tok:
        tok = self.next()
        if tok.kind != kind or (value is not None and tok.value != value):
            want = value if value is not None else kind
            self.fail(f"expected {want!r}, found {tok.value!r}", tok)
        return tok

    def parse(self) -> DgpSpec:
        defs: list[NodeDef] = []
        intervention = outcome = None
        while True:
            tok = self.peek()
            if tok.kind == "eof":
                break
            if tok.kind == "newline":
                self.next()
                continue
            if tok.kind == "name" and tok.value == "intervention":
                self.next()
                intervention = self.expect("name").value
            elif tok.kind == "name" and tok.value == "outcome":
                self.next()
                outcome = self.expect("name").value
            else:
                defs.append(self.node_def())
            nxt = self.peek()
            if nxt.kind not in ("newline", "eof"):
                self.fail(f"expected end of line, found {nxt.value!r}")
        if intervention is None:
            self.fail("missing 'intervention <name>' directive", self.toks[-1])
        if outcome is None:
            last = defs[-1].name if defs else None
            outcome = last
        try:
            return DgpSpec(tuple(defs), intervention, outcome)
        except PanelError as exc:
            raise DgpParseError(str(exc), self.toks[-1].line, 1) from None

    def node_def(self) -> NodeDef:
        name_tok = self.expect("name")
        name = name_tok.value
        if name in _RESERVED:
            self.fail(f"{name!r} is reserved and cannot name a node", name_tok)
        self.expect("op", "[")
        idx = self.next()
        templated = False
        if idx.kind == "name" and idx.value == "t":
            templated = True
            decl_time = None
        elif idx.kind == "number" and "." not in idx.value and "e" not in idx.value.lower():
            decl_time = int(idx.value)
        else:
            self.fail("node time must be an integer or 't'", idx)
        self.expect("op", "]")
        self.expect("op", "~")
        dist = self.dist()
        times: tuple[int, ...]
        if self.peek().kind == "name" and self.peek().value == "for":
            if not templated:
                self.fail("'for' clause requires a templated time 'NAME[t]'")
            self.next()
            self.expect("name", "t")
            self.expect("name", "in")
            lo = int(self.expect("number").value)
            self.expect("dots")
            hi = int(self.expect("number").value)
            if hi < lo:
                self.fail(f"empty time range {lo}..{hi}")
            times = tuple(range(lo, hi + 1))
        elif templated:
            self.fail("templated definition needs a 'for t in a..b' clause")
        else:
            times = (decl_time,)
        return NodeDef(name, times, dist)

    def dist(self) -> Dist:
        tok = self.expect("name")
        if tok.value == "N":
            self.expect("op", "(")
            mean = self.expr()
            self.expect("op", ",")
            sign = 1.0
            if self.peek().kind == "op" and self.peek().value == "-":
                self.next()
                sign = -1.0
            var_tok = self.expect("number")
            var = sign * float(var_tok.value)
            if var < 0:
                self.fail(f"negative variance {var}", var_tok)
            self.expect("op", ")")
            return NormalDist(mean, var)
        if tok.value == "B":
            self.expect("op", "(")
            inner = self.expect("name")
            if inner.value != "expit":
                self.fail("Bernoulli mean must be wrapped in expit(...)", inner)
            self.expect("op", "(")
            logit = self.expr()
            self.expect("op", ")")
            self.expect("op", ")")
            return BernoulliDist(logit)
        self.fail(f"unknown distribution {tok.value!r} (expected N or B)", tok)

    def expr(self) -> Expr:
        node = self.term()
        while self.peek().kind == "op" and self.peek().value in "+-":
            op = self.next().value
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.factor()
        while self.peek().kind == "op" and self.peek().value == "*":
            self.next()
            node = BinOp("*", node, self.factor())
        return node

    def factor(self) -> Expr:
        tok = self.peek()
        if tok.kind == "op" and tok.value == "-":
            self.next()
            inner = self.factor()
            if isinstance(inner, Const):
                return Const(-inner.value)
            return BinOp("-", Const(0.0), inner)
        if tok.kind == "op" and tok.value == "(":
            self.next()
            node = self.expr()
            self.expect("op", ")")
            return node
        if tok.kind == "number":
            self.next()
            return Const(float(tok.value))
        if tok.kind == "name":
            if tok.value == "expit":
                self.next()
                self.expect("op", "(")
                node = self.expr()
                self.expect("op", ")")
                return Expit(node)
            return self.ref()
        self.fail(f"expected a number, node reference, or expit(...), found {tok.value!r}")

    def ref(self) -> Ref:
        name_tok = self.expect("name")
        if name_tok.value in _RESERVED:
            self.fail(f"{name_tok.value!r} is reserved", name_tok)
        self.expect("op", "[")
        tok = self.next()
        if tok.kind == "name" and tok.value == "t":
            if self.peek().kind == "op" and self.peek().value in "+-":
                sign_tok = self.next()
                off_tok = self.expect("number")
                offset = int(off_tok.value)
                if sign_tok.value == "+" and offset > 0:
                    self.fail("forward reference: node references must not look ahead in time", sign_tok)
                ref = Ref(name_tok.value, lag=offset)
            else:
                ref = Ref(name_tok.value, lag=0)
        elif tok.kind == "number":
            ref = Ref(name_tok.value, time=int(tok.value))
        else:
            self.fail("reference time must be an integer, 't', or 't-k'", tok)
        self.expect("op", "]")
        return ref


def parse_dgp(text: str) -> DgpSpec:
    """Parse DSL source into a spec (round-trips through :func:`format_dgp`)."""
    return _Parser(text).parse()


def format_dgp(spec: DgpSpec) -> str:
    lines = []
    for nd in spec.defs:
        if isinstance(nd.dist, NormalDist):
            rhs = f"N({format_expr(nd.dist.mean)}, {_fmt_num(nd.dist.var)})"
        else:
            rhs = f"B(expit({format_expr(nd.dist.logit)}))"
        if len(nd.times) == 1:
            lines.append(f"{nd.name}[{nd.times[0]}] ~ {rhs}")
        else:
            lines.append(f"{nd.name}[t] ~ {rhs} for t in {nd.times[0]}..{nd.times[-1]}")
    lines.append(f"intervention {spec.intervention_var}")
    lines.append(f"outcome {spec.outcome_var}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Intervention and simulation
# ---------------------------------------------------------------------------


def intervene_spec(spec: Union[DgpSpec, InterventionedSpec], regime: Regime) -> InterventionedSpec:
    """Replace governed intervention nodes with the regime's deterministic output."""
    if isinstance(spec, InterventionedSpec):
        if spec.regime == regime:
            return spec
        spec = spec.base
    nodes = spec.ordering.intervention_nodes()
    if not nodes:
        raise PanelError("spec has no intervention nodes")
    if regime.times is not None:
        available = {nd.t for nd in nodes}
        missing = sorted(set(regime.times) - available)
        if missing:
            raise PanelError(f"unknown intervention node times {missing}")
    if isinstance(regime.rule, MedianWindowRule):
        if regime.rule.source not in {nd.name for nd in spec.nodes}:
            raise PanelError(
                f"dynamic rule source {regime.rule.source!r} is not defined in the spec"
            )
    return InterventionedSpec(spec, regime)


def _node_uniforms(seed: int, node_index: int, n: int, start: int = 0) -> np.ndarray:
    """Counter-based uniforms for one node: unit u maps to stream position u.

    Philox.advance moves the 128-bit counter in 4-word blocks while one
    double consumes one 64-bit word, so a block offset plus a word discard
    lands the stream exactly at ``start``.
    """
    bitgen = np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=(node_index,)))
    if start:
        blocks, rem = divmod(start, 4)
        if blocks:
            bitgen.advance(blocks)
        if rem:
            bitgen.random_raw(rem)
    u = np.random.Generator(bitgen).random(n)
    # keep ndtri finite at the (measure-zero) endpoints
    return np.clip(u, 1e-300, 1.0 - 1e-16)


def _regime_values(
    regime: Regime, node: NodeRef, env: Mapping[NodeRef, np.ndarray], n: int
) -> np.ndarray:
    rule = regime.rule
    if isinstance(rule, StaticRule):
        return np.full(n, float(rule.value))
    window = np.empty((n, rule.window))
    for k in range(1, rule.window + 1):
        src = NodeRef(rule.source, node.t - k)
        if src not in env:
            raise PanelError(
                f"dynamic rule {regime.rid!r} needs {src} to evaluate at time {node.t}; "
                "simulate a longer pre-period in the spec"
            )
        window[:, k - 1] = env[src]
    med = np.median(window, axis=1)
    return ((med <= rule.lo) | (med >= rule.hi)).astype(float)


def simulate_panel(
    spec: Union[DgpSpec, InterventionedSpec],
    n: int,
    seed: int,
    unit_start: int = 0,
) -> PanelDataset:
    """Simulate ``n`` units node-by-node in topological order.

    ``unit_start`` offsets the counter-based streams so that simulating units
    in blocks reproduces the single-call output exactly.
    """
    if n < 1:
        raise PanelError("need n >= 1 units")
    regime = None
    base = spec
    if isinstance(spec, InterventionedSpec):
        regime = spec.regime
        base = spec.base
    env: dict[NodeRef, np.ndarray] = {}
    values = np.empty((n, len(base.nodes)))
    for j, node in enumerate(base.nodes):
        role = base.ordering.roles[j]
        if regime is not None and role == "intervention" and regime.governs(node.t):
            col = _regime_values(regime, node, env, n)
        else:
            dist = base.dist_of(node)
            u = _node_uniforms(seed, j, n, start=unit_start)
            if isinstance(dist, NormalDist):
                mean = eval_expr(dist.mean, node.t, env)
                col = np.asarray(mean + np.sqrt(dist.var) * _ndtri(u), dtype=float)
            else:
                p = _expit(eval_expr(dist.logit, node.t, env))
                col = (u < p).astype(float)
        env[node] = col
        values[:, j] = col
    unit_ids = tuple(range(unit_start, unit_start + n))
    return PanelDataset(unit_ids, base.ordering, values, {})


@dataclass(frozen=True)
class TruthResult:
    psi: float
    mc_se: float
    mean_j: float
    mean_k: float
    sd_j: float
    sd_k: float
    reps: int
    seed: int


def mc_truth(
    spec: DgpSpec,
    regime_j: Regime,
    regime_k: Regime,
    outcome: NodeRef,
    reps: int,
    seed: int,
) -> TruthResult:
    """Monte Carlo counterfactual contrast E[Y^j] - E[Y^k].

    Both interventioned specs share the same noise streams (common random
    numbers), so mc_truth(j, k) == -mc_truth(k, j) exactly.  The reported
    standard error is the unpaired pooled one, sqrt((var_j + var_k) / reps).
    """
    if reps < 1:
        raise PanelError("need reps >= 1")
    y_j = simulate_panel(intervene_spec(spec, regime_j), reps, seed).column(outcome)
    y_k = simulate_panel(intervene_spec(spec, regime_k), reps, seed).column(outcome)
    mean_j, mean_k = float(np.mean(y_j)), float(np.mean(y_k))
    var_j = float(np.var(y_j, ddof=1)) if reps > 1 else 0.0
    var_k = float(np.var(y_k, ddof=1)) if reps > 1 else 0.0
    return TruthResult(
        psi=mean_j - mean_k,
        mc_se=float(np.sqrt((var_j + var_k) / reps)),
        mean_j=mean_j,
        mean_k=mean_k,
        sd_j=float(np.sqrt(var_j)),
        sd_k=float(np.sqrt(var_k)),
        reps=reps,
        seed=seed,
    )
