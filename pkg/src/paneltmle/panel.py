"""Panel data model: node orderings, datasets, treatment regimes, covariate strategies.

A panel is a rectangular unit x node store whose columns follow a declared
node ordering (time-ordered, one role per node).  Treatment regimes are
static constants or median-window rules evaluated against unit histories;
covariate strategies map (model kind, time) to deterministic predictor sets.
"""

from __future__ import annotations

import csv
import hashlib
import re
from dataclasses import dataclass, field
from typing import Iterable, Literal, Mapping, Sequence, Union

import numpy as np

Role = Literal["covariate", "intervention", "outcome"]

BINARY_TOL = 1e-12


class PanelError(ValueError):
    """Raised for malformed panel inputs."""


class InsufficientHistoryError(PanelError):
    """A dynamic rule lacks the history values it needs."""

    def __init__(self, unit, time: int, window: int):
        self.unit = unit
        self.time = time
        self.window = window
        super().__init__(
            f"insufficient history for unit {unit!r} at time {time}: "
            f"median rule needs the {window} preceding values"
        )


@dataclass(frozen=True, order=True)
class NodeRef:
    """A named variable at one time index."""

    name: str
    t: int

    @property
    def column(self) -> str:
        return f"{self.name}_{self.t}"

    def __str__(self) -> str:
        return self.column


def ordering_violations(
    nodes: Sequence[NodeRef],
    roles: Sequence[str],
) -> list[str]:
    """Check ordering invariants, returning human-readable violations."""
    problems: list[str] = []
    if len(nodes) != len(roles):
        return [f"ordering: {len(nodes)} nodes but {len(roles)} roles"]
    if not nodes:
        return ["ordering: empty"]
    for r in roles:
        if r not in ("covariate", "intervention", "outcome"):
            problems.append(f"ordering: unknown role {r!r}")
    if len(set(nodes)) != len(nodes):
        problems.append("ordering: duplicate node reference")
    times = [nd.t for nd in nodes]
    if any(b < a for a, b in zip(times, times[1:])):
        problems.append("ordering: time indices decrease along the ordering")
    out_positions = [i for i, r in enumerate(roles) if r == "outcome"]
    if len(out_positions) != 1:
        problems.append(f"ordering: expected exactly one outcome node, found {len(out_positions)}")
    elif out_positions[0] != len(nodes) - 1:
        problems.append("ordering: outcome node is not terminal")
    return problems


@dataclass(frozen=True)
class NodeOrdering:
    """Declared node ordering with one role (and optional block label) per node."""

    nodes: tuple[NodeRef, ...]
    roles: tuple[str, ...]
    blocks: tuple[Union[str, None], ...] = ()

    def __post_init__(self):
        if not self.blocks:
            object.__setattr__(self, "blocks", (None,) * len(self.nodes))
        problems = ordering_violations(self.nodes, self.roles)
        if len(self.blocks) != len(self.nodes):
            problems.append("ordering: block labels do not align with nodes")
        if problems:
            raise PanelError("; ".join(problems))
        object.__setattr__(self, "_pos", {nd: i for i, nd in enumerate(self.nodes)})

    def __len__(self) -> int:
        return len(self.nodes)

    def position(self, node: NodeRef) -> int:
        try:
            return self._pos[node]
        except KeyError:
            raise PanelError(f"node {node} not in ordering") from None

    def has(self, node: NodeRef) -> bool:
        return node in self._pos

    @property
    def outcome(self) -> NodeRef:
        return self.nodes[-1]

    @property
    def first_time(self) -> int:
        return self.nodes[0].t

    @property
    def last_time(self) -> int:
        return self.nodes[-1].t

    def intervention_nodes(self) -> tuple[NodeRef, ...]:
        return tuple(nd for nd, r in zip(self.nodes, self.roles) if r == "intervention")

    def nodes_of(self, name: str) -> tuple[NodeRef, ...]:
        return tuple(nd for nd in self.nodes if nd.name == name)

    def first_position_at_or_after(self, t: int) -> int:
        """Position of the first node with time >= t (len(self) if none)."""
        for i, nd in enumerate(self.nodes):
            if nd.t >= t:
                return i
        return len(self.nodes)


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Complete rectangular panel: one row per unit, one column per ordered node.

    ``pre_history`` optionally maps a variable name to an (n, P) array whose
    column k-1 holds the value lagged k periods before the first in-sample
    time (header convention ``VAR_pre_k``).
    """

    unit_ids: tuple
    ordering: NodeOrdering
    values: np.ndarray
    pre_history: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2 or vals.shape != (len(self.unit_ids), len(self.ordering)):
            raise PanelError(
                f"value matrix shape {vals.shape} does not match "
                f"{len(self.unit_ids)} units x {len(self.ordering)} nodes"
            )
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        pre = {}
        for name, arr in self.pre_history.items():
            arr = np.asarray(arr, dtype=float)
            if arr.ndim != 2 or arr.shape[0] != len(self.unit_ids):
                raise PanelError(f"pre-period history for {name!r} has shape {arr.shape}")
            arr = arr.copy()
            arr.setflags(write=False)
            pre[name] = arr
        object.__setattr__(self, "pre_history", pre)

    @property
    def n(self) -> int:
        return len(self.unit_ids)

    def column(self, node: NodeRef) -> np.ndarray:
        return self.values[:, self.ordering.position(node)]

    def columns(self, nodes: Sequence[NodeRef]) -> np.ndarray:
        idx = [self.ordering.position(nd) for nd in nodes]
        return self.values[:, idx]

    def with_values(self, values: np.ndarray) -> "PanelDataset":
        return PanelDataset(self.unit_ids, self.ordering, values, dict(self.pre_history))


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    violations: tuple[str, ...]


def validate_dataset(dataset: PanelDataset) -> ValidationReport:
    """Check completeness, binary intervention coding, and ordering consistency."""
    problems = list(ordering_violations(dataset.ordering.nodes, dataset.ordering.roles))
    if dataset.n < 2:
        problems.append(f"dataset has {dataset.n} units, need at least 2")
    bad = np.argwhere(~np.isfinite(dataset.values))
    for u, j in bad:
        problems.append(
            f"missing cell (unit {dataset.unit_ids[u]!r}, node {dataset.ordering.nodes[j]})"
        )
    for nd, role in zip(dataset.ordering.nodes, dataset.ordering.roles):
        if role != "intervention":
            continue
        col = dataset.column(nd)
        offenders = np.nonzero(
            np.isfinite(col)
            & (np.abs(col) > BINARY_TOL)
            & (np.abs(col - 1.0) > BINARY_TOL)
        )[0]
        for u in offenders:
            problems.append(
                f"non-binary intervention value {col[u]!r} at "
                f"(unit {dataset.unit_ids[u]!r}, node {nd})"
            )
    for name, arr in dataset.pre_history.items():
        if not np.all(np.isfinite(arr)):
            problems.append(f"missing cell in pre-period history of {name!r}")
    return ValidationReport(ok=not problems, violations=tuple(problems))


# ---------------------------------------------------------------------------
# Treatment regimes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StaticRule:
    """Assign a constant treatment, ignoring history."""

    value: int

    def __post_init__(self):
        if self.value not in (0, 1):
            raise PanelError(f"static rule value must be 0 or 1, got {self.value!r}")


@dataclass(frozen=True)
class MedianWindowRule:
    """Treat when the median of the past ``window`` source values leaves (lo, hi).

    Prescribes 1 iff median(source at t-1 .. t-window) <= lo or >= hi,
    both comparisons inclusive.  Even-length windows use the midpoint median.
    """

    window: int
    lo: float
    hi: float
    source: str

    def __post_init__(self):
        if self.window < 1:
            raise PanelError("median window must be >= 1")
        if not self.hi > self.lo:
            raise PanelError("median rule needs hi > lo")

    def prescribe(self, history: np.ndarray) -> int:
        history = np.asarray(history, dtype=float)
        if history.shape != (self.window,):
            raise PanelError(
                f"median rule expects exactly {self.window} history values, got {history.shape}"
            )
        med = float(np.median(history))
        return 1 if (med <= self.lo or med >= self.hi) else 0


Rule = Union[StaticRule, MedianWindowRule]


@dataclass(frozen=True)
class Regime:
    """A treatment-assignment rule applied over a set of intervention times.

    ``times`` restricts which intervention nodes the regime governs;
    ``None`` means every intervention node in the ordering.
    """

    rid: str
    rule: Rule
    times: Union[tuple[int, ...], None] = None

    @property
    def is_static(self) -> bool:
        return isinstance(self.rule, StaticRule)

    def governs(self, t: int) -> bool:
        return self.times is None or t in self.times

    def governed_nodes(self, ordering: NodeOrdering) -> tuple[NodeRef, ...]:
        return tuple(nd for nd in ordering.intervention_nodes() if self.governs(nd.t))


def static_regime(rid: str, value: int, times=None) -> Regime:
    return Regime(rid, StaticRule(value), None if times is None else tuple(times))


def median_window_regime(
    rid: str, source: str, window: int = 7, lo: float = 0.0, hi: float = 5.0, times=None
) -> Regime:
    return Regime(rid, MedianWindowRule(window, lo, hi, source), None if times is None else tuple(times))


def _history_window(dataset: PanelDataset, rule: MedianWindowRule, unit_index: int, time: int):
    """Collect source values at time-1 .. time-window from in-sample and pre columns."""
    first = dataset.ordering.first_time
    out = np.empty(rule.window)
    pre = dataset.pre_history.get(rule.source)
    for k in range(1, rule.window + 1):
        tau = time - k
        if tau >= first:
            node = NodeRef(rule.source, tau)
            if not dataset.ordering.has(node):
                raise InsufficientHistoryError(dataset.unit_ids[unit_index], time, rule.window)
            out[k - 1] = dataset.column(node)[unit_index]
        else:
            lag = first - tau  # pre_history column index lag-1
            if pre is None or lag > pre.shape[1]:
                raise InsufficientHistoryError(dataset.unit_ids[unit_index], time, rule.window)
            out[k - 1] = pre[unit_index, lag - 1]
    return out


def evaluate_regime(regime: Regime, dataset: PanelDataset, unit_index: int, time: int) -> int:
    """The regime's prescribed treatment for one unit-time."""
    if isinstance(regime.rule, StaticRule):
        return regime.rule.value
    history = _history_window(dataset, regime.rule, unit_index, time)
    return regime.rule.prescribe(history)


def prescriptions(regime: Regime, dataset: PanelDataset) -> np.ndarray:
    """(n, K) prescribed treatments over the regime's governed intervention nodes."""
    nodes = regime.governed_nodes(dataset.ordering)
    out = np.empty((dataset.n, len(nodes)))
    for j, nd in enumerate(nodes):
        for i in range(dataset.n):
            out[i, j] = evaluate_regime(regime, dataset, i, nd.t)
    return out


def adherence_indicators(dataset: PanelDataset, regime: Regime) -> np.ndarray:
    """Per-unit 0/1 adherence over governed intervention times.

    Entry (i, k) is 1 iff unit i's observed treatments equal the regime's
    prescriptions at every governed time up to and including the k-th;
    rows are therefore monotone non-increasing.
    """
    nodes = regime.governed_nodes(dataset.ordering)
    d = prescriptions(regime, dataset)
    obs = dataset.columns(nodes)
    match = np.abs(obs - d) <= BINARY_TOL
    return np.minimum.accumulate(match.astype(int), axis=1)


# ---------------------------------------------------------------------------
# Covariate strategies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PlainDag:
    """Declared baseline variables plus the adjustment variable's history."""

    baseline_vars: tuple[str, ...]
    adjustment_var: str


@dataclass(frozen=True)
class ScreenLearn:
    """Full measured history before the model's target node."""


@dataclass(frozen=True)
class EconDag:
    """Q-models read the [t-2, t-1] window; g-models read the current period
    plus past intervention variables."""


CovariateStrategy = Union[PlainDag, ScreenLearn, EconDag]


@dataclass(frozen=True)
class QModel:
    """Iterated-outcome regression labelled by its level time.

    ``cap_pos`` bounds admissible predictor positions (exclusive); when None
    it defaults to the first node at or after ``level_time``.
    """

    level_time: int
    cap_pos: Union[int, None] = None


@dataclass(frozen=True)
class GModel:
    """Treatment model for the intervention node at ``time``."""

    time: int


def _q_cap(ordering: NodeOrdering, model: QModel) -> int:
    if model.cap_pos is not None:
        return min(model.cap_pos, len(ordering))
    return ordering.first_position_at_or_after(model.level_time)


def select_covariates(
    strategy: CovariateStrategy,
    ordering: NodeOrdering,
    model: Union[QModel, GModel],
) -> tuple[NodeRef, ...]:
    """Deterministic predictor set for one Q- or g-model.

    Every returned node strictly precedes the model's target node; an empty
    selection raises ``PanelError``.
    """
    if isinstance(model, GModel):
        candidates = [nd for nd in ordering.intervention_nodes() if nd.t == model.time]
        if not candidates:
            raise PanelError(f"no intervention node at time {model.time}")
        cap = ordering.position(candidates[0])
    else:
        cap = _q_cap(ordering, model)

    nodes = ordering.nodes[:cap]
    roles = ordering.roles[:cap]

    if isinstance(strategy, ScreenLearn):
        chosen = list(nodes)
    elif isinstance(strategy, EconDag):
        if isinstance(model, GModel):
            chosen = [
                nd
                for nd, r in zip(nodes, roles)
                if nd.t == model.time or (r == "intervention" and nd.t < model.time)
            ]
        else:
            lo, hi = model.level_time - 2, model.level_time - 1
            chosen = [nd for nd in nodes if lo <= nd.t <= hi]
    elif isinstance(strategy, PlainDag):
        first = ordering.first_time
        keep = set()
        for nd, r in zip(nodes, roles):
            if nd.t == first and nd.name in strategy.baseline_vars:
                keep.add(nd)
            elif nd.name == strategy.adjustment_var:
                if isinstance(model, GModel) or nd.t <= model.level_time - 1:
                    keep.add(nd)
            elif isinstance(model, GModel) and r == "intervention":
                keep.add(nd)
        chosen = [nd for nd in nodes if nd in keep]
    else:
        raise PanelError(f"unknown covariate strategy {strategy!r}")

    if not chosen:
        raise PanelError(f"no admissible predictors for {model} under {type(strategy).__name__}")
    return tuple(chosen)


# ---------------------------------------------------------------------------
# Wide CSV schema
# ---------------------------------------------------------------------------

_PRE_RE = re.compile(r"^(?P<name>.+)_pre_(?P<k>\d+)$")
_NODE_RE = re.compile(r"^(?P<name>.+)_(?P<t>-?\d+)$")


def write_panel_csv(dataset: PanelDataset, path) -> None:
    """Write one row per unit: unit_id, then VAR_t columns, then VAR_pre_k columns."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["unit_id"] + [nd.column for nd in dataset.ordering.nodes]
        pre_cols = []
        for name in sorted(dataset.pre_history):
            arr = dataset.pre_history[name]
            pre_cols += [(name, k) for k in range(1, arr.shape[1] + 1)]
        header += [f"{name}_pre_{k}" for name, k in pre_cols]
        w.writerow(header)
        for i, uid in enumerate(dataset.unit_ids):
            row = [uid] + [repr(v) for v in dataset.values[i]]
            row += [repr(dataset.pre_history[name][i, k - 1]) for name, k in pre_cols]
            w.writerow(row)


def read_panel_csv(
    path,
    intervention_vars: Iterable[str],
    outcome_var: Union[str, None] = None,
    blocks: Union[Mapping[str, str], None] = None,
) -> PanelDataset:
    """Read the wide CSV schema; column order defines the node ordering.

    Raises ``PanelError`` naming the offending cell or column on malformed
    input (missing cells, unparseable headers, bad ordering).
    """
    intervention_vars = set(intervention_vars)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:1] != ["unit_id"]:
        raise PanelError("panel CSV must start with a 'unit_id' header column")
    header = rows[0][1:]
    nodes: list[NodeRef] = []
    node_cols: list[int] = []
    pre_cols: dict[str, dict[int, int]] = {}
    for j, col in enumerate(header):
        m = _PRE_RE.match(col)
        if m:
            pre_cols.setdefault(m.group("name"), {})[int(m.group("k"))] = j + 1
            continue
        m = _NODE_RE.match(col)
        if not m:
            raise PanelError(f"cannot parse panel column header {col!r}")
        nodes.append(NodeRef(m.group("name"), int(m.group("t"))))
        node_cols.append(j + 1)

    roles = []
    for i, nd in enumerate(nodes):
        if nd.name in intervention_vars:
            roles.append("intervention")
        elif i == len(nodes) - 1:
            if outcome_var is not None and nd.name != outcome_var:
                raise PanelError(
                    f"terminal column {nd} does not match declared outcome {outcome_var!r}"
                )
            roles.append("outcome")
        else:
            roles.append("covariate")
    block_labels = tuple((blocks or {}).get(nd.name) for nd in nodes)
    ordering = NodeOrdering(tuple(nodes), tuple(roles), block_labels)

    unit_ids = []
    values = np.full((len(rows) - 1, len(nodes)), np.nan)
    pre = {
        name: np.full((len(rows) - 1, max(ks)), np.nan) for name, ks in pre_cols.items()
    }
    for i, row in enumerate(rows[1:]):
        if len(row) != len(header) + 1:
            raise PanelError(f"row {i + 2} has {len(row)} fields, expected {len(header) + 1}")
        unit_ids.append(row[0])
        for jj, (nd, cidx) in enumerate(zip(nodes, node_cols)):
            cell = row[cidx].strip()
            if cell == "":
                raise PanelError(f"missing cell (unit {row[0]!r}, node {nd})")
            try:
                values[i, jj] = float(cell)
            except ValueError:
                raise PanelError(f"non-numeric cell {cell!r} (unit {row[0]!r}, node {nd})")
        for name, ks in pre_cols.items():
            for k, cidx in ks.items():
                cell = row[cidx].strip()
                if cell == "":
                    raise PanelError(f"missing cell (unit {row[0]!r}, column {name}_pre_{k})")
                pre[name][i, k - 1] = float(cell)

    dataset = PanelDataset(tuple(unit_ids), ordering, values, pre)
    report = validate_dataset(dataset)
    if not report.ok:
        raise PanelError("; ".join(report.violations[:8]))
    return dataset


def stable_unit_digest(seed: int, unit_id) -> int:
    """Position-independent 64-bit digest of (seed, unit id) for fold hashing."""
    h = hashlib.blake2b(f"{seed}:{unit_id!r}".encode(), digest_size=8)
    return int.from_bytes(h.digest(), "big")
