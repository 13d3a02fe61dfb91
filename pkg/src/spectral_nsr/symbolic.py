"""Projection to predicates and forward-chaining inference.

Filtered belief signals are mapped to discrete predicates by hard or
logistic thresholding; true predicates become facts of a propositional
Horn-clause knowledge base, and a semi-naive forward chainer computes
the least fixed point together with replayable proof traces.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import (
    BadParams,
    DimensionMismatch,
    FormatError,
    UnmappedNode,
)
from .spectral import GraphSignal

HARD = "hard"
LOGISTIC = "logistic"


@dataclass(frozen=True)
class ThresholdConfig:
    """Threshold tau (global scalar or per-node vector) plus logistic steepness."""

    mode: str = HARD
    tau: float | np.ndarray = 0.5
    alpha: float = 1.0

    def __post_init__(self):
        if self.mode not in (HARD, LOGISTIC):
            raise BadParams(f"unknown threshold mode {self.mode!r}")
        if self.mode == LOGISTIC and not self.alpha > 0.0:
            raise BadParams(f"logistic mode needs alpha > 0, got {self.alpha}")
        tau = np.asarray(self.tau, dtype=np.float64)
        if tau.ndim > 1:
            raise BadParams("tau must be a scalar or a 1-D vector")
        object.__setattr__(self, "tau", tau)

    def tau_for(self, n: int) -> np.ndarray:
        tau = self.tau
        if tau.ndim == 0:
            return np.full(n, float(tau))
        if tau.shape[0] != n:
            raise DimensionMismatch(f"per-node tau length {tau.shape[0]} != {n}")
        return tau


@dataclass(frozen=True)
class PredicateSet:
    """Per-node truth assignment: booleans (hard) or probabilities (soft)."""

    values: np.ndarray
    soft: bool

    def __post_init__(self):
        if self.soft:
            v = np.asarray(self.values, dtype=np.float64)
            if v.size and (v.min() < 0.0 or v.max() > 1.0):
                raise BadParams("soft predicate values must lie in [0, 1]")
        else:
            v = np.asarray(self.values, dtype=bool)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.shape[0]

    def true_nodes(self) -> list[int]:
        """Nodes held true; soft sets cut at the logistic midpoint 0.5."""
        if self.soft:
            return [int(i) for i in np.flatnonzero(self.values > 0.5)]
        return [int(i) for i in np.flatnonzero(self.values)]


def hard_threshold(y: GraphSignal, cfg: ThresholdConfig) -> PredicateSet:
    """p_i = [y_i > tau]; ties fall on the false side (strict inequality)."""
    if cfg.mode != HARD:
        raise BadParams("hard_threshold requires hard mode")
    tau = cfg.tau_for(len(y))
    return PredicateSet(y.values > tau, soft=False)


def soft_threshold(y: GraphSignal, cfg: ThresholdConfig) -> PredicateSet:
    """p_i = sigmoid(alpha * (y_i - tau_i)), overflow-safe."""
    if cfg.mode != LOGISTIC:
        raise BadParams("soft_threshold requires logistic mode")
    tau = cfg.tau_for(len(y))
    return PredicateSet(expit(cfg.alpha * (y.values - tau)), soft=True)


@dataclass(frozen=True)
class Clause:
    """Propositional Horn clause: body atoms jointly imply the head."""

    clause_id: str
    head: str
    body: frozenset[str]

    def __post_init__(self):
        if not self.head:
            raise BadParams(f"clause {self.clause_id}: empty head")
        object.__setattr__(self, "body", frozenset(self.body))


@dataclass(frozen=True)
class KnowledgeBase:
    """Atoms, Horn clauses, base facts, and mutually exclusive atom pairs."""

    atoms: tuple[str, ...]
    clauses: tuple[Clause, ...] = ()
    facts: frozenset[str] = frozenset()
    exclusive: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(self.atoms))
        object.__setattr__(self, "clauses", tuple(self.clauses))
        object.__setattr__(self, "facts", frozenset(self.facts))
        object.__setattr__(self, "exclusive", tuple((a, b) for a, b in self.exclusive))
        declared = set(self.atoms)
        if len(declared) != len(self.atoms):
            raise BadParams("duplicate atom declarations")
        for c in self.clauses:
            missing = ({c.head} | c.body) - declared
            if missing:
                raise BadParams(f"clause {c.clause_id} references undeclared atoms {sorted(missing)}")
        bad_facts = self.facts - declared
        if bad_facts:
            raise BadParams(f"facts reference undeclared atoms {sorted(bad_facts)}")
        for a, b in self.exclusive:
            if a not in declared or b not in declared:
                raise BadParams(f"exclusive pair ({a}, {b}) references undeclared atoms")

    def with_facts(self, extra) -> "KnowledgeBase":
        return KnowledgeBase(self.atoms, self.clauses, self.facts | set(extra), self.exclusive)


@dataclass(frozen=True)
class ProofTrace:
    """Derivation record: ordered (clause_id, premises) steps ending at ``atom``.

    Base facts carry an empty step list.
    """

    atom: str
    steps: tuple[tuple[str, tuple[str, ...]], ...] = ()


def bind_predicates(p: PredicateSet, kb: KnowledgeBase, mapping: dict[int, str]) -> KnowledgeBase:
    """Insert thresholded-true nodes into the KB as facts.

    The mapping must cover every true node; soft predicate sets are cut
    at 0.5 first.
    """
    new_facts = set()
    declared = set(kb.atoms)
    for node in p.true_nodes():
        if node not in mapping:
            raise UnmappedNode(f"node {node} is true but has no atom mapping")
        atom = mapping[node]
        if atom not in declared:
            raise BadParams(f"node {node} maps to undeclared atom {atom!r}")
        new_facts.add(atom)
    return kb.with_facts(new_facts)


def forward_chain(kb: KnowledgeBase) -> tuple[frozenset[str], dict[str, ProofTrace]]:
    """Least fixed point of the clause set over the facts.

    Semi-naive: each clause keeps a count of unsatisfied premises and
    fires exactly once, when the count reaches zero, so total work is
    linear in the sum of clause body sizes. Returns the closure and one
    replayable trace per closure atom (facts get empty traces).
    """
    remaining = {idx: len(c.body) for idx, c in enumerate(kb.clauses)}
    by_premise: dict[str, list[int]] = {}
    for idx, c in enumerate(kb.clauses):
        for atom in c.body:
            by_premise.setdefault(atom, []).append(idx)

    closure = set(kb.facts)
    justification: dict[str, tuple[str, tuple[str, ...]]] = {}
    queue: deque[str] = deque(sorted(kb.facts))

    def fire(idx: int) -> None:
        head = kb.clauses[idx].head
        if head not in closure:
            closure.add(head)
            justification[head] = (kb.clauses[idx].clause_id, tuple(sorted(kb.clauses[idx].body)))
            queue.append(head)

    for idx, count in remaining.items():
        if count == 0:
            fire(idx)
    while queue:
        atom = queue.popleft()
        for idx in by_premise.get(atom, ()):
            remaining[idx] -= 1
            if remaining[idx] == 0:
                fire(idx)

    traces: dict[str, ProofTrace] = {}
    for atom in sorted(closure):
        traces[atom] = _build_trace(atom, kb.facts, justification)
    return frozenset(closure), traces


def _build_trace(atom, facts, justification) -> ProofTrace:
    if atom in facts:
        return ProofTrace(atom)
    steps: list[tuple[str, tuple[str, ...]]] = []
    seen = set(facts)
    stack: list[tuple[str, bool]] = [(atom, False)]
    while stack:
        current, expanded = stack.pop()
        if current in seen:
            continue
        cid, premises = justification[current]
        if expanded:
            seen.add(current)
            steps.append((cid, premises))
        else:
            stack.append((current, True))
            for p in premises:
                if p not in seen:
                    stack.append((p, False))
    return ProofTrace(atom, tuple(steps))


def replay_trace(kb: KnowledgeBase, trace: ProofTrace) -> bool:
    """Re-run a trace from the KB's base facts; True iff it derives its atom."""
    clauses_by_id = {c.clause_id: c for c in kb.clauses}
    available = set(kb.facts)
    for clause_id, premises in trace.steps:
        clause = clauses_by_id.get(clause_id)
        if clause is None:
            return False
        if frozenset(premises) != clause.body:
            return False
        if not set(premises) <= available:
            return False
        available.add(clause.head)
    return trace.atom in available


def detect_conflicts(kb: KnowledgeBase, closure: frozenset[str]) -> list[tuple[str, str]]:
    """Exclusive pairs with both members derived."""
    return [(a, b) for a, b in kb.exclusive if a in closure and b in closure]


# ---------------------------------------------------------------------------
# KB file format, one record per line:
#   atom <name>
#   fact <name>
#   clause <head> :- <a>, <b>, ...
#   exclusive <a> <b>
# Clause ids are assigned in declaration order: c0, c1, ...
# ---------------------------------------------------------------------------


def parse_kb(text: str) -> KnowledgeBase:
    atoms: list[str] = []
    clauses: list[Clause] = []
    facts: set[str] = set()
    exclusive: list[tuple[str, str]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(maxsplit=1)
        kind = parts[0]
        rest = parts[1] if len(parts) > 1 else ""
        if kind == "atom":
            if not rest or len(rest.split()) != 1:
                raise FormatError(f"line {lineno}: expected 'atom <name>'")
            atoms.append(rest)
        elif kind == "fact":
            if not rest or len(rest.split()) != 1:
                raise FormatError(f"line {lineno}: expected 'fact <name>'")
            facts.add(rest)
        elif kind == "clause":
            if ":-" not in rest:
                raise FormatError(f"line {lineno}: expected 'clause <head> :- <body>'")
            head, body_text = rest.split(":-", 1)
            head = head.strip()
            body = frozenset(tok.strip() for tok in body_text.split(",") if tok.strip())
            if not head:
                raise FormatError(f"line {lineno}: clause without a head")
            clauses.append(Clause(f"c{len(clauses)}", head, body))
        elif kind == "exclusive":
            toks = rest.split()
            if len(toks) != 2:
                raise FormatError(f"line {lineno}: expected 'exclusive <a> <b>'")
            exclusive.append((toks[0], toks[1]))
        else:
            raise FormatError(f"line {lineno}: unknown record {kind!r}")
    try:
        return KnowledgeBase(tuple(atoms), tuple(clauses), frozenset(facts), tuple(exclusive))
    except BadParams as exc:
        raise FormatError(str(exc)) from exc


def serialize_kb(kb: KnowledgeBase) -> str:
    lines = [f"atom {a}" for a in kb.atoms]
    for c in kb.clauses:
        body = ", ".join(sorted(c.body))
        lines.append(f"clause {c.head} :- {body}")
    lines += [f"fact {a}" for a in sorted(kb.facts)]
    lines += [f"exclusive {a} {b}" for a, b in kb.exclusive]
    return "\n".join(lines) + "\n"


def load_kb(path: str | Path) -> KnowledgeBase:
    return parse_kb(Path(path).read_text())


def save_kb(kb: KnowledgeBase, path: str | Path) -> None:
    Path(path).write_text(serialize_kb(kb))


def format_closure(
    closure: frozenset[str],
    traces: dict[str, ProofTrace] | None = None,
    kb: KnowledgeBase | None = None,
) -> str:
    """Human-readable closure listing, optionally with indented trace steps."""
    heads = {c.clause_id: c.head for c in kb.clauses} if kb is not None else {}
    lines = []
    for atom in sorted(closure):
        lines.append(atom)
        if traces is not None and atom in traces:
            for clause_id, premises in traces[atom].steps:
                conclusion = heads.get(clause_id, "?")
                lines.append(f"  {clause_id}: {', '.join(premises)} => {conclusion}")
    return "\n".join(lines) + ("\n" if lines else "")
