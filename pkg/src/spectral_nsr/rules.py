"""Symbolic rules as spectral templates.

A rule is a frequency response phi_r(lambda) with a non-negative weight:
transitive-style rules live at low frequencies (smooth propagation),
conflict-detection rules at high frequencies (local contrast). Grounding
turns the template into a linear operator on belief vectors, either as a
dense matrix in the eigenbasis or as a Chebyshev filter bound to a graph.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadParams,
    DimensionMismatch,
    EmptyRuleSet,
    FormatError,
    MixedScopes,
    NoBasisAvailable,
    NonFiniteResponse,
)
from .graph import LaplacianMatrix
from .spectral import (
    ChebyshevFilter,
    FrequencyResponse,
    GraphSignal,
    SpectralBasis,
    chebyshev_filter,
    estimate_lambda_max,
    fit_chebyshev,
    vertex_signal,
)

RULE_KINDS = ("low-pass", "high-pass", "band-pass", "heat-kernel", "custom")

DEFAULT_FIT_ORDER = 16


def builtin_template(kind: str, lambda_max: float, **params) -> FrequencyResponse:
    """Parametric response families used by the rule DSL.

    low-pass 1/(1 + beta*lambda); high-pass gain*lambda/lambda_max;
    band-pass exp(-(lambda-center)^2 / (2 sigma^2)); heat-kernel
    exp(-t*lambda). All are bounded on [0, lambda_max].
    """
    if not lambda_max > 0.0:
        raise BadParams(f"lambda_max must be positive, got {lambda_max}")

    def reject_unknown(allowed):
        extra = set(params) - set(allowed)
        if extra:
            raise BadParams(f"{kind} template got unknown params {sorted(extra)}")

    if kind == "low-pass":
        reject_unknown({"beta"})
        beta = float(params.get("beta", 1.0))
        if beta <= 0.0:
            raise BadParams(f"low-pass beta must be > 0, got {beta}")
        return FrequencyResponse(lambda lam: 1.0 / (1.0 + beta * lam), kind="low-pass")
    if kind == "high-pass":
        reject_unknown({"gain"})
        gain = float(params.get("gain", 1.0))
        if gain <= 0.0:
            raise BadParams(f"high-pass gain must be > 0, got {gain}")
        return FrequencyResponse(lambda lam: gain * np.asarray(lam) / lambda_max, kind="high-pass")
    if kind == "band-pass":
        reject_unknown({"center", "sigma"})
        center = float(params.get("center", lambda_max / 2.0))
        sigma = float(params.get("sigma", lambda_max / 10.0))
        if sigma <= 0.0:
            raise BadParams(f"band-pass sigma must be > 0, got {sigma}")
        return FrequencyResponse(
            lambda lam: np.exp(-((np.asarray(lam) - center) ** 2) / (2.0 * sigma**2)),
            kind="band-pass",
        )
    if kind in ("heat-kernel", "heat"):
        reject_unknown({"t"})
        t = float(params.get("t", 1.0))
        if t <= 0.0:
            raise BadParams(f"heat-kernel t must be > 0, got {t}")
        return FrequencyResponse(lambda lam: np.exp(-t * np.asarray(lam)), kind="heat-kernel")
    raise BadParams(f"unknown template kind {kind!r}")


@dataclass(frozen=True)
class SpectralRule:
    """A frequency template phi_r with weight w_r and optional node scope."""

    rule_id: str
    template: FrequencyResponse
    weight: float = 1.0
    scope: frozenset[int] | None = None
    kind: str = "custom"

    def __post_init__(self):
        if self.weight < 0.0:
            raise BadParams(f"rule {self.rule_id}: weight must be >= 0, got {self.weight}")
        if self.scope is not None:
            object.__setattr__(self, "scope", frozenset(int(i) for i in self.scope))


@dataclass(frozen=True)
class RuleOperator:
    """Grounded rule: a dense matrix or a Chebyshev filter bound to a graph.

    ``provenance`` records (rule_id, weight) for every rule folded in.
    """

    dense: np.ndarray | None
    chebyshev: ChebyshevFilter | None
    laplacian: LaplacianMatrix | None
    scope: frozenset[int] | None
    provenance: tuple[tuple[str, float], ...]
    response: FrequencyResponse | None = None

    @property
    def node_count(self) -> int:
        if self.dense is not None:
            return self.dense.shape[0]
        return self.laplacian.node_count


def _scoped_dense(phi: np.ndarray, scope: frozenset[int]) -> np.ndarray:
    # mask outside-scope rows/cols before and after filtering; out-of-scope
    # nodes pass through unchanged
    n = phi.shape[0]
    mask = np.zeros(n)
    mask[list(scope)] = 1.0
    out = phi * mask[:, None] * mask[None, :]
    out[np.arange(n), np.arange(n)] += 1.0 - mask
    return out


def rule_operator(
    rule: SpectralRule,
    basis: SpectralBasis | None = None,
    laplacian: LaplacianMatrix | None = None,
    lambda_max: float | None = None,
    order: int = DEFAULT_FIT_ORDER,
) -> RuleOperator:
    """Ground a rule as Phi_r = U phi_r(Lambda) U^T.

    With a basis the operator is exact and dense. Without one, a
    Laplacian is required and the template is fit by a degree-``order``
    Chebyshev filter (lambda_max estimated when not supplied).
    """
    if basis is not None:
        gains = rule.template(basis.eigenvalues)
        if not np.isfinite(gains).all():
            raise NonFiniteResponse(f"rule {rule.rule_id}: template non-finite on the spectrum")
        phi = (basis.eigenvectors * gains) @ basis.eigenvectors.T
        if rule.scope is not None:
            phi = _scoped_dense(phi, rule.scope)
        return RuleOperator(
            dense=phi,
            chebyshev=None,
            laplacian=None,
            scope=rule.scope,
            provenance=((rule.rule_id, rule.weight),),
            response=rule.template,
        )
    if laplacian is not None:
        if lambda_max is None:
            lambda_max = estimate_lambda_max(laplacian)
        lambda_max = max(float(lambda_max), 1e-12)
        filt = fit_chebyshev(rule.template, order, lambda_max)
        return RuleOperator(
            dense=None,
            chebyshev=filt,
            laplacian=laplacian,
            scope=rule.scope,
            provenance=((rule.rule_id, rule.weight),),
            response=rule.template,
        )
    raise NoBasisAvailable("rule_operator needs a basis (dense path) or a laplacian (Chebyshev path)")


def apply_rule(op: RuleOperator, b: GraphSignal) -> GraphSignal:
    """b' = Phi_r b; linear in b."""
    if len(b) != op.node_count:
        raise DimensionMismatch(f"signal length {len(b)} != {op.node_count}")
    if op.dense is not None:
        return vertex_signal(op.dense @ b.values)
    if op.scope is None:
        return chebyshev_filter(op.laplacian, op.chebyshev, b)
    mask = np.zeros(op.node_count)
    mask[list(op.scope)] = 1.0
    inner = chebyshev_filter(op.laplacian, op.chebyshev, vertex_signal(mask * b.values))
    return vertex_signal(mask * inner.values + (1.0 - mask) * b.values)


def compose_rules(
    rules: list[SpectralRule] | tuple[SpectralRule, ...],
    basis: SpectralBasis | None = None,
    laplacian: LaplacianMatrix | None = None,
    lambda_max: float | None = None,
    order: int = DEFAULT_FIT_ORDER,
) -> RuleOperator:
    """Phi_total = sum_r w_r Phi_r, collapsed into one operator.

    Because every Phi_r is diagonal in the shared basis, the sum is a
    single response phi_total(lambda) = sum_r w_r phi_r(lambda) and the
    composition costs one filtering pass. Scoped rules are rejected:
    composing across differing subgraphs has no single defensible
    semantics here.
    """
    rules = tuple(rules)
    if not rules:
        raise EmptyRuleSet("compose_rules needs at least one rule")
    scoped = [r.rule_id for r in rules if r.scope is not None]
    if scoped:
        raise MixedScopes(f"composition requires full-graph scopes; scoped rules: {scoped}")
    provenance = tuple((r.rule_id, float(r.weight)) for r in rules)

    def total(lam, _rules=rules):
        lam = np.asarray(lam, dtype=np.float64)
        acc = np.zeros_like(lam)
        for r in _rules:
            acc = acc + r.weight * r.template(lam)
        return acc

    response = FrequencyResponse(total, kind="custom")
    if basis is not None:
        gains = response(basis.eigenvalues)
        if not np.isfinite(gains).all():
            raise NonFiniteResponse("composed template non-finite on the spectrum")
        phi = (basis.eigenvectors * gains) @ basis.eigenvectors.T
        return RuleOperator(
            dense=phi, chebyshev=None, laplacian=None, scope=None, provenance=provenance, response=response
        )
    if laplacian is not None:
        if lambda_max is None:
            lambda_max = estimate_lambda_max(laplacian)
        lambda_max = max(float(lambda_max), 1e-12)
        # fit per rule and sum coefficients: least squares is linear in the
        # target, so this equals fitting the combined response
        theta = np.zeros(order + 1)
        for r in rules:
            theta = theta + r.weight * fit_chebyshev(r.template, order, lambda_max).coefficients
        return RuleOperator(
            dense=None,
            chebyshev=ChebyshevFilter(theta, lambda_max),
            laplacian=laplacian,
            scope=None,
            provenance=provenance,
            response=response,
        )
    raise NoBasisAvailable("compose_rules needs a basis (dense path) or a laplacian (Chebyshev path)")


def rule_coefficients(
    rules: tuple[SpectralRule, ...],
    lambda_max: float,
    order: int,
) -> np.ndarray:
    """Per-rule Chebyshev coefficient rows (R, order+1) at a given lambda_max.

    Weighted sums of these rows reproduce compose_rules on the Chebyshev
    path; the trainer uses them because the output is linear in w_r.
    """
    if not rules:
        raise EmptyRuleSet("rule_coefficients needs at least one rule")
    rows = [fit_chebyshev(r.template, order, lambda_max).coefficients for r in rules]
    return np.stack(rows, axis=0)


# ---------------------------------------------------------------------------
# rule file DSL, one rule per line:
#   rule <id> kind=<low-pass|high-pass|band-pass|heat|custom> w=<float> [params...] [scope=<id,...>]
# params: beta= (low-pass), t= (heat), center=/sigma= (band-pass),
# gain= (high-pass), file= (custom: CSV of lambda,value samples)
# ---------------------------------------------------------------------------

_FLOAT_PARAMS = ("beta", "t", "center", "sigma", "gain", "w")


def _custom_response(path: Path) -> FrequencyResponse:
    lams, vals = [], []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            a, b = line.split(",")
            lams.append(float(a))
            vals.append(float(b))
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: malformed sample {line!r}") from exc
    if len(lams) < 2:
        raise FormatError(f"{path}: custom response needs >= 2 samples")
    lam = np.asarray(lams)
    val = np.asarray(vals)
    idx = np.argsort(lam)
    lam, val = lam[idx], val[idx]
    return FrequencyResponse(lambda x: np.interp(np.asarray(x), lam, val), kind="custom")


def parse_rules(text: str, lambda_max: float, base_dir: str | Path = ".") -> list[SpectralRule]:
    """Parse the rule DSL into SpectralRule values."""
    rules = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] != "rule" or len(parts) < 3:
            raise FormatError(f"line {lineno}: expected 'rule <id> key=value ...'")
        rule_id = parts[1]
        kv = {}
        for tok in parts[2:]:
            if "=" not in tok:
                raise FormatError(f"line {lineno}: malformed token {tok!r}")
            key, val = tok.split("=", 1)
            kv[key] = val
        kind = kv.pop("kind", None)
        if kind is None:
            raise FormatError(f"line {lineno}: rule {rule_id} is missing kind=")
        try:
            weight = float(kv.pop("w", "1.0"))
        except ValueError as exc:
            raise FormatError(f"line {lineno}: malformed weight") from exc
        scope = None
        if "scope" in kv:
            try:
                scope = frozenset(int(s) for s in kv.pop("scope").split(","))
            except ValueError as exc:
                raise FormatError(f"line {lineno}: malformed scope") from exc
        if kind == "custom":
            if "file" not in kv:
                raise FormatError(f"line {lineno}: custom rule {rule_id} needs file=")
            template = _custom_response(Path(base_dir) / kv.pop("file"))
        else:
            params = {}
            for key in list(kv):
                if key in _FLOAT_PARAMS:
                    try:
                        params[key] = float(kv.pop(key))
                    except ValueError as exc:
                        raise FormatError(f"line {lineno}: malformed param {key}") from exc
            template = builtin_template(kind, lambda_max, **params)
        if kv:
            raise FormatError(f"line {lineno}: unknown keys {sorted(kv)}")
        kind_tag = "heat-kernel" if kind == "heat" else kind
        rules.append(SpectralRule(rule_id, template, weight=weight, scope=scope, kind=kind_tag))
    return rules


def load_rules(path: str | Path, lambda_max: float) -> list[SpectralRule]:
    p = Path(path)
    return parse_rules(p.read_text(), lambda_max, base_dir=p.parent)
