"""Spectral machinery: eigenbasis, graph Fourier transforms, and filters.

Two filtering routes are provided. The exact route diagonalizes the
Laplacian and applies an arbitrary frequency response in the eigenbasis;
it is limited to graphs small enough for a dense eigendecomposition. The
Chebyshev route evaluates a polynomial response with K sparse
matrix-vector products and never materializes the basis, so it scales
linearly in the edge count.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import json

import numpy as np
from numpy.polynomial import chebyshev as npcheb

from .errors import (
    BadParams,
    ConvergenceFailure,
    DimensionMismatch,
    DomainMismatch,
    FormatError,
    MixedLambdaMax,
    MixedOrders,
    NonFiniteResponse,
    OutOfRange,
    TooLarge,
)
from .graph import NORMALIZED, LaplacianMatrix

DENSE_LIMIT = 512

VERTEX = "vertex"
SPECTRAL = "spectral"


@dataclass(frozen=True)
class GraphSignal:
    """Real vector over nodes, tagged with the domain it lives in."""

    values: np.ndarray
    domain: str = VERTEX

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if not np.isfinite(v).all():
            raise BadParams("signal contains non-finite entries")
        if self.domain not in (VERTEX, SPECTRAL):
            raise BadParams(f"unknown signal domain {self.domain!r}")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.shape[0]


def vertex_signal(values) -> GraphSignal:
    return GraphSignal(values, VERTEX)


def spectral_signal(values) -> GraphSignal:
    return GraphSignal(values, SPECTRAL)


@dataclass(frozen=True)
class FrequencyResponse:
    """Real response g(lambda) over [0, lambda_max].

    ``fn`` should accept numpy arrays; scalar-only callables are handled
    by falling back to per-element evaluation.
    """

    fn: Callable
    kind: str = "custom"

    def __call__(self, lam) -> np.ndarray:
        lam = np.asarray(lam, dtype=np.float64)
        try:
            out = np.asarray(self.fn(lam), dtype=np.float64)
            if out.shape != lam.shape:
                raise TypeError
        except (TypeError, ValueError):
            out = np.asarray([float(self.fn(float(v))) for v in lam.reshape(-1)])
            out = out.reshape(lam.shape)
        return out


@dataclass(frozen=True)
class SpectralBasis:
    """Eigenpairs of a Laplacian: the graph Fourier basis.

    ``eigenvalues`` ascend; column i of ``eigenvectors`` pairs with
    eigenvalue i. Signs follow a fixed convention (first non-negligible
    component positive) so transforms reproduce across runs.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def node_count(self) -> int:
        return self.eigenvalues.shape[0]

    def validate(self, laplacian: LaplacianMatrix | None = None) -> None:
        lam, u = self.eigenvalues, self.eigenvectors
        if np.any(np.diff(lam) < 0):
            raise BadParams("eigenvalues are not ascending")
        if lam[0] < -1e-9:
            raise BadParams(f"smallest eigenvalue {lam[0]} below -1e-9")
        gram = u.T @ u - np.eye(len(lam))
        if np.abs(gram).max() > 1e-8:
            raise BadParams("eigenvectors are not orthonormal")
        if laplacian is not None:
            rec = (u * lam) @ u.T
            dense = laplacian.matrix.toarray()
            scale = max(np.abs(dense).max(), 1.0)
            if np.abs(rec - dense).max() > 1e-7 * scale:
                raise BadParams("eigenpairs do not reconstruct the Laplacian")


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip eigenvector signs so the first non-negligible entry is positive."""
    out = vectors.copy()
    for col in range(out.shape[1]):
        v = out[:, col]
        nz = np.flatnonzero(np.abs(v) > 1e-12 * max(np.abs(v).max(), 1e-300))
        if nz.size and v[nz[0]] < 0.0:
            out[:, col] = -v
    return out


def eigendecompose(lap: LaplacianMatrix, limit: int = DENSE_LIMIT) -> SpectralBasis:
    """Full dense eigendecomposition of a Laplacian.

    Refuses graphs larger than ``limit`` nodes (TooLarge); callers above
    the limit should stay on the Chebyshev path.
    """
    n = lap.node_count
    if n > limit:
        raise TooLarge(f"N={n} exceeds the dense eigendecomposition limit {limit}")
    try:
        vals, vecs = np.linalg.eigh(lap.matrix.toarray())
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(f"eigendecomposition failed: {exc}") from exc
    return SpectralBasis(vals, _fix_signs(vecs))


def gft(basis: SpectralBasis, x: GraphSignal) -> GraphSignal:
    """Project a vertex signal onto the eigenbasis: xhat = U^T x."""
    if x.domain != VERTEX:
        raise DomainMismatch("gft expects a vertex-domain signal")
    if len(x) != basis.node_count:
        raise DimensionMismatch(f"signal length {len(x)} != {basis.node_count}")
    return spectral_signal(basis.eigenvectors.T @ x.values)


def igft(basis: SpectralBasis, xhat: GraphSignal) -> GraphSignal:
    """Inverse transform: x = U xhat."""
    if xhat.domain != SPECTRAL:
        raise DomainMismatch("igft expects a spectral-domain signal")
    if len(xhat) != basis.node_count:
        raise DimensionMismatch(f"signal length {len(xhat)} != {basis.node_count}")
    return vertex_signal(basis.eigenvectors @ xhat.values)


def exact_filter(basis: SpectralBasis, response: FrequencyResponse, x: GraphSignal) -> GraphSignal:
    """y = U g(Lambda) U^T x."""
    if x.domain != VERTEX:
        raise DomainMismatch("exact_filter expects a vertex-domain signal")
    if len(x) != basis.node_count:
        raise DimensionMismatch(f"signal length {len(x)} != {basis.node_count}")
    gains = response(basis.eigenvalues)
    if not np.isfinite(gains).all():
        bad = basis.eigenvalues[~np.isfinite(gains)][0]
        raise NonFiniteResponse(f"response is non-finite at lambda={bad}")
    return vertex_signal(basis.eigenvectors @ (gains * (basis.eigenvectors.T @ x.values)))


def estimate_lambda_max(
    lap: LaplacianMatrix,
    tol: float = 1e-4,
    max_iter: int = 200,
    safety: float = 1.01,
    seed: int = 0,
) -> float:
    """Upper estimate of the largest eigenvalue by power iteration.

    The converged Rayleigh quotient approaches the top eigenvalue from
    below, so the result is padded by ``safety`` and then capped at the
    Gershgorin row-sum bound (and at 2 for normalized Laplacians), which
    always dominates the true spectrum.
    """
    m = lap.matrix
    n = m.shape[0]
    if n == 0 or m.nnz == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    est = np.inf
    for _ in range(max_iter):
        w = m @ v
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            v = rng.standard_normal(n)
            v /= np.linalg.norm(v)
            continue
        new = float(v @ w)
        v = w / norm_w
        if abs(new - est) <= tol * max(abs(new), 1.0):
            est = new
            break
        est = new
    else:
        raise ConvergenceFailure(f"power iteration did not stabilize in {max_iter} iterations")
    bound = float(np.abs(m).sum(axis=1).max())
    if lap.kind == NORMALIZED:
        bound = min(bound, 2.0)
    return float(min(est * safety, bound))


@dataclass(frozen=True)
class ChebyshevFilter:
    """Polynomial filter h(lambda) = sum_k theta_k T_k(lambda~).

    ``lambda_max`` fixes the rescaling lambda~ = 2 lambda / lambda_max - 1
    that maps the spectrum into [-1, 1].
    """

    coefficients: np.ndarray
    lambda_max: float

    def __post_init__(self):
        coeffs = np.asarray(self.coefficients, dtype=np.float64).reshape(-1)
        if coeffs.size == 0:
            raise BadParams("filter needs at least one coefficient")
        if not np.isfinite(coeffs).all():
            raise BadParams("filter coefficients must be finite")
        if not self.lambda_max > 0.0:
            raise BadParams(f"lambda_max must be positive, got {self.lambda_max}")
        object.__setattr__(self, "coefficients", coeffs)
        object.__setattr__(self, "lambda_max", float(self.lambda_max))

    @property
    def order(self) -> int:
        return self.coefficients.size - 1

    def response(self) -> FrequencyResponse:
        return FrequencyResponse(lambda lam: sample_response(self, lam), kind="custom")


def _shifted_apply(matrix, lambda_max: float, x: np.ndarray) -> np.ndarray:
    # L~ x = (2 / lambda_max) L x - x, one sparse product
    return (2.0 / lambda_max) * (matrix @ x) - x


def chebyshev_stack(lap: LaplacianMatrix, lambda_max: float, x: np.ndarray, order: int) -> np.ndarray:
    """Columns T_k(L~) x for k = 0..order, via the three-term recurrence.

    Costs exactly ``order`` sparse matrix-vector products. The stack is
    reused by the trainer: the filter output is linear in the
    coefficients, so d y / d theta_k is column k.
    """
    if order < 0:
        raise BadParams("order must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    cols = [x]
    if order >= 1:
        cols.append(_shifted_apply(lap.matrix, lambda_max, x))
    for _ in range(2, order + 1):
        cols.append(2.0 * _shifted_apply(lap.matrix, lambda_max, cols[-1]) - cols[-2])
    return np.stack(cols, axis=1)


def chebyshev_filter(lap: LaplacianMatrix, filt: ChebyshevFilter, x: GraphSignal) -> GraphSignal:
    """Apply a polynomial filter without eigendecomposition.

    Requires filt.lambda_max >= the true largest eigenvalue; otherwise
    the rescaled spectrum leaves [-1, 1] and the recurrence may diverge
    (caller contract, see estimate_lambda_max).
    """
    if x.domain != VERTEX:
        raise DomainMismatch("chebyshev_filter expects a vertex-domain signal")
    if len(x) != lap.node_count:
        raise DimensionMismatch(f"signal length {len(x)} != {lap.node_count}")
    theta = filt.coefficients
    prev = x.values
    y = theta[0] * prev
    if filt.order >= 1:
        cur = _shifted_apply(lap.matrix, filt.lambda_max, prev)
        y = y + theta[1] * cur
        for k in range(2, filt.order + 1):
            prev, cur = cur, 2.0 * _shifted_apply(lap.matrix, filt.lambda_max, cur) - prev
            y = y + theta[k] * cur
    return vertex_signal(y)


def fit_chebyshev(
    response: FrequencyResponse,
    order: int,
    lambda_max: float,
    num_nodes: int = 256,
) -> ChebyshevFilter:
    """Least-squares Chebyshev fit of a response over [0, lambda_max].

    Samples the target at Chebyshev nodes mapped into the interval and
    solves the discrete least-squares problem; any polynomial of degree
    <= order is recovered exactly (up to rounding).
    """
    if order < 0:
        raise BadParams("order must be non-negative")
    if not lambda_max > 0.0:
        raise BadParams(f"lambda_max must be positive, got {lambda_max}")
    m = max(num_nodes, order + 1)
    t = np.cos(np.pi * (np.arange(m) + 0.5) / m)
    lam = (t + 1.0) * (lambda_max / 2.0)
    targets = response(lam)
    if not np.isfinite(targets).all():
        bad = lam[~np.isfinite(targets)][0]
        raise NonFiniteResponse(f"response is non-finite at lambda={bad}")
    vander = npcheb.chebvander(t, order)
    theta, *_ = np.linalg.lstsq(vander, targets, rcond=None)
    return ChebyshevFilter(theta, lambda_max)


def sample_response(filt: ChebyshevFilter, grid) -> np.ndarray:
    """Evaluate h(lambda) on a grid inside [0, lambda_max]."""
    lam = np.asarray(grid, dtype=np.float64)
    if lam.size:
        lo, hi = float(lam.min()), float(lam.max())
        if lo < -1e-12 or hi > filt.lambda_max * (1.0 + 1e-12):
            raise OutOfRange(f"grid [{lo}, {hi}] leaves [0, {filt.lambda_max}]")
    t = np.clip(2.0 * lam / filt.lambda_max - 1.0, -1.0, 1.0)
    return np.asarray(npcheb.chebval(t, filt.coefficients), dtype=np.float64)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


@dataclass(frozen=True)
class BandGate:
    """Softmax gate over per-band filters.

    Band b carries a signature vector s_b; a query vector q scores each
    band and the softmax of the scores mixes the band filters into one.
    """

    filters: tuple[ChebyshevFilter, ...]
    signatures: np.ndarray
    query: np.ndarray

    def __post_init__(self):
        if len(self.filters) < 1:
            raise BadParams("band gate needs at least one band")
        sig = np.asarray(self.signatures, dtype=np.float64)
        q = np.asarray(self.query, dtype=np.float64).reshape(-1)
        if sig.ndim != 2 or sig.shape[0] != len(self.filters):
            raise DimensionMismatch(f"signatures shape {sig.shape} != ({len(self.filters)}, d_g)")
        if sig.shape[1] != q.shape[0]:
            raise DimensionMismatch(f"query width {q.shape[0]} != signature width {sig.shape[1]}")
        object.__setattr__(self, "signatures", sig)
        object.__setattr__(self, "query", q)

    @property
    def band_count(self) -> int:
        return len(self.filters)

    def gate_weights(self) -> np.ndarray:
        return softmax(self.signatures @ self.query)


def band_gate_combine(gate: BandGate) -> ChebyshevFilter:
    """Mix band filters into one: theta* = sum_b alpha_b theta_b.

    Valid because the response is linear in the coefficients; requires
    all bands to share the polynomial order and lambda_max.
    """
    orders = {f.order for f in gate.filters}
    if len(orders) != 1:
        raise MixedOrders(f"band filters mix orders {sorted(orders)}")
    lmaxes = {f.lambda_max for f in gate.filters}
    if len(lmaxes) != 1:
        raise MixedLambdaMax(f"band filters mix lambda_max values {sorted(lmaxes)}")
    alpha = gate.gate_weights()
    theta = np.zeros(gate.filters[0].order + 1)
    for a, f in zip(alpha, gate.filters):
        theta = theta + a * f.coefficients
    return ChebyshevFilter(theta, gate.filters[0].lambda_max)


def uniform_band_filters(band_count: int, order: int, lambda_max: float) -> tuple[ChebyshevFilter, ...]:
    """Initial band filters: degree-``order`` fits of the indicator of each
    of ``band_count`` uniform sub-intervals of [0, lambda_max]."""
    if band_count < 1:
        raise BadParams("band_count must be >= 1")
    edges = np.linspace(0.0, lambda_max, band_count + 1)
    filters = []
    for b in range(band_count):
        lo, hi = edges[b], edges[b + 1]
        closed_hi = hi if b == band_count - 1 else None

        def indicator(lam, lo=lo, hi=hi, closed_hi=closed_hi):
            lam = np.asarray(lam)
            inside = (lam >= lo) & (lam < hi)
            if closed_hi is not None:
                inside |= lam >= closed_hi
            return inside.astype(np.float64)

        filters.append(fit_chebyshev(FrequencyResponse(indicator, kind="band-pass"), order, lambda_max))
    return tuple(filters)


# ---------------------------------------------------------------------------
# file formats: filter JSON and signal CSV
# ---------------------------------------------------------------------------


def save_filter(filt: ChebyshevFilter, path: str | Path) -> None:
    payload = {"lambda_max": filt.lambda_max, "coefficients": [float(c) for c in filt.coefficients]}
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n")


def load_filter(path: str | Path) -> ChebyshevFilter:
    try:
        payload = json.loads(Path(path).read_text())
        return ChebyshevFilter(np.asarray(payload["coefficients"], dtype=np.float64), float(payload["lambda_max"]))
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: malformed filter JSON: {exc}") from exc


def save_signal(x: GraphSignal, path: str | Path) -> None:
    Path(path).write_text("\n".join(repr(float(v)) for v in x.values) + "\n")


def load_signal(path: str | Path, domain: str = VERTEX) -> GraphSignal:
    vals = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            vals.append(float(line))
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: malformed signal value {line!r}") from exc
    return GraphSignal(np.asarray(vals, dtype=np.float64), domain)
