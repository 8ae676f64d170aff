"""One-dimensional B-spline and tensor-product NURBS basis evaluation.

Bases are evaluated with the Cox--de Boor recursion; derivatives follow the
standard knot-difference tables. All evaluators exist in two flavours: a
scalar API operating on a single parameter value and vectorised internals
(`eval_basis_many`) used by quadrature caches and field samplers. Terms with
a zero denominator in the recursion are defined as 0.

The parametric domain of a clamped knot vector is the closed interval
[xi_1, xi_m]; the right endpoint is evaluated through the last knot span
(standard clamped convention).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InvalidArgumentError


@dataclass(frozen=True)
class KnotVector:
    """Open (clamped) knot vector with degree p.

    values : non-decreasing array of m knots
    degree : polynomial degree p >= 0

    The basis count is n = m - p - 1. The first and last p+1 knots must
    coincide (clamped); m >= 2(p+1).
    """

    values: np.ndarray
    degree: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        p = self.degree
        if p < 0:
            raise InvalidArgumentError("degree must be non-negative")
        if values.ndim != 1 or values.size < 2 * (p + 1):
            raise InvalidArgumentError(
                f"knot vector needs at least {2 * (p + 1)} entries, got {values.size}"
            )
        if np.any(np.diff(values) < 0):
            raise InvalidArgumentError("knot values must be non-decreasing")
        if not (np.all(values[: p + 1] == values[0]) and np.all(values[-(p + 1):] == values[-1])):
            raise InvalidArgumentError("knot vector must be open (clamped at both ends)")
        if values[0] == values[-1]:
            raise InvalidArgumentError("knot vector spans an empty interval")

    @property
    def num_basis(self) -> int:
        return self.values.size - self.degree - 1

    @property
    def start(self) -> float:
        return float(self.values[0])

    @property
    def end(self) -> float:
        return float(self.values[-1])

    def breakpoints(self) -> np.ndarray:
        """Distinct knot values (span boundaries)."""
        return np.unique(self.values)

    def span_count(self) -> int:
        return self.breakpoints().size - 1

    def greville_points(self) -> np.ndarray:
        """Greville abscissae; B-splines reproduce linears through them."""
        p = self.degree
        if p == 0:
            return 0.5 * (self.values[:-1] + self.values[1:])
        n = self.num_basis
        return np.array([self.values[i + 1 : i + p + 1].mean() for i in range(n)])


def find_spans(kv: KnotVector, t: np.ndarray) -> np.ndarray:
    """Knot-span indices i with xi_i <= t < xi_{i+1} (t = xi_m uses the last span)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < kv.start) or np.any(t > kv.end):
        bad = t[(t < kv.start) | (t > kv.end)]
        raise DomainError(
            f"parameter {bad.flat[0]} outside [{kv.start}, {kv.end}]"
        )
    p = kv.degree
    n = kv.num_basis
    spans = np.searchsorted(kv.values, t, side="right") - 1
    return np.clip(spans, p, n - 1)


def eval_basis_many(kv: KnotVector, t: np.ndarray, order: int = 0):
    """Nonzero basis functions and derivatives at an array of parameters.

    Returns (spans, ders) with spans of shape (P,) and ders of shape
    (P, order+1, p+1); ders[:, k, j] is the k-th derivative of basis function
    number spans - p + j. Derivative orders beyond p are zero by convention.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    spans = find_spans(kv, t)
    p = kv.degree
    P = t.size
    knots = kv.values
    eff = min(order, p)

    # Knot-difference table ndu: upper triangle holds basis values per degree,
    # lower triangle the knot differences (Piegl & Tiller A2.3, vectorised).
    ndu = np.zeros((P, p + 1, p + 1))
    ndu[:, 0, 0] = 1.0
    left = np.zeros((P, p + 1))
    right = np.zeros((P, p + 1))
    for j in range(1, p + 1):
        left[:, j] = t - knots[spans + 1 - j]
        right[:, j] = knots[spans + j] - t
        saved = np.zeros(P)
        for r in range(j):
            ndu[:, j, r] = right[:, r + 1] + left[:, j - r]
            denom = ndu[:, j, r]
            temp = np.divide(ndu[:, r, j - 1], denom, out=np.zeros(P), where=denom != 0)
            ndu[:, r, j] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        ndu[:, j, j] = saved

    ders = np.zeros((P, order + 1, p + 1))
    ders[:, 0, :] = ndu[:, :, p]
    if eff == 0:
        return spans, ders

    a = np.zeros((P, 2, p + 1))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[:] = 0.0
        a[:, 0, 0] = 1.0
        for k in range(1, eff + 1):
            d = np.zeros(P)
            rk = r - k
            pk = p - k
            if r >= k:
                denom = ndu[:, pk + 1, rk]
                a[:, s2, 0] = np.divide(a[:, s1, 0], denom, out=np.zeros(P), where=denom != 0)
                d = a[:, s2, 0] * ndu[:, rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                denom = ndu[:, pk + 1, rk + j]
                a[:, s2, j] = np.divide(
                    a[:, s1, j] - a[:, s1, j - 1], denom, out=np.zeros(P), where=denom != 0
                )
                d += a[:, s2, j] * ndu[:, rk + j, pk]
            if r <= pk:
                denom = ndu[:, pk + 1, r]
                a[:, s2, k] = np.divide(-a[:, s1, k - 1], denom, out=np.zeros(P), where=denom != 0)
                d += a[:, s2, k] * ndu[:, r, pk]
            ders[:, k, r] = d
            s1, s2 = s2, s1

    fact = float(p)
    for k in range(1, eff + 1):
        ders[:, k, :] *= fact
        fact *= p - k
    return spans, ders


def bspline_eval_span(kv: KnotVector, t: float):
    """Span index and the p+1 nonzero basis values at t.

    The values are B_{(span-p, p)}(t) ... B_{(span, p)}(t); they are
    non-negative and sum to 1.
    """
    spans, ders = eval_basis_many(kv, np.array([float(t)]), order=0)
    return int(spans[0]), ders[0, 0, :].copy()


def bspline_derivatives(kv: KnotVector, t: float, order: int):
    """Span index and derivatives up to `order` of the nonzero basis functions.

    Returns (span, ders) with ders of shape (order+1, p+1); row k holds the
    k-th derivatives. Rows with k > p are zero (degenerate, not an error).
    """
    if order < 0:
        raise InvalidArgumentError("derivative order must be non-negative")
    spans, ders = eval_basis_many(kv, np.array([float(t)]), order=order)
    return int(spans[0]), ders[0].copy()


@dataclass(frozen=True)
class GradingSpec:
    """Symmetric knot grading toward the domain centre.

    Interior knots of a uniform vector at abscissae s are remapped through
    u = 1/2 + sign(2s-1) |2s-1|^gamma / 2. gamma = 1 keeps a uniform vector;
    gamma > 1 densifies knots around s = 1/2 (the dislocation line).
    """

    gamma: float = 2.0

    def __post_init__(self):
        if self.gamma < 1.0:
            raise InvalidArgumentError("grading exponent gamma must be >= 1")

    def map(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        u = 2.0 * s - 1.0
        return 0.5 + 0.5 * np.sign(u) * np.abs(u) ** self.gamma


def make_graded_knot_vector(n: int, p: int, grading: GradingSpec | float = 1.0) -> KnotVector:
    """Open knot vector on [0, 1] with n basis functions of degree p.

    Interior knots are the graded images of the uniform abscissae
    i/(n-p), i = 1 .. n-p-1.
    """
    if isinstance(grading, (int, float)):
        grading = GradingSpec(float(grading))
    if n < p + 1:
        raise InvalidArgumentError(f"basis count n={n} must be at least p+1={p + 1}")
    interior = np.arange(1, n - p) / float(n - p)
    knots = np.concatenate([
        np.zeros(p + 1),
        grading.map(interior),
        np.ones(p + 1),
    ])
    return KnotVector(knots, p)


@dataclass(frozen=True)
class TensorBasis3D:
    """Tensor-product NURBS basis on the parametric unit cube.

    knots   : three KnotVectors (directions t^1, t^2, t^3)
    weights : positive weights w^alpha, flattened like the basis index

    The global index is alpha = (i1 * n2 + i2) * n3 + i3 (C order, i1
    slowest), i.e. the flattening of an (n1, n2, n3) array.
    """

    knots: tuple[KnotVector, KnotVector, KnotVector]
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        if len(self.knots) != 3:
            raise InvalidArgumentError("exactly three knot vectors required")
        object.__setattr__(self, "knots", tuple(self.knots))
        n = self.num_basis
        w = self.weights
        if w is None:
            w = np.ones(n)
        w = np.asarray(w, dtype=float).reshape(-1)
        if w.size != n:
            raise InvalidArgumentError(f"expected {n} weights, got {w.size}")
        if np.any(w <= 0):
            raise InvalidArgumentError("all weights must be strictly positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "_uniform_weights", bool(np.all(w == w[0])))

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(kv.num_basis for kv in self.knots)

    @property
    def num_basis(self) -> int:
        n1, n2, n3 = self.shape
        return n1 * n2 * n3

    @property
    def degrees(self) -> tuple[int, int, int]:
        return tuple(kv.degree for kv in self.knots)

    @property
    def uniform_weights(self) -> bool:
        return self._uniform_weights

    def flat_index(self, i1, i2, i3):
        n1, n2, n3 = self.shape
        return (np.asarray(i1) * n2 + np.asarray(i2)) * n3 + np.asarray(i3)

    def active_indices(self, spans) -> np.ndarray:
        """Global indices of the nonzero functions for per-direction spans."""
        p1, p2, p3 = self.degrees
        s1, s2, s3 = spans
        i1 = np.arange(s1 - p1, s1 + 1)
        i2 = np.arange(s2 - p2, s2 + 1)
        i3 = np.arange(s3 - p3, s3 + 1)
        return self.flat_index(i1[:, None, None], i2[None, :, None], i3[None, None, :]).ravel()


def nurbs_basis(basis: TensorBasis3D, t):
    """Active NURBS functions at t: (indices, values N^alpha, grads dN/dt^k).

    values sum to 1; each gradient component sums to 0. With uniform weights
    the rational form degenerates to the plain B-spline products.
    """
    t = np.asarray(t, dtype=float).reshape(3)
    vals_1d = []
    ders_1d = []
    spans = []
    for d in range(3):
        span, ders = eval_basis_many(basis.knots[d], np.array([t[d]]), order=1)
        spans.append(int(span[0]))
        vals_1d.append(ders[0, 0])
        ders_1d.append(ders[0, 1])

    B = np.einsum("a,b,c->abc", vals_1d[0], vals_1d[1], vals_1d[2]).ravel()
    dB = np.stack(
        [
            np.einsum("a,b,c->abc", ders_1d[0], vals_1d[1], vals_1d[2]).ravel(),
            np.einsum("a,b,c->abc", vals_1d[0], ders_1d[1], vals_1d[2]).ravel(),
            np.einsum("a,b,c->abc", vals_1d[0], vals_1d[1], ders_1d[2]).ravel(),
        ],
        axis=1,
    )
    indices = basis.active_indices(spans)
    if basis.uniform_weights:
        return indices, B, dB

    w = basis.weights[indices]
    wB = w * B
    W = wB.sum()
    dW = (w[:, None] * dB).sum(axis=0)
    N = wB / W
    dN = (w[:, None] * dB - N[:, None] * dW[None, :]) / W
    return indices, N, dN
