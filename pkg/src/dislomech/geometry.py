"""Patch geometry: NURBS map, Jacobian, quadrature, and evaluation caches.

A `Patch` pairs a tensor-product basis with control points. The shipped
models use axis-aligned box patches whose geometry map is affine,
x(t) = (L1 (t^1 - 1/2), L2 (t^2 - 1/2), L3 (t^3 - 1/2)), realised exactly
through Greville control points. General control points remain supported;
the affine case only enables faster assembly paths.

Quadrature is a tensor product of per-knot-span Gauss--Legendre rules in a
fixed deterministic order: spans lexicographic in (e1, e2, e3), points
lexicographic within each span.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, SingularGeometryError, UnsupportedGeometryError
from .splines import KnotVector, TensorBasis3D, eval_basis_many, nurbs_basis


def gauss_rule(q: int):
    """Gauss--Legendre points and weights on [-1, 1], exact to degree 2q-1."""
    if not 1 <= q <= 10:
        raise InvalidArgumentError(f"gauss order q={q} outside 1..10")
    return np.polynomial.legendre.leggauss(q)


def span_gauss_1d(kv: KnotVector, q: int):
    """Mapped Gauss data per knot span: (points[s, q], weights[s, q])."""
    ref_x, ref_w = gauss_rule(q)
    brk = kv.breakpoints()
    lo = brk[:-1][:, None]
    hi = brk[1:][:, None]
    pts = 0.5 * (hi - lo) * (ref_x[None, :] + 1.0) + lo
    wts = 0.5 * (hi - lo) * np.broadcast_to(ref_w, pts.shape)
    return pts, wts


class Patch:
    """Reference-configuration geometry: basis plus control points a_alpha.

    domain_box is the (L1, L2, L3) extents when the patch was built as an
    affine box; None for general control points.
    """

    def __init__(self, basis: TensorBasis3D, control_points, domain_box=None):
        self.basis = basis
        cp = np.asarray(control_points, dtype=float)
        if cp.shape != (basis.num_basis, 3):
            raise InvalidArgumentError(
                f"control points must have shape ({basis.num_basis}, 3), got {cp.shape}"
            )
        self.control_points = cp
        self.domain_box = None if domain_box is None else tuple(float(L) for L in domain_box)

    @property
    def is_affine_box(self) -> bool:
        return self.domain_box is not None and self.basis.uniform_weights

    def affine_jacobian(self) -> np.ndarray:
        if self.domain_box is None:
            raise UnsupportedGeometryError("patch was not built as an affine box")
        return np.diag(self.domain_box)

    def param_from_physical(self, x) -> np.ndarray:
        """Inverse geometry map for affine boxes: t = x / L + 1/2."""
        if self.domain_box is None:
            raise UnsupportedGeometryError("inverse map implemented for box patches only")
        x = np.asarray(x, dtype=float)
        L = np.asarray(self.domain_box)
        return x / L + 0.5

    def physical_from_param(self, t) -> np.ndarray:
        if self.domain_box is None:
            raise UnsupportedGeometryError("direct affine map requires a box patch")
        t = np.asarray(t, dtype=float)
        L = np.asarray(self.domain_box)
        return L * (t - 0.5)


def box_patch(basis: TensorBasis3D, extents) -> Patch:
    """Axis-aligned box of extents L1 x L2 x L3 centred at the origin.

    Control points sit at scaled Greville abscissae, so the geometry map is
    exactly affine and the dislocation line passes through the origin.
    """
    extents = tuple(float(L) for L in extents)
    if any(L <= 0 for L in extents):
        raise InvalidArgumentError("box extents must be positive")
    if any(p < 1 for p in basis.degrees):
        raise InvalidArgumentError("box patches need degree >= 1 in every direction")
    grev = [kv.greville_points() for kv in basis.knots]
    g1, g2, g3 = np.meshgrid(grev[0], grev[1], grev[2], indexing="ij")
    cp = np.stack(
        [
            extents[0] * (g1 - 0.5),
            extents[1] * (g2 - 0.5),
            extents[2] * (g3 - 0.5),
        ],
        axis=-1,
    ).reshape(-1, 3)
    return Patch(basis, cp, domain_box=extents)


def geometry_map(patch: Patch, t) -> np.ndarray:
    """x(t) = sum_alpha N^alpha(t) a_alpha."""
    idx, N, _ = nurbs_basis(patch.basis, t)
    return N @ patch.control_points[idx]


def jacobian(patch: Patch, t):
    """(J, det J, J^{-1}) of the geometry map; J_ik = dx^i/dt^k."""
    idx, _, dN = nurbs_basis(patch.basis, t)
    J = patch.control_points[idx].T @ dN
    det = float(np.linalg.det(J))
    if det <= 0:
        raise SingularGeometryError(f"det J = {det} <= 0 at t = {tuple(np.asarray(t))}")
    return J, det, np.linalg.inv(J)


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor-product Gauss rule over the knot spans of a basis.

    q holds the per-direction point counts; points[d] and weights[d] are
    (span_count_d, q_d) arrays in parameter space. Per-span weights sum to
    the span length.
    """

    q: tuple[int, int, int]
    points: tuple[np.ndarray, np.ndarray, np.ndarray]
    weights: tuple[np.ndarray, np.ndarray, np.ndarray]


def quadrature_rule(basis: TensorBasis3D, q=None) -> QuadratureRule:
    """Default rule: q_d = p_d + 1 points per direction per knot span."""
    if q is None:
        qs = tuple(p + 1 for p in basis.degrees)
    elif np.isscalar(q):
        qs = (int(q),) * 3
    else:
        qs = tuple(int(v) for v in q)
    data = [span_gauss_1d(basis.knots[d], qs[d]) for d in range(3)]
    return QuadratureRule(
        q=qs,
        points=tuple(d[0] for d in data),
        weights=tuple(d[1] for d in data),
    )


def assemble_quadrature(patch: Patch, q=None):
    """Yield (t, w) pairs with w = gauss weight x span scaling x det J.

    Deterministic ordering: spans lexicographic in (e1, e2, e3), points
    lexicographic within each span. The summed weights equal the volume of
    the mapped patch.
    """
    T, W = quadrature_arrays(patch, q)
    for i in range(W.size):
        yield T[i], float(W[i])


def quadrature_arrays(patch: Patch, q=None):
    """Array form of `assemble_quadrature`: (T[Npts, 3], W[Npts])."""
    grid = AssemblyGrid(patch, q)
    if grid.num_points == 0:
        raise InvalidArgumentError("patch has an empty quadrature stream")
    T = np.empty((grid.num_points, 3))
    W = np.empty(grid.num_points)
    pos = 0
    for chunk in grid.chunks():
        npts = chunk.x_param.shape[0] * chunk.x_param.shape[1]
        T[pos : pos + npts] = chunk.x_param.reshape(npts, 3)
        W[pos : pos + npts] = chunk.weights.reshape(npts)
        pos += npts
    return T, W


class SpanChunk:
    """Quadrature and basis data for a contiguous slab of knot spans.

    Arrays are indexed (span-in-chunk, point-in-span, ...):
      x_param  (S, Q, 3)   parameter coordinates
      x_phys   (S, Q, 3)   physical coordinates
      weights  (S, Q)      total weights including det J
      values   (S, Q, nb)  active basis values
      grad_x   (S, Q, nb, 3) physical gradients dN/dx
      active   (S, nb)     global basis indices
      e_ranges             per-direction element index arrays (slab x full x full)
    """

    __slots__ = (
        "x_param",
        "x_phys",
        "weights",
        "values",
        "grad_x",
        "active",
        "e_ranges",
        "starts",
    )

    def __init__(self, x_param, x_phys, weights, values, grad_x, active, e_ranges, starts):
        self.x_param = x_param
        self.x_phys = x_phys
        self.weights = weights
        self.values = values
        self.grad_x = grad_x
        self.active = active
        self.e_ranges = e_ranges
        self.starts = starts


class AssemblyGrid:
    """Per-span Gauss data with 1D basis tables, expanded chunk by chunk.

    Chunks are slabs of consecutive e1 elements covering all (e2, e3); this
    keeps the expansion vectorised while bounding memory. The chunk layout
    is deterministic, so reductions that sum chunk results in order are
    reproducible bit for bit.
    """

    def __init__(self, patch: Patch, q=None, slab_elements: int | None = None):
        self.patch = patch
        basis = patch.basis
        self.basis = basis
        self.rule = quadrature_rule(basis, q)
        self.degrees = basis.degrees
        self.pts = self.rule.points
        self.wts = self.rule.weights
        self.span_shape = tuple(p.shape[0] for p in self.pts)
        self.num_points = int(np.prod([p.size for p in self.pts]))

        # 1D basis values/derivatives at every Gauss point, per direction
        self.bval = []
        self.bder = []
        self.starts = []
        for d in range(3):
            kv = basis.knots[d]
            flat = self.pts[d].reshape(-1)
            spans, ders = eval_basis_many(kv, flat, order=1)
            s, qd = self.pts[d].shape
            self.bval.append(ders[:, 0, :].reshape(s, qd, -1))
            self.bder.append(ders[:, 1, :].reshape(s, qd, -1))
            self.starts.append(spans.reshape(s, qd)[:, 0] - kv.degree)

        if slab_elements is None:
            # target roughly 1000 spans per chunk
            per_slab = self.span_shape[1] * self.span_shape[2]
            slab_elements = max(1, int(round(1000 / max(per_slab, 1))))
        self.slab_elements = slab_elements

        self._affine = patch.is_affine_box
        if self._affine:
            L = np.asarray(patch.domain_box)
            self._jdiag = L
            self._detj = float(np.prod(L))
        self._cp_grid = patch.control_points.reshape(basis.shape + (3,))
        self._w_grid = basis.weights.reshape(basis.shape)

    def chunks(self):
        s1 = self.span_shape[0]
        for lo in range(0, s1, self.slab_elements):
            hi = min(lo + self.slab_elements, s1)
            yield self._build_chunk(np.arange(lo, hi))

    def _build_chunk(self, e1) -> SpanChunk:
        e2 = np.arange(self.span_shape[1])
        e3 = np.arange(self.span_shape[2])
        S = e1.size * e2.size * e3.size
        q1, q2, q3 = (self.pts[d].shape[1] for d in range(3))
        Q = q1 * q2 * q3
        nb = int(np.prod([p + 1 for p in self.degrees]))

        # tensor expansion of 1D tables over the slab
        B1, B2, B3 = self.bval[0][e1], self.bval[1][e2], self.bval[2][e3]
        D1, D2, D3 = self.bder[0][e1], self.bder[1][e2], self.bder[2][e3]

        def outer3(a, b, c):
            # (s1,q1,m1),(s2,q2,m2),(s3,q3,m3) -> (S, Q, nb)
            out = np.einsum("aqi,brj,csk->abcqrsijk", a, b, c, optimize=True)
            return out.reshape(S, Q, nb)

        values = outer3(B1, B2, B3)
        dt1 = outer3(D1, B2, B3)
        dt2 = outer3(B1, D2, B3)
        dt3 = outer3(B1, B2, D3)
        grad_t = np.stack([dt1, dt2, dt3], axis=-1)

        # parameter points and parameter-space weights
        P1, P2, P3 = self.pts[0][e1], self.pts[1][e2], self.pts[2][e3]
        W1, W2, W3 = self.wts[0][e1], self.wts[1][e2], self.wts[2][e3]
        ones = [np.ones_like(P1), np.ones_like(P2), np.ones_like(P3)]
        xp1 = np.einsum("aq,br,cs->abcqrs", P1, ones[1], ones[2]).reshape(S, Q)
        xp2 = np.einsum("aq,br,cs->abcqrs", ones[0], P2, ones[2]).reshape(S, Q)
        xp3 = np.einsum("aq,br,cs->abcqrs", ones[0], ones[1], P3).reshape(S, Q)
        x_param = np.stack([xp1, xp2, xp3], axis=-1)
        w_param = np.einsum("aq,br,cs->abcqrs", W1, W2, W3).reshape(S, Q)

        # active global indices per span
        a1 = self.starts[0][e1][:, None] + np.arange(self.degrees[0] + 1)[None, :]
        a2 = self.starts[1][e2][:, None] + np.arange(self.degrees[1] + 1)[None, :]
        a3 = self.starts[2][e3][:, None] + np.arange(self.degrees[2] + 1)[None, :]
        n1, n2, n3 = self.basis.shape
        active = (
            (a1[:, None, None, :, None, None] * n2 + a2[None, :, None, None, :, None]) * n3
            + a3[None, None, :, None, None, :]
        ).reshape(S, nb)

        if not self.basis.uniform_weights:
            w_act = self.basis.weights[active]  # (S, nb)
            wB = w_act[:, None, :] * values
            Wtot = wB.sum(axis=2)
            dWtot = np.einsum("sb,sqbd->sqd", w_act, grad_t)
            values = wB / Wtot[:, :, None]
            grad_t = (
                w_act[:, None, :, None] * grad_t
                - values[:, :, :, None] * dWtot[:, :, None, :]
            ) / Wtot[:, :, None, None]

        if self._affine:
            grad_x = grad_t / self._jdiag[None, None, None, :]
            weights = w_param * self._detj
            x_phys = self.patch.physical_from_param(x_param)
        else:
            cp = self.patch.control_points[active]  # (S, nb, 3)
            x_phys = np.einsum("sqb,sbi->sqi", values, cp)
            J = np.einsum("sqbd,sbi->sqid", grad_t, cp)
            detj = np.linalg.det(J)
            if np.any(detj <= 0):
                raise SingularGeometryError("det J <= 0 at a quadrature point")
            Jinv = np.linalg.inv(J)
            grad_x = np.einsum("sqbd,sqdk->sqbk", grad_t, Jinv)
            weights = w_param * detj

        return SpanChunk(
            x_param,
            x_phys,
            weights,
            values,
            grad_x,
            active,
            (e1, e2, e3),
            (self.starts[0][e1], self.starts[1][e2], self.starts[2][e3]),
        )


def evaluate_field(patch: Patch, coeffs: np.ndarray, t_points: np.ndarray, gradient=False,
                   chunk=65536):
    """Spline field values (and physical gradients) at arbitrary parameters.

    coeffs has shape (n, K); returns (P, K) values and, with gradient=True,
    (P, K, 3) physical gradients dF/dx. Gradients require an affine box
    patch or a general geometry with invertible J (computed pointwise).
    """
    basis = patch.basis
    coeffs = np.asarray(coeffs, dtype=float)
    squeeze = coeffs.ndim == 1
    if squeeze:
        coeffs = coeffs[:, None]
    K = coeffs.shape[1]
    t_points = np.atleast_2d(np.asarray(t_points, dtype=float))
    P = t_points.shape[0]
    vals = np.empty((P, K))
    grads = np.empty((P, K, 3)) if gradient else None

    degs = basis.degrees
    n1, n2, n3 = basis.shape
    cgrid = coeffs.reshape(n1, n2, n3, K)

    for lo in range(0, P, chunk):
        hi = min(lo + chunk, P)
        tp = t_points[lo:hi]
        Pc = tp.shape[0]
        v1d, d1d, st = [], [], []
        for d in range(3):
            spans, ders = eval_basis_many(basis.knots[d], tp[:, d], order=1 if gradient else 0)
            v1d.append(ders[:, 0, :])
            if gradient:
                d1d.append(ders[:, 1, :])
            st.append(spans - degs[d])
        idx1 = st[0][:, None] + np.arange(degs[0] + 1)[None, :]
        idx2 = st[1][:, None] + np.arange(degs[1] + 1)[None, :]
        idx3 = st[2][:, None] + np.arange(degs[2] + 1)[None, :]
        # gathered coefficient windows: (Pc, m1, m2, m3, K)
        cwin = cgrid[idx1[:, :, None, None], idx2[:, None, :, None], idx3[:, None, None, :]]

        if not basis.uniform_weights:
            wgrid = basis.weights.reshape(n1, n2, n3)
            wwin = wgrid[idx1[:, :, None, None], idx2[:, None, :, None], idx3[:, None, None, :]]
        else:
            wwin = None

        def contract(f1, f2, f3, arr):
            return np.einsum("pa,pb,pc,pabck->pk", f1, f2, f3, arr, optimize=True)

        if wwin is None:
            vals[lo:hi] = contract(v1d[0], v1d[1], v1d[2], cwin)
            if gradient:
                gt = np.stack(
                    [
                        contract(d1d[0], v1d[1], v1d[2], cwin),
                        contract(v1d[0], d1d[1], v1d[2], cwin),
                        contract(v1d[0], v1d[1], d1d[2], cwin),
                    ],
                    axis=-1,
                )
        else:
            wc = wwin[..., None] * cwin
            W = np.einsum("pa,pb,pc,pabc->p", v1d[0], v1d[1], v1d[2], wwin, optimize=True)
            raw = contract(v1d[0], v1d[1], v1d[2], wc)
            vals[lo:hi] = raw / W[:, None]
            if gradient:
                def dW(f1, f2, f3):
                    return np.einsum("pa,pb,pc,pabc->p", f1, f2, f3, wwin, optimize=True)

                gt = np.empty((Pc, K, 3))
                dWs = [dW(d1d[0], v1d[1], v1d[2]), dW(v1d[0], d1d[1], v1d[2]),
                       dW(v1d[0], v1d[1], d1d[2])]
                draws = [contract(d1d[0], v1d[1], v1d[2], wc),
                         contract(v1d[0], d1d[1], v1d[2], wc),
                         contract(v1d[0], v1d[1], d1d[2], wc)]
                for d in range(3):
                    gt[:, :, d] = (draws[d] - vals[lo:hi] * dWs[d][:, None]) / W[:, None]

        if gradient:
            if patch.is_affine_box:
                grads[lo:hi] = gt / np.asarray(patch.domain_box)[None, None, :]
            else:
                for j, tj in enumerate(tp):
                    _, _, Jinv = jacobian(patch, tj)
                    grads[lo + j] = gt[j] @ Jinv

    if squeeze:
        vals = vals[:, 0]
        if gradient:
            grads = grads[:, 0]
    return (vals, grads) if gradient else vals
