"""Plastic deformation fields: the discretised first structure equation.

For each Cartesian value index i the coefficients x = (Theta^i_1, Theta^i_2,
Theta^i_3, lambda^i) minimise

    I[Theta, lambda] = int 1/2 <tau - dTheta, tau - dTheta> + int <lambda, delta Theta>

subject to Theta^i_j n^j = 0 on the boundary, imposed strongly on boundary
control coefficients. The stationarity condition is the symmetric indefinite
4n x 4n system A x + b = 0 (shared by all i) built from

    K_mk = delta_mk sum_l G_ll - G_km,    G_km^{ab} = int N^a_{,k} N^b_{,m} detJ
    D_m^{ab}  = int N^a N^b_{,m} detJ     (Theta-lambda coupling; transpose below)
    b_m^{a}   = -int sum_j N^a_{,j} T^i_{jm} detJ,   b_lambda = 0

The coupling block and its transpose differ from each other by a boundary
term that vanishes on the constrained space, so the assembled matrix is
exactly symmetric. lambda is determined up to a constant; one lambda
coefficient is pinned to zero by default (the solution Theta is unchanged).

Solves run per value index i through MINRES on the rhs normalised to unit
norm, with threshold tol * min(1, ||rhs||) / ||rhs||: the absolute residual
obeys the configured tolerance, and for ||rhs|| <= 1 the iteration is
scale-invariant, which makes the solved field exactly linear under
power-of-two scalings of the Burgers vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import json
import numpy as np
import scipy.sparse as sp

from .errors import (
    DegeneratePlasticityError,
    InvalidArgumentError,
    InvalidLoopError,
    UnsupportedGeometryError,
)
from .forms import form_inner_product
from .geometry import AssemblyGrid, Patch, box_patch, evaluate_field, jacobian, span_gauss_1d
from .sparsela import SolverConfig, SparseSymMatrix, minres_solve
from .splines import KnotVector, TensorBasis3D, eval_basis_many


# ---------------------------------------------------------------------------
# assembly


def mass_grad_matrices_1d(kv: KnotVector, q: int | None = None):
    """1D matrices M0 = int B_a B_b, M1 = int B_a B'_b, M2 = int B'_a B'_b."""
    p = kv.degree
    q = p + 1 if q is None else q
    pts, wts = span_gauss_1d(kv, q)
    flat = pts.reshape(-1)
    spans, ders = eval_basis_many(kv, flat, order=1)
    n = kv.num_basis
    M0 = np.zeros((n, n))
    M1 = np.zeros((n, n))
    M2 = np.zeros((n, n))
    w = wts.reshape(-1)
    B = ders[:, 0, :]
    D = ders[:, 1, :]
    first = spans - p
    for j in range(p + 1):
        for k in range(p + 1):
            np.add.at(M0, (first + j, first + k), w * B[:, j] * B[:, k])
            np.add.at(M1, (first + j, first + k), w * B[:, j] * D[:, k])
            np.add.at(M2, (first + j, first + k), w * D[:, j] * D[:, k])
    return M0, M1, M2


def _kron3(F1, F2, F3, scale):
    out = sp.kron(sp.kron(sp.csr_matrix(F1), sp.csr_matrix(F2), format="csr"),
                  sp.csr_matrix(F3), format="csr")
    out.data *= scale
    return out


class _TensorFactors:
    """Per-direction 1D matrices and scalings for an affine box patch."""

    def __init__(self, patch: Patch):
        if not patch.is_affine_box:
            raise UnsupportedGeometryError(
                "tensor-product assembly requires an affine box patch with uniform weights"
            )
        basis = patch.basis
        self.L = np.asarray(patch.domain_box)
        self.volume = float(np.prod(self.L))
        self.M0, self.M1, self.M2 = [], [], []
        for d in range(3):
            m0, m1, m2 = mass_grad_matrices_1d(basis.knots[d])
            self.M0.append(m0)
            self.M1.append(m1)
            self.M2.append(m2)
        self.shape = basis.shape

    def grad_factors(self, k: int, m: int):
        """1D factors of G_km = int N_{,k} N_{,m} detJ (row deriv k, col deriv m)."""
        fs = []
        for d in range(3):
            if d == k and d == m:
                fs.append(self.M2[d])
            elif d == k:
                fs.append(self.M1[d].T)
            elif d == m:
                fs.append(self.M1[d])
            else:
                fs.append(self.M0[d])
        scale = self.volume / (self.L[k] * self.L[m])
        return fs, scale

    def coupling_factors(self, m: int):
        """1D factors of D_m = int N^a N^b_{,m} detJ."""
        fs = [self.M1[d] if d == m else self.M0[d] for d in range(3)]
        return fs, self.volume / self.L[m]


def _apply_kron3(F1, F2, F3, v, shape):
    n1, n2, n3 = shape
    t = F1 @ v.reshape(n1, n2 * n3)
    t = t.reshape(n1, n2, n3)
    t = np.einsum("bj,ajc->abc", F2, t, optimize=True)
    return (t.reshape(n1 * n2, n3) @ F3.T).reshape(-1)


@dataclass
class PlasticSystem:
    """Assembled (unconstrained) saddle system: A x + b = 0 per value index."""

    matrix: SparseSymMatrix  # 4n x 4n
    rhs: np.ndarray          # (3, 4n): b for i = 1, 2, 3
    patch: Patch

    @property
    def n(self) -> int:
        return self.matrix.dim // 4


def boundary_constrained_pairs(basis: TensorBasis3D):
    """Constrained (form index j, basis alpha) pairs for Theta^i_j n^j = 0.

    On a face with outward normal +-e_j every boundary coefficient in
    direction j is eliminated; edges and corners accumulate the conditions
    of all incident faces. Returns a boolean mask of shape (3, n).
    """
    n1, n2, n3 = basis.shape
    idx = np.arange(n1 * n2 * n3).reshape(n1, n2, n3)
    mask = np.zeros((3, n1 * n2 * n3), dtype=bool)
    mask[0, idx[[0, -1], :, :].ravel()] = True
    mask[1, idx[:, [0, -1], :].ravel()] = True
    mask[2, idx[:, :, [0, -1]].ravel()] = True
    return mask


def free_dof_mask(basis: TensorBasis3D, pin_lambda: bool = True) -> np.ndarray:
    """Free-dof mask over the 4n saddle unknowns (Theta blocks then lambda)."""
    n = basis.num_basis
    constrained = boundary_constrained_pairs(basis)
    mask = np.ones(4 * n, dtype=bool)
    for j in range(3):
        mask[j * n : (j + 1) * n] = ~constrained[j]
    if pin_lambda:
        mask[3 * n] = False
    return mask


def assemble_plastic_rhs(patch: Patch, torsion, grid: AssemblyGrid | None = None) -> np.ndarray:
    """Load vectors b (3, 4n) with b[(m, a)] = -int sum_j N^a_{,j} T^i_{jm}."""
    grid = grid or AssemblyGrid(patch)
    n = patch.basis.num_basis
    acc = np.zeros((n, 3, 3))  # [alpha, i, m]
    for chunk in grid.chunks():
        T = torsion.coefficients(chunk.x_phys)
        if not np.any(T):
            continue
        contrib = -np.einsum(
            "sq,sqbj,sqijm->sbim", chunk.weights, chunk.grad_x, T, optimize=True
        )
        np.add.at(acc, chunk.active, contrib)
    rhs = np.zeros((3, 4 * n))
    for m in range(3):
        rhs[:, m * n : (m + 1) * n] = acc[:, :, m].T
    return rhs


def assemble_plastic_system(patch: Patch, torsion, method: str = "auto") -> PlasticSystem:
    """Assemble the 4n saddle matrix and the three load vectors.

    method: 'tensor' builds the matrix from Kronecker products of 1D
    integrals (affine box patches only; exact), 'quadrature' runs the
    generic Gauss assembly, 'auto' picks 'tensor' when available. The two
    paths agree to machine precision on affine boxes.
    """
    if method == "auto":
        method = "tensor" if patch.is_affine_box else "quadrature"
    n = patch.basis.num_basis
    if method == "tensor":
        tf = _TensorFactors(patch)
        G = {}
        for k in range(3):
            for m in range(3):
                fs, scale = tf.grad_factors(k, m)
                G[(k, m)] = _kron3(*fs, scale)
        SG = G[(0, 0)] + G[(1, 1)] + G[(2, 2)]
        D = []
        for m in range(3):
            fs, scale = tf.coupling_factors(m)
            D.append(_kron3(*fs, scale))
        blocks = [[None] * 4 for _ in range(4)]
        for m in range(3):
            for k in range(3):
                block = -G[(k, m)]
                if m == k:
                    block = block + SG
                blocks[m][k] = block
            blocks[m][3] = D[m]
            blocks[3][m] = D[m].T
        A = sp.bmat(blocks, format="csr")
    elif method == "quadrature":
        grid = AssemblyGrid(patch)
        rows, cols, vals = [], [], []
        for chunk in grid.chunks():
            w = chunk.weights
            dN = chunk.grad_x
            N = chunk.values
            Gloc = np.einsum("sq,sqak,sqbm->sabkm", w, dN, dN, optimize=True)
            Dloc = np.einsum("sq,sqa,sqbm->sabm", w, N, dN, optimize=True)
            trace = Gloc[:, :, :, 0, 0] + Gloc[:, :, :, 1, 1] + Gloc[:, :, :, 2, 2]
            act = chunk.active
            S, nb = act.shape
            ra = np.repeat(act, nb, axis=1).ravel()
            cb = np.tile(act, (1, nb)).ravel()
            for m in range(3):
                for k in range(3):
                    block = -Gloc[:, :, :, k, m]
                    if m == k:
                        block = block + trace
                    rows.append(ra + m * n)
                    cols.append(cb + k * n)
                    vals.append(block.reshape(-1))
                rows.append(ra + m * n)
                cols.append(cb + 3 * n)
                vals.append(Dloc[:, :, :, m].reshape(-1))
                rows.append(cb + 3 * n)
                cols.append(ra + m * n)
                vals.append(Dloc[:, :, :, m].reshape(-1))
        A = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(4 * n, 4 * n),
        ).tocsr()
    else:
        raise InvalidArgumentError(f"unknown assembly method '{method}'")

    rhs = assemble_plastic_rhs(patch, torsion)
    return PlasticSystem(SparseSymMatrix(A), rhs, patch)


class ProjectedOperator:
    """P A P + (I - P) for a boolean free-dof mask P (symmetric projection)."""

    def __init__(self, base_matvec, mask: np.ndarray, diagonal=None):
        self.base = base_matvec
        self.mask = mask
        self.dim = mask.size
        self._diag = diagonal

    def matvec(self, v: np.ndarray) -> np.ndarray:
        w = np.where(self.mask, v, 0.0)
        y = self.base(w)
        return np.where(self.mask, y, v)

    def project(self, v: np.ndarray) -> np.ndarray:
        return np.where(self.mask, v, 0.0)

    def diagonal(self):
        if self._diag is None:
            raise InvalidArgumentError("operator has no stored diagonal")
        return np.where(self.mask, self._diag, 1.0)


class KroneckerSaddleOperator:
    """Matrix-free saddle operator for affine box patches.

    Applies the 4n system through per-direction dense 1D matrices
    (three small GEMMs per Kronecker factor), avoiding materialising the
    sparse matrix at production scales.
    """

    def __init__(self, patch: Patch):
        tf = _TensorFactors(patch)
        self.tf = tf
        self.shape = tf.shape
        self.n = int(np.prod(tf.shape))
        self.dim = 4 * self.n
        self._gfact = {}
        for k in range(3):
            for m in range(3):
                fs, scale = tf.grad_factors(k, m)
                self._gfact[(k, m)] = ([fs[0] * scale, fs[1], fs[2]])
        self._dfact = []
        for m in range(3):
            fs, scale = tf.coupling_factors(m)
            self._dfact.append([fs[0] * scale, fs[1], fs[2]])

    def _g(self, k, m, v):
        F = self._gfact[(k, m)]
        return _apply_kron3(F[0], F[1], F[2], v, self.shape)

    def _d(self, m, v, transpose=False):
        F = self._dfact[m]
        if transpose:
            return _apply_kron3(F[0].T, F[1].T, F[2].T, v, self.shape)
        return _apply_kron3(F[0], F[1], F[2], v, self.shape)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        n = self.n
        th = [x[m * n : (m + 1) * n] for m in range(3)]
        lam = x[3 * n :]
        out = np.empty_like(x)
        # sum_l G_ll v_m shared by the diagonal blocks
        for m in range(3):
            y = self._g(0, 0, th[m]) + self._g(1, 1, th[m]) + self._g(2, 2, th[m])
            for k in range(3):
                y -= self._g(k, m, th[k])
            y += self._d(m, lam)
            out[m * n : (m + 1) * n] = y
        out[3 * n :] = (
            self._d(0, th[0], transpose=True)
            + self._d(1, th[1], transpose=True)
            + self._d(2, th[2], transpose=True)
        )
        return out

    def diagonal(self) -> np.ndarray:
        """diag(K) on the Theta blocks, lumped-mass diagonal on lambda."""
        tf = self.tf
        d = np.empty(self.dim)
        n = self.n
        for m in range(3):
            acc = np.zeros(n)
            for l in range(3):
                if l == m:
                    continue
                fs, scale = tf.grad_factors(l, l)
                acc += scale * np.einsum(
                    "a,b,c->abc",
                    np.diag(fs[0]), np.diag(fs[1]), np.diag(fs[2]),
                ).ravel()
            d[m * n : (m + 1) * n] = acc
        mass = tf.volume * np.einsum(
            "a,b,c->abc",
            np.diag(tf.M0[0]), np.diag(tf.M0[1]), np.diag(tf.M0[2]),
        ).ravel()
        d[3 * n :] = mass
        return d


@dataclass
class ConstrainedPlasticSystem:
    """Boundary-constrained saddle system ready for the per-index solves."""

    operator: ProjectedOperator
    rhs: np.ndarray       # (3, 4n), projected; convention A x = rhs
    mask: np.ndarray      # free-dof mask
    n: int
    patch: Patch
    matrix: SparseSymMatrix | None = None  # set when assembled explicitly


def apply_normal_bc(system: PlasticSystem, patch: Patch,
                    pin_lambda: bool = True) -> ConstrainedPlasticSystem:
    """Impose Theta^i_j n^j = 0 strongly on an assembled system.

    Boundary coefficients are zeroed and their rows/columns removed
    symmetrically (realised as the projection P A P + (I-P), which leaves
    the remaining entries untouched).
    """
    if patch.domain_box is None:
        raise UnsupportedGeometryError("normal boundary condition needs an axis-aligned box")
    mask = free_dof_mask(patch.basis, pin_lambda=pin_lambda)
    op = ProjectedOperator(system.matrix.matvec, mask)
    rhs = np.where(mask[None, :], -system.rhs, 0.0)
    return ConstrainedPlasticSystem(op, rhs, mask, system.n, patch,
                                    matrix=system.matrix)


@dataclass
class ResidualReport:
    """Solver and field residuals of a plastic solve."""

    structure_residual: float = np.nan   # ||tau - dTheta||_L2
    divergence_residual: float = np.nan  # ||delta Theta||_L2
    minres_residual: float = 0.0         # max over solved indices, absolute
    minres_relative: float = 0.0
    minres_iterations: int = 0
    theta_l2: float = np.nan
    histories: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "structure_residual": self.structure_residual,
            "divergence_residual": self.divergence_residual,
            "minres_residual": self.minres_residual,
            "minres_relative": self.minres_relative,
            "minres_iterations": self.minres_iterations,
            "theta_l2": self.theta_l2,
        }


class PlasticField:
    """NURBS coefficients of Theta^i_j and the multiplier lambda^i.

    theta has shape (n, 3, 3) with theta[alpha, i, j] = (Theta_alpha)^i_j;
    lam has shape (n, 3). Fields evaluate as Theta^i_j = sum N^alpha theta.
    Instances are immutable after the solve.
    """

    def __init__(self, patch: Patch, theta: np.ndarray, lam: np.ndarray,
                 report: ResidualReport | None = None, meta: dict | None = None):
        n = patch.basis.num_basis
        theta = np.asarray(theta, dtype=float).reshape(n, 3, 3)
        lam = np.asarray(lam, dtype=float).reshape(n, 3)
        self.patch = patch
        self.theta = theta
        self.lam = lam
        self.report = report or ResidualReport()
        self.meta = dict(meta or {})

    def theta_matrix_coeffs(self) -> np.ndarray:
        return self.theta

    def evaluate_theta(self, t_points, gradient=False):
        """Theta (P, 3, 3) and optionally its physical gradient (P, 3, 3, 3)."""
        coeffs = self.theta.reshape(-1, 9)
        if gradient:
            vals, grads = evaluate_field(self.patch, coeffs, t_points, gradient=True)
            P = vals.shape[0]
            return vals.reshape(P, 3, 3), grads.reshape(P, 3, 3, 3)
        vals = evaluate_field(self.patch, coeffs, t_points)
        return vals.reshape(-1, 3, 3)


def theta_at(fieldobj: PlasticField, t):
    """(Theta, vartheta = I + Theta, det vartheta) at one parameter point."""
    theta = fieldobj.evaluate_theta(np.asarray(t, dtype=float).reshape(1, 3))[0]
    vartheta = np.eye(3) + theta
    det = float(np.linalg.det(vartheta))
    if det <= 0.0:
        raise DegeneratePlasticityError(f"det(I + Theta) = {det} <= 0 at t = {t}")
    return theta, vartheta, det


def solve_plastic(patch: Patch, torsion, config: SolverConfig | None = None,
                  pin_lambda: bool = True, method: str = "auto",
                  preconditioner: str = "none"):
    """Solve the constrained structure equation; returns (PlasticField, report).

    Three independent solves, one per value index i, share the assembled
    operator; indices with identically zero load are skipped (their field
    is exactly zero). preconditioner: 'none' (default) or 'blockdiag'
    (diag of the curl blocks plus lumped mass on lambda).
    """
    config = config or SolverConfig()
    if method == "auto":
        method = "tensor" if patch.is_affine_box else "quadrature"

    n = patch.basis.num_basis
    mask = free_dof_mask(patch.basis, pin_lambda=pin_lambda)
    if method == "tensor":
        base = KroneckerSaddleOperator(patch)
        op = ProjectedOperator(base.matvec, mask, diagonal=base.diagonal())
        rhs_full = assemble_plastic_rhs(patch, torsion)
        rhs = np.where(mask[None, :], -rhs_full, 0.0)
    else:
        system = assemble_plastic_system(patch, torsion, method=method)
        constrained = apply_normal_bc(system, patch, pin_lambda=pin_lambda)
        op, rhs = constrained.operator, constrained.rhs
        if preconditioner == "blockdiag":
            op = ProjectedOperator(system.matrix.matvec, mask,
                                   diagonal=_blockdiag_from_matrix(system, n))
            rhs = constrained.rhs

    M = None
    if preconditioner == "blockdiag":
        from .sparsela import JacobiPreconditioner

        M = JacobiPreconditioner(op.diagonal())
    elif preconditioner != "none":
        raise InvalidArgumentError(f"unknown preconditioner '{preconditioner}'")

    theta = np.zeros((n, 3, 3))
    lam = np.zeros((n, 3))
    report = ResidualReport()
    worst_abs = 0.0
    worst_rel = 0.0
    total_iters = 0
    for i in range(3):
        b = rhs[i]
        s = float(np.linalg.norm(b))
        if s == 0.0:
            continue
        tol_eff = config.minres_tol * min(1.0, s) / s
        xhat, history = minres_solve(op, b / s, tol=tol_eff,
                                     maxiter=config.minres_maxiter,
                                     preconditioner=M)
        x = xhat * s
        true_res = float(np.linalg.norm(op.matvec(x) - b))
        worst_abs = max(worst_abs, true_res)
        worst_rel = max(worst_rel, true_res / s)
        total_iters += len(history) - 1
        report.histories[i] = [h * s for h in history]
        for j in range(3):
            theta[:, i, j] = x[j * n : (j + 1) * n]
        lam[:, i] = x[3 * n :]

    report.minres_residual = worst_abs
    report.minres_relative = worst_rel
    report.minres_iterations = total_iters

    fieldobj = PlasticField(patch, theta, lam, report=report,
                            meta={"pin_lambda": pin_lambda, "method": method,
                                  "preconditioner": preconditioner})
    update_residual_norms(fieldobj, torsion)
    return fieldobj, fieldobj.report


def _blockdiag_from_matrix(system: PlasticSystem, n: int) -> np.ndarray:
    d = system.matrix.diagonal().copy()
    # lambda block diagonal is zero; replace with the lumped mass diagonal
    patch = system.patch
    grid = AssemblyGrid(patch)
    mass = np.zeros(n)
    for chunk in grid.chunks():
        np.add.at(mass, chunk.active,
                  np.einsum("sq,sqb->sb", chunk.weights, chunk.values))
    d[3 * n :] = np.maximum(mass, 1e-300)
    return d


# ---------------------------------------------------------------------------
# diagnostics


def residual_norms(fieldobj: PlasticField, torsion) -> ResidualReport:
    """L2 norms of the structure residual c = tau - dTheta and of delta Theta."""
    update_residual_norms(fieldobj, torsion)
    return fieldobj.report


def update_residual_norms(fieldobj: PlasticField, torsion):
    patch = fieldobj.patch
    grid = AssemblyGrid(patch)
    theta = fieldobj.theta  # (n, 3, 3)
    sr2 = 0.0
    dr2 = 0.0
    th2 = 0.0
    for chunk in grid.chunks():
        T = torsion.coefficients(chunk.x_phys)
        th_act = theta[chunk.active]  # (S, nb, 3, 3)
        grad = np.einsum("sqbk,sbij->sqijk", chunk.grad_x, th_act, optimize=True)
        dTheta = np.transpose(grad, (0, 1, 2, 4, 3)) - grad  # [.., i, j, k]
        c = T - dTheta
        sr2 += float((chunk.weights * form_inner_product(c, c, 2)).sum())
        div = -np.einsum("sqijj->sqi", grad)
        dr2 += float((chunk.weights * np.einsum("sqi,sqi->sq", div, div)).sum())
        vals = np.einsum("sqb,sbij->sqij", chunk.values, th_act, optimize=True)
        th2 += float((chunk.weights * np.einsum("sqij,sqij->sq", vals, vals)).sum())
    fieldobj.report.structure_residual = np.sqrt(sr2)
    fieldobj.report.divergence_residual = np.sqrt(dr2)
    fieldobj.report.theta_l2 = np.sqrt(th2)


def burgers_circuit(fieldobj: PlasticField, loop, q: int | None = None) -> np.ndarray:
    """Line integral of Theta^i_j dx^j around a closed parameter polyline.

    Since vartheta = dx + Theta, the circuit of vartheta minus the (zero)
    circuit of dx is exactly this integral: the total Burgers vector of the
    enclosed dislocation density. Segments are split at knot planes so the
    Gauss rule on each piece integrates the spline exactly.
    """
    loop = np.asarray(loop, dtype=float)
    if loop.ndim != 2 or loop.shape[1] != 3 or loop.shape[0] < 2:
        raise InvalidLoopError("loop must be a polyline of parameter points (L, 3)")
    if not np.allclose(loop[0], loop[-1], atol=1e-12):
        raise InvalidLoopError("polyline is not closed")
    patch = fieldobj.patch
    degs = patch.basis.degrees
    q = q or max(4, max(degs) + 2)
    ref_x, ref_w = np.polynomial.legendre.leggauss(q)

    total = np.zeros(3)
    for a, b in zip(loop[:-1], loop[1:]):
        dt = b - a
        if np.linalg.norm(dt) == 0.0:
            continue
        # split [0, 1] at every knot-plane crossing
        cuts = {0.0, 1.0}
        for d in range(3):
            if dt[d] == 0.0:
                continue
            for brk in patch.basis.knots[d].breakpoints():
                s = (brk - a[d]) / dt[d]
                if 1e-12 < s < 1 - 1e-12:
                    cuts.add(float(s))
        svals = np.array(sorted(cuts))
        for s0, s1 in zip(svals[:-1], svals[1:]):
            smid = 0.5 * (s1 - s0) * (ref_x + 1.0) + s0
            w = 0.5 * (s1 - s0) * ref_w
            tpts = a[None, :] + smid[:, None] * dt[None, :]
            th = fieldobj.evaluate_theta(tpts)  # (q, 3, 3)
            if patch.is_affine_box:
                dx = np.asarray(patch.domain_box) * dt
                total += np.einsum("q,qij,j->i", w, th, dx)
            else:
                for wq, tq, thq in zip(w, tpts, th):
                    J, _, _ = jacobian(patch, tq)
                    total += wq * thq @ (J @ dt)
    return total


# ---------------------------------------------------------------------------
# serialization

_MAGIC = b"DMPLASTIC1\n"


def save_plastic_field(fieldobj: PlasticField, path):
    """Binary coefficient dump with a JSON header (grid, degrees, knots, meta)."""
    patch = fieldobj.patch
    basis = patch.basis
    header = {
        "shape": list(basis.shape),
        "degrees": list(basis.degrees),
        "knots": [kv.values.tolist() for kv in basis.knots],
        "domain_box": list(patch.domain_box) if patch.domain_box else None,
        "meta": fieldobj.meta,
        "report": {k: (None if isinstance(v, float) and np.isnan(v) else v)
                   for k, v in fieldobj.report.as_dict().items()},
    }
    payload = json.dumps(header, sort_keys=True).encode() + b"\n"
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(payload)
        fh.write(fieldobj.theta.astype("<f8").tobytes())
        fh.write(fieldobj.lam.astype("<f8").tobytes())


def load_plastic_field(path) -> PlasticField:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise InvalidArgumentError(f"{path} is not a plastic field dump")
        header = json.loads(fh.readline().decode())
        kvs = tuple(
            KnotVector(np.array(k), p) for k, p in zip(header["knots"], header["degrees"])
        )
        basis = TensorBasis3D(kvs)
        if header["domain_box"] is None:
            raise InvalidArgumentError("dump lacks box extents; cannot rebuild the patch")
        patch = box_patch(basis, header["domain_box"])
        n = basis.num_basis
        theta = np.frombuffer(fh.read(n * 9 * 8), dtype="<f8").reshape(n, 3, 3).copy()
        lam = np.frombuffer(fh.read(n * 3 * 8), dtype="<f8").reshape(n, 3).copy()
    report = ResidualReport()
    for key, value in header.get("report", {}).items():
        if value is not None and hasattr(report, key):
            setattr(report, key, value)
    return PlasticField(patch, theta, lam, report=report, meta=header.get("meta", {}))
