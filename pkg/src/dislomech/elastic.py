"""Nonlinear elasticity on the intermediate configuration.

The elastic embedding y minimises the St. Venant--Kirchhoff strain energy

    W[y] = int 1/2 C[vt]^{ijkl} E_ij E_kl  det(vt) det(J) dt,
    E_kl = 1/2 (dy^i/dx^k dy^i/dx^l - vt^i_k vt^i_l),

where vt = I + Theta is the plastic bundle map, g[vt] = vt^T vt the
intermediate metric, and

    C[vt]^{ijkl} = (2 mu nu / (1 - 2 nu)) g^{ij} g^{kl}
                 + mu (g^{ik} g^{jl} + g^{il} g^{jk}),   g^{..} = (g[vt])^{-1}.

The Galerkin residual and its exact consistent tangent (geometric part
delta_mn dN_i S^{ik} dN_k plus material part dN_i F_mj C^{ijkl} F_nl dN_k)
are assembled chunk by chunk; the tangent accumulates into per-offset bands
of the tensor-product stencil and is emitted as a block-sparse matrix
without any duplicate-summing pass. Newton--Raphson with backtracking line
search drives the relative residual below the configured tolerance; each
step solves the pinned SPD system with Jacobi-preconditioned CG.

Traction-free faces are natural (no surface terms). Rigid-body motion is
removed by pinning three corners: (-,-,-) in all components, (+,-,-) in
components 2 and 3, and (-,+,-) in component 3, exactly six constraints.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import (
    ConvergenceError,
    DegeneratePlasticityError,
    IncompressibleLimitError,
    InvalidArgumentError,
    InvertedElementError,
)
from .geometry import AssemblyGrid, Patch, evaluate_field
from .plastic import PlasticField, ProjectedOperator
from .sparsela import JacobiPreconditioner, SolverConfig, SparseSymMatrix, pcg_solve


@dataclass(frozen=True)
class Material:
    """Isotropic SVK material: shear modulus mu and Poisson ratio nu."""

    shear_modulus: float = 1.0
    poisson_ratio: float = 0.3

    def __post_init__(self):
        if self.shear_modulus <= 0:
            raise InvalidArgumentError("shear modulus must be positive")
        if not -1.0 < self.poisson_ratio < 0.5:
            if self.poisson_ratio == 0.5:
                raise IncompressibleLimitError("nu = 1/2 is the incompressible limit")
            raise InvalidArgumentError("Poisson ratio must lie in (-1, 1/2)")

    @property
    def lame_volumetric(self) -> float:
        """2 mu nu / (1 - 2 nu), the coefficient of the g x g term."""
        return 2 * self.shear_modulus * self.poisson_ratio / (1 - 2 * self.poisson_ratio)


FACES = ("x1-", "x1+", "x2-", "x2+", "x3-", "x3+")


@dataclass(frozen=True)
class BoundarySpec:
    """Per-face boundary kinds plus the rigid-body pinning set.

    dirichlet maps face names ('x1-', 'x1+', ...) to prescribed displacement
    vectors D (the face control values become a_alpha + D); all other faces
    are traction-free Neumann faces. With pin_rigid_body the three-corner
    pinning removes exactly the six rigid-body modes.
    """

    dirichlet: dict = field(default_factory=dict)
    pin_rigid_body: bool = True

    def __post_init__(self):
        for face in self.dirichlet:
            if face not in FACES:
                raise InvalidArgumentError(f"unknown face '{face}'")

    def constrained_values(self, patch: Patch):
        """(dof indices, prescribed y values) with dof = 3 alpha + m."""
        basis = patch.basis
        n1, n2, n3 = basis.shape
        idx = np.arange(basis.num_basis).reshape(n1, n2, n3)
        dofs = []
        values = []

        def add(alpha, comp, value):
            dofs.append(3 * alpha + comp)
            values.append(value)

        for face in FACES:  # fixed iteration order keeps dof lists deterministic
            if face not in self.dirichlet:
                continue
            D = np.asarray(self.dirichlet[face], dtype=float).reshape(3)
            axis = int(face[1]) - 1
            sel = [slice(None)] * 3
            sel[axis] = 0 if face.endswith("-") else -1
            face_alphas = idx[tuple(sel)].ravel()
            for alpha in face_alphas:
                base = patch.control_points[alpha]
                for m in range(3):
                    add(int(alpha), m, base[m] + D[m])

        if self.pin_rigid_body:
            corner_mmm = int(idx[0, 0, 0])
            corner_pmm = int(idx[-1, 0, 0])
            corner_mpm = int(idx[0, -1, 0])
            for m in range(3):
                add(corner_mmm, m, patch.control_points[corner_mmm, m])
            for m in (1, 2):
                add(corner_pmm, m, patch.control_points[corner_pmm, m])
            add(corner_mpm, 2, patch.control_points[corner_mpm, 2])

        dofs = np.asarray(dofs, dtype=np.int64)
        values = np.asarray(values, dtype=float)
        # a dof may appear twice (face corner in two Dirichlet faces); keep first
        _, first = np.unique(dofs, return_index=True)
        return dofs[np.sort(first)], values[np.sort(first)]


# ---------------------------------------------------------------------------
# pointwise kernels


def green_strain(grad_y, vartheta):
    """E = 1/2 (F^T F - vt^T vt) for F = dy/dx; symmetric by construction."""
    F = np.asarray(grad_y, dtype=float)
    vt = np.asarray(vartheta, dtype=float)
    return 0.5 * (
        np.einsum("...im,...in->...mn", F, F) - np.einsum("...im,...in->...mn", vt, vt)
    )


def elastic_coefficients(g_inv, material: Material):
    """SVK coefficients C^{ijkl} from the inverse intermediate metric."""
    if material.poisson_ratio == 0.5:
        raise IncompressibleLimitError("nu = 1/2 is the incompressible limit")
    g = np.asarray(g_inv, dtype=float)
    lam = material.lame_volumetric
    mu = material.shear_modulus
    return (
        lam * np.einsum("...ij,...kl->...ijkl", g, g)
        + mu * np.einsum("...ik,...jl->...ijkl", g, g)
        + mu * np.einsum("...il,...jk->...ijkl", g, g)
    )


def second_pk_stress(C, E):
    """S^{ij} = C^{ijkl} E_kl."""
    return np.einsum("...ijkl,...kl->...ij", np.asarray(C, float), np.asarray(E, float))


def _stress_from_metric(g_inv, E, material: Material):
    """S via matrix products: lam tr(g^-1 E) g^-1 + 2 mu g^-1 E g^-1."""
    lam = material.lame_volumetric
    mu = material.shear_modulus
    gE = np.einsum("...ij,...jk->...ik", g_inv, E)
    tr = np.einsum("...ii->...", gE)
    return lam * tr[..., None, None] * g_inv + 2 * mu * np.einsum(
        "...ij,...jk->...ik", gE, g_inv
    )


# ---------------------------------------------------------------------------
# assembly machinery


class ElasticAssembly:
    """Chunked Galerkin assembly for a fixed (patch, plastic field, material).

    Caches the plastic data at quadrature points (vt, det vt, g^{-1}) and
    the block-sparse stencil pattern; the basis tables are re-expanded per
    pass. All loops are deterministic.
    """

    def __init__(self, patch: Patch, plastic: PlasticField, material: Material,
                 cache_chunks: bool | None = None):
        self.patch = patch
        self.plastic = plastic
        self.material = material
        self.grid = AssemblyGrid(patch)
        self.n = patch.basis.num_basis
        self.degrees = patch.basis.degrees
        nb = int(np.prod([p + 1 for p in self.degrees]))
        if cache_chunks is None:
            # basis tables dominate: values + gradients + points/weights
            est_bytes = self.grid.num_points * nb * 8 * 4.5
            cache_chunks = est_bytes < 1.6e9
        self._chunk_cache = [] if cache_chunks else None
        self._plastic_cache = []
        theta = plastic.theta
        for chunk in self.grid.chunks():
            th = np.einsum("sqb,sbij->sqij", chunk.values, theta[chunk.active],
                           optimize=True)
            vt = th + np.eye(3)[None, None, :, :]
            detvt = np.linalg.det(vt)
            if np.any(detvt <= 0):
                raise DegeneratePlasticityError("det(I + Theta) <= 0 at a quadrature point")
            g = np.einsum("sqim,sqin->sqmn", vt, vt)
            self._plastic_cache.append(
                {"vt": vt, "detvt": detvt, "ginv": np.linalg.inv(g)}
            )
            if self._chunk_cache is not None:
                self._chunk_cache.append(chunk)
        self._band_info = self._build_band_info()

    def _chunks(self):
        return self._chunk_cache if self._chunk_cache is not None else self.grid.chunks()

    # -- stencil pattern -----------------------------------------------------

    def _build_band_info(self):
        basis = self.patch.basis
        shape = basis.shape
        degs = self.degrees
        starts = self.grid.starts
        simple = all(
            np.array_equal(starts[d], np.arange(len(starts[d]))) for d in range(3)
        )
        if not simple:
            return None  # fall back to COO scatter (repeated interior knots)
        ones = []
        for d in range(3):
            n_d = shape[d]
            band = sp.diags(
                [np.ones(n_d - abs(k)) for k in range(-degs[d], degs[d] + 1)],
                offsets=list(range(-degs[d], degs[d] + 1)),
                format="csr",
            )
            ones.append(band)
        pattern = sp.kron(sp.kron(ones[0], ones[1], format="csr"), ones[2],
                          format="csr")
        pattern.sort_indices()
        indptr, indices = pattern.indptr, pattern.indices
        rows = np.repeat(np.arange(self.n), np.diff(indptr))
        mi = np.array(np.unravel_index(rows, shape)).T
        mj = np.array(np.unravel_index(indices, shape)).T
        offs = mj - mi + np.asarray(degs)
        width = 2 * np.asarray(degs) + 1
        off_flat = (offs[:, 0] * width[1] + offs[:, 1]) * width[2] + offs[:, 2]
        gather = rows.astype(np.int64) * int(np.prod(width)) + off_flat
        return {
            "indptr": indptr,
            "indices": indices,
            "gather": gather,
            "width": tuple(int(w) for w in width),
        }

    # -- field evaluation at quadrature points --------------------------------

    def _grad_y(self, chunk, y):
        return np.einsum("sqbk,sbm->sqmk", chunk.grad_x, y[chunk.active],
                         optimize=True)

    # -- scalar energy ---------------------------------------------------------

    def energy(self, y: np.ndarray) -> float:
        total = 0.0
        for chunk, pl in zip(self._chunks(), self._plastic_cache):
            F = self._grad_y(chunk, y)
            E = green_strain(F, pl["vt"])
            S = _stress_from_metric(pl["ginv"], E, self.material)
            wdv = chunk.weights * pl["detvt"]
            total += float((wdv * 0.5 * np.einsum("sqij,sqij->sq", S, E)).sum())
        return total

    # -- residual --------------------------------------------------------------

    def residual(self, y: np.ndarray):
        """(f (n, 3), min det F) with f the exact gradient of `energy`."""
        f = np.zeros((self.n, 3))
        min_det = np.inf
        for chunk, pl in zip(self._chunks(), self._plastic_cache):
            F = self._grad_y(chunk, y)
            det = np.linalg.det(F)
            md = float(det.min())
            min_det = min(min_det, md)
            E = green_strain(F, pl["vt"])
            S = _stress_from_metric(pl["ginv"], E, self.material)
            P = np.einsum("sqmj,sqji->sqmi", F, S)
            wdv = chunk.weights * pl["detvt"]
            floc = np.einsum("sq,sqbi,sqmi->sbm", wdv, chunk.grad_x, P, optimize=True)
            np.add.at(f, chunk.active, floc)
        return f, min_det

    # -- tangent ---------------------------------------------------------------

    def tangent(self, y: np.ndarray):
        """Consistent tangent as a scipy BSR matrix (3x3 blocks, dof = 3a + m)."""
        if self._band_info is None:
            return self._tangent_coo(y)
        info = self._band_info
        width = info["width"]
        bands = np.zeros((self.n, int(np.prod(width)), 3, 3))
        degs = self.degrees
        nb = int(np.prod([p + 1 for p in degs]))
        w1, w2, w3 = width

        for chunk, pl in zip(self._chunks(), self._plastic_cache):
            Aloc = self._local_tangent(chunk, pl, y)  # (S, nb, 3, nb, 3)
            e1, e2, e3 = chunk.e_ranges
            S1, S2, S3 = e1.size, e2.size, e3.size
            Aview = Aloc.reshape(
                S1, S2, S3, degs[0] + 1, degs[1] + 1, degs[2] + 1, 3,
                degs[0] + 1, degs[1] + 1, degs[2] + 1, 3
            )
            n2, n3 = self.patch.basis.shape[1:]
            for a1 in range(degs[0] + 1):
                r1 = e1 + a1
                for a2 in range(degs[1] + 1):
                    r2 = e2 + a2
                    for a3 in range(degs[2] + 1):
                        r3 = e3 + a3
                        rows = ((r1[:, None, None] * n2 + r2[None, :, None]) * n3
                                + r3[None, None, :])
                        for b1 in range(degs[0] + 1):
                            o1 = b1 - a1 + degs[0]
                            for b2 in range(degs[1] + 1):
                                o2 = b2 - a2 + degs[1]
                                for b3 in range(degs[2] + 1):
                                    o3 = b3 - a3 + degs[2]
                                    off = (o1 * w2 + o2) * w3 + o3
                                    bands[rows, off] += Aview[
                                        :, :, :, a1, a2, a3, :, b1, b2, b3, :
                                    ]
        data = bands.reshape(-1, 3, 3)[info["gather"]]
        A = sp.bsr_matrix(
            (data, info["indices"], info["indptr"]),
            shape=(3 * self.n, 3 * self.n),
            blocksize=(3, 3),
        )
        return A

    def _local_tangent(self, chunk, pl, y):
        mat = self.material
        lam = mat.lame_volumetric
        mu = mat.shear_modulus
        F = self._grad_y(chunk, y)
        E = green_strain(F, pl["vt"])
        ginv = pl["ginv"]
        S = _stress_from_metric(ginv, E, mat)
        Fg = np.einsum("sqmj,sqji->sqmi", F, ginv)
        B = np.einsum("sqmi,sqni->sqmn", Fg, F)  # F g^-1 F^T
        # D[(m,i),(n,k)] = lam Fg_mi Fg_nk + mu ginv_ik B_mn + mu Fg_mk Fg_ni
        D = (
            lam * np.einsum("sqmi,sqnk->sqmink", Fg, Fg)
            + mu * np.einsum("sqik,sqmn->sqmink", ginv, B)
            + mu * np.einsum("sqmk,sqni->sqmink", Fg, Fg)
        )
        # geometric part: delta_mn S_ik
        D += np.einsum("sqik,mn->sqmink", S, np.eye(3))
        wdv = chunk.weights * pl["detvt"]
        Dw = D * wdv[:, :, None, None, None, None]
        Ssz, Q, nb, _ = chunk.grad_x.shape
        Aloc = np.zeros((Ssz, nb, 3, nb, 3))
        dN = chunk.grad_x
        for q in range(Q):
            Z = np.einsum("sai,smink->samnk", dN[:, q], Dw[:, q], optimize=True)
            Aloc += np.einsum("samnk,sbk->sambn", Z, dN[:, q], optimize=True)
        return Aloc

    def _tangent_coo(self, y):
        rows, cols, vals = [], [], []
        for chunk, pl in zip(self._chunks(), self._plastic_cache):
            Aloc = self._local_tangent(chunk, pl, y)
            act = chunk.active
            S, nb = act.shape
            dof = (3 * act[:, :, None] + np.arange(3)[None, None, :]).reshape(S, 3 * nb)
            r = np.repeat(dof, 3 * nb, axis=1).ravel()
            c = np.tile(dof, (1, 3 * nb)).ravel()
            rows.append(r)
            cols.append(c)
            vals.append(Aloc.reshape(S, 3 * nb, 3 * nb).ravel())
        A = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(3 * self.n, 3 * self.n),
        )
        return A.tobsr(blocksize=(3, 3))


# ---------------------------------------------------------------------------
# state and public operations


class ElasticState:
    """Elastic embedding coefficients tied to a patch, plastic field, material."""

    def __init__(self, patch: Patch, plastic: PlasticField, material: Material,
                 y_coeffs: np.ndarray | None = None,
                 boundary: BoundarySpec | None = None,
                 assembly: ElasticAssembly | None = None):
        self.patch = patch
        self.plastic = plastic
        self.material = material
        n = patch.basis.num_basis
        y = patch.control_points.copy() if y_coeffs is None else np.asarray(
            y_coeffs, dtype=float
        ).reshape(n, 3).copy()
        self.y = y
        self.boundary = boundary or BoundarySpec()
        self._assembly = assembly

    @property
    def assembly(self) -> ElasticAssembly:
        if self._assembly is None:
            self._assembly = ElasticAssembly(self.patch, self.plastic, self.material)
        return self._assembly

    def with_coeffs(self, y) -> "ElasticState":
        return ElasticState(self.patch, self.plastic, self.material, y,
                            self.boundary, self._assembly)

    def displacement(self) -> np.ndarray:
        return self.y - self.patch.control_points


def strain_energy(state: ElasticState) -> float:
    """Total SVK strain energy of the state (intermediate volume form)."""
    return state.assembly.energy(state.y)


def residual_vector(state: ElasticState, zero_dirichlet: bool = True) -> np.ndarray:
    """Galerkin residual f (n, 3); Dirichlet/pinned rows zeroed by default."""
    f, _ = state.assembly.residual(state.y)
    if zero_dirichlet:
        dofs, _ = state.boundary.constrained_values(state.patch)
        f.reshape(-1)[dofs] = 0.0
    return f


def tangent_matrix(state: ElasticState) -> SparseSymMatrix:
    """Exact consistent tangent of the (unconstrained) residual."""
    return SparseSymMatrix(state.assembly.tangent(state.y).tocsr())


def stress_at(state: ElasticState, t) -> np.ndarray:
    """Second Piola--Kirchhoff stress S (3, 3) at one parameter point."""
    return stress_many(state, np.asarray(t, dtype=float).reshape(1, 3))[0]


def stress_many(state: ElasticState, t_points: np.ndarray) -> np.ndarray:
    """S (P, 3, 3) at an array of parameter points."""
    t_points = np.atleast_2d(np.asarray(t_points, dtype=float))
    _, grad = evaluate_field(state.patch, state.y, t_points, gradient=True)
    theta = state.plastic.evaluate_theta(t_points)
    vt = theta + np.eye(3)[None, :, :]
    g = np.einsum("pim,pin->pmn", vt, vt)
    ginv = np.linalg.inv(g)
    E = green_strain(grad, vt)
    return _stress_from_metric(ginv, E, state.material)


def newton_solve(patch: Patch, plastic: PlasticField, material: Material,
                 boundary: BoundarySpec | None = None,
                 config: SolverConfig | None = None):
    """Minimise the strain energy from the initial guess y = x.

    Returns (ElasticState, history); history rows are dicts with the Newton
    residual norms, PCG iteration counts and line-search steps. Raises
    ConvergenceError if Newton stalls and InvertedElementError if an
    accepted state has det(grad y) <= 0 at a quadrature point.
    """
    config = config or SolverConfig()
    boundary = boundary or BoundarySpec()
    assembly = ElasticAssembly(patch, plastic, material)
    n = patch.basis.num_basis

    dofs, values = boundary.constrained_values(patch)
    mask = np.ones(3 * n, dtype=bool)
    mask[dofs] = False

    y = patch.control_points.copy()
    y.reshape(-1)[dofs] = values

    def norm_free(f):
        flat = f.copy().reshape(-1)
        flat[dofs] = 0.0
        return float(np.linalg.norm(flat)), flat

    history = []
    f, min_det = assembly.residual(y)
    if min_det <= 0.0:
        raise InvertedElementError("initial state has det(grad y) <= 0")
    fnorm, fflat = norm_free(f)
    f0 = fnorm
    abs_floor = 1e-14 * max(1.0, material.shear_modulus * np.prod(patch.domain_box or (1,)))
    history.append({"iteration": 0, "residual": fnorm, "relative": 1.0 if f0 else 0.0,
                    "pcg_iterations": 0, "step": 0.0, "energy": assembly.energy(y)})

    iteration = 0
    while fnorm > max(config.newton_tol * f0, abs_floor):
        if iteration >= config.newton_maxiter:
            raise ConvergenceError(
                f"Newton hit iteration cap {config.newton_maxiter} at "
                f"relative residual {fnorm / f0:.3e}",
                residual=fnorm,
                history=[h["residual"] for h in history],
            )
        iteration += 1
        A = assembly.tangent(y)
        op = ProjectedOperator((lambda v, A=A: A @ v), mask,
                               diagonal=A.diagonal())
        M = JacobiPreconditioner(op.diagonal())
        rhs = np.where(mask, -fflat, 0.0)
        dy, pcg_hist = pcg_solve(op, rhs, preconditioner=M,
                                 tol=config.pcg_tol, maxiter=config.pcg_maxiter)

        step = 1.0
        accepted = False
        for _ in range(config.max_backtracks + 1):
            y_try = y + step * dy.reshape(n, 3)
            f_try, md = assembly.residual(y_try)
            if md > 0.0:
                fn_try, ff_try = norm_free(f_try)
                if fn_try < fnorm:
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            raise ConvergenceError(
                f"Newton line search failed after {config.max_backtracks} backtracks "
                f"at relative residual {fnorm / f0:.3e}",
                residual=fnorm,
                history=[h["residual"] for h in history],
            )
        y = y_try
        f, fnorm, fflat = f_try, fn_try, ff_try
        history.append({"iteration": iteration, "residual": fnorm,
                        "relative": fnorm / f0 if f0 else 0.0,
                        "pcg_iterations": len(pcg_hist) - 1, "step": step,
                        "energy": assembly.energy(y)})

    state = ElasticState(patch, plastic, material, y, boundary, assembly)
    return state, history


def write_newton_history(path, history):
    """Newton convergence history as CSV."""
    with open(path, "w") as fh:
        fh.write("iteration,residual,relative,pcg_iterations,step,energy\n")
        for row in history:
            fh.write(
                f"{row['iteration']},{row['residual']:.17g},{row['relative']:.17g},"
                f"{row['pcg_iterations']},{row['step']:.17g},{row['energy']:.17g}\n"
            )
