"""Independent references: Volterra stress fields, the homotopy-operator
plastic field, and finite-difference utilities.

The Volterra formulas are the classical infinite-medium linear-elastic
fields of straight screw and edge dislocations (line along e3, Burgers
vector along e3 resp. e1). Sign conventions for these formulas differ
across the literature (they track the handedness chosen for the Burgers
circuit); here they are frozen once against the numerical solve. The
structure equation fixes the plastic field so that a counter-clockwise
circuit in the x1-x2 plane recovers +b, and the energy minimiser then
carries S^23 < 0 on the positive x1 axis for a positive screw: both
oracles below use that orientation.

The homotopy operator integrates a closed 2-form tau radially from a base
point x0 on a star-shaped domain,

    (H tau)^i_m(x) = int_0^1 t T^i_{jm}(x0 + t (x - x0)) (x - x0)_j dt,

which satisfies d(H tau) = tau. It ignores boundary conditions, so it
matches the constrained solve only on symmetry lines.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, SingularityError


@dataclass(frozen=True)
class VolterraParams:
    """Material and dislocation scalars for the classical fields."""

    mu: float = 1.0
    nu: float = 0.3
    b: float = 1.0
    core_radius: float = 1.0

    def __post_init__(self):
        if self.mu <= 0:
            raise InvalidArgumentError("shear modulus must be positive")
        if self.core_radius <= 0:
            raise InvalidArgumentError("core radius must be positive")

    @property
    def d_screw(self) -> float:
        """Normalisation D_S = mu b / (2 pi R) of the screw profiles."""
        return self.mu * self.b / (2 * np.pi * self.core_radius)

    @property
    def d_edge(self) -> float:
        """Normalisation D_S = mu b / (2 pi (1 - nu) R) of the edge profiles."""
        return self.mu * self.b / (2 * np.pi * (1 - self.nu) * self.core_radius)


def _radius_sq(x1, x2):
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    r2 = x1 * x1 + x2 * x2
    if np.any(r2 == 0.0):
        raise SingularityError("classical Volterra fields diverge at r = 0")
    return x1, x2, r2


def volterra_screw_stress(x1, x2, params: VolterraParams):
    """(S^23, S^31) of the classical screw dislocation at (x1, x2)."""
    x1, x2, r2 = _radius_sq(x1, x2)
    c = params.mu * params.b / (2 * np.pi)
    return -c * x1 / r2, c * x2 / r2


def volterra_edge_stress(x1, x2, params: VolterraParams):
    """(S^11, S^22, S^33, S^12) of the classical edge dislocation."""
    x1, x2, r2 = _radius_sq(x1, x2)
    D = params.mu * params.b / (2 * np.pi * (1 - params.nu))
    r4 = r2 * r2
    s11 = D * x2 * (3 * x1 * x1 + x2 * x2) / r4
    s22 = -D * x2 * (x1 * x1 - x2 * x2) / r4
    s12 = -D * x1 * (x1 * x1 - x2 * x2) / r4
    s33 = params.nu * (s11 + s22)
    return s11, s22, s33, s12


def homotopy_theta(torsion, x, basepoint=None, tol: float = 1e-10,
                   max_panels: int = 4096, quad_order: int = 8) -> np.ndarray:
    """Poincare-homotopy primitive of the torsion 2-form at points x.

    x has shape (..., 3); the result has shape (..., 3, 3) with
    Theta_H[..., i, m] the coefficient of dx^m (x) E_i. The 1D radial
    integral uses composite Gauss panels, doubled until successive values
    agree to `tol` (absolute).
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    x0 = np.zeros(3) if basepoint is None else np.asarray(basepoint, dtype=float).reshape(3)
    xi = pts - x0[None, :]

    ref_x, ref_w = np.polynomial.legendre.leggauss(quad_order)

    def integral(n_panels):
        edges = np.linspace(0.0, 1.0, n_panels + 1)
        mid = 0.5 * (edges[:-1] + edges[1:])
        half = 0.5 * (edges[1:] - edges[:-1])
        tq = (mid[:, None] + half[:, None] * ref_x[None, :]).ravel()
        wq = (half[:, None] * ref_w[None, :]).ravel()
        # evaluation points for every (x, t) pair: (P, Q, 3)
        pq = x0[None, None, :] + tq[None, :, None] * xi[:, None, :]
        T = torsion.coefficients(pq)  # (P, Q, 3, 3, 3)
        return np.einsum("q,q,pqijm,pj->pim", wq, tq, T, xi, optimize=True)

    panels = 4
    prev = integral(panels)
    while panels < max_panels:
        panels *= 2
        cur = integral(panels)
        if np.abs(cur - prev).max() <= tol:
            prev = cur
            break
        prev = cur
    result = prev
    return result[0] if single else result.reshape(x.shape[:-1] + (3, 3))


def homotopy_theta_axis_profile(torsion, coords, axis: int, basepoint=None,
                                tol: float = 1e-10) -> np.ndarray:
    """Theta_H sampled along a coordinate axis through the base point."""
    coords = np.asarray(coords, dtype=float)
    pts = np.zeros((coords.size, 3))
    if basepoint is not None:
        pts += np.asarray(basepoint, dtype=float)[None, :]
    pts[:, axis] += coords
    return homotopy_theta(torsion, pts, basepoint=basepoint, tol=tol)


def fd_gradient(fn, x, step: float = 1e-6) -> np.ndarray:
    """Componentwise central-difference gradient of a scalar function."""
    if step <= 0:
        raise InvalidArgumentError("step must be positive")
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.size):
        xp = flat.copy()
        xm = flat.copy()
        xp[k] += step
        xm[k] -= step
        gflat[k] = (fn(xp.reshape(x.shape)) - fn(xm.reshape(x.shape))) / (2 * step)
    return grad


def fd_directional(fn, x, direction, step: float = 1e-6) -> float:
    """Central-difference directional derivative (fn(x+s d) - fn(x-s d)) / 2s."""
    x = np.asarray(x, dtype=float)
    d = np.asarray(direction, dtype=float)
    return (fn(x + step * d) - fn(x - step * d)) / (2 * step)
