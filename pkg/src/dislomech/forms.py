"""Dislocation density, its torsion 2-form, and R^3-valued form algebra.

A dislocation with Burgers vector b, line direction n and core radius R
carries the density alpha = f(r) b^i n^j delta_jk dx^k (x) E_i; its Hodge
dual is the torsion 2-form with coefficients T^i_jk = f b^i n^l eps_ljk.
The radial profile f is a linear taper normalised to unit integral over
the core disk:

    f(r) = 3/(pi R^2) (1 - r/R)   for r <= R,   0 otherwise.

Two-form coefficients are carried as full antisymmetric arrays T[..., i, j, k]
(antisymmetric in j, k); the independent components are the j < k entries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError

# permutation symbol eps_{ijk}
EPSILON = np.zeros((3, 3, 3))
EPSILON[0, 1, 2] = EPSILON[1, 2, 0] = EPSILON[2, 0, 1] = 1.0
EPSILON[0, 2, 1] = EPSILON[2, 1, 0] = EPSILON[1, 0, 2] = -1.0


@dataclass(frozen=True)
class DislocationSpec:
    """A straight dislocation along e3 through `center` in the x1-x2 plane.

    burgers (length units), line_direction (unit), core_radius R > 0,
    center = (c1, c2).
    """

    burgers: np.ndarray
    line_direction: np.ndarray = field(default=None)
    core_radius: float = 1.0
    center: np.ndarray = field(default=None)

    def __post_init__(self):
        b = np.asarray(self.burgers, dtype=float).reshape(3)
        n = self.line_direction
        n = np.array([0.0, 0.0, 1.0]) if n is None else np.asarray(n, dtype=float).reshape(3)
        c = self.center
        c = np.zeros(2) if c is None else np.asarray(c, dtype=float).reshape(2)
        if abs(np.linalg.norm(n) - 1.0) > 1e-12:
            raise InvalidArgumentError("line direction must be a unit vector")
        if self.core_radius <= 0:
            raise InvalidArgumentError("core radius must be positive")
        object.__setattr__(self, "burgers", b)
        object.__setattr__(self, "line_direction", n)
        object.__setattr__(self, "center", c)


def screw_dislocation(b=1.0, core_radius=1.0, center=(0.0, 0.0)) -> DislocationSpec:
    """Screw preset: b = (0, 0, b), line along e3."""
    return DislocationSpec(np.array([0.0, 0.0, b]), np.array([0.0, 0.0, 1.0]),
                           core_radius, np.asarray(center, dtype=float))


def edge_dislocation(b=1.0, core_radius=1.0, center=(0.0, 0.0)) -> DislocationSpec:
    """Edge preset: b = (b, 0, 0), line along e3."""
    return DislocationSpec(np.array([b, 0.0, 0.0]), np.array([0.0, 0.0, 1.0]),
                           core_radius, np.asarray(center, dtype=float))


def radial_density(r, R):
    """Linear-taper core profile f(r); unit integral over the core disk."""
    if R <= 0:
        raise InvalidArgumentError("core radius must be positive")
    r = np.asarray(r, dtype=float)
    f = (3.0 / (np.pi * R * R)) * np.clip(1.0 - r / R, 0.0, None)
    return f if f.ndim else float(f)


def torsion_coefficients(spec, x):
    """Torsion coefficients T^i_jk(x) = f(r) b^i n^l eps_ljk.

    `spec` may be a single DislocationSpec or a sequence (densities add).
    x has shape (..., 3); the distance r is measured in the x1-x2 plane
    from each dislocation's center (densities are uniform along the line
    direction e3). Returns an array of shape (..., 3, 3, 3), antisymmetric
    in the last two axes and zero wherever r > R.
    """
    specs = spec if isinstance(spec, (list, tuple)) else (spec,)
    x = np.asarray(x, dtype=float)
    lead = x.shape[:-1]
    T = np.zeros(lead + (3, 3, 3))
    for s in specs:
        r = np.sqrt(
            (x[..., 0] - s.center[0]) ** 2 + (x[..., 1] - s.center[1]) ** 2
        )
        f = radial_density(r, s.core_radius)
        bn = np.einsum("i,l,ljk->ijk", s.burgers, s.line_direction, EPSILON)
        T += np.asarray(f)[..., None, None, None] * bn
    return T


class TorsionField:
    """Torsion 2-form of one or more straight dislocations.

    Evaluation maps points x (..., 3) to coefficient arrays (..., 3, 3, 3),
    antisymmetric in the last two axes, with support inside the core disks.
    """

    def __init__(self, specs):
        if isinstance(specs, DislocationSpec):
            specs = (specs,)
        self.specs = tuple(specs)
        if not self.specs:
            raise InvalidArgumentError("at least one dislocation spec required")

    @property
    def core_radius(self) -> float:
        return max(s.core_radius for s in self.specs)

    def coefficients(self, x) -> np.ndarray:
        return torsion_coefficients(self.specs, x)

    def __call__(self, x) -> np.ndarray:
        return self.coefficients(x)


def hodge_star_1form(omega):
    """Hodge dual of an R^3-valued 1-form in the orthonormal coframe.

    omega[..., i, j] holds the coefficient of dx^j (x) E_i. The result
    Omega[..., i, j, k] is the antisymmetric 2-form coefficient array with
    *dx^1 = dx^2 ^ dx^3 and cyclic: Omega_ijk = eps_mjk omega_im.
    """
    omega = np.asarray(omega, dtype=float)
    return np.einsum("...im,mjk->...ijk", omega, EPSILON)


def hodge_star_2form(Omega):
    """Inverse of `hodge_star_1form` (the star is an involution here)."""
    Omega = np.asarray(Omega, dtype=float)
    return 0.5 * np.einsum("...ijk,mjk->...im", Omega, EPSILON)


def form_inner_product(omega, eta, k: int):
    """Pointwise inner product of R^3-valued k-forms (volume-form coefficient).

    k = 0: arrays (..., 3);  k = 1: (..., 3, 3);  k = 2: antisymmetric
    (..., 3, 3, 3). The sum runs over the independent (j < k) components
    for 2-forms.
    """
    omega = np.asarray(omega, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if omega.shape != eta.shape:
        raise InvalidArgumentError("forms must share shape and degree")
    expected_tail = {0: 1, 1: 2, 2: 3}
    if k not in expected_tail:
        raise InvalidArgumentError(f"unsupported form degree k={k}")
    tail = expected_tail[k]
    if omega.ndim < tail or omega.shape[-tail:] != (3,) * tail:
        raise InvalidArgumentError(
            f"degree-{k} forms need trailing shape {(3,) * tail}, got {omega.shape}"
        )
    if k == 0:
        return np.einsum("...i,...i->...", omega, eta)
    if k == 1:
        return np.einsum("...ij,...ij->...", omega, eta)
    # antisymmetric storage counts each independent component twice
    return 0.5 * np.einsum("...ijk,...ijk->...", omega, eta)
