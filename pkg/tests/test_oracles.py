import numpy as np
import pytest

from dislomech.errors import SingularityError
from dislomech.forms import TorsionField, edge_dislocation, screw_dislocation
from dislomech.oracles import (
    VolterraParams,
    fd_directional,
    fd_gradient,
    homotopy_theta,
    homotopy_theta_axis_profile,
    volterra_edge_stress,
    volterra_screw_stress,
)


def radial_homotopy_factor(r, R=1.0):
    """Closed form of g(r) = int_0^1 t f(t r) dt for the linear-taper core."""
    r = np.asarray(r, dtype=float)
    inside = 3 / (2 * np.pi * R**2) - r / (np.pi * R**3)
    outside = np.divide(1.0, 2 * np.pi * r**2, out=np.zeros_like(r), where=r > 0)
    return np.where(r < R, inside, outside)


def test_screw_reference_point():
    params = VolterraParams(mu=2.0, nu=0.3, b=0.5, core_radius=1.5)
    # the frozen sign convention: counter-clockwise Burgers circuit = +b
    # pairs with S^23 = -D_S at (R, 0)
    s23, s31 = volterra_screw_stress(params.core_radius, 0.0, params)
    assert abs(s23 + params.d_screw) < 1e-15
    assert s31 == 0.0


def test_screw_odd_in_x1():
    params = VolterraParams()
    s23, s31 = volterra_screw_stress(0.0, params.core_radius, params)
    assert s23 == 0.0
    assert abs(s31 - params.d_screw) < 1e-15


def test_screw_decay():
    params = VolterraParams()
    rng = np.random.default_rng(0)
    for _ in range(10):
        ang = rng.uniform(0, 2 * np.pi)
        r = rng.uniform(0.5, 5.0)
        near = np.hypot(*volterra_screw_stress(r * np.cos(ang), r * np.sin(ang), params))
        far = np.hypot(*volterra_screw_stress(2 * r * np.cos(ang), 2 * r * np.sin(ang), params))
        assert abs(far - near / 2) < 1e-12


def test_edge_on_x2_axis():
    params = VolterraParams(mu=1.0, nu=0.25, b=1.0, core_radius=1.0)
    D = params.mu * params.b / (2 * np.pi * (1 - params.nu))
    s11, s22, s33, s12 = volterra_edge_stress(0.0, 1.0, params)
    assert s12 == 0.0
    assert abs(s11 - D) < 1e-15


def test_edge_plane_strain_identity():
    params = VolterraParams(nu=0.31)
    rng = np.random.default_rng(1)
    pts = rng.uniform(-5, 5, (20, 2))
    pts = pts[np.hypot(pts[:, 0], pts[:, 1]) > 0.1]
    s11, s22, s33, _ = volterra_edge_stress(pts[:, 0], pts[:, 1], params)
    np.testing.assert_allclose(s33, params.nu * (s11 + s22), rtol=1e-12)


def test_singularity_error_at_origin():
    with pytest.raises(SingularityError):
        volterra_screw_stress(0.0, 0.0, VolterraParams())
    with pytest.raises(SingularityError):
        volterra_edge_stress(0.0, 0.0, VolterraParams())


def equilibrium_residual_screw(x, y, params, h=1e-5):
    def s31(x_, y_):
        return volterra_screw_stress(x_, y_, params)[1]

    def s23(x_, y_):
        return volterra_screw_stress(x_, y_, params)[0]

    return (s31(x + h, y) - s31(x - h, y)) / (2 * h) + (s23(x, y + h) - s23(x, y - h)) / (2 * h)


def test_screw_equilibrium():
    params = VolterraParams()
    rng = np.random.default_rng(2)
    for _ in range(50):
        r = rng.uniform(0.5, 8.0)
        ang = rng.uniform(0, 2 * np.pi)
        x, y = r * np.cos(ang), r * np.sin(ang)
        scale = np.hypot(*volterra_screw_stress(x, y, params)) / r
        assert abs(equilibrium_residual_screw(x, y, params)) < 1e-4 * max(scale, 1e-12)


def test_edge_equilibrium():
    params = VolterraParams(nu=0.3)
    rng = np.random.default_rng(3)
    h = 1e-5

    def comp(x, y, k):
        return volterra_edge_stress(x, y, params)[k]

    for _ in range(50):
        r = rng.uniform(0.5, 8.0)
        ang = rng.uniform(0, 2 * np.pi)
        x, y = r * np.cos(ang), r * np.sin(ang)
        scale = max(abs(v) for v in volterra_edge_stress(x, y, params)) / r
        div1 = (comp(x + h, y, 0) - comp(x - h, y, 0)) / (2 * h) + (
            comp(x, y + h, 3) - comp(x, y - h, 3)
        ) / (2 * h)
        div2 = (comp(x + h, y, 3) - comp(x - h, y, 3)) / (2 * h) + (
            comp(x, y + h, 1) - comp(x, y - h, 1)
        ) / (2 * h)
        assert abs(div1) < 1e-4 * max(scale, 1e-12)
        assert abs(div2) < 1e-4 * max(scale, 1e-12)


def test_homotopy_zero_torsion():
    field = TorsionField(screw_dislocation(b=0.0))
    out = homotopy_theta(field, np.array([[0.5, 0.2, 0.0], [2.0, 1.0, 3.0]]))
    np.testing.assert_allclose(out, 0.0)


def test_homotopy_matches_closed_form_screw():
    b, R = 0.7, 1.3
    field = TorsionField(screw_dislocation(b=b, core_radius=R))
    rng = np.random.default_rng(4)
    pts = rng.uniform(-3, 3, (30, 3))
    out = homotopy_theta(field, pts)
    r = np.hypot(pts[:, 0], pts[:, 1])
    g = radial_homotopy_factor(r, R)
    expect = np.zeros((30, 3, 3))
    expect[:, 2, 0] = -b * pts[:, 1] * g
    expect[:, 2, 1] = b * pts[:, 0] * g
    np.testing.assert_allclose(out, expect, atol=1e-9)


def test_homotopy_matches_closed_form_edge():
    b, R = 1.0, 1.0
    field = TorsionField(edge_dislocation(b=b, core_radius=R))
    coords = np.array([-2.0, -0.6, 0.3, 1.4, 4.0])
    prof = homotopy_theta_axis_profile(field, coords, axis=1)
    g = radial_homotopy_factor(np.abs(coords), R)
    np.testing.assert_allclose(prof[:, 0, 0], -b * coords * g, atol=1e-9)
    np.testing.assert_allclose(prof[:, 0, 1], 0.0, atol=1e-12)


def test_homotopy_exterior_derivative_recovers_torsion():
    field = TorsionField(screw_dislocation(b=1.0, core_radius=1.0))
    h = 1e-4
    rng = np.random.default_rng(5)
    for _ in range(5):
        r = rng.uniform(0.25, 0.75)
        ang = rng.uniform(0, 2 * np.pi)
        x = np.array([r * np.cos(ang), r * np.sin(ang), rng.uniform(-1, 1)])
        T = field.coefficients(x)
        dTheta = np.zeros((3, 3, 3))
        for j in range(3):
            xp, xm = x.copy(), x.copy()
            xp[j] += h
            xm[j] -= h
            dj = (homotopy_theta(field, xp) - homotopy_theta(field, xm)) / (2 * h)
            for k in range(3):
                dTheta[:, j, k] += dj[:, k]
        dTheta = dTheta - np.transpose(dTheta, (0, 2, 1))
        # dTheta[i, j, k] now holds dTheta^i_k/dx^j - dTheta^i_j/dx^k
        np.testing.assert_allclose(dTheta, T, atol=1e-4)


def test_homotopy_linear_in_b():
    R = 1.0
    f1 = TorsionField(edge_dislocation(b=1.0, core_radius=R))
    f2 = TorsionField(edge_dislocation(b=2.0, core_radius=R))
    pts = np.array([[0.4, -0.3, 0.1], [2.0, 1.5, -0.5]])
    np.testing.assert_allclose(
        homotopy_theta(f2, pts), 2 * homotopy_theta(f1, pts), atol=1e-10
    )


def test_fd_gradient_square():
    grad = fd_gradient(lambda x: float(x[0] ** 2), np.array([1.0]), step=1e-5)
    assert abs(grad[0] - 2.0) < 1e-9


def test_fd_gradient_quadratic_form():
    rng = np.random.default_rng(6)
    A = rng.standard_normal((4, 4))
    A = A + A.T
    x0 = rng.standard_normal(4)
    grad = fd_gradient(lambda x: float(0.5 * x @ A @ x), x0, step=1e-6)
    np.testing.assert_allclose(grad, A @ x0, atol=1e-7)


def test_fd_directional_matches_gradient():
    rng = np.random.default_rng(7)
    A = rng.standard_normal((5, 5))
    A = A + A.T
    x0 = rng.standard_normal(5)
    d = rng.standard_normal(5)
    val = fd_directional(lambda x: float(0.5 * x @ A @ x), x0, d, step=1e-6)
    assert abs(val - (A @ x0) @ d) < 1e-6
