import numpy as np
import pytest

from dislomech.errors import InvalidArgumentError
from dislomech.geometry import (
    AssemblyGrid,
    Patch,
    assemble_quadrature,
    box_patch,
    evaluate_field,
    gauss_rule,
    geometry_map,
    jacobian,
    quadrature_arrays,
    quadrature_rule,
)
from dislomech.splines import TensorBasis3D, make_graded_knot_vector


def make_basis(n=(4, 4, 3), p=(2, 2, 1), gamma=1.0):
    return TensorBasis3D(tuple(make_graded_knot_vector(n[d], p[d], gamma) for d in range(3)))


def test_gauss_rule_q1():
    x, w = gauss_rule(1)
    np.testing.assert_allclose(x, [0.0])
    np.testing.assert_allclose(w, [2.0])


def test_gauss_rule_q2():
    x, w = gauss_rule(2)
    np.testing.assert_allclose(x, [-1 / np.sqrt(3), 1 / np.sqrt(3)])
    np.testing.assert_allclose(w, [1.0, 1.0])


def test_gauss_rule_integrates_quartic():
    x, w = gauss_rule(3)
    assert abs((w * x**4).sum() - 2 / 5) < 1e-14


def test_gauss_rule_polynomial_exactness():
    rng = np.random.default_rng(0)
    for q in range(1, 11):
        x, w = gauss_rule(q)
        for deg in range(2 * q):
            c = rng.standard_normal(deg + 1)
            exact = sum(ci / (k + 1) * (1 - (-1) ** (k + 1)) for k, ci in enumerate(c))
            assert abs((w * np.polynomial.polynomial.polyval(x, c)).sum() - exact) < 1e-12


def test_gauss_rule_range_check():
    for q in (0, 11):
        with pytest.raises(InvalidArgumentError):
            gauss_rule(q)


def test_box_center_maps_to_origin():
    patch = box_patch(make_basis(), (100, 100, 100))
    np.testing.assert_allclose(geometry_map(patch, (0.5, 0.5, 0.5)), 0.0, atol=1e-12)


def test_box_corner():
    patch = box_patch(make_basis(), (100, 100, 100))
    np.testing.assert_allclose(geometry_map(patch, (1, 1, 1)), [50, 50, 50], atol=1e-12)


def test_convex_hull_property():
    rng = np.random.default_rng(1)
    basis = make_basis()
    cp = rng.uniform(-1, 1, (basis.num_basis, 3))
    patch = Patch(basis, cp)
    for t in rng.uniform(0, 1, (20, 3)):
        x = geometry_map(patch, t)
        assert np.all(x >= cp.min(axis=0) - 1e-12)
        assert np.all(x <= cp.max(axis=0) + 1e-12)


def test_jacobian_affine_box():
    patch = box_patch(make_basis(), (100, 100, 100))
    J, det, Jinv = jacobian(patch, (0.3, 0.6, 0.2))
    np.testing.assert_allclose(J, np.diag([100, 100, 100]), atol=1e-9)
    assert abs(det - 1e6) < 1e-3
    np.testing.assert_allclose(Jinv, np.diag([0.01, 0.01, 0.01]), atol=1e-15)


def test_jacobian_identity_box():
    patch = box_patch(make_basis(), (1, 1, 1))
    J, det, _ = jacobian(patch, (0.25, 0.5, 0.75))
    np.testing.assert_allclose(J, np.eye(3), atol=1e-12)
    assert abs(det - 1.0) < 1e-12


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(2)
    basis = make_basis()
    # a mildly perturbed box stays invertible
    patch0 = box_patch(basis, (2, 3, 1.5))
    cp = patch0.control_points + 0.02 * rng.standard_normal(patch0.control_points.shape)
    patch = Patch(basis, cp)
    h = 1e-6
    for t in rng.uniform(0.2, 0.8, (10, 3)):
        J, _, _ = jacobian(patch, t)
        for k in range(3):
            tp, tm = t.copy(), t.copy()
            tp[k] += h
            tm[k] -= h
            fd = (geometry_map(patch, tp) - geometry_map(patch, tm)) / (2 * h)
            np.testing.assert_allclose(J[:, k], fd, rtol=1e-6, atol=1e-8)


def test_quadrature_weight_sums():
    basis = make_basis()
    for extents, vol in (((1, 1, 1), 1.0), ((100, 100, 100), 1e6)):
        patch = box_patch(basis, extents)
        _, W = quadrature_arrays(patch)
        assert abs(W.sum() - vol) < 1e-9 * vol


def test_quadrature_odd_moment_vanishes():
    patch = box_patch(make_basis(), (2, 2, 2))
    T, W = quadrature_arrays(patch)
    x1 = patch.physical_from_param(T)[:, 0]
    assert abs((W * x1).sum()) < 1e-10 * W.sum()


def test_quadrature_generator_matches_arrays():
    patch = box_patch(make_basis((3, 3, 3), (1, 1, 1)), (1, 2, 3))
    T, W = quadrature_arrays(patch)
    pts = list(assemble_quadrature(patch))
    assert len(pts) == W.size
    np.testing.assert_array_equal(np.array([p[0] for p in pts]), T)
    np.testing.assert_array_equal(np.array([p[1] for p in pts]), W)


def test_quadrature_polynomial_exactness_affine():
    # degree <= 2q-1 per direction integrates exactly on an affine patch
    basis = make_basis((4, 4, 4), (2, 2, 2), gamma=2.0)
    patch = box_patch(basis, (2, 1, 1))
    T, W = quadrature_arrays(patch)
    q = quadrature_rule(basis).q
    rng = np.random.default_rng(3)
    for _ in range(5):
        degs = [rng.integers(0, 2 * qd - 1) for qd in q]
        cs = [rng.standard_normal(d + 1) for d in degs]

        def poly(t):
            return np.prod(
                [np.polynomial.polynomial.polyval(t[:, d], cs[d]) for d in range(3)], axis=0
            )

        exact = np.prod(
            [sum(c / (k + 1) for k, c in enumerate(cs[d])) for d in range(3)]
        ) * np.prod(patch.domain_box)
        assert abs((W * poly(T)).sum() - exact) < 1e-11 * max(1.0, abs(exact))


def test_quadrature_ordering_deterministic():
    patch = box_patch(make_basis(), (1, 1, 1))
    T1, W1 = quadrature_arrays(patch)
    T2, W2 = quadrature_arrays(patch)
    assert T1.tobytes() == T2.tobytes()
    assert W1.tobytes() == W2.tobytes()


def test_assembly_grid_partition_of_unity():
    basis = make_basis((5, 4, 4), (2, 2, 2), gamma=1.5)
    patch = box_patch(basis, (3, 2, 2))
    grid = AssemblyGrid(patch)
    for chunk in grid.chunks():
        np.testing.assert_allclose(chunk.values.sum(axis=2), 1.0, atol=1e-12)
        np.testing.assert_allclose(chunk.grad_x.sum(axis=2), 0.0, atol=1e-9)


def test_assembly_grid_matches_pointwise_eval():
    basis = make_basis((4, 3, 3), (2, 1, 1))
    patch = box_patch(basis, (2, 2, 2))
    rng = np.random.default_rng(4)
    coeffs = rng.standard_normal(basis.num_basis)
    grid = AssemblyGrid(patch)
    chunk = next(grid.chunks())
    S, Q, _ = chunk.values.shape
    f_chunk = np.einsum("sqb,sb->sq", chunk.values, coeffs[chunk.active])
    f_ref = evaluate_field(patch, coeffs, chunk.x_param.reshape(-1, 3)).reshape(S, Q)
    np.testing.assert_allclose(f_chunk, f_ref, atol=1e-12)


def test_evaluate_field_gradients():
    basis = make_basis((5, 4, 4), (2, 2, 2))
    patch = box_patch(basis, (2, 3, 4))
    rng = np.random.default_rng(5)
    coeffs = rng.standard_normal((basis.num_basis, 2))
    tpts = rng.uniform(0.05, 0.95, (30, 3))
    vals, grads = evaluate_field(patch, coeffs, tpts, gradient=True)
    h = 1e-6
    for d in range(3):
        tp = tpts.copy()
        tp[:, d] += h
        tm = tpts.copy()
        tm[:, d] -= h
        fd = (evaluate_field(patch, coeffs, tp) - evaluate_field(patch, coeffs, tm)) / (2 * h)
        # physical gradient: divide parameter derivative by L_d
        np.testing.assert_allclose(
            grads[:, :, d], fd / patch.domain_box[d], rtol=2e-5, atol=1e-7
        )
