import numpy as np
import pytest

from dislomech.errors import (
    ConvergenceError,
    IncompressibleLimitError,
    InvalidArgumentError,
    InvertedElementError,
)
from dislomech.elastic import (
    BoundarySpec,
    ElasticAssembly,
    ElasticState,
    Material,
    elastic_coefficients,
    green_strain,
    newton_solve,
    residual_vector,
    second_pk_stress,
    strain_energy,
    stress_at,
    stress_many,
    tangent_matrix,
    write_newton_history,
)
from dislomech.forms import TorsionField, screw_dislocation
from dislomech.geometry import box_patch
from dislomech.plastic import PlasticField, solve_plastic
from dislomech.splines import TensorBasis3D, make_graded_knot_vector


def make_patch(n=(6, 6, 4), box=(6.0, 6.0, 4.0), gamma=1.5):
    basis = TensorBasis3D(tuple(make_graded_knot_vector(m, 2, gamma) for m in n))
    return box_patch(basis, box)


def zero_plastic(patch):
    n = patch.basis.num_basis
    return PlasticField(patch, np.zeros((n, 3, 3)), np.zeros((n, 3)))


def random_state(patch, seed, theta_scale=0.03, y_scale=0.02, nu=0.28):
    rng = np.random.default_rng(seed)
    n = patch.basis.num_basis
    plastic = PlasticField(patch, theta_scale * rng.standard_normal((n, 3, 3)),
                           np.zeros((n, 3)))
    material = Material(1.3, nu)
    y = patch.control_points + y_scale * rng.standard_normal((n, 3))
    return ElasticState(patch, plastic, material, y), rng


def test_material_validation():
    with pytest.raises(InvalidArgumentError):
        Material(-1.0, 0.3)
    with pytest.raises(IncompressibleLimitError):
        Material(1.0, 0.5)
    with pytest.raises(InvalidArgumentError):
        Material(1.0, 0.7)


def test_green_strain_identity():
    np.testing.assert_allclose(green_strain(np.eye(3), np.eye(3)), 0.0)


def test_green_strain_relaxed_state():
    rng = np.random.default_rng(0)
    vt = np.eye(3) + 0.1 * rng.standard_normal((3, 3))
    np.testing.assert_allclose(green_strain(vt, vt), 0.0, atol=1e-15)


def test_green_strain_uniaxial():
    E = green_strain(np.diag([1.1, 1.0, 1.0]), np.eye(3))
    expected = np.zeros((3, 3))
    expected[0, 0] = 0.5 * (1.1**2 - 1.0)
    np.testing.assert_allclose(E, expected, atol=1e-15)
    assert abs(E[0, 0] - 0.105) < 1e-12


def test_elastic_coefficients_nu_zero():
    mat = Material(2.0, 0.0)
    C = elastic_coefficients(np.eye(3), mat)
    eye = np.eye(3)
    expected = 2.0 * (np.einsum("ik,jl->ijkl", eye, eye) + np.einsum("il,jk->ijkl", eye, eye))
    np.testing.assert_allclose(C, expected)


def test_elastic_coefficients_c1111():
    mu, nu = 1.7, 0.3
    C = elastic_coefficients(np.eye(3), Material(mu, nu))
    assert abs(C[0, 0, 0, 0] - (2 * mu * nu / (1 - 2 * nu) + 2 * mu)) < 1e-12


def test_elastic_coefficients_symmetries():
    rng = np.random.default_rng(1)
    B = rng.standard_normal((3, 3))
    g = B @ B.T + 3 * np.eye(3)
    C = elastic_coefficients(np.linalg.inv(g), Material(1.1, 0.27))
    np.testing.assert_allclose(C, np.einsum("ijkl->klij", C), atol=1e-12)
    np.testing.assert_allclose(C, np.einsum("ijkl->jikl", C), atol=1e-12)
    np.testing.assert_allclose(C, np.einsum("ijkl->ijlk", C), atol=1e-12)


def test_second_pk_zero_strain():
    C = elastic_coefficients(np.eye(3), Material(1.0, 0.3))
    np.testing.assert_allclose(second_pk_stress(C, np.zeros((3, 3))), 0.0)


def test_second_pk_simple_shear():
    mu, gamma = 1.4, 0.02
    C = elastic_coefficients(np.eye(3), Material(mu, 0.0))
    E = np.zeros((3, 3))
    E[0, 1] = E[1, 0] = gamma / 2
    S = second_pk_stress(C, E)
    assert abs(S[0, 1] - mu * gamma) < 1e-14


def test_second_pk_trace_response():
    mu, nu, eps = 1.2, 0.3, 1e-3
    lam = 2 * mu * nu / (1 - 2 * nu)
    C = elastic_coefficients(np.eye(3), Material(mu, nu))
    S = second_pk_stress(C, eps * np.eye(3))
    np.testing.assert_allclose(S, (3 * lam + 2 * mu) * eps * np.eye(3), atol=1e-14)


def test_strain_energy_zero_at_reference():
    patch = make_patch()
    state = ElasticState(patch, zero_plastic(patch), Material(1.0, 0.3))
    # the spline gradient of the affine map is I only to roundoff
    assert abs(strain_energy(state)) < 1e-24


def test_strain_energy_uniaxial_closed_form():
    patch = make_patch(n=(3, 3, 3), box=(1.0, 1.0, 1.0), gamma=1.0)
    mu = 1.6
    state = ElasticState(patch, zero_plastic(patch), Material(mu, 0.0))
    y = patch.control_points.copy()
    y[:, 0] *= 1.01
    state = state.with_coeffs(y)
    E11 = 0.5 * (1.01**2 - 1.0)
    # W = 1/2 C^1111 E11^2 V with C^1111 = 2 mu at nu = 0
    assert abs(strain_energy(state) - mu * E11**2) < 1e-14


def test_residual_zero_at_reference():
    patch = make_patch()
    state = ElasticState(patch, zero_plastic(patch), Material(1.0, 0.25))
    np.testing.assert_allclose(residual_vector(state), 0.0, atol=1e-13)


def test_residual_translation_invariance():
    patch = make_patch()
    state, rng = random_state(patch, seed=2)
    f1 = state.assembly.residual(state.y)[0]
    f2 = state.assembly.residual(state.y + np.array([0.37, -1.2, 4.0]))[0]
    np.testing.assert_allclose(f1, f2, atol=1e-10 * max(1.0, np.abs(f1).max()))


def test_residual_is_gradient_of_energy():
    patch = make_patch()
    state, rng = random_state(patch, seed=3)
    asm = state.assembly
    f, _ = asm.residual(state.y)
    eps = 1e-5
    for _ in range(20):
        d = rng.standard_normal(state.y.shape)
        d /= np.linalg.norm(d)
        fd = (asm.energy(state.y + eps * d) - asm.energy(state.y - eps * d)) / (2 * eps)
        exact = float((f * d).sum())
        assert abs(fd - exact) <= 1e-6 * max(abs(fd), 1e-10)


def test_tangent_matches_fd_of_residual():
    patch = make_patch(n=(4, 4, 3), box=(2.0, 2.0, 1.0))
    state, rng = random_state(patch, seed=4)
    asm = state.assembly
    A = tangent_matrix(state)
    h = 1e-6
    for _ in range(5):
        d = rng.standard_normal(state.y.shape)
        d /= np.linalg.norm(d)
        fp, _ = asm.residual(state.y + h * d)
        fm, _ = asm.residual(state.y - h * d)
        fd = ((fp - fm) / (2 * h)).reshape(-1)
        exact = A.matvec(d.reshape(-1))
        assert np.abs(fd - exact).max() <= 1e-5 * max(np.abs(fd).max(), 1e-10)


def test_tangent_symmetry():
    patch = make_patch()
    state, _ = random_state(patch, seed=5)
    A = tangent_matrix(state)
    assert A.symmetry_error() <= 1e-9 * A.max_abs()


def test_tangent_small_strain_spd_after_pinning():
    patch = make_patch(n=(4, 4, 3), box=(2.0, 2.0, 1.5))
    state = ElasticState(patch, zero_plastic(patch), Material(1.0, 0.3))
    A = tangent_matrix(state).csr.toarray()
    dofs, _ = BoundarySpec().constrained_values(patch)
    assert dofs.size == 6
    free = np.setdiff1d(np.arange(A.shape[0]), dofs)
    eigs = np.linalg.eigvalsh(A[np.ix_(free, free)])
    assert eigs.min() > 0


def test_boundary_spec_dirichlet_faces():
    patch = make_patch(n=(4, 4, 3))
    bc = BoundarySpec(dirichlet={"x1-": (0.1, 0.0, 0.0)}, pin_rigid_body=False)
    dofs, values = bc.constrained_values(patch)
    n2, n3 = patch.basis.shape[1:]
    assert dofs.size == 3 * n2 * n3
    alphas = dofs // 3
    comps = dofs % 3
    np.testing.assert_allclose(
        values[comps == 0], patch.control_points[alphas[comps == 0], 0] + 0.1
    )
    with pytest.raises(InvalidArgumentError):
        BoundarySpec(dirichlet={"bogus": (0, 0, 0)})


def test_newton_zero_plasticity_exact():
    patch = make_patch()
    state, history = newton_solve(patch, zero_plastic(patch), Material(1.0, 0.3))
    assert len(history) - 1 <= 1
    assert np.array_equal(state.y, patch.control_points)


def test_newton_converges_on_screw(tmp_path):
    patch = make_patch(n=(8, 8, 5), box=(8.0, 8.0, 4.0), gamma=2.0)
    torsion = TorsionField(screw_dislocation(b=0.3, core_radius=1.0))
    plastic, _ = solve_plastic(patch, torsion)
    state, history = newton_solve(patch, plastic, Material(1.0, 0.3))
    rel = history[-1]["relative"]
    assert rel <= 1e-6
    assert len(history) - 1 <= 10
    energies = [h["energy"] for h in history]
    assert all(b < a for a, b in zip(energies, energies[1:]))
    path = tmp_path / "newton.csv"
    write_newton_history(path, history)
    assert path.read_text().startswith("iteration,residual")


def test_energy_quadratic_scaling_in_burgers():
    patch = make_patch(n=(8, 8, 5), box=(8.0, 8.0, 4.0), gamma=2.0)
    mat = Material(1.0, 0.3)
    energies = {}
    for b in (0.3, 0.15):
        plastic, _ = solve_plastic(patch, TorsionField(screw_dislocation(b=b)))
        state, _ = newton_solve(patch, plastic, mat)
        energies[b] = strain_energy(state)
    ratio = energies[0.3] / energies[0.15]
    assert 3.5 <= ratio <= 4.5


def test_objectivity_under_rotation():
    patch = make_patch()
    state, rng = random_state(patch, seed=6)
    W0 = strain_energy(state)
    # a random rotation via QR with positive determinant
    Q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    if np.linalg.det(Q) < 0:
        Q[:, 0] *= -1
    rotated = state.with_coeffs(state.y @ Q.T)
    W1 = strain_energy(rotated)
    assert abs(W1 - W0) <= 1e-10 * max(abs(W0), 1e-12)


def test_inverted_initial_state_raises():
    patch = make_patch(n=(4, 4, 3), box=(2.0, 2.0, 1.0))
    L = patch.domain_box[0]
    bc = BoundarySpec(
        dirichlet={"x1-": (2 * L, 0.0, 0.0), "x1+": (-2 * L, 0.0, 0.0)},
        pin_rigid_body=False,
    )
    with pytest.raises(InvertedElementError):
        newton_solve(patch, zero_plastic(patch), Material(1.0, 0.3), boundary=bc)


def test_newton_iteration_cap():
    patch = make_patch(n=(6, 6, 4))
    torsion = TorsionField(screw_dislocation(b=0.3, core_radius=1.0))
    plastic, _ = solve_plastic(patch, torsion)
    from dislomech.sparsela import SolverConfig

    with pytest.raises(ConvergenceError):
        newton_solve(patch, plastic, Material(1.0, 0.3),
                     config=SolverConfig(newton_maxiter=1))


def test_stress_zero_for_reference_state():
    patch = make_patch()
    state = ElasticState(patch, zero_plastic(patch), Material(1.0, 0.3))
    np.testing.assert_allclose(stress_at(state, (0.3, 0.4, 0.5)), 0.0, atol=1e-14)


def test_stress_many_matches_pointwise_chain():
    # stress_many must agree with the kernel chain green_strain ->
    # elastic_coefficients -> second_pk_stress at random points
    patch = make_patch()
    state, rng = random_state(patch, seed=7)
    pts = rng.uniform(0.1, 0.9, (5, 3))
    S = stress_many(state, pts)
    from dislomech.geometry import evaluate_field

    _, grad = evaluate_field(patch, state.y, pts, gradient=True)
    theta = state.plastic.evaluate_theta(pts)
    for k in range(5):
        vt = np.eye(3) + theta[k]
        g = vt.T @ vt
        E = green_strain(grad[k], vt)
        C = elastic_coefficients(np.linalg.inv(g), state.material)
        np.testing.assert_allclose(S[k], second_pk_stress(C, E), atol=1e-12)
