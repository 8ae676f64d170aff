"""Scratch: validate plastic assembly against FD of the discrete functional."""
import numpy as np

from dislomech.forms import TorsionField, screw_dislocation, form_inner_product
from dislomech.geometry import AssemblyGrid, box_patch
from dislomech.plastic import (
    KroneckerSaddleOperator,
    assemble_plastic_system,
    free_dof_mask,
    solve_plastic,
)
from dislomech.splines import TensorBasis3D, make_graded_knot_vector


def make_patch(n=(6, 6, 4), p=(2, 2, 2), box=(8.0, 8.0, 4.0), gamma=1.5):
    basis = TensorBasis3D(tuple(make_graded_knot_vector(n[d], p[d], gamma) for d in range(3)))
    return box_patch(basis, box)


def functional_value(patch, torsion, x, i):
    """I[Theta^i, lambda^i] by quadrature from the stacked coefficients x."""
    n = patch.basis.num_basis
    theta = np.zeros((n, 3, 3))
    for j in range(3):
        theta[:, i, j] = x[j * n:(j + 1) * n]
    lam = x[3 * n:]
    grid = AssemblyGrid(patch)
    total = 0.0
    for chunk in grid.chunks():
        T = torsion.coefficients(chunk.x_phys)
        th_act = theta[chunk.active]
        grad = np.einsum("sqbk,sbij->sqijk", chunk.grad_x, th_act)
        dTheta = np.transpose(grad, (0, 1, 2, 4, 3)) - grad
        c = T - dTheta
        lam_q = np.einsum("sqb,sb->sq", chunk.values, lam[chunk.active])
        div_i = -np.einsum("sqjj->sq", grad[:, :, i, :, :])
        total += float((chunk.weights * (0.5 * form_inner_product(c, c, 2) + lam_q * div_i)).sum())
    return total


patch = make_patch()
torsion = TorsionField(screw_dislocation(b=1.0, core_radius=1.0))
n = patch.basis.num_basis

sys_t = assemble_plastic_system(patch, torsion, method="tensor")
sys_q = assemble_plastic_system(patch, torsion, method="quadrature")
diff = (sys_t.matrix.csr - sys_q.matrix.csr)
print("tensor vs quadrature matrix max diff:", 0 if diff.nnz == 0 else abs(diff.data).max())
print("rhs max diff:", np.abs(sys_t.rhs - sys_q.rhs).max())
print("symmetry error:", sys_t.matrix.symmetry_error(), "max|A|", sys_t.matrix.max_abs())

# operator matvec vs matrix
op = KroneckerSaddleOperator(patch)
rng = np.random.default_rng(0)
v = rng.standard_normal(4 * n)
print("operator vs matrix matvec:", np.abs(op.matvec(v) - sys_t.matrix.matvec(v)).max())

# FD of functional vs A x + b on free dofs (BC-constrained space)
mask = free_dof_mask(patch.basis, pin_lambda=False)
x0 = rng.standard_normal(4 * n) * 0.1
x0[~mask] = 0.0
i = 2
g_exact = sys_t.matrix.matvec(x0) + sys_t.rhs[i]
h = 1e-6
idx_sample = rng.choice(np.where(mask)[0], size=40, replace=False)
errs = []
for k in idx_sample:
    xp = x0.copy(); xp[k] += h
    xm = x0.copy(); xm[k] -= h
    fd = (functional_value(patch, torsion, xp, i) - functional_value(patch, torsion, xm, i)) / (2 * h)
    errs.append(abs(fd - g_exact[k]) / max(1.0, abs(fd)))
print("max FD-gradient relative error on free dofs:", max(errs))

# small solve: zero torsion -> zero field; screw -> finite residuals
field, report = solve_plastic(patch, torsion)
print("solve report:", report.as_dict())
print("theta range:", field.theta.min(), field.theta.max())
print("nonzero value rows i:", [i for i in range(3) if np.abs(field.theta[:, i, :]).max() > 0])
