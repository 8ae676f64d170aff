"""Plastic and elastic deformation fields around dislocations, discretised
with NURBS-based isogeometric analysis.

The package solves two chained problems on a box domain:

1. a constrained least-squares saddle-point problem for the plastic
   deformation field of a prescribed dislocation density (MINRES), and
2. strain-energy minimisation of a St. Venant--Kirchhoff solid on the
   resulting intermediate configuration (Newton--Raphson with PCG).

Validation is against classical Volterra stress fields and a
homotopy-operator construction of the plastic field.
"""

__version__ = "0.1.0"

from .splines import (  # noqa: F401
    GradingSpec,
    KnotVector,
    TensorBasis3D,
    bspline_derivatives,
    bspline_eval_span,
    make_graded_knot_vector,
    nurbs_basis,
)
from .geometry import (  # noqa: F401
    Patch,
    QuadratureRule,
    assemble_quadrature,
    box_patch,
    gauss_rule,
    geometry_map,
    jacobian,
    quadrature_rule,
)
from .forms import (  # noqa: F401
    DislocationSpec,
    TorsionField,
    edge_dislocation,
    form_inner_product,
    hodge_star_1form,
    radial_density,
    screw_dislocation,
    torsion_coefficients,
)
from .sparsela import (  # noqa: F401
    SolverConfig,
    SparseSymMatrix,
    jacobi_preconditioner,
    minres_solve,
    pcg_solve,
)
from .plastic import (  # noqa: F401
    PlasticField,
    ResidualReport,
    apply_normal_bc,
    assemble_plastic_system,
    burgers_circuit,
    load_plastic_field,
    residual_norms,
    save_plastic_field,
    solve_plastic,
    theta_at,
)
from .elastic import (  # noqa: F401
    BoundarySpec,
    ElasticState,
    Material,
    elastic_coefficients,
    green_strain,
    newton_solve,
    residual_vector,
    second_pk_stress,
    strain_energy,
    stress_at,
    tangent_matrix,
)
from .oracles import (  # noqa: F401
    VolterraParams,
    fd_gradient,
    homotopy_theta,
    volterra_edge_stress,
    volterra_screw_stress,
)
from .pipeline import RunConfig, parse_config, run_pipeline  # noqa: F401
