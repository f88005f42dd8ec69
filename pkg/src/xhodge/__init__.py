"""Three-part decomposition u = h + rot w + grad p of 3D vector fields on a
truncated exterior domain, with both harmonic-trace flavors and full
diagnostics."""

from .errors import ContractViolation, FieldFormatError, GeometryError, SolverError
from .geometry import (Ball, DomainSpec, GridTopology, NoObstacle, SolidTorus,
                       Union, build_domain, surface_measure)
from .fieldops import (BoundaryPolicy, EdgeField, FaceField, ScalarField,
                       curl_edge_to_face, curl_face_to_edge, divergence,
                       gradient, inner_product, l2_norm, lr_norm,
                       sample_analytic)
from .linsolve import (LinearOperator, SolveOptions, SolveStats, cg_solve,
                       orthonormalize, project_out)
from .scalarpotential import (FREE_CONSTANT, NATURAL_NEUMANN, ZERO_DIRICHLET,
                              PressureSolution, solve_q0, solve_weak_dirichlet,
                              solve_weak_neumann, translation_harmonics)
from .vecpotential import (V_FLAVOR, X_FLAVOR, VectorPotentialSolution,
                           assemble_curlcurl_operator, solve_vector_potential)
from .decompose import (HarmonicBasisEstimate, HodgeParts, DiagnosticsReport,
                        decompose_normal, decompose_tangential,
                        estimate_harmonic_dimension, inequality_probe)

__version__ = "0.1.0"
