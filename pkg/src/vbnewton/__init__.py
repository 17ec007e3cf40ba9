"""Newton's method for sections of vector bundles over embedded manifolds."""

from .bundle import (
    FibreElement,
    LagrangeData,
    NewtonOperator,
    NewtonProblem,
    evaluate,
    lagrange_data,
    newton_operator,
    residual_norm,
)
from .errors import (
    DegenerateRetraction,
    DimensionMismatch,
    EvaluationFailure,
    OutOfInjectivityRegion,
    RankDeficiency,
    SingularNewtonOperator,
    SingularTransport,
    TransportError,
    UnsupportedKind,
    VBNewtonError,
    ZeroNewtonDirection,
)
from .geometry import (
    ConnectionMap,
    ConstraintManifold,
    Euclidean,
    Manifold,
    ProductManifold,
    SkewSphere,
    Sphere,
    TransportKind,
)
from .linalg import TangentBasis, solve_newton_system, tangent_basis
from .solver import (
    IterationRecord,
    SolveOutcome,
    SolverConfig,
    damped_newton,
    integrate_differential_newton_path,
    local_newton,
    newton_direction,
    newton_path_residual,
    simplified_newton_direction,
    theta_estimate,
)

__version__ = "0.1.0"
