"""Fixed-length dimer saddle search with preconditioning and linesearch."""

from .core import (
    DimerEvaluation,
    DimerState,
    EnergyModel,
    LinearModel,
    QuadraticModel,
    dimer_energy,
    evaluate_dimer,
    rotation_residual,
    translation_residual,
)
from .errors import (
    ConfigError,
    DegenerateInput,
    DimerError,
    EmptyFreeSet,
    MetricSolveFailure,
    NewtonDivergence,
    NonFiniteValue,
    RootBracketFailure,
    RotationStall,
    SingularMetric,
)
from .metrics import (
    IdentityMetric,
    MatrixMetric,
    MetricPolicy,
    Triangulation,
    connectivity_metric,
    delaunay,
    identity_metric,
    stabilized_laplacian_metric,
    unit_square_mesh,
)
from .problems import (
    AsymmetricWell1D,
    DoubleWell1D,
    MorseVacancy,
    PhaseField,
    Quartic2D,
    build_morse_vacancy,
    build_phase_field,
    doublewell_turning_points,
)
from .solvers import (
    SolveOutcome,
    SolverConfig,
    Status,
    rotate,
    run_exact_rotation_dimer,
    run_linesearch_dimer,
    run_simple_dimer,
)

__version__ = "0.1.0"
