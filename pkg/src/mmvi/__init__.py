"""r-adaptive variational integrators for 1+1 dimensional Lagrangian field theories."""
from .constraints import ConstraintSet
from .errors import (
    MeshCrossing,
    NoConvergence,
    NumericalFailure,
    SingularJacobian,
    SingularKkt,
    SingularMatrix,
)
from .fieldtheory import DensitySpec, SolitonParams, sine_gordon
from .harness import ExperimentConfig, convergence_study, energy_study, linf_error, run_experiment
from .semidiscrete import DofState, MeshConfig, VelocityState
from .solver import BandedMatrix, NewtonOptions, newton_solve
from .tableaus import PartitionedTableau, get_tableau

__version__ = "0.1.0"

__all__ = [
    "BandedMatrix",
    "ConstraintSet",
    "DensitySpec",
    "DofState",
    "ExperimentConfig",
    "MeshConfig",
    "MeshCrossing",
    "NewtonOptions",
    "NoConvergence",
    "NumericalFailure",
    "PartitionedTableau",
    "SingularJacobian",
    "SingularKkt",
    "SingularMatrix",
    "SolitonParams",
    "VelocityState",
    "convergence_study",
    "energy_study",
    "get_tableau",
    "linf_error",
    "newton_solve",
    "sine_gordon",
    "run_experiment",
]
