"""Dynamic model identification toolkit for cable-coupled manipulators.

Builds linear torque regressors over a spanning-tree model with affine
motor-to-joint couplings, finds identifiable base parameters, optimizes
periodic excitation trajectories, processes logged data, and solves the
physically-feasible identification problem.  Ships ready-to-use master and
patient arm models plus a synthetic benchmark for end-to-end validation.
"""

from .model import (
    Box,
    CableSpec,
    CouplingMap,
    JointLimit,
    JointSpec,
    ModelError,
    ModelParseError,
    ModelValidationError,
    RobotModel,
    SpringSpec,
    load_model,
    model_from_dict,
    save_model,
    validate_coupling,
)
from .kinematics import (
    CoordinateState,
    FramePose,
    dh_transform,
    expand_coordinates,
    frame_positions,
)
from .regressor import (
    BaseReduction,
    ParameterLayout,
    ParameterVector,
    SpringGeometryError,
    barycentric_block,
    base_reduction,
    cable_torque,
    friction_regressor,
    full_regressor,
    inertial_regressor,
    motor_inertia_regressor,
    parameter_layout,
    sample_states,
    spring_regressor,
)
from .excitation import (
    ConstraintReport,
    FourierTrajectory,
    OptimizationConfig,
    OptimizationResult,
    TrajectoryError,
    check_constraints,
    condition_objective,
    eval_trajectory,
    load_trajectory,
    optimize_trajectory,
    random_feasible_trajectory,
    save_trajectory,
)
from .signals import (
    JointLog,
    ProcessedLog,
    butterworth_zero_phase,
    differentiate,
    process_log,
    read_log,
    write_log,
)
from .identification import (
    IdentificationProblem,
    IdentifiedParameters,
    SolverFailure,
    StandardLink,
    feasibility_margins,
    fit_cable_polynomial,
    read_parameters,
    recover_standard,
    relative_prediction_error,
    solve_feasible,
    solve_ols_base,
    stack_problem,
    write_parameters,
)
from .synthbench import (
    GroundTruth,
    lagrangian_oracle,
    oracle_regressor,
    sample_feasible_parameters,
    simulate_log,
)

__version__ = "0.1.0"

SHIPPED_MODELS = ("mtm", "psm")


def shipped_model_path(name: str):
    """Path to a model configuration bundled with the package."""
    from importlib.resources import files

    if name not in SHIPPED_MODELS:
        raise ValueError(f"unknown shipped model {name!r}; have {SHIPPED_MODELS}")
    return files("dynident.data").joinpath(f"{name}.model")


def load_shipped_model(name: str) -> RobotModel:
    """Load one of the models bundled with the package ('mtm' or 'psm')."""
    return load_model(shipped_model_path(name))
