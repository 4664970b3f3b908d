"""Whole-body balance control toolkit for floating-base legged robots.

Subpackages cover the robot description (:mod:`wholebody.model`), rigid-body
dynamics (:mod:`wholebody.dynamics`), the strict-priority hierarchical QP
solver (:mod:`wholebody.hqp`), the balance controller
(:mod:`wholebody.control`), dynamic parameter identification
(:mod:`wholebody.identification`), and a scenario simulator
(:mod:`wholebody.sim`).
"""

from wholebody.model import (
    RobotModel,
    RobotState,
    load_model,
    serialize_model,
    build_biped,
    build_planar_triple,
    build_pendulum,
)
from wholebody.hqp import Level, HqpSolution, HierarchySolver, solve_qp
from wholebody.control import (
    BalanceController,
    HierarchyConfig,
    JointControlParams,
    References,
    WbcSolution,
    build_hierarchy,
    extract_torque,
    friction_compensation,
    initial_references,
    joint_command,
    measured_zmp,
    plan_references,
)
from wholebody.identification import (
    DynamicParams,
    FourierTrajectory,
    IdentDataset,
    base_parameters,
    estimate_parameters,
    eval_trajectory,
    optimize_excitation,
    predict_torque,
    stack_regressor,
)
from wholebody.sim import (
    DisturbanceProfile,
    Impulse,
    ScenarioConfig,
    ScenarioResult,
    World,
    contact_wrench,
    run_scenario,
    save_log,
    step,
)

__all__ = [
    "RobotModel",
    "RobotState",
    "load_model",
    "serialize_model",
    "build_biped",
    "build_planar_triple",
    "build_pendulum",
    "Level",
    "HqpSolution",
    "HierarchySolver",
    "solve_qp",
    "BalanceController",
    "HierarchyConfig",
    "JointControlParams",
    "References",
    "WbcSolution",
    "build_hierarchy",
    "extract_torque",
    "friction_compensation",
    "initial_references",
    "joint_command",
    "measured_zmp",
    "plan_references",
    "DynamicParams",
    "FourierTrajectory",
    "IdentDataset",
    "base_parameters",
    "estimate_parameters",
    "eval_trajectory",
    "optimize_excitation",
    "predict_torque",
    "stack_regressor",
    "DisturbanceProfile",
    "Impulse",
    "ScenarioConfig",
    "ScenarioResult",
    "World",
    "contact_wrench",
    "run_scenario",
    "save_log",
    "step",
]

__version__ = "0.1.0"
