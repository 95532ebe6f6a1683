from .params import FIXED_STEP_S, MAX_STEP_S, SimParams, default_params, load_sim_params
from .testbed import (
    FLAG_AT_HARD_STOP,
    FLAG_DISLODGED,
    GripContact,
    ResetMotor,
    SensorFrame,
    SimStateError,
    TestbedSim,
    TestbedState,
    validate_grip,
)
from . import fsr

__all__ = [
    "FIXED_STEP_S",
    "MAX_STEP_S",
    "SimParams",
    "default_params",
    "load_sim_params",
    "FLAG_AT_HARD_STOP",
    "FLAG_DISLODGED",
    "GripContact",
    "ResetMotor",
    "SensorFrame",
    "SimStateError",
    "TestbedSim",
    "TestbedState",
    "validate_grip",
    "fsr",
]
