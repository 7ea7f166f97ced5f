"""Decentralised stochastic power control for fleets of refrigerators."""

__version__ = "0.1.0"

from .controller import ControllerState, initial_controller_state, update_compressor_state
from .model import NOMINAL, ApplianceModel, DerivedQuantities, DeviceState, derive_quantities
from .signals import ReferenceSignal, canonical_test_signal, constant_signal, load_signal
from .simulator import FleetConfig, ModelErrorMode, SimConfig, build_fleet, run_simulation

__all__ = [
    "NOMINAL", "ApplianceModel", "ControllerState", "DerivedQuantities", "DeviceState",
    "FleetConfig", "ModelErrorMode", "ReferenceSignal", "SimConfig", "build_fleet",
    "canonical_test_signal", "constant_signal", "derive_quantities", "initial_controller_state",
    "load_signal", "run_simulation", "update_compressor_state",
]
