"""Kinetic BGK solver for scalar conservation laws with rough flux and Brownian forcing."""

from .rough_path import GeometricRoughPath, TimeGrid, joint_lift, lift_smooth_path, sample_brownian_lift, time_lift
from .coefficients import (
    FluxModel,
    assemble_characteristic_fields,
    build_model,
    burgers,
    linear_multiplicative_noise,
    linear_transport,
    modulated_burgers,
)
from .characteristics import FlowField, forward_flow, inverse_flow
from .kinetic import KineticGrid, KineticState, bgk_step, density, duhamel_solve, equilibrium

__all__ = [
    "GeometricRoughPath", "TimeGrid", "joint_lift", "lift_smooth_path", "sample_brownian_lift",
    "time_lift", "FluxModel", "assemble_characteristic_fields", "build_model", "burgers",
    "linear_multiplicative_noise", "linear_transport", "modulated_burgers", "FlowField",
    "forward_flow", "inverse_flow", "KineticGrid", "KineticState", "bgk_step", "density",
    "duhamel_solve", "equilibrium",
]
