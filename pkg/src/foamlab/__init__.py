"""Volume-constrained threshold dynamics for multi-bubble foams on periodic grids."""

from .auction import AuctionParams, AuctionResult, VolumeTargets, assign, epsilon_schedule
from .energy import EnergyReport, pair_energy, total_energy
from .engine import EnergyTrace, SimParams, SmallBubbleWarning, evolve, mbo_step
from .errors import (
    AuctionError,
    ConfigurationError,
    ConvergenceError,
    FoamError,
    InfeasibleRampError,
    InsertionError,
    ParameterError,
)
from .field import GridGeom, Kernel, LabelField, SoftField, convolve
from .flows import FlowSchedule, InsertionEvent, multi_restart_search, quasi_static_ramp
from .seeding import SeedSpec, insert_bubble, random_voronoi_init

__version__ = "0.1.0"

__all__ = [
    "AuctionError",
    "AuctionParams",
    "AuctionResult",
    "ConfigurationError",
    "ConvergenceError",
    "EnergyReport",
    "EnergyTrace",
    "FlowSchedule",
    "FoamError",
    "GridGeom",
    "InfeasibleRampError",
    "InsertionError",
    "InsertionEvent",
    "Kernel",
    "LabelField",
    "ParameterError",
    "SeedSpec",
    "SimParams",
    "SmallBubbleWarning",
    "SoftField",
    "VolumeTargets",
    "assign",
    "convolve",
    "epsilon_schedule",
    "evolve",
    "insert_bubble",
    "mbo_step",
    "multi_restart_search",
    "pair_energy",
    "quasi_static_ramp",
    "random_voronoi_init",
    "total_energy",
]
