"""Relay-atom mediated tunable-range dipolar interactions in atom arrays."""

from .analytics import (
    PowerLawFit,
    PowerLawRegressor,
    ScanGrid,
    ScanResult,
    exponent_scan,
    fit_power_law,
    mirrored_pair_closed_form,
    mirrored_pair_taylor,
)
from .couplings import PhysicalParams, forster_detuning, full_dd_coupling, near_field_coupling
from .effective import AdiabaticityReport, EffectiveModel, adiabaticity_report, eliminate
from .exceptions import (
    ConfigError,
    DimensionError,
    EliminationError,
    GeometryError,
    InsufficientDataError,
    IntegrationError,
    RelayRangeError,
    ResonanceError,
)
from .geometry import MAGIC_ANGLE, AtomArray, AtomRole, build_chain_mirrored, build_pair_mirrored

__version__ = "0.1.0"

__all__ = [
    "AdiabaticityReport",
    "AtomArray",
    "AtomRole",
    "ConfigError",
    "DimensionError",
    "EffectiveModel",
    "EliminationError",
    "GeometryError",
    "InsufficientDataError",
    "IntegrationError",
    "MAGIC_ANGLE",
    "PhysicalParams",
    "PowerLawFit",
    "PowerLawRegressor",
    "RelayRangeError",
    "ResonanceError",
    "ScanGrid",
    "ScanResult",
    "adiabaticity_report",
    "build_chain_mirrored",
    "build_pair_mirrored",
    "eliminate",
    "exponent_scan",
    "fit_power_law",
    "forster_detuning",
    "full_dd_coupling",
    "mirrored_pair_closed_form",
    "mirrored_pair_taylor",
    "near_field_coupling",
]
