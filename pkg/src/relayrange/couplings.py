"""Pairwise dipole-dipole couplings, Stark-shifted detunings and the relay matrix.

Energies are ordinary frequencies in MHz, lengths in μm. The C3 constants
include the factor π of the usual ``π × 2.25 GHz μm³`` notation as part of
their numeric value.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, GeometryError
from .geometry import AtomArray, separation

REGIMES = ("room", "cryo")

_F_RESONANCE = 1.6
_P2_UP_DOWN = -0.39
_P2_BETA_ALPHA = -57.0


@dataclass(frozen=True)
class PhysicalParams:
    """Physical constants of the main/relay level scheme.

    Rates keep the units they are usually quoted in (kHz or Hz); use
    :meth:`main_rate` and :meth:`relay_rate` to get them in MHz (≡ 1/μs).
    """

    C3_up_alpha: float = np.pi * 2250.0
    C3_beta_alpha: float = np.pi * 1310.0
    C3_up_down: float = np.pi * 2250.0
    p2_up_down: float = _P2_UP_DOWN
    p2_beta_alpha: float = _P2_BETA_ALPHA
    delta0: float = -(_P2_BETA_ALPHA - _P2_UP_DOWN) * _F_RESONANCE**2
    F: float = 3.5
    lambda_mn: float = 7e-3
    gamma_bbr: float = 3.5
    gamma_cryo: float = 24.0
    gamma_ell: float = 10.0
    gamma_ell_cryo: float = 0.0

    def __post_init__(self):
        for name in ("C3_up_alpha", "C3_beta_alpha", "C3_up_down", "p2_up_down",
                     "p2_beta_alpha", "delta0", "F", "lambda_mn"):
            if not np.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")
        if self.lambda_mn <= 0:
            raise ConfigError("lambda_mn must be positive")
        if self.F < 0:
            raise ConfigError("F must be non-negative")
        for name in ("gamma_bbr", "gamma_cryo", "gamma_ell", "gamma_ell_cryo"):
            if not getattr(self, name) >= 0:
                raise ConfigError(f"{name} must be non-negative")

    def replace(self, **changes) -> "PhysicalParams":
        return dataclasses.replace(self, **changes)

    def main_rate(self, regime: str = "room") -> float:
        """Main-atom BBR/emission rate in MHz."""
        _check_regime(regime)
        return self.gamma_bbr * 1e-3 if regime == "room" else self.gamma_cryo * 1e-6

    def relay_rate(self, regime: str = "room") -> float:
        """Relay dissipation rate entering the relay matrix, in MHz."""
        _check_regime(regime)
        return self.gamma_ell * 1e-3 if regime == "room" else self.gamma_ell_cryo * 1e-3

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "PhysicalParams":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown physical parameter(s): {sorted(unknown)}")
        try:
            return cls(**{k: float(v) for k, v in doc.items()})
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "PhysicalParams":
        return cls.from_dict(json.loads(text))


def _check_regime(regime):
    if regime not in REGIMES:
        raise ConfigError(f"regime must be one of {REGIMES}, got {regime!r}")


def near_field_coupling(C3, r, theta):
    """Near-field coupling ``C3 (3cos²θ - 1) / r³`` (MHz for C3 in MHz μm³, r in μm).

    Broadcasts over array inputs.
    """
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise GeometryError("near-field coupling needs r > 0")
    value = C3 * (3.0 * np.cos(theta) ** 2 - 1.0) / r**3
    return value if np.ndim(value) else float(value)


def near_field_from_vectors(C3, vec):
    """Near-field coupling from connection vectors ``vec`` of shape ``(..., 2)``."""
    vec = np.asarray(vec, dtype=float)
    r2 = vec[..., 0] ** 2 + vec[..., 1] ** 2
    if np.any(r2 == 0):
        raise GeometryError("coincident atoms in coupling evaluation")
    return C3 * (3.0 * vec[..., 1] ** 2 - r2) / r2**2.5


def full_dd_coupling(gamma_i, gamma_j, lam, r, theta):
    """Full (near + far field) resonant dipole-dipole coupling.

    ``gamma_i, gamma_j`` set the overall scale (the result carries their unit),
    ``lam`` and ``r`` share a length unit. Real part: coherent exchange; imaginary
    part: collective dissipation.
    """
    if np.any(np.asarray(r) <= 0) or lam <= 0:
        raise GeometryError("full_dd_coupling needs r > 0 and lambda > 0")
    xi = 2.0 * np.pi * np.asarray(r, dtype=float) / lam
    phase = np.exp(1j * xi)
    angular = 3.0 * np.cos(theta) ** 2 - 1.0
    value = -1.5 * np.sqrt(gamma_i * gamma_j) * (
        np.sin(theta) ** 2 * phase / xi + angular * (phase / xi**3 - 1j * phase / xi**2)
    )
    return value if np.ndim(value) else complex(value)


def full_dd_near_field_limit(gamma_i, gamma_j, lam, r, theta):
    """The ξ → 0 part of :func:`full_dd_coupling` (its 1/ξ³ term)."""
    xi = 2.0 * np.pi * np.asarray(r, dtype=float) / lam
    value = -1.5 * np.sqrt(gamma_i * gamma_j) * (3.0 * np.cos(theta) ** 2 - 1.0) / xi**3
    return value if np.ndim(value) else float(value)


def forster_detuning(params: PhysicalParams, F: float | None = None) -> float:
    """Δ(F) = delta0 + (p2_beta_alpha - p2_up_down) F², in MHz."""
    F = params.F if F is None else F
    return params.delta0 + (params.p2_beta_alpha - params.p2_up_down) * F**2


def calibrate_delta0(params: PhysicalParams, F_resonance: float) -> PhysicalParams:
    """Return params whose zero-field offset puts the Förster resonance at ``F_resonance``."""
    if F_resonance < 0:
        raise ConfigError("F_resonance must be non-negative")
    delta0 = -(params.p2_beta_alpha - params.p2_up_down) * F_resonance**2
    return params.replace(delta0=delta0 + 0.0)


def main_relay_couplings(mains, relays, params: PhysicalParams):
    """Matrix ``V[..., i, mu]`` of main-relay couplings for positions ``(..., N, 2)``, ``(..., N_R, 2)``."""
    vec = np.asarray(mains)[..., :, None, :] - np.asarray(relays)[..., None, :, :]
    return near_field_from_vectors(params.C3_up_alpha, vec)


def relay_matrix_from_positions(relays, params: PhysicalParams, regime: str = "room"):
    """Relay matrix for relay positions ``(..., N_R, 2)``; see :func:`relay_matrix`."""
    relays = np.asarray(relays, dtype=float)
    n_r = relays.shape[-2]
    vec = relays[..., :, None, :] - relays[..., None, :, :]
    eye = np.eye(n_r, dtype=bool)
    r2 = np.sum(vec**2, axis=-1)
    if np.any(r2[..., ~eye] == 0):
        raise GeometryError("coincident relay atoms")
    safe = np.where(eye[..., None], 1.0, vec)
    offdiag = near_field_from_vectors(params.C3_beta_alpha, safe)
    diag = forster_detuning(params) - 1j * params.relay_rate(regime)
    return np.where(eye, diag, offdiag).astype(complex)


def coupling_vector(array: AtomArray, params: PhysicalParams, i: int) -> np.ndarray:
    """Couplings ``(V_i)_mu`` of main atom ``i`` to every relay, length N_R."""
    if not 0 <= i < array.N:
        raise IndexError(f"{i} is not a main-atom index (N={array.N})")
    return main_relay_couplings(array.main_positions[i : i + 1], array.relay_positions, params)[0]


def coupling_matrix(array: AtomArray, params: PhysicalParams) -> np.ndarray:
    """All coupling vectors stacked as rows, shape (N, N_R)."""
    return main_relay_couplings(array.main_positions, array.relay_positions, params)


def relay_matrix(array: AtomArray, params: PhysicalParams, regime: str = "room") -> np.ndarray:
    """Complex symmetric N_R × N_R matrix with (Δ - iγ) on the diagonal and relay-relay couplings off it."""
    if array.N_R < 1:
        raise GeometryError("relay_matrix needs at least one relay atom")
    return relay_matrix_from_positions(array.relay_positions, params, regime)


def pair_coupling(array: AtomArray, C3: float, a: int, b: int) -> float:
    """Near-field coupling between atoms ``a`` and ``b`` with the given C3."""
    r, theta = separation(array.positions[a] - array.positions[b])
    return near_field_coupling(C3, float(r), float(theta))
