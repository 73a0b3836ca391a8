"""Adiabatic elimination of the relay atoms.

All expressions are built from the bilinear form ``G_ij = V_i^T M^{-1} V_j``:

* couplings ``J_ij = -Re G_ij`` (i ≠ j),
* detunings ``δ_i = ω_ref - Re G_ii``,
* decay rates ``γ_i = γ_main + Im G_ii``.

The Eq.-(5)-style approximation without relay-relay coupling carries the same
leading minus sign, ``J_ij ≈ -(1/Δ) Σ_mu V_i,mu V_j,mu``, so that both agree when
``M ≈ Δ·1``. Published comparisons only involve |J|.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .couplings import (
    PhysicalParams,
    coupling_matrix,
    forster_detuning,
    main_relay_couplings,
    relay_matrix,
    relay_matrix_from_positions,
)
from .exceptions import EliminationError, ResonanceError
from .geometry import AtomArray

MAX_CONDITION = 1e9
DEFAULT_VALIDITY_THRESHOLD = 10.0


def _condition_numbers(M):
    s = np.linalg.svd(M, compute_uv=False)
    with np.errstate(divide="ignore", invalid="ignore"):
        return s[..., 0] / s[..., -1]


def bilinear_form(mains, relays, params: PhysicalParams, regime: str = "room"):
    """``G[..., i, j] = V_i^T M^{-1} V_j`` for batched positions.

    Raises :class:`EliminationError` if any relay matrix in the batch has a
    condition number above ``MAX_CONDITION``.
    """
    V = main_relay_couplings(mains, relays, params)
    M = relay_matrix_from_positions(relays, params, regime)
    cond = _condition_numbers(M)
    worst = float(np.max(cond))
    if not worst <= MAX_CONDITION:
        raise EliminationError(
            f"relay matrix is singular to working precision (condition number {worst:.3g})",
            condition_number=worst,
        )
    X = np.linalg.solve(M, np.swapaxes(V, -1, -2).astype(complex))
    G = V @ X
    return 0.5 * (G + np.swapaxes(G, -1, -2))


def _couplings_from_G(G):
    J = -G.real.copy()
    n = J.shape[-1]
    J[..., np.arange(n), np.arange(n)] = 0.0
    return J


def _bilinear(array: AtomArray, params, regime):
    return bilinear_form(array.main_positions, array.relay_positions, params, regime)


def effective_couplings(array: AtomArray, params: PhysicalParams, regime: str = "room") -> np.ndarray:
    """Effective exchange matrix J (MHz), symmetric with zero diagonal."""
    if array.N_R == 0:
        return np.zeros((array.N, array.N))
    return _couplings_from_G(_bilinear(array, params, regime))


def effective_couplings_diagonal_relay(array: AtomArray, params: PhysicalParams) -> np.ndarray:
    """J with relay-relay coupling and relay dissipation neglected (M = Δ·1)."""
    delta = forster_detuning(params)
    if delta == 0:
        raise ResonanceError("Δ = 0: the diagonal-relay approximation is undefined")
    if array.N_R == 0:
        return np.zeros((array.N, array.N))
    V = coupling_matrix(array, params)
    J = -(V @ V.T) / delta
    np.fill_diagonal(J, 0.0)
    return J


def effective_detunings(
    array: AtomArray,
    params: PhysicalParams,
    omega_up_dressed: float = 0.0,
    regime: str = "room",
) -> np.ndarray:
    """Per-site effective detunings δ^eff (MHz) relative to the reference ``omega_up_dressed``."""
    if array.N_R == 0:
        return np.full(array.N, float(omega_up_dressed))
    G = _bilinear(array, params, regime)
    return omega_up_dressed - np.diagonal(G).real.copy()


def effective_decay(array: AtomArray, params: PhysicalParams, regime: str = "room") -> np.ndarray:
    """Per-site effective decay rates γ^eff (MHz)."""
    gamma_main = params.main_rate(regime)
    if array.N_R == 0:
        return np.full(array.N, gamma_main)
    G = _bilinear(array, params, regime)
    return gamma_main + np.diagonal(G).imag.copy()


@dataclass(frozen=True)
class AdiabaticityReport:
    lambda_lowest: float
    max_abs_delta_eff: float
    max_abs_J: float
    max_gamma_eff: float
    ratio: float
    valid: bool
    threshold: float = DEFAULT_VALIDITY_THRESHOLD

    def to_dict(self) -> dict:
        return {
            "lambda_lowest": self.lambda_lowest,
            "max_abs_delta_eff": self.max_abs_delta_eff,
            "max_abs_J": self.max_abs_J,
            "max_gamma_eff": self.max_gamma_eff,
            "ratio": self.ratio,
            "valid": self.valid,
            "threshold": self.threshold,
        }


def _report_from(lam, J, delta, gamma, threshold):
    max_delta = float(np.max(np.abs(delta - delta.mean()))) if delta.size else 0.0
    max_J = float(np.max(np.abs(J))) if J.size else 0.0
    max_gamma = float(np.max(gamma)) if gamma.size else 0.0
    scale = max(max_delta, max_J, max_gamma)
    ratio = lam / scale if scale > 0 else np.inf
    return AdiabaticityReport(
        lambda_lowest=float(lam),
        max_abs_delta_eff=max_delta,
        max_abs_J=max_J,
        max_gamma_eff=max_gamma,
        ratio=float(ratio),
        valid=bool(ratio > threshold),
        threshold=threshold,
    )


def adiabaticity_report(
    array: AtomArray,
    params: PhysicalParams,
    regime: str = "room",
    threshold: float = DEFAULT_VALIDITY_THRESHOLD,
) -> AdiabaticityReport:
    """Compare the slowest relay eigenvalue (of B = -iM) with the effective energy scales.

    δ^eff enters relative to its mean, since a common offset does not affect
    exchange dynamics.
    """
    if array.N_R == 0:
        return AdiabaticityReport(np.inf, 0.0, 0.0, params.main_rate(regime), np.inf, True, threshold)
    M = relay_matrix(array, params, regime)
    lam = float(np.min(np.abs(np.linalg.eigvals(-1j * M))))
    try:
        G = _bilinear(array, params, regime)
    except EliminationError:
        return AdiabaticityReport(lam, np.nan, np.nan, np.nan, 0.0, False, threshold)
    J = _couplings_from_G(G)
    delta = -np.diagonal(G).real
    gamma = params.main_rate(regime) + np.diagonal(G).imag
    return _report_from(lam, J, delta, gamma, threshold)


@dataclass(frozen=True)
class EffectiveModel:
    """Result of eliminating the relays: couplings, detunings, decay rates (all MHz)."""

    J: np.ndarray
    delta_eff: np.ndarray
    gamma_eff: np.ndarray
    adiabaticity: AdiabaticityReport | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        J = np.asarray(self.J, float)
        if J.ndim != 2 or J.shape[0] != J.shape[1]:
            raise ValueError("J must be a square matrix")
        if not np.allclose(J, J.T, rtol=0, atol=1e-12 * max(1.0, np.abs(J).max(initial=0))):
            raise ValueError("J must be symmetric")

    @property
    def N(self) -> int:
        return len(self.delta_eff)

    def decay_violations(self) -> np.ndarray:
        """Indices of sites with negative effective decay (reported, never clamped)."""
        return np.flatnonzero(np.asarray(self.gamma_eff) < 0)

    def to_dict(self) -> dict:
        return {
            "J": np.asarray(self.J).tolist(),
            "delta_eff": np.asarray(self.delta_eff).tolist(),
            "gamma_eff": np.asarray(self.gamma_eff).tolist(),
            "adiabaticity": None if self.adiabaticity is None else self.adiabaticity.to_dict(),
            "metadata": self.metadata,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, doc: dict) -> "EffectiveModel":
        adi = doc.get("adiabaticity")
        return cls(
            J=np.array(doc["J"], float),
            delta_eff=np.array(doc["delta_eff"], float),
            gamma_eff=np.array(doc["gamma_eff"], float),
            adiabaticity=None if adi is None else AdiabaticityReport(**adi),
            metadata=doc.get("metadata", {}),
        )

    def J_to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["i", "j", "J"])
        for i, row in enumerate(np.asarray(self.J)):
            for j, value in enumerate(row):
                writer.writerow([i, j, f"{value:.17g}"])
        return buf.getvalue()


def eliminate(
    array: AtomArray,
    params: PhysicalParams,
    regime: str = "room",
    omega_up_dressed: float = 0.0,
    threshold: float = DEFAULT_VALIDITY_THRESHOLD,
) -> EffectiveModel:
    """Full effective model for ``array``: J, δ^eff, γ^eff and the validity report."""
    report = adiabaticity_report(array, params, regime, threshold)
    if array.N_R == 0:
        J = np.zeros((array.N, array.N))
        delta = np.full(array.N, float(omega_up_dressed))
        gamma = np.full(array.N, params.main_rate(regime))
    else:
        G = _bilinear(array, params, regime)
        J = _couplings_from_G(G)
        delta = omega_up_dressed - np.diagonal(G).real.copy()
        gamma = params.main_rate(regime) + np.diagonal(G).imag.copy()
    return EffectiveModel(
        J=J,
        delta_eff=delta,
        gamma_eff=gamma,
        adiabaticity=report,
        metadata={"regime": regime, "N": array.N, "N_R": array.N_R},
    )
