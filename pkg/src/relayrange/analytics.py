"""Analytic mirrored-pair couplings, power-law fits and geometry scans.

The closed form and its inverse-distance expansion describe the mirrored pair
with relay-relay coupling neglected and both mains on the magic-angle line.
They carry the same overall sign as :func:`relayrange.effective.effective_couplings`.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .couplings import PhysicalParams, forster_detuning, near_field_coupling
from .effective import bilinear_form, effective_couplings
from .exceptions import GeometryError, InsufficientDataError, RelayRangeError, ResonanceError
from .geometry import (
    DEFAULT_MIN_DISTANCE,
    MAGIC_ANGLE,
    build_chain_mirrored,
    min_pairwise_distance,
    mirrored_pair_positions,
)

#: Couplings below this magnitude (MHz) are treated as numerically zero in fits.
ZERO_COUPLING = 1e-12


# --------------------------------------------------------------------------
# closed form and expansion


def _reduced_coefficients(r_imu, theta_imu, theta_ij):
    beta = np.asarray(theta_imu, float) - np.pi / 2
    beta_ij = np.asarray(theta_ij, float) - np.pi / 2
    r_imu = np.asarray(r_imu, float)
    B = -2 * r_imu * np.cos(beta - beta_ij) + 6 * r_imu * np.cos(beta + beta_ij)
    C = -3 * r_imu**2 * np.cos(2 * beta) + r_imu**2
    D = -2 * r_imu * np.cos(beta - beta_ij)
    E = r_imu**2
    return B, C, D, E


def _prefactor(r_imu, theta_imu, Delta, C3):
    if np.any(np.asarray(Delta) == 0):
        raise ResonanceError("Δ = 0: mirrored-pair formulas are undefined")
    return -2.0 / Delta * near_field_coupling(C3, r_imu, theta_imu) * C3


def mirrored_pair_closed_form(r_ij, r_imu, theta_imu, Delta, C3, theta_ij=MAGIC_ANGLE):
    """Exact mirrored-pair coupling without relay-relay interaction (MHz).

    With the mains on the magic-angle line this equals
    ``-(2/Δ) V(r_imu, θ_imu) V(r_jmu, θ_jmu)``, written in terms of the
    relay offset from main ``i`` only.
    """
    r = np.asarray(r_ij, float)
    if np.any(r <= 0):
        raise GeometryError("r_ij must be positive")
    B, C, D, E = _reduced_coefficients(r_imu, theta_imu, theta_ij)
    denom = 1 + D / r + E / r**2
    if np.any(denom <= 1e-14):
        raise GeometryError("relay coincides with the far main atom")
    bracket = (B / r + C / r**2) / (2 * r**3 * denom**2.5)
    value = _prefactor(r_imu, theta_imu, Delta, C3) * bracket
    return value if np.ndim(value) else float(value)


def taylor_coefficients(r_imu, theta_imu, theta_ij=MAGIC_ANGLE):
    """Coefficients ``(c4, c5, c6)`` of the 1/r_ij expansion of the closed-form bracket."""
    B, C, D, E = _reduced_coefficients(r_imu, theta_imu, theta_ij)
    c4 = B / 2
    c5 = C / 2 - 5 * B * D / 4
    c6 = -(B / 2 * (5 * E / 2 - 35 * D**2 / 8) + 5 * C * D / 4)
    return c4, c5, c6


def mirrored_pair_taylor(r_ij, r_imu, theta_imu, Delta, C3, order=4, theta_ij=MAGIC_ANGLE):
    """Partial sum of the large-distance expansion through ``r_ij**-order`` (order 4, 5 or 6)."""
    if order not in (4, 5, 6):
        raise ValueError(f"order must be 4, 5 or 6, got {order}")
    r = np.asarray(r_ij, float)
    if np.any(r <= 0):
        raise GeometryError("r_ij must be positive")
    coeffs = taylor_coefficients(r_imu, theta_imu, theta_ij)
    total = sum(c / r ** (4 + k) for k, c in enumerate(coeffs[: order - 3]))
    value = _prefactor(r_imu, theta_imu, Delta, C3) * total
    return value if np.ndim(value) else float(value)


# --------------------------------------------------------------------------
# power-law fitting


@dataclass(frozen=True)
class PowerLawFit:
    """``y ≈ a / x**b`` fitted in log10-log10 space; ``rmse`` is in log10 units."""

    a: float
    b: float
    rmse: float
    window: tuple[float, float]
    n_points: int
    n_dropped: int = 0

    def predict(self, x):
        return self.a / np.asarray(x, float) ** self.b

    def to_dict(self) -> dict:
        return {
            "a": self.a,
            "b": self.b,
            "rmse": self.rmse,
            "window": list(self.window),
            "n_points": self.n_points,
            "n_dropped": self.n_dropped,
        }


class PowerLawRegressor(RegressorMixin, BaseEstimator):
    """Least-squares fit of ``log10 y = log10 a - b log10 x``.

    Points outside ``window`` are ignored; points inside it with
    ``y <= min_value`` are dropped and counted in ``n_dropped_``.

    Attributes
    ----------
    amplitude_, exponent_ : float
        Fitted ``a`` and ``b``.
    rmse_ : float
        Root-mean-square log10 residual.
    window_ : tuple
        Abscissa range actually used.
    """

    def __init__(self, window=None, min_value=ZERO_COUPLING, min_points=4):
        self.window = window
        self.min_value = min_value
        self.min_points = min_points

    def _prepare(self, X):
        x = np.asarray(X, dtype=float)
        if x.ndim == 2:
            if x.shape[1] != 1:
                raise ValueError("PowerLawRegressor takes a single feature")
            x = x[:, 0]
        if x.ndim != 1:
            raise ValueError("X must be 1-D or a single column")
        return x

    def fit(self, X, y):
        x = self._prepare(X)
        y = np.asarray(y, dtype=float).ravel()
        if len(x) != len(y):
            raise ValueError(f"X has {len(x)} samples but y has {len(y)}")
        if np.any(x <= 0):
            raise ValueError("abscissa values must be positive")
        inside = np.ones(len(x), bool)
        if self.window is not None:
            lo, hi = self.window
            inside = (x >= lo) & (x <= hi)
        usable = inside & (y > self.min_value) & np.isfinite(y)
        n = int(usable.sum())
        if n < self.min_points:
            raise InsufficientDataError(
                f"{n} usable points for a power-law fit (need {self.min_points}); "
                f"{int(inside.sum()) - n} non-positive or negligible values dropped"
            )
        lx, ly = np.log10(x[usable]), np.log10(y[usable])
        design = np.column_stack([np.ones(n), lx])
        (intercept, slope), *_ = np.linalg.lstsq(design, ly, rcond=None)
        resid = ly - (intercept + slope * lx)
        self.amplitude_ = float(10.0**intercept)
        self.exponent_ = float(-slope)
        self.rmse_ = float(np.sqrt(np.mean(resid**2)))
        self.window_ = (float(x[usable].min()), float(x[usable].max()))
        self.n_points_ = n
        self.n_dropped_ = int(inside.sum()) - n
        return self

    def predict(self, X):
        check_is_fitted(self, "exponent_")
        return self.amplitude_ / self._prepare(X) ** self.exponent_

    def to_fit(self) -> PowerLawFit:
        check_is_fitted(self, "exponent_")
        return PowerLawFit(self.amplitude_, self.exponent_, self.rmse_, self.window_,
                           self.n_points_, self.n_dropped_)


def fit_power_law(x, y, window=None) -> PowerLawFit:
    """Fit ``y = a / x**b`` to the positive points of ``(x, y)`` inside ``window``."""
    return PowerLawRegressor(window=window).fit(x, y).to_fit()


# --------------------------------------------------------------------------
# coupling curves


@dataclass(frozen=True)
class PairWindow:
    """Sampled main-main distances (μm) for pair fits."""

    r_min: float = 10.0
    r_max: float = 30.0
    r_step: float = 0.5

    def values(self) -> np.ndarray:
        n = int(round((self.r_max - self.r_min) / self.r_step)) + 1
        if n < 1 or self.r_step <= 0:
            raise ValueError("empty pair window")
        return np.linspace(self.r_min, self.r_min + (n - 1) * self.r_step, n)


@dataclass(frozen=True)
class ChainWindow:
    """Site separations |i - j| used for chain fits."""

    d_min: int = 2
    d_max: int = 10


def pair_coupling_curve(
    r_values,
    r_imu: float,
    theta_imu: float,
    params: PhysicalParams,
    regime: str = "room",
    min_distance: float = DEFAULT_MIN_DISTANCE,
):
    """Mirrored-pair J(r_ij) from the full elimination, batched over ``r_values``.

    Returns ``(J, gamma_eff)`` with shapes ``(K,)`` and ``(K, 2)``.
    """
    r_values = np.atleast_1d(np.asarray(r_values, float))
    mains, relays = mirrored_pair_positions(r_values, r_imu, theta_imu)
    closest = min_pairwise_distance(np.concatenate([mains, relays], axis=-2))
    bad = np.flatnonzero(closest < min_distance)
    if bad.size:
        raise GeometryError(
            f"r_ij = {r_values[bad[0]]:g} μm, r_imu = {r_imu:g} μm, theta_imu = {theta_imu:g} "
            f"puts two atoms {closest[bad[0]]:.3g} μm apart "
            f"(minimum {min_distance} μm)"
        )
    G = bilinear_form(mains, relays, params, regime)
    J = -G[:, 0, 1].real
    gamma = params.main_rate(regime) + np.diagonal(G, axis1=-2, axis2=-1).imag
    return J, gamma


def average_coupling_by_separation(J) -> list[tuple[int, float]]:
    """Mean of |J_{i,i+d}| over i for every separation d = 1..N-1."""
    J = np.asarray(J, float)
    if J.ndim != 2 or J.shape[0] != J.shape[1]:
        raise ValueError("J must be square")
    return [(d, float(np.mean(np.abs(np.diagonal(J, d))))) for d in range(1, len(J))]


def chain_average_curve(
    N: int, spacing: float, r_imu: float, theta_imu: float, params: PhysicalParams,
    regime: str = "room", min_distance: float = DEFAULT_MIN_DISTANCE,
):
    """Separations, mean |J| per separation and the full J matrix of a mirrored chain."""
    array = build_chain_mirrored(N, spacing, r_imu, theta_imu, min_distance=min_distance)
    J = effective_couplings(array, params, regime)
    curve = average_coupling_by_separation(J)
    d = np.array([c[0] for c in curve])
    mean_abs = np.array([c[1] for c in curve])
    return d, mean_abs, J


# --------------------------------------------------------------------------
# scans


@dataclass(frozen=True)
class ScanGrid:
    """Cartesian grid over relay distance and angle, iterated r-major."""

    r_imu: tuple[float, ...]
    theta_imu: tuple[float, ...]

    def __post_init__(self):
        if not self.r_imu or not self.theta_imu:
            raise ValueError("scan grid must be nonempty")

    @classmethod
    def linspace(cls, r_min, r_max, n_r, theta_min=0.0, theta_max=np.pi, n_theta=60):
        return cls(tuple(np.linspace(r_min, r_max, int(n_r)).tolist()),
                   tuple(np.linspace(theta_min, theta_max, int(n_theta)).tolist()))

    @classmethod
    def default(cls, kind: str) -> "ScanGrid":
        if kind == "pair":
            return cls.linspace(5.0, 14.0, 60)
        if kind == "chain":
            return cls.linspace(6.0, 20.0, 60)
        raise ValueError(f"unknown scan kind {kind!r}")

    def points(self) -> list[tuple[float, float]]:
        return [(r, t) for r in self.r_imu for t in self.theta_imu]


@dataclass
class ScanResult:
    """Per-grid-point fit results. Failed points carry NaN and an error message.

    ``mean_abs_J`` is |J| at the reference distance ``r_cut`` for pair scans and
    the mean |J_{i,i+ref}| for chain scans.
    """

    kind: str
    grid: list[tuple[float, float]]
    b: np.ndarray
    rmse: np.ndarray
    mean_abs_J: np.ndarray
    excluded: np.ndarray
    errors: list[str | None]
    settings: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.grid)
        for name in ("b", "rmse", "mean_abs_J", "excluded", "errors"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has length {len(getattr(self, name))}, grid has {n}")

    def __len__(self):
        return len(self.grid)

    @property
    def succeeded(self) -> np.ndarray:
        return np.array([e is None for e in self.errors], bool)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["r_imu", "theta_imu", "b", "rmse", "mean_abs_J", "excluded", "error"])
        for k, (r, t) in enumerate(self.grid):
            writer.writerow([
                f"{r:.17g}", f"{t:.17g}", f"{self.b[k]:.17g}", f"{self.rmse[k]:.17g}",
                f"{self.mean_abs_J[k]:.17g}", int(bool(self.excluded[k])), self.errors[k] or "",
            ])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({
            "kind": self.kind,
            "grid": [list(p) for p in self.grid],
            "b": [None if not np.isfinite(v) else float(v) for v in self.b],
            "rmse": [None if not np.isfinite(v) else float(v) for v in self.rmse],
            "mean_abs_J": [None if not np.isfinite(v) else float(v) for v in self.mean_abs_J],
            "excluded": [bool(v) for v in self.excluded],
            "errors": self.errors,
            "settings": self.settings,
        }, indent=2)


def _pair_point(r_imu, theta_imu, params, regime, r_values, r_cut, min_distance):
    J, _ = pair_coupling_curve(r_values, r_imu, theta_imu, params, regime, min_distance)
    fit = fit_power_law(r_values, np.abs(J))
    J_cut, gamma_cut = pair_coupling_curve([r_cut], r_imu, theta_imu, params, regime, min_distance)
    return fit, abs(J_cut[0]), abs(J_cut[0]) < gamma_cut[0].max()


def _chain_point(r_imu, theta_imu, params, regime, N, spacing, window, ref, min_distance):
    d, mean_abs, _ = chain_average_curve(N, spacing, r_imu, theta_imu, params, regime, min_distance)
    sel = (d >= window.d_min) & (d <= window.d_max)
    fit = fit_power_law(d[sel], mean_abs[sel])
    return fit, float(mean_abs[ref - 1]) if ref <= len(mean_abs) else np.nan


def exponent_scan(
    kind: str,
    grid: ScanGrid | None,
    params: PhysicalParams,
    regime: str = "room",
    pair_window: PairWindow = PairWindow(),
    chain_window: ChainWindow = ChainWindow(),
    N: int = 21,
    spacing: float = 10.0,
    r_cut: float = 25.0,
    ref_separation: int = 8,
    min_distance: float = DEFAULT_MIN_DISTANCE,
) -> ScanResult:
    """Fit the power-law exponent at every grid point.

    Pair scans fit |J(r_ij)| over ``pair_window`` for a mirrored pair and mark the
    exclusion region at ``r_cut``; chain scans fit the separation-averaged |J| of
    an ``N``-site chain over ``chain_window``. A failing grid point (atom
    collision, singular relay matrix, too few positive couplings) is recorded
    and the scan continues.
    """
    if kind not in ("pair", "chain"):
        raise ValueError(f"kind must be 'pair' or 'chain', got {kind!r}")
    grid = ScanGrid.default(kind) if grid is None else grid
    points = grid.points()
    n = len(points)
    b = np.full(n, np.nan)
    rmse = np.full(n, np.nan)
    strength = np.full(n, np.nan)
    excluded = np.zeros(n, bool)
    errors: list[str | None] = [None] * n
    r_values = pair_window.values()
    for k, (r_imu, theta) in enumerate(points):
        try:
            if kind == "pair":
                fit, strength[k], excluded[k] = _pair_point(
                    r_imu, theta, params, regime, r_values, r_cut, min_distance)
            else:
                fit, strength[k] = _chain_point(
                    r_imu, theta, params, regime, N, spacing, chain_window,
                    ref_separation, min_distance)
        except (RelayRangeError, np.linalg.LinAlgError) as exc:
            errors[k] = f"{type(exc).__name__}: {exc}"
            continue
        b[k], rmse[k] = fit.b, fit.rmse
    settings = {
        "kind": kind,
        "regime": regime,
        "min_distance": min_distance,
        "params": params.to_dict(),
    }
    if kind == "pair":
        settings.update(pair_window={"r_min": pair_window.r_min, "r_max": pair_window.r_max,
                                     "r_step": pair_window.r_step}, r_cut=r_cut)
    else:
        settings.update(chain_window={"d_min": chain_window.d_min, "d_max": chain_window.d_max},
                        N=N, spacing=spacing, ref_separation=ref_separation)
    return ScanResult(kind, points, b, rmse, strength, excluded, errors, settings)


def exclusion_mask(
    scan: ScanResult,
    params: PhysicalParams,
    r_cut: float = 25.0,
    regime: str | None = None,
) -> np.ndarray:
    """Grid points of a pair scan whose |J| at ``r_cut`` falls below γ^eff."""
    if scan.kind != "pair":
        raise ValueError("the exclusion region is defined for pair scans")
    regime = scan.settings.get("regime", "room") if regime is None else regime
    min_distance = scan.settings.get("min_distance", DEFAULT_MIN_DISTANCE)
    mask = np.zeros(len(scan), bool)
    for k, (r_imu, theta) in enumerate(scan.grid):
        try:
            J, gamma = pair_coupling_curve([r_cut], r_imu, theta, params, regime, min_distance)
        except RelayRangeError:
            continue
        mask[k] = abs(J[0]) < gamma[0].max()
    return mask


def crossing_separation(separations, mean_abs_J, level: float):
    """First separation at which the averaged coupling drops below ``level`` (None if never)."""
    for d, value in zip(separations, mean_abs_J):
        if value < level:
            return int(d)
    return None
