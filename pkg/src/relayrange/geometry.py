"""Planar atom-array geometries in the x-z plane.

Positions are in micrometres. The quantization axis is z; polar angles are
measured from +z towards +x. Main atoms always precede relay atoms in an
:class:`AtomArray`, so main atom ``i`` has index ``i`` and relay ``mu`` has
index ``N + mu`` (0-based).

Relay blocks in :func:`build_chain_mirrored` are all placed on the same side
of the chain. An alternating (above/below) arrangement would only change the
signs of couplings mediated across blocks; it is not provided.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .exceptions import GeometryError

#: Polar angle at which the near-field factor 3cos²θ - 1 vanishes.
MAGIC_ANGLE = float(np.arccos(np.sqrt(1.0 / 3.0)))

#: Unit vector (x, z) of the main-atom line.
MAGIC_DIRECTION = np.array([np.sin(MAGIC_ANGLE), np.cos(MAGIC_ANGLE)])

DEFAULT_MIN_DISTANCE = 1.0


class AtomRole(enum.Enum):
    MAIN = "main"
    RELAY = "relay"


@dataclass(frozen=True)
class Position:
    x: float
    z: float

    def __post_init__(self):
        if not (np.isfinite(self.x) and np.isfinite(self.z)):
            raise GeometryError(f"non-finite position ({self.x}, {self.z})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.z], dtype=float)


def polar_offset(r: float, theta: float) -> np.ndarray:
    """Vector of length ``r`` at polar angle ``theta`` from +z."""
    return r * np.array([np.sin(theta), np.cos(theta)])


def _min_distance_violation(positions: np.ndarray, min_distance: float):
    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.sqrt(np.einsum("abk,abk->ab", diff, diff))
    np.fill_diagonal(dist, np.inf)
    a, b = np.unravel_index(np.argmin(dist), dist.shape)
    if dist[a, b] < min_distance:
        return min(a, b), max(a, b), float(dist[a, b])
    return None


class AtomArray:
    """Ordered collection of main and relay atoms.

    Parameters
    ----------
    positions : array_like, shape (M, 2)
        ``(x, z)`` coordinates in μm.
    roles : sequence of AtomRole
        One role per atom; all mains must come before all relays.
    min_distance : float
        Smallest allowed separation between any two atoms (μm).
    metadata : dict, optional
        Builder parameters, carried along for serialization and reporting.
    """

    def __init__(
        self,
        positions,
        roles: Sequence[AtomRole],
        min_distance: float = DEFAULT_MIN_DISTANCE,
        metadata: dict | None = None,
    ):
        pos = np.array(positions, dtype=float).reshape(-1, 2)
        roles = tuple(AtomRole(r) for r in roles)
        if len(roles) != len(pos):
            raise GeometryError(f"{len(pos)} positions but {len(roles)} roles")
        if not np.all(np.isfinite(pos)):
            raise GeometryError("positions must be finite")
        n_main = sum(r is AtomRole.MAIN for r in roles)
        if any(r is not AtomRole.MAIN for r in roles[:n_main]):
            raise GeometryError("main atoms must precede relay atoms")
        if len(pos) > 1:
            hit = _min_distance_violation(pos, min_distance)
            if hit is not None:
                a, b, d = hit
                raise GeometryError(
                    f"atoms {a} ({roles[a].value}) and {b} ({roles[b].value}) are "
                    f"{d:.6g} μm apart, below the minimum distance {min_distance} μm"
                )
        pos.setflags(write=False)
        self._positions = pos
        self._roles = roles
        self._n_main = n_main
        self.min_distance = float(min_distance)
        self.metadata = dict(metadata or {})

    @property
    def positions(self) -> np.ndarray:
        return self._positions

    @property
    def roles(self) -> tuple[AtomRole, ...]:
        return self._roles

    @property
    def N(self) -> int:
        return self._n_main

    @property
    def N_R(self) -> int:
        return len(self._roles) - self._n_main

    @property
    def M(self) -> int:
        return len(self._roles)

    @property
    def main_positions(self) -> np.ndarray:
        return self._positions[: self._n_main]

    @property
    def relay_positions(self) -> np.ndarray:
        return self._positions[self._n_main :]

    def __len__(self):
        return self.M

    def __repr__(self):
        return f"AtomArray(N={self.N}, N_R={self.N_R})"

    def __eq__(self, other):
        if not isinstance(other, AtomArray):
            return NotImplemented
        return self._roles == other._roles and np.array_equal(
            self._positions, other._positions
        )

    def without_relays(self, relay_indices: Iterable[int]) -> "AtomArray":
        """Copy of the array with the given relays (0-based relay indices) removed."""
        drop = {self.N + int(k) for k in relay_indices}
        keep = [a for a in range(self.M) if a not in drop]
        return AtomArray(
            self._positions[keep],
            [self._roles[a] for a in keep],
            min_distance=self.min_distance,
            metadata=self.metadata,
        )

    def translated(self, dx: float, dz: float) -> "AtomArray":
        return AtomArray(
            self._positions + np.array([dx, dz]), self._roles, self.min_distance
        )

    def scaled(self, s: float) -> "AtomArray":
        return AtomArray(self._positions * s, self._roles, self.min_distance * s)

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "atoms": [
                {"x": float(x), "z": float(z), "role": role.value}
                for (x, z), role in zip(self._positions, self._roles)
            ]
        }

    @classmethod
    def from_dict(cls, doc: dict, min_distance: float = DEFAULT_MIN_DISTANCE):
        try:
            atoms = doc["atoms"]
            positions = [(float(a["x"]), float(a["z"])) for a in atoms]
            roles = [AtomRole(a["role"]) for a in atoms]
        except (KeyError, TypeError, ValueError) as exc:
            raise GeometryError(f"malformed atom-array document: {exc}") from exc
        return cls(positions, roles, min_distance=min_distance)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str, min_distance: float = DEFAULT_MIN_DISTANCE):
        return cls.from_dict(json.loads(text), min_distance=min_distance)


def separation(vec):
    """Distance and polar angle in [0, π] of connection vector(s) ``(…, 2)``."""
    vec = np.asarray(vec, dtype=float)
    r = np.hypot(vec[..., 0], vec[..., 1])
    # arctan2 keeps full precision near the poles, where arccos(z/r) loses half the digits
    return r, np.arctan2(np.abs(vec[..., 0]), vec[..., 1])


def pair_geometry(array: AtomArray, a: int, b: int) -> tuple[float, float]:
    """Return ``(r_ab, theta_ab)`` for atoms ``a`` and ``b`` (0-based indices).

    ``theta_ab`` is the angle between ``r_a - r_b`` and the z axis; swapping the
    atoms maps θ to π - θ, which leaves every cos²θ-dependent quantity unchanged.
    """
    if a == b:
        raise GeometryError("pair_geometry needs two distinct atoms")
    for idx in (a, b):
        if not 0 <= idx < array.M:
            raise IndexError(f"atom index {idx} out of range for M={array.M}")
    r, theta = separation(array.positions[a] - array.positions[b])
    if r == 0.0:
        raise GeometryError(f"atoms {a} and {b} coincide")
    return float(r), float(theta)


def mirrored_pair_positions(r_ij, r_imu, theta_imu):
    """Main and relay positions of mirrored pairs, broadcast over the inputs.

    Returns ``(mains, relays)`` with shapes ``(..., 2, 2)``. Main ``i`` sits at the
    origin, main ``j`` at ``r_ij`` along the magic-angle direction, relay ``mu``
    at ``r_i + r_imu (sin θ, cos θ)`` and relay ``nu`` at the point reflection of
    ``mu`` through the midpoint of the mains.
    """
    r_ij, r_imu, theta_imu = np.broadcast_arrays(
        np.asarray(r_ij, float), np.asarray(r_imu, float), np.asarray(theta_imu, float)
    )
    main_j = r_ij[..., None] * MAGIC_DIRECTION
    offset = r_imu[..., None] * np.stack([np.sin(theta_imu), np.cos(theta_imu)], -1)
    main_i = np.zeros_like(main_j)
    relay_mu = main_i + offset
    relay_nu = main_j - offset
    return np.stack([main_i, main_j], -2), np.stack([relay_mu, relay_nu], -2)


def build_chain_mirrored(
    N: int,
    spacing: float,
    r_imu: float,
    theta_imu: float,
    min_distance: float = DEFAULT_MIN_DISTANCE,
) -> AtomArray:
    """Chain of ``N`` mains on the magic-angle line with one mirrored relay pair per bond.

    Relays are ordered block by block: ``(mu_0, nu_0, mu_1, nu_1, ...)`` where
    block ``k`` belongs to the bond between mains ``k`` and ``k + 1``.
    """
    if N < 2:
        raise GeometryError(f"a mirrored chain needs N >= 2, got {N}")
    if spacing <= 0 or r_imu <= 0:
        raise GeometryError("spacing and r_imu must be positive")
    mains = np.arange(N)[:, None] * spacing * MAGIC_DIRECTION
    offset = polar_offset(r_imu, theta_imu)
    relays = []
    for k in range(N - 1):
        mu = mains[k] + offset
        relays.extend([mu, mains[k] + mains[k + 1] - mu])
    roles = [AtomRole.MAIN] * N + [AtomRole.RELAY] * len(relays)
    return AtomArray(
        np.vstack([mains, np.array(relays)]),
        roles,
        min_distance=min_distance,
        metadata={
            "kind": "chain" if N > 2 else "pair",
            "N": N,
            "spacing": spacing,
            "r_imu": r_imu,
            "theta_imu": theta_imu,
        },
    )


def build_pair_mirrored(
    r_ij: float,
    r_imu: float,
    theta_imu: float,
    min_distance: float = DEFAULT_MIN_DISTANCE,
) -> AtomArray:
    """Two mains and two mirrored relays; same as a two-site mirrored chain."""
    if r_ij <= 0 or r_imu <= 0:
        raise GeometryError("r_ij and r_imu must be positive")
    return build_chain_mirrored(2, r_ij, r_imu, theta_imu, min_distance=min_distance)


def min_pairwise_distance(points) -> np.ndarray:
    """Smallest pairwise distance within each point set, broadcast over ``(..., K, 2)``."""
    points = np.asarray(points, float)
    diff = points[..., :, None, :] - points[..., None, :, :]
    dist = np.sqrt(np.sum(diff**2, axis=-1))
    k = points.shape[-2]
    dist = dist + np.where(np.eye(k, dtype=bool), np.inf, 0.0)
    return dist.reshape(*dist.shape[:-2], -1).min(axis=-1)
