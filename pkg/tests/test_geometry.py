import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relayrange.exceptions import GeometryError
from relayrange.geometry import (
    MAGIC_ANGLE,
    MAGIC_DIRECTION,
    AtomArray,
    AtomRole,
    build_chain_mirrored,
    build_pair_mirrored,
    min_pairwise_distance,
    mirrored_pair_positions,
    pair_geometry,
    separation,
)

M, R = AtomRole.MAIN, AtomRole.RELAY


def test_magic_angle_value():
    assert np.isclose(3 * np.cos(MAGIC_ANGLE) ** 2 - 1, 0.0, atol=1e-15)
    assert np.isclose(np.degrees(MAGIC_ANGLE), 54.7356, atol=1e-4)
    assert np.isclose(np.linalg.norm(MAGIC_DIRECTION), 1.0)


def test_pair_geometry_basic():
    arr = AtomArray([[0, 0], [0, 5]], [M, M])
    r, theta = pair_geometry(arr, 1, 0)
    assert r == pytest.approx(5.0)
    assert theta == pytest.approx(0.0)
    r, theta = pair_geometry(arr, 0, 1)
    assert theta == pytest.approx(np.pi)


def test_pair_geometry_same_atom():
    arr = AtomArray([[0, 0], [3, 0]], [M, M])
    with pytest.raises(GeometryError):
        pair_geometry(arr, 1, 1)


def test_min_distance_names_offending_pair():
    with pytest.raises(GeometryError, match=r"atoms 0 \(main\) and 2 \(relay\)"):
        AtomArray([[0, 0], [10, 0], [0.2, 0.0]], [M, M, R])


def test_roles_must_be_ordered():
    with pytest.raises(GeometryError, match="precede"):
        AtomArray([[0, 0], [10, 0], [5, 5]], [M, R, M])


def test_non_finite_positions():
    with pytest.raises(GeometryError):
        AtomArray([[0, 0], [np.nan, 1]], [M, M])


def test_counts_and_slices():
    arr = build_chain_mirrored(5, 10.0, 6.0, 0.3)
    assert (arr.N, arr.N_R, arr.M) == (5, 8, 13)
    assert arr.main_positions.shape == (5, 2)
    assert arr.relay_positions.shape == (8, 2)
    with pytest.raises(ValueError):
        arr.positions[0, 0] = 1.0  # read-only


def test_chain_requires_two_mains():
    with pytest.raises(GeometryError):
        build_chain_mirrored(1, 10.0, 6.0, 0.0)


def test_pair_r_imu_zero_collides():
    with pytest.raises(GeometryError):
        build_pair_mirrored(10.0, 1e-3, 0.0)


def test_mirrored_pair_symmetry():
    arr = build_pair_mirrored(12.0, 6.0, 0.7)
    mid = arr.main_positions.mean(axis=0)
    mu, nu = arr.relay_positions
    np.testing.assert_allclose(mu + nu, 2 * mid, atol=1e-12)
    np.testing.assert_allclose(arr.main_positions[1], 12.0 * MAGIC_DIRECTION)


def test_chain_blocks_follow_bonds():
    arr = build_chain_mirrored(4, 10.0, 5.0, 2.5)
    mains = arr.main_positions
    for k in range(3):
        mu, nu = arr.relay_positions[2 * k : 2 * k + 2]
        np.testing.assert_allclose(mu + nu, mains[k] + mains[k + 1], atol=1e-12)
        assert pair_geometry(arr, k, arr.N + 2 * k)[0] == pytest.approx(5.0)


def test_without_relays():
    arr = build_pair_mirrored(10.0, 6.0, 0.0)
    reduced = arr.without_relays([1])
    assert reduced.N_R == 1 and reduced.N == 2
    np.testing.assert_array_equal(reduced.relay_positions[0], arr.relay_positions[0])


def test_json_roundtrip():
    arr = build_chain_mirrored(3, 10.0, 6.0, 0.5)
    doc = json.loads(arr.to_json())
    assert set(doc["atoms"][0]) == {"x", "z", "role"}
    assert doc["atoms"][-1]["role"] == "relay"
    assert AtomArray.from_json(arr.to_json()) == arr


def test_from_dict_malformed():
    with pytest.raises(GeometryError):
        AtomArray.from_dict({"atoms": [{"x": 0.0, "role": "main"}]})
    with pytest.raises(GeometryError):
        AtomArray.from_dict({"atoms": [{"x": 0.0, "z": 0.0, "role": "spectator"}]})


def test_batched_positions_match_builder():
    r = np.array([10.0, 15.0, 20.0])
    mains, relays = mirrored_pair_positions(r, 6.0, 0.4)
    for k, rk in enumerate(r):
        arr = build_pair_mirrored(rk, 6.0, 0.4)
        np.testing.assert_allclose(mains[k], arr.main_positions)
        np.testing.assert_allclose(relays[k], arr.relay_positions)


def test_min_pairwise_distance():
    pts = np.array([[0, 0], [3, 4], [10, 0]], float)
    assert min_pairwise_distance(pts) == pytest.approx(5.0)


coord = st.floats(-50, 50, allow_nan=False)


@settings(max_examples=100, deadline=None)
@given(coord, coord, coord, coord, coord, coord)
def test_pair_geometry_translation_invariant(x0, z0, x1, z1, dx, dz):
    a, b = np.array([x0, z0]), np.array([x1, z1])
    if np.linalg.norm(a - b) < 1.0:
        return
    arr = AtomArray([a, b], [M, M])
    r, t = pair_geometry(arr, 0, 1)
    r2, t2 = pair_geometry(arr.translated(dx, dz), 0, 1)
    assert r2 == pytest.approx(r, rel=1e-9, abs=1e-9)
    assert np.cos(t2) == pytest.approx(np.cos(t), abs=1e-7)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 100.0), st.floats(0, np.pi), st.floats(0.1, 10))
def test_separation_roundtrip(r, theta, scale):
    vec = r * np.array([np.sin(theta), np.cos(theta)])
    rr, tt = separation(vec)
    assert rr == pytest.approx(r, rel=1e-12)
    assert tt == pytest.approx(theta, abs=1e-6)
    rs, ts = separation(scale * vec)
    assert rs == pytest.approx(scale * r, rel=1e-12)
    assert ts == pytest.approx(tt, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(-50, 50), st.floats(-50, 50))
def test_swap_maps_theta_to_supplement(x0, z0, x1, z1):
    a, b = np.array([x0, z0]), np.array([x1, z1])
    if np.linalg.norm(a - b) < 1.0:
        return
    arr = AtomArray([a, b], [M, M])
    _, t_ab = pair_geometry(arr, 0, 1)
    _, t_ba = pair_geometry(arr, 1, 0)
    assert t_ab + t_ba == pytest.approx(np.pi, abs=1e-6)
