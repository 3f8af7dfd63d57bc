import math

import numpy as np
import pytest
from geographiclib.geodesic import Geodesic
from hypothesis import given, settings, strategies as st

from aisfish.features import (
    EARTH_RADIUS_M, WindowSpec, diff, featurize, featurize_all, haversine, rcog, window_members,
)
from aisfish.ingest import AisMessage, Trajectory
from aisfish.synthetic import random_trajectory


def track(ts, lat=None, lon=None, sog=None, cog=None):
    n = len(ts)
    lat = lat if lat is not None else [48.0] * n
    lon = lon if lon is not None else [-124.0] * n
    sog = sog if sog is not None else [5.0] * n
    cog = cog if cog is not None else [90.0] * n
    return Trajectory(1, tuple(AisMessage(1, int(t), a, o, s, c) for t, a, o, s, c in zip(ts, lat, lon, sog, cog)))


@pytest.mark.parametrize("nxt, cur, expected", [(7.5, 5.0, 2.5), (3.0, 3.0, 0.0), (10, 350, -340)])
def test_diff(nxt, cur, expected):
    assert diff(nxt, cur) == expected


@pytest.mark.parametrize("d, expected", [
    (270, -90), (-340, 20), (45, 45), (180, 180), (-180, 180), (360, 0), (-360, 0), (181, -179), (-181, 179),
])
def test_rcog_examples(d, expected):
    assert rcog(d) == expected


def test_rcog_vectorized():
    assert rcog(np.array([270.0, -340.0, 45.0])).tolist() == [-90.0, 20.0, 45.0]


@given(st.floats(-360, 360, allow_nan=False))
def test_rcog_laws(d):
    r = rcog(d)
    assert -180 < r <= 180
    assert math.isclose((r - d) % 360, 0, abs_tol=1e-9) or math.isclose((r - d) % 360, 360, abs_tol=1e-9)
    if abs(d) != 180:
        assert rcog(-d) == -r


def test_window_spec_validation():
    with pytest.raises(ValueError):
        WindowSpec("message", 0)
    with pytest.raises(ValueError):
        WindowSpec("area", 3)
    with pytest.raises(ValueError):
        WindowSpec("message", 2.5)
    assert WindowSpec.default("distance").size == 5000


def test_time_window_example():
    t = track([0, 180, 420, 720])
    assert list(window_members(t, 3, WindowSpec("time", 10))) == [1, 2, 3]


def test_time_window_boundary_inclusive():
    t = track([0, 600])
    assert list(window_members(t, 1, WindowSpec("time", 10))) == [0, 1]


def test_message_window_partial_head():
    t = track(range(0, 600, 60))
    assert list(window_members(t, 4, WindowSpec("message", 10))) == [0, 1, 2, 3, 4]
    assert list(window_members(t, 9, WindowSpec("message", 3))) == [7, 8, 9]


def test_distance_window_example():
    step = 600 / (EARTH_RADIUS_M * math.pi / 180)  # 600 m of latitude
    lat = [48.0 + i * step for i in range(10)]
    t = track(range(0, 600, 60), lat=lat)
    members = window_members(t, 9, WindowSpec("distance", 5000))
    assert list(members) == list(range(1, 10))


def test_featurize_mean_and_sum():
    t = track(range(0, 240, 60), sog=[0.0, 1.0, 3.0, 6.0], cog=[0.0, 10.0, 5.0, 25.0])
    f = featurize(t, WindowSpec("message", 3))
    assert f.accel.tolist() == [1.0, 2.0, 3.0]
    assert f.rcog.tolist() == [10.0, -5.0, 20.0]
    assert f.accel_ma[-1] == 2.0
    assert f.rcog_ms[-1] == 25.0
    assert f[0].timestamp == 60


def test_featurize_wraps_across_north():
    t = track([0, 60], cog=[350.0, 10.0])
    assert featurize(t, WindowSpec()).rcog.tolist() == [20.0]


def test_short_trajectory_gives_empty(caplog):
    f = featurize(track([0]), WindowSpec())
    assert len(f) == 0
    feats, skipped = featurize_all([track([0]), track([0, 60])], WindowSpec())
    assert skipped == 1 and [len(x) for x in feats] == [0, 1]


def test_haversine_identity_and_degree():
    assert haversine((48.1, -124.2), (48.1, -124.2)) == 0
    assert haversine((0, 0), (0, 1)) == pytest.approx(2 * math.pi * EARTH_RADIUS_M / 360, abs=1e-6)
    assert abs(haversine((0, 0), (0, 1)) - 111_195) <= 5


def test_haversine_against_geodesic():
    ref = Geodesic.WGS84.Inverse(48.5, -124.5, 48.5, -124.4)["s12"]
    assert haversine((48.5, -124.5), (48.5, -124.4)) == pytest.approx(ref, rel=5e-3)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 60), st.sampled_from(["message", "time", "distance"]),
       st.floats(1, 3000))
def test_window_predicates(seed, n, kind, size):
    traj = random_trajectory(5, n, np.random.default_rng(seed))
    spec = WindowSpec(kind, int(size) if kind == "message" else size)
    ts, att = traj.timestamps, traj.attributes
    for i in range(n):
        members = window_members(traj, i, spec)
        assert members.stop == i + 1 and len(members) >= 1
        if kind == "message":
            assert len(members) == min(i + 1, int(size))
            continue

        def inside(j):
            if kind == "time":
                return ts[j] >= ts[i] - size * 60
            path = sum(haversine(att[k, :2], att[k + 1, :2]) for k in range(j, i))
            return path <= size

        assert all(inside(j) for j in members)
        if members.start > 0:
            assert not inside(members.start - 1)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 40), st.floats(0.6, 30), st.sampled_from(["message", "time", "distance"]))
def test_constant_series(n, speed, kind):
    t = track(range(0, 60 * n, 60), sog=[speed] * n, cog=[123.0] * n)
    f = featurize(t, WindowSpec.default(kind))
    assert len(f) == n - 1
    assert np.all(f.accel_ma == 0) and np.all(f.rcog_ms == 0)


@pytest.mark.parametrize("kind", ["message", "time", "distance"])
def test_ma_of_constant_acceleration(kind):
    sog = [1.0 + 0.5 * i for i in range(30)]
    f = featurize(track(range(0, 1800, 60), sog=sog), WindowSpec.default(kind))
    np.testing.assert_allclose(f.accel_ma, 0.5)
