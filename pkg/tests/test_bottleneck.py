import numpy as np
import pytest

from carma.bottleneck import (
    BottleneckParams,
    fast_lane_cost,
    queue_profile,
    schedule_delays,
    slow_lane_cost,
    trip_cost,
)

P = BottleneckParams()


def test_defaults():
    assert P.s == 60
    assert P.horizon == 165
    np.testing.assert_array_equal(P.departure_times, np.arange(0, 151, 15))
    assert P.cap_frac == pytest.approx(0.02)
    assert P.violations() == []


@pytest.mark.parametrize("kwargs, fragment", [
    (dict(beta=7.0), "beta < alpha < gamma"),
    (dict(gamma=5.0), "beta < alpha < gamma"),
    (dict(beta=-1.0), "beta < alpha < gamma"),
    (dict(s_slow=0.0), "s_slow"),
    (dict(t_star=165.0), "t_star"),
    (dict(n_commuters=20000), "horizon too short"),
    (dict(n_intervals=0), "n_intervals"),
])
def test_invalid_params(kwargs, fragment):
    with pytest.raises(ValueError, match=fragment):
        BottleneckParams(**kwargs)


@pytest.mark.parametrize("u, t, expected", [(6, 120, 0.0), (1, 105, 1.0), (6, 135, 24.0)])
def test_fast_lane_cost(u, t, expected):
    assert fast_lane_cost(u, t, P) == pytest.approx(expected, abs=1e-12)


def test_fast_lane_cost_rejects_nonpositive_vot():
    with pytest.raises(ValueError):
        fast_lane_cost(0.0, 100, P)


@pytest.mark.parametrize("u, t, q, expected", [
    (1, 120, 0, 0.0),
    (1, 110, 480, 6.4 * 10 / 60),
    (2, 100, 240, 2 * (6.4 * 5 + 4 * 15) / 60),
])
def test_slow_lane_cost(u, t, q, expected):
    assert slow_lane_cost(u, t, q, P) == pytest.approx(expected, rel=1e-12)


def test_slow_lane_cost_rejects_negative_queue():
    with pytest.raises(ValueError):
        slow_lane_cost(1.0, 100, -1.0, P)


def test_slow_lane_cost_continuous_at_boundary():
    rng = np.random.default_rng(3)
    for _ in range(200):
        t = rng.uniform(0, P.t_star)
        q = (P.t_star - t) * P.s_slow
        u = rng.uniform(0.1, 10)
        early = u * (P.alpha * q / P.s_slow + P.beta * (P.t_star - t - q / P.s_slow)) / 60
        late = u * (P.alpha * q / P.s_slow + P.gamma * (t + q / P.s_slow - P.t_star)) / 60
        assert early == pytest.approx(late, rel=1e-12, abs=1e-12)
        assert slow_lane_cost(u, t, q, P) == pytest.approx(early, rel=1e-12, abs=1e-12)


def test_fast_lane_cost_slopes():
    h = 0.5
    left = (fast_lane_cost(3, 100 + h, P) - fast_lane_cost(3, 100, P)) / h
    right = (fast_lane_cost(3, 140 + h, P) - fast_lane_cost(3, 140, P)) / h
    assert left == pytest.approx(-3 * P.beta / 60)
    assert right == pytest.approx(3 * P.gamma / 60)


@pytest.mark.parametrize("t, tq, expected", [(120, 0, (0, 0)), (90, 10, (20, 0)), (120, 10, (0, 10))])
def test_schedule_delays(t, tq, expected):
    e, l = schedule_delays(t, tq, P)
    assert (float(e), float(l)) == expected


def test_schedule_delays_exclusive():
    rng = np.random.default_rng(0)
    e, l = schedule_delays(rng.uniform(0, 160, 1000), rng.uniform(0, 60, 1000), P)
    assert np.all((e == 0) | (l == 0))


def test_trip_cost_vectorized():
    t = P.departure_times
    np.testing.assert_allclose(trip_cost(2.0, t, 0.0, P), fast_lane_cost(2.0, t, P))


def test_queue_profile_examples():
    np.testing.assert_array_equal(queue_profile(np.zeros(11), P).queue_len, np.zeros(11))
    q = queue_profile([960, 0], P)
    np.testing.assert_array_equal(q.queue_len, [240, 0])
    np.testing.assert_array_equal(q.delay, [5, 0])
    balanced = queue_profile(np.full(11, P.s_slow * P.dt), P)
    np.testing.assert_array_equal(balanced.queue_len, np.zeros(11))


def test_queue_profile_rejects_negative_inflow():
    with pytest.raises(ValueError):
        queue_profile([1.0, -1.0], P)


def test_queue_profile_additive_in_split_inflow():
    rng = np.random.default_rng(1)
    a, b = rng.uniform(0, 900, (2, 11))
    np.testing.assert_allclose(queue_profile(a + b, P).queue_len,
                               queue_profile(np.add(a, b), P).queue_len)
    # brute-force recursion
    q, prev = [], 0.0
    for x in a + b:
        prev = max(0.0, prev + x - 720)
        q.append(prev)
    np.testing.assert_allclose(queue_profile(a + b, P).queue_len, q)
