import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evtach.errors import EstimationFailed, UndefinedMetric
from evtach.events import EventStream
from evtach.estimator import (
    EstimatorParams,
    PairStats,
    estimate_speed,
    initial_speed,
    refined_step,
    rmae,
    rpm_from_yaw,
)
from evtach.simulator import quad_propeller_scene, simulate, single_propeller_scene


def test_rpm_from_yaw_examples():
    assert rpm_from_yaw(2 * math.pi / 100, 1_000) == pytest.approx(600.0, abs=1e-9)
    assert rpm_from_yaw(math.pi / 3, 10_000) == pytest.approx(1000.0, abs=1e-9)


def test_pair_median_uses_magnitude():
    stats = PairStats(1_000, 10_000, [-0.1, 0.3, -0.2, math.nan])
    assert stats.rpm() == pytest.approx(rpm_from_yaw(0.2, 1_000))
    assert stats.direction() == 1
    with pytest.raises(EstimationFailed):
        PairStats(1_000, 10_000, [math.nan]).rpm()


def test_refined_step_examples():
    third = 2 * math.pi / 3
    assert refined_step(6000, third, 0.8) == pytest.approx(1333.33, abs=0.01)
    assert refined_step(300, third, 0.8) == pytest.approx(26666.67, abs=0.01)
    assert refined_step(600, 2 * math.pi, 0.8) == 37_500


def test_refined_step_lower_clamp():
    assert refined_step(60_000, math.pi / 3, 0.8) == 1_000


@pytest.mark.parametrize("args", [(0, 1.0, 0.8), (100, 0, 0.8), (100, 7.0, 0.8), (100, 1.0, 1.0)])
def test_refined_step_rejects(args):
    with pytest.raises(ValueError):
        refined_step(*args)


@settings(max_examples=200)
@given(st.floats(50, 20_000), st.integers(1, 8), st.floats(0.05, 0.95))
def test_refined_step_stays_below_half_symmetry(r, blades, eta):
    theta = 2 * math.pi / blades
    t = refined_step(r, theta, eta, t_s_min=0.0, t_s_max=math.inf)
    assert t * 1e-6 * r * 2 * math.pi / 60 <= eta * theta / 2 * (1 + 1e-12)
    assert eta * theta / 2 < theta


def test_rmae_examples():
    assert rmae([3000, 3000], 3000) == 0
    assert rmae([3030], 3000) == pytest.approx(0.01)
    with pytest.raises(UndefinedMetric):
        rmae([], 3000)
    with pytest.raises(ValueError):
        rmae([1.0], 0)


def test_params_invariants():
    with pytest.raises(ValueError):
        EstimatorParams(t_s_initial=20_000)
    with pytest.raises(ValueError):
        EstimatorParams(eta=1.0)
    with pytest.raises(ValueError):
        EstimatorParams(t_l=200_000)
    assert EstimatorParams().to_dict()["t_l"] == 10_000


@pytest.fixture(scope="module")
def single_3000():
    return simulate(single_propeller_scene(3000, seed=0)).stream


def test_initial_speed_within_ten_percent(single_3000):
    r, stats = initial_speed(single_3000)
    assert r == pytest.approx(3000, rel=0.10)
    assert len(stats.gammas) == 10


def test_single_target_end_to_end(single_3000):
    (est,) = estimate_speed(single_3000)
    assert est.ok
    assert est.rpm_refined == pytest.approx(3000, rel=0.005)
    assert est.n_blades == 3 and est.theta_c == pytest.approx(2 * math.pi / 3)
    assert est.direction == 1
    assert est.t_s_refined == pytest.approx(refined_step(est.rpm_initial, est.theta_c, 0.8))
    assert np.hypot(est.centroid[0] - 173, est.centroid[1] - 130) < 5
    d = est.to_dict()
    assert set(d) >= {"id", "centroid", "rpm_initial", "rpm_refined", "direction", "theta_c",
                      "n_blades", "n_events", "pairs_converged"}


def test_clockwise_reports_direction():
    (est,) = estimate_speed(simulate(single_propeller_scene(-2000, seed=1)).stream)
    assert est.direction == -1
    assert est.rpm_refined == pytest.approx(2000, rel=0.005)


def test_quad_end_to_end():
    scene = quad_propeller_scene(seed=0)
    estimates = estimate_speed(simulate(scene).stream)
    assert len(estimates) == 4
    for p in scene.propellers:
        est = min(estimates, key=lambda e: math.dist(e.centroid, p.center))
        assert est.rpm_refined == pytest.approx(p.rpm, rel=0.01)


def test_short_stream_rejected():
    s = simulate(single_propeller_scene(3000, duration=100_000)).stream
    with pytest.raises(ValueError, match="capture_len"):
        estimate_speed(s)


def test_empty_stream_gives_no_targets():
    s = EventStream.empty(346, 260)
    s = EventStream(s.t, s.x, s.y, s.p, 346, 260, duration=150_000)
    assert estimate_speed(s) == []


def test_deterministic_and_translation_invariant(single_3000):
    a = estimate_speed(single_3000)[0]
    b = estimate_speed(single_3000)[0]
    assert a.to_dict() == b.to_dict()
    s = single_3000
    moved = EventStream(s.t, s.x + 40, s.y - 25, s.p, s.width, s.height, s.duration)
    c = estimate_speed(moved)[0]
    assert c.rpm_refined == pytest.approx(a.rpm_refined, rel=1e-9)
