import json
import math

import numpy as np
import pytest

from evtach.errors import SceneError
from evtach.simulator import (
    NOISE_LABEL,
    PropellerSpec,
    SceneSpec,
    ground_truth_rpm,
    quad_propeller_scene,
    simulate,
    single_propeller_scene,
)


def one_prop(rpm=3000.0, **kw):
    prop = PropellerSpec((173, 130), 3, 60, 8, rpm, 0.0)
    return SceneSpec(346, 260, 150_000, (prop,), **kw)


def test_events_stay_on_the_disk():
    sim = simulate(one_prop())
    d = np.hypot(sim.stream.x - 173.0, sim.stream.y - 130.0)
    assert len(sim.stream) > 0
    assert d.max() <= 61.0


def test_three_lobes_follow_blade_angle():
    rpm = 3000.0
    scene = one_prop(rpm)
    sim = simulate(scene)
    omega = scene.propellers[0].omega
    assert omega * 1e-3 == pytest.approx(0.3142, abs=1e-4)
    s = sim.stream
    for t0 in (0, 37_000, 101_000):
        m = (s.t >= t0) & (s.t < t0 + 1000)
        dx, dy = s.x[m] - 173.0, s.y[m] - 130.0
        far = np.hypot(dx, dy) >= 30
        ang = np.arctan2(dy[far], dx[far])
        blade = omega * (t0 + 500) * 1e-6
        sector = 2 * math.pi / 3
        rel = np.mod(ang - blade + sector / 2, sector) - sector / 2
        # half a millisecond of sweep, edge offset at r = 30 and blur
        tol = 0.5 * omega * 1e-3 + math.atan(4.5 / 30) + 0.05
        assert np.mean(np.abs(rel) <= tol) >= 0.95
        lobe = np.round(np.mod(ang - blade, 2 * math.pi) / sector).astype(int) % 3
        share = np.bincount(lobe, minlength=3) / len(lobe)
        assert share.min() > 0.25


def test_deterministic_for_seed():
    a = simulate(single_propeller_scene(1000, seed=5, noise_fraction=0.1, jitter_amp=2))
    b = simulate(single_propeller_scene(1000, seed=5, noise_fraction=0.1, jitter_amp=2))
    assert a.stream == b.stream
    assert np.array_equal(a.labels, b.labels)
    c = simulate(single_propeller_scene(1000, seed=6))
    assert c.stream != a.stream


@pytest.mark.parametrize("noise", [0.0, 0.1])
def test_event_count_matches_rate(noise):
    scene = quad_propeller_scene(seed=2, noise_fraction=noise)
    n = len(simulate(scene).stream)
    ms = scene.duration / 1000
    expected = ms * sum(p.n_blades * scene.events_per_blade_ms for p in scene.propellers)
    expected += ms * scene.noise_rate
    assert abs(n - expected) / expected < 0.05


def test_sorted_and_labelled():
    sim = simulate(single_propeller_scene(2000, seed=1, noise_fraction=0.1))
    assert np.all(np.diff(sim.stream.t) >= 0)
    assert len(sim.labels) == len(sim.stream)
    noise = np.mean(sim.labels == NOISE_LABEL)
    assert 0.07 < noise < 0.11
    assert set(np.unique(sim.stream.p)) == {-1, 1}
    assert sim.stream.duration == 150_000


def test_polarity_marks_leading_edge():
    # counter-clockwise: the +1 edge sits ahead of the blade axis
    scene = one_prop(3000.0)
    s = simulate(scene).stream
    m = s.t < 50
    dx, dy = s.x[m] - 173.0, s.y[m] - 130.0
    far = np.hypot(dx, dy) > 30
    rel = np.mod(np.arctan2(dy, dx) + np.pi / 3, 2 * np.pi / 3) - np.pi / 3
    assert np.mean(rel[far & (s.p[m] == 1)]) > 0
    assert np.mean(rel[far & (s.p[m] == -1)]) < 0


def test_ground_truth_rpm():
    assert ground_truth_rpm(single_propeller_scene(6000), 0) == 6000
    props = (PropellerSpec((80, 80), 3, 40, 6, 300), PropellerSpec((250, 150), 2, 40, 6, 4500))
    scene = SceneSpec(346, 260, 100_000, props)
    assert ground_truth_rpm(scene, 1) == 4500
    assert ground_truth_rpm(single_propeller_scene(-1200), 0) == -1200
    with pytest.raises(IndexError):
        ground_truth_rpm(scene, 2)


def test_truth_record():
    truth = simulate(quad_propeller_scene(seed=0, duration=1000)).truth.to_dict()
    assert [t["rpm"] for t in truth["targets"]] == [1200, 2400, 3600, 4800]
    assert truth["targets"][3]["center"] == [253.0, 190.0]
    assert truth["targets"][0]["n_blades"] == 3


@pytest.mark.parametrize(
    "kw, msg",
    [
        (dict(center=(20, 130)), "inside"),
        (dict(n_blades=0), "n_blades"),
        (dict(rpm=0.0), "rpm"),
        (dict(blade_width=0.0), "blade_width"),
        (dict(blade_length=5.0), "blade_length"),
    ],
)
def test_invalid_scene_rejected(kw, msg):
    args = dict(center=(173, 130), n_blades=3, blade_length=60, blade_width=8, rpm=3000.0)
    args.update(kw)
    with pytest.raises(SceneError, match=msg):
        simulate(SceneSpec(346, 260, 1000, (PropellerSpec(**args),)))


def test_invalid_scene_fields():
    with pytest.raises(SceneError):
        simulate(SceneSpec(0, 260, 1000, ()))
    with pytest.raises(SceneError):
        simulate(SceneSpec(346, 260, 1000, (), noise_rate=-1))


def test_scene_json_round_trip(tmp_path):
    scene = quad_propeller_scene(seed=4, noise_fraction=0.1)
    f = tmp_path / "scene.json"
    f.write_text(json.dumps(scene.to_dict()))
    assert SceneSpec.load(f) == scene
    with pytest.raises(SceneError, match="unknown"):
        SceneSpec.from_dict({**scene.to_dict(), "colour": "red"})


def test_jitter_shifts_whole_scene():
    base = simulate(single_propeller_scene(1000, seed=3))
    moved = simulate(single_propeller_scene(1000, seed=3, jitter_amp=2.0))
    # same draws, so the mean offset follows the jitter curve
    m = (base.stream.t >= 120_000) & (base.stream.t < 130_000)
    assert len(base.stream) == len(moved.stream)
    w = 2 * np.pi * base.stream.t[m] / 500_000
    dx = moved.stream.x[m] - base.stream.x[m]
    dy = moved.stream.y[m] - base.stream.y[m]
    assert np.mean(dx) == pytest.approx(np.mean(2 * np.sin(w)), abs=0.1)
    assert np.mean(dy) == pytest.approx(np.mean(2 * np.cos(w)), abs=0.1)
