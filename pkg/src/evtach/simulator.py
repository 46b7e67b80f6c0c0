"""Synthetic event streams of rotating multi-blade propellers.

Blades are modelled geometrically rather than photometrically: every 50 us
tick each blade is a rectangle at its current angle, and a Poisson number of
events is dropped along its two long edges. The leading edge fires ON (+1)
events and the trailing edge OFF (-1) events.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import SceneError
from .events import US_PER_MS, EventStream

TICK_US = 50
BLUR_SIGMA = 0.5
JITTER_PERIOD_US = 500_000
# blade rectangles start at this fraction of blade_length (the hub)
HUB_FRACTION = 0.25
NOISE_LABEL = -1


@dataclass(frozen=True)
class PropellerSpec:
    center: tuple[float, float]
    n_blades: int
    blade_length: float
    blade_width: float
    rpm: float
    phase0: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    @property
    def omega(self) -> float:
        """Angular speed in rad/s (positive = counter-clockwise in x/y)."""
        return self.rpm * 2.0 * math.pi / 60.0

    def validate(self) -> None:
        if not isinstance(self.n_blades, int) or not 1 <= self.n_blades <= 8:
            raise SceneError(f"n_blades must be an integer in [1, 8], got {self.n_blades!r}")
        if not self.blade_width > 0:
            raise SceneError("blade_width must be > 0")
        if not self.blade_length > self.blade_width:
            raise SceneError("blade_length must exceed blade_width")
        if not abs(self.rpm) > 0 or not math.isfinite(self.rpm):
            raise SceneError("rpm must be finite and non-zero")


@dataclass(frozen=True)
class SceneSpec:
    width: int
    height: int
    duration: int
    propellers: tuple[PropellerSpec, ...]
    events_per_blade_ms: float = 100.0
    noise_rate: float = 0.0
    jitter_amp: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        props = tuple(
            p if isinstance(p, PropellerSpec) else PropellerSpec(**p) for p in self.propellers
        )
        object.__setattr__(self, "propellers", props)

    def validate(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise SceneError(f"invalid sensor geometry {self.width}x{self.height}")
        if self.duration <= 0:
            raise SceneError("duration must be > 0")
        if not self.events_per_blade_ms > 0:
            raise SceneError("events_per_blade_ms must be > 0")
        if not self.noise_rate >= 0:
            raise SceneError("noise_rate must be >= 0")
        if not self.jitter_amp >= 0:
            raise SceneError("jitter_amp must be >= 0")
        for i, prop in enumerate(self.propellers):
            try:
                prop.validate()
            except SceneError as exc:
                raise SceneError(f"propeller {i}: {exc}") from None
            cx, cy = prop.center
            r = prop.blade_length
            if cx - r < 0 or cy - r < 0 or cx + r > self.width - 1 or cy + r > self.height - 1:
                raise SceneError(
                    f"propeller {i}: disk (center ({cx:g}, {cy:g}) +/- blade_length {r:g}) "
                    f"does not lie inside the {self.width}x{self.height} frame"
                )

    def to_dict(self) -> dict:
        d = asdict(self)
        for p in d["propellers"]:
            p["center"] = list(p["center"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SceneSpec:
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise SceneError(f"unknown scene fields: {sorted(unknown)}")
        try:
            props = tuple(PropellerSpec(**p) for p in d.get("propellers", []))
            return cls(**{**d, "propellers": props})
        except TypeError as exc:
            raise SceneError(f"malformed scene: {exc}") from None

    @classmethod
    def load(cls, path: str | os.PathLike) -> SceneSpec:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SceneError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise SceneError(f"{path}: scene must be a JSON object")
        return cls.from_dict(data)


@dataclass(frozen=True)
class TargetTruth:
    rpm: float
    center: tuple[float, float]
    n_blades: int


@dataclass(frozen=True)
class GroundTruth:
    targets: tuple[TargetTruth, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {
            "targets": [
                {"id": i, "rpm": t.rpm, "center": list(t.center), "n_blades": t.n_blades}
                for i, t in enumerate(self.targets)
            ]
        }

    def dump(self, path: str | os.PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


class Simulation(NamedTuple):
    stream: EventStream
    truth: GroundTruth
    # per-event origin: propeller index, or NOISE_LABEL for background events
    labels: np.ndarray


def _blade_events(prop: PropellerSpec, scene: SceneSpec, rng: np.random.Generator):
    n_ticks = -(-scene.duration // TICK_US)
    lam = scene.events_per_blade_ms * TICK_US / US_PER_MS
    counts = rng.poisson(lam, size=(n_ticks, prop.n_blades))
    total = int(counts.sum())
    tick = np.repeat(np.repeat(np.arange(n_ticks), prop.n_blades), counts.ravel())
    blade = np.repeat(np.tile(np.arange(prop.n_blades), n_ticks), counts.ravel())

    t = tick * TICK_US + rng.integers(0, TICK_US, size=total)
    phi = (
        prop.phase0
        + prop.omega * (tick * TICK_US) * 1e-6
        + blade * (2.0 * math.pi / prop.n_blades)
    )
    r = rng.uniform(HUB_FRACTION * prop.blade_length, prop.blade_length, size=total)
    side = rng.choice(np.array([-1.0, 1.0]), size=total)
    half_w = 0.5 * prop.blade_width
    cos, sin = np.cos(phi), np.sin(phi)
    x = prop.center[0] + r * cos - side * half_w * sin + rng.normal(0.0, BLUR_SIGMA, total)
    y = prop.center[1] + r * sin + side * half_w * cos + rng.normal(0.0, BLUR_SIGMA, total)
    # the edge on the +normal side leads when rotating counter-clockwise
    p = np.where(side * math.copysign(1.0, prop.rpm) > 0, 1, -1)

    # blur never carries an event off the blade's disk
    dx = np.rint(x) - prop.center[0]
    dy = np.rint(y) - prop.center[1]
    keep = dx * dx + dy * dy <= (prop.blade_length + 1.0) ** 2
    return t[keep], x[keep], y[keep], p[keep]


def simulate(scene: SceneSpec) -> Simulation:
    """Generate the event stream for ``scene``; deterministic for a given seed."""
    scene.validate()
    rng = np.random.default_rng(scene.seed)
    ts, xs, ys, ps, labels = [], [], [], [], []
    for i, prop in enumerate(scene.propellers):
        t, x, y, p = _blade_events(prop, scene, rng)
        ts.append(t), xs.append(x), ys.append(y), ps.append(p)
        labels.append(np.full(len(t), i))

    n_noise = int(rng.poisson(scene.noise_rate * scene.duration / US_PER_MS))
    ts.append(rng.integers(0, scene.duration, size=n_noise))
    xs.append(rng.uniform(-0.5, scene.width - 0.5, size=n_noise))
    ys.append(rng.uniform(-0.5, scene.height - 0.5, size=n_noise))
    ps.append(rng.choice(np.array([-1, 1]), size=n_noise))
    labels.append(np.full(n_noise, NOISE_LABEL))

    t = np.concatenate(ts).astype(np.int64)
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    p = np.concatenate(ps)
    lab = np.concatenate(labels)
    if scene.jitter_amp > 0:
        w = 2.0 * math.pi * t / JITTER_PERIOD_US
        x = x + scene.jitter_amp * np.sin(w)
        y = y + scene.jitter_amp * np.cos(w)
    xi = np.rint(x).astype(np.int64)
    yi = np.rint(y).astype(np.int64)
    inside = (xi >= 0) & (xi < scene.width) & (yi >= 0) & (yi < scene.height)

    order = np.argsort(t[inside], kind="stable")
    stream = EventStream(
        t[inside][order], xi[inside][order], yi[inside][order], p[inside][order],
        scene.width, scene.height, scene.duration,
    )
    truth = GroundTruth(
        tuple(TargetTruth(pr.rpm, pr.center, pr.n_blades) for pr in scene.propellers)
    )
    return Simulation(stream, truth, lab[inside][order])


def ground_truth_rpm(scene: SceneSpec, target_index: int) -> float:
    if not 0 <= target_index < len(scene.propellers):
        raise IndexError(
            f"target index {target_index} out of range for {len(scene.propellers)} propellers"
        )
    return scene.propellers[target_index].rpm


def single_propeller_scene(
    rpm: float,
    *,
    n_blades: int = 3,
    seed: int = 0,
    duration: int = 150_000,
    width: int = 346,
    height: int = 260,
    center: tuple[float, float] | None = None,
    blade_length: float = 60.0,
    blade_width: float = 8.0,
    events_per_blade_ms: float = 100.0,
    noise_fraction: float = 0.0,
    jitter_amp: float = 0.0,
) -> SceneSpec:
    """Convenience scene: one propeller, phase drawn from the seed.

    ``noise_fraction`` sets the background rate relative to the blade event rate.
    """
    if center is None:
        center = (width // 2, height // 2)
    phase0 = float(np.random.default_rng([seed, 7]).uniform(0.0, 2.0 * math.pi))
    prop = PropellerSpec(center, n_blades, blade_length, blade_width, rpm, phase0)
    return SceneSpec(
        width, height, duration, (prop,),
        events_per_blade_ms=events_per_blade_ms,
        noise_rate=noise_fraction * n_blades * events_per_blade_ms,
        jitter_amp=jitter_amp,
        seed=seed,
    )


def quad_propeller_scene(
    rpms=(1200.0, 2400.0, 3600.0, 4800.0),
    *,
    seed: int = 0,
    n_blades: int = 3,
    duration: int = 150_000,
    blade_length: float = 40.0,
    blade_width: float = 6.0,
    events_per_blade_ms: float = 100.0,
    noise_fraction: float = 0.0,
) -> SceneSpec:
    """Four propellers on a drone-like square layout in a 346x260 frame."""
    centers = [(93.0, 70.0), (253.0, 70.0), (93.0, 190.0), (253.0, 190.0)]
    phases = np.random.default_rng([seed, 11]).uniform(0.0, 2.0 * math.pi, size=4)
    props = tuple(
        PropellerSpec(c, n_blades, blade_length, blade_width, float(r), float(ph))
        for c, r, ph in zip(centers, rpms, phases)
    )
    return SceneSpec(
        346, 260, duration, props,
        events_per_blade_ms=events_per_blade_ms,
        noise_rate=noise_fraction * 4 * n_blades * events_per_blade_ms,
        seed=seed,
    )
