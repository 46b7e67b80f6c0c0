"""Coarse-to-fine rotational speed estimation and the RMAE metric."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import (
    EmptyInput,
    EstimationFailed,
    ExtractionFailed,
    SymmetryUndetermined,
    TooFewEvents,
    UndefinedMetric,
)
from .events import EventStream, slice_stream
from .extraction import (
    DEFAULT_EPSILON,
    DEFAULT_GRID,
    SymmetryInfo,
    remove_outliers,
    select_k,
    symmetry_angle,
)
from .registration import BidirectionalResult, IcpParams, bidirectional_yaw

US_PER_S = 1_000_000


@dataclass(frozen=True)
class EstimatorParams:
    capture_len: int = 150_000
    t_l: int = 10_000
    t_s_initial: int = 1_000
    eta: float = 0.8
    # spatial units per millisecond along the T axis
    temporal_scale: float = 1000.0
    n_pairs: int = 10
    grid_size: int = DEFAULT_GRID
    epsilon: float = DEFAULT_EPSILON
    k_max: int = 6

    def __post_init__(self) -> None:
        if not 0 < self.t_s_initial <= self.t_l <= self.capture_len:
            raise ValueError("need 0 < t_s_initial <= t_l <= capture_len")
        if not 0 < self.eta < 1:
            raise ValueError("eta must lie in (0, 1)")
        if not self.temporal_scale > 0:
            raise ValueError("temporal_scale must be positive")
        if self.n_pairs < 1:
            raise ValueError("n_pairs must be >= 1")
        if self.grid_size < 1:
            raise ValueError("grid_size must be >= 1")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.k_max < 2:
            raise ValueError("k_max must be >= 2")

    @property
    def icp(self) -> IcpParams:
        return IcpParams(temporal_scale=self.temporal_scale)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PairStats:
    """Yaw per slice pair for one step length."""

    t_s: float
    t_l: float
    gammas: list[float] = field(default_factory=list)
    converged: list[bool] = field(default_factory=list)
    degraded: list[bool] = field(default_factory=list)

    @property
    def valid(self) -> np.ndarray:
        g = np.asarray(self.gammas, dtype=np.float64)
        return g[np.isfinite(g)]

    def rpm(self) -> float:
        g = self.valid
        if len(g) == 0:
            raise EstimationFailed("no slice pair registered successfully")
        return rpm_from_yaw(float(np.median(np.abs(g))), self.t_s)

    def direction(self) -> int:
        # counter-clockwise motion registers as negative yaw
        return -1 if np.median(self.valid) > 0 else 1


@dataclass
class SpeedEstimate:
    target_id: int
    centroid: tuple[float, float]
    rpm_initial: float = math.nan
    rpm_refined: float = math.nan
    direction: int = 0
    theta_c: float = 2.0 * math.pi
    n_blades: int = 1
    n_events_used: int = 0
    t_s_refined: float = math.nan
    mean_gamma: list[float] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None and math.isfinite(self.rpm_refined) and self.rpm_refined > 0

    def to_dict(self) -> dict:
        return {
            "id": self.target_id,
            "centroid": [round(float(c), 6) for c in self.centroid],
            "rpm_initial": _json_float(self.rpm_initial),
            "rpm_refined": _json_float(self.rpm_refined),
            "direction": self.direction,
            "theta_c": self.theta_c,
            "n_blades": self.n_blades,
            "n_events": self.n_events_used,
            "pairs_converged": self.diagnostics.get("refined_converged", []),
            "error": self.error,
        }


def _json_float(v: float):
    return v if math.isfinite(v) else None


def rpm_from_yaw(gamma: float, t_s_us: float) -> float:
    """Speed in rpm for a yaw of ``gamma`` rad over ``t_s_us`` microseconds."""
    return gamma / (2.0 * math.pi * (t_s_us / US_PER_S)) * 60.0


def pair_yaws(target: EventStream, t_s: float, t_l: float, n_pairs: int, icp: IcpParams, t_end: float) -> PairStats:
    """Bidirectional yaw for up to ``n_pairs`` consecutive pairs of slices
    (starts 0, t_s, 2 t_s, ...) that fit before ``t_end``."""
    stats = PairStats(t_s, t_l)
    for i in range(n_pairs):
        start = i * t_s
        if start + t_s + t_l > t_end:
            break
        P = slice_stream(target, start, t_l)
        Q = slice_stream(target, start + t_s, t_l)
        try:
            res: BidirectionalResult = bidirectional_yaw(P, Q, icp)
        except TooFewEvents:
            stats.gammas.append(math.nan)
            stats.converged.append(False)
            stats.degraded.append(True)
            continue
        stats.gammas.append(res.gamma)
        stats.converged.append(res.converged)
        stats.degraded.append(res.degraded)
    return stats


def initial_speed(target: EventStream, params: EstimatorParams = EstimatorParams()) -> tuple[float, PairStats]:
    """Coarse speed from short-step registration: median |yaw| over pairs."""
    need = params.t_l + params.n_pairs * params.t_s_initial
    if target.duration < need:
        raise ValueError(f"target spans {target.duration} us, need {need} us")
    stats = pair_yaws(
        target, params.t_s_initial, params.t_l, params.n_pairs, params.icp, params.capture_len
    )
    return stats.rpm(), stats


def refined_step(r_init: float, theta_c: float, eta: float, t_s_min: float = 1_000, t_s_max: float = 37_500) -> float:
    """Largest safe step (us) given a coarse speed, clamped to [t_s_min, t_s_max]."""
    if not r_init > 0:
        raise ValueError("r_init must be > 0")
    if not 0 < theta_c <= 2.0 * math.pi:
        raise ValueError("theta_c must lie in (0, 2*pi]")
    if not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")
    t = eta * (60.0 / (2.0 * r_init)) * (theta_c / (2.0 * math.pi)) * US_PER_S
    return min(max(t, t_s_min), t_s_max)


def _estimate_target(i: int, events: EventStream, centroid, params: EstimatorParams) -> SpeedEstimate:
    est = SpeedEstimate(i, (float(centroid[0]), float(centroid[1])))
    target = events.select(remove_outliers(events, centroid))
    est.n_events_used = len(target)
    try:
        sym = symmetry_angle(target)
    except SymmetryUndetermined:
        sym = SymmetryInfo.from_repeats(1)
        est.diagnostics["symmetry_fallback"] = True
    est.theta_c, est.n_blades = sym.theta_c, sym.n_repeats
    try:
        est.rpm_initial, coarse = initial_speed(target, params)
    except EstimationFailed as exc:
        est.error = f"initial alignment failed: {exc}"
        return est
    est.diagnostics["initial_converged"] = coarse.converged
    est.diagnostics["initial_gamma"] = coarse.gammas

    t_s = refined_step(
        est.rpm_initial, sym.theta_c, params.eta, params.t_s_initial, params.capture_len / 4
    )
    t_l = max(params.t_l, 2.0 * t_s)
    fine = pair_yaws(target, t_s, t_l, params.n_pairs, params.icp, params.capture_len)
    est.t_s_refined = t_s
    est.mean_gamma = fine.gammas
    est.diagnostics["refined_converged"] = fine.converged
    est.diagnostics["refined_degraded"] = fine.degraded
    try:
        est.rpm_refined = fine.rpm()
        est.direction = fine.direction()
    except EstimationFailed as exc:
        est.error = f"refinement failed: {exc}"
    return est


def estimate_speed(stream: EventStream, params: EstimatorParams = EstimatorParams()) -> list[SpeedEstimate]:
    """Estimate the speed of every rotating target in the first capture window.

    Targets that fail carry an ``error`` message instead of a speed; an empty
    list means no target could be extracted at all.
    """
    if stream.duration < params.capture_len:
        raise ValueError(
            f"stream lasts {stream.duration} us, shorter than capture_len {params.capture_len} us"
        )
    window = stream.window(0, params.capture_len)
    try:
        clusters = select_k(
            window,
            range(2, params.k_max + 1),
            grid_size=params.grid_size,
            epsilon=params.epsilon,
        )
    except (EmptyInput, ExtractionFailed):
        return []
    out = []
    for i in range(clusters.k):
        members = window.select(clusters.members(i))
        out.append(_estimate_target(i, members, clusters.centroids[i], params))
    return out


def rmae(estimates, ground_truth: float) -> float:
    """Mean of |r - r_gt| / r_gt over the estimates."""
    r = np.asarray(list(estimates), dtype=np.float64)
    if r.size == 0:
        raise UndefinedMetric("RMAE of an empty estimate list")
    if not ground_truth > 0:
        raise ValueError("ground truth must be > 0")
    return float(np.mean(np.abs(r - ground_truth)) / ground_truth)
