"""ICP registration of embedded event slices and yaw extraction.

Rotations follow the yaw convention

    R_T(g) = [[ cos g, sin g, 0],
              [-sin g, cos g, 0],
              [     0,     0, 1]]

so a point set turned counter-clockwise by ``a`` in (x, y) registers with
``gamma = -a``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateGeometry, EmptyInput, TooFewEvents
from .events import EventSlice, embed

BRUTE_FORCE_BELOW = 500
MIN_EVENTS = 10
_KD_CANDIDATES = 4


def rot_t(gamma: float) -> np.ndarray:
    c, s = math.cos(gamma), math.sin(gamma)
    return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_x(alpha: float) -> np.ndarray:
    c, s = math.cos(alpha), math.sin(alpha)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, s], [0.0, -s, c]])


def rot_y(beta: float) -> np.ndarray:
    c, s = math.cos(beta), math.sin(beta)
    return np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])


@dataclass(frozen=True)
class RigidTransform3:
    R: np.ndarray
    T_r: np.ndarray

    def apply(self, pts: np.ndarray) -> np.ndarray:
        return pts @ self.R.T + self.T_r

    @classmethod
    def identity(cls) -> RigidTransform3:
        return cls(np.eye(3), np.zeros(3))


@dataclass(frozen=True)
class RegistrationResult:
    """Outcome of one ICP run.

    ``gamma_acc`` is the running sum of per-iteration yaw and drives
    termination. ``gamma`` is the yaw of the composed rotation; the two agree
    when every step is a pure yaw, but per-step roll/pitch makes the sum drift,
    so ``gamma`` is what callers should read.
    """

    gamma_acc: float
    iterations: int
    final_residual: float
    converged: bool
    gamma: float
    transform: RigidTransform3 = field(repr=False, compare=False, default_factory=RigidTransform3.identity)
    # per-iteration (gamma, mean nearest-neighbour distance before the step)
    trace: list[tuple[float, float]] = field(default_factory=list, repr=False, compare=False)

    def trace_csv(self) -> str:
        rows = ["iteration,gamma,residual"]
        rows += [f"{i},{g!r},{r!r}" for i, (g, r) in enumerate(self.trace, start=1)]
        return "\n".join(rows) + "\n"


@dataclass(frozen=True)
class BidirectionalResult:
    gamma: float
    forward: RegistrationResult | None
    backward: RegistrationResult | None

    @property
    def degraded(self) -> bool:
        """True when only one direction converged."""
        return self.forward is None or self.backward is None

    @property
    def converged(self) -> bool:
        return self.forward is not None or self.backward is not None


# --------------------------------------------------------------------------
# nearest neighbours
# --------------------------------------------------------------------------

def _sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = a - b
    return (d * d).sum(axis=-1)


def brute_force_nearest(P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """All-pairs nearest neighbour; ties go to the lowest index in Q."""
    P = np.asarray(P, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    out = np.empty(len(P), dtype=np.int64)
    step = max(1, 2_000_000 // max(len(Q), 1))
    for lo in range(0, len(P), step):
        d2 = _sqdist(P[lo:lo + step, None, :], Q[None, :, :])
        out[lo:lo + step] = np.argmin(d2, axis=1)
    return out


class NearestNeighbors:
    """Exact nearest-neighbour index over a fixed target set.

    Results are identical to :func:`brute_force_nearest`, including the
    lowest-index tie rule: the k-d tree only proposes candidates, which are
    re-ranked with the brute-force distance arithmetic.
    """

    def __init__(self, Q: np.ndarray):
        self.Q = np.ascontiguousarray(Q, dtype=np.float64)
        if self.Q.ndim != 2 or len(self.Q) == 0:
            raise EmptyInput("target point set is empty")
        self._tree = cKDTree(self.Q) if len(self.Q) >= BRUTE_FORCE_BELOW else None

    def query(self, P: np.ndarray) -> np.ndarray:
        P = np.asarray(P, dtype=np.float64)
        if len(P) == 0:
            raise EmptyInput("source point set is empty")
        if self._tree is None:
            return brute_force_nearest(P, self.Q)

        k = min(_KD_CANDIDATES, len(self.Q))
        _, cand = self._tree.query(P, k=k)
        cand = cand.reshape(len(P), k)
        d2 = _sqdist(P[:, None, :], self.Q[cand])
        # lowest index among exact minima
        best = d2.min(axis=1)
        masked = np.where(d2 == best[:, None], cand, np.iinfo(np.int64).max)
        out = masked.min(axis=1)

        # candidates may not cover every point tied (to rounding) with the minimum
        kth = d2.max(axis=1)
        unsure = np.flatnonzero(kth <= best * (1.0 + 1e-9) + 1e-300)
        for i in unsure:
            r = math.sqrt(best[i]) * (1.0 + 1e-9) + 1e-12
            idx = np.asarray(self._tree.query_ball_point(P[i], r), dtype=np.int64)
            dd = _sqdist(P[i][None, :], self.Q[idx])
            out[i] = idx[dd == dd.min()].min()
        return out


def nearest_correspondence(P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """For every point of P, the closest point of Q (as an array shaped like P)."""
    P = np.asarray(P, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    if len(P) == 0 or len(Q) == 0:
        raise EmptyInput("nearest_correspondence needs two non-empty point sets")
    return Q[NearestNeighbors(Q).query(P)]


# --------------------------------------------------------------------------
# rigid fit
# --------------------------------------------------------------------------

def fit_rigid(P: np.ndarray, Qc: np.ndarray) -> RigidTransform3:
    """Least-squares rotation and translation taking P onto its correspondences."""
    P = np.asarray(P, dtype=np.float64)
    Qc = np.asarray(Qc, dtype=np.float64)
    if P.shape != Qc.shape or P.ndim != 2 or P.shape[1] != 3:
        raise ValueError("P and Q' must both be (N, 3) with the same N")
    if len(P) < 3:
        raise DegenerateGeometry("need at least 3 correspondences")
    p_bar = P.mean(axis=0)
    q_bar = Qc.mean(axis=0)
    cov = (P - p_bar).T @ (Qc - q_bar)
    U, S, Vt = np.linalg.svd(cov)
    if S[0] <= 0 or S[1] <= S[0] * 1e-12:
        raise DegenerateGeometry(f"covariance rank < 2 (singular values {S})")
    V = Vt.T
    if np.linalg.det(V @ U.T) < 0:
        V[:, -1] = -V[:, -1]
    R = V @ U.T
    return RigidTransform3(R, q_bar - R @ p_bar)


def extract_yaw(R: np.ndarray) -> float:
    """Yaw angle in (-pi, pi] read from the top row of R."""
    g = math.atan2(R[0, 1], R[0, 0])
    return math.pi if g == -math.pi else g


# --------------------------------------------------------------------------
# ICP
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class IcpParams:
    temporal_scale: float = 1.0
    max_iterations: int = 50
    ratio_tol: float = 1e-3
    abs_tol: float = 1e-6
    # start from a translation that overlays the two centroids; off for event
    # slices, whose xy centroid turns with the target
    center: bool = False


def icp_points(P: np.ndarray, Q: np.ndarray, params: IcpParams = IcpParams()) -> RegistrationResult:
    """Register source points P onto target points Q, accumulating yaw."""
    src = np.array(P, dtype=np.float64)
    if len(src) < MIN_EVENTS or len(Q) < MIN_EVENTS:
        raise TooFewEvents(f"need >= {MIN_EVENTS} points per set, got {len(src)} and {len(Q)}")
    nn = NearestNeighbors(Q)
    tgt = nn.Q
    shift = tgt.mean(axis=0) - src.mean(axis=0) if params.center else np.zeros(3)
    src += shift
    gamma_acc = 0.0
    trace: list[tuple[float, float]] = []
    R_total = np.eye(3)
    T_total = shift.copy()
    converged = False
    it = 0
    while it < params.max_iterations:
        it += 1
        matched = tgt[nn.query(src)]
        residual = float(np.sqrt(_sqdist(src, matched)).mean())
        tf = fit_rigid(src, matched)
        gamma = extract_yaw(tf.R)
        gamma_acc += gamma
        R_total = tf.R @ R_total
        T_total = tf.R @ T_total + tf.T_r
        src = tf.apply(src)
        trace.append((gamma, residual))
        if abs(gamma) < params.abs_tol:
            converged = True
            break
        if it >= 2 and abs(gamma) < params.ratio_tol * abs(gamma_acc):
            converged = True
            break
    final = float(np.sqrt(_sqdist(src, tgt[nn.query(src)])).mean())
    return RegistrationResult(
        gamma_acc, it, final, converged, extract_yaw(R_total),
        RigidTransform3(R_total, T_total), trace,
    )


def icp_register(P_slice: EventSlice, Q_slice: EventSlice, params: IcpParams = IcpParams()) -> RegistrationResult:
    if len(P_slice) < MIN_EVENTS or len(Q_slice) < MIN_EVENTS:
        raise TooFewEvents(
            f"need >= {MIN_EVENTS} events per slice, got {len(P_slice)} and {len(Q_slice)}"
        )
    return icp_points(
        embed(P_slice, params.temporal_scale), embed(Q_slice, params.temporal_scale), params
    )


def combine_directions(fwd: RegistrationResult | None, bwd: RegistrationResult | None) -> BidirectionalResult:
    """Average forward and sign-flipped backward yaw; fall back to whichever converged."""
    fwd = fwd if fwd is not None and fwd.converged else None
    bwd = bwd if bwd is not None and bwd.converged else None
    if fwd is not None and bwd is not None:
        gamma = 0.5 * (fwd.gamma - bwd.gamma)
    elif fwd is not None:
        gamma = fwd.gamma
    elif bwd is not None:
        gamma = -bwd.gamma
    else:
        gamma = math.nan
    return BidirectionalResult(gamma, fwd, bwd)


def bidirectional_points(P: np.ndarray, Q: np.ndarray, params: IcpParams = IcpParams()) -> BidirectionalResult:
    fwd = _try(P, Q, params)
    bwd = _try(Q, P, params)
    return combine_directions(fwd, bwd)


def _try(P, Q, params):
    try:
        return icp_points(P, Q, params)
    except DegenerateGeometry:
        return None


def bidirectional_yaw(P_slice: EventSlice, Q_slice: EventSlice, params: IcpParams = IcpParams()) -> BidirectionalResult:
    """Yaw from P to Q estimated in both directions; ``.gamma`` is the average.

    ``.gamma`` is NaN when neither direction converged.
    """
    if len(P_slice) < MIN_EVENTS or len(Q_slice) < MIN_EVENTS:
        raise TooFewEvents(
            f"need >= {MIN_EVENTS} events per slice, got {len(P_slice)} and {len(Q_slice)}"
        )
    return bidirectional_points(
        embed(P_slice, params.temporal_scale), embed(Q_slice, params.temporal_scale), params
    )
