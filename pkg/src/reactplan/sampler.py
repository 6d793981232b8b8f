"""Discrete trajectory candidate generation from a kinematic state.

Each candidate is drawn from one of three motion modes (straight line,
circular arc, clothoid-style spiral) with uniformly sampled control
parameters, then rolled out with midpoint integration. Candidate 0 is always
the stationary trajectory so a stopping option exists.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import HorizonMismatch, InsufficientHistory
from .geometry import Pose2, wrap_angle

INTEGRATION_SUBSTEPS = 10

MODE_LINE = 0
MODE_CIRCLE = 1
MODE_SPIRAL = 2


@dataclass(frozen=True)
class Trajectory:
    """Timed sequence of poses with speed.

    Waypoint 0 anchors the current pose at ``start_time``; subsequent
    waypoints are spaced ``dt`` apart.
    """

    start_time: float
    dt: float
    poses: np.ndarray    # (T, 3): x, y, heading
    speeds: np.ndarray   # (T,)

    def __post_init__(self):
        poses = np.asarray(self.poses, dtype=float)
        speeds = np.asarray(self.speeds, dtype=float)
        if poses.ndim != 2 or poses.shape[1] != 3 or poses.shape[0] < 1:
            raise ValueError("poses must be a (T, 3) array with T >= 1")
        if speeds.shape != (poses.shape[0],):
            raise ValueError("speeds must be a (T,) array")
        if not (np.all(np.isfinite(poses)) and np.all(np.isfinite(speeds))):
            raise ValueError("trajectory entries must be finite")
        if np.any(speeds < 0):
            raise ValueError("speeds must be non-negative")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "poses", poses)
        object.__setattr__(self, "speeds", speeds)

    def __len__(self) -> int:
        return self.poses.shape[0]

    @property
    def positions(self) -> np.ndarray:
        return self.poses[:, :2]

    @property
    def headings(self) -> np.ndarray:
        return self.poses[:, 2]

    @property
    def duration(self) -> float:
        return (len(self) - 1) * self.dt

    def state_at(self, tau: float) -> tuple[Pose2, float]:
        """Interpolated pose and speed at time offset tau from start_time.

        Clamped to the trajectory extent; heading interpolation is wrap-aware.
        """
        tau = min(max(tau, 0.0), self.duration)
        idx = min(int(tau / self.dt), len(self) - 1)
        if idx >= len(self) - 1:
            p = self.poses[-1]
            return Pose2(p[0], p[1], p[2]), float(self.speeds[-1])
        frac = tau / self.dt - idx
        a, b = self.poses[idx], self.poses[idx + 1]
        x = a[0] + frac * (b[0] - a[0])
        y = a[1] + frac * (b[1] - a[1])
        heading = wrap_angle(a[2] + frac * wrap_angle(b[2] - a[2]))
        speed = self.speeds[idx] + frac * (self.speeds[idx + 1] - self.speeds[idx])
        return Pose2(x, y, heading), float(speed)

    def to_dict(self) -> dict:
        return {
            "start_time": self.start_time,
            "dt": self.dt,
            "poses": self.poses.tolist(),
            "speeds": self.speeds.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Trajectory":
        return cls(start_time=data["start_time"], dt=data["dt"],
                   poses=np.asarray(data["poses"], dtype=float),
                   speeds=np.asarray(data["speeds"], dtype=float))


@dataclass(frozen=True)
class KinematicState:
    pose: Pose2
    speed: float

    def __post_init__(self):
        if not np.isfinite(self.speed) or self.speed < 0:
            raise ValueError("speed must be finite and non-negative")


@dataclass(frozen=True)
class SamplerConfig:
    k: int = 12
    horizon_steps: int = 8
    dt: float = 0.5
    mode_probs: tuple[float, float, float] = (0.3, 0.2, 0.5)
    accel_range: tuple[float, float] = (-4.0, 3.0)
    curvature_range: tuple[float, float] = (-0.2, 0.2)
    spiral_rate_range: tuple[float, float] = (-0.1, 0.1)
    v_max: float = 15.0
    seed: int = 0

    def __post_init__(self):
        probs = np.asarray(self.mode_probs, dtype=float)
        if probs.shape != (3,) or np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError("mode_probs must be 3 non-negative values summing to 1")
        for lo, hi in (self.accel_range, self.curvature_range, self.spiral_rate_range):
            if hi < lo:
                raise ValueError("parameter ranges must be non-empty intervals")
        if self.k < 1 or self.horizon_steps < 1 or self.dt <= 0:
            raise ValueError("k, horizon_steps must be >= 1 and dt > 0")

    def to_dict(self) -> dict:
        return {
            "k": self.k, "horizon_steps": self.horizon_steps, "dt": self.dt,
            "mode_probs": list(self.mode_probs),
            "accel_range": list(self.accel_range),
            "curvature_range": list(self.curvature_range),
            "spiral_rate_range": list(self.spiral_rate_range),
            "v_max": self.v_max, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SamplerConfig":
        return cls(k=data["k"], horizon_steps=data["horizon_steps"], dt=data["dt"],
                   mode_probs=tuple(data["mode_probs"]),
                   accel_range=tuple(data["accel_range"]),
                   curvature_range=tuple(data["curvature_range"]),
                   spiral_rate_range=tuple(data["spiral_rate_range"]),
                   v_max=data["v_max"], seed=data["seed"])


@dataclass(frozen=True)
class CandidateControls:
    mode: int
    accel: float
    curvature: float
    curvature_rate: float


def estimate_state(past: Trajectory) -> KinematicState:
    """Kinematic state from a past trajectory: last pose, recent mean speed.

    Speed is the mean of the last min(3, len-1) displacement magnitudes
    divided by dt.
    """
    if len(past) < 2:
        raise InsufficientHistory("need at least 2 past waypoints")
    n = min(3, len(past) - 1)
    steps = np.diff(past.positions[-(n + 1):], axis=0)
    speed = float(np.mean(np.hypot(steps[:, 0], steps[:, 1]))) / past.dt
    p = past.poses[-1]
    return KinematicState(pose=Pose2(p[0], p[1], p[2]), speed=speed)


def draw_controls(cfg: SamplerConfig, index: int) -> CandidateControls:
    """Control parameters for candidate ``index`` (index >= 1).

    Each candidate owns an independent generator derived from (seed, index),
    so the draw for one candidate never depends on how many others exist.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), int(index)]))
    u = rng.uniform()
    p_line, p_circle, _ = cfg.mode_probs
    if u < p_line:
        mode = MODE_LINE
    elif u < p_line + p_circle:
        mode = MODE_CIRCLE
    else:
        mode = MODE_SPIRAL
    accel = rng.uniform(*cfg.accel_range)
    curvature = 0.0
    rate = 0.0
    if mode in (MODE_CIRCLE, MODE_SPIRAL):
        curvature = rng.uniform(*cfg.curvature_range)
    if mode == MODE_SPIRAL:
        rate = rng.uniform(*cfg.spiral_rate_range)
    return CandidateControls(mode=mode, accel=accel, curvature=curvature, curvature_rate=rate)


def integrate_controls(state: KinematicState, controls, cfg: SamplerConfig,
                       start_time: float = 0.0) -> list[Trajectory]:
    """Roll out one or more control draws from a common start state.

    Speed follows v(t) = clip(v0 + a*t, 0, v_max); heading follows
    theta(s) = theta0 + kappa0*s + 0.5*rate*s^2 in arclength s. Positions use
    midpoint integration with INTEGRATION_SUBSTEPS substeps per dt.
    """
    if isinstance(controls, CandidateControls):
        controls = [controls]
    n = len(controls)
    T = cfg.horizon_steps
    accel = np.array([c.accel for c in controls])
    kappa0 = np.array([c.curvature for c in controls])
    rate = np.array([c.curvature_rate for c in controls])

    h0 = state.pose.heading
    v0 = state.speed
    poses = np.empty((n, T, 3))
    speeds = np.empty((n, T))
    poses[:, 0, 0] = state.pose.x
    poses[:, 0, 1] = state.pose.y
    poses[:, 0, 2] = h0
    speeds[:, 0] = min(max(v0, 0.0), cfg.v_max)

    x = np.full(n, state.pose.x)
    y = np.full(n, state.pose.y)
    s = np.zeros(n)
    h_sub = cfg.dt / INTEGRATION_SUBSTEPS
    sub = 0
    for step in range(1, T):
        for _ in range(INTEGRATION_SUBSTEPS):
            t_mid = (sub + 0.5) * h_sub
            v_mid = np.clip(v0 + accel * t_mid, 0.0, cfg.v_max)
            ds = v_mid * h_sub
            s_mid = s + 0.5 * ds
            theta = h0 + kappa0 * s_mid + 0.5 * rate * s_mid ** 2
            x = x + ds * np.cos(theta)
            y = y + ds * np.sin(theta)
            s = s + ds
            sub += 1
        poses[:, step, 0] = x
        poses[:, step, 1] = y
        poses[:, step, 2] = wrap_angle(h0 + kappa0 * s + 0.5 * rate * s ** 2)
        speeds[:, step] = np.clip(v0 + accel * (sub * h_sub), 0.0, cfg.v_max)

    return [Trajectory(start_time=start_time, dt=cfg.dt,
                       poses=poses[i], speeds=speeds[i]) for i in range(n)]


def _stationary(state: KinematicState, cfg: SamplerConfig, start_time: float) -> Trajectory:
    T = cfg.horizon_steps
    poses = np.tile([state.pose.x, state.pose.y, state.pose.heading], (T, 1))
    return Trajectory(start_time=start_time, dt=cfg.dt, poses=poses, speeds=np.zeros(T))


def sample_candidates(state: KinematicState, cfg: SamplerConfig,
                      start_time: float = 0.0) -> list[Trajectory]:
    """Exactly K candidate trajectories anchored at the current pose.

    Candidate 0 is the stationary trajectory; candidates 1..K-1 come from
    per-candidate seeded control draws, which makes the output prefix-stable
    under increasing K and bit-identical for a fixed seed.
    """
    candidates = [_stationary(state, cfg, start_time)]
    if cfg.k > 1:
        controls = [draw_controls(cfg, idx) for idx in range(1, cfg.k)]
        candidates.extend(integrate_controls(state, controls, cfg, start_time))
    return candidates


def trajectory_l2(a: Trajectory, b: Trajectory) -> float:
    """Sum over waypoints of squared positional distance."""
    if len(a) != len(b) or a.dt != b.dt:
        raise HorizonMismatch("trajectories must share length and dt")
    diff = a.positions - b.positions
    return float(np.sum(diff * diff))


def closest_candidate(candidates: list[Trajectory], target: Trajectory) -> int:
    """Index of the candidate with minimum squared distance; ties pick the lowest."""
    if not candidates:
        raise ValueError("candidates must be non-empty")
    dists = np.array([trajectory_l2(c, target) for c in candidates])
    return int(np.argmin(dists))
