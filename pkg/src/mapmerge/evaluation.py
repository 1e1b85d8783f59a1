"""Trajectory metrics and TUM trajectory files."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatch
from .geometry import SE3, Sim3, compose, inverse, quaternion_to_rotation, rotation_to_quaternion, so3_log, umeyama


class Alignment(enum.Enum):
    NONE = "none"
    SE3 = "se3"
    SIM3 = "sim3"


@dataclass
class Stats:
    mean: float
    median: float
    max: float

    @classmethod
    def of(cls, values):
        v = np.asarray(values, dtype=float)
        if len(v) == 0:
            return cls(0.0, 0.0, 0.0)
        return cls(float(v.mean()), float(np.median(v)), float(v.max()))


@dataclass
class TrajectoryMetric:
    rmse: float
    rpe_translation: Stats
    rpe_rotation: Stats
    alignment_used: Alignment


METHODS = ("PcrProDirect", "PgoStraight", "PgoFullyConnected", "PgoTopMatches", "LoopBox")


@dataclass
class ComparisonRow:
    method: str
    rmse: float
    wall_time_seconds: float
    scale_error_percent: float
    extent: float = 1.0
    error: str | None = None

    @property
    def rmse_percent(self):
        return 100.0 * self.rmse / self.extent

    def as_dict(self, timing=True):
        d = {"method": self.method, "rmse": self.rmse, "rmse_percent": self.rmse_percent,
             "scale_error_percent": self.scale_error_percent, "error": self.error}
        if timing:
            d["wall_time_seconds"] = self.wall_time_seconds
        return d


def _as_poses(traj):
    out = []
    for p in traj:
        if isinstance(p, Sim3):
            out.append(p)
        else:
            out.append(SE3(np.eye(3), np.asarray(p, dtype=float)))
    return out


def align_positions(est, ref, mode):
    """Transform taking estimated positions onto the reference ones."""
    mode = Alignment(mode)
    if mode is Alignment.NONE:
        return Sim3.identity()
    return umeyama(est, ref, with_scale=mode is Alignment.SIM3)


def metric_rmse(estimated, reference, alignment=Alignment.NONE):
    """Translational RMSE after optional alignment, plus consecutive-pose RPE.

    Trajectories are index-associated lists of poses (Sim3) or positions.
    """
    est, ref = _as_poses(estimated), _as_poses(reference)
    if len(est) != len(ref):
        raise LengthMismatch(f"{len(est)} estimated vs {len(ref)} reference poses")
    alignment = Alignment(alignment)
    E = np.array([p.translation for p in est])
    R = np.array([p.translation for p in ref])
    A = align_positions(E, R, alignment) if len(E) >= 3 else Sim3.identity()
    est = [compose(A, p) for p in est]
    E = np.array([p.translation for p in est])
    rmse = float(np.sqrt(np.mean(np.sum((E - R) ** 2, axis=1)))) if len(E) else 0.0
    dt, dr = [], []
    for k in range(len(est) - 1):
        de = compose(inverse(est[k]), est[k + 1])
        dref = compose(inverse(ref[k]), ref[k + 1])
        # compare increments expressed at reference scale
        err = compose(inverse(dref), de)
        dt.append(float(np.linalg.norm(de.translation * ref[k].scale / est[k].scale - dref.translation)))
        dr.append(float(np.linalg.norm(so3_log(err.rotation))))
    return TrajectoryMetric(rmse, Stats.of(dt), Stats.of(dr), alignment)


def merged_trajectory_rmse(scenario, merged, agents=None):
    """Sim3-aligned RMSE between merged keyframe positions and ground truth (global units).

    One alignment for all agents together, so an error in the relative
    scale or pose between agents cannot be absorbed.
    """
    agents = agents or merged.agents
    est, ref = [], []
    for a in agents:
        est.extend(p.translation for p in merged.poses_of(a))
        ref.extend(T.translation for T in scenario.true_poses[a])
    return metric_rmse(np.array(est), np.array(ref), Alignment.SIM3).rmse


# ----------------------------------------------------------------------------
# TUM files: timestamp tx ty tz qx qy qz qw
# ----------------------------------------------------------------------------

def write_tum(path, poses, rate_hz=10.0, timestamps=None):
    ts = timestamps if timestamps is not None else np.arange(len(poses)) / rate_hz
    with open(path, "w") as f:
        for t, p in zip(ts, poses):
            q = rotation_to_quaternion(p.rotation)
            vals = [t, *p.translation, *q]
            f.write(" ".join(f"{v:.9f}" for v in vals) + "\n")


def read_tum(path):
    """Returns (timestamps, list of rigid poses)."""
    ts, poses = [], []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            v = [float(x) for x in line.replace(",", " ").split()]
            if len(v) != 8:
                raise ValueError(f"bad TUM line: {line!r}")
            ts.append(v[0])
            poses.append(SE3(quaternion_to_rotation(v[4:8]), v[1:4]))
    return np.array(ts), poses
