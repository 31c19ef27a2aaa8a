"""Closed-loop tactile grasp refinement and moving-object tracking."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import PoseBounds
from .geometry import Transform, WristPose, apply_increment, r6_to_transform
from .net import PolicyInput, PolicyParams, forward
from .tacsim import HandConfig, NonContactError, ObjectModel, SensorParams, render_hand

EPS_POS = 0.005
EPS_ROT = 0.05


def default_step_clamp(bounds: PoseBounds | None = None) -> np.ndarray:
    """Sampling half-range per component; unsampled x / yaw reuse the smallest sampled one."""
    half = (bounds or PoseBounds()).half_range()
    lin, ang = half[1:3], half[3:5]
    half[0] = lin[lin > 0].min() if np.any(lin > 0) else 0.0
    half[5] = ang[ang > 0].min() if np.any(ang > 0) else 0.0
    return half


@dataclass(frozen=True)
class RefineConfig:
    max_steps: int = 10
    step_clamp: tuple = tuple(default_step_clamp())
    eps_pos: float = EPS_POS
    eps_rot: float = EPS_ROT
    stop_on_threshold: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        clamp = np.asarray(self.step_clamp, dtype=np.float64)
        if clamp.shape != (6,) or np.any(clamp < 0):
            raise ValueError("step_clamp must be 6 non-negative values")
        if not (self.eps_pos > 0 and self.eps_rot > 0):
            raise ValueError("thresholds must be positive")


def pose_error(p, p_g, q, q_g, tol=1e-6):
    """Position distance and quaternion geodesic angle ``2 acos |<q, q_g>|``."""
    q = np.asarray(q, dtype=np.float64)
    q_g = np.asarray(q_g, dtype=np.float64)
    for name, quat in (("Q", q), ("Q_g", q_g)):
        if abs(np.linalg.norm(quat) - 1.0) > tol:
            raise ValueError(f"{name} is not a unit quaternion (norm {np.linalg.norm(quat):.9f})")
    d_pos = float(np.linalg.norm(np.asarray(p, dtype=np.float64) - np.asarray(p_g, dtype=np.float64)))
    dot = min(1.0, max(-1.0, abs(float(q @ q_g))))
    return d_pos, 2.0 * float(np.arccos(dot))


def wrist_error(wrist: WristPose, target: WristPose):
    return pose_error(wrist.position, target.position, wrist.orientation, target.orientation)


@dataclass
class StepEntry:
    pose: np.ndarray                 # R6 wrist pose at this step
    joints: np.ndarray | None
    images: np.ndarray | None        # (3, rows, cols)
    d_pos: float
    d_rot: float
    predicted: np.ndarray | None = None   # raw policy output
    applied: np.ndarray | None = None     # clamped increment actually executed


@dataclass
class Trajectory:
    entries: list
    target_pose: WristPose | None
    target_images: np.ndarray
    reason: str = "max_steps"
    target_poses: list = field(default_factory=list)   # per-step target when it moves

    def errors(self):
        return (np.array([e.d_pos for e in self.entries]), np.array([e.d_rot for e in self.entries]))

    def final(self) -> StepEntry:
        return self.entries[-1]

    def __len__(self):
        return len(self.entries)


def demonstrate_target(target_wrist: WristPose, obj: ObjectModel, params: SensorParams, seed=0,
                       hand: HandConfig | None = None):
    """Render the demonstrated target images and return them with the recorded wrist pose."""
    try:
        _, images = render_hand(target_wrist, obj, params, seed, hand)
    except NonContactError as exc:
        raise NonContactError(f"target pose is not in contact: {exc}") from None
    return images, target_wrist


def _policy_delta(policy, images, joints, target_images):
    if callable(policy) and not isinstance(policy, PolicyParams):
        return np.asarray(policy(images, joints, target_images), dtype=np.float64)
    return forward(policy, PolicyInput(images, target_images, joints))


def _run(initial_wrist, target_images, policy, obj, params, config, target_pose, hand, schedule):
    base_pose = obj.pose
    rel_target = None
    if target_pose is not None:
        rel_target = base_pose.inverse().compose(target_pose.transform())
    clamp = np.asarray(config.step_clamp, dtype=np.float64)
    events = sorted(schedule or [], key=lambda ev: ev[0])
    r6 = np.asarray(initial_wrist.to_r6(), dtype=np.float64)
    entries, targets = [], []
    reason = "max_steps"
    cur_obj, goal = obj, target_pose
    for s in range(config.max_steps + 1):
        moved = [off for step, off in events if step == s]
        if moved:
            cur_obj = obj.moved(base_pose.compose(r6_to_transform(moved[-1])))
            if rel_target is not None:
                goal = WristPose.from_transform(cur_obj.pose.compose(rel_target))
        wrist = WristPose.from_r6(r6)
        d_pos, d_rot = wrist_error(wrist, goal) if goal is not None else (np.nan, np.nan)
        try:
            state, images = render_hand(wrist, cur_obj, params, seed=config.seed * 10007 + s, hand=hand)
        except NonContactError:
            entries.append(StepEntry(r6.copy(), None, None, d_pos, d_rot))
            targets.append(goal)
            reason = "initial_no_contact" if s == 0 else "lost_contact"
            break
        entry = StepEntry(r6.copy(), state.joints.copy(), images, d_pos, d_rot)
        entries.append(entry)
        targets.append(goal)
        if s == config.max_steps:
            break
        if config.stop_on_threshold and d_pos <= config.eps_pos and d_rot <= config.eps_rot:
            reason = "threshold"
            break
        delta = _policy_delta(policy, images, state.joints, target_images)
        applied = np.clip(delta, -clamp, clamp)
        entry.predicted, entry.applied = delta, applied
        r6 = apply_increment(r6, applied)
    return Trajectory(entries, target_pose, np.asarray(target_images), reason, targets)


def refine_loop(initial_wrist: WristPose, target_images, policy, obj: ObjectModel,
                params: SensorParams, config: RefineConfig = RefineConfig(),
                target_pose: WristPose | None = None, hand: HandConfig | None = None) -> Trajectory:
    """Regrasp repeatedly, moving the wrist by the policy's clamped increment each time.

    ``policy`` is a :class:`PolicyParams` or a callable ``(images, joints, target_images) -> R6``.
    ``target_pose`` is only used to log errors.
    """
    return _run(initial_wrist, target_images, policy, obj, params, config, target_pose, hand, None)


def track(initial_wrist: WristPose, target_images, schedule, policy, obj: ObjectModel,
          params: SensorParams, config: RefineConfig = RefineConfig(),
          target_pose: WristPose | None = None, hand: HandConfig | None = None) -> Trajectory:
    """Refinement while the object moves.

    ``schedule`` is a list of ``(step, offset_r6)``: before regrasp ``step`` the object is
    placed at its initial pose composed with ``offset_r6``. The logged target moves with it.
    Always runs the full horizon so later moves are not skipped by a threshold stop.
    """
    config = replace(config, stop_on_threshold=False)
    return _run(initial_wrist, target_images, policy, obj, params, config, target_pose, hand, schedule)


def step_schedule(step: int, dim: str, amount: float):
    """Single step change of one object coordinate at ``step``."""
    from .dataset import R6_INDEX
    off = np.zeros(6)
    off[R6_INDEX[dim]] = amount
    return [(step, off)]


def segment_schedule(segments, steps_per_segment: int, start: int = 0):
    """Piecewise-linear object motion: ``segments`` is a list of (dim, total_amount)."""
    from .dataset import R6_INDEX
    events, off, s = [], np.zeros(6), start
    for dim, amount in segments:
        for _ in range(steps_per_segment):
            off = off.copy()
            off[R6_INDEX[dim]] += amount / steps_per_segment
            events.append((s, off))
            s += 1
    return events


def write_trajectory_csv(traj: Trajectory, path, config_hash: str | None = None):
    cols = ["step", "x", "y", "z", "roll", "pitch", "yaw", "d_pos", "d_rot",
            "dx_x", "dx_y", "dx_z", "dx_roll", "dx_pitch", "dx_yaw"]
    with open(path, "w", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash: {config_hash}\n")
        w = csv.writer(fh)
        w.writerow(cols)
        for s, e in enumerate(traj.entries):
            inc = e.applied if e.applied is not None else np.full(6, np.nan)
            w.writerow([s, *map(repr, map(float, e.pose)), repr(float(e.d_pos)), repr(float(e.d_rot)),
                        *map(repr, map(float, inc))])


def write_pgm(image, path, comment: str | None = None):
    """Binary PGM (P5), maxval 255, with an optional header comment."""
    image = np.asarray(image, dtype=np.uint8)
    rows, cols = image.shape
    head = "P5\n" + (f"# {comment}\n" if comment else "") + f"{cols} {rows}\n255\n"
    with open(path, "wb") as fh:
        fh.write(head.encode())
        fh.write(image.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while end < len(data) and not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise ValueError("not a binary PGM")
    cols, rows, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError("only maxval 255 is supported")
    raster = data[pos + 1:pos + 1 + rows * cols]   # exactly one whitespace byte after maxval
    if len(raster) != rows * cols:
        raise ValueError("truncated PGM raster")
    return np.frombuffer(raster, dtype=np.uint8).reshape(rows, cols)


def write_trajectory_images(traj: Trajectory, directory, config_hash: str | None = None):
    os.makedirs(directory, exist_ok=True)
    note = f"config_hash: {config_hash}" if config_hash else None
    for f, img in enumerate(traj.target_images):
        write_pgm(img, os.path.join(directory, f"target_f{f}.pgm"), note)
    for s, e in enumerate(traj.entries):
        if e.images is None:
            continue
        for f, img in enumerate(e.images):
            write_pgm(img, os.path.join(directory, f"step{s:02d}_f{f}.pgm"), note)
