"""Fingertip tactile sensor and three-finger closure model.

A flat object lies fixed in the world. Each fingertip carries an 11x9 taxel
grid; a taxel reads a spring force proportional to how far its point has sunk
into the object (signed distance), saturating at ``max_force`` and quantized
to 0..255. Fingers close on a single hinge each until the deepest taxel
reaches a target penetration depth.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .geometry import Transform, WristPose

N_FINGERS = 3
FINGER_NAMES = ("thumb", "index", "middle")


class NonContactError(RuntimeError):
    """Raised when no finger reaches the object."""

    def __init__(self, message, hand_state=None):
        super().__init__(message)
        self.hand_state = hand_state


# --------------------------------------------------------------------------
# sensor

@dataclass(frozen=True, eq=False)
class SensorParams:
    rows: int = 11
    cols: int = 9
    taxel_spacing: float = 0.0011
    stiffness: float = 5000.0       # N/m; 0.5 mm of penetration reads ~128
    max_force: float = 5.0          # N
    gain_map: np.ndarray = None
    noise_std: float = 0.0          # quantized units
    mount_offset: np.ndarray = None  # (column axis, row axis) in meters

    def __post_init__(self):
        gain = np.ones((self.rows, self.cols)) if self.gain_map is None else self.gain_map
        gain = np.array(gain, dtype=np.float64)
        off = np.zeros(2) if self.mount_offset is None else self.mount_offset
        off = np.array(off, dtype=np.float64).reshape(2)
        gain.setflags(write=False)
        off.setflags(write=False)
        object.__setattr__(self, "gain_map", gain)
        object.__setattr__(self, "mount_offset", off)
        self.validate()

    def validate(self):
        if self.rows * self.cols != 99 or self.rows < 1 or self.cols < 1:
            raise ValueError(f"taxel grid must hold 99 taxels, got {self.rows}x{self.cols}")
        if not self.taxel_spacing > 0 or not self.stiffness > 0 or not self.max_force > 0:
            raise ValueError("taxel_spacing, stiffness and max_force must be positive")
        if self.gain_map.shape != (self.rows, self.cols):
            raise ValueError(f"gain_map shape {self.gain_map.shape} != {(self.rows, self.cols)}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")

    def __eq__(self, other):
        if not isinstance(other, SensorParams):
            return NotImplemented
        return (self.rows == other.rows and self.cols == other.cols
                and self.taxel_spacing == other.taxel_spacing
                and self.stiffness == other.stiffness and self.max_force == other.max_force
                and self.noise_std == other.noise_std
                and np.array_equal(self.gain_map, other.gain_map)
                and np.array_equal(self.mount_offset, other.mount_offset))

    __hash__ = None

    def digest(self) -> bytes:
        """16-byte content hash, stored in dataset headers."""
        h = hashlib.sha256()
        h.update(np.array([self.rows, self.cols], dtype="<i8").tobytes())
        h.update(np.array([self.taxel_spacing, self.stiffness, self.max_force, self.noise_std],
                          dtype="<f8").tobytes())
        h.update(self.gain_map.astype("<f8").tobytes())
        h.update(self.mount_offset.astype("<f8").tobytes())
        return h.digest()[:16]

    def taxel_points(self) -> np.ndarray:
        """Taxel centers in the pad frame, shape (rows, cols, 3); columns run along pad x."""
        c = (np.arange(self.cols) - (self.cols - 1) / 2) * self.taxel_spacing
        r = (np.arange(self.rows) - (self.rows - 1) / 2) * self.taxel_spacing
        pts = np.zeros((self.rows, self.cols, 3))
        pts[..., 0] = c[None, :] + self.mount_offset[0]
        pts[..., 1] = r[:, None] + self.mount_offset[1]
        return pts


def nominal_params() -> SensorParams:
    return SensorParams()


def perturb_params(nominal: SensorParams, severity: float, rng_seed: int) -> SensorParams:
    """Draw a "real-analogue" sensor around ``nominal``."""
    if severity < 0:
        raise ValueError("severity must be >= 0")
    if severity == 0:
        return nominal
    rng = np.random.default_rng(rng_seed)
    gains = rng.uniform(1 - severity, 1 + severity, size=(nominal.rows, nominal.cols))
    k_scale = rng.uniform(1 - severity, 1 + severity)
    lim = severity * nominal.taxel_spacing
    offset = rng.uniform(-lim, lim, size=2)
    return replace(nominal, gain_map=nominal.gain_map * gains,
                   stiffness=nominal.stiffness * k_scale,
                   mount_offset=nominal.mount_offset + offset,
                   noise_std=severity * 10.0)


def force_to_reading(depth, params: SensorParams, noise=None):
    """Linear spring force with saturation, quantized to uint8 readings."""
    depth = np.asarray(depth, dtype=np.float64)
    force = np.where(depth > 0, np.minimum(params.stiffness * depth, params.max_force), 0.0)
    raw = 255.0 * params.gain_map * force / params.max_force
    if noise is not None:
        raw = raw + noise
    return np.clip(np.rint(raw), 0, 255).astype(np.uint8)


# --------------------------------------------------------------------------
# objects

@dataclass(frozen=True)
class Disc:
    radius: float

    def sdf(self, xy):
        return np.hypot(xy[..., 0], xy[..., 1]) - self.radius

    def dims(self):
        return (self.radius,)


@dataclass(frozen=True)
class RoundedRect:
    half_x: float
    half_y: float
    corner_radius: float

    def sdf(self, xy):
        cr = self.corner_radius
        qx = np.abs(xy[..., 0]) - (self.half_x - cr)
        qy = np.abs(xy[..., 1]) - (self.half_y - cr)
        outside = np.hypot(np.maximum(qx, 0), np.maximum(qy, 0))
        return outside + np.minimum(np.maximum(qx, qy), 0) - cr

    def dims(self):
        return (self.half_x, self.half_y, self.corner_radius)


@dataclass(frozen=True)
class Bar:
    """Straight-edged strip; the long axis runs along the object's local y."""

    half_length: float
    half_width: float

    def sdf(self, xy):
        qx = np.abs(xy[..., 0]) - self.half_width
        qy = np.abs(xy[..., 1]) - self.half_length
        outside = np.hypot(np.maximum(qx, 0), np.maximum(qy, 0))
        return outside + np.minimum(np.maximum(qx, qy), 0)

    def dims(self):
        return (self.half_length, self.half_width)


SHAPES = {"disc": Disc, "rounded_rect": RoundedRect, "bar": Bar}


def shape_name(shape) -> str:
    for name, cls in SHAPES.items():
        if isinstance(shape, cls):
            return name
    raise TypeError(f"unknown shape {shape!r}")


def make_shape(name: str, **dims):
    try:
        return SHAPES[name](**dims)
    except KeyError:
        raise ValueError(f"unknown shape {name!r}; expected one of {sorted(SHAPES)}") from None


@dataclass(frozen=True, eq=False)
class ObjectModel:
    shape: object
    thickness: float = 0.004
    pose: Transform = field(default_factory=Transform.identity)

    def __post_init__(self):
        if not self.thickness > 0:
            raise ValueError("thickness must be positive")
        dims = self.shape.dims()
        if not all(d > 0 for d in dims):
            raise ValueError(f"shape dimensions must be positive: {dims}")
        if isinstance(self.shape, RoundedRect) and self.shape.corner_radius > min(
                self.shape.half_x, self.shape.half_y):
            raise ValueError("corner_radius exceeds a half extent")

    def contains_xy(self, xy) -> np.ndarray:
        return self.shape.sdf(np.asarray(xy, dtype=np.float64)) <= 0

    def depth(self, pts_world) -> np.ndarray:
        """Penetration depth of world points (positive inside, negative outside)."""
        local = self.pose.inverse_apply(pts_world)
        through = self.thickness / 2 - np.abs(local[..., 2])
        return np.minimum(through, -self.shape.sdf(local[..., :2]))

    def moved(self, pose: Transform) -> "ObjectModel":
        return replace(self, pose=pose)

    def __eq__(self, other):
        return (isinstance(other, ObjectModel) and self.shape == other.shape
                and self.thickness == other.thickness and self.pose == other.pose)

    __hash__ = None


def default_object() -> ObjectModel:
    return ObjectModel(Disc(0.03), 0.004)


# --------------------------------------------------------------------------
# hand

@dataclass(frozen=True, eq=False)
class FingerSpec:
    """One hinge finger.

    ``approach`` is +1 for a pad pressing toward +z (thumb); ``direction`` is the
    sign of hand x along which the links point at zero closure.
    """

    name: str
    base: np.ndarray
    approach: int
    pad_rot: np.ndarray  # pad axes (columns) in the hand frame at zero closure
    direction: int = 1


@dataclass(frozen=True, eq=False)
class HandConfig:
    fingers: tuple
    proximal_length: float = 0.08
    distal_length: float = 0.02
    coupling: float = 0.75       # distal joint = -coupling * proximal joint
    joint_lower: float = -0.45
    joint_upper: float = 0.45
    target_depth: float = 0.0008
    scan_points: int = 64
    bisect_iters: int = 48
    sensor: SensorParams = field(default_factory=SensorParams)


def default_hand(pad_radius=0.025, thickness=0.004, target_depth=0.0008,
                 rim_angles=(0.0, math.radians(15.0), math.radians(-15.0)),
                 thumb_direction=-1, rest_angle=0.0, **kw) -> HandConfig:
    """Thumb below the object opposing two fingers above, pads near the rim.

    Pad centers sit at ``pad_radius`` from the object axis, a few mm inside the default
    disc's rim, so the rim stays inside the contact patch over the whole sampled y range.

    The thumb's links point the opposite way along hand x from the fingers', so a
    wrist height change tilts thumb and finger pads in opposite senses while a
    wrist pitch tilts them alike. ``rest_angle`` is the hinge angle at which each
    pad touches a centered object flat; extra keywords go to HandConfig.
    """
    cfg = HandConfig(fingers=(), target_depth=target_depth, **kw)
    ex, ey, ez = np.eye(3)
    top_rot = np.column_stack([ey, ex, -ez])     # pad x = hand y, pad normal = -z
    thumb_rot = np.column_stack([-ey, ex, ez])
    fingers = []
    for name, ang in zip(FINGER_NAMES, rim_angles):
        approach = 1 if name == "thumb" else -1
        direction = thumb_direction if name == "thumb" else 1
        pad_z = -approach * (thickness / 2 - target_depth)
        pad = np.array([pad_radius * math.cos(ang), pad_radius * math.sin(ang), pad_z])
        rot = thumb_rot if approach > 0 else top_rot
        probe = FingerSpec(name, np.zeros(3), approach, np.eye(3), direction)
        tip, tilt = _pad_poses(replace(cfg, fingers=(probe,)), np.array([[rest_angle]]))
        base = pad - tip[0, 0]
        fingers.append(FingerSpec(name, base, approach, tilt[0, 0].T @ rot, direction))
    return replace(cfg, fingers=tuple(fingers))


@dataclass(frozen=True, eq=False)
class HandState:
    wrist: WristPose
    joints: np.ndarray                 # (6,) proximal/distal pairs per finger
    fingertip_frames: tuple            # 3 world-frame Transforms
    contact: tuple = (False, False, False)

    @property
    def in_contact(self) -> bool:
        return any(self.contact)

    def __eq__(self, other):
        return (isinstance(other, HandState) and self.wrist == other.wrist
                and np.array_equal(self.joints, other.joints)
                and all(a == b for a, b in zip(self.fingertip_frames, other.fingertip_frames))
                and tuple(self.contact) == tuple(other.contact))

    __hash__ = None


def _finger_arrays(hand: HandConfig):
    bases = np.stack([f.base for f in hand.fingers])
    approach = np.array([f.approach for f in hand.fingers], dtype=np.float64)
    direction = np.array([f.direction for f in hand.fingers], dtype=np.float64)
    pad_rot = np.stack([f.pad_rot for f in hand.fingers])
    return bases, approach, direction, pad_rot


def _pad_poses(hand: HandConfig, theta):
    """Vectorized pad frames for theta of shape (F, M): origins (F, M, 3), rots (F, M, 3, 3)."""
    bases, approach, direction, pad_rot = _finger_arrays(hand)
    # hinge axis is s * y with s = -approach * direction, so closing moves the tip toward the object
    phi_p = (-approach * direction)[:, None] * theta
    phi_d = (1 - hand.coupling) * phi_p
    dx = direction[:, None]
    origins = np.empty(theta.shape + (3,))
    origins[..., 0] = dx * (hand.proximal_length * np.cos(phi_p) + hand.distal_length * np.cos(phi_d))
    origins[..., 1] = 0.0
    origins[..., 2] = -dx * (hand.proximal_length * np.sin(phi_p) + hand.distal_length * np.sin(phi_d))
    origins += bases[:, None, :]
    c, s = np.cos(phi_d), np.sin(phi_d)
    r_dist = np.zeros(theta.shape + (3, 3))
    r_dist[..., 0, 0] = c
    r_dist[..., 0, 2] = s
    r_dist[..., 1, 1] = 1.0
    r_dist[..., 2, 0] = -s
    r_dist[..., 2, 2] = c
    return origins, r_dist @ pad_rot[:, None]


def _max_depth(hand: HandConfig, theta, wrist_tf: Transform, obj: ObjectModel):
    origins, rots = _pad_poses(hand, theta)
    local = hand.sensor.taxel_points().reshape(-1, 3)
    pts = np.einsum("fmij,nj->fmni", rots, local) + origins[:, :, None, :]
    return obj.depth(wrist_tf.apply(pts)).max(axis=-1)


def _solve_closure(hand: HandConfig, wrist_tf, obj):
    """Bisection on each finger's hinge angle for the target penetration depth."""
    n = len(hand.fingers)
    lo, hi = hand.joint_lower, hand.joint_upper
    grid = np.linspace(lo, hi, hand.scan_points)
    depth = _max_depth(hand, np.broadcast_to(grid, (n, grid.size)), wrist_tf, obj)
    reached = depth >= hand.target_depth
    touched = reached.any(axis=1)
    first = np.argmax(reached, axis=1)
    theta = np.full(n, hi)
    a = np.where(touched & (first > 0), grid[np.maximum(first - 1, 0)], lo)
    b = np.where(touched, grid[first], hi)
    active = touched & (first > 0)
    for _ in range(hand.bisect_iters):
        mid = 0.5 * (a + b)
        ok = _max_depth(hand, mid[:, None], wrist_tf, obj)[:, 0] >= hand.target_depth
        b = np.where(ok, mid, b)
        a = np.where(ok, a, mid)
    theta = np.where(active, b, np.where(touched, lo, hi))
    return theta, touched


def close_fingers(wrist: WristPose, obj: ObjectModel, hand: HandConfig | None = None) -> HandState:
    """Close every finger until it presses the object to the target depth or hits its limit."""
    hand = hand or default_hand()
    wrist_tf = wrist.transform()
    theta, touched = _solve_closure(hand, wrist_tf, obj)
    joints = np.empty(2 * len(hand.fingers))
    joints[0::2] = theta
    joints[1::2] = -hand.coupling * theta
    origins, rots = _pad_poses(hand, theta[:, None])
    frames = tuple(wrist_tf.compose(Transform(origins[i, 0], rots[i, 0]))
                   for i in range(len(hand.fingers)))
    return HandState(wrist, joints, frames, tuple(bool(t) for t in touched))


def render_tactile(fingertip_frame: Transform, obj: ObjectModel, params: SensorParams,
                   rng_seed=None) -> np.ndarray:
    """Render one (rows, cols) uint8 tactile image."""
    pts = fingertip_frame.apply(params.taxel_points())
    depth = obj.depth(pts)
    noise = None
    if params.noise_std > 0:
        rng = np.random.default_rng(rng_seed)
        noise = rng.normal(0.0, params.noise_std, size=depth.shape)
    return force_to_reading(depth, params, noise)


def render_hand(wrist: WristPose, obj: ObjectModel, params: SensorParams, seed=0,
                hand: HandConfig | None = None):
    """Close the hand and render its three fingertip images, shape (3, rows, cols)."""
    state = close_fingers(wrist, obj, hand)
    if not state.in_contact:
        raise NonContactError("no finger reached the object", state)
    images = np.stack([
        render_tactile(frame, obj, params, None if seed is None else [int(seed), i])
        for i, frame in enumerate(state.fingertip_frames)
    ])
    return state, images
