"""Pose-grid sampling, recording, cross-combination pairing and augmentation."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np

from .geometry import WristPose, r6_difference
from .tacsim import HandConfig, NonContactError, ObjectModel, SensorParams, render_hand

log = logging.getLogger(__name__)

DOMAINS = ("sim", "real_analogue")
SAMPLED_DIMS = ("pitch", "roll", "y", "z")
# position of each sampled dimension in the (x, y, z, roll, pitch, yaw) vector
R6_INDEX = {"x": 0, "y": 1, "z": 2, "roll": 3, "pitch": 4, "yaw": 5}


class CollectError(RuntimeError):
    pass


@dataclass(frozen=True)
class DimBounds:
    lower: float
    upper: float
    steps: int

    def __post_init__(self):
        if not self.lower <= self.upper:
            raise ValueError(f"empty range: lower {self.lower} > upper {self.upper}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")

    def values(self) -> np.ndarray:
        if self.steps == 1:
            return np.array([self.lower])
        return np.linspace(self.lower, self.upper, self.steps)


@dataclass(frozen=True)
class PoseBounds:
    pitch: DimBounds = DimBounds(-0.15, 0.15, 7)
    roll: DimBounds = DimBounds(-0.15, 0.15, 7)
    y: DimBounds = DimBounds(-0.02, 0.02, 7)
    z: DimBounds = DimBounds(-0.02, 0.02, 7)
    x_fixed: float = 0.0
    yaw_fixed: float = 0.0

    def dims(self):
        return {name: getattr(self, name) for name in SAMPLED_DIMS}

    def with_steps(self, steps: int) -> "PoseBounds":
        return replace(self, **{n: replace(d, steps=steps) for n, d in self.dims().items()})

    def size(self) -> int:
        return int(np.prod([d.steps for d in self.dims().values()]))

    def center(self) -> np.ndarray:
        r6 = np.zeros(6)
        r6[0], r6[5] = self.x_fixed, self.yaw_fixed
        for name, d in self.dims().items():
            r6[R6_INDEX[name]] = 0.5 * (d.lower + d.upper)
        return r6

    def half_range(self) -> np.ndarray:
        """Per-component half width of the sampled box (zero for fixed components)."""
        h = np.zeros(6)
        for name, d in self.dims().items():
            h[R6_INDEX[name]] = 0.5 * (d.upper - d.lower)
        return h

    def extreme(self, dim: str, sign: int) -> np.ndarray:
        """Center pose with one dimension pushed to its lower (-1) or upper (+1) bound."""
        r6 = self.center()
        d = getattr(self, dim)
        r6[R6_INDEX[dim]] = d.upper if sign > 0 else d.lower
        return r6

    def uniform(self, rng, margin=0.0) -> np.ndarray:
        """Uniform random pose inside the box, shrunk by ``margin`` (fraction of half range)."""
        r6 = self.center()
        half = self.half_range()
        for name in SAMPLED_DIMS:
            i = R6_INDEX[name]
            r6[i] += rng.uniform(-1.0, 1.0) * half[i] * (1.0 - margin)
        return r6

    def contains(self, r6, tol=1e-12) -> bool:
        r6 = np.asarray(r6)
        if abs(r6[0] - self.x_fixed) > tol or abs(r6[5] - self.yaw_fixed) > tol:
            return False
        return all(d.lower - tol <= r6[R6_INDEX[n]] <= d.upper + tol for n, d in self.dims().items())


def default_bounds(steps=7) -> PoseBounds:
    return PoseBounds().with_steps(steps)


def sample_grid(bounds: PoseBounds) -> np.ndarray:
    """Cartesian grid over (pitch, roll, y, z), pitch varying slowest; rows are R6 poses."""
    axes = [bounds.dims()[n].values() for n in SAMPLED_DIMS]
    out = np.empty((bounds.size(), 6))
    for k, combo in enumerate(itertools.product(*axes)):
        r6 = np.zeros(6)
        r6[0], r6[5] = bounds.x_fixed, bounds.yaw_fixed
        for name, v in zip(SAMPLED_DIMS, combo):
            r6[R6_INDEX[name]] = v
        out[k] = r6
    return out


@dataclass(eq=False)
class SampleRecord:
    pose: np.ndarray          # (6,) x, y, z, roll, pitch, yaw
    joints: np.ndarray        # (6,)
    images: np.ndarray        # (3, rows, cols) uint8
    domain_tag: str = "sim"
    record_id: int = 0

    def __eq__(self, other):
        return (isinstance(other, SampleRecord) and self.domain_tag == other.domain_tag
                and self.record_id == other.record_id
                and np.array_equal(self.pose, other.pose)
                and np.array_equal(self.joints, other.joints)
                and np.array_equal(self.images, other.images))

    __hash__ = None


@dataclass(eq=False)
class PairedExample:
    current: SampleRecord
    target: SampleRecord
    delta_x: np.ndarray

    def __eq__(self, other):
        return (isinstance(other, PairedExample) and self.current == other.current
                and self.target == other.target and np.array_equal(self.delta_x, other.delta_x))

    __hash__ = None


@dataclass(eq=False)
class Dataset:
    """Records from one domain plus the provenance stored in the file header."""

    records: list
    domain_tag: str = "sim"
    bounds: PoseBounds = field(default_factory=PoseBounds)
    sensor_hash: bytes = bytes(16)
    config_hash: bytes = bytes(16)
    seed: int = 0

    def __post_init__(self):
        if self.domain_tag not in DOMAINS:
            raise ValueError(f"unknown domain tag {self.domain_tag!r}")

    def __len__(self):
        return len(self.records)

    def arrays(self):
        """Stacked ``(poses (N,6), joints (N,6), images (N,3,rows,cols))``."""
        if not self.records:
            return np.zeros((0, 6)), np.zeros((0, 6)), np.zeros((0, 3, 11, 9), np.uint8)
        return (np.stack([r.pose for r in self.records]), np.stack([r.joints for r in self.records]),
                np.stack([r.images for r in self.records]))

    def __eq__(self, other):
        return (isinstance(other, Dataset) and self.records == other.records
                and self.domain_tag == other.domain_tag and self.bounds == other.bounds
                and self.sensor_hash == other.sensor_hash and self.config_hash == other.config_hash
                and self.seed == other.seed)

    __hash__ = None


def collect(poses, obj: ObjectModel, sensor_params: SensorParams, seed: int,
            domain_tag="sim", hand: HandConfig | None = None) -> list:
    """Render one record per reachable pose; non-contact poses are skipped."""
    if domain_tag not in DOMAINS:
        raise ValueError(f"unknown domain tag {domain_tag!r}")
    poses = np.asarray(poses, dtype=np.float64).reshape(-1, 6)
    records, skipped = [], 0
    for i, r6 in enumerate(poses):
        try:
            state, images = render_hand(WristPose.from_r6(r6), obj, sensor_params,
                                        seed=int(seed) * 1_000_003 + i, hand=hand)
        except NonContactError:
            skipped += 1
            log.info("pose %d %s: no contact, skipped", i, np.round(r6, 4).tolist())
            continue
        records.append(SampleRecord(r6.copy(), state.joints.copy(), images, domain_tag, i))
    if len(poses) and skipped > 0.5 * len(poses):
        raise CollectError(f"{skipped}/{len(poses)} poses had no contact; check the pose bounds")
    return records


def pair_delta(current_pose, target_pose) -> np.ndarray:
    return r6_difference(target_pose, current_pose)


def pair_indices(n: int, budget: int, rng) -> np.ndarray:
    """(budget, 2) index pairs drawn with replacement, or all n*n ordered pairs if budget >= n*n."""
    if budget >= n * n:
        i, j = np.divmod(np.arange(n * n), n)
        return np.stack([i, j], axis=1)
    return rng.integers(0, n, size=(budget, 2))


def cross_combine(records: Sequence[SampleRecord], pair_budget: int, seed: int) -> Iterator[PairedExample]:
    """Stream (current, target) pairs; full enumeration when the budget covers all n^2 pairs."""
    if len(records) < 2:
        raise ValueError("cross_combine needs at least 2 records")
    rng = np.random.default_rng(seed)
    for i, j in pair_indices(len(records), pair_budget, rng):
        cur, tgt = records[i], records[j]
        yield PairedExample(cur, tgt, pair_delta(cur.pose, tgt.pose))


@dataclass(frozen=True)
class AugmentationConfig:
    tactile_scale_range: tuple = (0.5, 1.0)
    joint_noise_range: tuple = (-0.04, 0.04)
    scale_enabled: bool = True
    joint_noise_enabled: bool = True

    def __post_init__(self):
        lo, hi = self.tactile_scale_range
        if not 0 <= lo <= hi:
            raise ValueError("tactile_scale_range must satisfy 0 <= lo <= hi")
        lo, hi = self.joint_noise_range
        if not lo <= hi:
            raise ValueError("joint_noise_range must satisfy lo <= hi")

    @property
    def enabled(self) -> bool:
        return self.scale_enabled or self.joint_noise_enabled


def scale_image(images, s):
    return np.clip(np.rint(np.asarray(images, dtype=np.float64) * s), 0, 255).astype(np.uint8)


def augment_arrays(images, joints, config: AugmentationConfig, rng):
    """Augment a batch of current samples: images (K, F, r, c) uint8, joints (K, 6)."""
    images = np.asarray(images)
    joints = np.asarray(joints, dtype=np.float64)
    k = images.shape[0]
    if config.scale_enabled:
        s = rng.uniform(*config.tactile_scale_range, size=k)
        images = scale_image(images, s.reshape((k,) + (1,) * (images.ndim - 1)))
    if config.joint_noise_enabled:
        joints = joints + rng.uniform(*config.joint_noise_range, size=joints.shape)
    return images, joints


def augment(example: PairedExample, config: AugmentationConfig, seed) -> PairedExample:
    """Scale the current tactile images and jitter the current joints; target untouched."""
    if not config.enabled:
        return example
    rng = np.random.default_rng(seed)
    images, joints = augment_arrays(example.current.images[None], example.current.joints[None],
                                    config, rng)
    current = replace(example.current, images=images[0], joints=joints[0])
    return PairedExample(current, example.target, example.delta_x.copy())
