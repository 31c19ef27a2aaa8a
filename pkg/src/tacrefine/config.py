"""Run configuration: nested dataclasses loaded from YAML with strict key checking."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import asdict, dataclass, field

import yaml

from .dataset import AugmentationConfig, DimBounds, PoseBounds
from .evaluation import MetricThresholds
from .tacsim import ObjectModel, SensorParams, make_shape, nominal_params, perturb_params
from .train import TrainConfig


class ConfigError(ValueError):
    """Schema violation; ``key`` is the dotted path of the offending entry."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass
class BoundsSection:
    pitch: tuple = (-0.15, 0.15)
    roll: tuple = (-0.15, 0.15)
    y: tuple = (-0.02, 0.02)
    z: tuple = (-0.02, 0.02)
    x_fixed: float = 0.0
    yaw_fixed: float = 0.0
    sim_steps: int = 7
    real_steps: int = 4

    def pose_bounds(self, steps=None) -> PoseBounds:
        steps = self.sim_steps if steps is None else steps
        dims = {n: DimBounds(float(getattr(self, n)[0]), float(getattr(self, n)[1]), steps)
                for n in ("pitch", "roll", "y", "z")}
        return PoseBounds(**dims, x_fixed=self.x_fixed, yaw_fixed=self.yaw_fixed)


@dataclass
class SensorSection:
    stiffness: float = 5000.0
    max_force: float = 5.0
    severity: float = 0.2          # real-analogue perturbation strength
    perturb_seed: int = 1

    def nominal(self) -> SensorParams:
        return dataclasses.replace(nominal_params(), stiffness=self.stiffness, max_force=self.max_force)

    def real(self) -> SensorParams:
        return perturb_params(self.nominal(), self.severity, self.perturb_seed)


@dataclass
class ObjectSection:
    shape: str = "disc"
    dims: dict = field(default_factory=lambda: {"radius": 0.03})
    thickness: float = 0.004

    def model(self) -> ObjectModel:
        return ObjectModel(make_shape(self.shape, **self.dims), self.thickness)


@dataclass
class AugmentationSection:
    tactile_scale_range: tuple = (0.5, 1.0)
    joint_noise_range: tuple = (-0.04, 0.04)
    scale_enabled: bool = True
    joint_noise_enabled: bool = True


@dataclass
class TrainSection:
    batch_size: int = 64
    steps_pretrain: int = 20000
    steps_finetune: int = 2000
    lr_pretrain: float = 1e-3
    lr_finetune: float = 1e-4
    pair_budget: typing.Optional[int] = None
    loss_weights: typing.Optional[tuple] = (50.0, 50.0, 50.0, 1.0, 1.0, 1.0)
    lr_schedule: str = "constant"
    lr_floor: float = 0.01
    checkpoint_every: int = 1000
    augmentation: AugmentationSection = field(default_factory=AugmentationSection)

    def train_config(self, seed: int) -> TrainConfig:
        aug = AugmentationConfig(tuple(self.augmentation.tactile_scale_range),
                                 tuple(self.augmentation.joint_noise_range),
                                 self.augmentation.scale_enabled, self.augmentation.joint_noise_enabled)
        lw = None if self.loss_weights is None else tuple(float(w) for w in self.loss_weights)
        return TrainConfig(self.batch_size, self.steps_pretrain, self.steps_finetune, self.lr_pretrain,
                           self.lr_finetune, self.pair_budget, aug, seed, lw, self.lr_schedule,
                           self.lr_floor)


@dataclass
class RefineSection:
    max_steps: int = 10
    step_clamp: typing.Optional[tuple] = None     # None: sampling half-ranges
    stop_on_threshold: bool = False


@dataclass
class EvalSection:
    eps_pos: float = 0.005
    eps_rot: float = 0.05
    max_steps: int = 10
    repeats: int = 5
    group_seeds: tuple = (1, 2, 3)
    pairs_per_group: int = 1
    matrix_jitter: float = 0.1
    shapes: dict = field(default_factory=lambda: {
        "bar": {"half_length": 0.06, "half_width": 0.03},
        "rounded_rect": {"half_x": 0.03, "half_y": 0.03, "corner_radius": 0.01},
    })

    def thresholds(self) -> MetricThresholds:
        return MetricThresholds(self.eps_pos, self.eps_rot, self.max_steps, self.repeats)


@dataclass
class RunConfig:
    seed: int = 0
    bounds: BoundsSection = field(default_factory=BoundsSection)
    sensor: SensorSection = field(default_factory=SensorSection)
    object: ObjectSection = field(default_factory=ObjectSection)
    train: TrainSection = field(default_factory=TrainSection)
    refine: RefineSection = field(default_factory=RefineSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def config_hash(self) -> str:
        """Hex digest of the canonical JSON form; embedded in every artifact."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:32]

    def config_hash_bytes(self) -> bytes:
        return bytes.fromhex(self.config_hash())


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _coerce(key, hint, value):
    origin = typing.get_origin(hint)
    if origin is typing.Union:
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        if value is None:
            return None
        return _coerce(key, args[0], value)
    if dataclasses.is_dataclass(hint):
        return _build(hint, value, key)
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(key, f"expected a string, got {value!r}")
        return value
    if hint is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(key, f"expected a list, got {value!r}")
        return tuple(value)
    if hint is dict:
        if not isinstance(value, dict):
            raise ConfigError(key, f"expected a mapping, got {value!r}")
        return dict(value)
    return value


def _build(cls, data, prefix=""):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(prefix or "<root>", f"expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"{prefix}.{key}" if prefix else str(key), "unknown key")
    kwargs = {}
    for name in names & set(data):
        kwargs[name] = _coerce(f"{prefix}.{name}" if prefix else name, hints[name], data[name])
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(prefix or "<root>", str(exc)) from None


def from_dict(data) -> RunConfig:
    cfg = _build(RunConfig, data)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig):
    """Build every derived object once so bad values fail at load time with their key."""
    checks = [
        ("bounds", lambda: (cfg.bounds.pose_bounds(), cfg.bounds.pose_bounds(cfg.bounds.real_steps))),
        ("sensor", lambda: cfg.sensor.nominal().validate()),
        ("object", cfg.object.model),
        ("train", lambda: cfg.train.train_config(cfg.seed)),
        ("eval", cfg.eval.thresholds),
    ]
    for key, fn in checks:
        try:
            fn()
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(key, str(exc)) from None
    if cfg.sensor.severity < 0:
        raise ConfigError("sensor.severity", "must be >= 0")
    if cfg.refine.max_steps < 1:
        raise ConfigError("refine.max_steps", "must be >= 1")
    if cfg.refine.step_clamp is not None and len(cfg.refine.step_clamp) != 6:
        raise ConfigError("refine.step_clamp", "needs 6 values")
    if cfg.train.loss_weights is not None and len(cfg.train.loss_weights) != 6:
        raise ConfigError("train.loss_weights", "needs 6 values")


def load_config(path=None) -> RunConfig:
    if path is None:
        return from_dict({})
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError("<file>", f"not valid YAML: {exc}") from None
    return from_dict(data or {})


def default_config_yaml() -> str:
    return yaml.safe_dump(RunConfig().to_dict(), sort_keys=False)
