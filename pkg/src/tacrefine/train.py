"""Policy A (sim only) and Policy B (sim pretrain + real-analogue fine-tune) training."""

from __future__ import annotations

import csv
import math
import logging
import struct
import time
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import AugmentationConfig, Dataset, augment_arrays, pair_delta, pair_indices
from .net import (AdamHyper, AdamState, PolicyParams, backward, init_params,
                  normalize_images, params_from_bytes, params_to_bytes)

log = logging.getLogger(__name__)

LR_SCHEDULES = ("constant", "cosine")
CKPT_MAGIC = b"TACK"
CKPT_VERSION = 1
PHASE_PRETRAIN, PHASE_FINETUNE = 0, 1


class CheckpointError(ValueError):
    pass


class DomainMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    steps_pretrain: int = 5000
    steps_finetune: int = 2000
    lr_pretrain: float = 1e-3
    lr_finetune: float = 1e-4
    pair_budget: int | None = None   # None: fresh pairs every step
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    seed: int = 0
    loss_weights: tuple | None = None
    lr_schedule: str = "constant"    # or "cosine": decay to lr_floor * lr over the phase
    lr_floor: float = 0.01

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.steps_pretrain < 0 or self.steps_finetune < 0:
            raise ValueError("step counts must be >= 0")
        if not (self.lr_pretrain > 0 and self.lr_finetune > 0):
            raise ValueError("learning rates must be > 0")
        if self.pair_budget is not None and self.pair_budget < 1:
            raise ValueError("pair_budget must be >= 1")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ValueError(f"lr_schedule must be one of {LR_SCHEDULES}")
        if not 0 < self.lr_floor <= 1:
            raise ValueError("lr_floor must be in (0, 1]")


@dataclass
class TrainReport:
    losses: list
    wall_time: float
    params_path: str | None
    config: dict
    phase_switch: int | None = None   # index into ``losses`` where fine-tuning starts


@dataclass
class TrainState:
    params: PolicyParams
    opt: AdamState
    phase: int = PHASE_PRETRAIN
    step: int = 0          # steps completed in the current phase; also the RNG counter
    losses: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)   # stored with the params in checkpoints


class PairSampler:
    """Deterministic batch source; batch ``step`` depends only on (seed, phase, step)."""

    def __init__(self, dataset: Dataset, config: TrainConfig, phase: int):
        if len(dataset) < 2:
            raise ValueError("need at least 2 records to form pairs")
        self.poses, self.joints, self.images = dataset.arrays()
        self.config = config
        self.phase = phase
        self.target_x = normalize_images(self.images)
        self.pool = None
        if config.pair_budget is not None:
            rng = np.random.default_rng([config.seed, phase, 2**31])
            self.pool = pair_indices(len(self.poses), config.pair_budget, rng)

    def batch(self, step: int):
        cfg = self.config
        rng = np.random.default_rng([cfg.seed, self.phase, step])
        n = len(self.poses)
        if self.pool is None:
            idx = rng.integers(0, n, size=(cfg.batch_size, 2))
        else:
            idx = self.pool[rng.integers(0, len(self.pool), size=cfg.batch_size)]
        ci, ti = idx[:, 0], idx[:, 1]
        images, joints = augment_arrays(self.images[ci], self.joints[ci], cfg.augmentation, rng)
        labels = pair_delta(self.poses[ci], self.poses[ti])
        return normalize_images(images), self.target_x[ti], joints, labels


def learning_rate(config: TrainConfig, base_lr: float, step: int, steps: int) -> float:
    if config.lr_schedule == "constant" or steps <= 1:
        return base_lr
    frac = step / (steps - 1)
    return base_lr * (config.lr_floor + (1 - config.lr_floor) * 0.5 * (1 + math.cos(math.pi * frac)))


def _run_phase(state: TrainState, sampler: PairSampler, steps: int, lr: float,
               checkpoint_path=None, checkpoint_every=None, stop_at=None):
    end = steps if stop_at is None else min(steps, stop_at)
    while state.step < end:
        loss, grads = backward(state.params, sampler.batch(state.step), sampler.config.loss_weights)
        hyper = AdamHyper(lr=learning_rate(sampler.config, lr, state.step, steps))
        _adam(state, grads, hyper)
        state.losses.append(loss)
        state.step += 1
        if checkpoint_path and checkpoint_every and state.step % checkpoint_every == 0:
            checkpoint(state, checkpoint_path, sampler.config.seed)
    return state


def _adam(state, grads, hyper):
    from .net import optimizer_step
    optimizer_step(state.params, grads, state.opt, hyper)


def _check_domain(dataset: Dataset, tag: str, label: str):
    if len(dataset) == 0:
        raise ValueError(f"{label} dataset is empty")
    if dataset.domain_tag != tag or any(r.domain_tag != tag for r in dataset.records):
        raise DomainMismatchError(f"{label} dataset must be tagged {tag!r}, got {dataset.domain_tag!r}")


def new_state(config: TrainConfig) -> TrainState:
    params = init_params(config.seed)
    return TrainState(params, AdamState.zeros_like(params))


def train_policy_a(sim_dataset: Dataset, config: TrainConfig, state: TrainState | None = None,
                   checkpoint_path=None, checkpoint_every=None, stop_at=None):
    """Train on simulated pairs only. ``state`` resumes a checkpointed run."""
    _check_domain(sim_dataset, "sim", "sim")
    t0 = time.perf_counter()
    state = state or new_state(config)
    if state.phase == PHASE_PRETRAIN:
        _run_phase(state, PairSampler(sim_dataset, config, PHASE_PRETRAIN), config.steps_pretrain,
                   config.lr_pretrain, checkpoint_path, checkpoint_every, stop_at)
    report = TrainReport(list(state.losses), time.perf_counter() - t0, None, _config_dict(config))
    return state.params, report


def train_policy_b(sim_dataset: Dataset, real_dataset: Dataset, config: TrainConfig,
                   state: TrainState | None = None, checkpoint_path=None, checkpoint_every=None,
                   stop_at=None):
    """Policy A's pretraining followed by full fine-tuning on real-analogue pairs.

    ``stop_at`` counts total steps across both phases (used to interrupt a run).
    """
    _check_domain(sim_dataset, "sim", "sim")
    _check_domain(real_dataset, "real_analogue", "real")
    t0 = time.perf_counter()
    state = state or new_state(config)
    if state.phase == PHASE_PRETRAIN:
        _run_phase(state, PairSampler(sim_dataset, config, PHASE_PRETRAIN), config.steps_pretrain,
                   config.lr_pretrain, checkpoint_path, checkpoint_every, stop_at)
        if state.step < config.steps_pretrain:
            return state.params, TrainReport(list(state.losses), time.perf_counter() - t0, None,
                                             _config_dict(config))
        state.phase, state.step = PHASE_FINETUNE, 0
    remaining = None if stop_at is None else stop_at - config.steps_pretrain
    _run_phase(state, PairSampler(real_dataset, config, PHASE_FINETUNE), config.steps_finetune,
               config.lr_finetune, checkpoint_path, checkpoint_every, remaining)
    report = TrainReport(list(state.losses), time.perf_counter() - t0, None, _config_dict(config),
                         phase_switch=config.steps_pretrain)
    return state.params, report


def _config_dict(config: TrainConfig) -> dict:
    d = asdict(config)
    d["augmentation"] = asdict(config.augmentation)
    return d


# --------------------------------------------------------------------------
# checkpoints and logs

def checkpoint(state: TrainState, path, seed: int):
    """Write params, Adam moments, phase/step counters and the loss history."""
    if not path:
        raise CheckpointError("checkpoint path is empty")
    pblob = params_to_bytes(state.params, state.meta or None)
    names = list(state.params.tensors)
    moments = b"".join(np.ascontiguousarray(state.opt.m[k], "<f8").tobytes() for k in names)
    moments += b"".join(np.ascontiguousarray(state.opt.v[k], "<f8").tobytes() for k in names)
    losses = np.asarray(state.losses, dtype="<f8").tobytes()
    body = (struct.pack("<qIIQII", seed, state.phase, state.step, state.opt.t, len(pblob),
                        len(state.losses))
            + pblob + moments + losses)
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<H", CKPT_VERSION) + body + struct.pack("<I", zlib.crc32(body)))


def resume(path):
    """Load a checkpoint; returns ``(state, seed)``."""
    if not path:
        raise CheckpointError("checkpoint path is empty")
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CKPT_MAGIC:
        raise CheckpointError("not a checkpoint file")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    body = blob[6:-4]
    if zlib.crc32(body) != struct.unpack("<I", blob[-4:])[0]:
        raise CheckpointError("checkpoint checksum mismatch")
    hdr = struct.Struct("<qIIQII")
    seed, phase, step, t, n_p, n_loss = hdr.unpack_from(body, 0)
    off = hdr.size
    params, meta = params_from_bytes(body[off:off + n_p])
    off += n_p
    m, v = {}, {}
    for store in (m, v):
        for name, w in params.tensors.items():
            store[name] = np.frombuffer(body, "<f8", w.size, off).reshape(w.shape).astype(np.float64)
            off += 8 * w.size
    losses = np.frombuffer(body, "<f8", n_loss, off).tolist()
    return TrainState(params, AdamState(m, v, t), phase, step, losses, dict(meta or {})), seed


def write_loss_log(losses, path, config_hash: str | None = None):
    with open(path, "w", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash: {config_hash}\n")
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        for i, loss in enumerate(losses):
            w.writerow([i, repr(float(loss))])
