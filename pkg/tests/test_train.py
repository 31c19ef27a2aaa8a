import numpy as np
import pytest

from tacrefine.dataset import Dataset, SampleRecord
from tacrefine.net import init_params
from tacrefine.train import (CheckpointError, DomainMismatchError, TrainConfig, checkpoint,
                             learning_rate, new_state, resume, train_policy_a, train_policy_b,
                             write_loss_log)


def _ds(domain, n=12, seed=0):
    rng = np.random.default_rng(seed)
    recs = [SampleRecord(np.r_[0, rng.uniform(-0.02, 0.02, 2), rng.uniform(-0.15, 0.15, 2), 0],
                         rng.uniform(-0.3, 0.3, 6), rng.integers(0, 256, (3, 11, 9), dtype=np.uint8),
                         domain, i) for i in range(n)]
    return Dataset(recs, domain)


SIM, REAL = _ds("sim"), _ds("real_analogue", 6, 1)
SMALL = TrainConfig(batch_size=8, steps_pretrain=30, steps_finetune=20, seed=3)


def test_zero_steps_returns_initialization():
    params, report = train_policy_a(SIM, TrainConfig(steps_pretrain=0, seed=4))
    assert params == init_params(4) and report.losses == []


def test_b_equals_a_without_finetuning():
    cfg = TrainConfig(batch_size=8, steps_pretrain=25, steps_finetune=0, seed=1)
    a, _ = train_policy_a(SIM, cfg)
    b, _ = train_policy_b(SIM, REAL, cfg)
    assert a == b


def test_finetuning_changes_params():
    a, _ = train_policy_a(SIM, SMALL)
    b, rep = train_policy_b(SIM, REAL, SMALL)
    assert a != b and rep.phase_switch == 30 and len(rep.losses) == 50


def test_training_is_deterministic():
    a1, r1 = train_policy_b(SIM, REAL, SMALL)
    a2, r2 = train_policy_b(SIM, REAL, SMALL)
    assert a1 == a2 and r1.losses == r2.losses


@pytest.mark.parametrize("stop", [10, 30, 41])
def test_resume_matches_uninterrupted(tmp_path, stop):
    full, rep = train_policy_b(SIM, REAL, SMALL)
    state = new_state(SMALL)
    train_policy_b(SIM, REAL, SMALL, state=state, stop_at=stop)
    path = tmp_path / "mid.ckpt"
    checkpoint(state, path, SMALL.seed)
    state2, seed = resume(path)
    assert seed == SMALL.seed
    resumed, rep2 = train_policy_b(SIM, REAL, SMALL, state=state2)
    assert resumed == full and rep2.losses == rep.losses


def test_periodic_checkpoints(tmp_path):
    path = tmp_path / "run.ckpt"
    train_policy_a(SIM, SMALL, checkpoint_path=path, checkpoint_every=10)
    state, _ = resume(path)
    assert state.step == 30 and len(state.losses) == 30


def test_domain_mismatch():
    with pytest.raises(DomainMismatchError):
        train_policy_a(REAL, SMALL)
    with pytest.raises(DomainMismatchError):
        train_policy_b(SIM, SIM, SMALL)
    with pytest.raises(ValueError):
        train_policy_a(Dataset([], "sim"), SMALL)


def test_checkpoint_errors(tmp_path):
    with pytest.raises(CheckpointError):
        resume("")
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"garbage-garbage")
    with pytest.raises(CheckpointError, match="not a checkpoint"):
        resume(bad)
    good = tmp_path / "good.ckpt"
    checkpoint(new_state(SMALL), good, 0)
    blob = bytearray(good.read_bytes())
    blob[40] ^= 1
    good.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="checksum"):
        resume(good)


def test_config_validation():
    for kw in (dict(batch_size=0), dict(steps_pretrain=-1), dict(lr_pretrain=0),
               dict(pair_budget=0), dict(lr_schedule="step"), dict(lr_floor=0)):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


def test_cosine_schedule_endpoints():
    cfg = TrainConfig(lr_schedule="cosine", lr_floor=0.1)
    assert learning_rate(cfg, 1e-3, 0, 101) == pytest.approx(1e-3)
    assert learning_rate(cfg, 1e-3, 50, 101) == pytest.approx(0.55e-3)
    assert learning_rate(cfg, 1e-3, 100, 101) == pytest.approx(1e-4)
    assert learning_rate(TrainConfig(), 1e-3, 100, 101) == 1e-3


def test_pair_budget_restricts_pool():
    cfg = TrainConfig(batch_size=8, steps_pretrain=5, pair_budget=3, seed=0)
    a, _ = train_policy_a(SIM, cfg)
    b, _ = train_policy_a(SIM, cfg)
    assert a == b


def test_loss_log(tmp_path):
    write_loss_log([1.0, 0.5], tmp_path / "l.csv", "h")
    assert (tmp_path / "l.csv").read_text().splitlines() == ["# config_hash: h", "step,loss", "0,1.0", "1,0.5"]


def test_b_continues_from_a_state():
    state = new_state(SMALL)
    a, _ = train_policy_a(SIM, SMALL, state=state)
    a = a.copy()
    b, _ = train_policy_b(SIM, REAL, SMALL, state=state)
    fresh_a, _ = train_policy_a(SIM, SMALL)
    fresh_b, _ = train_policy_b(SIM, REAL, SMALL)
    assert a == fresh_a and b == fresh_b
