import dataclasses
import json

import pytest
import yaml

from tacrefine.cli import main, parse_pose, parse_schedule, CliError
from tacrefine.config import ConfigError, RunConfig, from_dict, load_config
from tacrefine.net import init_params, save_params

TINY = {
    "bounds": {"sim_steps": 2, "real_steps": 2},
    "train": {"batch_size": 4, "steps_pretrain": 6, "steps_finetune": 4, "checkpoint_every": 3},
    "refine": {"max_steps": 2},
    "eval": {"max_steps": 2, "repeats": 1, "group_seeds": [1]},
}


@pytest.fixture
def tiny(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(TINY))
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def pipeline(capsys, cfg, work, seed_args=("--seed", "7")):
    base = ["--config", cfg, "--workdir", work, *seed_args]
    for cmd in (["gen-data"], ["train", "--policy", "a"], ["train", "--policy", "b"],
                ["eval", "--params-a", "models/policy_a.tacp", "--params-b", "models/policy_b.tacp",
                 "--skip-shapes"]):
        code, out, err = run(capsys, *base, *cmd)
        assert code == 0, err


def test_default_config_roundtrips(capsys):
    code, out, _ = run(capsys, "--print-default-config")
    assert code == 0
    assert from_dict(yaml.safe_load(out)) == RunConfig()


def test_unknown_key_rejected_with_key(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("train:\n  batch_sise: 4\n")
    code, out, err = run(capsys, "--config", bad, "--workdir", tmp_path, "gen-data")
    assert code == 2
    doc = json.loads(err.strip().splitlines()[-1])
    assert doc["error"] == "config" and doc["key"] == "train.batch_sise"


def test_type_errors_name_the_key(tmp_path):
    with pytest.raises(ConfigError) as exc:
        from_dict({"eval": {"repeats": "five"}})
    assert exc.value.key == "eval.repeats"
    with pytest.raises(ConfigError) as exc:
        from_dict({"object": {"shape": "triangle"}})
    assert exc.value.key == "object"


def test_missing_params_file_is_json_error(tmp_path, capsys, tiny):
    code, _, err = run(capsys, "--config", tiny, "--workdir", tmp_path, "refine", "--params", "nope.tacp",
                       "--init-pose", "y=0.01", "--target-pose", "y=0")
    assert code == 1 and json.loads(err)["error"] == "missing_file"


def test_seed_resolution_order(tmp_path, capsys, monkeypatch, tiny):
    monkeypatch.setenv("TACREFINE_SEED", "11")
    _, out, _ = run(capsys, "--config", tiny, "--workdir", tmp_path, "gen-data")
    assert "seed: 11" in out
    _, out, _ = run(capsys, "--config", tiny, "--workdir", tmp_path, "--seed", "3", "gen-data")
    assert "seed: 3" in out
    monkeypatch.setenv("TACREFINE_SEED", "x")
    code, _, err = run(capsys, "--config", tiny, "--workdir", tmp_path, "gen-data")
    assert code == 1 and json.loads(err)["error"] == "bad_seed"


def test_env_seed_matches_flag(tmp_path, capsys, monkeypatch, tiny):
    run(capsys, "--config", tiny, "--workdir", tmp_path / "a", "--seed", "5", "gen-data")
    monkeypatch.setenv("TACREFINE_SEED", "5")
    run(capsys, "--config", tiny, "--workdir", tmp_path / "b", "gen-data")
    for name in ("sim.tacd", "real.tacd", "sim.csv"):
        assert (tmp_path / "a" / "data" / name).read_bytes() == (tmp_path / "b" / "data" / name).read_bytes()


def test_pipeline_is_byte_identical(tmp_path, capsys, tiny):
    pipeline(capsys, tiny, tmp_path / "r1")
    pipeline(capsys, tiny, tmp_path / "r2")
    files = sorted(p.relative_to(tmp_path / "r1") for p in (tmp_path / "r1").rglob("*") if p.is_file())
    assert any(str(f).startswith("reports") for f in files)
    for f in files:
        assert (tmp_path / "r1" / f).read_bytes() == (tmp_path / "r2" / f).read_bytes(), f


def test_end_to_end_commands(tmp_path, capsys, tiny):
    pipeline(capsys, tiny, tmp_path)
    base = ["--config", tiny, "--workdir", tmp_path, "--seed", "7"]
    code, out, err = run(capsys, *base, "refine", "--params", "models/policy_b.tacp",
                         "--init-pose", "y=0.01,pitch=0.05", "--target-pose", "y=0", "--images")
    assert code == 0, err
    assert (tmp_path / "runs" / "refine_seed7.csv").exists()
    assert (tmp_path / "runs" / "refine_seed7_images" / "target_f0.pgm").exists()
    code, out, err = run(capsys, *base, "track", "--params", "models/policy_b.tacp", "--init-pose", "y=0",
                         "--schedule", "1:y:0.005", "--settle", "2")
    assert code == 0, err
    assert len((tmp_path / "runs" / "track_seed7.csv").read_text().splitlines()) >= 3
    # a policy that never moves keeps contact, so the full horizon (1 event + 2 settle) is logged
    still = init_params(0)
    for v in still.tensors.values():
        v[:] = 0
    save_params(still, tmp_path / "models" / "still.tacp")
    code, out, err = run(capsys, *base, "track", "--params", "models/still.tacp", "--init-pose", "y=0",
                         "--schedule", "1:y:0.005", "--settle", "2")
    assert code == 0, err
    lines = (tmp_path / "runs" / "track_seed7.csv").read_text().splitlines()
    assert len(lines) == 2 + 4
    code, out, err = run(capsys, *base, "report", "--in", "eval", "--out", "again")
    assert code == 0, err
    assert (tmp_path / "again" / "comparison.csv").read_bytes() == \
        (tmp_path / "reports" / "comparison.csv").read_bytes()
    # every artifact carries the config hash
    cfg_hash = dataclasses.replace(load_config(tiny), seed=7).config_hash()   # the hash covers the seed
    assert f"config_hash: {cfg_hash}" in (tmp_path / "models" / "loss_a.csv").read_text()
    assert cfg_hash in (tmp_path / "reports" / "report.md").read_text()


def test_resume_cli_matches_fresh(tmp_path, capsys, tiny):
    base = ["--config", tiny, "--workdir", tmp_path, "--seed", "2"]
    run(capsys, *base, "gen-data")
    run(capsys, *base, "train", "--policy", "b")
    fresh = (tmp_path / "models" / "policy_b.tacp").read_bytes()
    code, _, err = run(capsys, *base, "train", "--policy", "b", "--resume")
    assert code == 0, err
    assert (tmp_path / "models" / "policy_b.tacp").read_bytes() == fresh


def test_resume_with_other_seed_refused(tmp_path, capsys, tiny):
    run(capsys, "--config", tiny, "--workdir", tmp_path, "--seed", "2", "gen-data")
    run(capsys, "--config", tiny, "--workdir", tmp_path, "--seed", "2", "train", "--policy", "a")
    code, _, err = run(capsys, "--config", tiny, "--workdir", tmp_path, "--seed", "3", "train",
                       "--policy", "a", "--resume")
    assert code == 1 and json.loads(err)["error"] == "seed_mismatch"


def test_train_without_data(tmp_path, capsys, tiny):
    code, _, err = run(capsys, "--config", tiny, "--workdir", tmp_path, "train", "--policy", "a")
    assert code == 1 and json.loads(err)["error"] == "missing_file"


def test_pose_and_schedule_parsing():
    assert list(parse_pose("0,0.01,0,0,0.1,0")) == [0, 0.01, 0, 0, 0.1, 0]
    assert list(parse_pose("y=0.01,pitch=-0.1")) == [0, 0.01, 0, 0, -0.1, 0]
    with pytest.raises(CliError):
        parse_pose("w=1")
    ev = parse_schedule("2:y:0.005,4:y:0.005")
    assert [s for s, _ in ev] == [2, 4] and ev[1][1][1] == pytest.approx(0.01)
    with pytest.raises(CliError):
        parse_schedule("2:q:1")
