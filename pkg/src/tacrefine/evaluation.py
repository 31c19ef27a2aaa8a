"""Refinement metrics, policy comparison, pose-pair matrix and report files."""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import R6_INDEX, SAMPLED_DIMS, PoseBounds
from .geometry import WristPose
from .net import PolicyParams, load_params
from .refine import EPS_POS, EPS_ROT, RefineConfig, Trajectory, demonstrate_target, pose_error, refine_loop
from .tacsim import HandConfig, NonContactError, ObjectModel, SensorParams

__all__ = ["MetricThresholds", "TrialResult", "pose_error", "steps_to_threshold", "success_rate",
           "ScenarioGroup", "scenario_groups", "run_trial", "compare_policies", "pose_matrix",
           "generalization_eval", "render_report", "read_report_csv", "EvalResults"]


@dataclass(frozen=True)
class MetricThresholds:
    eps_pos: float = EPS_POS
    eps_rot: float = EPS_ROT
    max_steps: int = 10
    repeats: int = 5

    def __post_init__(self):
        if not (self.eps_pos > 0 and self.eps_rot > 0 and self.max_steps > 0 and self.repeats > 0):
            raise ValueError("thresholds, horizon and repeats must be positive")


@dataclass
class TrialResult:
    d_pos: float
    d_rot: float
    steps: int | None
    success: bool
    label: str = ""
    curve_pos: tuple = ()
    curve_rot: tuple = ()
    reason: str = "max_steps"

    def __post_init__(self):
        if self.d_pos < 0 or not 0 <= self.d_rot <= np.pi + 1e-12:
            raise ValueError("errors out of range")


def _curves(obj):
    if isinstance(obj, Trajectory):
        return obj.errors()
    if isinstance(obj, TrialResult):
        return np.asarray(obj.curve_pos), np.asarray(obj.curve_rot)
    arr = np.asarray(obj, dtype=np.float64)
    return arr[:, 0], arr[:, 1]


def steps_to_threshold(trajectory, thresholds: MetricThresholds = MetricThresholds()):
    """First step where both errors are inside the thresholds, or None.

    Accepts a Trajectory, a TrialResult, or an (S, 2) array of (d_pos, d_rot).
    """
    d_pos, d_rot = _curves(trajectory)
    ok = (d_pos <= thresholds.eps_pos) & (d_rot <= thresholds.eps_rot)
    if not ok.any():
        return None
    return int(np.argmax(ok))


def _is_success(trial: TrialResult, thresholds: MetricThresholds) -> bool:
    if trial.reason in ("lost_contact", "initial_no_contact"):
        return False
    if trial.curve_pos:
        s = steps_to_threshold(trial, thresholds)
    else:
        s = trial.steps
    return (trial.d_pos <= thresholds.eps_pos and trial.d_rot <= thresholds.eps_rot
            and s is not None and s <= thresholds.max_steps)


def success_rate(trials, thresholds: MetricThresholds = MetricThresholds()) -> float:
    trials = list(trials)
    if not trials:
        raise ValueError("success rate of an empty trial list is undefined")
    return float(np.mean([_is_success(t, thresholds) for t in trials]))


def _resolve_policy(policy):
    if isinstance(policy, (str, os.PathLike)):
        return load_params(policy)
    if isinstance(policy, PolicyParams) or callable(policy):
        return policy
    raise TypeError(f"cannot use {type(policy).__name__} as a policy")


def run_trial(policy, obj: ObjectModel, params: SensorParams, initial_r6, target_r6,
              thresholds: MetricThresholds = MetricThresholds(), seed=0, label="",
              hand: HandConfig | None = None, step_clamp=None) -> TrialResult:
    """Demonstrate the target, run the fixed-horizon loop and score the outcome."""
    target = WristPose.from_r6(target_r6)
    try:
        target_images, _ = demonstrate_target(target, obj, params, seed=int(seed) + 500_009, hand=hand)
    except NonContactError:
        return TrialResult(np.inf, np.pi, None, False, label, (), (), "target_no_contact")
    kw = {} if step_clamp is None else {"step_clamp": tuple(step_clamp)}
    cfg = RefineConfig(max_steps=thresholds.max_steps, eps_pos=thresholds.eps_pos,
                       eps_rot=thresholds.eps_rot, seed=int(seed), **kw)
    traj = refine_loop(WristPose.from_r6(initial_r6), target_images, policy, obj, params, cfg,
                       target, hand)
    d_pos, d_rot = traj.errors()
    trial = TrialResult(float(d_pos[-1]), float(d_rot[-1]), steps_to_threshold(traj, thresholds),
                        False, label, tuple(map(float, d_pos)), tuple(map(float, d_rot)), traj.reason)
    trial.success = _is_success(trial, thresholds)
    return trial


@dataclass
class ScenarioGroup:
    label: str
    pairs: list          # [(initial_r6, target_r6)], trial r uses pairs[r % len(pairs)]


def scenario_groups(bounds: PoseBounds = PoseBounds(), seeds=(1, 2, 3), pairs_per_group=1,
                    margin=0.0) -> list:
    """One group per seed, each holding seeded random (initial, target) pairs within the bounds."""
    roman = ["I", "II", "III", "IV", "V", "VI", "VII", "VIII", "IX", "X"]
    groups = []
    for i, s in enumerate(seeds):
        rng = np.random.default_rng([int(s), 0x5CE])
        pairs = [(bounds.uniform(rng, margin), bounds.uniform(rng, margin)) for _ in range(pairs_per_group)]
        groups.append(ScenarioGroup(roman[i] if i < len(roman) else str(i + 1), pairs))
    return groups


def _summarize(trials, thresholds):
    steps = [t.steps for t in trials if _is_success(t, thresholds)]
    finite = [t for t in trials if np.isfinite(t.d_pos)]
    return {
        "trials": len(trials),
        "d_pos_mean": float(np.mean([t.d_pos for t in finite])) if finite else float("nan"),
        "d_rot_mean": float(np.mean([t.d_rot for t in finite])) if finite else float("nan"),
        "steps_mean": float(np.mean(steps)) if steps else float("nan"),
        "success_rate": success_rate(trials, thresholds),
    }


def mean_curve(trials, length):
    """Per-step mean errors, holding each trial's last value past its end."""
    pos = np.full((len(trials), length), np.nan)
    rot = np.full((len(trials), length), np.nan)
    for i, t in enumerate(trials):
        n = len(t.curve_pos)
        if n == 0:
            continue
        pos[i, :n], rot[i, :n] = t.curve_pos[:length], t.curve_rot[:length]
        pos[i, n:], rot[i, n:] = t.curve_pos[-1], t.curve_rot[-1]
    with np.errstate(invalid="ignore"):
        return np.nanmean(pos, axis=0), np.nanmean(rot, axis=0)


@dataclass
class EvalResults:
    comparison: list = field(default_factory=list)       # dict rows
    matrix: dict | None = None                           # {"dims", "steps", "rate"}
    generalization: dict = field(default_factory=dict)   # shape -> matrix dict
    curves: dict = field(default_factory=dict)           # name -> (pos curve, rot curve)
    trials: dict = field(default_factory=dict)           # name -> [TrialResult]
    meta: dict = field(default_factory=dict)


def compare_policies(policy_a, policy_b, scenarios, obj: ObjectModel, params: SensorParams,
                     thresholds: MetricThresholds = MetricThresholds(), seed=0,
                     hand: HandConfig | None = None, results: EvalResults | None = None) -> EvalResults:
    """Run every scenario group R times with each policy and tabulate the three metrics."""
    policies = {"A": _resolve_policy(policy_a), "B": _resolve_policy(policy_b)}
    results = results or EvalResults()
    for gi, group in enumerate(scenarios):
        for name, pol in policies.items():
            trials = []
            for r in range(thresholds.repeats):
                init, tgt = group.pairs[r % len(group.pairs)]
                trial_seed = (int(seed) * 1000 + gi) * 1000 + r
                trials.append(run_trial(pol, obj, params, init, tgt, thresholds, trial_seed,
                                        f"{group.label}/{name}", hand))
            row = {"group": group.label, "policy": name, **_summarize(trials, thresholds)}
            results.comparison.append(row)
            key = f"group_{group.label}_{name}"
            results.trials[key] = trials
            results.curves[key] = mean_curve(trials, thresholds.max_steps + 1)
    return results


def aggregate_success(results: EvalResults, policy: str) -> float:
    trials = [t for k, ts in results.trials.items() if k.startswith("group_") and k.endswith("_" + policy)
              for t in ts]
    return float(np.mean([t.success for t in trials]))


def matrix_pair(bounds: PoseBounds, init_dim: str, goal_dim: str):
    """Initial pose at one dimension's lower extreme, goal at another's upper extreme."""
    center = bounds.center()
    init, goal = center.copy(), center.copy()
    init[R6_INDEX[init_dim]] = getattr(bounds, init_dim).lower
    goal[R6_INDEX[goal_dim]] = getattr(bounds, goal_dim).upper
    return init, goal


def _jittered(r6, bounds: PoseBounds, rng, jitter):
    if jitter <= 0:
        return r6
    out = r6 + rng.uniform(-1, 1, 6) * jitter * bounds.half_range()
    for name in SAMPLED_DIMS:
        d = getattr(bounds, name)
        out[R6_INDEX[name]] = np.clip(out[R6_INDEX[name]], d.lower, d.upper)
    return out


def pose_matrix(policy, obj: ObjectModel, params: SensorParams,
                thresholds: MetricThresholds = MetricThresholds(), seed=0,
                bounds: PoseBounds = PoseBounds(), dims=SAMPLED_DIMS, jitter=0.1,
                hand: HandConfig | None = None, results: EvalResults | None = None, tag="matrix"):
    """All initial-extreme / goal-extreme dimension pairs, R trials each.

    Trial r > 0 starts from the initial pose jittered by ``jitter`` times the half-range
    (clipped to the bounds) so that repetitions differ in the noise-free domain.
    Returns ``(EvalResults, matrix)`` where matrix holds (len(dims), len(dims)) arrays.
    """
    policy = _resolve_policy(policy)
    results = results or EvalResults()
    n = len(dims)
    steps = np.full((n, n), np.nan)
    rate = np.zeros((n, n))
    for i, di in enumerate(dims):
        for j, dj in enumerate(dims):
            gi, gj = SAMPLED_DIMS.index(di), SAMPLED_DIMS.index(dj)
            init, goal = matrix_pair(bounds, di, dj)
            trials = []
            for r in range(thresholds.repeats):
                rng = np.random.default_rng([int(seed), gi, gj, r])
                start = init if r == 0 else _jittered(init, bounds, rng, jitter)
                trials.append(run_trial(policy, obj, params, start, goal, thresholds,
                                        int(seed) * 1000 + 16 * gi + 4 * gj + r,
                                        f"{di}-/{dj}+", hand))
            summary = _summarize(trials, thresholds)
            steps[i, j], rate[i, j] = summary["steps_mean"], summary["success_rate"]
            key = f"{tag}_{di}_{dj}"
            results.trials[key] = trials
            results.curves[key] = mean_curve(trials, thresholds.max_steps + 1)
    matrix = {"dims": tuple(dims), "steps": steps, "rate": rate}
    if tag == "matrix":
        results.matrix = matrix
    return results, matrix


def generalization_eval(policy, objects: dict, params: SensorParams,
                        thresholds: MetricThresholds = MetricThresholds(), seed=0,
                        bounds: PoseBounds = PoseBounds(), dims=("roll", "y"), jitter=0.1,
                        hand: HandConfig | None = None, results: EvalResults | None = None):
    """Pose matrix restricted to ``dims`` on each named object (include the training shape as control)."""
    results = results or EvalResults()
    for name, obj in objects.items():
        _, matrix = pose_matrix(policy, obj, params, thresholds, seed, bounds, dims, jitter, hand,
                                results, tag=f"shape_{name}")
        results.generalization[name] = matrix
    return results


# ---------------------------------------------------------------- report files

COMPARISON_COLUMNS = ["group", "policy", "trials", "d_pos_mean", "d_rot_mean", "steps_mean", "success_rate"]
MATRIX_COLUMNS = ["table", "initial", "goal", "steps_mean", "success_rate"]


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path, header, rows, config_hash):
    with open(path, "w", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash: {config_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_report_csv(path):
    """Parse a report CSV back into (header, rows), skipping comment lines."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(io.StringIO("".join(lines)))
    rows = list(reader)
    return rows[0], rows[1:]


def _matrix_rows(name, matrix):
    dims = matrix["dims"]
    for i, di in enumerate(dims):
        for j, dj in enumerate(dims):
            yield [name, f"{di}-", f"{dj}+", float(matrix["steps"][i, j]), float(matrix["rate"][i, j])]


def _md_matrix(matrix):
    dims = matrix["dims"]
    out = ["| initial \\ goal | " + " | ".join(f"{d}+" for d in dims) + " |",
           "|---" * (len(dims) + 1) + "|"]
    for i, di in enumerate(dims):
        cells = []
        for j in range(len(dims)):
            s = matrix["steps"][i, j]
            cells.append(f"{'-' if np.isnan(s) else f'{s:.1f}'} / {matrix['rate'][i, j]:.0%}")
        out.append(f"| {di}- | " + " | ".join(cells) + " |")
    return out


def render_report(results: EvalResults, path, config_hash: str | None = None) -> list:
    """Write comparison.csv, pose_matrix.csv, curves/*.csv and report.md under ``path``."""
    if not results.comparison and results.matrix is None and not results.generalization:
        raise ValueError("nothing to report")
    out = Path(path)
    (out / "curves").mkdir(parents=True, exist_ok=True)
    written = []
    if results.comparison:
        p = out / "comparison.csv"
        _write_csv(p, COMPARISON_COLUMNS, [[row[c] for c in COMPARISON_COLUMNS] for row in results.comparison],
                   config_hash)
        written.append(p)
    if results.matrix is not None or results.generalization:
        rows = []
        if results.matrix is not None:
            rows += list(_matrix_rows("matrix", results.matrix))
        for name in sorted(results.generalization):
            rows += list(_matrix_rows(f"shape_{name}", results.generalization[name]))
        p = out / "pose_matrix.csv"
        _write_csv(p, MATRIX_COLUMNS, rows, config_hash)
        written.append(p)
    for name in sorted(results.curves):
        pos, rot = results.curves[name]
        p = out / "curves" / f"{name}.csv"
        _write_csv(p, ["step", "d_pos_mean", "d_rot_mean"],
                   [[s, float(a), float(b)] for s, (a, b) in enumerate(zip(pos, rot))], config_hash)
        written.append(p)

    md = ["# Refinement evaluation", ""]
    if config_hash:
        md += [f"config hash: `{config_hash}`", ""]
    for k in sorted(results.meta):
        md.append(f"- {k}: {results.meta[k]}")
    if results.meta:
        md.append("")
    if results.comparison:
        md += ["## Policy comparison", "",
               "| group | policy | trials | pos error (mm) | rot error (rad) | steps | success |",
               "|---|---|---|---|---|---|---|"]
        for row in results.comparison:
            md.append(f"| {row['group']} | {row['policy']} | {row['trials']} | {1000 * row['d_pos_mean']:.2f} "
                      f"| {row['d_rot_mean']:.3f} | {row['steps_mean']:.1f} | {row['success_rate']:.0%} |")
        md.append("")
    if results.matrix is not None:
        md += ["## Pose matrix (mean steps / success rate)", ""] + _md_matrix(results.matrix) + [""]
    for name in sorted(results.generalization):
        md += [f"## Shape: {name}", ""] + _md_matrix(results.generalization[name]) + [""]
    p = out / "report.md"
    p.write_text("\n".join(md))
    written.append(p)
    return written


def _nan_to_none(v):
    return None if isinstance(v, float) and not np.isfinite(v) else v


def results_to_json(results: EvalResults) -> str:
    """Lossless-enough JSON form (non-finite floats become null)."""
    def mat(m):
        return {"dims": list(m["dims"]), "steps": [[_nan_to_none(float(v)) for v in row] for row in m["steps"]],
                "rate": m["rate"].tolist()}
    doc = {
        "comparison": [{k: _nan_to_none(v) for k, v in row.items()} for row in results.comparison],
        "matrix": None if results.matrix is None else mat(results.matrix),
        "generalization": {k: mat(v) for k, v in results.generalization.items()},
        "curves": {k: [[_nan_to_none(float(x)) for x in c] for c in v] for k, v in results.curves.items()},
        "trials": {k: [{"d_pos": _nan_to_none(t.d_pos), "d_rot": t.d_rot, "steps": t.steps,
                        "success": t.success, "label": t.label, "curve_pos": list(t.curve_pos),
                        "curve_rot": list(t.curve_rot), "reason": t.reason} for t in ts]
                   for k, ts in results.trials.items()},
        "meta": results.meta,
    }
    return json.dumps(doc, indent=1, sort_keys=True)


def results_from_json(text: str) -> EvalResults:
    doc = json.loads(text)

    def num(v):
        return float("nan") if v is None else v

    def mat(m):
        return {"dims": tuple(m["dims"]), "steps": np.array([[num(v) for v in row] for row in m["steps"]]),
                "rate": np.array(m["rate"], dtype=np.float64)}
    return EvalResults(
        comparison=[{k: num(v) if k not in ("group", "policy") else v for k, v in row.items()}
                    for row in doc["comparison"]],
        matrix=None if doc["matrix"] is None else mat(doc["matrix"]),
        generalization={k: mat(v) for k, v in doc["generalization"].items()},
        curves={k: tuple(np.array([num(x) for x in c]) for c in v) for k, v in doc["curves"].items()},
        trials={k: [TrialResult(num(t["d_pos"]) if t["d_pos"] is not None else np.inf, t["d_rot"], t["steps"],
                                t["success"], t["label"], tuple(t["curve_pos"]), tuple(t["curve_rot"]),
                                t["reason"]) for t in ts] for k, ts in doc["trials"].items()},
        meta=doc["meta"],
    )
