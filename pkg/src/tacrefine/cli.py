"""Command-line entry point: gen-data, train, refine, eval, track, report."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import datafile
from .config import ConfigError, RunConfig, default_config_yaml, load_config
from .dataset import Dataset, R6_INDEX, collect, sample_grid
from .evaluation import (EvalResults, compare_policies, generalization_eval, pose_matrix,
                         render_report, results_from_json, results_to_json, scenario_groups)
from .geometry import WristPose
from .net import ParamFileError, load_params, save_params
from .refine import (RefineConfig, default_step_clamp, demonstrate_target, refine_loop, track,
                     write_trajectory_csv, write_trajectory_images)
from .tacsim import NonContactError, ObjectModel, make_shape
from .train import (CheckpointError, DomainMismatchError, new_state, resume, train_policy_a,
                    train_policy_b, write_loss_log)

log = logging.getLogger("tacrefine")

SEED_ENV = "TACREFINE_SEED"


class CliError(RuntimeError):
    def __init__(self, kind, message):
        super().__init__(message)
        self.kind = kind


class Ctx:
    """Resolved config, seed and workdir paths for one command."""

    def __init__(self, cfg: RunConfig, workdir: Path):
        self.cfg = cfg
        self.workdir = workdir
        self.hash = cfg.config_hash()
        self.seed = cfg.seed

    def path(self, *parts) -> Path:
        p = self.workdir.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def existing(self, rel) -> Path:
        p = Path(rel)
        p = p if p.is_absolute() else self.workdir / p
        if not p.exists():
            raise CliError("missing_file", f"{p} does not exist")
        return p

    def refine_config(self, seed=None) -> RefineConfig:
        clamp = self.cfg.refine.step_clamp
        if clamp is None:
            clamp = default_step_clamp(self.cfg.bounds.pose_bounds())
        return RefineConfig(self.cfg.refine.max_steps, tuple(float(c) for c in clamp),
                            self.cfg.eval.eps_pos, self.cfg.eval.eps_rot,
                            self.cfg.refine.stop_on_threshold, self.seed if seed is None else seed)

    def sensor(self, domain):
        return self.cfg.sensor.real() if domain == "real_analogue" else self.cfg.sensor.nominal()


def parse_pose(text, bounds_center=None) -> np.ndarray:
    """``x,y,z,roll,pitch,yaw`` or ``name=value`` pairs applied to the bounds center."""
    base = np.zeros(6) if bounds_center is None else np.array(bounds_center, dtype=np.float64)
    text = text.strip()
    if "=" in text:
        for item in text.split(","):
            name, _, value = item.partition("=")
            name = name.strip()
            if name not in R6_INDEX:
                raise CliError("bad_pose", f"unknown pose component {name!r}")
            base[R6_INDEX[name]] = float(value)
        return base
    vals = [float(v) for v in text.split(",")]
    if len(vals) != 6:
        raise CliError("bad_pose", f"pose needs 6 comma-separated values, got {len(vals)}")
    return np.array(vals)


def parse_schedule(text):
    """``step:dim:amount`` items separated by commas; offsets accumulate per dimension."""
    events, off = [], np.zeros(6)
    for item in filter(None, (s.strip() for s in text.split(","))):
        try:
            step, dim, amount = item.split(":")
            step, amount = int(step), float(amount)
        except ValueError:
            raise CliError("bad_schedule", f"cannot parse schedule item {item!r}") from None
        if dim not in R6_INDEX:
            raise CliError("bad_schedule", f"unknown dimension {dim!r}")
        off = off.copy()
        off[R6_INDEX[dim]] += amount
        events.append((step, off))
    return events


# ------------------------------------------------------------------ commands

def cmd_gen_data(ctx: Ctx, args):
    cfg = ctx.cfg
    obj = cfg.object.model()
    out = {}
    for domain, steps, seed in (("sim", cfg.bounds.sim_steps, ctx.seed),
                                ("real_analogue", cfg.bounds.real_steps, ctx.seed + 1)):
        bounds = cfg.bounds.pose_bounds(steps)
        params = ctx.sensor(domain)
        records = collect(sample_grid(bounds), obj, params, seed, domain)
        ds = Dataset(records, domain, bounds, params.digest(), ctx.cfg.config_hash_bytes(), seed)
        name = "sim" if domain == "sim" else "real"
        path = datafile.save(ds, ctx.path("data", f"{name}.tacd"))
        datafile.export_csv(ds, ctx.path("data", f"{name}.csv"), ctx.hash)
        out[domain] = (path, len(ds), bounds.size())
    for domain, (path, n, total) in out.items():
        print(f"{domain}: {n}/{total} records -> {path}")


def _load_dataset(ctx, name, domain):
    path = ctx.existing(Path("data") / f"{name}.tacd")
    try:
        ds = datafile.load(path)
    except datafile.DataFileError as exc:
        raise CliError("bad_dataset", f"{path}: {exc}") from None
    if ds.domain_tag != domain:
        raise CliError("domain_mismatch", f"{path} is tagged {ds.domain_tag!r}, expected {domain!r}")
    return ds


def cmd_train(ctx: Ctx, args):
    tcfg = ctx.cfg.train.train_config(ctx.seed)
    policy = args.policy
    sim = _load_dataset(ctx, "sim", "sim")
    ckpt = ctx.path("models", f"policy_{policy}.ckpt")
    if args.resume:
        state, ck_seed = resume(ctx.existing(Path("models") / ckpt.name))
        if ck_seed != ctx.seed:
            raise CliError("seed_mismatch", f"checkpoint was written with seed {ck_seed}, run uses {ctx.seed}")
        if state.meta.get("config_hash") != ctx.hash:
            raise CliError("config_mismatch", "checkpoint was written under a different config")
    else:
        state = new_state(tcfg)
    state.meta = {"config_hash": ctx.hash, "policy": policy}
    kw = dict(state=state, checkpoint_path=str(ckpt), checkpoint_every=ctx.cfg.train.checkpoint_every)
    if policy == "a":
        params, report = train_policy_a(sim, tcfg, **kw)
    else:
        real = _load_dataset(ctx, "real", "real_analogue")
        params, report = train_policy_b(sim, real, tcfg, **kw)
    path = ctx.path("models", f"policy_{policy}.tacp")
    save_params(params, path, {"config_hash": ctx.hash, "policy": policy})
    write_loss_log(report.losses, ctx.path("models", f"loss_{policy}.csv"), ctx.hash)
    first = float(np.mean(report.losses[:50])) if report.losses else float("nan")
    last = float(np.mean(report.losses[-50:])) if report.losses else float("nan")
    print(f"policy {policy}: {len(report.losses)} steps, loss {first:.5f} -> {last:.5f}, params -> {path}")


def _load_policy(ctx, rel):
    try:
        return load_params(ctx.existing(rel))
    except ParamFileError as exc:
        raise CliError("bad_params", f"{rel}: {exc}") from None


def cmd_refine(ctx: Ctx, args):
    params = _load_policy(ctx, args.params)
    center = ctx.cfg.bounds.pose_bounds().center()
    init, target = parse_pose(args.init_pose, center), parse_pose(args.target_pose, center)
    obj, sensor = ctx.cfg.object.model(), ctx.sensor(args.domain)
    try:
        timg, tpose = demonstrate_target(WristPose.from_r6(target), obj, sensor, seed=ctx.seed + 500_009)
    except NonContactError as exc:
        raise CliError("no_contact", str(exc)) from None
    traj = refine_loop(WristPose.from_r6(init), timg, params, obj, sensor, ctx.refine_config(), tpose)
    out = ctx.path("runs", f"refine_seed{ctx.seed}.csv")
    write_trajectory_csv(traj, out, ctx.hash)
    if args.images:
        write_trajectory_images(traj, ctx.workdir / "runs" / f"refine_seed{ctx.seed}_images", ctx.hash)
    d_pos, d_rot = traj.errors()
    print(f"refine: {traj.reason}, final d_pos {d_pos[-1]:.4f} m, d_rot {d_rot[-1]:.4f} rad -> {out}")


def cmd_track(ctx: Ctx, args):
    params = _load_policy(ctx, args.params)
    center = ctx.cfg.bounds.pose_bounds().center()
    init = parse_pose(args.init_pose, center)
    target = parse_pose(args.target_pose, center) if args.target_pose else init.copy()
    obj, sensor = ctx.cfg.object.model(), ctx.sensor(args.domain)
    try:
        timg, tpose = demonstrate_target(WristPose.from_r6(target), obj, sensor, seed=ctx.seed + 500_009)
    except NonContactError as exc:
        raise CliError("no_contact", str(exc)) from None
    events = parse_schedule(args.schedule)
    cfg = ctx.refine_config()
    if events:
        from dataclasses import replace
        cfg = replace(cfg, max_steps=max(cfg.max_steps, max(s for s, _ in events) + args.settle))
    traj = track(WristPose.from_r6(init), timg, events, params, obj, sensor, cfg, tpose)
    out = ctx.path("runs", f"track_seed{ctx.seed}.csv")
    write_trajectory_csv(traj, out, ctx.hash)
    d_pos, _ = traj.errors()
    print(f"track: {len(traj)} steps, final d_pos {d_pos[-1]:.4f} m -> {out}")


def cmd_eval(ctx: Ctx, args):
    cfg = ctx.cfg
    pol_a = _load_policy(ctx, args.params_a)
    pol_b = _load_policy(ctx, args.params_b)
    thr = cfg.eval.thresholds()
    bounds = cfg.bounds.pose_bounds()
    obj = cfg.object.model()
    groups = scenario_groups(bounds, cfg.eval.group_seeds, cfg.eval.pairs_per_group)
    res = compare_policies(pol_a, pol_b, groups, obj, cfg.sensor.real(), thr, ctx.seed)
    if args.nominal:
        nominal = compare_policies(pol_a, pol_b, groups, obj, cfg.sensor.nominal(), thr, ctx.seed)
        res.meta["nominal_success"] = {row["group"] + "/" + row["policy"]: row["success_rate"]
                                       for row in nominal.comparison}
    if not args.skip_matrix:
        pose_matrix(pol_b, obj, cfg.sensor.nominal(), thr, ctx.seed, bounds,
                    jitter=cfg.eval.matrix_jitter, results=res)
    if not args.skip_shapes:
        shapes = {cfg.object.shape: obj}
        for name, dims in cfg.eval.shapes.items():
            shapes[name] = ObjectModel(make_shape(name, **dims), cfg.object.thickness)
        generalization_eval(pol_b, shapes, cfg.sensor.nominal(), thr, ctx.seed, bounds,
                            jitter=cfg.eval.matrix_jitter, results=res)
    res.meta.update({"config_hash": ctx.hash, "seed": ctx.seed, "eval_domain": "real_analogue",
                     "severity": cfg.sensor.severity})
    raw = ctx.path("eval", "results.json")
    raw.write_text(results_to_json(res))
    files = render_report(res, ctx.workdir / "reports", ctx.hash)
    for row in res.comparison:
        print(f"group {row['group']} policy {row['policy']}: success {row['success_rate']:.0%}")
    print(f"eval: {len(files)} report files -> {ctx.workdir / 'reports'}")


def cmd_report(ctx: Ctx, args):
    src = ctx.existing(Path(args.in_dir) / "results.json")
    res: EvalResults = results_from_json(src.read_text())
    cfg_hash = res.meta.get("config_hash", ctx.hash)
    out = Path(args.out_dir)
    out = out if out.is_absolute() else ctx.workdir / out
    files = render_report(res, out, cfg_hash)
    print(f"report: {len(files)} files -> {out}")


# ------------------------------------------------------------------ plumbing

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tacrefine", description=__doc__)
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--workdir", default=".", help="root for all relative paths (default: .)")
    p.add_argument("--seed", type=int, help=f"global seed; overrides ${SEED_ENV} and the config")
    p.add_argument("--print-default-config", action="store_true", help="print the default config and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command")

    sub.add_parser("gen-data", help="collect sim and real-analogue datasets")

    t = sub.add_parser("train", help="train policy A (sim only) or B (sim + fine-tune)")
    t.add_argument("--policy", choices=("a", "b"), required=True)
    t.add_argument("--resume", action="store_true", help="continue from the policy's checkpoint")

    for name in ("refine", "track"):
        r = sub.add_parser(name, help="closed-loop refinement" if name == "refine" else "moving-object tracking")
        r.add_argument("--params", required=True)
        r.add_argument("--init-pose", required=True, help="x,y,z,roll,pitch,yaw or name=value list")
        r.add_argument("--target-pose", required=(name == "refine"))
        r.add_argument("--domain", choices=("sim", "real_analogue"), default="sim")
        if name == "refine":
            r.add_argument("--images", action="store_true", help="also write PGM tactile images")
        else:
            r.add_argument("--schedule", default="", help="step:dim:amount,... object offsets")
            r.add_argument("--settle", type=int, default=5, help="iterations after the last event")

    e = sub.add_parser("eval", help="policy comparison, pose matrix and shape generalization")
    e.add_argument("--params-a", required=True)
    e.add_argument("--params-b", required=True)
    e.add_argument("--nominal", action="store_true", help="also log the comparison in the nominal domain")
    e.add_argument("--skip-matrix", action="store_true")
    e.add_argument("--skip-shapes", action="store_true")

    r = sub.add_parser("report", help="re-render report files from saved results")
    r.add_argument("--in", dest="in_dir", default="eval")
    r.add_argument("--out", dest="out_dir", default="reports")
    return p


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "refine": cmd_refine, "track": cmd_track,
            "eval": cmd_eval, "report": cmd_report}


def resolve_seed(cli_seed, cfg_seed):
    if cli_seed is not None:
        return cli_seed
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise CliError("bad_seed", f"{SEED_ENV}={env!r} is not an integer") from None
    return cfg_seed


def _fail(kind, message, key=None):
    doc = {"error": kind, "message": message}
    if key is not None:
        doc["key"] = key
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.print_default_config:
        sys.stdout.write(default_config_yaml())
        return 0
    if not args.command:
        parser.print_usage(sys.stderr)
        _fail("usage", "no command given")
        return 2
    try:
        if args.config and not Path(args.config).exists():
            raise CliError("missing_file", f"config {args.config} does not exist")
        cfg = load_config(args.config)
        from dataclasses import replace
        cfg = replace(cfg, seed=resolve_seed(args.seed, cfg.seed))
        workdir = Path(args.workdir)
        workdir.mkdir(parents=True, exist_ok=True)
        ctx = Ctx(cfg, workdir)
        print(f"seed: {ctx.seed}")
        print(f"config_hash: {ctx.hash}")
        COMMANDS[args.command](ctx, args)
    except ConfigError as exc:
        _fail("config", str(exc), exc.key)
        return 2
    except CliError as exc:
        _fail(exc.kind, str(exc))
        return 1
    except (DomainMismatchError,) as exc:
        _fail("domain_mismatch", str(exc))
        return 1
    except (CheckpointError, ParamFileError, datafile.DataFileError) as exc:
        _fail("bad_file", str(exc))
        return 1
    except (OSError, ValueError) as exc:
        _fail(type(exc).__name__, str(exc))
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
