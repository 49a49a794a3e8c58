"""Command-line entry point: collect-demos, train, evaluate, pipeline.

Exit status: 0 on success, 1 for usage or configuration errors, 2 for
runtime failures (numeric aborts, demonstrator failure, bad checkpoints).
"""
import argparse
import logging
import sys
from pathlib import Path

from . import a2cmp, dvl
from .actions import build_action_table
from .config import ConfigError, dump_config, load_config, parse_config_text
from .evaluation import compare_algorithms, evaluate_policy, export_trajectories
from .mlp import CheckpointError, NumericError, checkpoint_algorithm, load_checkpoint, save_checkpoint
from .sim import PolicyContractError, ScenarioError

log = logging.getLogger("a2cmp_nav")

RUNTIME_ERRORS = (NumericError, CheckpointError, dvl.DemonstratorQualityError, a2cmp.TrainingError,
                  PolicyContractError, ScenarioError, OSError)

# seed offsets keep every stage on its own episode stream
ORCA_DEMO_OFFSET = 600_000
DVL_DEMO_OFFSET = 700_000
PIPELINE_EVAL_BASE = 800_000_000


class UsageError(Exception):
    pass


def _dvl_curve_rows(curve):
    return [{"episode": i, "avg_reward": r} for i, r in enumerate(curve, 1)]


def demo_seed(seed, offset):
    return seed * 1_000_000 + offset


# --- commands ------------------------------------------------------------


def cmd_collect_demos(args, cfg):
    if args.episodes is not None and args.episodes <= 0:
        raise UsageError("no episodes requested")
    n = args.episodes if args.episodes is not None else cfg.demos
    scenario = cfg.scenario()
    table = build_action_table(scenario.preferred_speed)
    if args.policy == "orca":
        demonstrator = cfg.orca()
    else:
        params = load_checkpoint(args.policy, scenario.n_obstacles)
        demonstrator = dvl.DvlPolicy(params, table, cfg.gamma, scenario.dt,
                                     proximity_sign=scenario.reward_proximity_sign)
    demos = dvl.collect_demonstrations(demonstrator, scenario, n, table, cfg.gamma, args.seed, cfg.orca())
    demos.save(args.out)
    print(f"kept {demos.n_episodes}/{n} episodes ({len(demos)} steps) -> {args.out}")


def cmd_train(args, cfg):
    out = Path(args.out_dir)
    scenario = cfg.scenario()
    demos = None
    if args.demos is not None:
        demos = dvl.DemoMemory.load(args.demos)
    if args.algo == "dvl":
        params, curve = dvl.train_dvl(cfg.dvl(), scenario, demos, args.seed, cfg.orca())
        save_checkpoint(params, out / "dvl.json", "dvl")
        a2cmp.write_curve(_dvl_curve_rows(curve), out / "dvl_curve.csv", ["episode", "avg_reward"])
    else:
        if demos is None and not args.no_imitation:
            raise UsageError("a2cmp training needs demonstrations: run `collect-demos` and pass --demos, "
                             "or use --no-imitation")
        params, curve = a2cmp.train_a2cmp(cfg.a2cmp(), scenario, demos, args.seed, not args.no_imitation,
                                          out, cfg.orca())
        save_checkpoint(params, out / "a2cmp.json", "a2cmp")
        a2cmp.write_curve(curve, out / "a2cmp_curve.csv")
    print(f"{args.algo} training finished -> {out}")


def _robot_policy(spec, cfg, mode=None):
    """Returns (policy, mode) for ``orca`` or a checkpoint path."""
    if spec == "orca":
        return cfg.orca(), None
    params = load_checkpoint(spec, cfg.n_obstacles)
    if mode is None:
        mode = "value" if checkpoint_algorithm(spec) == "dvl" else "actor"
    return params, mode


def run_evaluation(policy, mode, cfg, n_episodes, seed, out_dir, name, export_n):
    report, records = evaluate_policy(policy, cfg.scenario(), n_episodes, seed, cfg.orca(),
                                      record=export_n > 0, mode=mode or "actor", gamma=cfg.gamma)
    out_dir = Path(out_dir)
    report.write(out_dir / f"report_{name}.csv")
    for i in range(min(export_n, len(records))):
        export_trajectories([records[i]], out_dir / f"traj_{name}_{i}.csv", [i])
    return report


def cmd_evaluate(args, cfg):
    if args.episodes < 1:
        raise UsageError("--episodes must be >= 1")
    if args.export_traj < 0:
        raise UsageError("--export-traj must be >= 0")
    policy, mode = _robot_policy(args.policy, cfg, args.mode)
    name = "orca" if args.policy == "orca" else Path(args.policy).stem
    report = run_evaluation(policy, mode, cfg, args.episodes, args.seed, args.out_dir, name, args.export_traj)
    print(f"success {report.success_rate:.2f} collision {report.collision_rate:.2f} "
          f"goal-missing {report.goal_missing_rate:.2f} average time {report.average_time_to_goal:.1f}")


class Pipeline:
    """Stages write into one directory; a ``.done`` marker closes each stage."""

    def __init__(self, cfg, seed, out_dir, resume):
        self.cfg = cfg
        self.seed = seed
        self.out = Path(out_dir)
        self.resume = resume
        self.scenario = cfg.scenario()
        self.table = build_action_table(self.scenario.preferred_speed)

    def _stage(self, name, fn):
        marker = self.out / f".{name}.done"
        if self.resume and marker.exists():
            print(f"[{name}] already complete, skipped")
            return
        print(f"[{name}] running")
        fn()
        marker.write_text("ok\n", encoding="utf-8")

    def orca_demos(self):
        demos = dvl.collect_demonstrations(self.cfg.orca(), self.scenario, self.cfg.demos, self.table,
                                           self.cfg.gamma, demo_seed(self.seed, ORCA_DEMO_OFFSET), self.cfg.orca())
        demos.save(self.out / "demos_orca.jsonl")
        print(f"  kept {demos.n_episodes}/{self.cfg.demos} ORCA episodes")

    def train_dvl(self):
        demos = dvl.DemoMemory.load(self.out / "demos_orca.jsonl")
        params, curve = dvl.train_dvl(self.cfg.dvl(), self.scenario, demos, self.seed, self.cfg.orca())
        save_checkpoint(params, self.out / "dvl.json", "dvl")
        a2cmp.write_curve(_dvl_curve_rows(curve), self.out / "dvl_curve.csv", ["episode", "avg_reward"])

    def dvl_demos(self):
        params = load_checkpoint(self.out / "dvl.json", self.cfg.n_obstacles)
        policy = dvl.DvlPolicy(params, self.table, self.cfg.gamma, self.scenario.dt,
                               proximity_sign=self.scenario.reward_proximity_sign)
        demos = dvl.collect_demonstrations(policy, self.scenario, self.cfg.demos, self.table, self.cfg.gamma,
                                           demo_seed(self.seed, DVL_DEMO_OFFSET), self.cfg.orca())
        demos.save(self.out / "demos_dvl.jsonl")
        print(f"  kept {demos.n_episodes}/{self.cfg.demos} DVL episodes")

    def train_a2cmp(self):
        source = "demos_dvl.jsonl" if self.cfg.demonstrator == "dvl" else "demos_orca.jsonl"
        demos = dvl.DemoMemory.load(self.out / source)
        params, curve = a2cmp.train_a2cmp(self.cfg.a2cmp(), self.scenario, demos, self.seed, True,
                                          self.out / "checkpoints", self.cfg.orca())
        save_checkpoint(params, self.out / "a2cmp.json", "a2cmp")
        a2cmp.write_curve(curve, self.out / "a2cmp_curve.csv")

    def evaluate(self):
        seed = PIPELINE_EVAL_BASE + self.seed * 1000
        n, k = self.cfg.eval_episodes, self.cfg.export_traj
        reports = {}
        for name, policy, mode in (
            ("ORCA", self.cfg.orca(), None),
            ("DVL", load_checkpoint(self.out / "dvl.json", self.cfg.n_obstacles), "value"),
            ("A2CMP", load_checkpoint(self.out / "a2cmp.json", self.cfg.n_obstacles), "actor"),
        ):
            reports[name] = run_evaluation(policy, mode, self.cfg, n, seed, self.out, name.lower(), k)
        compare_algorithms(reports, self.out / "comparison.csv")
        for name, rep in reports.items():
            print(f"  {name:6s} success {rep.success_rate:.2f} collision {rep.collision_rate:.2f} "
                  f"goal-missing {rep.goal_missing_rate:.2f} time {rep.average_time_to_goal:.1f}")

    def run(self):
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "config.cfg").write_text(dump_config(self.cfg), encoding="utf-8")
        self._stage("orca_demos", self.orca_demos)
        # DVL is always trained: it is one of the evaluated baselines
        self._stage("dvl", self.train_dvl)
        if self.cfg.demonstrator == "dvl":
            self._stage("dvl_demos", self.dvl_demos)
        self._stage("a2cmp", self.train_a2cmp)
        self._stage("evaluate", self.evaluate)


def cmd_pipeline(args, cfg):
    Pipeline(cfg, args.seed, args.out_dir, args.resume).run()
    print(f"pipeline finished -> {args.out_dir}")


# --- argument handling ---------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="a2cmp-nav", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_dir=True):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--seed", type=int, default=0)
        if out_dir:
            p.add_argument("--out-dir", default="runs")

    p = sub.add_parser("collect-demos", help="record demonstration episodes")
    common(p, out_dir=False)
    p.add_argument("--policy", default="orca", help="'orca' or a DVL checkpoint path")
    p.add_argument("--episodes", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_collect_demos)

    p = sub.add_parser("train", help="train DVL or A2CMP")
    common(p)
    p.add_argument("--algo", choices=("dvl", "a2cmp"), required=True)
    p.add_argument("--demos")
    p.add_argument("--no-imitation", action="store_true")
    p.add_argument("--episodes", type=int, help="overrides the config's episode count")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="fixed-endpoint evaluation")
    common(p)
    p.add_argument("--policy", default="orca", help="'orca' or a checkpoint path")
    p.add_argument("--mode", choices=("actor", "value"), help="head used by a checkpoint policy")
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--export-traj", type=int, default=0, metavar="N")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pipeline", help="demos -> DVL -> demos -> A2CMP -> evaluation")
    common(p)
    p.add_argument("--resume", action="store_true", help="skip stages already completed in --out-dir")
    p.set_defaults(func=cmd_pipeline)
    return parser


def _overrides(args):
    out = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    if args.command == "train" and args.episodes is not None:
        key = "dvl_episodes" if args.algo == "dvl" else "episodes"
        out[key] = str(args.episodes)
    return out


def _resolve_config(args):
    text = "\n".join(f"{k} = {v}" for k, v in _overrides(args).items())
    overrides = parse_config_text(text, "--set")
    return load_config(args.config, overrides)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve_config(args)
        args.func(args, cfg)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        # malformed demo files and similar bad inputs
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
