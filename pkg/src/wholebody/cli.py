"""Command-line interface: scenario runs, identification, standalone hierarchy solves.

Exit codes are a stable contract: 0 success, 1 run-level failure (fallen
robot, infeasible hierarchy), 2 input error (bad file, bad flags).  The
``WHOLEBODY_LOG`` environment variable sets log verbosity (debug/info/
warning/error); it has no other effect.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from wholebody import identification as ident
from wholebody import sim, textdoc
from wholebody.hqp import HierarchySolver, Level, QpInfeasibleError
from wholebody.model import ModelError, build_biped, build_leg, build_pendulum, \
    build_planar_triple, load_model
from wholebody.textdoc import DocError

log = logging.getLogger("wholebody")

EXIT_OK = 0
EXIT_RUN_FAILURE = 1
EXIT_INPUT_ERROR = 2

SCENARIOS = ("flat_push", "seesaw", "moving_support", "custom")

BUILTIN_MODELS = {
    "biped": build_biped,
    "leg": build_leg,
    "planar_triple": build_planar_triple,
    "pendulum": build_pendulum,
}


class CliError(ValueError):
    """Input problem diagnosed by the CLI itself (exit code 2)."""


# ---------------------------------------------------------------------------
# run


def _impulse_from_block(block):
    return sim.Impulse(
        start=float(block.scalar("start")),
        duration=float(block.scalar("duration")),
        force=np.array(block.floats("force", 3)),
        point=np.array(block.floats("point", 3, default=(0.0, 0.0, 0.15))),
    )


_SCENARIO_KEYS = frozenset((
    "scenario", "horizon", "dt", "seed", "knee_bend", "total_mass",
    "friction_mismatch", "seesaw_angle_deg", "translate_amplitude",
    "translate_speed", "balance_height_fraction",
))
_IMPULSE_KEYS = frozenset(("start", "duration", "force", "point"))


def _check_keys(block, allowed, child_kinds=()):
    for key, (_, line) in block.fields.items():
        if key not in allowed:
            raise DocError(f"unknown key '{key}' in {block.kind or 'scenario'} "
                           f"config", line)
    for child in block.blocks:
        if child.kind not in child_kinds:
            raise DocError(f"unknown block kind '{child.kind}'", child.line)


def _scenario_from_block(block, default_name):
    _check_keys(block, _SCENARIO_KEYS, child_kinds=("impulse",))
    for child in block.children("impulse"):
        _check_keys(child, _IMPULSE_KEYS)
    scenario = block.string("scenario", "flat_push")
    if scenario not in SCENARIOS:
        raise DocError(f"unknown scenario '{scenario}' (expected one of "
                       f"{', '.join(SCENARIOS)})", block.line or None)
    config = sim.ScenarioConfig(
        scenario=scenario,
        horizon=float(block.scalar("horizon", 8.0)),
        dt=float(block.scalar("dt", 1e-3)),
        seed=int(block.scalar("seed", 0)),
        total_mass=float(block.scalar("total_mass", 43.0)),
        friction_mismatch=float(block.scalar("friction_mismatch", 0.10)),
        seesaw_angle=np.deg2rad(float(block.scalar("seesaw_angle_deg", 6.0))),
        translate_amplitude=float(block.scalar("translate_amplitude", 0.2)),
        translate_speed=float(block.scalar("translate_speed", 0.5)),
        balance_height_fraction=float(block.scalar("balance_height_fraction", 0.8)),
        impulses=[_impulse_from_block(b) for b in block.children("impulse")],
    )
    if "knee_bend" in block.fields:
        config.knee_bend = float(block.scalar("knee_bend"))
    name = block.name or default_name
    return name, config


def parse_run_config(text, path="<config>"):
    """(name, ScenarioConfig) pairs from a scenario config document.

    A document either describes one scenario at top level or contains one or
    more ``run <name> { ... }`` blocks.
    """
    doc = textdoc.parse_document(text)
    runs = doc.children("run")
    if runs:
        _check_keys(doc, frozenset(), child_kinds=("run",))
        return [_scenario_from_block(b, f"run{i + 1}") for i, b in enumerate(runs)]
    default = Path(path).stem if path != "<config>" else "run"
    return [_scenario_from_block(doc, default)]


def _format_report(name, config, result, log_path):
    lines = [
        f"scenario {config.scenario}",
        f"name {name}",
        f"verdict {result.verdict}",
        f"violations {result.violations}",
        f"ticks {result.rows.shape[0]}",
        f"tick_ms_mean {result.tick_ms_mean:.4f}",
        f"tick_ms_p99 {result.tick_ms_p99:.4f}",
        f"qp_time_s {result.qp_time:.4f}",
        f"projection_time_s {result.projection_time:.4f}",
    ]
    total = result.qp_time + result.projection_time
    if total > 0:
        lines.append(f"qp_time_fraction {result.qp_time / total:.3f}")
    for p in range(4):
        lines.append(f"residual_l{p + 1}_max {result.level_residual_max[p]:.6e}")
        lines.append(f"residual_l{p + 1}_mean {result.level_residual_mean[p]:.6e}")
    lines.append(f"log {log_path}")
    return "\n".join(lines) + "\n"


def _execute_run(name, config, out_dir):
    result = sim.run_scenario(config)
    log_path = out_dir / f"{name}_log.csv"
    sim.save_log(log_path, result)
    report = _format_report(name, config, result, log_path)
    (out_dir / f"{name}_report.txt").write_text(report)
    return name, result.verdict, result.violations, report


def cmd_run(args):
    text = Path(args.config).read_text()
    runs = parse_run_config(text, path=args.config)
    if args.seed is not None:
        for _, config in runs:
            config.seed = args.seed
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    results = []
    if args.jobs > 1 and len(runs) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(_execute_run, name, config, out_dir)
                       for name, config in runs]
            results = [f.result() for f in futures]
    else:
        for name, config in runs:
            log.info("running scenario '%s'", name)
            results.append(_execute_run(name, config, out_dir))

    ok = True
    for name, verdict, violations, report in results:
        print(report, end="")
        print()
        if verdict != "balanced" or violations:
            ok = False
    return EXIT_OK if ok else EXIT_RUN_FAILURE


# ---------------------------------------------------------------------------
# identify


def _load_any_model(spec):
    if spec in BUILTIN_MODELS:
        return BUILTIN_MODELS[spec]()
    return load_model(Path(spec).read_text())


def cmd_identify(args):
    model = _load_any_model(args.model)
    if model.floating_base:
        raise CliError("identification requires a fixed-base model "
                       "(try the builtin 'leg' model)")

    if args.mode == "dataset":
        if not args.data:
            raise CliError("--mode dataset requires --data CSV")
        dataset = ident.load_dataset(args.data, model)
    else:
        log.info("optimizing excitation trajectory (seed %d)", args.seed)
        traj = ident.optimize_excitation(model, seed=args.seed,
                                         candidates=args.candidates,
                                         budget=args.budget)
        rng = np.random.default_rng(args.seed)
        dataset = ident.synthesize_dataset(model, traj, args.rate, args.duration,
                                           noise_sigma=args.noise, rng=rng)

    if args.no_friction:
        # drop the friction columns from the fit: the remaining inertial
        # model cannot explain friction torque and the residual shows the gap
        dataset.Y = dataset.Y.copy()
        dataset.Y[:, 10 * len(model.links):] = 0.0
    result = ident.estimate_parameters(dataset, mode="base")

    print(f"model {model.name}")
    print(f"mode {args.mode}")
    print(f"samples {dataset.t.size}")
    print(f"base_dimension {result.base.dimension}")
    cond = np.linalg.cond(result.base.reduce(dataset.Y))
    print(f"regressor_condition {cond:.3e}")
    if args.mode == "synth":
        theta_true = result.base.theta(ident.dynamics.pi_vector(model))
        scale = np.linalg.norm(theta_true)
        err = np.linalg.norm(result.params - theta_true) / scale if scale else np.inf
        print(f"base_param_rms_error {100.0 * err:.3f} %")
    for j, joint in enumerate(model.joints):
        print(f"residual {joint.name} rms {result.rms_residual[j]:.4f} "
              f"mean_abs {result.mean_abs_residual[j]:.4f}")
    print(f"mean_abs_residual_overall {np.mean(result.mean_abs_residual):.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# solve


def _matrix(block, key, n_x, rows_of=None):
    if key not in block.fields:
        return None
    vals = block.floats(key)
    if len(vals) % n_x != 0:
        raise DocError(f"'{key}' of level '{block.name}' has {len(vals)} numbers, "
                       f"not a multiple of n_x={n_x}", block.line or None)
    return np.array(vals).reshape(-1, n_x)


def parse_hierarchy_file(text):
    """(levels, n_x) from a document of ``level <name> {A/b/D/f}`` blocks.

    Matrices are flat row-major number lists; row counts follow from n_x.
    """
    doc = textdoc.parse_document(text)
    n_x = int(doc.scalar("n_x"))
    blocks = doc.children("level")
    if not blocks:
        raise DocError("hierarchy file lists no 'level' blocks")
    levels = []
    for block in blocks:
        A = _matrix(block, "A", n_x)
        D = _matrix(block, "D", n_x)
        b = np.array(block.floats("b")) if "b" in block.fields else None
        f = np.array(block.floats("f")) if "f" in block.fields else None
        if (A is None) != (b is None) or (D is None) != (f is None):
            raise DocError(f"level '{block.name}' must pair A with b and D with f",
                           block.line or None)
        if A is not None and b.shape[0] != A.shape[0]:
            raise DocError(f"level '{block.name}': b has {b.shape[0]} entries "
                           f"for {A.shape[0]} task rows", block.line or None)
        if D is not None and f.shape[0] != D.shape[0]:
            raise DocError(f"level '{block.name}': f has {f.shape[0]} entries "
                           f"for {D.shape[0]} constraint rows", block.line or None)
        levels.append(Level(A=A, b=b, D=D, f=f, name=block.name))
    return levels, n_x


def cmd_solve(args):
    levels, n_x = parse_hierarchy_file(Path(args.file).read_text())
    solver = HierarchySolver()
    try:
        solution = solver.solve(levels, n_x)
    except QpInfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_RUN_FAILURE

    np.set_printoptions(precision=6, suppress=True)
    print(f"x {' '.join(f'{v:.6g}' for v in solution.x)}")
    for diag in solution.per_level:
        print(f"level {diag.name} residual_sq {diag.residual_sq:.6e} "
              f"nullspace_dim {diag.nullspace_dim} "
              f"active {' '.join(map(str, diag.active_constraints)) or '-'}")
    if solution.degraded_level is not None:
        print(f"degraded_at_level {solution.degraded_level + 1}")

    if args.bench:
        solver.reset()
        t0 = time.perf_counter()
        for _ in range(args.bench):
            solver.solve(levels, n_x)
        elapsed = time.perf_counter() - t0
        print(f"bench_runs {args.bench}")
        print(f"bench_mean_ms {1e3 * elapsed / args.bench:.4f}")
    return EXIT_RUN_FAILURE if solution.degraded_level is not None else EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser():
    parser = argparse.ArgumentParser(
        prog="wholebody",
        description="Whole-body balance control toolkit: scenario runs, "
                    "parameter identification, hierarchy solves.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a balance scenario from a config file")
    p_run.add_argument("config", help="scenario config (structured text)")
    p_run.add_argument("--out", default=".", help="output directory for logs/reports")
    p_run.add_argument("--seed", type=int, default=None, help="override config seed")
    p_run.add_argument("--jobs", type=int, default=1,
                       help="parallel workers for multi-run configs")
    p_run.set_defaults(func=cmd_run)

    p_id = sub.add_parser("identify", help="run the parameter identification pipeline")
    p_id.add_argument("model", help="model file or builtin name "
                                    f"({', '.join(sorted(BUILTIN_MODELS))})")
    p_id.add_argument("--mode", choices=("synth", "dataset"), default="synth")
    p_id.add_argument("--data", help="CSV dataset (dataset mode)")
    p_id.add_argument("--noise", type=float, default=0.05,
                      help="torque noise sigma in synth mode, N*m")
    p_id.add_argument("--no-friction", action="store_true",
                      help="fit without friction columns to show the residual gap")
    p_id.add_argument("--seed", type=int, default=0)
    p_id.add_argument("--duration", type=float, default=60.0, help="synth data length, s")
    p_id.add_argument("--rate", type=float, default=200.0, help="synth sample rate, Hz")
    p_id.add_argument("--candidates", type=int, default=40,
                      help="random excitation candidates before refinement")
    p_id.add_argument("--budget", type=int, default=100,
                      help="cost evaluations per refinement restart")
    p_id.set_defaults(func=cmd_identify)

    p_solve = sub.add_parser("solve", help="solve a standalone hierarchy file")
    p_solve.add_argument("file", help="hierarchy file (structured text)")
    p_solve.add_argument("--bench", type=int, default=0,
                         help="re-solve N times and report the mean time")
    p_solve.set_defaults(func=cmd_solve)
    return parser


def main(argv=None):
    level = os.environ.get("WHOLEBODY_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DocError, ModelError, ident.IdentError, CliError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    except sim.SimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUN_FAILURE


if __name__ == "__main__":
    sys.exit(main())
