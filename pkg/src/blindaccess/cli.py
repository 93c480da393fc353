"""Command-line entry point.

Subcommands:
  run       execute a sweep experiment from a YAML spec and emit .dat tables
  dual-poly solve one instance and dump the angular spectrum as a table
  validate  run fast built-in consistency checks
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np
import yaml

from .experiment import ExperimentSpec, emit_dat, run_experiment
from .identify import compute_metrics
from .scenario import (
    ScenarioConfig,
    build_scenario,
    synthesize_received,
    time_domain_oracle,
)
from .sdp import build_problem, check_feasibility, solve_admm
from .spectrum import eval_dual_polynomial


def _cmd_run(args: argparse.Namespace) -> int:
    spec = ExperimentSpec.from_yaml(args.spec)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.trials is not None:
        overrides["trials"] = args.trials
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.out is not None:
        overrides["output"] = args.out
    if overrides:
        spec = dataclasses.replace(spec, **overrides)
    table = run_experiment(spec)
    out = spec.output or f"{spec.name}.dat"
    path = emit_dat(table, out)
    for row in table.rows:
        flags = ""
        if row.n_unconverged:
            flags += f"  [{row.n_unconverged} unconverged]"
        if row.n_diverged:
            flags += f"  [{row.n_diverged} diverged]"
        print(
            f"{spec.sweep_variable}={row.value:g}: "
            + " ".join(f"{k}={v:.4f}" for k, v in row.columns.items() if v == v)
            + flags
        )
    print(f"wrote {path}")
    return 0


def _cmd_dual_poly(args: argparse.Namespace) -> int:
    with open(args.scenario) as fh:
        config = ScenarioConfig.from_dict(yaml.safe_load(fh))
    scenario = build_scenario(config, args.seed)
    signal = synthesize_received(scenario, args.seed)
    problem = build_problem(signal, config.n_antennas, zeta=scenario.zeta)
    sol = solve_admm(problem)
    spectrum = eval_dual_polynomial(
        sol, signal.omega, config.n_antennas, args.grid, problem.c1
    )
    out = Path(args.out or "dual_poly.dat")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(spectrum.to_text())
    active = sorted(
        theta for u in scenario.active_users() for theta in u.channel.angles
    )
    print(f"wrote {out} ({args.grid} points, solver iters={sol.iterations})")
    print("active path angles:", " ".join(f"{a:.4f}" for a in active))
    return 0


def _cmd_validate(args: argparse.Namespace) -> int:
    """Fast self-checks across the chain; exits nonzero on any failure."""
    failures = 0

    def check(name: str, ok: bool, detail: str = "") -> None:
        nonlocal failures
        status = "PASS" if ok else "FAIL"
        print(f"[{status}] {name}" + (f"  ({detail})" if detail else ""))
        failures += 0 if ok else 1

    rng = np.random.default_rng(args.seed)

    from .arrays import ArrayConfig, steering_vector

    arr = ArrayConfig(n_antennas=16)
    norms = [
        abs(np.linalg.norm(steering_vector(arr, t)) - 1.0)
        for t in rng.uniform(0.01, np.pi - 0.01, 200)
    ]
    check("steering vectors unit norm", max(norms) < 1e-12, f"max dev {max(norms):.2e}")

    config = ScenarioConfig(
        n_antennas=16,
        t_len=4,
        k_stationary=4,
        k_mobile=4,
        k_active_stationary=1,
        k_active_mobile=1,
        tau_max=1.0,
        guaranteed_recovery=True,
    )
    worst = 0.0
    for s in range(5):
        sc = build_scenario(config, args.seed + s)
        a = synthesize_received(sc, args.seed + s)
        b = time_domain_oracle(sc, args.seed + s)
        worst = max(worst, float(np.max(np.abs(a.y - b.y))))
    check("frequency/time synthesis agreement", worst < 1e-10, f"max dev {worst:.2e}")

    sc = build_scenario(config, args.seed)
    sig = synthesize_received(sc, args.seed)
    problem = build_problem(sig, config.n_antennas, zeta=sc.zeta)
    sol = solve_admm(problem)
    rep = check_feasibility(sol, problem)
    check(
        "dual solution feasible",
        sol.converged and rep.feasible,
        f"grid max {rep.grid_max:.6f}, min eig {rep.min_block_eigenvalue:.2e}",
    )

    m = compute_metrics({1, 2, 4}, {1, 2, 3}, set(range(100)))
    check(
        "metric definitions",
        m.p_d == 2.0 / 3.0 and m.p_fa == 1.0 / 97.0,
        f"p_d={m.p_d:.4f} p_fa={m.p_fa:.6f}",
    )

    print(f"{failures} failure(s)")
    return 1 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blindaccess",
        description="Blind goal-oriented activity detection simulations",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a sweep experiment from a YAML spec")
    p_run.add_argument("spec", help="experiment spec file (YAML)")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--trials", type=int, default=None)
    p_run.add_argument("--threads", type=int, default=None)
    p_run.add_argument("--out", default=None)
    p_run.set_defaults(func=_cmd_run)

    p_dp = sub.add_parser("dual-poly", help="emit the angular spectrum of one trial")
    p_dp.add_argument("scenario", help="scenario config file (YAML)")
    p_dp.add_argument("--seed", type=int, default=0)
    p_dp.add_argument("--grid", type=int, default=8192)
    p_dp.add_argument("--out", default=None)
    p_dp.set_defaults(func=_cmd_dual_poly)

    p_val = sub.add_parser("validate", help="run fast built-in consistency checks")
    p_val.add_argument("--seed", type=int, default=0)
    p_val.set_defaults(func=_cmd_validate)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
