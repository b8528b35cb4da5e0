"""Command-line interface.

Subcommands: ``synth`` (draw a dataset), ``fit`` (EM on a CSV dataset),
``rate`` (convergence-rate sweep), ``nll-compare`` (per-gate NLL
trajectories) and ``check`` (structural probes).  Global flags ``--seed``,
``--threads`` and ``--out-dir`` may appear before or after the subcommand;
``--config FILE`` supplies any of the same fields from JSON, with explicit
flags taking precedence.

Exit codes: 0 on success, 2 on a contract violation, 3 on an I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import harness, metrics, theory
from .em import FitConfig, fit, init_near_truth
from .errors import (ContractViolation, InconclusiveError, ParameterRangeError,
                     TransformDomainError)
from .gates import GateTransform, independence_check
from .model import load_dataset, measure_to_dict, save_dataset
from .synth import preset, sample, save_scenario


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    sub.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    sub.add_argument("--out-dir", type=Path, default=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="moe-lab",
        description="Softmax-gated multinomial logistic mixture-of-experts laboratory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--out-dir", type=Path, default=None)
    parser.add_argument("--config", type=Path, default=None,
                        help="JSON file with defaults for any flag (by field name)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="draw a synthetic dataset")
    p.add_argument("--scenario", required=True, choices=("regime1", "regime2"))
    p.add_argument("--gate", default="identity")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_common(p)

    p = sub.add_parser("fit", help="fit a mixture by EM")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--gate", default="identity")
    p.add_argument("--init-scenario", required=True, choices=("regime1", "regime2"))
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--max-iter", type=int, default=2000)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--out", type=Path, required=True)
    _add_common(p)

    p = sub.add_parser("rate", help="convergence-rate sweep")
    p.add_argument("--scenario", required=True, choices=("regime1", "regime2"))
    p.add_argument("--gate", default="identity")
    p.add_argument("--k", default="3", help="comma-separated component counts")
    p.add_argument("--n-grid", default="", help="comma-separated sample sizes "
                   "(default: 8 log-spaced points in [1e3, 3e4])")
    p.add_argument("--replications", type=int, default=10)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--max-iter", type=int, default=2000)
    p.add_argument("--tol", type=float, default=1e-6)
    _add_common(p)

    p = sub.add_parser("nll-compare", help="EM NLL trajectories per gate")
    p.add_argument("--scenario", default="regime2", choices=("regime1", "regime2"))
    p.add_argument("--gates", default="identity,sin,cos,logabs",
                   help="comma-separated gate tags")
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--sigma", type=float, default=0.1)
    _add_common(p)

    p = sub.add_parser("check", help="structural probes")
    p.add_argument("--what", required=True,
                   choices=("pde", "regime", "adversarial", "independence"))
    p.add_argument("--scenario", default="regime2", choices=("regime1", "regime2"))
    p.add_argument("--gate", default="identity")
    p.add_argument("--r", type=float, default=2.0)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--x-samples", type=int, default=100)
    p.add_argument("--out", type=Path, default=None)
    _add_common(p)

    return parser


def _cmd_synth(args) -> int:
    scenario = preset(args.scenario, GateTransform.parse(args.gate))
    data = sample(scenario, args.n, args.seed)
    save_dataset(data, args.out)
    save_scenario(scenario, Path(args.out).with_suffix(".scenario.json"))
    print(f"wrote {data.n} rows to {args.out}")
    return 0


def _cmd_fit(args) -> int:
    gate = GateTransform.parse(args.gate)
    data = load_dataset(args.data)
    scenario = preset(args.init_scenario, gate)
    init = init_near_truth(scenario, args.k, seed=args.seed, sigma=args.sigma)
    cfg = FitConfig(k=args.k, max_iter=args.max_iter, tol=args.tol)
    report = fit(data, cfg, gate, init)
    payload = {
        "measure": measure_to_dict(report.measure),
        "nll_trajectory": [float(v) for v in report.nll_trajectory],
        "iterations": report.iterations,
        "converged": report.converged,
        "config": {"k": args.k, "gate": gate.name, "init_scenario": args.init_scenario,
                   "sigma": args.sigma, "seed": args.seed,
                   "max_iter": args.max_iter, "tol": args.tol},
    }
    Path(args.out).write_text(json.dumps(payload, indent=2) + "\n")
    print(f"converged={report.converged} after {report.iterations} iterations; "
          f"final NLL {report.nll_trajectory[-1]:.6f}")
    return 0


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part.strip())


def _cmd_rate(args) -> int:
    n_grid = _parse_int_list(args.n_grid) or harness.desk_grid()
    cfg = harness.ExperimentConfig(
        scenario=args.scenario, gate=GateTransform.parse(args.gate),
        k_list=_parse_int_list(args.k), n_grid=n_grid,
        replications=args.replications, master_seed=args.seed,
        sigma=args.sigma, max_iter=args.max_iter, tol=args.tol,
        out_dir=args.out_dir or Path("."), threads=args.threads)
    reports = harness.run_rate_experiment(cfg)
    for k, report in sorted(reports.items()):
        print(f"k={k}: slope={report.slope:.4f} intercept={report.intercept:.4f} "
              f"r2={report.r_squared:.4f}")
    return 0


def _cmd_nll_compare(args) -> int:
    cfg = harness.ExperimentConfig(
        scenario=args.scenario, gate=GateTransform.parse("identity"),
        k_list=(args.k,), n_grid=(args.n,), replications=1,
        master_seed=args.seed, sigma=args.sigma,
        out_dir=args.out_dir or Path("."), threads=args.threads)
    gates = [GateTransform.parse(name) for name in args.gates.split(",") if name.strip()]
    trajectories = harness.run_nll_comparison(cfg, gates, iters=args.iters,
                                              n_samples=args.n)
    for name, traj in trajectories.items():
        drop = float(traj[0] - traj[-1])
        print(f"{name}: NLL {traj[0]:.4f} -> {traj[-1]:.4f} (drop {drop:.4f})")
    return 0


def _cmd_check(args) -> int:
    gate = GateTransform.parse(args.gate)
    scenario = preset(args.scenario, gate)
    if args.what == "regime":
        payload = {"scenario": args.scenario,
                   "regime": theory.classify_regime(scenario.truth)}
    elif args.what == "pde":
        rng = np.random.Generator(np.random.Philox(args.seed))
        xs = rng.uniform(scenario.covariate_box[:, 0], scenario.covariate_box[:, 1],
                         size=(args.x_samples, scenario.d))
        payload = {"scenario": args.scenario, "components": [
            theory.pde_interaction_check(c, xs).to_dict()
            for c in scenario.truth.components]}
    elif args.what == "adversarial":
        base = theory.reindex_collapsed_first(scenario.truth)
        params = theory.adversarial_params(base, args.n)
        witness = theory.build_adversarial(base, params)
        closed = theory.dr_closed_form(base, params, args.r)
        direct = metrics.voronoi_loss(witness, base, args.r)
        payload = {"scenario": args.scenario, "params": params.to_dict(),
                   "r": args.r, "closed_form": closed, "voronoi_loss": direct,
                   "difference": abs(closed - direct)}
    else:
        report = independence_check(gate, args.d, seed=args.seed)
        payload = {"gate": gate.name, "d": args.d, **report.to_dict()}
    text = json.dumps(payload, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "fit": _cmd_fit,
    "rate": _cmd_rate,
    "nll-compare": _cmd_nll_compare,
    "check": _cmd_check,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    pre, _ = parser.parse_known_args(argv)
    if getattr(pre, "config", None):
        try:
            overrides = json.loads(Path(pre.config).read_text())
        except OSError as exc:
            print(f"error: cannot read config: {exc}", file=sys.stderr)
            return 3
        parser.set_defaults(**{k.replace("-", "_"): v for k, v in overrides.items()})
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ContractViolation, TransformDomainError, ParameterRangeError,
            InconclusiveError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
