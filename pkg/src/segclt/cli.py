"""Command line: ``segclt {run, clt-check, divergence-demo, presets}``.

Exit codes: 0 pass, 2 statistical check failed, 1 execution error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .experiment import (PRESET_DEFAULTS, ExperimentConfig, clt_check, divergence_demo,
                         run_experiment)
from .models import build_preset

log = logging.getLogger("segclt")


def _emit_list(text: str) -> list:
    return [s.strip() for s in text.split(",") if s.strip()]


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="TOML config file; flags override its values")
    p.add_argument("--preset", help="built-in preset name (see `presets`)")
    p.add_argument("--seed", type=int, help="base seed (unsigned 64-bit)")
    p.add_argument("--replications", type=int, help="number of replications")
    p.add_argument("--steps", type=int, help="iterations per replication")
    p.add_argument("--out", help="output directory")
    p.add_argument("--emit", type=_emit_list, help="comma list from csv,json,svg")


def _experiment_args(p: argparse.ArgumentParser):
    _common(p)
    p.add_argument("--algorithm", choices=["sgda", "seg", "tseg"])
    p.add_argument("--eta0", type=float)
    p.add_argument("--exponent-a", type=float, dest="exponent_a")
    p.add_argument("--trace-every", type=int, dest="trace_every")
    p.add_argument("--workers", type=int, default=1,
                   help="worker processes; outputs do not depend on it")
    p.add_argument("--save-config", type=Path, help="write the resolved config as TOML")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="segclt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _experiment_args(sub.add_parser("run", help="run one experiment and write its files"))
    _experiment_args(sub.add_parser("clt-check", help="KS and covariance check of the CLT"))
    d = sub.add_parser("divergence-demo", help="SGDA vs SEG on the spiral game")
    _common(d)
    d.add_argument("--eta", type=float, default=0.1, help="constant SGDA step size")
    d.add_argument("--one-step-replications", type=int, default=100_000)
    sub.add_parser("presets", help="list the built-in presets")
    return parser


def resolve_config(args) -> ExperimentConfig:
    overrides = dict(
        base_seed=args.seed, n_replications=args.replications, n_steps=args.steps,
        output_dir=args.out, emit=args.emit, algorithm=getattr(args, "algorithm", None),
        eta0=getattr(args, "eta0", None), exponent_a=getattr(args, "exponent_a", None),
        trace_every=getattr(args, "trace_every", None),
    )
    if args.config is not None:
        return ExperimentConfig.from_file(args.config, preset=args.preset, **overrides)
    return ExperimentConfig.for_preset(args.preset or "martingale-ev", **overrides)


def _cmd_run(args) -> int:
    config = resolve_config(args)
    if args.save_config:
        args.save_config.write_text(config.to_toml())
    result = run_experiment(config, workers=args.workers)
    print(json.dumps({"verdict": result.report["verdict"],
                      "mean_averaged_z": result.report["mean_averaged_z"],
                      "artifacts": [str(p) for p in result.artifacts]}, indent=2))
    return 0


def _cmd_clt(args) -> int:
    config = resolve_config(args)
    if args.save_config:
        args.save_config.write_text(config.to_toml())
    record = clt_check(config, workers=args.workers)
    record["artifacts"] = [str(p) for p in record["artifacts"]]
    print(json.dumps(record, indent=2, sort_keys=True))
    return 0 if record["passed"] else 2


def _cmd_divergence(args) -> int:
    if args.config is not None or (args.preset not in (None, "remark3")):
        raise ValueError("divergence-demo always uses the remark3 problem")
    defaults = PRESET_DEFAULTS["remark3"]
    res = divergence_demo(
        eta=args.eta,
        n_steps=args.steps or defaults["n_steps"],
        n_replications=args.replications or defaults["n_replications"],
        seed=args.seed if args.seed is not None else ExperimentConfig.base_seed,
        one_step_replications=args.one_step_replications,
        output_dir=args.out or "out",
    )
    print(json.dumps({
        "one_step_mean": res.one_step_mean, "one_step_se": res.one_step_se,
        "one_step_prediction": res.one_step_prediction, "checks": res.checks,
    }, indent=2, sort_keys=True))
    return 0 if all(v for k, v in res.checks.items() if k.endswith("_pass")) else 2


def _cmd_presets(args) -> int:
    for name, d in PRESET_DEFAULTS.items():
        p = build_preset(name)
        print(f"{name:20s} {d['algorithm']:5s} eta0={d['eta0']:<5g} a={d['exponent_a']:<5g} "
              f"n={d['n_steps']:<6d} {p.description}")
    return 0


COMMANDS = {"run": _cmd_run, "clt-check": _cmd_clt, "divergence-demo": _cmd_divergence,
            "presets": _cmd_presets}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - any failure is an execution error
        log.error("%s: %s", type(exc).__name__, exc)
        if args.verbose:
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
