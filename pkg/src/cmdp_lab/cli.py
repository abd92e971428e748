"""Command-line front end: ``cmdp-lab {run,sweep,oracle,envs,diagnose}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import envs
from .errors import CmdpError
from .harness import (_jsonable, diagnostics_report, load_config, random_thetas,
                      run_experiment, sweep)
from .model import FeatureMap, SoftmaxPolicy, load_model, save_model

log = logging.getLogger("cmdp_lab")


def _emit(obj) -> None:
    json.dump(_jsonable(obj), sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def _config_from_args(args):
    config = load_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out_dir is not None:
        changes["out_dir"] = args.out_dir
    if getattr(args, "debug_exact", False):
        changes["debug_exact"] = True
    if getattr(args, "n_seeds", None) is not None:
        changes["n_seeds"] = args.n_seeds
    return config.replace(**changes) if changes else config


def cmd_run(args) -> int:
    config = _config_from_args(args)
    result = run_experiment(config)
    _emit(result.summary() if args.full else {k: v for k, v in result.summary().items()
                                              if k != "seeds"})
    return 0


def cmd_sweep(args) -> int:
    config = _config_from_args(args)
    table = sweep(config, args.T)
    fits = {}
    for name in ("regret", "violation_clipped"):
        try:
            fits[name] = table.fit(name).to_dict()
        except CmdpError as exc:
            fits[name] = {"error": str(exc)}
    _emit({"rows": table.rows, "fits": fits})
    return 0


def _load_theta(text, model):
    if text is None:
        return np.zeros(model.n_states * model.n_actions)
    path = Path(text)
    raw = path.read_text() if path.exists() else text
    try:
        theta = np.asarray(json.loads(raw), dtype=float)
    except (json.JSONDecodeError, ValueError, TypeError) as exc:
        raise CmdpError(f"theta must be a JSON vector or a file holding one: {exc}") from None
    return theta


def oracle_report(model, theta) -> dict:
    from .oracle import (critic_feature_matrix, hitting_constants, solve_cmdp_lp,
                         solve_poisson, stationary)

    policy = SoftmaxPolicy.for_model(model, theta)
    sol = stationary(model, policy)
    pr, pc = solve_poisson(model, policy, "r"), solve_poisson(model, policy, "c")
    consts = hitting_constants(model, policy)
    lam = critic_feature_matrix(model, policy, FeatureMap.one_hot(model.n_states)).lambda_subspace
    lp = solve_cmdp_lp(model)
    return {
        "stationary": sol.dist,
        "recurrent_class": sorted(sol.recurrent_support),
        "j_r": pr.gain,
        "j_c": pc.gain,
        "v_r": pr.v,
        "v_c": pc.v,
        "c_hit": consts.c_hit,
        "c_tar": consts.c_tar,
        "lambda_subspace": lam if np.isfinite(lam) else "inf",
        "lp": {"j_r_star": lp.j_r, "j_c_star": lp.j_c, "slater_delta": lp.slater_delta,
               "policy": lp.policy_probs()},
    }


def cmd_oracle(args) -> int:
    model = load_model(args.model)
    _emit(oracle_report(model, _load_theta(args.theta, model)))
    return 0


def _parse_params(items) -> dict:
    params = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise CmdpError(f"--param expects key=value, got {item!r}")
        try:
            params[key] = json.loads(value)
        except json.JSONDecodeError:
            params[key] = value
    return params


def cmd_envs(args) -> int:
    if args.envs_command == "list":
        rows = []
        for spec in envs.catalog():
            entry = spec.summary()
            if args.ground_truth:
                entry["ground_truth"] = spec.ground_truth()
            rows.append(entry)
        _emit(rows)
        return 0
    model = envs.build(args.name, **_parse_params(args.param))
    if args.output:
        save_model(model, args.output)
    else:
        _emit({**model.to_dict(), "name": model.name})
    return 0


def cmd_diagnose(args) -> int:
    config = _config_from_args(args)
    model = config.build_model()
    thetas = random_thetas(model, args.n_theta, config.seed, args.scale)
    reports = diagnostics_report(model, thetas, eps_reg=config.algo.get("eps_reg", 1e-3),
                                 seed=config.seed)
    _emit({"env": config.env, "reports": reports})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cmdp-lab",
                                     description="Primal-dual natural actor-critic on tabular unichain CMDPs.")
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="repeat for more logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, exact=True):
        p.add_argument("config", help="run configuration (.toml or .json)")
        p.add_argument("--seed", type=int, help="base seed (overrides the config)")
        p.add_argument("--out-dir", help="output directory (overrides the config)")
        p.add_argument("--n-seeds", type=int, help="number of seeds (overrides the config)")
        if exact:
            p.add_argument("--debug-exact", action="store_true",
                           help="replace every estimator by its exact oracle value")

    p = sub.add_parser("run", help="run one experiment over all seeds")
    common(p)
    p.add_argument("--full", action="store_true", help="include per-seed summaries")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run the experiment for several horizons and fit exponents")
    common(p)
    p.add_argument("--T", type=int, nargs="+", required=True, help="ascending powers of two")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("oracle", help="exact quantities for a model and policy")
    p.add_argument("model", help="model JSON file")
    p.add_argument("theta", nargs="?", help="JSON vector or file (default: uniform policy)")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("envs", help="list or export catalog environments")
    envs_sub = p.add_subparsers(dest="envs_command", required=True)
    q = envs_sub.add_parser("list")
    q.add_argument("--ground-truth", action="store_true", help="also solve each instance")
    q = envs_sub.add_parser("export")
    q.add_argument("name")
    q.add_argument("--param", action="append", help="builder parameter as key=value")
    q.add_argument("-o", "--output", help="write to this file instead of stdout")
    p.set_defaults(func=cmd_envs)

    p = sub.add_parser("diagnose", help="check the analysis conditions at random parameters")
    common(p, exact=False)
    p.add_argument("--n-theta", type=int, default=10)
    p.add_argument("--scale", type=float, default=1.0, help="std of the random logits")
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CmdpError, ValueError, KeyError, OSError) as exc:
        message = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"cmdp-lab: error: {message}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
