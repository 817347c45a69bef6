"""Command-line entry point ``hjhomog``.

Exit codes: 0 success, 1 check failures, 2 configuration error, 3 numerical
failure. Every subcommand accepts ``--config FILE`` and repeated
``--set section.key=value`` overrides; the output directory is the config
value unless the ``HJHOMOG_OUTPUT_DIR`` environment variable is set.
"""

import argparse
import json
import os
import sys

import numpy as np

from ._validation import ConfigurationError, HomogenizationError, WindowError
from .config import ExperimentConfig
from .corrector import free_energy_curve
from .environment import PotentialField, audit_assumptions, find_features, lowest_valley
from .experiments import (
    EFFECTIVE_COLUMNS,
    describe,
    dumps,
    effective_table,
    output_dir,
    run_crosscheck,
    run_figure1,
    run_property_suite,
    write_csv,
    write_jsonl,
)
from .montecarlo import (
    Policy,
    confinement_rate,
    estimate_functional,
    local_time_rate,
    martingale_audit,
    required_window,
)
from .pde import homogenization_sweep, solve_viscous

EXIT_OK, EXIT_CHECKS, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

# flag -> config key
_FLAG_KEYS = {"beta": "model.beta", "c": "model.c", "theta_min": "theta.min",
              "theta_max": "theta.max", "theta_count": "theta.count",
              "tol_root": "tolerances.tol_root", "tol_u": "tolerances.tol_u",
              "tol_lambda": "tolerances.tol_lambda", "seed": "run.seed",
              "t": "montecarlo.t", "dt": "montecarlo.dt", "n_paths": "montecarlo.n_paths",
              "batches": "montecarlo.batches", "epsilons": "pde.epsilons"}


def _emit(record):
    print(dumps(record))


def _load_config(args):
    overrides = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigurationError(f"--set expects section.key=value, got {item!r}")
        overrides[key.strip().lower()] = value.strip()
    for flag, key in _FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = str(value)
    if args.config:
        return ExperimentConfig.from_file(args.config, overrides)
    return ExperimentConfig.from_ini("", overrides)


def _field(args, config):
    if getattr(args, "env", None):
        return PotentialField.load(args.env)
    return config.build_field()


def _out(args, config):
    return output_dir(config, getattr(args, "out", None))


# ---------------------------------------------------------------------- handlers
def cmd_env_gen(args, config):
    field = config.build_field()
    path = args.output or os.path.join(_out(args, config), "environment.json")
    field.save(path)
    _emit({"record": "env", "path": path, "kind": field.kind, "seed": field.seed,
           "window": list(field.window), "grid_step": field.grid_step,
           "sup_level": field.sup_level})
    return EXIT_OK


def cmd_env_audit(args, config):
    field = _field(args, config)
    report = audit_assumptions(field)
    _emit(report)
    return EXIT_OK


def cmd_env_features(args, config):
    field = _field(args, config)
    feats = find_features(field, args.h, args.min_length)
    records = [{"kind": f.feature_kind, "a": f.a, "b": f.b, "level": f.level,
                "length": f.length} for f in feats]
    write_jsonl(os.path.join(_out(args, config), "features.jsonl"), records)
    for r in records:
        _emit(r)
    return EXIT_OK


def cmd_free_energy(args, config):
    field = _field(args, config)
    results, flat = free_energy_curve(field, config.beta, config.theta_grid,
                                      n_jobs=config.n_jobs, **config.solver_kwargs())
    out = _out(args, config)
    rows = [{"theta": r.theta, "lambda_o": r.lambda_o, "Lambda": r.Lambda, "flat": r.flat,
             "residual": r.residual} for r in results]
    write_csv(os.path.join(out, "free_energy.csv"),
              ["theta", "lambda_o", "Lambda", "flat", "residual"], rows)
    write_jsonl(os.path.join(out, "free_energy.jsonl"), [r.to_dict() for r in results])
    _emit({"record": "free_energy", "beta": config.beta, "n": len(rows),
           "flat_interval": None if flat is None else list(flat),
           "tolerances": config.solver_kwargs()})
    return EXIT_OK


def cmd_effective(args, config):
    field = _field(args, config)
    H, rows, report = effective_table(field, config)
    out = _out(args, config)
    write_csv(os.path.join(out, "effective.csv"), EFFECTIVE_COLUMNS, rows)
    summary = dict(H.summary(), structure=report)
    write_jsonl(os.path.join(out, "effective.jsonl"), [summary])
    _emit(H.summary())
    return EXIT_OK


def _policy(name, c, field, t, speed):
    if name == "Zero":
        return Policy.zero()
    if name == "ConstLeft":
        return Policy.const_left(c)
    if name == "ConstRight":
        return Policy.const_right(c)
    # the valley must sit far enough inside the window for paths started there
    reach = required_window(t, speed)
    lo, hi = field.window
    feat = lowest_valley(field, 2.0, within=(lo - reach[0], hi - reach[1]))
    if feat is None:
        raise ConfigurationError("no valley of length 2 in the window for ValleyTrap")
    return Policy.valley_trap(feat.center, c)


def cmd_mc_estimate(args, config):
    field = _field(args, config)
    pol = _policy(args.policy, config.c, field, config.mc_t,
                  config.c + abs(config.mc_tilt or 0.0))
    x0 = pol.x_star if pol.variant == "ValleyTrap" else 0.0
    est = estimate_functional(field, pol, config.beta, args.theta, config.mc_t, config.mc_dt,
                              config.mc_n_paths, config.derived_seed("mc"),
                              tilt=config.mc_tilt, batches=config.mc_batches,
                              resample=config.resample, x0=x0, n_jobs=config.n_jobs)
    rec = dict(est.to_dict(), record="mc_estimate", config_fingerprint=config.fingerprint())
    write_jsonl(os.path.join(_out(args, config), "mc_estimate.jsonl"), [rec])
    _emit(rec)
    return EXIT_OK


def cmd_mc_audit(args, config):
    from .corrector import corrector_at_root, tilted_free_energy

    field = _field(args, config)
    kw = config.solver_kwargs()
    theta = args.theta
    span = float(config.mc_t)
    lo, hi = field.window
    window = (lo + config.max_buffer, hi - config.max_buffer)
    res = tilted_free_energy(field, config.beta, theta, **kw)
    prof = corrector_at_root(field, res, window, max_buffer=config.max_buffer)
    ctrl = None
    if config.c > 0 and theta - config.c != 0:
        res_c = tilted_free_energy(field, config.beta, theta - config.c, **kw)
        if not res_c.flat:
            ctrl = corrector_at_root(field, res_c, window, max_buffer=config.max_buffer)
    t_list = [float(t) for t in args.times] if args.times else [span]
    report = martingale_audit(field, config.beta, theta, prof, t_list, config.mc_n_paths,
                              config.derived_seed("mc", 1), dt=config.mc_dt,
                              c=config.c if ctrl is not None else None,
                              controlled_corrector=ctrl, batches=config.mc_batches)
    records = [dict(r, record="audit", policy="Zero", kind="martingale")
               for r in report["uncontrolled"]]
    for name, rows in report["controlled"].items():
        records += [dict(r, record="audit", policy=name) for r in rows]
    write_jsonl(os.path.join(_out(args, config), "mc_audit.jsonl"), records)
    for r in records:
        _emit(r)
    return EXIT_OK if all(r["passed"] for r in records) else EXIT_CHECKS


def cmd_mc_calibrate(args, config):
    seed = config.derived_seed("mc", 2)
    conf = confinement_rate(1.0, 20.0, config.mc_n_paths, seed, dt=config.mc_dt,
                            batches=config.mc_batches)
    target = conf["exact_limit"]
    conf.update(record="confinement", target=target,
                passed=abs(conf["value"] - target) <= 0.10 * abs(target))
    loc = local_time_rate(8.0, 1.0, args.local_time_t, config.mc_n_paths, config.mc_dt,
                          config.derived_seed("mc", 3), batches=config.mc_batches)
    loc.update(record="local_time", target=0.5,
               passed=abs(loc["value"] - 0.5) <= 0.15 * 0.5)
    records = [conf, loc]
    write_jsonl(os.path.join(_out(args, config), "mc_calibrate.jsonl"), records)
    for r in records:
        _emit({k: v for k, v in r.items() if k != "batch_values"})
    return EXIT_OK if all(r["passed"] for r in records) else EXIT_CHECKS


def cmd_pde_solve(args, config):
    field = _field(args, config)
    eps = args.epsilon if args.epsilon is not None else min(config.pde_epsilons)
    res = solve_viscous(field, config.beta, config.c, eps, args.theta, R=config.pde_R,
                        T=config.pde_T, dx=eps / config.pde_dx_factor, dt=config.pde_dt)
    out = _out(args, config)
    res.write_snapshot(os.path.join(out, "pde_snapshot.txt"))
    rec = dict(res.to_dict(), record="pde_solve")
    write_jsonl(os.path.join(out, "pde_solve.jsonl"), [rec])
    _emit(rec)
    return EXIT_OK


def cmd_pde_sweep(args, config):
    field = _field(args, config)
    eps_list = sorted(config.pde_epsilons, reverse=True)
    sweep = homogenization_sweep(field, config.beta, config.c, config.pde_thetas, eps_list,
                                 R=config.pde_R, T=config.pde_T, n_jobs=config.n_jobs,
                                 dx_factor=config.pde_dx_factor, dt=config.pde_dt)
    out = _out(args, config)
    write_csv(os.path.join(out, "pde_sweep.csv"),
              ["theta", "epsilon", "probe", "H_bar", "abs_error", "fitted_order"],
              sweep["rows"])
    for s in sweep["summary"]:
        s["passed"] = s["monotone_decrease"] and s["final_relative_gap"] <= config.pde_gap
    write_jsonl(os.path.join(out, "pde_sweep.jsonl"), sweep["summary"])
    for s in sweep["summary"]:
        _emit(s)
    return EXIT_OK if all(s["passed"] for s in sweep["summary"]) else EXIT_CHECKS


def cmd_figure1(args, config):
    records = run_figure1(config, field=_field(args, config), out_dir=getattr(args, "out", None))
    for r in records:
        _emit(r)
    return EXIT_OK


def cmd_properties(args, config):
    checks = run_property_suite(config, field=_field(args, config),
                                out_dir=getattr(args, "out", None))
    for c in checks:
        _emit(c)
    return EXIT_OK if all(c["passed"] for c in checks) else EXIT_CHECKS


def cmd_crosscheck(args, config):
    rows = run_crosscheck(config, field=_field(args, config), out_dir=getattr(args, "out", None))
    for r in rows:
        _emit(r)
    return EXIT_OK if all(r["passed"] is not False for r in rows) else EXIT_CHECKS


def cmd_describe(args, config):
    manifest = describe(config)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, sort_keys=True, indent=2)
            fh.write("\n")
    print(json.dumps(manifest, sort_keys=True, indent=2))
    return EXIT_OK


# ---------------------------------------------------------------------- parser
def _common(p, env=True):
    p.add_argument("--config", help="INI configuration file")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override one config value (repeatable)")
    p.add_argument("--out", help="output directory (overrides config and environment)")
    p.add_argument("--seed", type=int, help="top-level seed")
    if env:
        p.add_argument("--env", help="saved environment file instead of generating one")


def _model(p):
    p.add_argument("--beta", type=float)
    p.add_argument("--c", type=float)
    p.add_argument("--theta-min", dest="theta_min", type=float)
    p.add_argument("--theta-max", dest="theta_max", type=float)
    p.add_argument("--theta-count", dest="theta_count", type=int)
    p.add_argument("--tol-root", dest="tol_root", type=float)
    p.add_argument("--tol-u", dest="tol_u", type=float)
    p.add_argument("--tol-lambda", dest="tol_lambda", type=float)


def _mc(p):
    p.add_argument("--t", type=float, help="horizon")
    p.add_argument("--dt", type=float)
    p.add_argument("--n-paths", dest="n_paths", type=int)
    p.add_argument("--batches", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="hjhomog", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    env = sub.add_parser("env", help="environment generation and audits")
    env_sub = env.add_subparsers(dest="env_command", required=True)
    p = env_sub.add_parser("gen", help="generate and save an environment")
    _common(p, env=False)
    p.add_argument("--output", help="environment file path")
    p.set_defaults(handler=cmd_env_gen)
    p = env_sub.add_parser("audit", help="range, normalization and valley/hill audit")
    _common(p)
    p.set_defaults(handler=cmd_env_audit)
    p = env_sub.add_parser("features", help="valleys and hills at a level")
    _common(p)
    p.add_argument("--h", type=float, default=0.5)
    p.add_argument("--min-length", dest="min_length", type=float, default=1.0)
    p.set_defaults(handler=cmd_env_features)

    p = sub.add_parser("free-energy", help="tilted free energy on the theta grid")
    _common(p)
    _model(p)
    p.set_defaults(handler=cmd_free_energy)

    p = sub.add_parser("effective", help="effective Hamiltonian and bounds on the theta grid")
    _common(p)
    _model(p)
    p.set_defaults(handler=cmd_effective)

    mc = sub.add_parser("mc", help="Monte Carlo estimators")
    mc_sub = mc.add_subparsers(dest="mc_command", required=True)
    p = mc_sub.add_parser("estimate", help="exponential functional under one policy")
    _common(p)
    _model(p)
    _mc(p)
    p.add_argument("--policy", default="ConstLeft",
                   choices=["Zero", "ConstLeft", "ConstRight", "ValleyTrap"])
    p.add_argument("--theta", type=float, required=True)
    p.set_defaults(handler=cmd_mc_estimate)
    p = mc_sub.add_parser("audit-martingale", help="corrector martingale audit")
    _common(p)
    _model(p)
    _mc(p)
    p.add_argument("--theta", type=float, required=True)
    p.add_argument("--times", type=float, nargs="+")
    p.set_defaults(handler=cmd_mc_audit)
    p = mc_sub.add_parser("calibrate", help="confinement and local-time rate calibration")
    _common(p, env=False)
    _mc(p)
    p.add_argument("--local-time-t", dest="local_time_t", type=float, default=64.0)
    p.set_defaults(handler=cmd_mc_calibrate)

    pde = sub.add_parser("pde", help="finite-difference solves")
    pde_sub = pde.add_subparsers(dest="pde_command", required=True)
    p = pde_sub.add_parser("solve", help="one viscous solve with linear data")
    _common(p)
    _model(p)
    p.add_argument("--theta", type=float, required=True)
    p.add_argument("--epsilon", type=float)
    p.set_defaults(handler=cmd_pde_solve)
    p = pde_sub.add_parser("sweep", help="homogenization sweep over theta and epsilon")
    _common(p)
    _model(p)
    p.set_defaults(handler=cmd_pde_sweep)

    for name, handler, text in (("figure1", cmd_figure1, "weak and strong effective curves"),
                                ("properties", cmd_properties, "run the property suite"),
                                ("crosscheck", cmd_crosscheck, "corrector vs MC vs PDE")):
        p = sub.add_parser(name, help=text)
        _common(p)
        _model(p)
        if name == "crosscheck":
            _mc(p)
        p.set_defaults(handler=handler)

    p = sub.add_parser("describe", help="print the provenance manifest")
    _common(p, env=False)
    p.add_argument("--output", help="also write the manifest to this file")
    p.set_defaults(handler=cmd_describe)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(args)
        np.seterr(all="ignore")
        return args.handler(args, config)
    except (ConfigurationError, WindowError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HomogenizationError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
