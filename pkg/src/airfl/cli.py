"""Command-line entry point.

Every subcommand accepts ``--config`` (JSON), ``--seed`` and ``--out``; the
output directory falls back to ``$AIRFL_OUT_DIR`` and then to the config's
``out`` field. Files are written via temp-file-and-rename, so a failed run
leaves nothing partial behind. Exit status is 0 on success, 1 when a check
fails and 2 on invalid input or numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .bounds import BOUNDS, BoundInputs
from .config import ExperimentConfig
from .errors import AirFLError
from .experiment import (
    atomic_write,
    build_problem,
    channel_setup,
    estimate_constants,
    power_for_snr,
    resolve_out_dir,
    run_experiment,
    sweep_snr,
)
from .thresholds import OptInputs, certify_convexity


def _load_config(args) -> ExperimentConfig:
    if getattr(args, "desk", False) and args.config:
        raise AirFLError("--desk and --config are mutually exclusive")
    if args.config:
        cfg = ExperimentConfig.load(args.config)
    elif getattr(args, "desk", False):
        cfg = ExperimentConfig.desk()
    else:
        cfg = ExperimentConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seeds"] = [args.seed]
    for name in ("T", "eta", "threshold_mode", "workers"):
        v = getattr(args, name, None)
        if v is not None:
            overrides[name] = v
    return ExperimentConfig.from_dict({**cfg.to_dict(), **overrides}) if overrides else cfg


def _write_json(path, payload) -> None:
    atomic_write(path, json.dumps(payload, indent=2) + "\n")


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    out = resolve_out_dir(cfg, args.out)
    result = run_experiment(cfg, out)
    if not args.no_plot:
        from .plotting import plot_loss_vs_rounds

        plot_loss_vs_rounds(result, out / "loss_vs_rounds.png")
    for scheme, s in result.summary["schemes"].items():
        print(f"{scheme:10s} mean final loss {s['final_loss_mean']:.6f}")
    print(f"wrote {out}")
    return 0


def cmd_sweep_snr(args) -> int:
    cfg = _load_config(args)
    out = resolve_out_dir(cfg, args.out)
    if args.powers:
        points = args.powers
    else:
        points = [power_for_snr(v, cfg) for v in args.snr_db]
    sweep = sweep_snr(cfg, points, out)
    if not args.no_plot:
        from .plotting import plot_loss_vs_snr

        plot_loss_vs_snr(sweep, out / "loss_vs_snr.png")
    for P in sweep.points:
        row = " ".join(f"{sc}={sweep.mean_final(sc, P):.5f}" for sc in cfg.schemes)
        print(f"P={P:.3e} W  {row}")
    print(f"wrote {out}")
    return 0


def cmd_optimize_thresholds(args) -> int:
    cfg = _load_config(args).replace(threshold_mode="optimized")
    out = resolve_out_dir(cfg, args.out)
    seed = cfg.seeds[0]
    setup = channel_setup(cfg, seed)
    payload = {"seed": seed, **setup.to_dict()}
    if args.certify:
        inputs = OptInputs(eta=cfg.eta, L=cfg.L, B=cfg.B, Q=cfg.Q, K=cfg.K, sigma2=setup.sigma2,
                           P=setup.P, kappa=setup.kappa, lambda_min=cfg.lambda_min)
        payload["convexity"] = certify_convexity(inputs, args.grid).to_dict()
    _write_json(out / "thresholds.json", payload)
    print(json.dumps(payload["threshold_solution"], indent=2))
    return 0


def cmd_eval_bound(args) -> int:
    cfg = _load_config(args)
    out = resolve_out_dir(cfg, args.out)
    seed = cfg.seeds[0]
    setup = channel_setup(cfg, seed)
    lam = np.minimum(setup.lambdas, 1.0)
    inp = BoundInputs(B=cfg.B, L=cfg.L, eta=cfg.eta, Q=cfg.Q, T=cfg.T, K=cfg.K, lam=lam, P=setup.P,
                      kappa=setup.kappa, eps=setup.eps, sigma_l2=args.sigma_l2, sigma_g2=args.sigma_g2,
                      sigma2=setup.sigma2, f0_minus_fstar=args.f0, d=cfg.model_dim)
    payload = {"seed": seed, "lambdas": lam.tolist(), "bounds": {}}
    for name, fn in BOUNDS.items():
        payload["bounds"][name] = fn(inp).to_dict()
    _write_json(out / "bounds.json", payload)
    print(json.dumps(payload["bounds"], indent=2))
    return 0


def cmd_estimate_constants(args) -> int:
    cfg = _load_config(args)
    out = resolve_out_dir(cfg, args.out)
    seed = cfg.seeds[0]
    obj, shards, theta0 = build_problem(cfg, seed)
    est = estimate_constants(obj, shards, args.probes, seed, radius=args.radius, center=theta0,
                             batch_size=cfg.batch_size)
    _write_json(out / "constants.json", est.to_dict())
    print(json.dumps(est.to_dict(), indent=2))
    return 0


def cmd_lemma_check(args) -> int:
    from .lemmas import run_suite

    cfg = _load_config(args)
    out = resolve_out_dir(cfg, args.out)
    results = run_suite(cfg)
    for r in results:
        print(r.line())
    _write_json(out / "lemmas.json", [r.to_dict() for r in results])
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="airfl", description="Over-the-air federated learning with error feedback.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, desk=True):
        sp.add_argument("--config", help="JSON experiment config")
        sp.add_argument("--seed", type=int, help="run a single seed instead of the config's list")
        sp.add_argument("--out", help="output directory (default: $AIRFL_OUT_DIR or config 'out')")
        if desk:
            sp.add_argument("--desk", action="store_true", help="start from the small synthetic preset")
        sp.add_argument("--T", type=int, help="override the number of rounds")
        sp.add_argument("--eta", type=float, help="override the learning rate")
        sp.add_argument("--threshold-mode", dest="threshold_mode", choices=["optimized", "fixed"])

    sp = sub.add_parser("simulate", help="loss-vs-rounds traces for every scheme and seed")
    common(sp)
    sp.add_argument("--workers", type=int)
    sp.add_argument("--no-plot", action="store_true")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("sweep-snr", help="final loss against transmit SNR")
    common(sp)
    grp = sp.add_mutually_exclusive_group()
    grp.add_argument("--snr-db", type=float, nargs="+", default=[-20.0, -12.5, -5.0, 2.5, 10.0])
    grp.add_argument("--powers", type=float, nargs="+", help="power budgets in watts")
    sp.add_argument("--no-plot", action="store_true")
    sp.set_defaults(func=cmd_sweep_snr)

    sp = sub.add_parser("optimize-thresholds", help="solve for the truncation thresholds")
    common(sp)
    sp.add_argument("--certify", action="store_true", help="also run the convexity check")
    sp.add_argument("--grid", type=int, default=1000)
    sp.set_defaults(func=cmd_optimize_thresholds)

    sp = sub.add_parser("eval-bound", help="evaluate the three convergence bounds")
    common(sp)
    sp.add_argument("--sigma-l2", type=float, default=0.0)
    sp.add_argument("--sigma-g2", type=float, default=0.0)
    sp.add_argument("--f0", type=float, default=1.0, help="f(theta_0) - f*")
    sp.set_defaults(func=cmd_eval_bound)

    sp = sub.add_parser("estimate-constants", help="probe-based estimates of B and L")
    common(sp)
    sp.add_argument("--probes", type=int, default=200)
    sp.add_argument("--radius", type=float, default=1.0)
    sp.set_defaults(func=cmd_estimate_constants)

    sp = sub.add_parser("lemma-check", help="Monte-Carlo checks of the supporting lemmas")
    common(sp)
    sp.set_defaults(func=cmd_lemma_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (AirFLError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
