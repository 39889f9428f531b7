"""Command-line front end.

    cji run <config.json>        run the configured sweep, write reports
    cji degrade <config.json>    write degraded observations y = H x0 + noise
    cji coeff-dump <config.json> write the per-timestep coefficient table CSV
    cji selftest                 quick numerical self-checks

Exit codes: 0 on success, 1 on configuration errors, 2 if any sweep run
diverged.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import harness
from .errors import ConfigError
from .tensorio import write_tensor


def _add_common(p):
    p.add_argument("config", help="path to the JSON run config")
    p.add_argument("--output-dir", default=None, help="overrides config output_dir")
    p.add_argument("--seeds", default=None,
                   help="comma-separated seed list, overrides config seeds")
    p.add_argument("--threads", type=int, default=1, help="worker pool size")
    p.add_argument("--override", action="append", default=[],
                   metavar="KEY.PATH=VALUE", help="config override (repeatable)")


def _load(args) -> dict:
    config = harness.load_config(args.config)
    harness.apply_overrides(config, args.override)
    if args.seeds is not None:
        config["seeds"] = [int(s) for s in args.seeds.split(",") if s]
    if args.output_dir is not None:
        config["output_dir"] = args.output_dir
    return config


def cmd_run(args) -> int:
    config = _load(args)
    report = harness.run(config, threads=max(1, args.threads))
    ok = [r for r in report.records if not r.diverged]
    print(f"completed {len(report.records)} runs "
          f"({report.diverged_count} diverged)")
    if ok:
        best = min(ok, key=lambda r: r.mse)
        print(f"best mse {best.mse:.6g} at method={best.method} w={best.w:g} "
              f"lambda={best.lam:g} tau={best.tau:g} nfe={best.nfe} seed={best.seed}")
    return 2 if report.diverged_count else 0


def cmd_degrade(args) -> int:
    config = _load(args)
    problem = config.get("problem")
    if problem is None:
        raise ConfigError("config needs a problem block")
    op = harness.build_operator(problem["operator"])
    sigma_y = float(problem.get("sigma_y", 0.0))
    out_dir = config.get("output_dir", ".")
    os.makedirs(out_dir, exist_ok=True)
    for seed in config.get("seeds", [0]):
        x0 = harness._draw_x0(problem, seed)
        y = harness.degrade(x0, op, sigma_y, seed)
        write_tensor(os.path.join(out_dir, f"x0_{seed}.cji"), x0)
        write_tensor(os.path.join(out_dir, f"y_{seed}.cji"), y)
        print(f"seed {seed}: wrote x0_{seed}.cji ({x0.size}) and y_{seed}.cji ({y.size})")
    return 0


def cmd_coeff_dump(args) -> int:
    config = _load(args)
    text = harness.coeff_dump(config)
    out_dir = config.get("output_dir")
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, "coefficients.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"wrote {path}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_selftest(args) -> int:
    from .conjugate import a_apply, a_inv_apply, kappa2
    from .operators import BlockAverage, Mask
    from .schedules import DiffusionSchedule, GuidanceConfig

    rng = np.random.default_rng(0)
    failures = 0

    def check(name, ok):
        nonlocal failures
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
        failures += 0 if ok else 1

    sched = DiffusionSchedule()
    t = rng.uniform(0.01, 1.0, size=64)
    check("variance preservation mu^2 + sigma^2 = 1",
          bool(np.max(np.abs(sched.mu(t) ** 2 + sched.sigma_sq(t) - 1)) < 1e-12))

    op = Mask([0, 3, 5], 8)
    x = rng.standard_normal(8)
    px = op.proj_apply(x)
    check("projector idempotence", bool(np.max(np.abs(op.proj_apply(px) - px)) < 1e-12))

    ba = BlockAverage(2, 4, 4)
    g = ba.apply(ba.adjoint(np.eye(4)))
    check("block-average Gram = (1/k^2) I",
          bool(np.max(np.abs(g - 0.25 * np.eye(4))) < 1e-12))

    cfg = GuidanceConfig(w=3.0, lam=-0.3)
    z = a_inv_apply(0.7, a_apply(0.7, x, op, cfg, sched), op, cfg, sched)
    check("transform round trip", bool(np.max(np.abs(z - x)) < 1e-12))
    check("kappa2 sign (diffusion)", kappa2(0.9, cfg, sched) < 0)
    return 1 if failures else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="cji", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run a configured sweep")
    _add_common(p_run)
    p_run.set_defaults(fn=cmd_run)
    p_deg = sub.add_parser("degrade", help="write degraded observations")
    _add_common(p_deg)
    p_deg.set_defaults(fn=cmd_degrade)
    p_cd = sub.add_parser("coeff-dump", help="write the coefficient table")
    _add_common(p_cd)
    p_cd.set_defaults(fn=cmd_coeff_dump)
    p_st = sub.add_parser("selftest", help="quick numerical self-checks")
    p_st.set_defaults(fn=cmd_selftest)
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
