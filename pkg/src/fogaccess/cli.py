"""Command-line entry point: ``fogaccess run | preset | trace``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from .amp import DivergenceError, write_trace
from .harness import (PRESETS, ConfigError, Deployment, config_to_ini, emit_results,
                      load_config, run_deployment, run_experiment, trial_seed)
from .scenario import build_scenario, save_scenario
from .detect import error_probability, nmse_db

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("fogaccess")


def _cmd_run(args) -> int:
    cfg = load_config(args.config, args.overrides)
    n_tasks = len(cfg.sweep_values) * cfg.trials

    def progress(i, n):
        if args.verbose and (i == n or i % max(1, n // 20) == 0):
            log.info("%d/%d trials", i, n)

    log.info("running %d trials on %d worker(s)", n_tasks, args.workers)
    result = run_experiment(cfg, workers=args.workers, progress=progress)
    paths = emit_results(result, args.output, args.name)
    for row in result.rows:
        print(f"{row.sweep_var}={row.value:<6} {row.deployment:<10} Pe={row.pe_mean:.5f} "
              f"NMSE={row.nmse_mean_db:.2f} dB iters={row.iters_mean:.1f}")
    print(f"wrote {paths['csv']}")
    return EXIT_OK


def _cmd_preset(args) -> int:
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    names = [args.name] if args.name else sorted(PRESETS)
    for name in names:
        path = out / f"{name}.ini"
        path.write_text(config_to_ini(PRESETS[name]()), encoding="utf-8")
        print(f"wrote {path}")
    return EXIT_OK


def _cmd_trace(args) -> int:
    cfg = load_config(args.config, args.overrides)
    dep = Deployment.parse(args.deployment)
    points = list(cfg.points())
    value, scn_cfg, _ = points[args.point]
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    with threadpool_limits(1):
        scn = build_scenario(scn_cfg, trial_seed(cfg.base_seed, args.trial))
        save_scenario(scn, out / "scenario.npz")
        trace = []
        if dep.kind == "cloud":
            res = run_deployment(dep, scn, cfg, with_trace=True)
            trace = res.extra["trace"]
        elif dep.kind == "fog":
            with open(out / "messages.csv", "w", newline="", encoding="utf-8") as fh:
                res = run_deployment(dep, scn, cfg, trace=trace, message_log=fh)
        else:
            res = run_deployment(dep, scn, cfg)
    if trace:
        write_trace(trace, out / "trace.csv")
    er = error_probability(res.alpha_hat, scn.population.activity)
    summary = {"deployment": dep.tag, cfg.sweep_var: value, "trial": args.trial, "scenario": scn.digest(),
               "Pe": er.pe, "miss": er.miss, "false_alarm": er.false_alarm,
               "NMSE_dB": nmse_db(res.X_hat, scn.X), "iters": res.iters}
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(summary))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fogaccess", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="run a Monte-Carlo experiment")
    r.add_argument("config")
    r.add_argument("overrides", nargs="*", help="section.key=value")
    r.add_argument("-o", "--output", default="results")
    r.add_argument("-w", "--workers", type=int, default=1)
    r.add_argument("--name", default="results", help="output file stem")
    r.set_defaults(func=_cmd_run)

    pr = sub.add_parser("preset", help="write preset configuration files")
    pr.add_argument("name", nargs="?", choices=sorted(PRESETS))
    pr.add_argument("-o", "--output", default=".")
    pr.set_defaults(func=_cmd_preset)

    t = sub.add_parser("trace", help="dump per-iteration diagnostics for one trial")
    t.add_argument("config")
    t.add_argument("overrides", nargs="*", help="section.key=value")
    t.add_argument("-o", "--output", default="trace")
    t.add_argument("-d", "--deployment", default="cloud", help="cloud, baseline or fog_nco<N>")
    t.add_argument("--trial", type=int, default=0)
    t.add_argument("--point", type=int, default=0, help="index into sweep_values")
    t.set_defaults(func=_cmd_trace)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"solver diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
