"""Command line entry point: run, inject, model, serve.

Exit codes: 0 when every configured assertion passes, 1 when one fails or
the run hangs, 2 on configuration or simulator errors.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import analytics, runner
from .errors import HmrSimError
from .faults import run_campaign
from .logs import configure_logging
from .schemas import ScenarioConfig
from .settings import settings

log = logging.getLogger(__name__)


def _scenario(args) -> ScenarioConfig:
    cfg = runner.load_scenario(args.config) if args.config else ScenarioConfig()
    cfg = runner.with_seed(cfg, args.seed)
    if getattr(args, "workload", None):
        cfg = cfg.model_copy(update={"analytics": cfg.analytics.model_copy(update={"workload": args.workload})})
    return cfg


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as exc:
        raise HmrSimError(f"cannot write {path}: {exc}") from exc
    log.info("wrote %s", path)


def _report_failures(failures: list[str]) -> int:
    for f in failures:
        print(f"assertion failed: {f}", file=sys.stderr)
    return 1 if failures else 0


def cmd_run(args) -> int:
    cfg = runner.require_workload(_scenario(args))
    calibrated = args.calibrated if args.calibrated is not None else cfg.calibration.mode == "calibrated"
    result = runner.simulate(cfg, calibrated)
    report = runner.run_report(cfg, result, calibrated)
    out = runner.report_dir(args.out, cfg)
    _write(out / f"run-{'calibrated' if calibrated else 'functional'}.json", runner.dump_json(report))
    print(f"{result.cycles} cycles, result_correct={result.result_correct}, recoveries={len(result.recoveries)}")
    return _report_failures(runner.check_expectations(cfg, result))


def cmd_inject(args) -> int:
    cfg = runner.require_workload(_scenario(args))
    report = run_campaign(cfg, args.workers)
    out = runner.report_dir(args.out, cfg)
    payload = {"config_digest": cfg.digest(), "seed": cfg.campaign.seed, **report.as_dict()}
    _write(out / f"campaign-{report.mode}.json", runner.dump_json(payload))
    if args.csv:
        _write(out / f"campaign-{report.mode}.csv", report.to_csv())
    print(" ".join(f"{k}={v}" for k, v in report.outcomes.items()))
    return _report_failures(runner.check_campaign(cfg, report))


def cmd_model(args) -> int:
    cfg = _scenario(args)
    report = runner.model_report(cfg, args.validate)
    out = runner.report_dir(args.out, cfg)
    name = cfg.analytics.workload
    analytics.write_csv(out / f"curves-{name}.csv", analytics.CURVE_COLUMNS, runner.model_curves(cfg))
    a = cfg.analytics
    analytics.write_csv(
        out / "overhead.csv",
        ["mode", "error_rate", "exec_time", "overhead_s"],
        analytics.overhead_grid(a.error_rates, a.exec_times, runner.recovery_constants(cfg), a.clock_hz),
    )
    _write(out / f"model-{name}.json", runner.dump_json(report))

    for mode, mops in report["nominal_mops"].items():
        print(f"nominal {mode}: {mops:.1f} MOPS")
    for mode, rate in report["half_perf_rates"].items():
        print(f"half performance {mode}: {rate:.3g} faults/s")
    print(f"crossover tcls_rapid/dcls_rapid: {report['crossover_rate']}")
    for mode, errs in report.get("monte_carlo", {}).items():
        print(f"monte carlo {mode}: " + ", ".join(f"{r}={e:.2%}" for r, e in errs.items()))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run("hmrsim.main:app", host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hmrsim", description="HMR cluster simulator")
    parser.add_argument("--log-level", default=settings.LOG_LEVEL)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="scenario JSON file")
        p.add_argument("--out", type=Path, default=Path(settings.OUTPUT_DIR))
        p.add_argument("--seed", type=int)

    p = sub.add_parser("run", help="simulate one scenario")
    common(p)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--calibrated", dest="calibrated", action="store_true", default=None)
    group.add_argument("--functional", dest="calibrated", action="store_false")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("inject", help="single-fault injection campaign")
    common(p)
    p.add_argument("--csv", action="store_true", help="also write per-run CSV")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("model", help="analytical performance model")
    common(p)
    p.add_argument("--workload", choices=sorted(analytics.WORKLOADS))
    p.add_argument("--validate", action="store_true", help="Monte Carlo check of the closed forms")
    p.set_defaults(func=cmd_model)

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.func(args)
    except HmrSimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
