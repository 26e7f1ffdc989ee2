"""Scenario execution shared by the CLI and the service routers."""
from __future__ import annotations

import json
import logging
from pathlib import Path

from pydantic import ValidationError

from . import analytics
from .cluster import Cluster, RunResult, build_image, setup_from_scenario
from .errors import ConfigError
from .faults import CampaignReport, event_from_spec, inject
from .schemas import ScenarioConfig
from .splitlock import CalibrationTable, SplitLockController, extract_section_traces, reference_deltas

log = logging.getLogger(__name__)


def load_scenario(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        return ScenarioConfig.model_validate_json(text)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(p) for p in first["loc"]) or "<root>"
        raise ConfigError(f"{path}: {where}: {first['msg']}") from exc


def require_workload(cfg: ScenarioConfig) -> ScenarioConfig:
    """``run`` and ``inject`` simulate firmware, so the scenario must name a workload."""
    if "workload" not in cfg.model_fields_set:
        raise ConfigError("workload: field required")
    return cfg


def with_seed(cfg: ScenarioConfig, seed: int | None) -> ScenarioConfig:
    if seed is None:
        return cfg
    return cfg.model_copy(update={"seed": seed, "campaign": cfg.campaign.model_copy(update={"seed": seed})})


def calibration_table(cfg: ScenarioConfig) -> CalibrationTable:
    cal = cfg.calibration
    return CalibrationTable.from_overrides(cal.phases, cal.tcls_unload, cal.tcls_reload)


def simulate(cfg: ScenarioConfig, calibrated: bool | None = None, table: CalibrationTable | None = None) -> RunResult:
    """Build, inject the configured faults, run, and attach section traces."""
    if calibrated is None:
        calibrated = cfg.calibration.mode == "calibrated"
    cluster = Cluster(setup_from_scenario(cfg), build_image(cfg))
    for spec in cfg.faults:
        inject(cluster, event_from_spec(spec))
    result = cluster.run()
    traces = extract_section_traces(result.events, cfg.cluster.n_cores)
    if calibrated:
        controller = SplitLockController(cfg.cluster.n_cores, table or calibration_table(cfg))
        traces = controller.calibrate(traces)
        for i, trace in enumerate(result.recovery_traces):
            if trace.kind == "tcls_sw":
                calibrated_trace = controller.tcls_recovery(trace.start_cycle)
                calibrated_trace.group = trace.group
                result.recovery_traces[i] = calibrated_trace
    result.section_traces = traces
    log.info("run finished: %d cycles, correct=%s", result.cycles, result.result_correct)
    return result


def check_expectations(cfg: ScenarioConfig, result: RunResult) -> list[str]:
    """Failed assertions of the scenario's ``expect`` block."""
    exp = cfg.expect
    failures = []
    if result.hang:
        failures.append(f"run did not finish within {result.cycles} cycles")
    if result.fatal is not None:
        failures.append(f"core {result.fatal[0]} reported a fatal trap (cause {result.fatal[1]})")
    if exp.result_correct is not None and result.result_correct != exp.result_correct:
        failures.append(f"result_correct is {result.result_correct}, expected {exp.result_correct}")
    if exp.max_cycles is not None and result.cycles > exp.max_cycles:
        failures.append(f"{result.cycles} cycles exceed {exp.max_cycles}")
    if exp.recoveries is not None and len(result.recoveries) != exp.recoveries:
        failures.append(f"{len(result.recoveries)} recoveries, expected {exp.recoveries}")
    return failures


def check_campaign(cfg: ScenarioConfig, report: CampaignReport) -> list[str]:
    exp = cfg.expect
    failures = []
    for outcome in ("sdc", "hang"):
        wanted = getattr(exp, outcome)
        got = report.outcomes.get(outcome, 0)
        if wanted is not None and got != wanted:
            failures.append(f"{got} {outcome} outcomes, expected {wanted}")
    return failures


def run_report(cfg: ScenarioConfig, result: RunResult, calibrated: bool, table: CalibrationTable | None = None) -> dict:
    report = {
        "config_digest": cfg.digest(),
        "seed": cfg.seed,
        "mode": cfg.cluster.boot_mode.value,
        "calibrated": calibrated,
        "throughput_ops_per_cycle": round(result.ops / result.cycles, 6) if result.cycles else 0.0,
        **result.as_dict(),
    }
    if calibrated:
        report["calibration_reference"] = reference_deltas(table or calibration_table(cfg))
    return report


def recovery_constants(cfg: ScenarioConfig) -> analytics.RecoveryConstants:
    a = cfg.analytics
    return analytics.RecoveryConstants(a.rapid_cycles, a.tcls_sw_cycles)


def model_report(cfg: ScenarioConfig, validate: bool = False) -> dict:
    a = cfg.analytics
    marks = analytics.landmarks(a.workload, recovery_constants(cfg), a.clock_hz, a.self_consistent)
    report = {"config_digest": cfg.digest(), "seed": cfg.seed, **marks.as_dict()}
    if validate:
        base = analytics.WORKLOADS[a.workload]
        wc = analytics.WorkloadConstants(base.ops, base.cycles, a.clock_hz)
        report["monte_carlo"] = {
            m.value: {
                f"{rate:g}": round(analytics.monte_carlo_validate(m, rate, wc, recovery_constants(cfg),
                                                                  a.validate_runs, cfg.seed), 6)
                for rate in a.validate_rates
            }
            for m in analytics.RecoveryMode
        }
    return report


def model_curves(cfg: ScenarioConfig) -> list[list[float]]:
    a = cfg.analytics
    base = analytics.WORKLOADS[a.workload]
    wc = analytics.WorkloadConstants(base.ops, base.cycles, a.clock_hz)
    rates = analytics.rate_grid(a.rate_max, a.grid_points)
    return analytics.emit_curves(wc, recovery_constants(cfg), rates, a.self_consistent)


def dump_json(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def report_dir(out: str | Path, cfg: ScenarioConfig) -> Path:
    """Reports of one scenario live under a directory named by its digest."""
    path = Path(out) / cfg.digest()[:16]
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create {path}: {exc}") from exc
    return path
