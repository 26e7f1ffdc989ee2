import hashlib
import json
from datetime import datetime
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .hmr import CoreMode, mode_available


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


# --- Scenario config
class OptionsConfig(_Strict):
    sync_clear_on_recovery: bool = True
    tmr_delayed_resync: bool = False
    rapid_recovery_enabled: bool = False


class ClusterConfig(_Strict):
    n_cores: int = Field(12, ge=1, le=32)
    tcdm_size: int = Field(256 * 1024, ge=16 * 1024)
    banking_factor: int = Field(2, ge=1)
    boot_mode: CoreMode = CoreMode.INDEPENDENT
    debug_latency: int = Field(4, ge=1)
    options: OptionsConfig = Field(default_factory=OptionsConfig)


class WorkloadConfig(_Strict):
    name: Literal["matmul"] = "matmul"
    dim: int = Field(24, ge=1, le=64)
    helper_iterations: int = Field(200, ge=1)


SectionOp = Literal["run_independent", "run_kernel", "enter_mc", "exit_mc", "enter_perf", "exit_perf"]


class ScriptStep(_Strict):
    op: SectionOp
    mode: Optional[Literal["dmr", "tmr"]] = None
    variant: Literal["sw", "rapid"] = "sw"


class FaultSpec(_Strict):
    cycle: int = Field(ge=0)
    core: int = Field(ge=0)
    kind: Literal["seu", "set"] = "seu"
    location: Literal["rf", "pc", "csr", "interface", "backup"] = "rf"
    bit: int = Field(0, ge=0)
    reg: Optional[int] = None
    csr: Optional[str] = None
    field: Optional[str] = None
    slot: Optional[str] = None


class CalibrationConfig(_Strict):
    mode: Literal["calibrated", "functional"] = "functional"
    phases: dict[str, dict[str, int]] = Field(default_factory=dict)
    tcls_unload: int = 247
    tcls_reload: int = 116
    rapid_setup_clear: int = 4
    rapid_halt_ack: int = 4
    rapid_restore: int = 16


CampaignMode = Literal["independent", "dmr", "dmr_rapid", "tmr", "tmr_rapid"]


class CampaignConfig(_Strict):
    runs: int = Field(100, ge=1)
    seed: int = 0
    mode: CampaignMode = "tmr"
    target: Literal["rf", "state", "interface", "all"] = "rf"
    workers: Optional[int] = Field(None, ge=1)


class AnalyticsConfig(_Strict):
    workload: Literal["matmul", "cfft"] = "matmul"
    clock_hz: float = 430e6
    rapid_cycles: int = 24
    tcls_sw_cycles: int = 363
    rate_max: float = Field(1e9, gt=0)
    grid_points: int = Field(61, ge=2)
    self_consistent: bool = False
    validate_runs: int = Field(1000, ge=100)
    validate_rates: list[float] = Field(default_factory=lambda: [1e5, 1e7])
    exec_times: list[float] = Field(default_factory=lambda: [1e-3, 1e-1, 1.0, 10.0])
    error_rates: list[float] = Field(default_factory=lambda: [1e-3, 1e-1, 1e1, 1e3, 1e5])


class ExpectConfig(_Strict):
    result_correct: Optional[bool] = None
    max_cycles: Optional[int] = None
    recoveries: Optional[int] = None
    sdc: Optional[int] = None
    hang: Optional[int] = None


class ScenarioConfig(_Strict):
    cluster: ClusterConfig = Field(default_factory=ClusterConfig)
    workload: WorkloadConfig = Field(default_factory=WorkloadConfig)
    script: list[ScriptStep] = Field(default_factory=list)
    faults: list[FaultSpec] = Field(default_factory=list)
    calibration: CalibrationConfig = Field(default_factory=CalibrationConfig)
    campaign: CampaignConfig = Field(default_factory=CampaignConfig)
    analytics: AnalyticsConfig = Field(default_factory=AnalyticsConfig)
    expect: ExpectConfig = Field(default_factory=ExpectConfig)
    seed: int = 0

    @model_validator(mode="after")
    def _check(self):
        n = self.cluster.n_cores
        if not mode_available(self.cluster.boot_mode, n):
            raise ValueError(f"boot mode {self.cluster.boot_mode.value} unavailable for {n} cores")
        if self.script and self.cluster.boot_mode != CoreMode.INDEPENDENT:
            raise ValueError("section scripts start from independent mode")
        for step in self.script:
            if step.op in ("enter_mc", "exit_perf") and step.mode is None:
                raise ValueError(f"{step.op} needs a mode")
            if step.mode and not mode_available(CoreMode(step.mode), n):
                raise ValueError(f"{step.mode} unavailable for {n} cores")
        for f in self.faults:
            if f.core >= n:
                raise ValueError(f"fault targets core {f.core} of {n}")
        return self

    def digest(self) -> str:
        payload = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()


# --- API
class RunCreate(BaseModel):
    scenario: ScenarioConfig = Field(default_factory=ScenarioConfig)
    calibrated: bool = False


class RunOut(BaseModel):
    id: int
    config_digest: str
    seed: int
    mode: str
    cycles: int
    retired: int
    result_digest: str
    result_correct: bool
    recoveries: int
    created_at: datetime

    model_config = ConfigDict(from_attributes=True)


class RunDetailOut(RunOut):
    report: dict


class CampaignCreate(BaseModel):
    scenario: ScenarioConfig = Field(default_factory=ScenarioConfig)


class FaultRecordOut(BaseModel):
    run_index: int
    seed: int
    event: dict
    outcome: str
    cycles: int
    recovery_cycles: int

    model_config = ConfigDict(from_attributes=True)


class CampaignOut(BaseModel):
    id: int
    mode: str
    runs: int
    seed: int
    masked: int
    detected_recovered: int
    sdc: int
    hang: int
    report_hash: str
    created_at: datetime

    model_config = ConfigDict(from_attributes=True)


class CampaignDetailOut(CampaignOut):
    records: list[FaultRecordOut] = []


class CalibrationEntryOut(BaseModel):
    id: int
    section: str
    mode: str
    variant: str
    role: str
    phase: str
    position: int
    cycles: int

    model_config = ConfigDict(from_attributes=True)


class CalibrationEntryUpdate(BaseModel):
    cycles: int = Field(ge=0)
