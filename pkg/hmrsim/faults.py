"""Fault events (SEU / SET), outcome classification and injection campaigns."""
from __future__ import annotations

import csv
import enum
import hashlib
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .cluster import Cluster, RunResult, build_image, setup_from_scenario
from .core import BUNDLE_FIELDS, CSR_FIELDS, CSR_WIDTH, ArchState, OutputBundle
from .errors import ConfigError, ContractViolation, FaultLocationError
from .hmr import CoreMode
from .recovery import RecoveryRegion
from .schemas import FaultSpec, ScenarioConfig
from .settings import settings

log = logging.getLogger(__name__)

BUNDLE_WIDTH = dict(BUNDLE_FIELDS)


class FaultKind(str, enum.Enum):
    SEU = "seu"
    SET = "set"


class Outcome(str, enum.Enum):
    MASKED = "masked"
    DETECTED_RECOVERED = "detected_recovered"
    SDC = "sdc"
    HANG = "hang"


# ---- locations ----
@dataclass(frozen=True)
class RfBit:
    reg: int
    bit: int

    def __post_init__(self):
        if self.reg == 0:
            raise ContractViolation("x0 holds no state")
        if not 1 <= self.reg <= 31 or not 0 <= self.bit <= 31:
            raise FaultLocationError(f"rf x{self.reg} bit {self.bit} out of range")


@dataclass(frozen=True)
class PcBit:
    bit: int

    def __post_init__(self):
        if not 0 <= self.bit <= 31:
            raise FaultLocationError(f"pc bit {self.bit} out of range")


@dataclass(frozen=True)
class CsrBit:
    csr: str
    bit: int

    def __post_init__(self):
        if self.csr not in CSR_WIDTH or not 0 <= self.bit < CSR_WIDTH[self.csr]:
            raise FaultLocationError(f"csr {self.csr} bit {self.bit} out of range")


@dataclass(frozen=True)
class InterfaceBit:
    field: str
    bit: int

    def __post_init__(self):
        if self.field not in BUNDLE_WIDTH or not 0 <= self.bit < BUNDLE_WIDTH[self.field]:
            raise FaultLocationError(f"interface {self.field} bit {self.bit} out of range")


@dataclass(frozen=True)
class BackupBit:
    slot: str
    bit: int

    def __post_init__(self):
        if not 0 <= self.bit < 39:
            raise FaultLocationError(f"backup codeword bit {self.bit} out of range")


Location = Union[RfBit, PcBit, CsrBit, InterfaceBit, BackupBit]


@dataclass(frozen=True)
class FaultEvent:
    cycle: int
    target_core: int
    location: Location
    kind: FaultKind = FaultKind.SEU

    def __post_init__(self):
        transient_loc = isinstance(self.location, InterfaceBit)
        if transient_loc != (self.kind == FaultKind.SET):
            raise ConfigError("interface bits take SET faults, state bits take SEU faults")

    @property
    def is_transient(self) -> bool:
        return self.kind == FaultKind.SET

    def apply_state(self, state: ArchState, region: RecoveryRegion) -> None:
        loc = self.location
        if isinstance(loc, RfBit):
            state.rf[loc.reg] ^= 1 << loc.bit
        elif isinstance(loc, PcBit):
            state.pc ^= 1 << loc.bit
        elif isinstance(loc, CsrBit):
            setattr(state, loc.csr, getattr(state, loc.csr) ^ (1 << loc.bit))
        elif isinstance(loc, BackupBit):
            region.flip_bit(loc.slot, loc.bit)

    def apply_bundle(self, bundle: OutputBundle) -> OutputBundle:
        loc = self.location
        return bundle._replace(**{loc.field: getattr(bundle, loc.field) ^ (1 << loc.bit)})

    def as_dict(self) -> dict:
        loc = self.location
        return {
            "cycle": self.cycle,
            "core": self.target_core,
            "kind": self.kind.value,
            "location": type(loc).__name__,
            **{k: v for k, v in vars(loc).items()},
        }

    def __str__(self) -> str:
        return f"{self.kind.value} core {self.target_core} {self.location}"


def event_from_spec(spec: FaultSpec) -> FaultEvent:
    kind = FaultKind(spec.kind)
    if spec.location == "rf":
        loc: Location = RfBit(spec.reg if spec.reg is not None else 0, spec.bit)
    elif spec.location == "pc":
        loc = PcBit(spec.bit)
    elif spec.location == "csr":
        loc = CsrBit(spec.csr or "", spec.bit)
    elif spec.location == "interface":
        loc = InterfaceBit(spec.field or "", spec.bit)
    else:
        loc = BackupBit(spec.slot or "", spec.bit)
    return FaultEvent(spec.cycle, spec.core, loc, kind)


def inject(sim: Cluster, event: FaultEvent) -> None:
    sim.schedule(event)


def classify(golden: RunResult, faulty: RunResult) -> Outcome:
    if faulty.hang:
        return Outcome.HANG
    if faulty.result_digest != golden.result_digest:
        return Outcome.SDC
    if faulty.error_raised:
        return Outcome.DETECTED_RECOVERED
    return Outcome.MASKED


# ---- campaign ----
CAMPAIGN_MODES: dict[str, tuple[CoreMode, bool]] = {
    "independent": (CoreMode.INDEPENDENT, False),
    "dmr": (CoreMode.DMR, False),
    "dmr_rapid": (CoreMode.DMR, True),
    "tmr": (CoreMode.TMR, False),
    "tmr_rapid": (CoreMode.TMR, True),
}


def draw_event(rng: np.random.Generator, n_cores: int, window: int, target: str) -> FaultEvent:
    """One uniform fault over the target space and the workload window."""
    cycle = int(rng.integers(1, max(window, 2)))
    core = int(rng.integers(0, n_cores))
    spaces = {
        "rf": ("rf",),
        "state": ("rf", "pc", "csr"),
        "interface": ("interface",),
        "all": ("rf", "pc", "csr", "interface"),
    }[target]
    # weight by bit count so every bit is equally likely
    widths = {
        "rf": 31 * 32,
        "pc": 32,
        "csr": sum(CSR_WIDTH.values()),
        "interface": sum(BUNDLE_WIDTH.values()),
    }
    sizes = np.array([widths[s] for s in spaces], dtype=float)
    space = spaces[int(rng.choice(len(spaces), p=sizes / sizes.sum()))]
    if space == "rf":
        return FaultEvent(cycle, core, RfBit(int(rng.integers(1, 32)), int(rng.integers(0, 32))))
    if space == "pc":
        return FaultEvent(cycle, core, PcBit(int(rng.integers(0, 32))))
    if space == "csr":
        flat = [(name, b) for name in CSR_FIELDS for b in range(CSR_WIDTH[name])]
        name, bit = flat[int(rng.integers(0, len(flat)))]
        return FaultEvent(cycle, core, CsrBit(name, bit))
    flat = [(name, b) for name, width in BUNDLE_FIELDS for b in range(width)]
    name, bit = flat[int(rng.integers(0, len(flat)))]
    return FaultEvent(cycle, core, InterfaceBit(name, bit), FaultKind.SET)


@dataclass
class FaultRecord:
    run_index: int
    seed: int
    event: FaultEvent
    outcome: Outcome
    cycles: int
    recovery_cycles: int

    def as_dict(self) -> dict:
        return {
            "run_index": self.run_index,
            "seed": self.seed,
            "event": self.event.as_dict(),
            "outcome": self.outcome.value,
            "cycles": self.cycles,
            "recovery_cycles": self.recovery_cycles,
        }


@dataclass
class CampaignReport:
    mode: str
    runs: int
    seed: int
    golden_cycles: int
    outcomes: dict[str, int] = field(default_factory=dict)
    records: list[FaultRecord] = field(default_factory=list)

    @property
    def report_hash(self) -> str:
        payload = json.dumps(
            {"outcomes": self.outcomes, "records": [r.as_dict() for r in self.records]},
            sort_keys=True, separators=(",", ":"),
        )
        return hashlib.sha256(payload.encode()).hexdigest()

    @property
    def masked_fraction(self) -> float:
        return self.outcomes.get(Outcome.MASKED.value, 0) / self.runs if self.runs else 0.0

    def as_dict(self) -> dict:
        return {
            "mode": self.mode,
            "runs": self.runs,
            "seed": self.seed,
            "golden_cycles": self.golden_cycles,
            "outcomes": self.outcomes,
            "masked_fraction": round(self.masked_fraction, 6),
            "report_hash": self.report_hash,
            "records": [r.as_dict() for r in self.records],
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["run_index", "seed", "cycle", "core", "kind", "location", "detail", "outcome", "cycles", "recovery_cycles"])
        for r in self.records:
            ev = r.event.as_dict()
            detail = ";".join(f"{k}={ev[k]}" for k in sorted(ev) if k not in ("cycle", "core", "kind", "location"))
            writer.writerow([r.run_index, r.seed, ev["cycle"], ev["core"], ev["kind"], ev["location"], detail,
                             r.outcome.value, r.cycles, r.recovery_cycles])
        return buf.getvalue()


def golden_run(cfg: ScenarioConfig, mode: str) -> RunResult:
    boot_mode, rapid = CAMPAIGN_MODES[mode]
    setup = setup_from_scenario(cfg, boot_mode, rapid)
    return Cluster(setup, build_image(cfg.model_copy(update={"script": []}), boot_mode)).run()


def _one_run(cfg: ScenarioConfig, mode: str, golden: RunResult, index: int, seed: int) -> FaultRecord:
    boot_mode, rapid = CAMPAIGN_MODES[mode]
    rng = np.random.default_rng(seed)
    event = draw_event(rng, cfg.cluster.n_cores, golden.cycles, cfg.campaign.target)
    setup = setup_from_scenario(cfg, boot_mode, rapid, max_cycles=settings.HANG_FACTOR * golden.cycles)
    sim = Cluster(setup, build_image(cfg.model_copy(update={"script": []}), boot_mode))
    inject(sim, event)
    result = sim.run()
    return FaultRecord(
        index, seed, event, classify(golden, result), result.cycles,
        sum(t.total for t in result.recoveries),
    )


def run_campaign(cfg: ScenarioConfig, workers: int | None = None) -> CampaignReport:
    camp = cfg.campaign
    if camp.mode not in CAMPAIGN_MODES:
        raise ConfigError(f"unknown campaign mode {camp.mode}")
    golden = golden_run(cfg, camp.mode)
    if golden.hang or not golden.result_correct:
        raise ConfigError("golden run did not complete with the expected result")
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(camp.seed).spawn(camp.runs)]
    log.info("campaign %s: %d runs, golden %d cycles", camp.mode, camp.runs, golden.cycles)

    step = max(camp.runs // 10, 1)
    records: list[FaultRecord] = []
    with ThreadPoolExecutor(max_workers=workers or camp.workers or settings.CAMPAIGN_WORKERS) as pool:
        futures = [pool.submit(_one_run, cfg, camp.mode, golden, i, s) for i, s in enumerate(seeds)]
        for i, fut in enumerate(futures, start=1):
            records.append(fut.result())
            if i % step == 0:
                log.info("campaign %s: %d/%d runs", camp.mode, i, camp.runs)

    records.sort(key=lambda r: r.run_index)
    outcomes = {o.value: 0 for o in Outcome}
    for r in records:
        outcomes[r.outcome.value] += 1
    return CampaignReport(camp.mode, camp.runs, camp.seed, golden.cycles, outcomes, records)
