"""Single-threaded cycle loop wiring cores, interconnect, HMR unit and recovery."""
from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass, field, replace

from .core import (
    NO_RESPONSE,
    STALL,
    BUS_ERROR,
    Core,
    MemResponse,
    OutputBundle,
    RespKind,
    cleared_default,
    synchronous_clear,
)
from .errors import ContractViolation, FaultLocationError, HangError
from .firmware import FirmwareImage, build_script, build_static
from .hmr import (
    ClearCores,
    CoreMode,
    FreezeBackup,
    HmrOptions,
    HmrUnit,
    RaiseIrq,
    check_pair,
    vote_ports,
    vote_triple,
)
from .interconnect import LOCK_BARRIER_BASE, EventUnit, MemoryMap, Tcdm
from .recovery import (
    RapidBudget,
    RapidRecoveryEngine,
    RecoveryRegion,
    RecoveryTrace,
    boot_sp_check,
)
from .schemas import ScenarioConfig
from .settings import settings

log = logging.getLogger(__name__)

EU_MASK_OFFSET = 0x200


@dataclass
class ClusterSetup:
    n_cores: int = 12
    boot_mode: CoreMode = CoreMode.INDEPENDENT
    banking_factor: int = 2
    tcdm_size: int = 256 * 1024
    debug_latency: int = 4
    options: HmrOptions = field(default_factory=HmrOptions)
    rapid_budget: RapidBudget = field(default_factory=RapidBudget)
    max_cycles: int = settings.MAX_CYCLES

    @property
    def memory_map(self) -> MemoryMap:
        return MemoryMap(tcdm_size=self.tcdm_size)


@dataclass
class Unit:
    """One requester on the interconnect: an independent core or a locked group."""

    vid: int
    members: tuple[int, ...]
    mode: CoreMode = CoreMode.INDEPENDENT


@dataclass
class RunResult:
    cycles: int
    retired: int
    eoc: int | None
    fatal: tuple[int, int] | None
    hang: bool
    result: dict[str, list[int]]
    result_digest: str
    result_correct: bool
    recovery_traces: list[RecoveryTrace] = field(default_factory=list)
    error_counters: dict[int, int] = field(default_factory=dict)
    events: list = field(default_factory=list)
    faults_applied: list = field(default_factory=list)
    tcdm_grants: int = 0
    tcdm_conflicts: int = 0
    ops: int = 0
    section_traces: list = field(default_factory=list)

    @property
    def error_raised(self) -> bool:
        return any(self.error_counters.values()) or any(t.kind != "hw_fill" for t in self.recovery_traces)

    @property
    def recoveries(self) -> list[RecoveryTrace]:
        return [t for t in self.recovery_traces if t.kind != "hw_fill"]

    def as_dict(self) -> dict:
        return {
            "cycles": self.cycles,
            "retired": self.retired,
            "eoc": self.eoc,
            "fatal": list(self.fatal) if self.fatal else None,
            "hang": self.hang,
            "ops": self.ops,
            "result_digest": self.result_digest,
            "result_correct": self.result_correct,
            "error_counters": {str(k): v for k, v in sorted(self.error_counters.items())},
            "recovery_traces": [t.as_dict() for t in self.recovery_traces],
            "ecc_events": [e.as_dict() for t in self.recovery_traces for e in t.ecc_events],
            "section_traces": [s.as_dict() for s in self.section_traces],
            "faults": [f.as_dict() for f in self.faults_applied],
            "tcdm": {"grants": self.tcdm_grants, "conflicts": self.tcdm_conflicts},
        }


def result_digest(result: dict[str, list[int]]) -> str:
    h = hashlib.sha256()
    for name in sorted(result):
        words = result[name]
        h.update(name.encode())
        h.update(struct.pack(f"<{len(words)}I", *words))
    return h.hexdigest()


class Cluster:
    def __init__(self, setup: ClusterSetup, image: FirmwareImage):
        self.setup = setup
        self.image = image
        self.mm = setup.memory_map
        n = setup.n_cores
        self.n_cores = n
        self.core = Core(image.program.words, self.mm.boot_addr, setup.debug_latency)
        self.states = [cleared_default(self.mm.boot_addr) for _ in range(n)]
        self.tcdm = Tcdm(setup.banking_factor * n, setup.tcdm_size, self.mm.tcdm_base, n)
        self.tcdm.load(image.data)
        self.eu = EventUnit(n)
        for bid, participants in image.barriers.items():
            self.eu.configure_barrier(bid, participants)
        self.hmr = HmrUnit(n, self.eu, self.mm, replace(setup.options), image.boot_mode)
        self.regions = [RecoveryRegion(s) for s in self.states]
        self.engines: dict[int, RapidRecoveryEngine] = {}
        self.recovery_traces: list[RecoveryTrace] = []
        self.faults_applied: list = []
        self.cycle = 0
        self.retired = 0

        self._seu: dict[int, list] = {}
        self._set: dict[tuple[int, int], list] = {}
        self._units: list[Unit] = []
        self._units_version = -1
        self._rapid_on = self.hmr.options.rapid_recovery_enabled
        self._pending_locks: list[int] = []
        self._rapid_errors: list[int] = []

    # ---- fault hooks ----
    def schedule(self, event) -> None:
        """Queue a fault event; SEUs flip state, SETs flip one cycle's bundle."""
        if event.cycle < self.cycle:
            raise ContractViolation(f"fault at cycle {event.cycle} is in the past (now {self.cycle})")
        if not 0 <= event.target_core < self.n_cores:
            raise FaultLocationError(f"core {event.target_core} out of range")
        if event.is_transient:
            self._set.setdefault((event.cycle, event.target_core), []).append(event)
        else:
            self._seu.setdefault(event.cycle, []).append(event)

    # ---- HELPERS ----
    def units(self) -> list[Unit]:
        if self._units_version != self.hmr.version:
            locked = {g.main: g for g in self.hmr.locked_groups()}
            hidden = {h for g in locked.values() for h in g.helpers}
            self._units = [
                Unit(i, locked[i].members, locked[i].mode) if i in locked else Unit(i, (i,))
                for i in range(self.n_cores)
                if i not in hidden
            ]
            self._units_version = self.hmr.version
        return self._units

    def _engine(self, main: int) -> RapidRecoveryEngine:
        if main not in self.engines:
            self.engines[main] = RapidRecoveryEngine(self.core, main, self.setup.rapid_budget)
        return self.engines[main]

    def _clear(self, cores, reason: str) -> None:
        for m in cores:
            synchronous_clear(self.states[m], self.mm.boot_addr)
            self.eu.clear_irqs(m)
        vid = cores[0]
        path = boot_sp_check(self.hmr.sp_regs[vid])
        log.debug("cycle %d: cleared %s (%s), boot path %s", self.cycle, list(cores), reason, path.value)

    def _apply_actions(self) -> None:
        for action in self.hmr.take_actions():
            if isinstance(action, RaiseIrq):
                self.eu.raise_irq(action.cores, action.irq)
            elif isinstance(action, ClearCores):
                self._clear(action.cores, action.reason)
            elif isinstance(action, FreezeBackup):
                self.regions[action.main].frozen = True

    # ---- routing ----
    def _peripheral(self, vid: int, req: OutputBundle, waiting: dict[int, int]) -> MemResponse | None:
        addr = req.addr
        if self.mm.hmr_base <= addr < self.mm.eu_base:
            return self.hmr.config_access(vid, addr - self.mm.hmr_base, bool(req.we), req.wdata)
        offset = addr - self.mm.eu_base
        if offset < 0 or addr & 3:
            return BUS_ERROR
        if offset < EU_MASK_OFFSET:
            bid = offset // 4
            if req.we or bid not in self.eu.participants:
                return BUS_ERROR
            waiting[vid] = bid
            return None
        if offset < 2 * EU_MASK_OFFSET:
            bid = (offset - EU_MASK_OFFSET) // 4
            if not req.we:
                return MemResponse(RespKind.GRANT, self.eu.participant_mask(bid))
            cores = [i for i in range(self.n_cores) if req.wdata >> i & 1]
            if not cores:
                return BUS_ERROR
            self.eu.configure_barrier(bid, cores)
            return MemResponse(RespKind.GRANT, 0)
        return BUS_ERROR

    def _route(self, outputs: list[tuple[int, OutputBundle]]) -> dict[int, MemResponse]:
        responses: dict[int, MemResponse] = {}
        waiting: dict[int, int] = {}
        tcdm_reqs: list[tuple[int, OutputBundle]] = []
        for vid, req in sorted(outputs):
            if not req.valid:
                continue
            if self.mm.is_periph(req.addr):
                resp = self._peripheral(vid, req, waiting)
                if resp is not None:
                    responses[vid] = resp
            elif self.mm.is_tcdm(req.addr):
                tcdm_reqs.append((vid, req))
            else:
                responses[vid] = BUS_ERROR

        for bid, rids in self.eu.barrier_read(self.cycle, waiting).items():
            if bid >= LOCK_BARRIER_BASE:
                self._pending_locks.append(bid - LOCK_BARRIER_BASE)
                continue
            for rid in rids:
                responses[rid] = MemResponse(RespKind.GRANT, 0)
        for vid in waiting:
            responses.setdefault(vid, STALL)
        responses.update(self.tcdm.cycle(tcdm_reqs))
        return responses

    # ---- cycle ----
    def step(self) -> None:
        c = self.cycle
        hmr = self.hmr
        hmr.cycle = c

        for event in self._seu.pop(c, ()):
            event.apply_state(self.states[event.target_core], self.regions[event.target_core])
            self.faults_applied.append(event)
            log.debug("cycle %d: %s", c, event)

        rapid_on = hmr.options.rapid_recovery_enabled
        if rapid_on and not self._rapid_on:
            for region, state in zip(self.regions, self.states):
                region.reset(state)
        self._rapid_on = rapid_on

        active: list[tuple[Unit, list[int], OutputBundle]] = []
        for unit in self.units():
            members = unit.members
            engine = self.engines.get(unit.vid)
            if engine is not None and engine.busy:
                if engine.tick([self.states[m] for m in members]):
                    self._recovery_done(unit, engine)
                continue

            irqs = [self.eu.irq_pending[m] for m in members]
            bundles = [self.core.request(self.states[m], irq) for m, irq in zip(members, irqs)]
            for k, m in enumerate(members):
                for event in self._set.pop((c, m), ()):
                    bundles[k] = event.apply_bundle(bundles[k])
                    self.faults_applied.append(event)

            dissenter, group_failure = None, False
            if len(members) == 1:
                out, error = bundles[0], False
            elif len(members) == 2:
                out, error = check_pair(*bundles)
            else:
                vote = vote_triple(*bundles)
                out, error = vote.output, vote.error
                if vote.dissenter is not None:
                    dissenter = members[vote.dissenter]
                group_failure = vote.group_failure

            if error:
                hmr.record_error(unit.vid)
                if rapid_on:
                    self._rapid_errors.append(unit.vid)
                    continue
                if unit.mode == CoreMode.DMR:
                    hmr.restart_group(unit.vid)
                    continue
                hmr.tcls_error(unit.vid, dissenter, group_failure)
            active.append((unit, irqs, out))

        responses = self._route([(u.vid, out) for u, _, out in active])

        for unit, irqs, _ in active:
            members = unit.members
            resp = responses.get(unit.vid, NO_RESPONSE)
            taken = [Core.irq_to_take(self.states[m], irq) for m, irq in zip(members, irqs)]
            ports = [self.core.step(self.states[m], resp, irq)[2] for m, irq in zip(members, irqs)]
            if ports[0].pc_write is not None:
                self.retired += 1
            selected, mismatch = vote_ports(ports) if len(ports) > 1 else (ports[0], False)
            blocked = mismatch and rapid_on
            if blocked:
                hmr.record_error(unit.vid)
                self._rapid_errors.append(unit.vid)
            if rapid_on:
                self.regions[unit.vid].commit(selected, error=blocked)
            if not blocked:
                for m, irq_id in zip(members, taken):
                    if irq_id is not None:
                        self.eu.ack_irq(m, irq_id)

        self._end_of_cycle()
        self.cycle += 1

    def _end_of_cycle(self) -> None:
        self._apply_actions()

        locks, self._pending_locks = self._pending_locks, []
        for main in locks:
            transition = self.hmr.complete_lock(main)
            members = self.hmr.groups[main].members
            if transition.rapid:
                trace = self._engine(main).start(self.regions[main], self.cycle, kind="hw_fill")
                self.recovery_traces.append(trace)
                if trace.aborted:
                    self.regions[main].frozen = False
                    self._clear(members, "fill_aborted")
                else:
                    self.hmr.note("fill_start", main)
            else:
                self._clear(members, "lock")

        errors, self._rapid_errors = self._rapid_errors, []
        for main in dict.fromkeys(errors):
            group = self.hmr.groups.get(main)
            if group is None:
                continue
            trace = self._engine(main).start(self.regions[main], self.cycle)
            self.recovery_traces.append(trace)
            if not trace.aborted:
                self.hmr.note("rapid_start", main)
            else:
                self.hmr.note("rapid_abort", main)
                if group.mode == CoreMode.TMR:
                    self.hmr.tcls_error(main)
                else:
                    self.hmr.restart_group(main)

        self._apply_actions()

    def _recovery_done(self, unit: Unit, engine: RapidRecoveryEngine) -> None:
        trace = engine.trace
        if trace.kind == "hw_fill":
            self.regions[unit.vid].frozen = False
            self.hmr.note("fill_done", unit.vid, trace.total)
        else:
            self.hmr.note("rapid_done", unit.vid, trace.total)

    # ---- run ----
    def read_result(self) -> dict[str, list[int]]:
        return {name: self.tcdm.region(addr, n) for name, addr, n in self.image.result_regions}

    def run(self, max_cycles: int | None = None, strict: bool = False) -> RunResult:
        """Step until EOC or FATAL. With ``strict`` a hang raises HangError."""
        limit = max_cycles or self.setup.max_cycles
        while self.hmr.eoc is None and self.hmr.fatal is None and self.cycle < limit:
            self.step()
        hang = self.hmr.eoc is None and self.hmr.fatal is None
        if hang:
            log.warning("run hit the cycle limit at %d cycles", self.cycle)
            if strict:
                raise HangError(self.cycle)
        result = self.read_result()
        return RunResult(
            cycles=self.cycle,
            retired=self.retired,
            eoc=self.hmr.eoc,
            fatal=self.hmr.fatal,
            hang=hang,
            result=result,
            result_digest=result_digest(result),
            result_correct=result == self.image.expected,
            recovery_traces=sorted(self.recovery_traces + self.hmr.tcls_traces, key=lambda t: t.start_cycle),
            error_counters=dict(self.hmr.config.error_counters),
            events=list(self.hmr.events),
            faults_applied=list(self.faults_applied),
            tcdm_grants=self.tcdm.grants,
            tcdm_conflicts=self.tcdm.conflicts,
            ops=self.image.ops,
        )


# ---- scenario wiring ----
def build_image(cfg: ScenarioConfig, boot_mode: CoreMode | None = None) -> FirmwareImage:
    mm = MemoryMap(tcdm_size=cfg.cluster.tcdm_size)
    n = cfg.cluster.n_cores
    if cfg.script:
        return build_script(
            n, cfg.script, cfg.workload.dim, cfg.workload.helper_iterations, cfg.seed, mm,
            rapid_enabled=cfg.cluster.options.rapid_recovery_enabled,
        )
    return build_static(n, boot_mode or cfg.cluster.boot_mode, cfg.workload.dim, cfg.seed, mm)


def setup_from_scenario(
    cfg: ScenarioConfig,
    boot_mode: CoreMode | None = None,
    rapid: bool | None = None,
    max_cycles: int | None = None,
) -> ClusterSetup:
    opts = cfg.cluster.options
    cal = cfg.calibration
    return ClusterSetup(
        n_cores=cfg.cluster.n_cores,
        boot_mode=boot_mode or cfg.cluster.boot_mode,
        banking_factor=cfg.cluster.banking_factor,
        tcdm_size=cfg.cluster.tcdm_size,
        debug_latency=cfg.cluster.debug_latency,
        options=HmrOptions(
            opts.sync_clear_on_recovery,
            opts.tmr_delayed_resync,
            opts.rapid_recovery_enabled if rapid is None else rapid,
        ),
        rapid_budget=RapidBudget(cal.rapid_setup_clear, cal.rapid_halt_ack, cal.rapid_restore),
        max_cycles=max_cycles or settings.MAX_CYCLES,
    )
