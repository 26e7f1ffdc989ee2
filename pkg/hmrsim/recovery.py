"""Recovery paths: ECC-protected backup region, rapid hardware engine, TCLS FSM."""
from __future__ import annotations

import enum
import hashlib
import logging
from dataclasses import dataclass, field

from .core import CSR_FIELDS, ArchState, BackupPorts, Core, synchronous_clear
from .ecc import EccStatus, ecc_decode, ecc_encode
from .errors import ContractViolation, FaultLocationError

log = logging.getLogger(__name__)

RF_WRITE_PORTS = 2


# ---- traces ----
@dataclass
class EccEvent:
    cycle: int
    slot: str
    status: str
    bit: int | None = None

    def as_dict(self) -> dict:
        return {"cycle": self.cycle, "slot": self.slot, "status": self.status, "bit": self.bit}


@dataclass
class RecoveryTrace:
    kind: str  # "rapid" | "tcls_sw" | "restart"
    group: int
    start_cycle: int = 0
    phases: list[tuple[str, int]] = field(default_factory=list)
    ecc_events: list[EccEvent] = field(default_factory=list)
    rf_writes_per_cycle: list[int] = field(default_factory=list)
    unloads: int = 0
    reload_restarts: int = 0
    aborted: bool = False

    @property
    def total(self) -> int:
        return sum(c for _, c in self.phases)

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "group": self.group,
            "start_cycle": self.start_cycle,
            "phases": [{"name": n, "cycles": c} for n, c in self.phases],
            "total": self.total,
            "ecc_events": [e.as_dict() for e in self.ecc_events],
            "unloads": self.unloads,
            "reload_restarts": self.reload_restarts,
            "aborted": self.aborted,
        }


# ---- backup region ----
class RecoveryRegion:
    """Shadow copy of one group's PC, RF and CSRs, stored as SEC-DED codewords."""

    def __init__(self, state: ArchState | None = None):
        state = state or ArchState()
        self.backup_pc = ecc_encode(state.pc)
        self.backup_rf = [ecc_encode(v) for v in state.rf]  # slot 0 unused
        self.backup_csrs = {name: ecc_encode(getattr(state, name)) for name in CSR_FIELDS}
        self.write_blocked = False
        self.frozen = False

    def reset(self, state: ArchState) -> None:
        self.__init__(state)

    def commit(self, ports: BackupPorts, error: bool = False) -> bool:
        """Store one cycle of port writes; returns False when the write was blocked."""
        self.write_blocked = error
        if error or self.frozen:
            return False
        if ports.pc_write is not None:
            self.backup_pc = ecc_encode(ports.pc_write)
        for index, value in ports.rf_writes:
            self.backup_rf[index] = ecc_encode(value)
        for name, value in ports.csr_writes:
            self.backup_csrs[name] = ecc_encode(value)
        return True

    def flip_bit(self, slot: str, bit: int) -> None:
        """Upset one stored codeword bit. ``slot`` is "pc", "x1".."x31" or a CSR name."""
        if not 0 <= bit < 39:
            raise FaultLocationError(f"codeword bit {bit} out of range")
        if slot == "pc":
            self.backup_pc ^= 1 << bit
        elif slot in self.backup_csrs:
            self.backup_csrs[slot] ^= 1 << bit
        elif slot.startswith("x") and slot[1:].isdigit() and 1 <= int(slot[1:]) <= 31:
            self.backup_rf[int(slot[1:])] ^= 1 << bit
        else:
            raise FaultLocationError(f"unknown backup slot {slot}")

    def read_state(self, cycle: int = 0) -> tuple[ArchState, list[EccEvent], bool]:
        """Decode the whole region; returns (state, correction events, uncorrectable)."""
        events: list[EccEvent] = []
        bad = False

        def decode(slot: str, cw: int) -> int:
            nonlocal bad
            result = ecc_decode(cw)
            if result.status != EccStatus.OK:
                events.append(EccEvent(cycle, slot, result.status.value, result.bit))
                bad |= result.status == EccStatus.UNCORRECTABLE
            return result.word

        state = ArchState(pc=decode("pc", self.backup_pc))
        for i in range(1, 32):
            state.rf[i] = decode(f"x{i}", self.backup_rf[i])
        for name, cw in self.backup_csrs.items():
            value = decode(name, cw)
            setattr(state, name, value & 1 if name == "mstatus_mie" else value)
        return state, events, bad

    def digest(self) -> str:
        h = hashlib.sha256()
        for cw in (self.backup_pc, *self.backup_rf, *self.backup_csrs.values()):
            h.update(cw.to_bytes(5, "little"))
        return h.hexdigest()


def backup_commit(region: RecoveryRegion, ports: BackupPorts, error: bool) -> RecoveryRegion:
    region.commit(ports, error)
    return region


# ---- rapid recovery ----
class RapidPhase(str, enum.Enum):
    IDLE = "idle"
    CLEAR = "clear"
    HALT = "halt"
    RESTORE = "restore"


@dataclass(frozen=True)
class RapidBudget:
    setup_clear: int = 4
    halt_ack: int = 4
    restore: int = 16

    @property
    def total(self) -> int:
        return self.setup_clear + self.halt_ack + self.restore


class RapidRecoveryEngine:
    """Per-group hardware recovery FSM, advanced once per cycle by ``tick``.

    Clear: synchronous clear in its first cycle, debug halt request in its
    last. Halt: the members reach the halted state. Restore: PC and CSRs in
    the first cycle, RF two registers per cycle, then resume.
    """

    def __init__(self, core: Core, group: int, budget: RapidBudget | None = None):
        self.core = core
        self.group = group
        self.budget = budget or RapidBudget()
        if self.budget.restore * RF_WRITE_PORTS < 31:
            raise ContractViolation("restore budget too short for 31 registers on 2 write ports")
        self.phase = RapidPhase.IDLE
        self._left = 0
        self._source: ArchState | None = None
        self._pending_regs: list[int] = []
        self.trace: RecoveryTrace | None = None

    @property
    def busy(self) -> bool:
        return self.phase != RapidPhase.IDLE

    def start(self, region: RecoveryRegion, cycle: int, kind: str = "rapid") -> RecoveryTrace:
        """Scan the region and enter Clear. An uncorrectable word aborts before Clear."""
        source, events, bad = region.read_state(cycle)
        self.trace = RecoveryTrace(kind, self.group, cycle, ecc_events=events)
        for e in events:
            log.debug("group %d: backup %s %s", self.group, e.slot, e.status)
        if bad:
            self.trace.aborted = True
            log.warning("cycle %d: group %d backup uncorrectable, rapid recovery aborted", cycle, self.group)
            return self.trace
        self._source = source
        self._pending_regs = list(range(1, 32))
        self.phase = RapidPhase.CLEAR
        self._left = self.budget.setup_clear
        return self.trace

    def tick(self, states: list[ArchState]) -> bool:
        """Advance one cycle on the member states; returns True on the resume cycle."""
        if self.phase == RapidPhase.IDLE:
            return False
        trace = self.trace
        first = self._left == self._budget_of(self.phase)
        rf_writes = 0
        if self.phase == RapidPhase.CLEAR:
            if first:
                for s in states:
                    synchronous_clear(s, self.core.boot_addr)
            if self._left == 1:
                for s in states:
                    self.core.debug_halt_request(s)
        elif self.phase == RapidPhase.HALT:
            for s in states:
                self.core.step(s)
        else:
            src = self._source
            pairs = tuple((i, src.rf[i]) for i in self._pending_regs[:RF_WRITE_PORTS])
            del self._pending_regs[:RF_WRITE_PORTS]
            csrs = tuple((n, getattr(src, n)) for n in CSR_FIELDS) if first else ()
            for s in states:
                if not s.halted:
                    raise ContractViolation("restore reached a core that is not halted")
                self.core.debug_write_state(s, src.pc if first else None, pairs, csrs)
            rf_writes = len(pairs)
        trace.rf_writes_per_cycle.append(rf_writes)

        self._left -= 1
        if self._left:
            return False
        trace.phases.append((self.phase.value, self._budget_of(self.phase)))
        if self.phase == RapidPhase.CLEAR:
            self.phase, self._left = RapidPhase.HALT, self.budget.halt_ack
            return False
        if self.phase == RapidPhase.HALT:
            self.phase, self._left = RapidPhase.RESTORE, self.budget.restore
            return False
        for s in states:
            self.core.debug_resume(s)
        self.phase = RapidPhase.IDLE
        log.info("group %d: rapid recovery done in %d cycles", self.group, trace.total)
        return True

    def _budget_of(self, phase: RapidPhase) -> int:
        return {
            RapidPhase.CLEAR: self.budget.setup_clear,
            RapidPhase.HALT: self.budget.halt_ack,
            RapidPhase.RESTORE: self.budget.restore,
        }[phase]


def rapid_recover(
    core: Core,
    states: list[ArchState],
    region: RecoveryRegion,
    budget: RapidBudget | None = None,
    cycle: int = 0,
) -> RecoveryTrace:
    """Run the rapid engine to completion on ``states``."""
    engine = RapidRecoveryEngine(core, 0, budget)
    trace = engine.start(region, cycle)
    while engine.busy:
        engine.tick(states)
    return trace


# ---- TCLS software resynchronization ----
class TclsState(str, enum.Enum):
    RUN = "run"
    UNLOAD = "unload"
    RELOAD = "reload"


@dataclass
class TclsFsm:
    state: TclsState = TclsState.RUN
    pending_clear: bool = False
    deferred_core: int | None = None
    unloads: int = 0
    reload_restarts: int = 0
    _unload_at: int = 0
    _reload_at: int = 0
    traces: list[RecoveryTrace] = field(default_factory=list)

    def unload(self, cycle: int) -> None:
        if self.state != TclsState.RUN:
            raise ContractViolation(f"unload from {self.state.value}")
        self.state = TclsState.UNLOAD
        self.unloads += 1
        self._unload_at = cycle

    def reload(self, cycle: int) -> None:
        if self.state != TclsState.UNLOAD:
            raise ContractViolation(f"reload from {self.state.value}")
        self.state = TclsState.RELOAD
        self.pending_clear = True
        self._reload_at = cycle

    def restart_reload(self, cycle: int) -> None:
        if self.state != TclsState.RELOAD:
            raise ContractViolation(f"reload restart from {self.state.value}")
        self.reload_restarts += 1
        self.pending_clear = True

    def finish(self, cycle: int) -> RecoveryTrace:
        if self.state != TclsState.RELOAD:
            raise ContractViolation(f"finish from {self.state.value}")
        trace = RecoveryTrace(
            "tcls_sw",
            0,
            self._unload_at,
            [("unload", self._reload_at - self._unload_at), ("reload", cycle - self._reload_at)],
            unloads=self.unloads,
            reload_restarts=self.reload_restarts,
        )
        self.traces.append(trace)
        self.state = TclsState.RUN
        self.pending_clear = False
        self.deferred_core = None
        self.unloads = 0
        self.reload_restarts = 0
        return trace


def tcls_sw_recover(
    unload: int = 247, reload: int = 116, fsm: TclsFsm | None = None, start_cycle: int = 0,
    reload_faults: int = 0,
) -> RecoveryTrace:
    """Calibrated software resynchronization; each reload fault repeats Reload only."""
    fsm = fsm or TclsFsm()
    fsm.unload(start_cycle)
    fsm.reload(start_cycle + unload)
    end = start_cycle + unload + reload
    for _ in range(reload_faults):
        fsm.restart_reload(end)
        end += reload
    return fsm.finish(end)


class BootPath(str, enum.Enum):
    NORMAL = "normal"
    RELOAD = "reload"


def boot_sp_check(sp_reg: int) -> BootPath:
    return BootPath.RELOAD if sp_reg else BootPath.NORMAL
