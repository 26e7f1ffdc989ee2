"""HMR unit: grouping, DMR checkers, TMR voters and the configuration registers."""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import NamedTuple

from .core import (
    BUS_ERROR,
    GATED,
    IRQ_GROUPING,
    IRQ_RESYNC,
    BackupPorts,
    MemResponse,
    OutputBundle,
    RespKind,
)
from .errors import ConfigError
from .interconnect import LOCK_BARRIER_BASE, EventUnit, MemoryMap
from .recovery import TclsFsm, TclsState

log = logging.getLogger(__name__)


class CoreMode(str, enum.Enum):
    INDEPENDENT = "independent"
    DMR = "dmr"
    TMR = "tmr"


MODE_CODE = {CoreMode.INDEPENDENT: 0, CoreMode.DMR: 1, CoreMode.TMR: 2}
CODE_MODE = {v: k for k, v in MODE_CODE.items()}
MODE_PERF = 0x10
MODE_RAPID = 0x20


class Reg(enum.IntEnum):
    CORE_ID = 0x000
    N_CORES = 0x004
    AVAIL = 0x008
    PENDING = 0x00C
    EOC = 0x010
    FATAL = 0x014
    SP_SELF = 0x018
    LOCK_BARRIER = 0x01C
    MARK = 0x020
    OPTIONS = 0x024


CORE_BLOCK = 0x100
CORE_STRIDE = 0x10
BLOCK_MODE, BLOCK_SP, BLOCK_ERRORS, BLOCK_STATUS = 0x0, 0x4, 0x8, 0xC


class PendingAction(enum.IntEnum):
    NONE = 0
    SAVE = 1
    ABANDON = 2


# ---- grouping ----
def mode_available(mode: CoreMode, n_cores: int) -> bool:
    if mode == CoreMode.DMR:
        return n_cores >= 2 and n_cores % 2 == 0
    if mode == CoreMode.TMR:
        return n_cores >= 3 and n_cores % 3 == 0
    return n_cores >= 1


def dmr_partner(i: int, n: int) -> int:
    if not mode_available(CoreMode.DMR, n):
        raise ConfigError(f"DMR needs an even core count, got {n}")
    if not 0 <= i < n // 2:
        raise ConfigError(f"core {i} is not a DMR main core for N={n}")
    return i + n // 2


def tmr_partners(i: int, n: int) -> tuple[int, int]:
    if not mode_available(CoreMode.TMR, n):
        raise ConfigError(f"TMR needs a core count divisible by 3, got {n}")
    if not 0 <= i < n // 3:
        raise ConfigError(f"core {i} is not a TMR main core for N={n}")
    return i + n // 3, i + 2 * n // 3


def group_members(main: int, mode: CoreMode, n: int) -> tuple[int, ...]:
    if mode == CoreMode.DMR:
        return (main, dmr_partner(main, n))
    if mode == CoreMode.TMR:
        return (main, *tmr_partners(main, n))
    return (main,)


def main_cores(mode: CoreMode, n: int) -> range:
    if mode == CoreMode.DMR:
        return range(n // 2)
    if mode == CoreMode.TMR:
        return range(n // 3)
    return range(n)


# ---- checker / voter ----
class CheckResult(NamedTuple):
    output: OutputBundle
    error: bool


class VoteResult(NamedTuple):
    output: OutputBundle
    error: bool
    dissenter: int | None = None
    group_failure: bool = False


def check_pair(a: OutputBundle, b: OutputBundle) -> CheckResult:
    if a == b:
        return CheckResult(a, False)
    return CheckResult(GATED, True)


def majority(a: int, b: int, c: int) -> int:
    return (a & b) | (a & c) | (b & c)


def vote_triple(a: OutputBundle, b: OutputBundle, c: OutputBundle) -> VoteResult:
    if a == b == c:
        return VoteResult(a, False)
    out = OutputBundle(*(majority(x, y, z) for x, y, z in zip(a, b, c))).canonical()
    differing = {
        slot
        for slot, bundle in enumerate((a, b, c))
        for mine, voted in zip(bundle, out)
        if mine != voted
    }
    # two or more slots off the voted word: no single core to blame
    dissenter = next(iter(differing)) if len(differing) == 1 else None
    return VoteResult(out, True, dissenter, len(differing) > 1)


def vote_ports(ports: list[BackupPorts]) -> tuple[BackupPorts, bool]:
    """Word-level agreement on the exposed write ports: (selected, mismatch)."""
    first = ports[0]
    if all(p == first for p in ports[1:]):
        return first, False
    if len(ports) == 3:
        if ports[1] == ports[2]:
            return ports[1], True
        return first, True
    return first, True


# ---- configuration state ----
@dataclass
class HmrOptions:
    sync_clear_on_recovery: bool = True
    tmr_delayed_resync: bool = False
    rapid_recovery_enabled: bool = False

    def encode(self) -> int:
        return (
            int(self.sync_clear_on_recovery)
            | int(self.tmr_delayed_resync) << 1
            | int(self.rapid_recovery_enabled) << 2
        )

    def decode(self, value: int) -> None:
        self.sync_clear_on_recovery = bool(value & 1)
        self.tmr_delayed_resync = bool(value & 2)
        self.rapid_recovery_enabled = bool(value & 4)


@dataclass
class Transition:
    kind: str  # "enter_mc" | "exit_perf"
    mode: CoreMode
    rapid: bool
    barrier_id: int
    requested_cycle: int


@dataclass
class Group:
    main: int
    mode: CoreMode
    members: tuple[int, ...]
    locked: bool = False
    split_perf: bool = False
    transition: Transition | None = None
    tcls: TclsFsm | None = None
    boot_locked: bool = False

    @property
    def helpers(self) -> tuple[int, ...]:
        return self.members[1:]


@dataclass
class HmrConfig:
    n_cores: int = 12
    group_modes: dict[int, CoreMode] = field(default_factory=dict)
    options: HmrOptions = field(default_factory=HmrOptions)
    sp_regs: list[int] = field(default_factory=list)
    error_counters: dict[int, int] = field(default_factory=dict)


@dataclass
class HmrEvent:
    cycle: int
    kind: str
    core: int
    value: int = 0


@dataclass
class RaiseIrq:
    cores: tuple[int, ...]
    irq: int


@dataclass
class ClearCores:
    cores: tuple[int, ...]
    reason: str


@dataclass
class FreezeBackup:
    main: int


class HmrUnit:
    """Register surface and grouping state.

    Side effects on cores (interrupts, synchronous clears, backup freeze) are
    queued in ``actions`` and applied by the cluster at the end of the cycle.
    """

    def __init__(
        self,
        n_cores: int,
        eu: EventUnit,
        memory_map: MemoryMap | None = None,
        options: HmrOptions | None = None,
        boot_mode: CoreMode = CoreMode.INDEPENDENT,
    ):
        self.n_cores = n_cores
        self.eu = eu
        self.memory_map = memory_map or MemoryMap()
        self.config = HmrConfig(n_cores, {}, options or HmrOptions(), [0] * n_cores, {})
        self.groups: dict[int, Group] = {}
        self.group_of: dict[int, int] = {}
        self.pending: dict[int, PendingAction] = {}
        self.actions: list = []
        self.events: list[HmrEvent] = []
        self.eoc: int | None = None
        self.fatal: tuple[int, int] | None = None
        self.tcls_traces: list = []
        self.rapid_busy: set[int] = set()
        self.cycle = 0
        self._version = 0

        if boot_mode != CoreMode.INDEPENDENT:
            if not mode_available(boot_mode, n_cores):
                raise ConfigError(f"{boot_mode.value} unavailable for {n_cores} cores")
            for main in main_cores(boot_mode, n_cores):
                self._add_group(Group(main, boot_mode, group_members(main, boot_mode, n_cores), locked=True, boot_locked=True))

    @property
    def options(self) -> HmrOptions:
        return self.config.options

    @property
    def sp_regs(self) -> list[int]:
        return self.config.sp_regs

    @property
    def version(self) -> int:
        """Bumped whenever the set of locked groups changes."""
        return self._version

    # ---- HELPERS ----
    def _event(self, kind: str, core: int, value: int = 0) -> None:
        self.events.append(HmrEvent(self.cycle, kind, core, value))

    def note(self, kind: str, core: int, value: int = 0) -> None:
        """Record an event raised outside the register surface (fills, recoveries)."""
        if kind in ("rapid_start", "fill_start"):
            self.rapid_busy.add(core)
        elif kind in ("rapid_done", "fill_done"):
            self.rapid_busy.discard(core)
        self._event(kind, core, value)

    def _add_group(self, group: Group) -> None:
        if group.mode == CoreMode.TMR:
            group.tcls = TclsFsm()
        self.groups[group.main] = group
        self.config.group_modes[group.main] = group.mode
        self.config.error_counters.setdefault(group.main, 0)
        for m in group.members:
            self.group_of[m] = group.main
        self._version += 1

    def _drop_group(self, main: int) -> None:
        group = self.groups.pop(main)
        self.config.group_modes.pop(main, None)
        for m in group.members:
            self.group_of.pop(m, None)
        self._version += 1

    def locked_groups(self) -> list[Group]:
        return [g for g in self.groups.values() if g.locked]

    def virtual_ids(self) -> list[int]:
        hidden = {m for g in self.locked_groups() for m in g.helpers}
        return [i for i in range(self.n_cores) if i not in hidden]

    def group_status(self, main: int) -> int:
        group = self.groups.get(main)
        if group is None:
            return 0
        status = MODE_CODE[group.mode] if group.locked else 0
        status |= int(group.locked) << 2 | int(group.split_perf) << 3
        if group.tcls:
            status |= list(TclsState).index(group.tcls.state) << 4
        status |= int(main in self.rapid_busy) << 6
        return status

    # ---- register access ----
    def config_access(self, requester: int, offset: int, write: bool, value: int = 0) -> MemResponse:
        """One peripheral-bus access from virtual core ``requester``."""
        if offset & 3:
            return BUS_ERROR
        if offset >= CORE_BLOCK:
            core, reg = divmod(offset - CORE_BLOCK, CORE_STRIDE)
            if core >= self.n_cores:
                return BUS_ERROR
            return self._block_access(requester, core, reg, write, value)

        if not write:
            if offset == Reg.CORE_ID:
                return _grant(requester)
            if offset == Reg.N_CORES:
                return _grant(self.n_cores)
            if offset == Reg.AVAIL:
                return _grant(
                    int(mode_available(CoreMode.DMR, self.n_cores))
                    | int(mode_available(CoreMode.TMR, self.n_cores)) << 1
                )
            if offset == Reg.PENDING:
                return _grant(self.pending.get(requester, PendingAction.NONE))
            if offset == Reg.SP_SELF:
                return _grant(self.sp_regs[requester])
            if offset == Reg.LOCK_BARRIER:
                main = self.group_of.get(requester)
                group = self.groups.get(main) if main is not None else None
                if group is None or group.transition is None:
                    return _grant(0)
                return _grant(self.memory_map.barrier_addr(group.transition.barrier_id))
            if offset == Reg.OPTIONS:
                return _grant(self.options.encode())
            return BUS_ERROR

        if offset == Reg.EOC:
            self.eoc = value
            self._event("eoc", requester, value)
        elif offset == Reg.FATAL:
            self.fatal = (requester, value)
            self._event("fatal", requester, value)
        elif offset == Reg.SP_SELF:
            self._sp_write(requester, value)
        elif offset == Reg.MARK:
            self._event("mark", requester, value)
        elif offset == Reg.OPTIONS:
            self.options.decode(value)
        else:
            return BUS_ERROR
        return _grant(0)

    def _block_access(self, requester: int, core: int, reg: int, write: bool, value: int) -> MemResponse:
        main = self.group_of.get(core, core)
        if reg == BLOCK_MODE:
            if write:
                return self._mode_write(requester, core, value)
            group = self.groups.get(main)
            return _grant(MODE_CODE[group.mode] if group and group.locked else 0)
        if reg == BLOCK_SP:
            if write:
                self._sp_write(core, value)
                return _grant(0)
            return _grant(self.sp_regs[core])
        if reg == BLOCK_ERRORS:
            if write:
                self.config.error_counters[main] = 0
                return _grant(0)
            return _grant(self.config.error_counters.get(main, 0))
        if reg == BLOCK_STATUS and not write:
            return _grant(self.group_status(main))
        return BUS_ERROR

    def _mode_write(self, requester: int, core: int, value: int) -> MemResponse:
        code = value & 3
        if code not in CODE_MODE:
            return BUS_ERROR
        mode = CODE_MODE[code]
        rapid = bool(value & MODE_RAPID) and self.options.rapid_recovery_enabled

        if mode == CoreMode.INDEPENDENT:
            group = self.groups.get(core)
            if group is None or not group.locked:
                log.warning("exit request for group %d which is not locked; ignored", core)
                self._event("noop_exit", core)
                return _grant(0)
            if value & MODE_PERF:
                group.locked = False
                group.split_perf = True
                self._version += 1
                self._event("split", core)
                log.info("cycle %d: group %d split for a performance section", self.cycle, core)
            else:
                self._drop_group(core)
                self.actions.append(ClearCores(group.helpers, "exit_mc"))
                self._event("unlock", core)
                log.info("cycle %d: group %d unlocked", self.cycle, core)
            return _grant(0)

        if not mode_available(mode, self.n_cores) or core not in main_cores(mode, self.n_cores):
            log.warning("mode %s unavailable for core %d with N=%d", mode.value, core, self.n_cores)
            return BUS_ERROR
        members = group_members(core, mode, self.n_cores)
        group = self.groups.get(core)
        if group and group.split_perf and group.mode == mode and group.transition is None:
            kind = "exit_perf"
            main_action = PendingAction.ABANDON if rapid else PendingAction.SAVE
            helper_action = PendingAction.ABANDON
        elif group is None and all(m not in self.group_of for m in members):
            kind = "enter_mc"
            group = Group(core, mode, members)
            self._add_group(group)
            main_action = PendingAction.ABANDON if rapid else PendingAction.SAVE
            helper_action = PendingAction.SAVE
        else:
            return BUS_ERROR

        barrier_id = LOCK_BARRIER_BASE + core
        group.transition = Transition(kind, mode, rapid, barrier_id, self.cycle)
        self.pending[core] = main_action
        for h in group.helpers:
            self.pending[h] = helper_action
        self.eu.configure_barrier(barrier_id, members)
        self.actions.append(RaiseIrq(members, IRQ_GROUPING))
        if rapid:
            self.actions.append(FreezeBackup(core))
        self._event("lock_request", core, value)
        log.info("cycle %d: %s request for group %d (%s%s)", self.cycle, kind, core, mode.value, ", rapid" if rapid else "")
        return _grant(0)

    def _sp_write(self, vid: int, value: int) -> None:
        self.sp_regs[vid] = value
        self._event("sp_write", vid, value)
        group = self.groups.get(vid)
        if group is None or not group.locked or group.tcls is None:
            return
        fsm = group.tcls
        if fsm.state == TclsState.UNLOAD and value:
            fsm.reload(self.cycle)
            if self.options.sync_clear_on_recovery:
                self.actions.append(ClearCores(group.members, "tcls_reload"))
        elif fsm.state == TclsState.RELOAD and not value:
            trace = fsm.finish(self.cycle)
            trace.group = vid
            self.tcls_traces.append(trace)
            self._event("resync_done", vid, trace.total)
            log.info("cycle %d: group %d resynchronized in %d cycles", self.cycle, vid, trace.total)

    # ---- lock / error hooks used by the cluster ----
    def complete_lock(self, main: int) -> Transition:
        group = self.groups[main]
        transition = group.transition
        if transition is None:
            raise ConfigError(f"group {main} has no pending transition")
        group.locked = True
        group.split_perf = False
        group.transition = None
        for m in group.members:
            self.pending.pop(m, None)
        self._version += 1
        self._event("locked", main, int(transition.rapid))
        log.info("cycle %d: group %d locked in %s", self.cycle, main, group.mode.value)
        return transition

    def record_error(self, main: int) -> int:
        self.config.error_counters[main] = self.config.error_counters.get(main, 0) + 1
        self._event("error", main, self.config.error_counters[main])
        return self.config.error_counters[main]

    def restart_group(self, main: int) -> None:
        """Application restart of a DMR group without rapid recovery.

        Groups locked at boot stay locked; a group locked at runtime is
        released so the helper resumes its own saved thread.
        """
        group = self.groups[main]
        self.actions.append(ClearCores(group.members, "restart"))
        if not group.boot_locked:
            self._drop_group(main)
        self._event("restart", main)
        log.info("cycle %d: group %d restarted", self.cycle, main)

    def tcls_error(self, main: int, dissenter: int | None = None, group_failure: bool = False) -> None:
        """Mismatch in a TMR group recovered by software resynchronization.

        With delayed resync the first outvoted core is remembered and the
        group keeps running on the remaining pair; further mismatches from
        that same core are absorbed. A different dissenter, or a vote with
        no single dissenter, starts the resync.
        """
        group = self.groups[main]
        fsm = group.tcls
        if fsm is None:
            return
        if fsm.state == TclsState.RUN:
            if self.options.tmr_delayed_resync and dissenter is not None and not group_failure:
                if fsm.deferred_core is None:
                    fsm.deferred_core = dissenter
                    self._event("resync_deferred", main, dissenter)
                    log.info("cycle %d: group %d outvotes core %d", self.cycle, main, dissenter)
                    return
                if fsm.deferred_core == dissenter:
                    return
            fsm.unload(self.cycle)
            self.actions.append(RaiseIrq(group.members, IRQ_RESYNC))
            self._event("resync", main)
            log.info("cycle %d: group %d enters unload", self.cycle, main)
        elif fsm.state == TclsState.RELOAD:
            fsm.restart_reload(self.cycle)
            self.actions.append(ClearCores(group.members, "tcls_reload"))
            self._event("reload_restart", main)

    def take_actions(self) -> list:
        actions, self.actions = self.actions, []
        return actions


def _grant(value: int) -> MemResponse:
    return MemResponse(RespKind.GRANT, int(value) & 0xFFFF_FFFF)
