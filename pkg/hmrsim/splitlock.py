"""Split-lock section accounting.

Functional traces are read back from the HMR event log of an executed run.
Calibrated traces come from a phase-latency table; in calibrated mode the
functional measurement is kept next to the calibrated phases.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .errors import ConfigError
from .firmware import Mark
from .hmr import CODE_MODE, MODE_RAPID, CoreMode, group_members, mode_available
from .recovery import RecoveryTrace, tcls_sw_recover

log = logging.getLogger(__name__)

Phases = list[tuple[str, int]]

DEFAULT_CALIBRATION: dict[tuple[str, str, str, str], Phases] = {
    ("mc_entry", "tmr", "sw", "main"): [("setup", 87), ("unload", 195), ("reload", 126)],
    ("mc_entry", "tmr", "rapid", "main"): [("setup", 86), ("unload", 198), ("hw_fill", 24)],
    ("mc_entry", "dmr", "sw", "main"): [("setup", 87), ("unload", 195), ("reload", 252)],
    ("mc_entry", "dmr", "rapid", "main"): [("setup", 86), ("unload", 287), ("hw_fill", 24)],
    ("mc_exit", "dmr", "sw", "main"): [("setup", 22)],
    ("mc_exit", "tmr", "sw", "main"): [("setup", 23)],
    ("mc_exit", "dmr", "rapid", "main"): [("setup", 22)],
    ("mc_exit", "tmr", "rapid", "main"): [("setup", 23)],
    ("mc_exit", "dmr", "sw", "helper"): [("setup", 22), ("reload", 125)],
    ("mc_exit", "tmr", "sw", "helper"): [("setup", 23), ("reload", 142)],
    ("mc_exit", "dmr", "rapid", "helper"): [("setup", 22), ("reload", 162)],
    ("mc_exit", "tmr", "rapid", "helper"): [("setup", 23), ("reload", 159)],
    ("perf_entry", "dmr", "sw", "main"): [("setup", 134)],
    ("perf_entry", "tmr", "sw", "main"): [("setup", 82)],
    ("perf_entry", "dmr", "rapid", "main"): [("setup", 125)],
    ("perf_entry", "tmr", "rapid", "main"): [("setup", 82)],
    ("perf_exit", "tmr", "sw", "main"): [("setup", 22), ("unload", 162), ("reload", 127)],
    ("perf_exit", "dmr", "sw", "main"): [("setup", 22), ("unload", 162), ("reload", 189)],
    ("perf_exit", "tmr", "rapid", "main"): [("setup", 70), ("hw_fill", 24)],
    ("perf_exit", "dmr", "rapid", "main"): [("setup", 159), ("hw_fill", 24)],
}

# Published per-configuration totals; calibration deltas are reported against them.
REFERENCE_TOTALS: dict[str, dict[str, int]] = {
    "mc_entry": {"dmr": 534, "tmr": 410, "dmr_rapid": 397, "tmr_rapid": 310},
    "mc_exit_main": {"dmr": 22, "tmr": 23, "dmr_rapid": 22, "tmr_rapid": 23},
    "mc_exit_helper": {"dmr": 147, "tmr": 165, "dmr_rapid": 184, "tmr_rapid": 182},
    "perf_entry": {"dmr": 134, "tmr": 82, "dmr_rapid": 125, "tmr_rapid": 82},
    "perf_exit": {"dmr": 373, "tmr": 311, "dmr_rapid": 183, "tmr_rapid": 94},
}

_SECTION_KIND = {
    "mc_entry": ("mission_critical", "entry"),
    "mc_exit": ("mission_critical", "exit"),
    "perf_entry": ("performance", "entry"),
    "perf_exit": ("performance", "exit"),
}


@dataclass
class SectionTrace:
    section: str  # mc_entry | mc_exit | perf_entry | perf_exit
    mode: str
    variant: str
    role: str = "main"
    phases: Phases = field(default_factory=list)
    start_cycle: int = 0
    core: int = 0
    measured: Phases | None = None

    @property
    def kind(self) -> str:
        return _SECTION_KIND[self.section][0]

    @property
    def direction(self) -> str:
        return _SECTION_KIND[self.section][1]

    @property
    def total(self) -> int:
        return sum(c for _, c in self.phases)

    def as_dict(self) -> dict:
        out = {
            "section": self.section,
            "kind": self.kind,
            "direction": self.direction,
            "mode": self.mode,
            "variant": self.variant,
            "role": self.role,
            "core": self.core,
            "start_cycle": self.start_cycle,
            "phases": [{"name": n, "cycles": c} for n, c in self.phases],
            "total": self.total,
        }
        if self.measured is not None:
            out["measured"] = [{"name": n, "cycles": c} for n, c in self.measured]
            out["measured_total"] = sum(c for _, c in self.measured)
        return out


@dataclass
class CalibrationTable:
    entries: dict[tuple[str, str, str, str], Phases] = field(
        default_factory=lambda: {k: list(v) for k, v in DEFAULT_CALIBRATION.items()}
    )
    tcls_unload: int = 247
    tcls_reload: int = 116

    def phases(self, section: str, mode: str, variant: str, role: str = "main") -> Phases:
        key = (section, mode, variant, role)
        if key not in self.entries:
            raise ConfigError(f"no calibration for {'/'.join(key)}")
        return list(self.entries[key])

    def total(self, section: str, mode: str, variant: str, role: str = "main") -> int:
        return sum(c for _, c in self.phases(section, mode, variant, role))

    @classmethod
    def from_overrides(cls, overrides: dict[str, dict[str, int]], tcls_unload: int = 247, tcls_reload: int = 116):
        """``overrides`` maps "section/mode/variant/role" to {phase: cycles}."""
        table = cls(tcls_unload=tcls_unload, tcls_reload=tcls_reload)
        for key, phases in overrides.items():
            parts = tuple(key.split("/"))
            if len(parts) != 4:
                raise ConfigError(f"calibration key {key!r} is not section/mode/variant/role")
            table.entries[parts] = list(phases.items())
        return table

    def rows(self) -> list[dict]:
        return [
            {"section": s, "mode": m, "variant": v, "role": r, "phase": p, "cycles": c}
            for (s, m, v, r), phases in sorted(self.entries.items())
            for p, c in phases
        ]


def reference_deltas(table: CalibrationTable) -> list[dict]:
    """Calibrated totals next to the published per-configuration values."""
    out = []
    for row, refs in REFERENCE_TOTALS.items():
        section, role = ("mc_exit", row.rsplit("_", 1)[1]) if row.startswith("mc_exit") else (row, "main")
        for config, reference in refs.items():
            mode, _, rapid = config.partition("_")
            total = table.total(section, mode, "rapid" if rapid else "sw", role)
            out.append({"row": row, "config": config, "calibrated": total, "reference": reference,
                        "delta": total - reference})
    return out


class SplitLockController:
    """Calibrated model of the split-lock protocol for a cluster of ``n_cores``."""

    def __init__(self, n_cores: int = 12, table: CalibrationTable | None = None):
        self.n_cores = n_cores
        self.table = table or CalibrationTable()
        self.state: dict[int, tuple[str, CoreMode, str]] = {}

    def _group(self, main: int) -> tuple[str, CoreMode, str]:
        if main not in self.state:
            raise ConfigError(f"group {main} is not locked")
        return self.state[main]

    def enter_mission_critical(self, main: int, mode: CoreMode, variant: str = "sw") -> SectionTrace:
        if not mode_available(mode, self.n_cores):
            raise ConfigError(f"{mode.value} unavailable for {self.n_cores} cores")
        group_members(main, mode, self.n_cores)
        if main in self.state:
            raise ConfigError(f"group {main} is already locked")
        self.state[main] = ("locked", mode, variant)
        return SectionTrace("mc_entry", mode.value, variant, phases=self.table.phases("mc_entry", mode.value, variant), core=main)

    def exit_mission_critical(self, main: int) -> tuple[SectionTrace, SectionTrace] | None:
        if self.state.get(main, ("",))[0] != "locked":
            log.warning("exit request for group %d which is not locked; ignored", main)
            return None
        _, mode, variant = self.state.pop(main)
        m = mode.value
        return (
            SectionTrace("mc_exit", m, variant, "main", self.table.phases("mc_exit", m, variant, "main"), core=main),
            SectionTrace("mc_exit", m, variant, "helper", self.table.phases("mc_exit", m, variant, "helper"), core=main),
        )

    def enter_performance(self, main: int) -> SectionTrace:
        status, mode, variant = self._group(main)
        if status != "locked":
            raise ConfigError(f"group {main} is already split")
        self.state[main] = ("split", mode, variant)
        return SectionTrace("perf_entry", mode.value, variant, phases=self.table.phases("perf_entry", mode.value, variant), core=main)

    def exit_performance(self, main: int, variant: str = "sw") -> SectionTrace:
        status, mode, _ = self._group(main)
        if status != "split":
            raise ConfigError(f"group {main} is not split for a performance section")
        self.state[main] = ("locked", mode, variant)
        return SectionTrace("perf_exit", mode.value, variant, phases=self.table.phases("perf_exit", mode.value, variant), core=main)

    def tcls_recovery(self, start_cycle: int = 0) -> RecoveryTrace:
        return tcls_sw_recover(self.table.tcls_unload, self.table.tcls_reload, start_cycle=start_cycle)

    def calibrate(self, traces: list[SectionTrace]) -> list[SectionTrace]:
        """Replace measured phases with the table's, keeping the measurement."""
        return [
            SectionTrace(
                t.section, t.mode, t.variant, t.role,
                self.table.phases(t.section, t.mode, t.variant, t.role),
                t.start_cycle, t.core, measured=list(t.phases),
            )
            for t in traces
        ]


# ---- functional extraction ----
def extract_section_traces(events, n_cores: int) -> list[SectionTrace]:
    """Rebuild section traces from the HMR event log of a run."""
    traces: list[SectionTrace] = []
    opened: dict[int, dict] = {}  # main -> in-flight entry / perf exit
    mc_exit: dict[int, dict] = {}
    perf_entry: dict[int, dict] = {}
    helper_reload: dict[int, dict] = {}  # helper core -> pending exit info
    modes: dict[int, tuple[str, str]] = {}

    for ev in events:
        kind, core, cycle = ev.kind, ev.core, ev.cycle
        if kind == "mark":
            if ev.value in (Mark.ENTER_MC, Mark.EXIT_PERF):
                section = "mc_entry" if ev.value == Mark.ENTER_MC else "perf_exit"
                opened[core] = {"section": section, "start": cycle}
            elif ev.value == Mark.EXIT_MC:
                mc_exit[core] = {"start": cycle}
            elif ev.value == Mark.OUT_MC and core in mc_exit:
                info = mc_exit[core]
                mode, variant = modes.get(core, ("", "sw"))
                traces.append(SectionTrace("mc_exit", mode, variant, "main", [("setup", cycle - info["start"])], info["start"], core))
            elif ev.value == Mark.ENTER_PERF:
                mode, variant = modes.get(core, ("", "sw"))
                members = group_members(core, CoreMode(mode), n_cores) if mode else (core,)
                perf_entry[core] = {"start": cycle, "waiting": set(members), "split": cycle}
            elif ev.value == Mark.IN_PERF:
                for main, info in list(perf_entry.items()):
                    info["waiting"].discard(core)
                    if not info["waiting"]:
                        mode, variant = modes.get(main, ("", "sw"))
                        traces.append(SectionTrace(
                            "perf_entry", mode, variant, "main",
                            [("setup", info["split"] - info["start"]), ("reload", cycle - info["split"])],
                            info["start"], main,
                        ))
                        del perf_entry[main]
        elif kind == "lock_request" and core in opened:
            opened[core]["request"] = cycle
            modes[core] = (CODE_MODE[ev.value & 3].value, "rapid" if ev.value & MODE_RAPID else "sw")
        elif kind == "locked" and core in opened:
            opened[core]["locked"] = cycle
            opened[core]["rapid"] = bool(ev.value)
            mode, _ = modes.get(core, ("", "sw"))
            modes[core] = (mode, "rapid" if ev.value else "sw")
        elif kind == "split" and core in perf_entry:
            perf_entry[core]["split"] = cycle
        elif kind == "unlock" and core in mc_exit:
            mode, variant = modes.get(core, ("", "sw"))
            for h in group_members(core, CoreMode(mode), n_cores)[1:] if mode else ():
                helper_reload[h] = {"main": core, "start": mc_exit[core]["start"], "unlock": cycle,
                                    "mode": mode, "variant": variant}
        elif kind == "fill_done" and core in opened and "locked" in opened[core]:
            traces.append(_close(opened.pop(core), core, cycle, "hw_fill", modes))
        elif kind == "sp_write" and ev.value == 0:
            if core in opened and "locked" in opened[core] and not opened[core]["rapid"]:
                traces.append(_close(opened.pop(core), core, cycle, "reload", modes))
            elif core in helper_reload:
                info = helper_reload.pop(core)
                traces.append(SectionTrace(
                    "mc_exit", info["mode"], info["variant"], "helper",
                    [("setup", info["unlock"] - info["start"]), ("reload", cycle - info["unlock"])],
                    info["start"], core,
                ))
    return traces


def _close(info: dict, main: int, cycle: int, last: str, modes) -> SectionTrace:
    mode, variant = modes.get(main, ("", "sw"))
    return SectionTrace(
        info["section"], mode, variant, "main",
        [
            ("setup", info["request"] - info["start"]),
            ("unload", info["locked"] - info["request"]),
            (last, cycle - info["locked"]),
        ],
        info["start"], main,
    )
