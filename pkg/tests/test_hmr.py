import pytest

from hmrsim.core import RespKind
from hmrsim.errors import ConfigError
from hmrsim.hmr import (
    CORE_BLOCK,
    CORE_STRIDE,
    MODE_PERF,
    MODE_RAPID,
    ClearCores,
    CoreMode,
    FreezeBackup,
    HmrOptions,
    HmrUnit,
    PendingAction,
    RaiseIrq,
    Reg,
    dmr_partner,
    group_members,
    mode_available,
    tmr_partners,
)
from hmrsim.interconnect import EventUnit, MemoryMap
from hmrsim.recovery import TclsState


def unit(n=6, **kwargs) -> HmrUnit:
    return HmrUnit(n, EventUnit(n), MemoryMap(), **kwargs)


def read(hmr, requester, offset):
    resp = hmr.config_access(requester, offset, False)
    assert resp.kind == RespKind.GRANT
    return resp.rdata


def write(hmr, requester, offset, value):
    return hmr.config_access(requester, offset, True, value)


def mode_reg(core):
    return CORE_BLOCK + CORE_STRIDE * core


def test_partner_mapping():
    assert dmr_partner(1, 12) == 7
    assert tmr_partners(1, 12) == (5, 9)
    assert group_members(0, CoreMode.TMR, 6) == (0, 2, 4)
    with pytest.raises(ConfigError):
        dmr_partner(6, 12)
    with pytest.raises(ConfigError):
        tmr_partners(0, 8)


def test_mode_availability():
    assert mode_available(CoreMode.DMR, 4) and not mode_available(CoreMode.TMR, 4)
    assert mode_available(CoreMode.TMR, 12) and mode_available(CoreMode.DMR, 12)
    assert not mode_available(CoreMode.DMR, 5)


def test_global_registers():
    hmr = unit()
    assert read(hmr, 3, Reg.CORE_ID) == 3
    assert read(hmr, 0, Reg.N_CORES) == 6
    assert read(hmr, 0, Reg.AVAIL) == 0b11
    assert unit(4).config_access(0, Reg.AVAIL, False).rdata == 0b01
    assert hmr.config_access(0, 0x28, False).kind == RespKind.ERROR
    assert hmr.config_access(0, 0x2, False).kind == RespKind.ERROR


def test_eoc_fatal_and_marks():
    hmr = unit()
    write(hmr, 2, Reg.MARK, 5)
    write(hmr, 1, Reg.FATAL, 7)
    write(hmr, 0, Reg.EOC, 1)
    assert hmr.eoc == 1
    assert hmr.fatal == (1, 7)
    assert [(e.kind, e.core, e.value) for e in hmr.events] == [("mark", 2, 5), ("fatal", 1, 7), ("eoc", 0, 1)]


def test_options_register_round_trips():
    hmr = unit()
    write(hmr, 0, Reg.OPTIONS, 0b110)
    assert hmr.options == HmrOptions(False, True, True)
    assert read(hmr, 0, Reg.OPTIONS) == 0b110


def test_enter_dmr_sets_up_the_lock():
    hmr = unit()
    assert write(hmr, 0, mode_reg(0), 1).kind == RespKind.GRANT
    assert hmr.pending == {0: PendingAction.SAVE, 3: PendingAction.SAVE}
    assert read(hmr, 3, Reg.PENDING) == PendingAction.SAVE
    assert hmr.eu.participants[32] == frozenset({0, 3})
    assert read(hmr, 3, Reg.LOCK_BARRIER) == MemoryMap().barrier_addr(32)
    assert hmr.take_actions() == [RaiseIrq((0, 3), 16)]
    assert hmr.virtual_ids() == list(range(6))

    transition = hmr.complete_lock(0)
    assert transition.kind == "enter_mc" and not transition.rapid
    assert hmr.virtual_ids() == [0, 1, 2, 4, 5]
    assert read(hmr, 0, mode_reg(0)) == 1
    assert read(hmr, 0, mode_reg(0) + 0xC) & 0b111 == 0b101
    assert hmr.pending == {}


def test_rapid_entry_abandons_main_context():
    hmr = unit(options=HmrOptions(rapid_recovery_enabled=True))
    write(hmr, 0, mode_reg(0), 2 | MODE_RAPID)
    assert hmr.pending[0] == PendingAction.ABANDON
    assert hmr.pending[2] == hmr.pending[4] == PendingAction.SAVE
    assert FreezeBackup(0) in hmr.take_actions()


def test_rapid_bit_ignored_when_disabled():
    hmr = unit()
    write(hmr, 0, mode_reg(0), 2 | MODE_RAPID)
    assert hmr.pending[0] == PendingAction.SAVE
    assert not any(isinstance(a, FreezeBackup) for a in hmr.take_actions())


def test_unavailable_mode_is_a_bus_error():
    hmr = unit(4)
    assert write(hmr, 0, mode_reg(0), 2).kind == RespKind.ERROR
    assert write(hmr, 2, mode_reg(2), 1).kind == RespKind.ERROR
    assert write(hmr, 0, mode_reg(0), 3).kind == RespKind.ERROR
    assert hmr.groups == {}


def test_exit_releases_helpers():
    hmr = unit()
    write(hmr, 0, mode_reg(0), 1)
    hmr.complete_lock(0)
    hmr.take_actions()
    write(hmr, 0, mode_reg(0), 0)
    assert hmr.groups == {}
    assert hmr.take_actions() == [ClearCores((3,), "exit_mc")]
    assert hmr.virtual_ids() == list(range(6))


def test_exit_on_unlocked_group_is_a_noop():
    hmr = unit()
    assert write(hmr, 1, mode_reg(1), 0).kind == RespKind.GRANT
    assert hmr.events[-1].kind == "noop_exit"
    assert hmr.take_actions() == []


def test_performance_split_and_relock():
    hmr = unit()
    write(hmr, 0, mode_reg(0), 2)
    hmr.complete_lock(0)
    write(hmr, 0, mode_reg(0), MODE_PERF)
    assert hmr.virtual_ids() == list(range(6))
    assert read(hmr, 0, mode_reg(0) + 0xC) & 0b1000
    write(hmr, 0, mode_reg(0), 2)
    assert hmr.groups[0].transition.kind == "exit_perf"
    assert hmr.pending == {0: PendingAction.SAVE, 2: PendingAction.ABANDON, 4: PendingAction.ABANDON}


def test_error_counter_register():
    hmr = unit(boot_mode=CoreMode.DMR)
    hmr.record_error(1)
    hmr.record_error(1)
    errors = mode_reg(1) + 0x8
    assert read(hmr, 1, errors) == 2
    write(hmr, 1, errors, 0)
    assert read(hmr, 1, errors) == 0


def test_boot_locked_group_survives_restart():
    hmr = unit(boot_mode=CoreMode.DMR)
    hmr.restart_group(0)
    assert hmr.groups[0].locked
    assert hmr.take_actions() == [ClearCores((0, 3), "restart")]


def test_runtime_group_dropped_on_restart():
    hmr = unit()
    write(hmr, 0, mode_reg(0), 1)
    hmr.complete_lock(0)
    hmr.restart_group(0)
    assert 0 not in hmr.groups


def test_tcls_resynchronization_cycle():
    hmr = unit(3, boot_mode=CoreMode.TMR)
    fsm = hmr.groups[0].tcls
    hmr.cycle = 10
    hmr.tcls_error(0)
    assert fsm.state == TclsState.UNLOAD
    assert hmr.take_actions() == [RaiseIrq((0, 1, 2), 17)]

    hmr.cycle = 40
    write(hmr, 0, Reg.SP_SELF, 0x1000_F000)
    assert fsm.state == TclsState.RELOAD
    assert hmr.take_actions() == [ClearCores((0, 1, 2), "tcls_reload")]

    hmr.cycle = 60
    write(hmr, 0, Reg.SP_SELF, 0)
    assert fsm.state == TclsState.RUN
    [trace] = hmr.tcls_traces
    assert trace.kind == "tcls_sw"
    assert trace.phases == [("unload", 30), ("reload", 20)]
    assert trace.total == 50


def test_error_during_reload_restarts_reload_only():
    hmr = unit(3, boot_mode=CoreMode.TMR)
    hmr.tcls_error(0)
    write(hmr, 0, Reg.SP_SELF, 0x1000_F000)
    hmr.take_actions()
    hmr.tcls_error(0)
    fsm = hmr.groups[0].tcls
    assert fsm.state == TclsState.RELOAD
    assert fsm.reload_restarts == 1
    assert hmr.take_actions() == [ClearCores((0, 1, 2), "tcls_reload")]


def test_delayed_resync_waits_for_a_second_faulty_core():
    hmr = unit(3, boot_mode=CoreMode.TMR, options=HmrOptions(tmr_delayed_resync=True))
    fsm = hmr.groups[0].tcls
    hmr.tcls_error(0, dissenter=2)
    assert fsm.state == TclsState.RUN
    assert fsm.deferred_core == 2
    assert (hmr.events[-1].kind, hmr.events[-1].value) == ("resync_deferred", 2)

    for _ in range(5):
        hmr.tcls_error(0, dissenter=2)
    assert fsm.state == TclsState.RUN
    assert hmr.take_actions() == []

    hmr.tcls_error(0, dissenter=1)
    assert fsm.state == TclsState.UNLOAD
    assert hmr.take_actions() == [RaiseIrq((0, 1, 2), 17)]


def test_delayed_resync_does_not_defer_a_group_failure():
    hmr = unit(3, boot_mode=CoreMode.TMR, options=HmrOptions(tmr_delayed_resync=True))
    hmr.tcls_error(0, group_failure=True)
    assert hmr.groups[0].tcls.state == TclsState.UNLOAD
    assert not any(e.kind == "resync_deferred" for e in hmr.events)


def test_boot_mode_must_fit_core_count():
    with pytest.raises(ConfigError):
        unit(4, boot_mode=CoreMode.TMR)
