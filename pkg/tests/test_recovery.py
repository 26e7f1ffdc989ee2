import random

import pytest

from hmrsim.core import ArchState, BackupPorts, Core
from hmrsim.errors import ContractViolation, FaultLocationError
from hmrsim.recovery import (
    BootPath,
    RapidBudget,
    RapidRecoveryEngine,
    RecoveryRegion,
    TclsFsm,
    TclsState,
    backup_commit,
    boot_sp_check,
    rapid_recover,
    tcls_sw_recover,
)

CORE = Core([0x0000006F])  # j .


def random_state(rng: random.Random) -> ArchState:
    state = ArchState(
        pc=rng.randrange(0, 1 << 30) & ~3,
        mepc=rng.getrandbits(32),
        mcause=rng.getrandbits(32),
        mtvec=0x80,
        mstatus_mie=rng.randrange(2),
    )
    for i in range(1, 32):
        state.rf[i] = rng.getrandbits(32)
    return state


def test_rapid_recovery_restores_saved_state():
    rng = random.Random(7)
    for _ in range(100):
        saved = random_state(rng)
        region = RecoveryRegion(saved)
        members = [random_state(rng), random_state(rng)]
        trace = rapid_recover(CORE, members, region)
        assert trace.phases == [("clear", 4), ("halt", 4), ("restore", 16)]
        assert trace.total == 24
        assert max(trace.rf_writes_per_cycle) <= 2
        assert sum(trace.rf_writes_per_cycle) == 31
        for s in members:
            assert s.arch_view() == saved.arch_view()
            assert not s.halted


def test_engine_stays_busy_for_the_whole_budget():
    region = RecoveryRegion(ArchState(pc=0x40))
    engine = RapidRecoveryEngine(CORE, 1)
    engine.start(region, cycle=100)
    states = [ArchState(pc=0x200)]
    done = [engine.tick(states) for _ in range(24)]
    assert done == [False] * 23 + [True]
    assert not engine.busy
    assert engine.trace.group == 1 and engine.trace.start_cycle == 100


def test_single_backup_upset_is_corrected():
    saved = random_state(random.Random(3))
    region = RecoveryRegion(saved)
    region.flip_bit("x9", 12)
    region.flip_bit("pc", 0)
    state = ArchState()
    trace = rapid_recover(CORE, [state], region, cycle=50)
    assert not trace.aborted
    assert [(e.slot, e.status) for e in trace.ecc_events] == [("pc", "corrected"), ("x9", "corrected")]
    assert state.arch_view() == saved.arch_view()


def test_double_backup_upset_aborts():
    region = RecoveryRegion(ArchState(pc=0x40))
    region.flip_bit("mepc", 3)
    region.flip_bit("mepc", 17)
    state = ArchState(pc=0x200)
    trace = rapid_recover(CORE, [state], region)
    assert trace.aborted
    assert trace.phases == []
    assert trace.ecc_events[0].status == "uncorrectable"
    assert state.pc == 0x200


def test_flip_bit_rejects_bad_locations():
    region = RecoveryRegion()
    with pytest.raises(FaultLocationError):
        region.flip_bit("x0", 1)
    with pytest.raises(FaultLocationError):
        region.flip_bit("x9", 39)
    with pytest.raises(FaultLocationError):
        region.flip_bit("mscratch", 1)


def test_short_restore_budget_is_rejected():
    with pytest.raises(ContractViolation):
        RapidRecoveryEngine(CORE, 0, RapidBudget(4, 4, 15))


def test_region_commit_is_blocked_on_error_and_when_frozen():
    region = RecoveryRegion()
    ports = BackupPorts(0x44, ((5, 99),), (("mcause", 2),))
    assert not region.commit(ports, error=True)
    assert region.write_blocked
    assert region.read_state()[0].rf[5] == 0

    region.frozen = True
    assert not region.commit(ports)
    region.frozen = False
    assert region.commit(ports)
    state, events, bad = region.read_state()
    assert (state.pc, state.rf[5], state.mcause) == (0x44, 99, 2)
    assert events == [] and not bad


def test_backup_commit_stores_one_cycle_of_writes():
    region = backup_commit(RecoveryRegion(), BackupPorts(0x40, ((3, 7),)), error=False)
    state, _, _ = region.read_state()
    assert (state.pc, state.rf[3]) == (0x40, 7)

    before = region.digest()
    assert backup_commit(region, BackupPorts(0x80, ((3, 9),)), error=True).digest() == before


def test_region_digest_tracks_contents():
    a, b = RecoveryRegion(), RecoveryRegion()
    assert a.digest() == b.digest()
    b.commit(BackupPorts(4))
    assert a.digest() != b.digest()


def test_tcls_transitions():
    fsm = TclsFsm()
    with pytest.raises(ContractViolation):
        fsm.reload(0)
    with pytest.raises(ContractViolation):
        fsm.finish(0)
    fsm.unload(10)
    with pytest.raises(ContractViolation):
        fsm.unload(11)
    with pytest.raises(ContractViolation):
        fsm.restart_reload(11)
    fsm.reload(20)
    assert fsm.pending_clear
    trace = fsm.finish(25)
    assert fsm.state == TclsState.RUN
    assert trace.phases == [("unload", 10), ("reload", 5)]
    assert trace.unloads == 1


def test_calibrated_software_resync():
    trace = tcls_sw_recover()
    assert trace.phases == [("unload", 247), ("reload", 116)]
    assert trace.total == 363

    faulted = tcls_sw_recover(reload_faults=1, start_cycle=1000)
    assert faulted.total == 247 + 2 * 116
    assert faulted.unloads == 1 and faulted.reload_restarts == 1
    assert faulted.start_cycle == 1000


def test_boot_stack_pointer_check():
    assert boot_sp_check(0) == BootPath.NORMAL
    assert boot_sp_check(0x1003_F000) == BootPath.RELOAD
