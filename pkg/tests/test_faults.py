import csv
import io

import numpy as np
import pytest

from hmrsim.cluster import RunResult
from hmrsim.core import ArchState, OutputBundle
from hmrsim.errors import ConfigError, ContractViolation, FaultLocationError
from hmrsim.faults import (
    BackupBit,
    CsrBit,
    FaultEvent,
    FaultKind,
    InterfaceBit,
    Outcome,
    PcBit,
    RfBit,
    classify,
    draw_event,
    event_from_spec,
    run_campaign,
)
from hmrsim.recovery import RecoveryRegion, RecoveryTrace
from hmrsim.schemas import FaultSpec


def result(digest="a", hang=False, errors=None, traces=None) -> RunResult:
    return RunResult(
        cycles=100, retired=90, eoc=0, fatal=None, hang=hang, result={}, result_digest=digest,
        result_correct=digest == "a", recovery_traces=traces or [], error_counters=errors or {},
    )


def test_location_validation():
    with pytest.raises(ContractViolation):
        RfBit(0, 1)
    with pytest.raises(FaultLocationError):
        RfBit(32, 1)
    with pytest.raises(FaultLocationError):
        PcBit(32)
    with pytest.raises(FaultLocationError):
        CsrBit("mstatus_mie", 1)
    with pytest.raises(FaultLocationError):
        InterfaceBit("we", 1)
    with pytest.raises(FaultLocationError):
        InterfaceBit("mystery", 0)
    with pytest.raises(FaultLocationError):
        BackupBit("pc", 39)


def test_fault_kind_must_match_location():
    with pytest.raises(ConfigError):
        FaultEvent(10, 0, RfBit(5, 1), FaultKind.SET)
    with pytest.raises(ConfigError):
        FaultEvent(10, 0, InterfaceBit("addr", 1), FaultKind.SEU)
    assert FaultEvent(10, 0, InterfaceBit("addr", 1), FaultKind.SET).is_transient


def test_state_upsets_flip_one_bit():
    state = ArchState(pc=0x100)
    region = RecoveryRegion()
    FaultEvent(1, 0, RfBit(9, 4)).apply_state(state, region)
    FaultEvent(1, 0, PcBit(2)).apply_state(state, region)
    FaultEvent(1, 0, CsrBit("mcause", 31)).apply_state(state, region)
    assert (state.rf[9], state.pc, state.mcause) == (16, 0x104, 1 << 31)

    FaultEvent(1, 0, BackupBit("x9", 5)).apply_state(state, region)
    _, events, bad = region.read_state()
    assert [e.slot for e in events] == ["x9"] and not bad


def test_transient_fault_touches_bundle_only():
    bundle = OutputBundle(0x40, 1, 0x1000_0000, 0, 0, 0xF)
    flipped = FaultEvent(3, 1, InterfaceBit("addr", 4), FaultKind.SET).apply_bundle(bundle)
    assert flipped.addr == 0x1000_0010
    assert flipped.ifetch_addr == bundle.ifetch_addr


def test_event_from_spec():
    event = event_from_spec(FaultSpec(cycle=5, core=2, location="csr", csr="mepc", bit=7))
    assert event == FaultEvent(5, 2, CsrBit("mepc", 7))
    assert event.as_dict() == {"cycle": 5, "core": 2, "kind": "seu", "location": "CsrBit", "csr": "mepc", "bit": 7}
    with pytest.raises(ContractViolation):
        event_from_spec(FaultSpec(cycle=5, core=2, location="rf", bit=1))


def test_classification():
    golden = result()
    assert classify(golden, result()) == Outcome.MASKED
    assert classify(golden, result(errors={0: 1})) == Outcome.DETECTED_RECOVERED
    assert classify(golden, result(traces=[RecoveryTrace("rapid", 0, 10, [("clear", 4)])])) == Outcome.DETECTED_RECOVERED
    assert classify(golden, result(traces=[RecoveryTrace("hw_fill", 0, 10, [("restore", 24)])])) == Outcome.MASKED
    assert classify(golden, result("b", errors={0: 1})) == Outcome.SDC
    assert classify(golden, result("b", hang=True)) == Outcome.HANG


def test_draw_event_is_deterministic():
    a = [draw_event(np.random.default_rng(11), 12, 5000, "all") for _ in range(3)]
    b = [draw_event(np.random.default_rng(11), 12, 5000, "all") for _ in range(3)]
    assert a == b
    rng = np.random.default_rng(5)
    for _ in range(200):
        event = draw_event(rng, 6, 1000, "state")
        assert 1 <= event.cycle < 1000 and 0 <= event.target_core < 6
        assert not event.is_transient
    rng = np.random.default_rng(5)
    assert all(draw_event(rng, 6, 1000, "interface").is_transient for _ in range(50))


def _campaign(make, mode: str, runs: int = 12, seed: int = 3):
    return make(n_cores=6, dim=4, campaign={"runs": runs, "seed": seed, "mode": mode, "target": "all"})


@pytest.mark.parametrize("mode", ["tmr", "tmr_rapid", "dmr_rapid"])
def test_protected_modes_have_no_silent_corruption(scenario, mode):
    report = run_campaign(_campaign(scenario, mode), workers=2)
    assert report.runs == 12 and len(report.records) == 12
    assert sum(report.outcomes.values()) == 12
    assert report.outcomes["sdc"] == 0
    assert report.outcomes["hang"] == 0
    assert [r.run_index for r in report.records] == list(range(12))


def test_campaign_is_reproducible(scenario):
    cfg = _campaign(scenario, "tmr_rapid", runs=8)
    first = run_campaign(cfg, workers=1)
    second = run_campaign(cfg, workers=3)
    assert first.report_hash == second.report_hash
    assert first.as_dict() == second.as_dict()


def test_unprotected_campaign_accounts_for_every_run(scenario):
    report = run_campaign(_campaign(scenario, "independent", runs=10), workers=2)
    assert sum(report.outcomes.values()) == 10
    assert report.outcomes["detected_recovered"] == 0


def test_campaign_csv(scenario):
    report = run_campaign(_campaign(scenario, "dmr_rapid", runs=4), workers=1)
    rows = list(csv.reader(io.StringIO(report.to_csv())))
    assert rows[0][0] == "run_index"
    assert len(rows) == 5
    assert {r[7] for r in rows[1:]} <= {o.value for o in Outcome}


@pytest.mark.slow
@pytest.mark.parametrize("mode", ["tmr", "tmr_rapid", "dmr_rapid"])
def test_thousand_run_campaign(scenario, mode):
    cfg = scenario(n_cores=12, dim=12, campaign={"runs": 1000, "seed": 0, "mode": mode, "target": "all"})
    report = run_campaign(cfg)
    assert report.outcomes["sdc"] == 0
    assert report.outcomes["hang"] == 0
