import pytest

from hmrsim.asm import Program, assemble
from hmrsim.core import (
    BUS_ERROR,
    INTERRUPT_BIT,
    ArchState,
    Core,
    MemResponse,
    RespKind,
    TrapCause,
    synchronous_clear,
)
from hmrsim.errors import AssemblerError, ContractViolation


def run(text: str, cycles: int, mem: dict | None = None, irq_at: dict | None = None):
    """Drive one core against an ideal single-cycle memory."""
    program = assemble(text)
    core = Core(program.words)
    state = ArchState()
    mem = {} if mem is None else mem
    for c in range(cycles):
        irq = (irq_at or {}).get(c, 0)
        req = core.request(state, irq)
        resp = MemResponse()
        if req.valid:
            if req.we:
                mem[req.addr] = req.wdata
                resp = MemResponse(RespKind.GRANT, 0)
            else:
                resp = MemResponse(RespKind.GRANT, mem.get(req.addr, 0))
        core.step(state, resp, irq)
    return state, mem, program


def test_arithmetic_and_memory():
    state, mem, _ = run(
        """
        li a0, 5
        li a1, 7
        mul a2, a0, a1
        li t0, 0x10000000
        sw a2, 0(t0)
        lw a3, 0(t0)
        addi a3, a3, 1
        j .
        """,
        cycles=20,
    )
    assert mem[0x1000_0000] == 35
    assert state.rf[13] == 36


def test_loop_and_branches():
    state, _, _ = run(
        """
        li t0, 0
        li t1, 10
        li a0, 0
    loop:
        addi t0, t0, 1
        add a0, a0, t0
        bne t0, t1, loop
        j .
        """,
        cycles=60,
    )
    assert state.rf[10] == 55


def test_li_covers_full_width():
    state, _, _ = run("li a0, -1\nli a1, 0x12345678\nli a2, 0x800\nj .", cycles=8)
    assert state.rf[10:13] == [0xFFFF_FFFF, 0x1234_5678, 0x800]


def test_x0_stays_zero():
    state, _, _ = run("addi zero, zero, 5\nj .", cycles=3)
    assert state.rf[0] == 0


def test_illegal_instruction_traps_to_mtvec():
    state, _, program = run(
        """
        la t0, handler
        csrw mtvec, t0
    bad:
        .word 0
    handler:
        j .
        """,
        cycles=10,
    )
    assert state.mcause == TrapCause.ILLEGAL_INSTRUCTION
    assert state.mepc == program.address_of("bad")
    assert state.pc == program.address_of("handler")


def test_load_bus_error_traps():
    program = assemble("li t0, 0x20000000\nlw a0, 0(t0)\nj .")
    core = Core(program.words)
    state = ArchState()
    for _ in range(2):
        core.step(state)
    core.step(state, BUS_ERROR)
    assert state.mcause == TrapCause.LOAD_ACCESS_FAULT
    assert state.mepc == 8


def test_interrupt_taken_only_when_enabled():
    text = """
        la t0, handler
        csrw mtvec, t0
        li t1, 8
        csrw mstatus, t1
    spin:
        j spin
    handler:
        csrr a0, mcause
        j .
    """
    state, _, program = run(text, cycles=20, irq_at={12: 1 << 16})
    assert state.rf[10] == INTERRUPT_BIT | 16
    assert state.mepc == program.address_of("spin")
    assert state.mstatus_mie == 0

    masked, _, _ = run(text.replace("li t1, 8", "li t1, 0"), cycles=20, irq_at={12: 1 << 16})
    assert masked.mcause == 0


def test_mret_returns_and_reenables():
    state, _, _ = run(
        """
        la t0, target
        csrw mepc, t0
        mret
        li a0, 1
    target:
        li a1, 2
        j .
        """,
        cycles=10,
    )
    assert state.rf[10] == 0
    assert state.rf[11] == 2
    assert state.mstatus_mie == 1


def test_step_reports_backup_ports():
    core = Core(assemble("li a0, 3\nj .").words)
    state = ArchState()
    _, _, ports = core.step(state)
    assert ports.pc_write == 4
    assert ports.rf_writes == ((10, 0),)


def test_debug_halt_after_latency():
    core = Core(assemble("j .").words, debug_latency=4)
    state = ArchState()
    core.debug_halt_request(state)
    for _ in range(3):
        core.step(state)
        assert not state.halted
    core.step(state)
    assert state.halted


def test_debug_write_contract():
    state = ArchState()
    with pytest.raises(ContractViolation):
        Core.debug_write_state(state, pc=0x40)
    state.halted = True
    with pytest.raises(ContractViolation):
        Core.debug_write_state(state, rf_pairs=[(1, 1), (2, 2), (3, 3)])
    with pytest.raises(ContractViolation):
        Core.debug_write_state(state, rf_pairs=[(0, 1)])
    Core.debug_write_state(state, pc=0x40, rf_pairs=[(5, 9)], csr_writes=[("mepc", 0x80)])
    assert (state.pc, state.rf[5], state.mepc) == (0x40, 9, 0x80)


def test_synchronous_clear_resets_everything():
    state = ArchState(pc=0x44, mepc=3, mcause=4, mtvec=0x80, mstatus_mie=1)
    state.rf[7] = 99
    synchronous_clear(state)
    assert state.arch_view() == ArchState().arch_view()


def test_assembler_reports_line_numbers():
    with pytest.raises(AssemblerError) as exc:
        assemble("nop\nfrobnicate a0")
    assert exc.value.line_no == 2

    with pytest.raises(AssemblerError):
        assemble("a:\na:\nnop")


def test_binary_image_loads_back():
    program = assemble(".equ BASE, 0x100\nli a0, BASE + 4\n.org 0x10\nret")
    assert Program.from_binary(program.to_binary()).words == program.words
    assert len(program.words) == 5
