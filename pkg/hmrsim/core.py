"""Minimal RV32I+MUL core.

One simulated cycle is two calls: ``request()`` yields the OutputBundle the
core presents to the HMR unit, ``step()`` consumes the single-cycle memory
response and retires at most one instruction. Both are pure functions of the
state and the sampled interrupt lines, so two cores in lockstep stay bitwise
equal as long as their inputs do.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple

from .errors import ContractViolation

MASK32 = 0xFFFF_FFFF
INTERRUPT_BIT = 0x8000_0000

IRQ_GROUPING = 16
IRQ_RESYNC = 17


class TrapCause(enum.IntEnum):
    ILLEGAL_INSTRUCTION = 2
    LOAD_ACCESS_FAULT = 5
    STORE_ACCESS_FAULT = 7


class Csr(enum.IntEnum):
    MSTATUS = 0x300
    MTVEC = 0x305
    MEPC = 0x341
    MCAUSE = 0x342


CSR_FIELDS = ("mepc", "mcause", "mtvec", "mstatus_mie")
CSR_WIDTH = {"mepc": 32, "mcause": 32, "mtvec": 32, "mstatus_mie": 1}


def sign_extend(value: int, bits: int) -> int:
    sign = 1 << (bits - 1)
    return (value & (sign - 1)) - (value & sign)


def to_signed(value: int) -> int:
    return value - (1 << 32) if value & 0x8000_0000 else value


# ---- bundles and ports ----------------------------------------------------------
class OutputBundle(NamedTuple):
    ifetch_addr: int = 0
    valid: int = 0
    addr: int = 0
    wdata: int = 0
    we: int = 0
    be: int = 0

    @property
    def data_req(self) -> dict:
        return {"valid": self.valid, "addr": self.addr, "wdata": self.wdata, "we": self.we, "byte_enable": self.be}

    def canonical(self) -> "OutputBundle":
        if self.valid:
            return self
        return OutputBundle(self.ifetch_addr)


BUNDLE_FIELDS: tuple[tuple[str, int], ...] = (
    ("ifetch_addr", 32),
    ("valid", 1),
    ("addr", 32),
    ("wdata", 32),
    ("we", 1),
    ("be", 4),
)

GATED = OutputBundle()


class BackupPorts(NamedTuple):
    pc_write: int | None = None
    rf_writes: tuple[tuple[int, int], ...] = ()
    csr_writes: tuple[tuple[str, int], ...] = ()

    @property
    def empty(self) -> bool:
        return self.pc_write is None and not self.rf_writes and not self.csr_writes


EMPTY_PORTS = BackupPorts()


class RespKind(enum.IntEnum):
    NONE = 0
    GRANT = 1
    STALL = 2
    ERROR = 3


class MemResponse(NamedTuple):
    kind: RespKind = RespKind.NONE
    rdata: int = 0


NO_RESPONSE = MemResponse()
STALL = MemResponse(RespKind.STALL)
BUS_ERROR = MemResponse(RespKind.ERROR)


# ---- architectural state --------------------------------------------------------
@dataclass(slots=True)
class ArchState:
    pc: int = 0
    rf: list[int] = field(default_factory=lambda: [0] * 32)
    mepc: int = 0
    mcause: int = 0
    mtvec: int = 0
    mstatus_mie: int = 0
    halted: bool = False
    halt_countdown: int = 0

    def copy(self) -> "ArchState":
        return ArchState(
            self.pc, list(self.rf), self.mepc, self.mcause, self.mtvec,
            self.mstatus_mie, self.halted, self.halt_countdown,
        )

    @property
    def csrs(self) -> dict[str, int]:
        return {name: getattr(self, name) for name in CSR_FIELDS}

    def arch_view(self) -> tuple:
        """Recovery payload only: PC, RF and the saved CSRs."""
        return (self.pc, tuple(self.rf), self.mepc, self.mcause, self.mtvec, self.mstatus_mie)

    def write_reg(self, index: int, value: int) -> None:
        if index:
            self.rf[index] = value & MASK32


def cleared_default(boot_addr: int = 0) -> ArchState:
    return ArchState(pc=boot_addr)


def synchronous_clear(state: ArchState, boot_addr: int = 0) -> ArchState:
    """Reset every architectural flip-flop to its default; pc goes to boot."""
    state.pc = boot_addr
    state.rf[:] = [0] * 32
    state.mepc = state.mcause = state.mtvec = state.mstatus_mie = 0
    state.halted = False
    state.halt_countdown = 0
    return state


def apply_ports(state: ArchState, ports: BackupPorts) -> ArchState:
    """Replay one cycle of backup-port writes onto a shadow state."""
    if ports.pc_write is not None:
        state.pc = ports.pc_write
    for index, value in ports.rf_writes:
        state.write_reg(index, value)
    for name, value in ports.csr_writes:
        setattr(state, name, value)
    return state


# ---- decoding -------------------------------------------------------------------
class Instr(NamedTuple):
    op: str
    rd: int = 0
    rs1: int = 0
    rs2: int = 0
    imm: int = 0


ILLEGAL = Instr("illegal")

_BRANCH = {0: "beq", 1: "bne", 4: "blt", 5: "bge", 6: "bltu", 7: "bgeu"}
_OP_IMM = {0: "addi", 2: "slti", 3: "sltiu", 4: "xori", 6: "ori", 7: "andi"}
_OP = {0: "add", 1: "sll", 2: "slt", 3: "sltu", 4: "xor", 5: "srl", 6: "or", 7: "and"}
MRET_WORD = 0x3020_0073


def decode(word: int) -> Instr:
    opcode = word & 0x7F
    rd = (word >> 7) & 31
    f3 = (word >> 12) & 7
    rs1 = (word >> 15) & 31
    rs2 = (word >> 20) & 31
    f7 = word >> 25

    if opcode == 0x37:
        return Instr("lui", rd, imm=word & 0xFFFF_F000)
    if opcode == 0x17:
        return Instr("auipc", rd, imm=word & 0xFFFF_F000)
    if opcode == 0x6F:
        imm = (
            ((word >> 31) & 1) << 20
            | ((word >> 12) & 0xFF) << 12
            | ((word >> 20) & 1) << 11
            | ((word >> 21) & 0x3FF) << 1
        )
        return Instr("jal", rd, imm=sign_extend(imm, 21))
    if opcode == 0x67 and f3 == 0:
        return Instr("jalr", rd, rs1, imm=sign_extend(word >> 20, 12))
    if opcode == 0x63 and f3 in _BRANCH:
        imm = (
            ((word >> 31) & 1) << 12
            | ((word >> 7) & 1) << 11
            | ((word >> 25) & 0x3F) << 5
            | ((word >> 8) & 0xF) << 1
        )
        return Instr(_BRANCH[f3], 0, rs1, rs2, sign_extend(imm, 13))
    if opcode == 0x03 and f3 == 2:
        return Instr("lw", rd, rs1, imm=sign_extend(word >> 20, 12))
    if opcode == 0x23 and f3 == 2:
        return Instr("sw", 0, rs1, rs2, sign_extend((f7 << 5) | rd, 12))
    if opcode == 0x13:
        if f3 in _OP_IMM:
            return Instr(_OP_IMM[f3], rd, rs1, imm=sign_extend(word >> 20, 12))
        if f3 == 1 and f7 == 0:
            return Instr("slli", rd, rs1, imm=rs2)
        if f3 == 5 and f7 == 0:
            return Instr("srli", rd, rs1, imm=rs2)
        if f3 == 5 and f7 == 0x20:
            return Instr("srai", rd, rs1, imm=rs2)
        return ILLEGAL
    if opcode == 0x33:
        if f7 == 0:
            return Instr(_OP[f3], rd, rs1, rs2)
        if f7 == 0x20 and f3 in (0, 5):
            return Instr("sub" if f3 == 0 else "sra", rd, rs1, rs2)
        if f7 == 1 and f3 == 0:
            return Instr("mul", rd, rs1, rs2)
        return ILLEGAL
    if opcode == 0x73:
        if word == MRET_WORD:
            return Instr("mret")
        if f3 == 1:
            return Instr("csrrw", rd, rs1, imm=word >> 20)
        if f3 == 2:
            return Instr("csrrs", rd, rs1, imm=word >> 20)
    return ILLEGAL


def _alu(op: str, a: int, b: int) -> int:
    if op in ("add", "addi"):
        return (a + b) & MASK32
    if op == "sub":
        return (a - b) & MASK32
    if op in ("xor", "xori"):
        return (a ^ b) & MASK32
    if op in ("or", "ori"):
        return (a | b) & MASK32
    if op in ("and", "andi"):
        return a & b & MASK32
    if op in ("sll", "slli"):
        return (a << (b & 31)) & MASK32
    if op in ("srl", "srli"):
        return (a & MASK32) >> (b & 31)
    if op in ("sra", "srai"):
        return (to_signed(a) >> (b & 31)) & MASK32
    if op in ("slt", "slti"):
        return int(to_signed(a) < to_signed(b & MASK32))
    if op in ("sltu", "sltiu"):
        return int((a & MASK32) < (b & MASK32))
    if op == "mul":
        return (a * b) & MASK32
    raise ContractViolation(f"not an ALU op: {op}")


_BRANCH_TAKEN = {
    "beq": lambda a, b: a == b,
    "bne": lambda a, b: a != b,
    "blt": lambda a, b: to_signed(a) < to_signed(b),
    "bge": lambda a, b: to_signed(a) >= to_signed(b),
    "bltu": lambda a, b: a < b,
    "bgeu": lambda a, b: a >= b,
}
_R_TYPE = {"add", "sub", "sll", "slt", "sltu", "xor", "srl", "sra", "or", "and", "mul"}
_I_TYPE = {"addi", "slti", "sltiu", "xori", "ori", "andi", "slli", "srli", "srai"}


# ---- core -----------------------------------------------------------------------
class Core:
    """Executes a program image; holds no per-core state of its own.

    The same Core serves every core of a cluster: each simulated core is an
    ArchState passed in and out.
    """

    def __init__(self, words: list[int], boot_addr: int = 0, debug_latency: int = 4):
        self.boot_addr = boot_addr
        self.debug_latency = debug_latency
        self._decoded = [decode(w) for w in words]

    # ---- fetch / irq ----
    def fetch(self, pc: int) -> Instr:
        if pc & 3:
            return ILLEGAL
        index = pc >> 2
        if index >= len(self._decoded):
            return ILLEGAL
        return self._decoded[index]

    @staticmethod
    def irq_to_take(state: ArchState, irq: int) -> int | None:
        if not irq or not state.mstatus_mie or state.halted or state.halt_countdown:
            return None
        return (irq & -irq).bit_length() - 1

    # ---- outputs ----
    def request(self, state: ArchState, irq: int = 0) -> OutputBundle:
        if state.halted or state.halt_countdown or self.irq_to_take(state, irq) is not None:
            return OutputBundle(state.pc)
        ins = self.fetch(state.pc)
        if ins.op == "lw":
            return OutputBundle(state.pc, 1, (state.rf[ins.rs1] + ins.imm) & MASK32, 0, 0, 0xF)
        if ins.op == "sw":
            addr = (state.rf[ins.rs1] + ins.imm) & MASK32
            return OutputBundle(state.pc, 1, addr, state.rf[ins.rs2], 1, 0xF)
        return OutputBundle(state.pc)

    # ---- execution ----
    def step(
        self, state: ArchState, resp: MemResponse = NO_RESPONSE, irq: int = 0
    ) -> tuple[ArchState, OutputBundle, BackupPorts]:
        """Advance one cycle in place; returns the state, this cycle's bundle and ports."""
        if state.halted or state.halt_countdown:
            if state.halt_countdown:
                state.halt_countdown -= 1
                if state.halt_countdown == 0:
                    state.halted = True
            return state, OutputBundle(state.pc), EMPTY_PORTS

        bundle = self.request(state, irq)
        irq_id = self.irq_to_take(state, irq)
        if irq_id is not None:
            return state, bundle, self._trap(state, INTERRUPT_BIT | irq_id)

        ins = self.fetch(state.pc)
        op = ins.op
        rf = state.rf
        pc = state.pc
        next_pc = (pc + 4) & MASK32

        if op == "lw" or op == "sw":
            if resp.kind == RespKind.ERROR:
                cause = TrapCause.LOAD_ACCESS_FAULT if op == "lw" else TrapCause.STORE_ACCESS_FAULT
                return state, bundle, self._trap(state, cause)
            if resp.kind != RespKind.GRANT:
                return state, bundle, EMPTY_PORTS
            state.pc = next_pc
            if op == "lw" and ins.rd:
                value = resp.rdata & MASK32
                rf[ins.rd] = value
                return state, bundle, BackupPorts(next_pc, ((ins.rd, value),))
            return state, bundle, BackupPorts(next_pc)

        if op in _I_TYPE:
            return state, bundle, self._write_back(state, ins.rd, _alu(op, rf[ins.rs1], ins.imm), next_pc)
        if op in _R_TYPE:
            return state, bundle, self._write_back(state, ins.rd, _alu(op, rf[ins.rs1], rf[ins.rs2]), next_pc)
        if op in _BRANCH_TAKEN:
            target = (pc + ins.imm) & MASK32 if _BRANCH_TAKEN[op](rf[ins.rs1], rf[ins.rs2]) else next_pc
            state.pc = target
            return state, bundle, BackupPorts(target)
        if op == "lui":
            return state, bundle, self._write_back(state, ins.rd, ins.imm, next_pc)
        if op == "auipc":
            return state, bundle, self._write_back(state, ins.rd, (pc + ins.imm) & MASK32, next_pc)
        if op == "jal":
            return state, bundle, self._write_back(state, ins.rd, next_pc, (pc + ins.imm) & MASK32)
        if op == "jalr":
            target = (rf[ins.rs1] + ins.imm) & MASK32 & ~1
            return state, bundle, self._write_back(state, ins.rd, next_pc, target)
        if op == "mret":
            state.pc = state.mepc
            state.mstatus_mie = 1
            return state, bundle, BackupPorts(state.pc, (), (("mstatus_mie", 1),))
        if op == "csrrw" or op == "csrrs":
            return state, bundle, self._csr(state, ins, next_pc)
        return state, bundle, self._trap(state, TrapCause.ILLEGAL_INSTRUCTION)

    def _write_back(self, state: ArchState, rd: int, value: int, next_pc: int) -> BackupPorts:
        state.pc = next_pc
        if rd:
            state.rf[rd] = value
            return BackupPorts(next_pc, ((rd, value),))
        return BackupPorts(next_pc)

    def _trap(self, state: ArchState, cause: int) -> BackupPorts:
        state.mepc = state.pc
        state.mcause = cause
        state.mstatus_mie = 0
        state.pc = state.mtvec
        return BackupPorts(
            state.pc, (), (("mepc", state.mepc), ("mcause", cause), ("mstatus_mie", 0))
        )

    def _csr(self, state: ArchState, ins: Instr, next_pc: int) -> BackupPorts:
        name = _CSR_BY_ADDR.get(ins.imm)
        if name is None:
            return self._trap(state, TrapCause.ILLEGAL_INSTRUCTION)
        old = state.mstatus_mie << 3 if name == "mstatus_mie" else getattr(state, name)
        src = state.rf[ins.rs1]
        csr_writes: tuple[tuple[str, int], ...] = ()
        if ins.op == "csrrw" or ins.rs1:
            new = src if ins.op == "csrrw" else old | src
            if name == "mstatus_mie":
                new = (new >> 3) & 1
            setattr(state, name, new)
            csr_writes = ((name, new),)
        ports = self._write_back(state, ins.rd, old, next_pc)
        return BackupPorts(ports.pc_write, ports.rf_writes, csr_writes)

    # ---- debug ----
    def debug_halt_request(self, state: ArchState) -> ArchState:
        """Halt takes effect ``debug_latency`` steps after the request."""
        if not state.halted and not state.halt_countdown:
            state.halt_countdown = self.debug_latency
        return state

    @staticmethod
    def debug_write_state(
        state: ArchState,
        pc: int | None = None,
        rf_pairs: tuple[tuple[int, int], ...] | list = (),
        csr_writes: tuple[tuple[str, int], ...] | list = (),
    ) -> ArchState:
        if not state.halted:
            raise ContractViolation("debug writes require a halted core")
        if len(rf_pairs) > 2:
            raise ContractViolation(f"{len(rf_pairs)} RF writes in one cycle, the RF has 2 write ports")
        for index, value in rf_pairs:
            if not 1 <= index <= 31:
                raise ContractViolation(f"register x{index} is not writable")
            state.rf[index] = value & MASK32
        for name, value in csr_writes:
            if name not in CSR_WIDTH:
                raise ContractViolation(f"unknown csr {name}")
            setattr(state, name, value & ((1 << CSR_WIDTH[name]) - 1))
        if pc is not None:
            state.pc = pc & MASK32
        return state

    @staticmethod
    def debug_resume(state: ArchState) -> ArchState:
        state.halted = False
        state.halt_countdown = 0
        return state


_CSR_BY_ADDR = {
    Csr.MEPC: "mepc",
    Csr.MCAUSE: "mcause",
    Csr.MTVEC: "mtvec",
    Csr.MSTATUS: "mstatus_mie",
}
