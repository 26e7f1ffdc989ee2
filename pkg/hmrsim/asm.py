"""Two-pass assembler for the core's instruction subset.

Programs are listings with one instruction per line. Labels end in ``:``,
comments start with ``#``. Directives: ``.equ NAME, expr``, ``.org addr``,
``.word expr``.
"""
from __future__ import annotations

import ast
import operator
import re
import struct
from dataclasses import dataclass, field

from .core import MRET_WORD, Csr
from .errors import AssemblerError

ABI_NAMES = {
    "zero": 0, "ra": 1, "sp": 2, "gp": 3, "tp": 4, "t0": 5, "t1": 6, "t2": 7,
    "s0": 8, "fp": 8, "s1": 9, "a0": 10, "a1": 11, "a2": 12, "a3": 13, "a4": 14,
    "a5": 15, "a6": 16, "a7": 17, "s2": 18, "s3": 19, "s4": 20, "s5": 21,
    "s6": 22, "s7": 23, "s8": 24, "s9": 25, "s10": 26, "s11": 27, "t3": 28,
    "t4": 29, "t5": 30, "t6": 31,
}
CSR_NAMES = {"mstatus": Csr.MSTATUS, "mtvec": Csr.MTVEC, "mepc": Csr.MEPC, "mcause": Csr.MCAUSE}

R_OPS = {
    "add": (0, 0), "sub": (0, 0x20), "sll": (1, 0), "slt": (2, 0), "sltu": (3, 0),
    "xor": (4, 0), "srl": (5, 0), "sra": (5, 0x20), "or": (6, 0), "and": (7, 0),
    "mul": (0, 1),
}
I_OPS = {"addi": 0, "slti": 2, "sltiu": 3, "xori": 4, "ori": 6, "andi": 7}
SHIFT_OPS = {"slli": (1, 0), "srli": (5, 0), "srai": (5, 0x20)}
BRANCH_OPS = {"beq": 0, "bne": 1, "blt": 4, "bge": 5, "bltu": 6, "bgeu": 7}
TWO_WORD = {"li", "la"}

_MEM_OPERAND = re.compile(r"^(.*)\((\w+)\)$")
_BINOPS = {
    ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
    ast.LShift: operator.lshift, ast.RShift: operator.rshift,
    ast.BitOr: operator.or_, ast.BitAnd: operator.and_, ast.FloorDiv: operator.floordiv,
}


@dataclass
class Program:
    words: list[int]
    symbols: dict[str, int] = field(default_factory=dict)

    def address_of(self, label: str) -> int:
        return self.symbols[label]

    def to_binary(self) -> bytes:
        return struct.pack(f"<{len(self.words)}I", *self.words)

    @classmethod
    def from_binary(cls, data: bytes) -> "Program":
        if len(data) % 4:
            data = data + b"\0" * (4 - len(data) % 4)
        return cls(list(struct.unpack(f"<{len(data) // 4}I", data)))


@dataclass
class _Line:
    no: int
    text: str
    mnemonic: str
    operands: list[str]
    addr: int


# ---- HELPERS ----
def _split_operands(rest: str) -> list[str]:
    return [p.strip() for p in rest.split(",")] if rest.strip() else []


def _eval(expr: str, symbols: dict[str, int], line: _Line | None = None) -> int:
    def walk(node):
        if isinstance(node, ast.Expression):
            return walk(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, int):
            return node.value
        if isinstance(node, ast.Name):
            if node.id not in symbols:
                raise KeyError(node.id)
            return symbols[node.id]
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.USub):
            return -walk(node.operand)
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](walk(node.left), walk(node.right))
        raise ValueError("unsupported expression")

    try:
        return walk(ast.parse(expr.strip(), mode="eval"))
    except KeyError as exc:
        raise AssemblerError(line.no if line else 0, line.text if line else expr, f"unknown symbol {exc}") from None
    except (SyntaxError, ValueError):
        raise AssemblerError(line.no if line else 0, line.text if line else expr, "bad expression") from None


def _reg(token: str, line: _Line) -> int:
    token = token.strip()
    if token in ABI_NAMES:
        return ABI_NAMES[token]
    if re.fullmatch(r"x([12]?\d|3[01])", token):
        return int(token[1:])
    raise AssemblerError(line.no, line.text, f"bad register {token!r}")


def _check_range(value: int, bits: int, line: _Line, signed: bool = True) -> int:
    lo, hi = (-(1 << (bits - 1)), (1 << (bits - 1)) - 1) if signed else (0, (1 << bits) - 1)
    if not lo <= value <= hi:
        raise AssemblerError(line.no, line.text, f"immediate {value} out of range")
    return value


def _r(f7, rs2, rs1, f3, rd, op):
    return (f7 << 25) | (rs2 << 20) | (rs1 << 15) | (f3 << 12) | (rd << 7) | op


def _i(imm, rs1, f3, rd, op):
    return ((imm & 0xFFF) << 20) | (rs1 << 15) | (f3 << 12) | (rd << 7) | op


def _s(imm, rs2, rs1, f3, op):
    return (((imm >> 5) & 0x7F) << 25) | (rs2 << 20) | (rs1 << 15) | (f3 << 12) | ((imm & 0x1F) << 7) | op


def _b(imm, rs2, rs1, f3):
    return (
        ((imm >> 12) & 1) << 31 | ((imm >> 5) & 0x3F) << 25 | (rs2 << 20) | (rs1 << 15)
        | (f3 << 12) | ((imm >> 1) & 0xF) << 8 | ((imm >> 11) & 1) << 7 | 0x63
    )


def _j(imm, rd):
    return (
        ((imm >> 20) & 1) << 31 | ((imm >> 1) & 0x3FF) << 21 | ((imm >> 11) & 1) << 20
        | ((imm >> 12) & 0xFF) << 12 | (rd << 7) | 0x6F
    )


def _hi_lo(value: int) -> tuple[int, int]:
    value &= 0xFFFF_FFFF
    hi = ((value + 0x800) >> 12) & 0xFFFFF
    lo = value - ((hi << 12) & 0xFFFF_FFFF)
    if lo >= 0x800:
        lo -= 1 << 32
    return hi, lo


def _csr(token: str, symbols: dict[str, int], line: _Line) -> int:
    token = token.strip()
    if token in CSR_NAMES:
        return int(CSR_NAMES[token])
    return _eval(token, symbols, line)


def _mem(token: str, symbols: dict[str, int], line: _Line) -> tuple[int, int]:
    m = _MEM_OPERAND.match(token.strip())
    if not m:
        raise AssemblerError(line.no, line.text, "expected imm(reg)")
    offset = _eval(m.group(1), symbols, line) if m.group(1).strip() else 0
    return _check_range(offset, 12, line), _reg(m.group(2), line)


def _expect(line: _Line, count: int) -> list[str]:
    if len(line.operands) != count:
        raise AssemblerError(line.no, line.text, f"expected {count} operands")
    return line.operands


# ---- encoding ----
def _encode(line: _Line, symbols: dict[str, int]) -> list[int]:
    m, ops, pc = line.mnemonic, line.operands, line.addr

    def target(token: str, bits: int) -> int:
        if token.strip() == ".":
            return 0
        offset = _eval(token, symbols, line) - pc
        if offset & 1:
            raise AssemblerError(line.no, line.text, "misaligned target")
        return _check_range(offset, bits, line)

    if m in R_OPS:
        rd, rs1, rs2 = _expect(line, 3)
        f3, f7 = R_OPS[m]
        return [_r(f7, _reg(rs2, line), _reg(rs1, line), f3, _reg(rd, line), 0x33)]
    if m in I_OPS:
        rd, rs1, imm = _expect(line, 3)
        return [_i(_check_range(_eval(imm, symbols, line), 12, line), _reg(rs1, line), I_OPS[m], _reg(rd, line), 0x13)]
    if m in SHIFT_OPS:
        rd, rs1, sh = _expect(line, 3)
        f3, f7 = SHIFT_OPS[m]
        shamt = _check_range(_eval(sh, symbols, line), 5, line, signed=False)
        return [_r(f7, shamt, _reg(rs1, line), f3, _reg(rd, line), 0x13)]
    if m == "lw":
        rd, mem = _expect(line, 2)
        imm, rs1 = _mem(mem, symbols, line)
        return [_i(imm, rs1, 2, _reg(rd, line), 0x03)]
    if m == "sw":
        rs2, mem = _expect(line, 2)
        imm, rs1 = _mem(mem, symbols, line)
        return [_s(imm, _reg(rs2, line), rs1, 2, 0x23)]
    if m in BRANCH_OPS:
        rs1, rs2, label = _expect(line, 3)
        return [_b(target(label, 13), _reg(rs2, line), _reg(rs1, line), BRANCH_OPS[m])]
    if m in ("beqz", "bnez"):
        rs1, label = _expect(line, 2)
        return [_b(target(label, 13), 0, _reg(rs1, line), 0 if m == "beqz" else 1)]
    if m == "jal":
        if len(ops) == 1:
            return [_j(target(ops[0], 21), 1)]
        rd, label = _expect(line, 2)
        return [_j(target(label, 21), _reg(rd, line))]
    if m == "j":
        return [_j(target(_expect(line, 1)[0], 21), 0)]
    if m == "call":
        return [_j(target(_expect(line, 1)[0], 21), 1)]
    if m == "jalr":
        if len(ops) == 2:
            imm, rs1 = _mem(ops[1], symbols, line)
            return [_i(imm, rs1, 0, _reg(ops[0], line), 0x67)]
        rd, rs1, imm = _expect(line, 3)
        return [_i(_check_range(_eval(imm, symbols, line), 12, line), _reg(rs1, line), 0, _reg(rd, line), 0x67)]
    if m == "jr":
        return [_i(0, _reg(_expect(line, 1)[0], line), 0, 0, 0x67)]
    if m == "ret":
        _expect(line, 0)
        return [_i(0, 1, 0, 0, 0x67)]
    if m in ("lui", "auipc"):
        rd, imm = _expect(line, 2)
        value = _check_range(_eval(imm, symbols, line), 20, line, signed=False)
        return [(value << 12) | (_reg(rd, line) << 7) | (0x37 if m == "lui" else 0x17)]
    if m in TWO_WORD:
        rd, expr = _expect(line, 2)
        hi, lo = _hi_lo(_eval(expr, symbols, line))
        r = _reg(rd, line)
        return [(hi << 12) | (r << 7) | 0x37, _i(lo, r, 0, r, 0x13)]
    if m == "mv":
        rd, rs = _expect(line, 2)
        return [_i(0, _reg(rs, line), 0, _reg(rd, line), 0x13)]
    if m == "nop":
        return [_i(0, 0, 0, 0, 0x13)]
    if m in ("csrrw", "csrrs"):
        rd, csr, rs1 = _expect(line, 3)
        return [_i(_csr(csr, symbols, line), _reg(rs1, line), 1 if m == "csrrw" else 2, _reg(rd, line), 0x73)]
    if m == "csrr":
        rd, csr = _expect(line, 2)
        return [_i(_csr(csr, symbols, line), 0, 2, _reg(rd, line), 0x73)]
    if m == "csrw":
        csr, rs1 = _expect(line, 2)
        return [_i(_csr(csr, symbols, line), _reg(rs1, line), 1, 0, 0x73)]
    if m == "mret":
        return [MRET_WORD]
    if m == ".word":
        return [_eval(_expect(line, 1)[0], symbols, line) & 0xFFFF_FFFF]
    raise AssemblerError(line.no, line.text, f"unknown mnemonic {m!r}")


def assemble(text: str, predefined: dict[str, int] | None = None) -> Program:
    symbols: dict[str, int] = dict(predefined or {})
    equs: list[tuple[str, str, _Line]] = []
    lines: list[_Line] = []
    addr = 0

    for no, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        while body:
            m = re.match(r"^([A-Za-z_.][\w.]*):\s*(.*)$", body)
            if not m:
                break
            if m.group(1) in symbols:
                raise AssemblerError(no, raw, f"duplicate label {m.group(1)!r}")
            symbols[m.group(1)] = addr
            body = m.group(2).strip()
        if not body:
            continue
        parts = body.split(None, 1)
        mnemonic = parts[0].lower()
        operands = _split_operands(parts[1] if len(parts) > 1 else "")
        line = _Line(no, raw, mnemonic, operands, addr)
        if mnemonic == ".equ":
            if len(operands) != 2:
                raise AssemblerError(no, raw, "expected NAME, expr")
            equs.append((operands[0], operands[1], line))
            try:
                symbols[operands[0]] = _eval(operands[1], symbols, line)
            except AssemblerError:
                pass
            continue
        if mnemonic == ".org":
            target = _eval(_expect(line, 1)[0], symbols, line)
            if target < addr or target & 3:
                raise AssemblerError(no, raw, ".org must move forward to an aligned address")
            addr = target
            continue
        lines.append(line)
        addr += 8 if mnemonic in TWO_WORD else 4

    for name, expr, line in equs:
        symbols[name] = _eval(expr, symbols, line)

    words: list[int] = [0] * (addr // 4)
    for line in lines:
        for i, word in enumerate(_encode(line, symbols)):
            words[line.addr // 4 + i] = word
    return Program(words, symbols)
