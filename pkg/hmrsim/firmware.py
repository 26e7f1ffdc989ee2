"""Built-in programs: boot, trap handler, context reload, split-lock routines and workloads.

Everything is assembled from text with the memory map baked in as ``.equ``
constants. Two entry points exist:

- ``build_static``: every virtual core runs its matmul slice, then the final
  barrier; virtual core 0 writes EOC.
- ``build_script``: virtual core 0 runs a section script (mission-critical and
  performance sections), the other cores run a helper thread.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .asm import Program, assemble
from .errors import ConfigError
from .hmr import (
    CORE_BLOCK,
    MODE_CODE,
    MODE_PERF,
    MODE_RAPID,
    CoreMode,
    Reg,
    group_members,
    main_cores,
)
from .interconnect import MemoryMap
from .schemas import ScriptStep

log = logging.getLogger(__name__)

FRAME_BYTES = 128
SAVED_REGS = tuple(i for i in range(1, 32) if i != 2)
PERF_JOIN_BARRIER = 1
FINAL_BARRIER = 0


class Mark:
    ENTER_MC = 1
    IN_MC = 2
    EXIT_MC = 3
    OUT_MC = 4
    ENTER_PERF = 5
    IN_PERF = 6
    EXIT_PERF = 7
    OUT_PERF = 8


@dataclass
class FirmwareImage:
    program: Program
    data: dict[int, int]
    result_regions: list[tuple[str, int, int]]
    expected: dict[str, list[int]]
    ops: int
    barriers: dict[int, tuple[int, ...]]
    boot_mode: CoreMode = CoreMode.INDEPENDENT
    n_workers: int = 1
    script: list[ScriptStep] = field(default_factory=list)

    @property
    def result_words(self) -> int:
        return sum(n for _, _, n in self.result_regions)


# ---- runtime ----
def _equates(mm: MemoryMap, n_cores: int) -> str:
    shift = mm.stack_size.bit_length() - 1
    if 1 << shift != mm.stack_size:
        raise ConfigError("stack size must be a power of two")
    return "\n".join(
        f".equ {name}, {value}"
        for name, value in {
            "HMR": mm.hmr_base,
            "EU": mm.eu_base,
            "STACK_TOP": mm.tcdm_end,
            "STACK_SHIFT": shift,
            "PERF_STACK_TOP": mm.tcdm_end - n_cores * mm.stack_size,
            "CORE_BLOCK": CORE_BLOCK,
            "R_CORE_ID": Reg.CORE_ID,
            "R_PENDING": Reg.PENDING,
            "R_EOC": Reg.EOC,
            "R_FATAL": Reg.FATAL,
            "R_SP_SELF": Reg.SP_SELF,
            "R_LOCK_BARRIER": Reg.LOCK_BARRIER,
            "R_MARK": Reg.MARK,
            "CAUSE_GROUPING": 0x8000_0010,
            "CAUSE_RESYNC": 0x8000_0011,
            "FRAME": FRAME_BYTES,
        }.items()
    )


def _save_frame() -> str:
    return "\n".join(f"    sw x{i}, {4 * i}(sp)" for i in SAVED_REGS)


def _load_frame() -> str:
    return "\n".join(f"    lw x{i}, {4 * i}(sp)" for i in SAVED_REGS if i != 5)


RUNTIME = """
_start:
    li t0, HMR
    lw a0, R_CORE_ID(t0)
    la t1, trap_vector
    csrw mtvec, t1
    lw t1, R_SP_SELF(t0)
    bnez t1, boot_reload
    li t1, STACK_TOP
    slli t2, a0, STACK_SHIFT
    sub sp, t1, t2
    li t1, 8
    csrw mstatus, t1
    j main_dispatch
boot_reload:
    mv sp, t1
    j reload_context

.org 0x80
trap_vector:
    addi sp, sp, -FRAME
{save}
    csrr t0, mepc
    sw t0, 0(sp)
    csrr t0, mcause
    sw t0, 8(sp)
    li t1, CAUSE_GROUPING
    beq t0, t1, on_grouping
    li t1, CAUSE_RESYNC
    beq t0, t1, on_resync
    li t1, HMR
    sw t0, R_FATAL(t1)
    j .
on_grouping:
    li t0, HMR
    lw t1, R_PENDING(t0)
    li t2, 1
    bne t1, t2, grouping_wait
    sw sp, R_SP_SELF(t0)
grouping_wait:
    lw t1, R_LOCK_BARRIER(t0)
    lw t1, 0(t1)
    j .
on_resync:
    li t0, HMR
    sw sp, R_SP_SELF(t0)
    j reload_context

reload_context:
    lw t0, 0(sp)
    csrw mepc, t0
    lw t0, 8(sp)
    csrw mcause, t0
{load}
    li t0, HMR
    sw zero, R_SP_SELF(t0)
    lw t0, 20(sp)
    addi sp, sp, FRAME
    mret
"""

# a0: MODE register value
SECTION_ROUTINES = """
enter_mc:
    li t0, HMR
    li t1, {ENTER_MC}
    sw t1, R_MARK(t0)
    lw t1, R_CORE_ID(t0)
    slli t1, t1, 4
    add t1, t1, t0
    sw a0, CORE_BLOCK(t1)
    li t1, {IN_MC}
    sw t1, R_MARK(t0)
    ret

exit_mc:
    li t0, HMR
    li t1, {EXIT_MC}
    sw t1, R_MARK(t0)
    lw t1, R_CORE_ID(t0)
    slli t1, t1, 4
    add t1, t1, t0
    sw zero, CORE_BLOCK(t1)
    li t1, {OUT_MC}
    sw t1, R_MARK(t0)
    ret

# a0: MODE value, a1: group size, a2: member stride, a3: C base (0 = no kernel)
enter_perf:
    li t0, HMR
    li t1, {ENTER_PERF}
    sw t1, R_MARK(t0)
    lw t2, R_CORE_ID(t0)
    slli t1, t2, 4
    add t1, t1, t0
    sw a0, CORE_BLOCK(t1)
    lw t3, R_CORE_ID(t0)
    beq t3, t2, perf_main
    li t1, PERF_STACK_TOP
    slli t4, t3, STACK_SHIFT
    sub sp, t1, t4
    li t1, {IN_PERF}
    sw t1, R_MARK(t0)
    sub t4, t3, t2
    li t5, 0
perf_index:
    beqz t4, perf_helper
    sub t4, t4, a2
    addi t5, t5, 1
    j perf_index
perf_helper:
    beqz a3, perf_helper_join
    mv a0, t5
    mv a2, a3
    call matmul
perf_helper_join:
    li t0, EU
    lw t1, {JOIN_OFF}(t0)
    j .
perf_main:
    li t1, {IN_PERF}
    sw t1, R_MARK(t0)
    ret

perf_join:
    li t0, EU
    lw t1, {JOIN_OFF}(t0)
    ret

exit_perf:
    li t0, HMR
    li t1, {EXIT_PERF}
    sw t1, R_MARK(t0)
    lw t1, R_CORE_ID(t0)
    slli t1, t1, 4
    add t1, t1, t0
    sw a0, CORE_BLOCK(t1)
    li t1, {OUT_PERF}
    sw t1, R_MARK(t0)
    ret
"""

# a0: worker index, a1: worker count, a2: C base.
# A rows are padded by one word; each row starts at column i.
MATMUL = """
matmul:
    mv s0, a0
mm_row:
    li t0, DIM
    bge s0, t0, mm_done
    li t1, (DIM + 1) * 4
    mul t1, s0, t1
    li t2, A_BASE
    add s1, t1, t2
    li t1, DIM * 4
    mul t1, s0, t1
    add s2, a2, t1
    mv s3, s0
    li s4, 0
mm_col:
    beq s4, t0, mm_next_row
    li s5, 0
    li t3, 0
    mv t4, s1
    slli t5, s3, 2
    li t6, B_BASE
    add t5, t5, t6
mm_k:
    beq t3, t0, mm_store
    lw t1, 0(t4)
    lw t2, 0(t5)
    mul t1, t1, t2
    add s5, s5, t1
    addi t4, t4, 4
    addi t5, t5, DIM * 4
    addi t3, t3, 1
    j mm_k
mm_store:
    slli t1, s3, 2
    add t1, s2, t1
    sw s5, 0(t1)
    addi s3, s3, 1
    bne s3, t0, mm_nowrap
    li s3, 0
mm_nowrap:
    addi s4, s4, 1
    j mm_col
mm_next_row:
    add s0, s0, a1
    j mm_row
mm_done:
    ret
"""

# a0: virtual id. s0 = 3*s0 + i for HELPER_ITERS steps.
HELPER = """
helper_thread:
    li s0, 0
    li s1, 0
    li s2, HELPER_ITERS
h_loop:
    beq s1, s2, h_done
    slli t1, s0, 1
    add s0, s0, t1
    add s0, s0, s1
    addi s1, s1, 1
    j h_loop
h_done:
    slli t2, a0, 2
    li t1, HELPER_RESULTS
    add t1, t1, t2
    sw s0, 0(t1)
    li t1, HELPER_DONE
    add t1, t1, t2
    li t3, 1
    sw t3, 0(t1)
h_spin:
    j h_spin
"""

FINAL = """
final:
    li t0, EU
    lw t1, {FINAL_OFF}(t0)
    bnez a0, final
    li t0, HMR
    li t1, 1
    sw t1, R_EOC(t0)
    j .
"""


def _runtime(mm: MemoryMap, n_cores: int) -> str:
    return _equates(mm, n_cores) + RUNTIME.format(save=_save_frame(), load=_load_frame())


def _routines() -> str:
    marks = {k: v for k, v in vars(Mark).items() if k.isupper()}
    return SECTION_ROUTINES.format(**marks, JOIN_OFF=4 * PERF_JOIN_BARRIER)


# ---- data ----
def _matrices(dim: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    a = rng.integers(-8, 8, size=(dim, dim), dtype=np.int64)
    b = rng.integers(-8, 8, size=(dim, dim), dtype=np.int64)
    return a, b


def _words(values: np.ndarray) -> list[int]:
    return [int(v) & 0xFFFF_FFFF for v in values.ravel()]


def _layout(mm: MemoryMap, dim: int, n_c: int, n_cores: int) -> dict[str, int]:
    a_base = mm.tcdm_base
    b_base = a_base + dim * (dim + 1) * 4
    c_base = b_base + dim * dim * 4
    helper_results = c_base + n_c * dim * dim * 4
    helper_done = helper_results + n_cores * 4
    end = helper_done + n_cores * 4
    if end > mm.tcdm_end - 2 * n_cores * mm.stack_size:
        raise ConfigError(f"workload of dim {dim} does not fit the TCDM below the stacks")
    return {
        "A_BASE": a_base,
        "B_BASE": b_base,
        "C_BASE": c_base,
        "HELPER_RESULTS": helper_results,
        "HELPER_DONE": helper_done,
    }


def _data_image(layout: dict[str, int], a: np.ndarray, b: np.ndarray) -> dict[int, int]:
    dim = a.shape[0]
    padded = np.zeros((dim, dim + 1), dtype=np.int64)
    padded[:, :dim] = a
    image: dict[int, int] = {}
    for i, w in enumerate(_words(padded)):
        image[layout["A_BASE"] + 4 * i] = w
    for i, w in enumerate(_words(b)):
        image[layout["B_BASE"] + 4 * i] = w
    return image


def helper_expected(iterations: int) -> int:
    acc = 0
    for i in range(iterations):
        acc = (3 * acc + i) & 0xFFFF_FFFF
    return acc


def _product(a: np.ndarray, b: np.ndarray) -> list[int]:
    return _words((a @ b) & 0xFFFF_FFFF)


# ---- builders ----
def build_static(
    n_cores: int,
    boot_mode: CoreMode = CoreMode.INDEPENDENT,
    dim: int = 24,
    seed: int = 0,
    memory_map: MemoryMap | None = None,
) -> FirmwareImage:
    """Parallel matmul over every virtual core of a statically grouped cluster."""
    mm = memory_map or MemoryMap()
    vids = list(main_cores(boot_mode, n_cores))
    layout = _layout(mm, dim, 1, n_cores)
    a, b = _matrices(dim, seed)
    text = "\n".join([
        _runtime(mm, n_cores),
        f".equ DIM, {dim}",
        f".equ NWORKERS, {len(vids)}",
        *(f".equ {k}, {v}" for k, v in layout.items()),
        "main_dispatch:",
        "    li a1, NWORKERS",
        "    li a2, C_BASE",
        "    call matmul",
        "    j final",
        MATMUL,
        FINAL.format(FINAL_OFF=4 * FINAL_BARRIER),
    ])
    program = assemble(text)
    log.debug("static image: %d words, %d workers", len(program.words), len(vids))
    return FirmwareImage(
        program=program,
        data=_data_image(layout, a, b),
        result_regions=[("C", layout["C_BASE"], dim * dim)],
        expected={"C": _product(a, b)},
        ops=2 * dim ** 3,
        barriers={FINAL_BARRIER: tuple(vids)},
        boot_mode=boot_mode,
        n_workers=len(vids),
    )


def _check_script(steps: list[ScriptStep]) -> None:
    state = "independent"
    kernels_in_perf = 0
    for step in steps:
        allowed = {
            "independent": {"run_independent", "run_kernel", "enter_mc"},
            "mc": {"run_kernel", "exit_mc", "enter_perf"},
            "perf": {"run_kernel", "exit_perf"},
        }[state]
        if step.op not in allowed:
            raise ConfigError(f"{step.op} is not allowed while {state}")
        if step.op == "enter_mc":
            state = "mc"
        elif step.op == "exit_mc":
            state = "independent"
        elif step.op == "enter_perf":
            state, kernels_in_perf = "perf", 0
        elif step.op == "exit_perf":
            state = "mc"
        elif state == "perf":
            kernels_in_perf += 1
            if kernels_in_perf > 1:
                raise ConfigError("a performance section runs at most one kernel")
    if state != "independent":
        raise ConfigError("section script must end in independent mode")


def build_script(
    n_cores: int,
    steps: list[ScriptStep],
    dim: int = 8,
    helper_iterations: int = 200,
    seed: int = 0,
    memory_map: MemoryMap | None = None,
    rapid_enabled: bool = True,
) -> FirmwareImage:
    """Virtual core 0 runs ``steps``; every other core runs the helper thread."""
    _check_script(steps)
    mm = memory_map or MemoryMap()
    n_kernels = sum(s.op in ("run_kernel", "run_independent") for s in steps)
    layout = _layout(mm, dim, max(n_kernels, 1), n_cores)
    a, b = _matrices(dim, seed)
    c_size = dim * dim * 4

    body: list[str] = ["main_script:"]
    mode: CoreMode | None = None
    group: tuple[int, ...] = (0,)
    in_perf = False
    kernel = 0
    for idx, step in enumerate(steps):
        if step.op == "enter_mc":
            mode = CoreMode(step.mode)
            group = group_members(0, mode, n_cores)
            value = MODE_CODE[mode] | (MODE_RAPID if step.variant == "rapid" and rapid_enabled else 0)
            body += [f"    li a0, {value}", "    call enter_mc"]
        elif step.op == "exit_mc":
            body += ["    call exit_mc"]
            mode, group = None, (0,)
        elif step.op == "enter_perf":
            nxt = steps[idx + 1] if idx + 1 < len(steps) else None
            c_addr = layout["C_BASE"] + kernel * c_size if nxt and nxt.op != "exit_perf" else 0
            body += [
                f"    li a0, {MODE_PERF}",
                f"    li a1, {len(group)}",
                f"    li a2, {n_cores // len(group)}",
                f"    li a3, {c_addr}",
                "    call enter_perf",
            ]
            in_perf = True
        elif step.op == "exit_perf":
            exit_mode = CoreMode(step.mode)
            if exit_mode != mode:
                raise ConfigError(f"exit_perf relocks as {exit_mode.value} but the section split from {mode.value}")
            value = MODE_CODE[exit_mode] | (MODE_RAPID if step.variant == "rapid" and rapid_enabled else 0)
            body += ["    call perf_join", f"    li a0, {value}", "    call exit_perf"]
            in_perf = False
        else:
            workers = len(group) if in_perf else 1
            body += [
                "    li a0, 0",
                f"    li a1, {workers}",
                f"    li a2, {layout['C_BASE'] + kernel * c_size}",
                "    call matmul",
            ]
            kernel += 1

    helpers = [i for i in range(1, n_cores)]
    for h in helpers:
        body += [
            f"wait_helper_{h}:",
            f"    li t0, {layout['HELPER_DONE'] + 4 * h}",
            "    lw t1, 0(t0)",
            f"    beqz t1, wait_helper_{h}",
        ]
    body += ["    li t0, HMR", "    li t1, 1", "    sw t1, R_EOC(t0)", "    j ."]

    text = "\n".join([
        _runtime(mm, n_cores),
        f".equ DIM, {dim}",
        f".equ HELPER_ITERS, {helper_iterations}",
        *(f".equ {k}, {v}" for k, v in layout.items()),
        "main_dispatch:",
        "    beqz a0, main_script",
        "    j helper_thread",
        *body,
        _routines(),
        MATMUL,
        HELPER,
    ])
    program = assemble(text)

    expected_c = _product(a, b)
    regions = [(f"C{k}", layout["C_BASE"] + k * c_size, dim * dim) for k in range(n_kernels)]
    regions.append(("helpers", layout["HELPER_RESULTS"], n_cores))
    expected = {f"C{k}": expected_c for k in range(n_kernels)}
    expected["helpers"] = [0] + [helper_expected(helper_iterations)] * (n_cores - 1)

    barriers: dict[int, tuple[int, ...]] = {}
    perf_modes = {CoreMode(s.mode) for s in steps if s.op == "exit_perf"}
    if len(perf_modes) > 1:
        raise ConfigError("performance sections of one script must share a redundancy mode")
    for m in perf_modes:
        barriers[PERF_JOIN_BARRIER] = group_members(0, m, n_cores)

    return FirmwareImage(
        program=program,
        data=_data_image(layout, a, b),
        result_regions=regions,
        expected=expected,
        ops=2 * dim ** 3 * n_kernels,
        barriers=barriers,
        boot_mode=CoreMode.INDEPENDENT,
        n_workers=1,
        script=list(steps),
    )
