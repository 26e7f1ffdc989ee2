"""Cluster-local interconnect: banked TCDM, event unit, memory map."""
from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass, field

from .core import BUS_ERROR, STALL, MemResponse, OutputBundle, RespKind
from .errors import ConfigError

log = logging.getLogger(__name__)

N_SW_BARRIERS = 32
LOCK_BARRIER_BASE = 32


@dataclass(frozen=True)
class MemoryMap:
    boot_addr: int = 0x0
    mtvec: int = 0x80
    tcdm_base: int = 0x1000_0000
    tcdm_size: int = 256 * 1024
    periph_base: int = 0x1020_0000
    hmr_offset: int = 0x0000
    eu_offset: int = 0x1000
    periph_size: int = 0x2000
    stack_size: int = 1024

    @property
    def hmr_base(self) -> int:
        return self.periph_base + self.hmr_offset

    @property
    def eu_base(self) -> int:
        return self.periph_base + self.eu_offset

    @property
    def tcdm_end(self) -> int:
        return self.tcdm_base + self.tcdm_size

    def is_periph(self, addr: int) -> bool:
        return self.periph_base <= addr < self.periph_base + self.periph_size

    def is_tcdm(self, addr: int) -> bool:
        return self.tcdm_base <= addr < self.tcdm_end

    def stack_top(self, core_id: int) -> int:
        return self.tcdm_end - core_id * self.stack_size

    def perf_stack_top(self, core_id: int, n_cores: int) -> int:
        return self.tcdm_end - (n_cores + core_id) * self.stack_size

    def barrier_addr(self, barrier_id: int) -> int:
        return self.eu_base + 4 * barrier_id

    def as_dict(self) -> dict:
        return {
            "boot_addr": self.boot_addr,
            "mtvec": self.mtvec,
            "tcdm_base": self.tcdm_base,
            "tcdm_size": self.tcdm_size,
            "periph_base": self.periph_base,
            "hmr_base": self.hmr_base,
            "eu_base": self.eu_base,
        }


# ---- TCDM ----
class Tcdm:
    """Word-interleaved multi-bank scratchpad with per-bank round-robin arbitration."""

    def __init__(self, n_banks: int, size_bytes: int, base: int = 0, n_requesters: int | None = None):
        if n_banks < 1 or size_bytes % 4:
            raise ConfigError("TCDM needs at least one bank and a word-multiple size")
        self.n_banks = n_banks
        self.size_bytes = size_bytes
        self.base = base
        self.n_requesters = n_requesters or n_banks
        self.words = [0] * (size_bytes // 4)
        self.rr_pointer = [0] * n_banks
        self.grants = 0
        self.conflicts = 0

    def bank_index(self, addr: int) -> int:
        return ((addr - self.base) >> 2) % self.n_banks

    def in_range(self, addr: int) -> bool:
        return self.base <= addr < self.base + self.size_bytes and not addr & 3

    def read(self, addr: int) -> int:
        return self.words[(addr - self.base) >> 2]

    def write(self, addr: int, value: int) -> None:
        self.words[(addr - self.base) >> 2] = value & 0xFFFF_FFFF

    def load(self, image: dict[int, int]) -> None:
        for addr, value in image.items():
            self.write(addr, value)

    def cycle(self, requests: list[tuple[int, OutputBundle]]) -> dict[int, MemResponse]:
        """One arbitration cycle; single-cycle latency for the winners."""
        responses: dict[int, MemResponse] = {}
        by_bank: dict[int, list[tuple[int, OutputBundle]]] = {}
        for rid, req in requests:
            if not self.in_range(req.addr):
                responses[rid] = BUS_ERROR
                continue
            by_bank.setdefault(self.bank_index(req.addr), []).append((rid, req))

        for bank, reqs in by_bank.items():
            ptr = self.rr_pointer[bank]
            rid, req = min(reqs, key=lambda r: (r[0] - ptr) % self.n_requesters)
            self.rr_pointer[bank] = (rid + 1) % self.n_requesters
            self.grants += 1
            if req.we:
                self.write(req.addr, req.wdata)
                responses[rid] = MemResponse(RespKind.GRANT, 0)
            else:
                responses[rid] = MemResponse(RespKind.GRANT, self.read(req.addr))
            for other, _ in reqs:
                if other != rid:
                    responses[other] = STALL
                    self.conflicts += 1
        return responses

    def region(self, addr: int, n_words: int) -> list[int]:
        start = (addr - self.base) >> 2
        return self.words[start:start + n_words]

    def digest(self, addr: int, n_words: int) -> str:
        words = self.region(addr, n_words)
        return hashlib.sha256(struct.pack(f"<{len(words)}I", *words)).hexdigest()


# ---- event unit ----
@dataclass
class EventUnit:
    n_cores: int
    participants: dict[int, frozenset[int]] = field(default_factory=dict)
    arrivals: dict[int, dict[int, int]] = field(default_factory=dict)
    irq_pending: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.irq_pending:
            self.irq_pending = [0] * self.n_cores

    def configure_barrier(self, barrier_id: int, participants) -> None:
        members = frozenset(participants)
        if not members:
            raise ConfigError(f"barrier {barrier_id} has an empty participant set")
        self.participants[barrier_id] = members
        self.arrivals.pop(barrier_id, None)

    def participant_mask(self, barrier_id: int) -> int:
        return sum(1 << i for i in self.participants.get(barrier_id, ()))

    def barrier_read(self, cycle: int, waiting: dict[int, int]) -> dict[int, set[int]]:
        """Register this cycle's blocking barrier loads; returns completed barriers.

        ``waiting`` maps requester id to barrier id. A requester that stops
        presenting its load (woken by an interrupt) leaves the waiter set.
        """
        completed: dict[int, set[int]] = {}
        present: dict[int, set[int]] = {}
        for rid, bid in waiting.items():
            present.setdefault(bid, set()).add(rid)

        for bid in list(self.arrivals):
            stale = self.arrivals[bid].keys() - present.get(bid, set())
            for rid in stale:
                del self.arrivals[bid][rid]

        for bid, rids in present.items():
            if bid not in self.participants:
                raise ConfigError(f"barrier {bid} has no configured participants")
            arrived = self.arrivals.setdefault(bid, {})
            for rid in rids:
                arrived.setdefault(rid, cycle)
            if set(arrived) == set(self.participants[bid]):
                completed[bid] = set(arrived)
                del self.arrivals[bid]
        return completed

    def raise_irq(self, targets, irq_id: int) -> None:
        for core in targets:
            self.irq_pending[core] |= 1 << irq_id

    def ack_irq(self, core: int, irq_id: int) -> None:
        self.irq_pending[core] &= ~(1 << irq_id)

    def clear_irqs(self, core: int) -> None:
        self.irq_pending[core] = 0
