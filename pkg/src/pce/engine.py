"""Cycle-accurate model of the packet classification engine.

The datapath is an input latch feeding a 13-way sub-field multiplexer, an
8-bit comparator, a program counter with jump and hold, and a final compile
unit that raises Forward and drives Valid when a terminal word matches.
One sub-rule word executes per clock.

Control follows a four-state machine: IDLE waits for START, PROCESS_1
evaluates the current word, PROCESS_2 decides between looping back and
STOP, and STOP presents the outputs before returning to IDLE.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

from . import _kernels
from ._kernels import WATCHDOG_STEPS
from .ingest import PacketHeader
from .isa import NUM_SUBFIELDS, CompareOp, MemoryImage, encode, subfield_matrix, subfields


class Fsm(enum.Enum):
    IDLE = "idle"
    PROCESS_1 = "process_1"
    PROCESS_2 = "process_2"
    STOP = "stop"


class EngineError(RuntimeError):
    """Misuse of the engine API (stepping while idle, ...)."""


class EngineFault(RuntimeError):
    """The loaded image cannot finish classifying a header."""

    def __init__(self, message: str, pc: int, cycle: int):
        super().__init__(f"{message} (pc={pc:#04x}, cycle {cycle})")
        self.pc = pc
        self.cycle = cycle


class SelectorFault(EngineFault):
    pass


class FallOffFault(EngineFault):
    pass


class WatchdogFault(EngineFault):
    pass


@dataclass(frozen=True)
class EngineState:
    fsm: Fsm
    pc: int
    latched: PacketHeader | None
    valid_out: int
    forward_out: int
    hold: int


class TraceEntry(NamedTuple):
    cycle: int
    pc: int
    word: int
    selector: int
    subfield: int
    op: CompareOp
    operand: int
    match: bool
    next_pc: int | None  # None once the word ends execution

    def format(self) -> str:
        nxt = "stop" if self.next_pc is None else f"{self.next_pc:02x}"
        return (f"{self.cycle} {self.pc:02x} {self.word:06x} {self.selector:x} "
                f"{self.subfield:02x} {self.op.name} {self.operand:02x} "
                f"{int(self.match)} {nxt}")


TRACE_HEADER = "cycle pc word selector subfield op operand match next_pc"


def format_trace(trace: Iterable[TraceEntry]) -> str:
    return "".join(t.format() + "\n" for t in trace)


@dataclass(frozen=True)
class Verdict:
    """Outcome of one classification. ``permit`` is the Valid output."""

    permit: bool
    cycles: int
    trace: tuple[TraceEntry, ...] | None = None


def _compare(op: CompareOp, value: int, operand: int) -> bool:
    if op == CompareOp.EQ:
        return value == operand
    if op == CompareOp.GT:
        return value > operand
    if op == CompareOp.LT:
        return value < operand
    return True


class Engine:
    """One engine instance; mutable, so use one per thread."""

    def __init__(self, image: MemoryImage, watchdog: int = WATCHDOG_STEPS):
        if not isinstance(image, MemoryImage):
            image = MemoryImage(image)
        self.image = image
        self.watchdog = watchdog
        self._encoded = image.encoded()
        self.reset()

    def reset(self) -> None:
        self.fsm = Fsm.IDLE
        self.pc = 0
        self.latched: PacketHeader | None = None
        self._subfields: tuple[int, ...] = ()
        self.valid_out = 0
        self.forward_out = 0
        self.hold = 0
        self.cycles = 0
        self._trace: list[TraceEntry] | None = None

    def state(self) -> EngineState:
        return EngineState(self.fsm, self.pc, self.latched, self.valid_out,
                           self.forward_out, self.hold)

    def start(self, header: PacketHeader, trace: bool = False) -> None:
        """START pulse: latch the header and clear the outputs."""
        if self.fsm is not Fsm.IDLE:
            raise EngineError(f"start while {self.fsm.value}")
        self.latched = PacketHeader(*header)
        self._subfields = subfields(self.latched)
        self.pc = 0
        self.cycles = 0
        self.valid_out = 0
        self.forward_out = 0
        self.hold = 0
        self._trace = [] if trace else None
        self.fsm = Fsm.PROCESS_1

    def step(self) -> EngineState:
        """Run one clock: execute the word at pc and return the new state.

        The snapshot returned on the finishing clock shows STOP with Forward
        raised; the engine itself then drops back to IDLE with hold set.
        """
        if self.fsm is not Fsm.PROCESS_1:
            raise EngineError("engine idle")
        pc = self.pc
        if self.cycles >= self.watchdog:
            self._abort()
            raise WatchdogFault(f"watchdog: more than {self.watchdog} steps", pc, self.cycles)
        sr = self.image[pc]
        if sr.selector >= NUM_SUBFIELDS:
            self._abort()
            raise SelectorFault(f"invalid selector {sr.selector}", pc, self.cycles)

        self.cycles += 1
        value = self._subfields[sr.selector]
        match = _compare(sr.op, value, sr.operand)
        finished = match and sr.terminal
        if finished:
            nxt = None
        elif match:
            nxt = sr.address if sr.jump else pc + 1
        else:
            nxt = sr.address
        if self._trace is not None:
            self._trace.append(TraceEntry(self.cycles, pc, encode(sr), sr.selector, value,
                                          sr.op, sr.operand, match, nxt))

        # PROCESS_2: inspection status
        self.fsm = Fsm.PROCESS_2
        if finished:
            self.valid_out = int(sr.permit)
            self.forward_out = 1
            self.hold = 1
            self.fsm = Fsm.STOP
            snapshot = self.state()
            self.forward_out = 0
            self.fsm = Fsm.IDLE
            return snapshot
        if nxt >= len(self.image):
            self._abort()
            raise FallOffFault(f"fell off end of rules memory (target {nxt:#04x})", pc, self.cycles)
        self.pc = nxt
        self.fsm = Fsm.PROCESS_1
        return self.state()

    def _abort(self) -> None:
        self.fsm = Fsm.IDLE
        self.hold = 1

    def classify(self, header: PacketHeader, trace: bool = False) -> Verdict:
        self.start(header, trace)
        while True:
            snap = self.step()
            if snap.fsm is Fsm.STOP:
                break
        recorded = tuple(self._trace) if self._trace is not None else None
        return Verdict(bool(snap.valid_out), self.cycles, recorded)

    def classify_many(self, headers: Iterable[PacketHeader], backend: str | None = None):
        """Batch classification through the compiled kernel.

        Returns ``(permit, cycles, status)`` arrays; see ``_kernels.run_batch``.
        """
        fields = subfield_matrix(headers)
        return _kernels.run_batch(self._encoded, fields, self.watchdog, backend)


def load_image(img: MemoryImage) -> Engine:
    return Engine(img)


def classify(engine: Engine, header: PacketHeader, trace: bool = False) -> Verdict:
    return engine.classify(header, trace)


def classify_batch(img: MemoryImage, headers, backend: str | None = None):
    """Convenience wrapper returning (permit, cycles, status) for ``headers``."""
    fields = headers if isinstance(headers, np.ndarray) else subfield_matrix(headers)
    return _kernels.run_batch(img.encoded(), fields, WATCHDOG_STEPS, backend)
