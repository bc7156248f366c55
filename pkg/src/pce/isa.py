"""The 24-bit sub-rule word, the selector map and the rules-memory image.

Word layout, most significant bit first::

    23     22..19     18..17  16..9    8..1     0
    JUMP | SELECTOR | OP    | OPERAND| ADDRESS| ACTION

On a terminal word (ACTION=1) the JUMP bit carries the verdict: 1 permits,
0 denies.
"""

from __future__ import annotations

import enum
import io
from typing import Iterable, NamedTuple, Sequence, TextIO

import numpy as np

from .ingest import PacketHeader

WORD_BITS = 24
WORD_MASK = (1 << WORD_BITS) - 1
MEMORY_WORDS = 256
NUM_SUBFIELDS = 13

JUMP_SHIFT = 23
SELECTOR_SHIFT = 19
OP_SHIFT = 17
OPERAND_SHIFT = 9
ADDRESS_SHIFT = 1


class CompareOp(enum.IntEnum):
    EQ = 0b00
    GT = 0b01
    LT = 0b10
    ALWAYS = 0b11


# index -> sub-field name, in inspection order
SELECTOR_MAP = (
    "proto",
    "src_ip[0]", "src_ip[1]", "src_ip[2]", "src_ip[3]",
    "dst_ip[0]", "dst_ip[1]", "dst_ip[2]", "dst_ip[3]",
    "src_port.hi", "src_port.lo",
    "dst_port.hi", "dst_port.lo",
)
SEL_PROTO = 0
SEL_SRC_IP = 1
SEL_DST_IP = 5
SEL_SRC_PORT = 9
SEL_DST_PORT = 11


def subfields(h: PacketHeader) -> tuple[int, ...]:
    """The 13 byte-wide sub-fields of a header, indexed by selector."""
    return (h.proto,
            (h.src_ip >> 24) & 0xFF, (h.src_ip >> 16) & 0xFF, (h.src_ip >> 8) & 0xFF, h.src_ip & 0xFF,
            (h.dst_ip >> 24) & 0xFF, (h.dst_ip >> 16) & 0xFF, (h.dst_ip >> 8) & 0xFF, h.dst_ip & 0xFF,
            h.src_port >> 8, h.src_port & 0xFF,
            h.dst_port >> 8, h.dst_port & 0xFF)


def subfield_matrix(headers: Iterable[PacketHeader]) -> np.ndarray:
    """Stack headers into an (N, 13) uint8 array of sub-fields."""
    h = np.array(list(headers), dtype=np.uint32).reshape(-1, 5)
    out = np.empty((h.shape[0], NUM_SUBFIELDS), dtype=np.uint8)
    out[:, 0] = h[:, 0]
    for base, col in ((SEL_SRC_IP, 1), (SEL_DST_IP, 2)):
        for i, shift in enumerate((24, 16, 8, 0)):
            out[:, base + i] = (h[:, col] >> shift) & 0xFF
    for base, col in ((SEL_SRC_PORT, 3), (SEL_DST_PORT, 4)):
        out[:, base] = h[:, col] >> 8
        out[:, base + 1] = h[:, col] & 0xFF
    return out


class SubRule(NamedTuple):
    jump: int = 0
    selector: int = 0
    op: CompareOp = CompareOp.EQ
    operand: int = 0
    address: int = 0
    action: int = 0

    @property
    def terminal(self) -> bool:
        return bool(self.action)

    @property
    def permit(self) -> bool:
        """Verdict carried by a terminal word."""
        return bool(self.jump)

    def encode(self) -> int:
        return encode(self)


def encode(sr: SubRule) -> int:
    return ((sr.jump & 1) << JUMP_SHIFT
            | (sr.selector & 0xF) << SELECTOR_SHIFT
            | (int(sr.op) & 0x3) << OP_SHIFT
            | (sr.operand & 0xFF) << OPERAND_SHIFT
            | (sr.address & 0xFF) << ADDRESS_SHIFT
            | (sr.action & 1))


def decode(word: int) -> SubRule:
    if not 0 <= word <= WORD_MASK:
        raise ValueError(f"word {word:#x} does not fit in 24 bits")
    return SubRule(jump=(word >> JUMP_SHIFT) & 1,
                   selector=(word >> SELECTOR_SHIFT) & 0xF,
                   op=CompareOp((word >> OP_SHIFT) & 0x3),
                   operand=(word >> OPERAND_SHIFT) & 0xFF,
                   address=(word >> ADDRESS_SHIFT) & 0xFF,
                   action=word & 1)


def encode_array(jump, selector, op, operand, address, action) -> np.ndarray:
    """Vectorized encode over parallel field arrays; returns uint32 words."""
    u = lambda a: np.asarray(a, dtype=np.uint32)  # noqa: E731
    return ((u(jump) & 1) << JUMP_SHIFT
            | (u(selector) & 0xF) << SELECTOR_SHIFT
            | (u(op) & 0x3) << OP_SHIFT
            | (u(operand) & 0xFF) << OPERAND_SHIFT
            | (u(address) & 0xFF) << ADDRESS_SHIFT
            | (u(action) & 1))


def decode_array(words) -> tuple[np.ndarray, ...]:
    """Vectorized decode; returns (jump, selector, op, operand, address, action)."""
    w = np.asarray(words, dtype=np.uint32)
    return ((w >> JUMP_SHIFT) & 1, (w >> SELECTOR_SHIFT) & 0xF, (w >> OP_SHIFT) & 0x3,
            (w >> OPERAND_SHIFT) & 0xFF, (w >> ADDRESS_SHIFT) & 0xFF, w & 1)


class ImageError(ValueError):
    pass


class MemoryImage:
    """Rules-memory contents: 1 to 256 sub-rules based at address 0."""

    __slots__ = ("_words",)

    def __init__(self, words: Iterable[SubRule]):
        words = tuple(words)
        if not words:
            raise ImageError("rules memory image is empty")
        if len(words) > MEMORY_WORDS:
            raise ImageError(f"rules memory overflow: {len(words)} words > {MEMORY_WORDS}")
        self._words = words

    @classmethod
    def from_words(cls, words: Iterable[int]) -> MemoryImage:
        return cls(decode(int(w)) for w in words)

    @property
    def words(self) -> tuple[SubRule, ...]:
        return self._words

    def encoded(self) -> np.ndarray:
        return np.array([encode(w) for w in self._words], dtype=np.uint32)

    def __len__(self) -> int:
        return len(self._words)

    def __iter__(self):
        return iter(self._words)

    def __getitem__(self, i):
        return self._words[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, MemoryImage):
            return NotImplemented
        return self._words == other._words

    def __hash__(self) -> int:
        return hash(self._words)

    def __repr__(self) -> str:
        return f"MemoryImage({len(self)} words)"


# ---------------------------------------------------------------------------
# text image format: "AAAAAAAA DDDDDDDDDDDDDDDDDDDDDDDD" per line

def format_image(img: MemoryImage) -> str:
    return "".join(f"{addr:08b} {encode(sr):024b}\n" for addr, sr in enumerate(img))


def write_image(img: MemoryImage, sink: TextIO) -> None:
    sink.write(format_image(img))


def read_image(source: str | TextIO) -> MemoryImage:
    """Parse the text image format. ``source`` is the document or a stream."""
    text = source if isinstance(source, str) else source.read()
    words = []
    for lineno, raw in enumerate(io.StringIO(text), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ImageError(f"line {lineno}: expected 'ADDRESS WORD'")
        addr_s, word_s = parts
        if len(addr_s) != 8 or set(addr_s) - {"0", "1"}:
            raise ImageError(f"line {lineno}: address not 8 bits")
        if len(word_s) != WORD_BITS or set(word_s) - {"0", "1"}:
            raise ImageError(f"line {lineno}: word not 24 bits")
        if len(words) >= MEMORY_WORDS:
            raise ImageError(f"line {lineno}: more than {MEMORY_WORDS} words")
        addr = int(addr_s, 2)
        if addr != len(words):
            if addr < len(words):
                raise ImageError(f"line {lineno}: duplicate or non-ascending address {addr:08b}")
            raise ImageError(f"line {lineno}: gap before address {addr:08b}")
        words.append(decode(int(word_s, 2)))
    return MemoryImage(words)


# ---------------------------------------------------------------------------
# static checks and disassembly

def successors(sr: SubRule, pc: int) -> list[int]:
    """Addresses execution can move to from ``pc``; terminal success is excluded."""
    out = []
    if not sr.action:
        out.append(sr.address if sr.jump else pc + 1)
    if sr.op != CompareOp.ALWAYS:
        out.append(sr.address)
    return out


def validate_image(img: MemoryImage) -> list[str]:
    """Static diagnostics for an image; an empty list means it is well formed."""
    diags = []
    n = len(img)
    for pc, sr in enumerate(img):
        if sr.selector >= NUM_SUBFIELDS:
            diags.append(f"invalid selector {sr.selector} at {pc:#04x}")
        jump_edge = not sr.action and sr.jump
        fail_edge = sr.op != CompareOp.ALWAYS
        if (jump_edge or fail_edge) and sr.address <= pc:
            diags.append(f"backward edge at {pc:#04x} (target {sr.address:#04x})")

    seen = set()
    todo = [0]
    while todo:
        pc = todo.pop()
        if pc in seen:
            continue
        seen.add(pc)
        for nxt in successors(img[pc], pc):
            if nxt >= n:
                diags.append(f"fall-off-end reachable at {pc:#04x} (target {nxt:#04x})")
            elif nxt not in seen:
                todo.append(nxt)

    last = img[n - 1]
    if not (last.action and last.op == CompareOp.ALWAYS):
        diags.append("final word is not an ALWAYS terminal")
    return diags


_OP_NAMES = {CompareOp.EQ: "eq", CompareOp.GT: "gt", CompareOp.LT: "lt", CompareOp.ALWAYS: "always"}


def disassemble_word(sr: SubRule) -> str:
    sel = SELECTOR_MAP[sr.selector] if sr.selector < NUM_SUBFIELDS else f"?{sr.selector}"
    test = "always" if sr.op == CompareOp.ALWAYS else f"{_OP_NAMES[sr.op]} {sel}, {sr.operand:#04x}"
    if sr.action:
        return f"{test:<24} -> {'PERMIT' if sr.jump else 'DENY'}" + (
            "" if sr.op == CompareOp.ALWAYS else f"   else {sr.address:#04x}")
    ok = f"jump {sr.address:#04x}" if sr.jump else "next"
    fail = "" if sr.op == CompareOp.ALWAYS else f"   else {sr.address:#04x}"
    return f"{test:<24} -> {ok}{fail}"


def disassemble(img: MemoryImage | Sequence[SubRule]) -> str:
    return "".join(f"{pc:02x}: {encode(sr):06x}  {disassemble_word(sr)}\n"
                   for pc, sr in enumerate(img))
