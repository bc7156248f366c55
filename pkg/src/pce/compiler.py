"""Lower a rule set to a rules-memory image.

Every field pattern is an interval of unsigned values. An interval over a
multi-byte field becomes a disjunction of byte-wise conjunctions, walking
the bytes MSB first. Each rule becomes a chain of such conjunctions, one
sub-rule word per byte comparison. A failed comparison jumps forward to the
next alternative (or the next rule), a passed one falls through to the next
word, and the last word of a conjunction is the terminal that emits the
rule's verdict. A default-deny terminal closes the image.
"""

from __future__ import annotations

import itertools
from typing import NamedTuple, Sequence

from .isa import (MEMORY_WORDS, SEL_DST_IP, SEL_DST_PORT, SEL_PROTO, SEL_SRC_IP,
                  SEL_SRC_PORT, CompareOp, MemoryImage, SubRule)
from .rules import Action, FieldPattern, PatternError, Rule, RuleSet

MAX_ALTERNATIVES = 64


class CompileError(ValueError):
    pass


class CapacityError(CompileError):
    pass


class SubFieldCheck(NamedTuple):
    selector: int
    op: CompareOp
    operand: int = 0

    def __str__(self) -> str:
        if self.op == CompareOp.ALWAYS:
            return "ALWAYS"
        return f"{self.op.name} {self.operand:#04x} @{self.selector}"


ALWAYS = SubFieldCheck(0, CompareOp.ALWAYS, 0)

# One alternative is a conjunction (tuple of checks); a pattern lowers to a
# list of alternatives. [()] matches everything, [] would match nothing.
Conjunction = tuple[SubFieldCheck, ...]
Alternatives = list[Conjunction]


class CheckChain(NamedTuple):
    alternatives: tuple[Conjunction, ...]
    verdict: Action

    @property
    def size(self) -> int:
        return sum(len(c) for c in self.alternatives)


def _byte_interval(lo: int, hi: int, sel: int) -> Conjunction:
    if lo == hi:
        return (SubFieldCheck(sel, CompareOp.EQ, lo),)
    checks = []
    if lo > 0:
        checks.append(SubFieldCheck(sel, CompareOp.GT, lo - 1))
    if hi < 0xFF:
        checks.append(SubFieldCheck(sel, CompareOp.LT, hi + 1))
    return tuple(checks)


def decompose_range(lo: int, hi: int, selectors: Sequence[int]) -> Alternatives:
    """Byte-wise disjunction matching exactly ``lo <= v <= hi``.

    ``selectors`` lists the sub-fields of the value MSB first. At each byte
    the interval splits into a partial segment at the low end, a run of
    whole segments matched by the top byte alone, and a partial segment at
    the high end; empty or full segments collapse.
    """
    if not selectors:
        return [()]
    sel, rest = selectors[0], selectors[1:]
    shift = 8 * len(rest)
    low_mask = (1 << shift) - 1
    top_lo, top_hi = lo >> shift, hi >> shift
    rest_lo, rest_hi = lo & low_mask, hi & low_mask

    if top_lo == top_hi:
        head = _byte_interval(top_lo, top_lo, sel)
        return [head + tail for tail in decompose_range(rest_lo, rest_hi, rest)]

    alts: Alternatives = []
    mid_lo, mid_hi = top_lo, top_hi
    if rest_lo != 0:
        head = _byte_interval(top_lo, top_lo, sel)
        alts += [head + tail for tail in decompose_range(rest_lo, low_mask, rest)]
        mid_lo += 1
    tail_alts: Alternatives = []
    if rest_hi != low_mask:
        head = _byte_interval(top_hi, top_hi, sel)
        tail_alts = [head + tail for tail in decompose_range(0, rest_hi, rest)]
        mid_hi -= 1
    if mid_lo <= mid_hi:
        alts.append(_byte_interval(mid_lo, mid_hi, sel))
    return alts + tail_alts


def _interval(p: FieldPattern) -> tuple[int, int]:
    try:
        return p.bounds()
    except PatternError as exc:
        raise CompileError(str(exc)) from None


def decompose_pattern8(p: FieldPattern, base_selector: int) -> Alternatives:
    lo, hi = _interval(p)
    return decompose_range(lo, hi, (base_selector,))


def decompose_range16(lo: int, hi: int, hi_selector: int, lo_selector: int) -> Alternatives:
    if not 0 <= lo <= hi <= 0xFFFF:
        raise ValueError(f"bad 16-bit range {lo}-{hi}")
    return decompose_range(lo, hi, (hi_selector, lo_selector))


def decompose_ip(p: FieldPattern, base_selector: int) -> Alternatives:
    lo, hi = _interval(p)
    return decompose_range(lo, hi, tuple(range(base_selector, base_selector + 4)))


def decompose_port(p: FieldPattern, hi_selector: int) -> Alternatives:
    lo, hi = _interval(p)
    return decompose_range16(lo, hi, hi_selector, hi_selector + 1)


def lower_rule(r: Rule) -> CheckChain:
    per_field = [
        decompose_pattern8(r.proto, SEL_PROTO),
        decompose_ip(r.src_ip, SEL_SRC_IP),
        decompose_ip(r.dst_ip, SEL_DST_IP),
        decompose_port(r.src_port, SEL_SRC_PORT),
        decompose_port(r.dst_port, SEL_DST_PORT),
    ]
    count = 1
    for alts in per_field:
        count *= len(alts)
    if count > MAX_ALTERNATIVES:
        raise CompileError(f"rule '{r}' expands to {count} alternatives "
                           f"(limit {MAX_ALTERNATIVES})")
    conjunctions = tuple(tuple(itertools.chain.from_iterable(combo))
                         for combo in itertools.product(*per_field))
    if conjunctions == ((),):
        conjunctions = ((ALWAYS,),)
    return CheckChain(conjunctions, r.action)


def compile_rules(rs: RuleSet | Sequence[Rule]) -> MemoryImage:
    """Compile rules to an image; raises CapacityError past 256 words."""
    chains = [lower_rule(r) for r in rs]
    total = sum(c.size for c in chains) + 1
    if total > MEMORY_WORDS:
        raise CapacityError(f"rules memory overflow: {total} words > {MEMORY_WORDS}")

    words: list[SubRule] = []
    for chain in chains:
        for conj in chain.alternatives:
            next_entry = len(words) + len(conj)
            for i, check in enumerate(conj):
                last = i == len(conj) - 1
                words.append(SubRule(
                    jump=int(last and chain.verdict is Action.PERMIT),
                    selector=check.selector,
                    op=check.op,
                    operand=check.operand,
                    address=next_entry,
                    action=int(last),
                ))
    words.append(SubRule(jump=0, selector=0, op=CompareOp.ALWAYS, operand=0, address=0, action=1))
    return MemoryImage(words)


compile = compile_rules  # noqa: A001
