"""Firewall rule model and the line-oriented rules DSL.

A rules file holds one rule per line::

    # action proto  src_ip          dst_ip          sport  dport
    allow   tcp     167.205.3.11    167.205.65.32   25     8080
    deny    tcp     192.168.*.*     *               80     *
    allow   tcp     *               134.25.5.2      >1023  80

Rules are evaluated first-match-wins in file order; a packet that matches
nothing is denied.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Iterator

PROTO_BITS = 8
IP_BITS = 32
PORT_BITS = 16

PROTOCOL_NUMBERS = {"icmp": 1, "tcp": 6, "udp": 17}
PROTOCOL_NAMES = {v: k for k, v in PROTOCOL_NUMBERS.items()}


class PatternError(ValueError):
    """A field pattern that cannot exist (value too wide, lo > hi, ...)."""


class RuleSyntaxError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.reason = message
        self.line = line
        self.column = column


class Kind(enum.Enum):
    ANY = "any"
    EXACT = "exact"
    PREFIX = "prefix"
    GREATER = "greater"
    LESS = "less"
    RANGE = "range"


class Action(enum.Enum):
    PERMIT = "allow"
    DENY = "deny"


@dataclass(frozen=True)
class FieldPattern:
    """Match pattern over one unsigned header field of ``width`` bits.

    ``value`` is the literal for Exact/Greater/Less, the base address for
    Prefix and the lower bound for Range; ``hi`` is only used by Range.
    Construct through the classmethods, which normalize.
    """

    kind: Kind
    width: int
    value: int = 0
    hi: int = 0
    prefix_len: int = 0

    def __post_init__(self):
        top = self.max
        if self.width not in (PROTO_BITS, PORT_BITS, IP_BITS):
            raise PatternError(f"unsupported field width {self.width}")
        if not 0 <= self.value <= top:
            raise PatternError(f"value {self.value} out of range for {self.width}-bit field")
        if self.kind is Kind.RANGE:
            if not 0 <= self.hi <= top:
                raise PatternError(f"value {self.hi} out of range for {self.width}-bit field")
            if self.value > self.hi:
                raise PatternError(f"range {self.value}-{self.hi} has lo > hi")
        if self.kind is Kind.PREFIX and not 0 <= self.prefix_len <= self.width:
            raise PatternError(f"invalid prefix length /{self.prefix_len}")

    @property
    def max(self) -> int:
        return (1 << self.width) - 1

    # constructors -------------------------------------------------------

    @classmethod
    def any(cls, width: int) -> FieldPattern:
        return cls(Kind.ANY, width)

    @classmethod
    def exact(cls, width: int, value: int) -> FieldPattern:
        return cls(Kind.EXACT, width, value)

    @classmethod
    def greater(cls, width: int, value: int) -> FieldPattern:
        return cls(Kind.GREATER, width, value)

    @classmethod
    def less(cls, width: int, value: int) -> FieldPattern:
        return cls(Kind.LESS, width, value)

    @classmethod
    def range(cls, width: int, lo: int, hi: int) -> FieldPattern:
        return cls(Kind.RANGE, width, lo, hi).normalized()

    @classmethod
    def prefix(cls, width: int, base: int, length: int) -> FieldPattern:
        return cls(Kind.PREFIX, width, base, prefix_len=length).normalized()

    def normalized(self) -> FieldPattern:
        if self.kind is Kind.RANGE and self.value == 0 and self.hi == self.max:
            return FieldPattern.any(self.width)
        if self.kind is Kind.PREFIX:
            if self.prefix_len == 0:
                return FieldPattern.any(self.width)
            if self.prefix_len == self.width:
                return FieldPattern.exact(self.width, self.value)
            mask = self.max ^ ((1 << (self.width - self.prefix_len)) - 1)
            if self.value & mask != self.value:
                return FieldPattern(Kind.PREFIX, self.width, self.value & mask,
                                    prefix_len=self.prefix_len)
        return self

    # semantics ----------------------------------------------------------

    @property
    def is_empty(self) -> bool:
        """True for the two patterns that match no value at all."""
        return ((self.kind is Kind.GREATER and self.value == self.max)
                or (self.kind is Kind.LESS and self.value == 0))

    def bounds(self) -> tuple[int, int]:
        """Inclusive interval of matching values. Every kind is an interval.

        Raises PatternError for empty patterns.
        """
        if self.is_empty:
            raise PatternError(f"pattern {self} matches nothing")
        k = self.kind
        if k is Kind.ANY:
            return 0, self.max
        if k is Kind.EXACT:
            return self.value, self.value
        if k is Kind.GREATER:
            return self.value + 1, self.max
        if k is Kind.LESS:
            return 0, self.value - 1
        if k is Kind.RANGE:
            return self.value, self.hi
        span = 1 << (self.width - self.prefix_len)
        return self.value, self.value + span - 1

    def __str__(self) -> str:
        return format_pattern(self)


def pattern_matches(p: FieldPattern, v: int) -> bool:
    k = p.kind
    if k is Kind.ANY:
        return True
    if k is Kind.EXACT:
        return v == p.value
    if k is Kind.PREFIX:
        shift = p.width - p.prefix_len
        return (v >> shift) == (p.value >> shift)
    if k is Kind.GREATER:
        return v > p.value
    if k is Kind.LESS:
        return v < p.value
    return p.value <= v <= p.hi


@dataclass(frozen=True)
class Rule:
    proto: FieldPattern
    src_ip: FieldPattern
    dst_ip: FieldPattern
    src_port: FieldPattern
    dst_port: FieldPattern
    action: Action

    def __post_init__(self):
        for name, width in FIELD_WIDTHS:
            pat = getattr(self, name)
            if not isinstance(pat, FieldPattern):
                raise TypeError(f"{name} must be a FieldPattern")
            if pat.width != width:
                raise PatternError(f"{name} pattern must be {width}-bit, got {pat.width}")

    @property
    def patterns(self) -> tuple[FieldPattern, ...]:
        """Patterns in inspection order: proto, src ip, dst ip, sport, dport."""
        return (self.proto, self.src_ip, self.dst_ip, self.src_port, self.dst_port)

    @property
    def permit(self) -> bool:
        return self.action is Action.PERMIT

    def __str__(self) -> str:
        return format_rule(self)


FIELD_NAMES = ("proto", "src_ip", "dst_ip", "src_port", "dst_port")
FIELD_WIDTHS = tuple(zip(FIELD_NAMES, (PROTO_BITS, IP_BITS, IP_BITS, PORT_BITS, PORT_BITS)))


@dataclass(frozen=True)
class RuleSet:
    """Ordered rules; the default action is always deny."""

    rules: tuple[Rule, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(self.rules))

    @property
    def default_action(self) -> Action:
        return Action.DENY

    def __len__(self) -> int:
        return len(self.rules)

    def __iter__(self) -> Iterator[Rule]:
        return iter(self.rules)

    def __getitem__(self, i: int) -> Rule:
        return self.rules[i]


# ---------------------------------------------------------------------------
# DSL parsing

_TOKEN_RE = re.compile(r"\S+")
_INT_RE = re.compile(r"\d+")


class _TokenError(Exception):
    def __init__(self, message: str, offset: int = 0):
        super().__init__(message)
        self.offset = offset


def _parse_int(text: str, limit: int, what: str) -> int:
    if not _INT_RE.fullmatch(text):
        raise _TokenError(f"expected a number, got {text!r}")
    n = int(text)
    if n > limit:
        raise _TokenError(f"{what} out of range: {n} > {limit}")
    return n


def parse_proto(tok: str) -> FieldPattern:
    if tok == "*":
        return FieldPattern.any(PROTO_BITS)
    name = tok.lower()
    if name in PROTOCOL_NUMBERS:
        return FieldPattern.exact(PROTO_BITS, PROTOCOL_NUMBERS[name])
    if _INT_RE.fullmatch(tok):
        return FieldPattern.exact(PROTO_BITS, _parse_int(tok, 255, "protocol"))
    raise _TokenError(f"unknown protocol {tok!r}")


def parse_ip_address(text: str) -> int:
    parts = text.split(".")
    if len(parts) != 4:
        raise _TokenError(f"malformed IPv4 address {text!r}")
    value = 0
    for part in parts:
        value = (value << 8) | _parse_int(part, 255, "address octet")
    return value


def format_ip(value: int) -> str:
    return ".".join(str((value >> s) & 0xFF) for s in (24, 16, 8, 0))


def parse_ip(tok: str) -> FieldPattern:
    if tok == "*":
        return FieldPattern.any(IP_BITS)
    if "/" in tok:
        addr, _, length = tok.partition("/")
        base = parse_ip_address(addr)
        try:
            n = _parse_int(length, 10**9, "prefix length")
        except _TokenError:
            raise _TokenError(f"invalid prefix length {length!r}", len(addr) + 1)
        if n > IP_BITS:
            raise _TokenError(f"invalid prefix length /{n}", len(addr) + 1)
        return FieldPattern.prefix(IP_BITS, base, n)
    parts = tok.split(".")
    if "*" in parts:
        if len(parts) != 4:
            raise _TokenError(f"malformed IPv4 address {tok!r}")
        fixed = 0
        while fixed < 4 and parts[fixed] != "*":
            fixed += 1
        if any(p != "*" for p in parts[fixed:]):
            raise _TokenError("non-contiguous address wildcard (only trailing '*' octets allowed)")
        base = 0
        for part in parts[:fixed]:
            base = (base << 8) | _parse_int(part, 255, "address octet")
        base <<= 8 * (4 - fixed)
        return FieldPattern.prefix(IP_BITS, base, 8 * fixed)
    return FieldPattern.exact(IP_BITS, parse_ip_address(tok))


def parse_port(tok: str) -> FieldPattern:
    top = (1 << PORT_BITS) - 1
    if tok == "*":
        return FieldPattern.any(PORT_BITS)
    if tok.startswith(">"):
        n = _parse_int(tok[1:], top, "port")
        if n == top:
            raise _TokenError(f"'>{n}' matches no port")
        return FieldPattern.greater(PORT_BITS, n)
    if tok.startswith("<"):
        n = _parse_int(tok[1:], top, "port")
        if n == 0:
            raise _TokenError("'<0' matches no port")
        return FieldPattern.less(PORT_BITS, n)
    if "-" in tok:
        lo_s, _, hi_s = tok.partition("-")
        lo = _parse_int(lo_s, top, "port")
        try:
            hi = _parse_int(hi_s, top, "port")
        except _TokenError as exc:
            raise _TokenError(str(exc), len(lo_s) + 1)
        if lo > hi:
            raise _TokenError(f"empty port range {lo}-{hi}")
        return FieldPattern.range(PORT_BITS, lo, hi)
    return FieldPattern.exact(PORT_BITS, _parse_int(tok, top, "port"))


_FIELD_PARSERS = (parse_proto, parse_ip, parse_ip, parse_port, parse_port)


def parse_rule(line: str, lineno: int = 1) -> Rule:
    tokens = [(m.group(), m.start() + 1) for m in _TOKEN_RE.finditer(line)]
    if len(tokens) != 6:
        col = tokens[6][1] if len(tokens) > 6 else len(line.rstrip()) + 1
        raise RuleSyntaxError(f"expected 6 fields (action proto src dst sport dport), "
                              f"got {len(tokens)}", lineno, col)
    (verb, vcol), *rest = tokens
    try:
        action = Action(verb.lower())
    except ValueError:
        raise RuleSyntaxError(f"unknown action {verb!r} (expected allow or deny)", lineno, vcol)
    pats = []
    for parse, (tok, col) in zip(_FIELD_PARSERS, rest):
        try:
            pats.append(parse(tok))
        except _TokenError as exc:
            raise RuleSyntaxError(str(exc), lineno, col + exc.offset) from None
        except PatternError as exc:
            raise RuleSyntaxError(str(exc), lineno, col) from None
    return Rule(*pats, action=action)


def parse_rules(text: str) -> RuleSet:
    rules = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        rules.append(parse_rule(line, lineno))
    return RuleSet(tuple(rules))


# ---------------------------------------------------------------------------
# printing

def format_pattern(p: FieldPattern) -> str:
    if p.kind is Kind.ANY:
        return "*"
    if p.width == PROTO_BITS and p.kind is Kind.EXACT:
        return PROTOCOL_NAMES.get(p.value, str(p.value))
    if p.width == IP_BITS:
        if p.kind is Kind.EXACT:
            return format_ip(p.value)
        if p.kind is Kind.PREFIX:
            return f"{format_ip(p.value)}/{p.prefix_len}"
    if p.kind is Kind.EXACT:
        return str(p.value)
    if p.kind is Kind.GREATER:
        return f">{p.value}"
    if p.kind is Kind.LESS:
        return f"<{p.value}"
    if p.kind is Kind.RANGE:
        return f"{p.value}-{p.hi}"
    # patterns the DSL cannot express for this field width
    raise PatternError(f"{p.kind.value} pattern has no DSL form for a {p.width}-bit field")


def format_rule(r: Rule) -> str:
    return " ".join([r.action.value, *(format_pattern(p) for p in r.patterns)])


def format_rules(rs: RuleSet) -> str:
    return "".join(format_rule(r) + "\n" for r in rs)
