"""Reference classifier and differential harness.

The linear classifier works on whole field values through ``pattern_matches``
and never touches the byte decomposition, the word format or the engine.
That independence is the point: the harness compares it against the
compiled image running on the engine.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

from .compiler import CapacityError, CompileError, compile_rules
from .engine import Engine, Verdict
from .ingest import PacketHeader
from .isa import MemoryImage
from .rules import (FIELD_WIDTHS, IP_BITS, PORT_BITS, PROTO_BITS, Action, FieldPattern,
                    Rule, RuleSet, pattern_matches)


class OracleVerdict(NamedTuple):
    permit: bool
    matched_rule: int | None


def classify_linear(rs: RuleSet | Sequence[Rule], h: PacketHeader) -> OracleVerdict:
    """First rule whose five patterns all match decides; otherwise deny."""
    values = (h.proto, h.src_ip, h.dst_ip, h.src_port, h.dst_port)
    for i, rule in enumerate(rs):
        if all(pattern_matches(p, v) for p, v in zip(rule.patterns, values)):
            return OracleVerdict(rule.action is Action.PERMIT, i)
    return OracleVerdict(False, None)


class Mismatch(NamedTuple):
    index: int
    header: PacketHeader
    engine: Verdict | str
    oracle: OracleVerdict

    def as_dict(self) -> dict:
        if isinstance(self.engine, Verdict):
            engine = {"permit": self.engine.permit, "cycles": self.engine.cycles,
                      "trace": [t.format() for t in self.engine.trace or ()]}
        else:
            engine = {"fault": self.engine}
        return {"index": self.index, "header": list(self.header), "engine": engine,
                "oracle": {"permit": self.oracle.permit,
                           "matched_rule": self.oracle.matched_rule}}


@dataclass
class DiffReport:
    total: int = 0
    mismatches: list[Mismatch] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.mismatches

    def merge(self, other: DiffReport) -> None:
        self.total += other.total
        self.mismatches.extend(other.mismatches)


def differential_run(rs: RuleSet, headers: Sequence[PacketHeader],
                     image: MemoryImage | None = None, backend: str | None = None) -> DiffReport:
    """Compare engine and oracle verdicts for every header.

    ``image`` overrides the compiled image (used to check that the harness
    catches a broken one). Engines run through the batch kernel; mismatching
    headers are re-run on the stepwise engine to capture a trace.
    """
    if image is None:
        image = compile_rules(rs)
    headers = [PacketHeader(*h) for h in headers]
    report = DiffReport(total=len(headers))
    if not headers:
        return report
    engine = Engine(image)
    permit, cycles, status = engine.classify_many(headers, backend=backend)
    for i, h in enumerate(headers):
        expected = classify_linear(rs, h)
        if status[i] == 0 and bool(permit[i]) == expected.permit:
            continue
        try:
            got: Verdict | str = engine.classify(h, trace=True)
        except Exception as exc:  # faults are mismatches too
            engine.reset()
            got = f"{type(exc).__name__}: {exc}"
        report.mismatches.append(Mismatch(i, h, got, expected))
    return report


# ---------------------------------------------------------------------------
# generators

_PROTOS = (1, 6, 17)


def _random_ip_pattern(rng: random.Random) -> FieldPattern:
    r = rng.random()
    if r < 0.3:
        return FieldPattern.any(IP_BITS)
    addr = rng.getrandbits(32)
    if r < 0.6:
        return FieldPattern.exact(IP_BITS, addr)
    if r < 0.85:
        return FieldPattern.prefix(IP_BITS, addr, rng.choice((8, 16, 24)))
    return FieldPattern.prefix(IP_BITS, addr, rng.randint(1, 31))


def _random_port_pattern(rng: random.Random) -> FieldPattern:
    r = rng.random()
    if r < 0.3:
        return FieldPattern.any(PORT_BITS)
    if r < 0.55:
        return FieldPattern.exact(PORT_BITS, rng.choice((rng.randrange(1024), rng.getrandbits(16))))
    if r < 0.7:
        return FieldPattern.greater(PORT_BITS, rng.randrange(0xFFFF))
    if r < 0.8:
        return FieldPattern.less(PORT_BITS, rng.randrange(1, 0x10000))
    lo = rng.getrandbits(16)
    hi = rng.randrange(lo, min(0x10000, lo + rng.choice((8, 300, 5000, 0x10000))))
    return FieldPattern.range(PORT_BITS, lo, hi)


def _random_rule(rng: random.Random) -> Rule:
    if rng.random() < 0.2:
        proto = FieldPattern.any(PROTO_BITS)
    else:
        proto = FieldPattern.exact(PROTO_BITS, rng.choice(_PROTOS))
    return Rule(proto, _random_ip_pattern(rng), _random_ip_pattern(rng),
                _random_port_pattern(rng), _random_port_pattern(rng),
                rng.choice((Action.PERMIT, Action.DENY)))


def gen_random_ruleset(seed: int, max_rules: int = 8) -> RuleSet:
    """Reproducible random rule set that fits in rules memory."""
    rng = random.Random(seed)
    n = rng.randint(1, max_rules)
    rules: list[Rule] = []
    while len(rules) < n:
        candidate = rules + [_random_rule(rng)]
        try:
            compile_rules(candidate)
        except CapacityError:
            if rules:
                break
            continue
        except CompileError:
            continue
        rules = candidate
    return RuleSet(tuple(rules))


def _sample(p: FieldPattern, rng: random.Random) -> int:
    lo, hi = p.bounds()
    if rng.random() < 0.8:
        return rng.randint(lo, hi)
    return rng.randint(0, p.max)


def gen_random_headers(rs: RuleSet, seed: int, count: int) -> list[PacketHeader]:
    """Headers biased towards the rules: each starts from a random rule's
    patterns and most fields are drawn inside them."""
    rng = random.Random(seed)
    out = []
    for _ in range(count):
        if rs.rules and rng.random() < 0.9:
            rule = rng.choice(rs.rules)
            values = [_sample(p, rng) for p in rule.patterns]
        else:
            values = [rng.getrandbits(w) for _, w in FIELD_WIDTHS]
        out.append(PacketHeader(*values))
    return out


def boundary_values(p: FieldPattern) -> list[int]:
    """Values straddling each finite edge of the pattern, clamped to the field."""
    if p.is_empty:
        return [0, p.max]
    lo, hi = p.bounds()
    vals = set()
    if lo > 0:
        vals.update(range(lo - 2, lo + 2))
    else:
        vals.add(0)
    if hi < p.max:
        vals.update(range(hi - 1, hi + 3))
    else:
        vals.add(p.max)
    return sorted(v for v in vals if 0 <= v <= p.max)


def gen_boundary_headers(rs: RuleSet) -> list[PacketHeader]:
    """For each rule, hold every field at an in-pattern value and sweep one
    field at a time across that field's boundary values."""
    seen = set()
    out = []
    for rule in rs:
        base = [p.bounds()[0] for p in rule.patterns]
        for i, p in enumerate(rule.patterns):
            for v in boundary_values(p):
                values = list(base)
                values[i] = v
                h = PacketHeader(*values)
                if h not in seen:
                    seen.add(h)
                    out.append(h)
    return out
