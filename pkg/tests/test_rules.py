import ipaddress
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pce.rules import (IP_BITS, PORT_BITS, PROTO_BITS, Action, FieldPattern, Kind, PatternError,
                       Rule, RuleSet, RuleSyntaxError, format_rules, parse_rules, pattern_matches)


def test_sample_row_1():
    rs = parse_rules("allow tcp 167.205.3.11 167.205.65.32 25 8080")
    assert rs.rules == (Rule(FieldPattern.exact(8, 6),
                             FieldPattern.exact(32, 0xA7CD030B),
                             FieldPattern.exact(32, 0xA7CD4120),
                             FieldPattern.exact(16, 25),
                             FieldPattern.exact(16, 8080),
                             Action.PERMIT),)


def test_sample_row_4():
    (r,) = parse_rules("allow tcp * 134.25.5.2 >1023 80")
    assert r.proto == FieldPattern.exact(8, 6)
    assert r.src_ip.kind is Kind.ANY
    assert r.dst_ip == FieldPattern.exact(32, 0x86190502)
    assert r.src_port == FieldPattern.greater(16, 1023)
    assert r.dst_port == FieldPattern.exact(16, 80)
    assert r.action is Action.PERMIT


def test_empty_document():
    rs = parse_rules("")
    assert rs.rules == ()
    assert rs.default_action is Action.DENY


def test_comments_blank_lines_and_order(sample_rules):
    assert [r.action for r in sample_rules] == [Action.PERMIT, Action.DENY, Action.PERMIT,
                                               Action.PERMIT]
    assert parse_rules("\n# nothing\n   \ndeny * * * * *  # trailing\n")[0].action is Action.DENY


def test_trailing_wildcards_become_prefixes(sample_rules):
    assert sample_rules[1].src_ip == FieldPattern.prefix(32, 0xC0A80000, 16)
    assert sample_rules[1].dst_ip.kind is Kind.ANY
    (r,) = parse_rules("allow * 10.*.*.* 10.1.2.* * *")
    assert r.src_ip == FieldPattern.prefix(32, 0x0A000000, 8)
    assert r.dst_ip == FieldPattern.prefix(32, 0x0A010200, 24)


def test_port_forms():
    (r,) = parse_rules("deny udp * * <1024 1000-2000")
    assert r.src_port == FieldPattern.less(16, 1024)
    assert r.dst_port == FieldPattern(Kind.RANGE, 16, 1000, 2000)
    (r,) = parse_rules("deny 47 * * 0-65535 *")
    assert r.proto == FieldPattern.exact(8, 47)
    assert r.src_port.kind is Kind.ANY


@pytest.mark.parametrize("line, column, fragment", [
    ("allow tcp 1.2.3.4 5.6.7.8 70000 80", 27, "port out of range"),
    ("allow tcp 1.2.3.4/33 * * *", 19, "prefix length"),
    ("allow tcp 1.2.3.4/x * * *", 19, "prefix length"),
    ("allow tcp * * >70000 *", 15, "port out of range"),
    ("allow tcp * * * >65535", 17, "matches no port"),
    ("allow tcp * * 80 81 82", 21, "expected 6 fields"),
    ("allow tcp * * <0 80", 15, "matches no port"),
    ("permit tcp * * * *", 1, "unknown action"),
    ("allow gre * * * *", 7, "unknown protocol"),
    ("allow 256 * * * *", 7, "protocol out of range"),
    ("allow tcp 192.*.5.* * * *", 11, "non-contiguous"),
    ("allow tcp 1.2.3 * * *", 11, "malformed"),
    ("allow tcp * * 9-3 *", 15, "empty port range"),
])
def test_syntax_errors(line, column, fragment):
    with pytest.raises(RuleSyntaxError) as ei:
        parse_rules("# header\n" + line)
    err = ei.value
    assert err.line == 2
    assert err.column == column
    assert fragment in str(err)


def test_greater_max_minus_one_is_valid():
    (r,) = parse_rules("allow tcp * * >65534 80")
    assert r.src_port.bounds() == (65535, 65535)


def test_greater_max_rejected():
    with pytest.raises(RuleSyntaxError, match="matches no port"):
        parse_rules("allow tcp * * 80 >65535")


def test_normalization():
    assert FieldPattern.range(16, 0, 65535) == FieldPattern.any(16)
    assert FieldPattern.prefix(32, 0x01020304, 0) == FieldPattern.any(32)
    assert FieldPattern.prefix(32, 0xC0A80407, 16) == FieldPattern.prefix(32, 0xC0A80000, 16)
    assert FieldPattern.prefix(32, 0x01020304, 32) == FieldPattern.exact(32, 0x01020304)
    with pytest.raises(PatternError):
        FieldPattern.range(16, 9, 3)
    with pytest.raises(PatternError):
        FieldPattern.exact(8, 256)


def test_empty_patterns_flagged():
    assert FieldPattern.greater(16, 65535).is_empty
    assert FieldPattern.less(16, 0).is_empty
    with pytest.raises(PatternError):
        FieldPattern.less(8, 0).bounds()


def test_rule_requires_field_widths():
    with pytest.raises(PatternError):
        Rule(*(FieldPattern.any(16),) * 5, action=Action.DENY)


# pattern_matches --------------------------------------------------------

def test_prefix_example():
    p = FieldPattern.prefix(32, 0xC0A80000, 16)
    assert pattern_matches(p, 0xC0A80407)
    assert not pattern_matches(p, 0xC0A90407)


def test_any_matches_zero():
    assert pattern_matches(FieldPattern.any(32), 0)


def test_greater_1023_exhaustive():
    p = FieldPattern.greater(16, 1023)
    assert not pattern_matches(p, 1023)
    assert pattern_matches(p, 1024)
    got = [pattern_matches(p, v) for v in range(65536)]
    assert got == [v > 1023 for v in range(65536)]


def _members(p: FieldPattern):
    """Membership predicate built from set-like objects, not from pattern_matches."""
    if p.kind is Kind.ANY:
        return range(0, p.max + 1)
    if p.kind is Kind.EXACT:
        return {p.value}
    if p.kind is Kind.GREATER:
        return range(p.value + 1, p.max + 1)
    if p.kind is Kind.LESS:
        return range(0, p.value)
    if p.kind is Kind.RANGE:
        return range(p.value, p.hi + 1)
    net = ipaddress.ip_network((p.value, p.prefix_len)) if p.width == 32 else None
    return range(int(net.network_address), int(net.broadcast_address) + 1)


def _random_patterns(rng):
    for width in (PROTO_BITS, PORT_BITS, IP_BITS):
        top = (1 << width) - 1
        yield FieldPattern.any(width)
        yield FieldPattern.exact(width, rng.randint(0, top))
        yield FieldPattern.greater(width, rng.randint(0, top - 1))
        yield FieldPattern.less(width, rng.randint(1, top))
        lo = rng.randint(0, top)
        yield FieldPattern.range(width, lo, rng.randint(lo, top))
    for length in (1, 7, 8, 12, 16, 23, 24, 31):
        yield FieldPattern.prefix(32, rng.getrandbits(32), length)


def test_matches_agree_with_set_membership():
    rng = random.Random(7)
    for p in _random_patterns(rng):
        members = _members(p)
        lo, hi = p.bounds()
        values = [rng.randint(0, p.max) for _ in range(10_000)]
        # bias a share of the draws onto the edges
        values += [min(p.max, max(0, v)) for v in (lo - 1, lo, hi, hi + 1)]
        for v in values:
            assert pattern_matches(p, v) == (v in members), (p, v)


# roundtrip / normalization properties ------------------------------------

def _pattern(width):
    top = (1 << width) - 1
    v = st.integers(0, top)
    kinds = [st.just(FieldPattern.any(width)), v.map(lambda x: FieldPattern.exact(width, x))]
    if width == 32:
        kinds.append(st.tuples(v, st.integers(0, 32)).map(
            lambda t: FieldPattern.prefix(32, *t)))
    if width == 16:
        kinds += [
            st.integers(0, top - 1).map(lambda x: FieldPattern.greater(16, x)),
            st.integers(1, top).map(lambda x: FieldPattern.less(16, x)),
            st.tuples(v, v).map(lambda t: FieldPattern.range(16, min(t), max(t))),
        ]
    return st.one_of(kinds)


rules_st = st.builds(Rule, _pattern(8), _pattern(32), _pattern(32), _pattern(16), _pattern(16),
                     st.sampled_from(list(Action)))


@settings(max_examples=300)
@given(st.lists(rules_st, max_size=6))
def test_print_parse_roundtrip(rules):
    rs = RuleSet(tuple(rules))
    assert parse_rules(format_rules(rs)) == rs


@given(_pattern(32) | _pattern(16) | _pattern(8))
def test_normalization_idempotent(p):
    assert p.normalized() == p.normalized().normalized()
