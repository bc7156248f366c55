"""Packet classification engine: rule compiler, sub-rule ISA and a
cycle-accurate interpreter, checked against a linear reference classifier."""

from .compiler import CapacityError, CompileError, compile_rules, lower_rule
from .engine import Engine, EngineFault, Verdict
from .ingest import IngestRecord, PacketHeader, parse_csv, parse_frame, read_pcap
from .isa import CompareOp, MemoryImage, SubRule, decode, encode, read_image, validate_image, write_image
from .oracle import classify_linear, differential_run
from .rules import Action, FieldPattern, Kind, Rule, RuleSet, parse_rules, pattern_matches

__all__ = [
    "Action", "CapacityError", "CompareOp", "CompileError", "Engine", "EngineFault",
    "FieldPattern", "IngestRecord", "Kind", "MemoryImage", "PacketHeader", "Rule", "RuleSet",
    "SubRule", "Verdict", "classify_linear", "compile_rules", "decode", "differential_run",
    "encode", "lower_rule", "parse_csv", "parse_frame", "parse_rules", "pattern_matches",
    "read_image", "read_pcap", "validate_image", "write_image",
]
