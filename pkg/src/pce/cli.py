"""Command-line front end: compile, run, diff, bench.

Exit codes: 0 ok, 1 policy or differential failure, 2 invalid input,
3 runtime fault.
"""

from __future__ import annotations

import argparse
import collections
import json
import random
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .compiler import CompileError, compile_rules
from .engine import TRACE_HEADER, Engine, EngineFault, format_trace
from .ingest import IngestError, IngestRecord, PacketHeader, parse_csv, read_pcap
from .isa import MEMORY_WORDS, ImageError, disassemble, read_image, validate_image, write_image
from .oracle import (DiffReport, differential_run, gen_boundary_headers, gen_random_headers,
                     gen_random_ruleset)
from .rules import FIELD_WIDTHS, RuleSet, RuleSyntaxError, parse_rules

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_INPUT = 2
EXIT_FAULT = 3

NOT_MODELED_BANNER = ("hardware frequency not modeled: software classifications/s are not "
                      "comparable to the FPGA clock rate")


@dataclass
class RunStats:
    packets: int = 0
    permitted: int = 0
    denied: int = 0
    non_classifiable: int = 0
    cycles_min: int = 0
    cycles_avg: float = 0.0
    cycles_max: int = 0

    @classmethod
    def collect(cls, verdicts: list[bool | None], cycles: list[int]) -> RunStats:
        s = cls(packets=len(verdicts))
        s.non_classifiable = sum(v is None for v in verdicts)
        s.permitted = sum(v is True for v in verdicts)
        s.denied = sum(v is False for v in verdicts)
        if cycles:
            s.cycles_min = min(cycles)
            s.cycles_max = max(cycles)
            s.cycles_avg = sum(cycles) / len(cycles)
        return s

    def format(self) -> str:
        return (f"packets {self.packets}\npermitted {self.permitted}\ndenied {self.denied}\n"
                f"non_classifiable {self.non_classifiable}\ncycles_min {self.cycles_min}\n"
                f"cycles_avg {self.cycles_avg:.2f}\ncycles_max {self.cycles_max}\n")


def _err(msg: str) -> None:
    print(f"pce: {msg}", file=sys.stderr)


def _load_rules(path: str) -> RuleSet:
    return parse_rules(Path(path).read_text(encoding="utf-8"))


def _load_image(path: str):
    with open(path, encoding="utf-8") as fp:
        return read_image(fp)


# ---------------------------------------------------------------------------

def cmd_compile(args) -> int:
    try:
        rs = _load_rules(args.rules)
    except (OSError, RuleSyntaxError) as exc:
        _err(f"{args.rules}: {exc}")
        return EXIT_INPUT
    try:
        img = compile_rules(rs)
    except CompileError as exc:
        _err(str(exc))
        return EXIT_FAIL
    with open(args.output, "w", encoding="utf-8") as fp:
        write_image(img, fp)
    print(f"{len(img)} words / {MEMORY_WORDS}")
    if args.print_asm:
        sys.stdout.write(disassemble(img))
    return EXIT_OK


def _ingest(args) -> list[IngestRecord]:
    if args.csv:
        text = Path(args.csv).read_text(encoding="utf-8")
        return parse_csv(text, strict=not args.lenient, source=args.csv)
    return read_pcap(args.pcap)


def cmd_run(args) -> int:
    try:
        img = _load_image(args.image)
    except (OSError, ImageError) as exc:
        _err(f"{args.image}: {exc}")
        return EXIT_INPUT
    diags = validate_image(img)
    if diags:
        for d in diags:
            _err(f"{args.image}: {d}")
        return EXIT_INPUT
    try:
        records = _ingest(args)
    except (OSError, IngestError) as exc:
        _err(str(exc))
        return EXIT_INPUT

    t0 = time.perf_counter()
    engine = Engine(img)
    headers = [r.header for r in records if r.classifiable]
    traces: list[str | None] = [None] * len(headers)
    if args.trace:
        permit, cycles = [], []
        for i, h in enumerate(headers):
            try:
                v = engine.classify(h, trace=True)
            except EngineFault as exc:
                return _fault(records, i, str(exc))
            permit.append(v.permit)
            cycles.append(v.cycles)
            traces[i] = format_trace(v.trace)
    else:
        permit_a, cycles_a, status = engine.classify_many(headers, backend=args.backend)
        bad = np.flatnonzero(status)
        if bad.size:
            i = int(bad[0])
            return _fault(records, i, _kernels.STATUS_TEXT[int(status[i])])
        permit, cycles = permit_a.tolist(), cycles_a.tolist()
    elapsed = time.perf_counter() - t0

    out = sys.stdout
    verdicts: list[bool | None] = []
    k = 0
    for n, rec in enumerate(records, 1):
        if rec.classifiable:
            ok, cyc = bool(permit[k]), int(cycles[k])
            verdicts.append(ok)
            tuple_s = str(rec.header)
            trace = traces[k]
            k += 1
        else:
            ok, cyc, trace = args.pass_nonip, 0, None
            verdicts.append(None)
            tuple_s = f"nonclassifiable({rec.reason})"
        label = "PERMIT" if ok else "DENY"
        if args.json:
            out.write(json.dumps({"n": n, "packet": tuple_s, "verdict": label, "cycles": cyc}) + "\n")
        else:
            out.write(f"{n} {tuple_s} {label} {cyc}\n")
        if trace:
            out.write(f"# {TRACE_HEADER}\n")
            out.write(trace)

    stats = RunStats.collect(verdicts, [int(c) for c in cycles])
    out.write("--\n")
    out.write(stats.format())
    if args.stats_json:
        payload = asdict(stats) | {"wall_time_s": elapsed}
        Path(args.stats_json).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def _fault(records: list[IngestRecord], header_index: int, message: str) -> int:
    # map the index among classifiable records back to the packet number
    seen = -1
    for n, rec in enumerate(records, 1):
        if rec.classifiable:
            seen += 1
            if seen == header_index:
                _err(f"engine fault on packet {n}: {message}")
                return EXIT_FAULT
    _err(f"engine fault: {message}")
    return EXIT_FAULT


def cmd_diff(args) -> int:
    image = None
    if args.image:
        try:
            image = _load_image(args.image)
        except (OSError, ImageError) as exc:
            _err(f"{args.image}: {exc}")
            return EXIT_INPUT
    fixed = None
    if args.rules:
        try:
            fixed = _load_rules(args.rules)
            if image is None:
                compile_rules(fixed)
        except (OSError, RuleSyntaxError, CompileError) as exc:
            _err(f"{args.rules}: {exc}")
            return EXIT_INPUT

    report = DiffReport()
    tagged = []
    for seed in range(args.seeds):
        rs = fixed if fixed is not None else gen_random_ruleset(seed, args.max_rules)
        headers = gen_random_headers(rs, seed, args.headers)
        if fixed is None or seed == 0:
            headers += gen_boundary_headers(rs)
        part = differential_run(rs, headers, image=image, backend=args.backend)
        tagged += [(seed, m) for m in part.mismatches]
        report.merge(part)
    print(f"rulesets {args.seeds} headers {report.total} mismatches {len(report.mismatches)}")
    if report.ok:
        return EXIT_OK
    path = Path(args.report)
    with path.open("w", encoding="utf-8") as fp:
        for seed, m in tagged:
            fp.write(json.dumps({"seed": seed} | m.as_dict()) + "\n")
    _err(f"{len(report.mismatches)} mismatches; report written to {path}")
    return EXIT_FAIL


def cmd_bench(args) -> int:
    try:
        img = _load_image(args.image)
    except (OSError, ImageError) as exc:
        _err(f"{args.image}: {exc}")
        return EXIT_INPUT
    if args.csv:
        try:
            recs = parse_csv(Path(args.csv).read_text(encoding="utf-8"), source=args.csv)
        except (OSError, IngestError) as exc:
            _err(str(exc))
            return EXIT_INPUT
        base = [r.header for r in recs]
        headers = [base[i % len(base)] for i in range(args.packets)] if base else []
    else:
        rng = random.Random(args.seed)
        headers = [PacketHeader(*(rng.getrandbits(w) for _, w in FIELD_WIDTHS))
                   for _ in range(args.packets)]

    print(NOT_MODELED_BANNER)
    engine = Engine(img)
    backends = _kernels.available_backends() + ["python"] if args.backend == "all" else [args.backend]
    hist = None
    for backend in backends:
        if backend == "python":
            t0 = time.perf_counter()
            try:
                cyc = [engine.classify(h).cycles for h in headers]
            except EngineFault as exc:
                _err(str(exc))
                return EXIT_FAULT
            dt = time.perf_counter() - t0
            status = np.zeros(len(cyc), dtype=np.int8)
        else:
            engine.classify_many(headers[:1], backend=backend)  # warm-up / JIT
            t0 = time.perf_counter()
            _, cyc, status = engine.classify_many(headers, backend=backend)
            dt = time.perf_counter() - t0
        if np.any(status):
            _err("engine fault during benchmark")
            return EXIT_FAULT
        rate = len(headers) / dt if dt > 0 else float("inf")
        print(f"backend {backend}: {len(headers)} packets in {dt:.4f} s, "
              f"{rate:,.0f} classifications/s")
        if hist is None:
            hist = collections.Counter(int(c) for c in cyc)
    print("cycles histogram:")
    for c in sorted(hist or {}):
        print(f"  {c:3d} {hist[c]}")
    if hist:
        print(f"mode {hist.most_common(1)[0][0]}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pce", description="Tree-based packet classification engine")
    sub = p.add_subparsers(dest="command", required=True)
    backends = _kernels.available_backends()

    c = sub.add_parser("compile", help="compile a rules file to a memory image")
    c.add_argument("rules")
    c.add_argument("-o", "--output", required=True)
    c.add_argument("--print-asm", action="store_true", help="dump a disassembly")
    c.set_defaults(func=cmd_compile)

    r = sub.add_parser("run", help="classify packets with a memory image")
    r.add_argument("image")
    src = r.add_mutually_exclusive_group(required=True)
    src.add_argument("--csv")
    src.add_argument("--pcap")
    r.add_argument("--trace", action="store_true", help="print the engine trace per packet")
    r.add_argument("--pass-nonip", action="store_true",
                   help="permit non-classifiable packets instead of denying them")
    r.add_argument("--lenient", action="store_true",
                   help="treat malformed CSV lines as non-classifiable")
    r.add_argument("--json", action="store_true", help="JSON-lines verdict output")
    r.add_argument("--stats-json", metavar="FILE")
    r.add_argument("--backend", choices=backends, default=_kernels.DEFAULT_BACKEND)
    r.set_defaults(func=cmd_run)

    d = sub.add_parser("diff", help="differential test: engine vs linear oracle")
    d.add_argument("rules", nargs="?", help="rules file (default: random rule sets per seed)")
    d.add_argument("--seeds", type=int, default=10)
    d.add_argument("--headers", type=int, default=100)
    d.add_argument("--max-rules", type=int, default=8)
    d.add_argument("--image", help="run this image instead of the compiled one")
    d.add_argument("--report", default="diff-report.jsonl")
    d.add_argument("--backend", choices=backends, default=_kernels.DEFAULT_BACKEND)
    d.set_defaults(func=cmd_diff)

    b = sub.add_parser("bench", help="software throughput and cycle histogram")
    b.add_argument("image")
    b.add_argument("--packets", type=int, default=100_000)
    b.add_argument("--csv", help="replay these packets instead of random traffic")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--backend", choices=backends + ["python", "all"],
                   default=_kernels.DEFAULT_BACKEND)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
