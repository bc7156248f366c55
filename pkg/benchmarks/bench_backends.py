"""Compare the batch classification backends on the same image and traffic.

    python3 benchmarks/bench_backends.py [--packets N] [--rules FILE]

Checks that every backend returns identical verdicts and cycle counts, then
prints throughput. Software rates say nothing about the hardware clock.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from pce import _kernels
from pce.cli import NOT_MODELED_BANNER
from pce.compiler import compile_rules
from pce.engine import Engine, classify_batch
from pce.ingest import PacketHeader
from pce.isa import subfield_matrix
from pce.oracle import gen_random_headers, gen_random_ruleset
from pce.rules import parse_rules

DEFAULT_RULES = """\
allow tcp 167.205.3.11 167.205.65.32 25 8080
deny  tcp 192.168.*.* * 80 *
allow udp 167.205.65.5 * * *
allow tcp * 134.25.5.2 >1023 80
"""


def timed(fn, repeat=3):
    best = float("inf")
    result = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - t0)
    return best, result


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--packets", type=int, default=200_000)
    ap.add_argument("--python-packets", type=int, default=5_000,
                    help="sample size for the stepwise interpreter")
    ap.add_argument("--rules", help="rules file (default: the four-rule sample policy)")
    ap.add_argument("--random-rules", type=int, metavar="SEED",
                    help="use a generated rule set instead")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    if args.random_rules is not None:
        rs = gen_random_ruleset(args.random_rules, 8)
    else:
        rs = parse_rules(open(args.rules).read() if args.rules else DEFAULT_RULES)
    img = compile_rules(rs)
    headers = gen_random_headers(rs, args.seed, args.packets)
    fields = subfield_matrix(headers)
    engine = Engine(img)

    print(NOT_MODELED_BANNER)
    print(f"image {len(img)} words, {len(rs)} rules, {len(headers)} packets")

    reference = None
    for backend in _kernels.available_backends():
        classify_batch(img, fields[:8], backend=backend)  # JIT warm-up
        dt, out = timed(lambda b=backend: classify_batch(img, fields, backend=b))
        if reference is None:
            reference = out
        same = all(np.array_equal(a, b) for a, b in zip(reference, out))
        print(f"{backend:>6}: {dt * 1e3:9.2f} ms  {len(headers) / dt:14,.0f} pkt/s  "
              f"agrees={same}")
        if not same:
            raise SystemExit(f"backend {backend} disagrees with {_kernels.available_backends()[0]}")

    sample: list[PacketHeader] = headers[:args.python_packets]
    dt, verdicts = timed(lambda: [engine.classify(h) for h in sample], repeat=1)
    same = [v.permit for v in verdicts] == reference[0][:len(sample)].tolist()
    print(f"{'python':>6}: {dt * 1e3:9.2f} ms  {len(sample) / dt:14,.0f} pkt/s  "
          f"agrees={same} (first {len(sample)} packets)")

    cycles = reference[1]
    print(f"cycles min {cycles.min()} mean {cycles.mean():.2f} max {cycles.max()}")


if __name__ == "__main__":
    main()
