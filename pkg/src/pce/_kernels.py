"""Batch interpreter kernels.

``run_batch`` executes one image against many headers and returns per-packet
(permit, cycles, status) arrays. Two interchangeable backends:

* ``numba``: a per-packet loop compiled with ``@njit``;
* ``numpy``: all packets advance in lockstep, one word per iteration, with
  fancy indexing over the pc vector.

Set ``PCE_DISABLE_NUMBA=1`` to force the numpy path (also used when numba is
not importable).
"""

from __future__ import annotations

import os

import numpy as np

WATCHDOG_STEPS = 65536

STATUS_OK = 0
STATUS_BAD_SELECTOR = 1
STATUS_FALL_OFF = 2
STATUS_WATCHDOG = 3

STATUS_TEXT = {
    STATUS_OK: "ok",
    STATUS_BAD_SELECTOR: "invalid selector",
    STATUS_FALL_OFF: "fell off end of rules memory",
    STATUS_WATCHDOG: "watchdog: step limit exceeded",
}

_DISABLED = os.environ.get("PCE_DISABLE_NUMBA", "").lower() in ("1", "true", "yes", "on")

try:
    if _DISABLED:
        raise ImportError("numba disabled by PCE_DISABLE_NUMBA")
    from numba import njit
    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

DEFAULT_BACKEND = "numba" if HAVE_NUMBA else "numpy"


def _run_batch_numpy(words, fields, watchdog):
    n_words = words.shape[0]
    n = fields.shape[0]
    jump = (words >> 23) & 1
    sel = ((words >> 19) & 0xF).astype(np.intp)
    op = (words >> 17) & 0x3
    operand = (words >> 9) & 0xFF
    addr = ((words >> 1) & 0xFF).astype(np.intp)
    action = words & 1

    permit = np.zeros(n, dtype=np.bool_)
    cycles = np.zeros(n, dtype=np.int64)
    status = np.zeros(n, dtype=np.int8)
    pc = np.zeros(n, dtype=np.intp)
    live = np.arange(n)

    steps = 0
    while live.size:
        if steps == watchdog:
            status[live] = STATUS_WATCHDOG
            break
        steps += 1
        p = pc[live]
        s = sel[p]
        bad = s >= 13
        if bad.any():
            status[live[bad]] = STATUS_BAD_SELECTOR
            keep = ~bad
            live, p, s = live[keep], p[keep], s[keep]
        cycles[live] += 1
        value = fields[live, np.minimum(s, 12)].astype(np.uint32)
        o = op[p]
        k = operand[p]
        match = (((o == 0) & (value == k)) | ((o == 1) & (value > k))
                 | ((o == 2) & (value < k)) | (o == 3))
        done = match & (action[p] == 1)
        permit[live[done]] = jump[p[done]] == 1
        nxt = np.where(match, np.where(jump[p] == 1, addr[p], p + 1), addr[p])
        off = ~done & (nxt >= n_words)
        status[live[off]] = STATUS_FALL_OFF
        cont = ~done & ~off
        live = live[cont]
        pc[live] = nxt[cont]
    return permit, cycles, status


if HAVE_NUMBA:
    @njit(cache=True)
    def _run_batch_numba(words, fields, watchdog):
        n_words = words.shape[0]
        n = fields.shape[0]
        permit = np.zeros(n, dtype=np.bool_)
        cycles = np.zeros(n, dtype=np.int64)
        status = np.zeros(n, dtype=np.int8)
        for i in range(n):
            pc = 0
            steps = 0
            while True:
                if steps == watchdog:
                    status[i] = STATUS_WATCHDOG
                    break
                w = words[pc]
                sel = (w >> 19) & 0xF
                if sel >= 13:
                    status[i] = STATUS_BAD_SELECTOR
                    break
                steps += 1
                op = (w >> 17) & 0x3
                k = (w >> 9) & 0xFF
                v = fields[i, sel]
                if op == 0:
                    match = v == k
                elif op == 1:
                    match = v > k
                elif op == 2:
                    match = v < k
                else:
                    match = True
                if match and (w & 1) == 1:
                    permit[i] = ((w >> 23) & 1) == 1
                    break
                if match and ((w >> 23) & 1) == 0:
                    pc += 1
                else:
                    pc = (w >> 1) & 0xFF
                if pc >= n_words:
                    status[i] = STATUS_FALL_OFF
                    break
            cycles[i] = steps
        return permit, cycles, status
else:
    _run_batch_numba = None


def available_backends() -> list[str]:
    return ["numba", "numpy"] if HAVE_NUMBA else ["numpy"]


def run_batch(words, fields, watchdog: int = WATCHDOG_STEPS, backend: str | None = None):
    """Classify every row of ``fields`` (N x 13 uint8) against encoded ``words``.

    Returns ``(permit, cycles, status)``. ``cycles`` counts words executed; a
    word rejected for its selector is not counted.
    """
    words = np.ascontiguousarray(words, dtype=np.uint32)
    fields = np.ascontiguousarray(fields, dtype=np.uint8).reshape(-1, 13)
    backend = backend or DEFAULT_BACKEND
    if backend == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba backend unavailable")
        return _run_batch_numba(words, fields, watchdog)
    if backend == "numpy":
        return _run_batch_numpy(words, fields, watchdog)
    raise ValueError(f"unknown backend {backend!r}")
