#!/usr/bin/env python3
"""Independent reference implementation of eighth-note quantization.

Generates randomized note lists, quantizes them with a brute-force
per-cell overlap scan, and freezes the expected grids into
tests/data/quantize_cases.json. The C++ implementation is tested
against these frozen cases; keep this script free of any code shared
with src/.

Rule: with q = ticks_per_quarter / 2, a note occupying the half-open
tick interval [a, b) after offset subtraction belongs to step t iff
its overlap with [t*q, (t+1)*q) is at least q/2. All arithmetic is
done on ticks scaled by 2 so odd ticks_per_quarter stays integral.
"""

import json
import math
import random
from pathlib import Path


def quantize_reference(tpq, offset, events):
    steps = {}
    Q = tpq  # one eighth note, in 2x-scaled ticks
    for pitch, onset, dur in events:
        A = 2 * (onset - offset)
        B = A + 2 * dur
        t_first = max(0, A // Q)
        t_last = math.ceil(B / Q)  # exclusive
        for t in range(t_first, t_last):
            ov = min(B, (t + 1) * Q) - max(A, t * Q)
            if 2 * ov >= Q:
                steps.setdefault(t, set()).add(pitch)
    if not steps:
        return []
    length = max(steps) + 1
    return [sorted(steps.get(t, set())) for t in range(length)]


def random_case(rng):
    tpq = rng.choice([480, 384, 96, 25])
    offset = rng.choice([0, 0, 30, 7])
    n = rng.randint(0, 12)
    events = []
    for _ in range(n):
        pitch = rng.randint(30, 100)
        onset = rng.randint(0, 8 * tpq)
        dur = rng.randint(1, 3 * tpq)
        events.append((pitch, onset, dur))
    events.sort(key=lambda e: (e[1], e[0]))
    return {
        "tpq": tpq,
        "offset": offset,
        "events": [list(e) for e in events],
        "grid": quantize_reference(tpq, offset, events),
    }


def main():
    rng = random.Random(20260822)
    cases = [random_case(rng) for _ in range(25)]
    # a few hand-picked edges: empty piece, boundary overlaps, pre-offset note
    cases.append({"tpq": 480, "offset": 0, "events": [],
                  "grid": quantize_reference(480, 0, [])})
    cases.append({"tpq": 480, "offset": 0, "events": [[60, 0, 480]],
                  "grid": quantize_reference(480, 0, [(60, 0, 480)])})
    # sixteenth note exactly half a cell: included (overlap == q/2)
    cases.append({"tpq": 480, "offset": 0, "events": [[72, 0, 120]],
                  "grid": quantize_reference(480, 0, [(72, 0, 120)])})
    # sixteenth straddling a cell boundary: dropped from both cells
    cases.append({"tpq": 480, "offset": 0, "events": [[72, 180, 120]],
                  "grid": quantize_reference(480, 0, [(72, 180, 120)])})
    # note starting before the offset grid origin
    cases.append({"tpq": 480, "offset": 100, "events": [[55, 0, 2000]],
                  "grid": quantize_reference(480, 100, [(55, 0, 2000)])})
    out = Path(__file__).resolve().parent.parent / "data" / "quantize_cases.json"
    out.write_text(json.dumps(cases, indent=1) + "\n")
    print(f"wrote {len(cases)} cases to {out}")


if __name__ == "__main__":
    main()
