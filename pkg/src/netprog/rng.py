"""Counter-based random streams.

Every stream is a Philox generator keyed by the run seed and positioned by
a counter built from integers such as (iteration, block, subject). Draws
for one subject therefore do not depend on how many other streams were
consumed before it, so chunked or threaded execution reproduces a serial
run exactly.
"""
from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1


def stream(seed: int, *counter: int) -> np.random.Generator:
    if len(counter) > 3:
        raise ValueError("at most three counter words")
    words = [int(c) & MASK64 for c in counter] + [0] * (3 - len(counter))
    # the lowest word is left at zero for the generator's own draws
    return np.random.Generator(np.random.Philox(key=int(seed) & MASK64, counter=[0] + words))
