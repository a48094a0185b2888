"""Independent reference computations shared by the tests."""

from collections import defaultdict

import numpy as np


def exact_root_dmax_law(fun, n):
    """Law of (root degree, max degree) after n tree arrivals, by enumeration."""
    f = fun.values_array(n + 2)
    law = {(0,): 1.0}
    for _ in range(n):
        nxt = defaultdict(float)
        for degs, p in law.items():
            w = np.array([f[d] for d in degs])
            w /= w.sum()
            for i, q in enumerate(w):
                new = list(degs)
                new[i] += 1
                nxt[tuple(new) + (1,)] += p * q
        law = nxt
    out = defaultdict(float)
    for degs, p in law.items():
        out[(degs[0], max(degs))] += p
    return out
