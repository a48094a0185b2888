"""Continuous-time branching process driven by an attachment function.

Every individual reproduces at rate ``f(offset + children)``.  With the default
tree convention the root uses offset 0 and every other individual offset 1,
since a non-root vertex already carries the edge to its parent.  Observed at
the times ``T_n`` when the population first reaches ``n + 1``, the genealogy
has the law of the discrete attachment tree with ``m = 1``.

N-degrees are ``Phi_1`` of the child count (``convention="children"``) or of
the tree degree (``convention="degree"``: children, plus one for non-roots).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import _kernels as K
from .attachment import AttachmentFunction, PhiTable, ensure_phi_table
from .pointproc import ResourceCapError
from .rng import as_stream

DEFAULT_MAX_SIZE = 10_000_000
CONVENTIONS = ("children", "degree")


@dataclass(frozen=True)
class BranchingState:
    """Genealogy of one run.  Individuals are numbered in birth order."""

    birth: np.ndarray  # birth times, nondecreasing, birth[0] = 0
    parent: np.ndarray  # parent index, -1 for the root
    children: np.ndarray  # child counts at the stopping time
    clock: float  # stopping time (T_n for size stops)
    stopped_by: str  # "size" or "time"
    provenance: dict

    @property
    def size(self) -> int:
        return len(self.birth)

    def size_at(self, t) -> np.ndarray:
        return np.searchsorted(self.birth, t, side="right")

    def children_at(self, c: float) -> np.ndarray:
        """Child counts at time ``c`` of the individuals born by ``c``."""
        if c > self.clock:
            raise ValueError(f"time {c} is past the end of the run ({self.clock})")
        alive = self.size_at(c)
        return np.bincount(self.parent[1:alive], minlength=alive)[:alive]

    def degrees_at(self, c: float) -> np.ndarray:
        d = self.children_at(c)
        d[1:] += 1
        return d


def run_ctbp(fun: AttachmentFunction, until_size: Optional[int] = None,
             until_time: Optional[float] = None, seed=0, tree_offset: bool = True,
             max_size: int = DEFAULT_MAX_SIZE) -> BranchingState:
    """Simulate until the population reaches ``until_size`` or time ``until_time``.

    ``until_size = n + 1`` stops at ``T_n``.  ``tree_offset=False`` gives every
    individual offset 0 (a pure copy of the point process from degree 0).
    """
    if (until_size is None) == (until_time is None):
        raise ValueError("give exactly one of until_size and until_time")
    if until_size is not None and until_size < 1:
        raise ValueError("until_size must be >= 1")
    if until_time is not None and not until_time >= 0:
        raise ValueError("until_time must be >= 0")
    stream = as_stream(seed, "ctbp")
    other = 1 if tree_offset else 0
    if until_size is not None:
        if until_size > max_size:
            raise ResourceCapError(f"until_size {until_size} exceeds max_size {max_size}")
        target, t_stop, cap = until_size, math.inf, until_size
        n_u = 2 * until_size
    else:
        target, t_stop = max_size + 1, float(until_time)
        cap = min(max_size, 1024)
        n_u = 2 * cap
    n_f = min(cap, 1024) + 2
    while True:
        f_vals = fun.values_array(n_f)
        birth = np.empty(cap)
        parent = np.empty(cap, dtype=np.int64)
        children = np.empty(cap, dtype=np.int64)
        size, status = K.ctbp_kernel(f_vals, 0, other, stream.uniforms(n_u), target, t_stop,
                                     birth, parent, children)
        if status == -1:
            n_u *= 2
        elif status == -2:
            n_f = 2 * n_f
        elif status == -3:
            if cap >= max_size:
                raise ResourceCapError(
                    f"population exceeded max_size={max_size} before t={until_time}",
                    BranchingState(birth[:size], parent[:size], children[:size],
                                   float(birth[size - 1]), "cap", stream.provenance()))
            cap = min(2 * cap, max_size)
            n_u = max(n_u, 2 * cap)
        else:
            break
    clock = float(birth[size - 1]) if status == 0 else t_stop
    return BranchingState(birth[:size].copy(), parent[:size].copy(), children[:size].copy(),
                          clock, "size" if status == 0 else "time", stream.provenance())


def _n_degree(state: BranchingState, c: float, table: PhiTable, convention: str) -> np.ndarray:
    if convention not in CONVENTIONS:
        raise ValueError(f"convention must be one of {CONVENTIONS}")
    counts = state.children_at(c) if convention == "children" else state.degrees_at(c)
    if counts.size and counts.max() > table.horizon:
        raise ValueError(f"table horizon {table.horizon} < {int(counts.max())}")
    return table.phi1[counts]


def window_max_degree(state: BranchingState, a: float, b: float, c: float, table: PhiTable,
                      convention: str = "children") -> float:
    """Largest N-degree at time ``c`` among individuals born in ``[a, b]`` (0 if none or c <= b)."""
    if not a < b:
        raise ValueError("need a < b")
    if c <= b:
        return 0.0
    nd = _n_degree(state, c, table, convention)
    lo = np.searchsorted(state.birth, a, side="left")
    hi = np.searchsorted(state.birth, b, side="right")
    if hi <= lo:
        return 0.0
    return float(nd[lo:hi].max())


def hub_index_continuous(state: BranchingState, t: float, table: PhiTable,
                         convention: str = "children") -> float:
    """Earliest birth time among individuals of maximal N-degree at time ``t``."""
    nd = _n_degree(state, t, table, convention)
    return float(state.birth[int(np.argmax(nd))])


def hub_rank(state: BranchingState, t: float, table: PhiTable, convention: str = "degree") -> int:
    """Birth rank of the hub at time ``t`` (the vertex index in the embedded tree)."""
    return int(np.argmax(_n_degree(state, t, table, convention)))


@dataclass(frozen=True)
class MalthusianDiagnostic:
    t_grid: np.ndarray
    samples: np.ndarray  # (reps, len(t_grid)) values of exp(-lambda t) |BP(t)|
    lam: float

    @property
    def W_estimate(self) -> np.ndarray:
        return self.samples[:, -1]


def malthusian_diagnostic(fun: AttachmentFunction, lam: float, t_grid: Sequence[float], seed=0,
                          reps: int = 1, tree_offset: bool = True,
                          max_size: int = DEFAULT_MAX_SIZE) -> MalthusianDiagnostic:
    """``exp(-lam t) |BP(t)|`` on ``t_grid`` for ``reps`` independent runs."""
    grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(grid) < 0):
        raise ValueError("t_grid must be sorted")
    base = as_stream(seed, "malthusian")
    out = np.empty((reps, len(grid)))
    for r in range(reps):
        st = run_ctbp(fun, until_time=float(grid[-1]), seed=base.child(f"rep{r}"),
                      tree_offset=tree_offset, max_size=max_size)
        out[r] = np.exp(-lam * grid) * st.size_at(grid)
    return MalthusianDiagnostic(grid, out, lam)


CSV_COLUMNS = ("replicate", "t", "n", "size", "d_max_N_degree", "hub_birth_time", "W_sample")


def ctbp_rows(state: BranchingState, replicate: int, fun: AttachmentFunction, lam: float,
              times: Sequence[float], convention: str = "children") -> list[tuple]:
    """CSV rows ``(replicate, t, n, size, d_max_N_degree, hub_birth_time, W_sample)``."""
    table = ensure_phi_table(fun, degree_needed=int(state.children.max(initial=0)) + 2)
    rows = []
    for t in times:
        size = int(state.size_at(t))
        nd = _n_degree(state, t, table, convention)
        i = int(np.argmax(nd))
        rows.append((replicate, float(t), size - 1, size, float(nd[i]), float(state.birth[i]),
                     float(math.exp(-lam * t) * size)))
    return rows
