"""Discrete-time growth of attachment graphs, coupled bound chains, and the race chain.

Vertex ``v_n`` (n >= 1) arrives with ``m_n`` edges.  Each edge picks a target
among ``v_0 .. v_{n-1}`` with probability proportional to ``f(degree)``, and
degrees (in + out) are updated after every edge, including the degree of
``v_n`` itself.  ``v_n`` becomes a candidate only after its last edge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import _kernels as K
from .attachment import AttachmentFunction, ModelError, PhiTable
from .rng import Stream, as_stream


class ConfigError(ValueError):
    """A model parameter or premise is inconsistent with the requested operation."""


# ---------------------------------------------------------------------------
# attachment sequences


@dataclass(frozen=True)
class AttachmentSequence:
    """Edge counts ``m_1, m_2, ...`` of arriving vertices.

    ``kind`` is ``constant`` (``m``), ``geometric`` (``p``, support 1, 2, ...),
    ``zipf`` (``s``, ``cap``: ``P(m = j)`` proportional to ``j**-s`` on ``1..cap``),
    ``point`` (``m``, an i.i.d. point mass) or ``logpower``
    (``m_n = floor(1 + (log n) ** nu)``).
    """

    kind: str
    m: int = 1
    p: float = 0.5
    s: float = 2.0
    cap: int = 10**6
    nu: float = 1.0

    KINDS = ("constant", "geometric", "zipf", "point", "logpower")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigError(f"unknown attachment sequence kind {self.kind!r}")
        if self.kind in ("constant", "point") and self.m < 1:
            raise ConfigError("m must be >= 1")
        if self.kind == "geometric" and not 0 < self.p <= 1:
            raise ConfigError("geometric p must lie in (0, 1]")
        if self.kind == "zipf" and (self.s <= 1 or self.cap < 1):
            raise ConfigError("zipf needs s > 1 and cap >= 1")
        if self.kind == "logpower" and self.nu < 0:
            raise ConfigError("nu must be >= 0")

    @classmethod
    def constant(cls, m: int = 1) -> "AttachmentSequence":
        return cls("constant", m=m)

    @property
    def is_random(self) -> bool:
        return self.kind in ("geometric", "zipf", "point")

    def realize(self, n_max: int, stream: Optional[Stream] = None) -> np.ndarray:
        """``m[0..n_max]`` with ``m[0] = 0`` (the initial vertex brings no edges)."""
        out = np.zeros(n_max + 1, dtype=np.int64)
        idx = np.arange(1, n_max + 1)
        if self.kind in ("constant", "point"):
            out[1:] = self.m
        elif self.kind == "logpower":
            out[1:] = np.floor(1 + np.log(idx) ** self.nu).astype(np.int64)
        else:
            if stream is None:
                raise ConfigError("an i.i.d. sequence needs a random stream")
            u = stream.uniforms(n_max)
            if self.kind == "geometric":
                if self.p == 1:
                    out[1:] = 1
                else:
                    out[1:] = np.maximum(1, np.ceil(np.log1p(-u) / math.log1p(-self.p)))
            else:
                cdf = np.cumsum(np.arange(1, self.cap + 1, dtype=float) ** -self.s)
                cdf /= cdf[-1]
                out[1:] = np.minimum(np.searchsorted(cdf, u, side="right"), self.cap - 1) + 1
        return out

    def mean(self) -> float:
        if self.kind in ("constant", "point"):
            return float(self.m)
        if self.kind == "geometric":
            return 1 / self.p
        if self.kind == "zipf":
            j = np.arange(1, self.cap + 1, dtype=float)
            w = j ** -self.s
            return float((j * w).sum() / w.sum())
        return math.nan

    def describe(self) -> str:
        return {"constant": f"m={self.m}", "point": f"iid point mass {self.m}",
                "geometric": f"iid geometric(p={self.p})",
                "zipf": f"iid zipf(s={self.s}, cap={self.cap})",
                "logpower": f"m_n=floor(1+(log n)^{self.nu})"}[self.kind]


def prefix_edges(m: np.ndarray) -> np.ndarray:
    """``s[n] = m_1 + ... + m_n`` with ``s[0] = 0``."""
    return np.cumsum(m)


def s_inverse(s: np.ndarray, k) -> np.ndarray:
    """The vertex ``n`` whose edges include edge number ``k``: ``s[n-1] <= k < s[n]``."""
    return np.searchsorted(s, k, side="right")


# ---------------------------------------------------------------------------
# growth


CHECKPOINT_COLUMNS = ("n", "k", "d_max", "leader_index", "leader_changes", "root_degree")


@dataclass(frozen=True)
class TrajectoryRecord:
    """Checkpoint snapshots of one growth run (one row per checkpoint)."""

    table: np.ndarray  # int64, columns CHECKPOINT_COLUMNS
    provenance: dict
    index_drift: float = 0.0  # largest relative gap between the running index and a rebuild

    def column(self, name: str) -> np.ndarray:
        return self.table[:, CHECKPOINT_COLUMNS.index(name)]

    @property
    def n(self) -> np.ndarray:
        return self.column("n")

    @property
    def d_max(self) -> np.ndarray:
        return self.column("d_max")

    @property
    def leader(self) -> np.ndarray:
        return self.column("leader_index")

    @property
    def leader_changes(self) -> np.ndarray:
        return self.column("leader_changes")

    def at(self, n: int) -> np.ndarray:
        i = np.searchsorted(self.n, n)
        if i >= len(self.n) or self.n[i] != n:
            raise KeyError(f"n={n} is not a recorded checkpoint")
        return self.table[i]


@dataclass
class GrowthState:
    """Final state of a growth run (degrees of ``v_0 .. v_{n-1}`` and sampler)."""

    degrees: np.ndarray
    weights: np.ndarray
    tree: np.ndarray
    k: int
    n: int
    leader: tuple[int, int]
    leader_changes: int

    def check(self, fun: AttachmentFunction) -> None:
        """Degree-sum identity and weight-index consistency."""
        d = self.degrees[:self.n]
        if int(d.sum()) != 2 * self.k:
            raise AssertionError(f"degree sum {int(d.sum())} != 2k = {2 * self.k}")
        w = fun.values_array(int(d.max()) + 1)[d]
        if not np.array_equal(w, self.weights[:self.n]):
            raise AssertionError("stored weights differ from f(degree)")
        fresh = np.zeros_like(self.tree)
        K.fenwick_build(fresh, self.weights, self.n)
        scale = max(float(w.sum()), 1.0)
        if np.max(np.abs(fresh - self.tree)) > 1e-9 * scale:
            raise AssertionError("incremental index drifted from a full rebuild")


def _f_table(fun: AttachmentFunction, size: int) -> np.ndarray:
    vals = fun.values_array(size)
    if not np.all(np.isfinite(vals)):
        raise ModelError("attachment function is not finite on the needed range")
    return vals


def grow(fun: AttachmentFunction, seq: AttachmentSequence, n_max: int,
         checkpoints: Sequence[int] = (), seed=0, return_state: bool = False):
    """Grow ``G_0 .. G_{n_max}`` and snapshot the checkpoints (``n_max`` always included).

    Returns a ``TrajectoryRecord``, or ``(record, GrowthState)`` with ``return_state``.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    stream = as_stream(seed, "graph")
    ck = np.unique(np.append(np.asarray(checkpoints, dtype=np.int64), n_max))
    if ck[0] < 0 or ck[-1] > n_max:
        raise ValueError("checkpoints must lie in [0, n_max]")
    m = seq.realize(n_max, stream.child("m"))
    total_edges = int(m.sum())
    u = stream.child("edges").uniforms(total_edges)

    degrees = np.zeros(n_max + 1, dtype=np.int64)
    w = np.zeros(n_max + 1)
    tree = np.zeros(n_max + 2)
    state = np.zeros(K.STATE_LEN, dtype=np.int64)
    f_vals = _f_table(fun, 1024)
    w[0] = f_vals[0]
    K.fenwick_add(tree, 0, w[0])
    total = np.array([w[0]])
    drift = np.zeros(1)
    state[K.S_N] = 1
    out = np.zeros((len(ck), len(CHECKPOINT_COLUMNS)), dtype=np.int64)
    pos = np.zeros(1, dtype=np.int64)
    if ck[0] == 0:
        pos[0] = 1  # row 0 stays all zeros: the single initial vertex
    n_start = 1
    while True:
        status = K.grow_kernel(f_vals, m, u, n_start, n_max, degrees, w, tree, state, total,
                               drift, ck, out, pos)
        if status == 0:
            break
        if status < 0:
            raise ModelError(f"total attachment weight is zero when vertex {-status} arrives")
        n_start = int(status)
        f_vals = _f_table(fun, 2 * len(f_vals) + int(m[n_start]))
    # final rebuild: check the incremental index against an exact one
    K._rebuild(tree, w, n_max + 1, total, drift)
    record = TrajectoryRecord(out, {**stream.provenance(), "sequence": seq.describe(),
                                    "attachment": fun.describe()}, float(drift[0]))
    if not return_state:
        return record
    gs = GrowthState(degrees=degrees, weights=w, tree=tree, k=int(state[K.S_K]),
                     n=int(state[K.S_N]),
                     leader=(int(state[K.S_LEADER]), int(state[K.S_LEADER_DEG])),
                     leader_changes=int(state[K.S_CHANGES]))
    return record, gs


def leader_of(degrees: np.ndarray) -> int:
    """Oldest vertex of maximal degree."""
    return int(np.argmax(degrees))


@dataclass(frozen=True)
class LeaderStats:
    changed: bool
    change_count: int
    final_leader: int


def leader_statistics(record: TrajectoryRecord, window: tuple[int, int]) -> LeaderStats:
    """Leader changes (counted per attached edge) between two recorded checkpoints."""
    lo, hi = window
    if lo > hi:
        raise ValueError("window must satisfy n_lo <= n_hi")
    a, b = record.at(lo), record.at(hi)
    j = CHECKPOINT_COLUMNS.index("leader_changes")
    count = int(b[j] - a[j])
    return LeaderStats(count > 0, count, int(b[CHECKPOINT_COLUMNS.index("leader_index")]))


def trajectory_rows(record: TrajectoryRecord, replicate: int,
                    table: Optional[PhiTable] = None) -> list[tuple]:
    """Rows ``(replicate, n, k, d_max, leader_index, leader_changes, phi1_dmax)``."""
    rows = []
    for r in record.table:
        phi = "" if table is None else float(table.Phi(1, int(r[2])))
        rows.append((replicate, int(r[0]), int(r[1]), int(r[2]), int(r[3]), int(r[4]), phi))
    return rows


def root_growth_ratio(record: TrajectoryRecord, table: PhiTable) -> np.ndarray:
    """``Phi_1(d_0) / log k`` at each checkpoint (``nan`` where ``k <= 1``).

    A diagnostic for how fast the root degree grows on the linearized scale;
    kept out of the trajectory CSV so that its column set stays fixed.
    """
    k = record.table[:, CHECKPOINT_COLUMNS.index("k")].astype(float)
    d0 = record.table[:, CHECKPOINT_COLUMNS.index("root_degree")]
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(k > 1, table.phi1[d0] / np.log(np.maximum(k, 1.0)), np.nan)


# ---------------------------------------------------------------------------
# coupled bound chains


@dataclass(frozen=True)
class BoundPath:
    """A bound chain and the coupled real degree, both indexed by edge count ``k``."""

    chain: np.ndarray
    target: np.ndarray
    clamped: np.ndarray  # edges where the upper-chain probability was capped at 1
    start: int = 0

    @property
    def dominated_below(self) -> bool:
        return bool(np.all(self.chain[self.start:] <= self.target[self.start:]))

    @property
    def dominated_above(self) -> bool:
        return bool(np.all(self.chain[self.start:] >= self.target[self.start:]))


def _sequence_for_edges(seq: AttachmentSequence, k_max: int, stream: Stream) -> np.ndarray:
    n = max(k_max, 1)
    while True:
        m = seq.realize(n, stream.child("m"))
        if m.sum() >= k_max:
            return np.append(m, 1)
        n *= 2


def _run_bound(fun, seq, k_max, seed, mode, c, l):
    stream = as_stream(seed, "bound")
    m = _sequence_for_edges(seq, k_max, stream)
    s = prefix_edges(m)
    s_l = int(s[l]) if mode == 1 else 0
    u = stream.child("edges").uniforms(max(k_max, 1))
    size = len(m) + 1
    cap = 1024
    while True:
        f_vals = _f_table(fun, cap)
        degrees = np.zeros(size, dtype=np.int64)
        w = np.zeros(size)
        tree = np.zeros(size + 1)
        chain = np.zeros(k_max + 1, dtype=np.int64)
        target = np.zeros(k_max + 1, dtype=np.int64)
        clamp = np.zeros(k_max + 1, dtype=np.int8)
        status = K.bound_kernel(f_vals, m, u, k_max, degrees, w, tree, mode, float(c), l, s_l,
                                chain, target, clamp)
        if status == 0:
            return BoundPath(chain, target, clamp.astype(bool), start=s_l), s
        cap *= 2


def bound_process_lower(fun: AttachmentFunction, seq: AttachmentSequence, k_max: int,
                        seed=0) -> BoundPath:
    """Lower chain for the root: one step per edge with probability ``f(d)/(3 C_f (k+1))``.

    ``target`` is the root degree of the graph grown from the same uniforms.
    """
    if fun.linear_bound_Cf is None:
        raise ConfigError("the lower bound chain needs a declared C_f with f(k) <= C_f (k+1)")
    if fun.monotone is False:
        raise ConfigError("the lower bound chain needs a nondecreasing f")
    if k_max < 0:
        raise ValueError("k_max must be >= 0")
    if k_max == 0:
        z = np.zeros(1, dtype=np.int64)
        return BoundPath(z, z.copy(), np.zeros(1, dtype=bool))
    path, _ = _run_bound(fun, seq, k_max, seed, 0, fun.linear_bound_Cf, 0)
    return path


def bound_process_upper(fun: AttachmentFunction, eps: float, l: int, k_max: int, seed=0,
                        seq: Optional[AttachmentSequence] = None) -> BoundPath:
    """Upper chain for vertex ``l``: step probability ``f(d)/(eps (k+1) f(0))``, capped at 1.

    The chain starts at ``d_l`` right after ``v_l``'s last edge; ``target`` is ``d_l``.
    """
    seq = seq or AttachmentSequence.constant(1)
    if not eps > 0:
        raise ConfigError("eps must be > 0")
    if fun.monotone is False:
        raise ConfigError("the upper bound chain needs a nondecreasing f")
    if fun(0) <= 0:
        raise ConfigError("the upper bound chain needs f(0) > 0")
    stream = as_stream(seed, "bound")
    m = _sequence_for_edges(seq, k_max, stream)
    s = prefix_edges(m)
    if l >= len(s) or s[l] > k_max:
        raise ConfigError(f"vertex {l} has not finished arriving within {k_max} edges")
    ks = np.arange(int(s[l]), k_max)
    bad = np.nonzero(s_inverse(s, ks) < eps * (ks + 1))[0]
    if bad.size:
        raise ConfigError(f"premise s^-1(k) >= eps (k+1) fails first at k={int(ks[bad[0]])}")
    path, _ = _run_bound(fun, seq, k_max, seed, 1, eps, l)
    return path


# ---------------------------------------------------------------------------
# the two-coordinate race


@dataclass(frozen=True)
class RaceResult:
    path: np.ndarray  # (steps + 1, 2)
    lead_changes: int
    tie_visits: int


def _race_table(fun: AttachmentFunction, init, steps) -> np.ndarray:
    a, b = init
    if a < 0 or b < 0:
        raise ValueError("race starts from nonnegative degrees")
    return _f_table(fun, max(a, b) + steps + 2)


def race(fun: AttachmentFunction, init: tuple[int, int], steps: int, seed=0) -> RaceResult:
    f_vals = _race_table(fun, init, steps)
    u = as_stream(seed, "race").uniforms(steps)
    path = np.zeros((steps + 1, 2), dtype=np.int64)
    K.race_kernel(f_vals, int(init[0]), int(init[1]), u, path)
    changes, ties = K.race_lead_stats(path)
    return RaceResult(path, int(changes), int(ties))


def race_lead_changes(fun: AttachmentFunction, init: tuple[int, int], steps: int, reps: int,
                      seed=0) -> np.ndarray:
    """Lead-change counts of ``reps`` independent races (replicate ``r`` uses stream ``r``)."""
    base = as_stream(seed, "race")
    out = np.zeros(reps, dtype=np.int64)
    for r in range(reps):
        out[r] = race(fun, init, steps, base.child(f"rep{r}")).lead_changes
    return out


def path_codes(increments: np.ndarray) -> np.ndarray:
    """Encode 0/1 step labels (1 = coordinate 1 moved) as integers, step j in bit j."""
    bits = np.left_shift(np.int64(1), np.arange(increments.shape[1], dtype=np.int64))
    return (increments.astype(np.int64) * bits).sum(axis=1)


def race_paths(fun: AttachmentFunction, init: tuple[int, int], steps: int, reps: int,
               seed=0) -> np.ndarray:
    """Path codes of ``reps`` race chains (vectorized over replicates)."""
    f_vals = _race_table(fun, init, steps)
    u = as_stream(seed, "race-batch").uniforms(reps * steps).reshape(reps, steps)
    x1 = np.full(reps, init[0], dtype=np.int64)
    x2 = np.full(reps, init[1], dtype=np.int64)
    inc = np.zeros((reps, steps), dtype=bool)
    for j in range(steps):
        g1, g2 = f_vals[x1], f_vals[x2]
        inc[:, j] = u[:, j] * (g1 + g2) < g1
        x1 += inc[:, j]
        x2 += ~inc[:, j]
    return path_codes(inc)


def two_clock_paths(fun: AttachmentFunction, init: tuple[int, int], steps: int, reps: int,
                    seed=0) -> np.ndarray:
    """Path codes of the jump chain of two independent clocks started at degrees ``init``.

    Clock ``i`` jumps from ``d`` to ``d + 1`` after an ``Exp(f(d))`` time; the
    combined first ``steps`` jumps are labeled by which clock moved.
    """
    st = as_stream(seed, "two-clock")
    times = []
    for c, a in enumerate(init):
        e = -np.log1p(-st.child(f"clock{c}").uniforms(reps * steps).reshape(reps, steps))
        times.append(np.cumsum(e / fun.values_array(steps, a), axis=1))
    allt = np.concatenate(times, axis=1)
    labels = np.concatenate([np.ones(steps, dtype=bool), np.zeros(steps, dtype=bool)])
    order = np.argsort(allt, axis=1, kind="stable")[:, :steps]
    return path_codes(labels[order])


def race_path_law(fun: AttachmentFunction, init: tuple[int, int], steps: int) -> np.ndarray:
    """Exact probability of every path code (length ``2**steps``)."""
    f_vals = _race_table(fun, init, steps)
    codes = np.arange(1 << steps, dtype=np.int64)
    inc = (codes[:, None] >> np.arange(steps)) & 1
    x1 = init[0] + np.concatenate([np.zeros((len(codes), 1), dtype=np.int64),
                                   np.cumsum(inc, axis=1)[:, :-1]], axis=1)
    x2 = init[1] + np.arange(steps) - (x1 - init[0])
    g1, g2 = f_vals[x1], f_vals[x2]
    p = np.where(inc == 1, g1, g2) / (g1 + g2)
    return np.prod(p, axis=1)
