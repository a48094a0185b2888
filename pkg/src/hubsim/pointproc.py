"""Single-vertex clock processes, their martingales, and two exact oracles.

A clock started at degree offset ``A`` jumps from ``j`` to ``j + 1`` after an
``Exp(f(A + j))`` holding time.  ``M_A(t) = Phi_1^A(xi_A(t)) - t`` is a
martingale with predictable quadratic variation ``int_0^t ds / f(A + xi_A(s-))``.

Oracles for the law of ``S_1(n)`` (the time of the n-th jump):

* ``hypoexp_cdf``: partial fractions for distinct rates, or uniformization of
  the pure-birth chain when the partial-fraction sum is ill conditioned;
* ``forward_equations``: RK4 integration of the Kolmogorov forward equations.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numba import njit
from scipy import signal, stats
from scipy.special import gammaln, logsumexp

from .attachment import AttachmentFunction, PhiTable, ensure_phi_table
from .rng import as_generator, as_stream


class ResourceCapError(RuntimeError):
    """An event or size cap was hit; ``partial`` carries what was simulated."""

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial


DEFAULT_MAX_EVENTS = 10_000_000


def exponentials(u: np.ndarray) -> np.ndarray:
    """Inverse-CDF transform of uniforms on [0, 1) to Exp(1)."""
    return -np.log1p(-u)


# ---------------------------------------------------------------------------
# single trajectories


@dataclass(frozen=True)
class ClockProcess:
    """Trajectory of ``xi_A`` on ``[0, clock]``.

    ``event_times`` are the jump times in ``[0, clock]``; ``next_event`` is the
    first jump after ``clock``.
    """

    A: int
    clock: float
    event_times: np.ndarray
    next_event: float

    @property
    def count(self) -> int:
        return len(self.event_times)

    def count_at(self, t) -> np.ndarray:
        return np.searchsorted(self.event_times, t, side="right")


def simulate_xi(fun: AttachmentFunction, A: int, t_end: float, seed=None,
                max_events: int = DEFAULT_MAX_EVENTS) -> ClockProcess:
    """Exact event-by-event simulation of ``xi_A`` on ``[0, t_end]``."""
    if t_end < 0:
        raise ValueError("t_end must be >= 0")
    rng = as_generator(seed)
    times: list[np.ndarray] = []
    clock, done, chunk = 0.0, 0, 64
    while True:
        chunk = min(chunk, max_events + 1 - done)
        gaps = exponentials(rng.random(chunk)) / fun.values_array(chunk, A + done)
        arrivals = clock + np.cumsum(gaps)
        past = np.nonzero(arrivals > t_end)[0]
        if past.size:
            k = int(past[0])
            times.append(arrivals[:k])
            ev = np.concatenate(times)
            return ClockProcess(A, t_end, ev, float(arrivals[k]))
        times.append(arrivals)
        clock = float(arrivals[-1])
        done += chunk
        if done > max_events:
            ev = np.concatenate(times)[:max_events]
            raise ResourceCapError(f"more than {max_events} events before t={t_end}",
                                   ClockProcess(A, float(ev[-1]), ev, math.nan))
        chunk *= 2


@dataclass(frozen=True)
class MartingalePath:
    times: np.ndarray
    M: np.ndarray
    qv: np.ndarray
    jumps: np.ndarray  # jump sizes 1/f(A + j) of M at each event

    @property
    def samples(self) -> list[tuple[float, float]]:
        return list(zip(self.times.tolist(), self.M.tolist()))


def martingale_from_clock(proc: ClockProcess, table: PhiTable,
                          checkpoints: Sequence[float]) -> MartingalePath:
    A = proc.A
    cps = np.asarray(checkpoints, dtype=float)
    if np.any(cps < 0) or np.any(cps > proc.clock):
        raise ValueError("checkpoints must lie in [0, t_end]")
    need = A + proc.count + 1
    if need > table.horizon:
        raise ValueError(f"table horizon {table.horizon} < {need} needed by the trajectory")
    counts = proc.count_at(cps)
    base = table.phi1[A]
    M = table.phi1[A + counts] - base - cps
    # <M>(t) = sum over holding intervals of length / f(A + j)
    ev = proc.event_times
    rate_inv = 1.0 / table.f_vals[A:A + proc.count + 1]
    starts = np.concatenate(([0.0], ev))
    full = np.concatenate(([0.0], np.cumsum(np.diff(starts) * rate_inv[:-1])))  # qv at each event
    qv = full[counts] + (cps - starts[counts]) * rate_inv[counts]
    return MartingalePath(times=cps, M=M, qv=qv, jumps=rate_inv[:-1].copy())


def martingale_path(fun: AttachmentFunction, table: Optional[PhiTable], A: int, t_end: float,
                    checkpoints: Sequence[float], seed=None,
                    max_events: int = DEFAULT_MAX_EVENTS) -> MartingalePath:
    proc = simulate_xi(fun, A, t_end, seed, max_events)
    if table is None or table.horizon < A + proc.count + 1:
        table = ensure_phi_table(fun, degree_needed=A + proc.count + 1)
    return martingale_from_clock(proc, table, checkpoints)


# ---------------------------------------------------------------------------
# Monte Carlo batches


@njit(cache=True, nogil=True)
def _xi_batch(rates_inv, times, u, counts, qv):
    """Sequentially simulate ``counts.shape[0]`` clocks from one uniform buffer.

    Returns uniforms used, -1 if the buffer ran out, -2 if a count outran ``rates_inv``.
    """
    reps, nt = counts.shape
    pos = 0
    nrates = rates_inv.shape[0]
    t_last = times[nt - 1]
    for r in range(reps):
        clock = 0.0
        acc_qv = 0.0
        j = 0
        ti = 0
        while True:
            if pos >= u.shape[0]:
                return -1
            if j >= nrates:
                return -2
            gap = -math.log1p(-u[pos]) * rates_inv[j]
            pos += 1
            nxt = clock + gap
            while ti < nt and times[ti] < nxt:
                counts[r, ti] = j
                qv[r, ti] = acc_qv + (times[ti] - clock) * rates_inv[j]
                ti += 1
            if ti == nt or nxt > t_last:
                break
            acc_qv += gap * rates_inv[j]
            clock = nxt
            j += 1
    return pos


def sample_xi(fun: AttachmentFunction, A: int, times: Sequence[float], reps: int,
              seed, block: int = 1024, threads: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """``(counts, qv)`` of ``reps`` independent ``xi_A`` at each of ``times``.

    Replicates are processed in fixed blocks, block ``b`` drawing from the child
    stream ``"<purpose>/block<b>"``, so results do not depend on ``threads``.
    """
    t = np.asarray(times, dtype=float)
    if np.any(np.diff(t) < 0) or np.any(t < 0):
        raise ValueError("times must be sorted and nonnegative")
    stream = as_stream(seed, "xi")
    table = ensure_phi_table(fun, float(t[-1]) * 1.5 + 10, degree_needed=A + 16)
    mean_events = max(table.Phi1_inv(min(table.phi1[A] + t[-1], table.t_max)) - A, 1.0)
    n_rates0 = int(mean_events * 2 + 20 * math.sqrt(mean_events) + 64)
    counts = np.zeros((reps, len(t)), dtype=np.int64)
    qv = np.zeros((reps, len(t)))

    def run_block(b: int) -> None:
        lo, hi = b * block, min(reps, (b + 1) * block)
        sub = stream.child(f"block{b}")
        budget = int((hi - lo) * (mean_events + 6 * math.sqrt(mean_events) + 8))
        n_rates = n_rates0
        while True:
            rates_inv = 1.0 / fun.values_array(n_rates, A)
            status = _xi_batch(rates_inv, t, sub.uniforms(budget), counts[lo:hi], qv[lo:hi])
            if status == -1:
                budget *= 2
            elif status == -2:
                n_rates *= 2
            else:
                return

    n_blocks = -(-reps // block)
    if threads > 1 and n_blocks > 1:
        with ThreadPoolExecutor(threads) as ex:
            list(ex.map(run_block, range(n_blocks)))
    else:
        for b in range(n_blocks):
            run_block(b)
    return counts, qv


def martingale_values(table: PhiTable, A: int, counts: np.ndarray, times) -> np.ndarray:
    """``M_A`` from clock counts (broadcast over replicate rows)."""
    need = A + int(counts.max()) if counts.size else A
    if need > table.horizon:
        raise ValueError(f"table horizon {table.horizon} < {need}")
    return table.phi1[A + counts] - table.phi1[A] - np.asarray(times, dtype=float)


# ---------------------------------------------------------------------------
# hypoexponential law of S_1(n)

POLICIES = ("auto", "exact_distinct", "perturb", "convolve_grid", "uniformization")
GRID_POINTS = 1 << 16


@dataclass(frozen=True)
class HypoexpSpec:
    rates: tuple[float, ...]
    duplicate_policy: str = "auto"

    def __post_init__(self):
        if not self.rates or min(self.rates) <= 0:
            raise ValueError("hypoexponential rates must be a nonempty list of positive reals")
        if self.duplicate_policy not in POLICIES:
            raise ValueError(f"duplicate_policy must be one of {POLICIES}")

    @classmethod
    def from_function(cls, fun: AttachmentFunction, n: int, A: int = 0,
                      policy: str = "auto") -> "HypoexpSpec":
        return cls(tuple(fun.values_array(n, A).tolist()), policy)


@dataclass(frozen=True)
class HypoexpResult:
    p: float
    method: str
    flagged: bool = False
    note: str = ""


def _has_near_duplicates(r: np.ndarray, rel: float = 1e-8) -> bool:
    s = np.sort(r)
    return bool(np.any(np.diff(s) <= rel * s[1:]))


def _partial_fractions(r: np.ndarray, t: float) -> tuple[float, float]:
    """``P(S <= t)`` and the magnitude of the largest summand (for conditioning)."""
    r = np.sort(r)
    diff = r[None, :] - r[:, None]
    np.fill_diagonal(diff, 1.0)
    logr = np.log(r)
    log_w = (logr.sum() - logr) - np.log(np.abs(diff)).sum(axis=1)
    sign = np.prod(np.sign(diff), axis=1)
    terms = sign * np.exp(log_w - r * t)
    return 1.0 - math.fsum(terms.tolist()), float(np.max(np.abs(terms)))


def _perturbed(r: np.ndarray) -> np.ndarray:
    order = np.argsort(r, kind="stable")
    out = r.copy()
    for k, i in enumerate(order):
        out[i] = r[i] * (1 + (k + 1) * 1e-9)
    return out


def _convolve_grid(r: np.ndarray, t: float) -> float:
    # each exponential is discretized to cell midpoints of a lattice with step t/2^16
    N = GRID_POINTS
    dt = t / N
    j = np.arange(N)
    dist = None
    for rate in r:
        q = np.exp(-rate * dt * j) * (-math.expm1(-rate * dt))
        dist = q if dist is None else np.clip(signal.fftconvolve(dist, q)[:N], 0.0, None)
    # S_mid = (J + n/2) dt with J the lattice index of the sum
    shift = len(r) / 2
    keep = (j + shift) * dt <= t
    return float(np.sum(dist[keep]))


def uniformization_logcdf(r: np.ndarray, t: float) -> float:
    """``log P(S_1(n) <= t)`` via uniformization with the last state absorbing."""
    n = len(r)
    if t <= 0:
        return -math.inf
    L = float(np.max(r))
    lam = L * t
    move = r / L
    stay = 1.0 - move
    v = np.zeros(n + 1)
    v[0] = 1.0
    k_max = int(max(n, lam) + 14 * math.sqrt(lam + n) + 60)
    logs = []
    for k in range(k_max + 1):
        if v[n] > 0:
            logs.append(k * math.log(lam) - lam - gammaln(k + 1) + math.log(v[n]))
        nv = np.empty_like(v)
        nv[:n] = v[:n] * stay
        nv[n] = v[n]
        nv[1:] += v[:n] * move
        v = nv
    if not logs:
        return -math.inf
    return float(logsumexp(logs))


def hypoexp_cdf_detail(spec: HypoexpSpec, t: float) -> HypoexpResult:
    if t < 0:
        raise ValueError("t must be >= 0")
    if t == 0:
        return HypoexpResult(0.0, spec.duplicate_policy)
    r = np.asarray(spec.rates, dtype=float)
    policy = spec.duplicate_policy
    dup = _has_near_duplicates(r)
    if policy == "uniformization":
        return HypoexpResult(math.exp(uniformization_logcdf(r, t)), policy)
    if policy == "convolve_grid":
        return HypoexpResult(_convolve_grid(r, t), policy)
    if policy == "exact_distinct" and dup:
        raise ValueError("exact_distinct needs pairwise distinct rates")
    if policy == "auto":
        policy = "perturb" if dup else "exact_distinct"
    rr = _perturbed(r) if policy == "perturb" else r
    p, biggest = _partial_fractions(rr, t)
    # summands of size `biggest` leave ~ n * eps * biggest of absolute error;
    # the factor 10 covers the observed underestimate of that rule
    noise = 10 * len(r) * np.finfo(float).eps * biggest
    # accept only if the rounding noise is small relative to p itself
    if -1e-9 <= p <= 1 + 1e-9 and noise < 1e-10 and noise <= 1e-8 * p:
        return HypoexpResult(min(max(p, 0.0), 1.0), policy)
    fallback = math.exp(uniformization_logcdf(r, t))
    return HypoexpResult(fallback, "uniformization", flagged=True,
                         note=f"{policy} lost precision (sum={p:.3g}, noise~{noise:.2g})")


def hypoexp_cdf(spec: HypoexpSpec, t: float) -> float:
    """``P(E_0/r_0 + ... + E_{n-1}/r_{n-1} <= t)`` for i.i.d. unit exponentials ``E_i``."""
    res = hypoexp_cdf_detail(spec, t)
    if res.flagged:
        warnings.warn(f"hypoexp_cdf fell back to {res.method}: {res.note}", RuntimeWarning,
                      stacklevel=2)
    return res.p


# ---------------------------------------------------------------------------
# forward equations


class StateCapError(ValueError):
    def __init__(self, message: str, required_cap: int):
        super().__init__(f"{message} (requires state_cap >= {required_cap})")
        self.required_cap = required_cap


@dataclass(frozen=True)
class ForwardSolution:
    states: np.ndarray  # Phi_1(n) for n = 0..cap
    p: np.ndarray  # P(N(t_end) = states[n])
    t_end: float
    dt: float
    steps: int
    tail_mass: float  # probability of having left the truncated range
    max_bound_ratio: float  # max over steps and states of p_v(t) f(v) / f(0)

    def prob_at_least(self, n: int) -> float:
        """``P(xi(t_end) >= n)``, including the mass beyond the cap."""
        return float(math.fsum(self.p[n:].tolist()) + self.tail_mass)


TAIL_TOL = 1e-10


@njit(cache=True)
def _rk4_birth(rates, p0, h, steps, bound_scale):
    n = rates.shape[0]
    p = p0.copy()
    sink = 0.0
    worst = 0.0
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)

    def deriv(x, out):
        out[0] = -rates[0] * x[0]
        for v in range(1, n):
            out[v] = rates[v - 1] * x[v - 1] - rates[v] * x[v]

    for s in range(steps):
        deriv(p, k1)
        for v in range(n):
            tmp[v] = p[v] + 0.5 * h * k1[v]
        deriv(tmp, k2)
        for v in range(n):
            tmp[v] = p[v] + 0.5 * h * k2[v]
        deriv(tmp, k3)
        for v in range(n):
            tmp[v] = p[v] + h * k3[v]
        deriv(tmp, k4)
        # leakage from the top state is integrated with the same RK4 weights
        leak = rates[n - 1] * p[n - 1]
        l2 = rates[n - 1] * (p[n - 1] + 0.5 * h * k1[n - 1])
        l3 = rates[n - 1] * (p[n - 1] + 0.5 * h * k2[n - 1])
        l4 = rates[n - 1] * (p[n - 1] + h * k3[n - 1])
        sink += h / 6.0 * (leak + 2 * l2 + 2 * l3 + l4)
        for v in range(n):
            p[v] += h / 6.0 * (k1[v] + 2 * k2[v] + 2 * k3[v] + k4[v])
            r = p[v] * bound_scale[v]
            if r > worst:
                worst = r
    return p, sink, worst


def forward_equations(fun: AttachmentFunction, table: Optional[PhiTable], t_end: float,
                      state_cap: int, dt: Optional[float] = None, A: int = 0) -> ForwardSolution:
    """Integrate the pure-birth forward equations on states ``0..state_cap``.

    States are indexed by jump count ``n``; the matching point of the lattice is
    ``Phi_1(n)``, with rate ``f(A + n)``.  The step is at most ``0.1 / max rate``.
    """
    if state_cap < 1:
        raise ValueError("state_cap must be >= 1")
    rates = fun.values_array(state_cap + 1, A)
    h_max = 0.1 / float(rates.max())
    h = h_max if dt is None else min(dt, h_max)
    steps = max(1, int(math.ceil(t_end / h))) if t_end > 0 else 0
    h = t_end / steps if steps else 0.0
    p0 = np.zeros(state_cap + 1)
    p0[0] = 1.0
    bound_scale = rates / rates[0]
    p, sink, worst = _rk4_birth(rates, p0, h, steps, bound_scale)
    worst = max(worst, 1.0)  # t = 0: p_0 = 1 = f(0)/f(0)
    if sink > TAIL_TOL:
        if table is None or table.horizon < A + state_cap + 1:
            table = ensure_phi_table(fun, degree_needed=A + state_cap + 1)
        raise StateCapError(f"tail mass {sink:.3g} beyond state {state_cap} at t={t_end}",
                            _suggest_cap(fun, table, t_end, state_cap, A))
    if table is None or table.horizon < A + state_cap:
        table = ensure_phi_table(fun, degree_needed=A + state_cap + 1)
    states = table.phi1[A:A + state_cap + 1] - table.phi1[A]
    return ForwardSolution(states=states, p=p, t_end=t_end, dt=h, steps=steps,
                           tail_mass=float(max(sink, 0.0)), max_bound_ratio=float(worst))


def _suggest_cap(fun, table, t_end, cap, A) -> int:
    try:
        big = ensure_phi_table(fun, table.phi1[A] + t_end + 14 * math.sqrt(t_end + 1) * 3 + 10)
        target = big.phi1[A] + t_end + 14 * math.sqrt(float(big.K(t_end + big.phi1[A])) + 1)
        return int(max(2 * cap, big.Phi1_inv(min(target, big.t_max)) - A + 10))
    except Exception:  # pragma: no cover - suggestion only
        return 2 * cap


# ---------------------------------------------------------------------------
# tail bound and moderate deviation checks


def wilson_interval(successes: int, trials: int, confidence: float) -> tuple[float, float]:
    ci = stats.binomtest(int(successes), int(trials)).proportion_ci(
        confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


def tbd_bound(table: PhiTable, x: float, t: float, f_star: float) -> float:
    """General tail bound for ``P(M(s) > x K(t))``, any ``s`` in ``[0, t]``."""
    Kt = float(table.K(t))
    if x == 0:
        return 1.0
    return math.exp(-(x * x / 2) * Kt * Kt / (f_star ** -2 + float(table.K(t + x * Kt))))


def tbd_bound_simplified(table: PhiTable, x: float, t: float, f_star: float,
                         t_prime: float, D: float) -> Optional[float]:
    """``exp(-x^2 K(t) / (4D))`` when ``K(3u) <= D K(u)`` for ``u >= t'``; None if out of range."""
    Kt = float(table.K(t))
    t_min = max(t_prime, float(table.K_inv(1.0 / (D * f_star * f_star))))
    if t < t_min or not 0 <= x <= 2 * t / Kt:
        return None
    return math.exp(-x * x / (4 * D) * Kt)


def tail_bound_check(fun: AttachmentFunction, table: PhiTable, x: float, t: float, s: float,
                     reps: int, seed, c3: Optional[tuple[float, float]] = None,
                     confidence: float = 0.99) -> dict:
    """Monte Carlo ``P(M(s) > x K(t))`` against the analytic martingale tail bound."""
    if not (0 <= s <= t and x >= 0):
        raise ValueError("need 0 <= s <= t and x >= 0")
    Kt = float(table.K(t))
    counts, _ = sample_xi(fun, 0, [s], reps, seed)
    M = martingale_values(table, 0, counts[:, 0], s)
    hits = int(np.count_nonzero(M > x * Kt))
    lo, hi = wilson_interval(hits, reps, confidence)
    out = {"x": x, "t": t, "s": s, "reps": reps, "K_t": Kt, "hits": hits,
           "empirical": hits / reps, "wilson_lo": lo, "wilson_hi": hi,
           "analytic": tbd_bound(table, x, t, fun.f_star), "analytic_simplified": None}
    if c3 is not None:
        out["analytic_simplified"] = tbd_bound_simplified(table, x, t, fun.f_star, *c3)
    return out


def mdp_rate_check(fun: AttachmentFunction, table: PhiTable, n: int, x: float) -> dict:
    """Exact ``log P(S_1(n) <= Phi_1(n) - x Phi_2(n))`` next to ``-x^2 Phi_2(n) / 2``."""
    p1, p2 = float(table.phi1[n]), float(table.phi2[n])
    c = p1 - x * p2
    predicted = -x * x * p2 / 2
    rates = fun.values_array(n)
    exact = -math.inf if c <= 0 else uniformization_logcdf(rates, c)
    ratio = None if predicted == 0 else (exact / predicted if math.isfinite(exact) else math.inf)
    return {"n": n, "x": x, "threshold": c, "exact_logprob": exact, "predicted": predicted,
            "ratio": ratio, "note": "not applicable" if ratio is None else ""}
