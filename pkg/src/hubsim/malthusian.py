"""Malthusian rate of the embedded branching process and assumption checks.

The offspring intensity of an individual has Laplace transform

    rho(lam) = sum_{k>=1} prod_{i<k} g(i) / (lam + g(i)),

where ``g`` is the rate sequence of the individual's own clock.  In the tree
model a non-root vertex is born with degree 1, so its clock runs at
``g(i) = f(1 + i)``; ``offset`` selects that shift (``offset=0`` gives the
unshifted series).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from scipy import optimize

from .attachment import AttachmentFunction, Kind, Phi2Status, PhiTable, tail_exponent

TREE_OFFSET = 1
DIVERGENCE_CAP = 1e8
MAX_TERMS = 1 << 24
MIN_TERMS = 64


class TriState(str, Enum):
    TRUE = "true"
    FALSE = "false"
    UNKNOWN = "unknown"

    @classmethod
    def of(cls, flag: Optional[bool]) -> "TriState":
        if flag is None:
            return cls.UNKNOWN
        return cls.TRUE if flag else cls.FALSE


class NoMalthusianRate(RuntimeError):
    """rho stays below 1 all the way down to the smallest probed lambda."""


class RegimeError(ValueError):
    """A formula was requested outside the regime where it holds."""


def rho_hat(fun: AttachmentFunction, lam: float, tol: float = 1e-13,
            offset: int = TREE_OFFSET, cap: float = DIVERGENCE_CAP,
            max_terms: int = MAX_TERMS) -> tuple[float, float]:
    """Evaluate the offspring Laplace transform at ``lam``.

    Returns ``(value, tail_bound)``.  Divergence, or a partial sum exceeding
    ``cap``, is reported as ``(inf, inf)``.

    The tail past the last summed index ``K`` follows from summation by parts
    on ``lam * t_{j+1} = g_j (t_j - t_{j+1})``:

        (lam - dg) * T_{K+1} = g_K t_K + sum_{j>K} (dg_j - dg) t_j,

    so ``g_K t_K / (lam - dg_K)`` is exact when the increments ``dg`` of the
    rate sequence are constant, and the spread of ``dg`` over the last decade
    of indices bounds the error otherwise.
    """
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    partial = 0.0
    comp = 0.0
    log_t = 0.0  # log t_K, with t_0 = 1 (not part of the sum)
    start = 0
    chunk = 256
    dg_hist: list[np.ndarray] = []
    while start < max_terms:
        g = fun.values_array(chunk + 1, offset + start)  # g_start .. g_{start+chunk}
        logs = log_t - np.cumsum(np.log1p(lam / g[:-1]))
        terms = np.exp(logs)  # t_{start+1} .. t_{start+chunk}
        s = math.fsum(terms.tolist())
        # Neumaier step to merge chunk sums
        y = s - comp
        tot = partial + y
        comp = (tot - partial) - y
        partial = tot
        log_t = float(logs[-1])
        start += chunk
        if partial > cap:
            return math.inf, math.inf
        dg_hist.append(np.diff(g))
        if start < MIN_TERMS:
            chunk *= 2
            continue
        t_K = math.exp(log_t)
        g_K = float(g[-1])
        dgs = np.concatenate(dg_hist)
        decade = dgs[max(0, len(dgs) - max(len(dgs) * 9 // 10, 1)):]
        dg_K = float(dgs[-1])
        if lam - dg_K <= 0:
            chunk = min(chunk * 2, 1 << 20)
            dg_hist = [dgs[-(1 << 20):]]
            continue
        est = g_K * t_K / (lam - dg_K)
        spread = float(decade.max() - decade.min())
        bound = est * spread / (lam - dg_K) + 4 * np.finfo(float).eps * partial
        if partial + est > cap:
            return math.inf, math.inf
        if bound < tol:
            return partial + est, bound
        chunk = min(chunk * 2, 1 << 20)
        dg_hist = [dgs[-(1 << 21):]]
    if lam - dg_K <= 0:
        return math.inf, math.inf
    return partial + est, bound


def rho_hat_bruteforce(fun: AttachmentFunction, lam: float, n_terms: int,
                       offset: int = TREE_OFFSET) -> float:
    """Plain truncated sum with long-double accumulation; an oracle, not a tool."""
    g = fun.values_array(n_terms, offset).astype(np.longdouble)
    logs = -np.cumsum(np.log1p(np.longdouble(lam) / g))
    return float(np.sum(np.exp(logs)))


@dataclass(frozen=True)
class MalthusianResult:
    lambda_star: float
    bracket: tuple[float, float]
    rho_at_bracket: tuple[float, float]
    truncation_k: int
    tail_bound: float
    offset: int = TREE_OFFSET


def _truncation_k(fun: AttachmentFunction, lam: float, tol: float, offset: int) -> int:
    # number of terms before t_k drops below tol; informational only
    k, log_t = 0, 0.0
    while k < MAX_TERMS:
        g = fun.values_array(4096, offset + k)
        logs = log_t - np.cumsum(np.log1p(lam / g))
        hit = np.nonzero(logs < math.log(tol))[0]
        if hit.size:
            return k + int(hit[0]) + 1
        log_t = float(logs[-1])
        k += 4096
    return k


def explodes(fun: AttachmentFunction) -> bool:
    """Whether ``sum 1/f`` converges, so that a single individual has infinitely
    many children in finite time and no exponential growth rate exists."""
    if fun.kind is Kind.POWER:
        return fun.alpha > 1
    if fun.kind in (Kind.CONSTANT, Kind.AFFINE):
        return False
    return tail_exponent(fun.values_array(1 << 16)) > 1 + 0.05


def solve_lambda_star(fun: AttachmentFunction, tol: float = 1e-12,
                      offset: int = TREE_OFFSET) -> MalthusianResult:
    """Root of ``rho(lam) = 1`` by bisection on the nonincreasing ``rho``."""
    if explodes(fun):
        raise NoMalthusianRate(f"{fun.describe()} is explosive (sum of 1/f converges)")
    rho_tol = min(1e-13, tol * 1e-2)

    def rho(lam: float) -> tuple[float, float]:
        return rho_hat(fun, lam, rho_tol, offset, cap=4.0)

    lo = 1e-6
    r_lo, _ = rho(lo)
    if r_lo < 1:
        raise NoMalthusianRate(
            f"rho({lo:g}) = {r_lo:.6g} < 1: no Malthusian rate under truncation for {fun.describe()}")
    hi = 1.0
    r_hi, _ = rho(hi)
    doublings = 0
    while not r_hi < 1:
        lo, r_lo = hi, r_hi
        hi *= 2
        doublings += 1
        if doublings > 60:
            raise NoMalthusianRate(f"rho stays >= 1 up to lambda = {hi:g}")
        r_hi, _ = rho(hi)
    bound = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        r_mid, b = rho(mid)
        bound = max(bound, b if math.isfinite(b) else 0.0)
        if r_mid >= 1:
            lo, r_lo = mid, r_mid
        else:
            hi, r_hi = mid, r_mid
    lam = 0.5 * (lo + hi)
    return MalthusianResult(lambda_star=lam, bracket=(lo, hi), rho_at_bracket=(r_lo, r_hi),
                            truncation_k=_truncation_k(fun, lam, rho_tol, offset),
                            tail_bound=bound, offset=offset)


# ---------------------------------------------------------------------------
# assumption checks

C2_DELTAS = (0.5, 0.2, 0.1, 0.05, 0.01)
C2_SLACK = 0.05


@dataclass
class AssumptionReport:
    c1: TriState
    c2: TriState
    c2_surface: dict[float, np.ndarray]
    c3_estimate: float
    c3_curve: np.ndarray
    t_grid: np.ndarray
    prop_under_lamb: TriState
    underline_lambda_estimate: float
    D_bar: float
    rho_at_D_bar: float
    notes: list[str] = field(default_factory=list)

    def as_record(self) -> dict:
        top = _top_decade(self.t_grid)
        return {
            "c1": self.c1.value,
            "c2": self.c2.value,
            **{f"c2_max_ratio_delta_{d:g}": float(np.max(v[top])) for d, v in self.c2_surface.items()},
            "c3_estimate": self.c3_estimate,
            "prop_under_lamb": self.prop_under_lamb.value,
            "underline_lambda_estimate": self.underline_lambda_estimate,
            "D_bar": self.D_bar,
            "rho_at_D_bar": self.rho_at_D_bar,
        }


def _top_decade(t_grid: np.ndarray) -> np.ndarray:
    return t_grid >= t_grid[-1] / 10


def default_grid(table: PhiTable, points: int = 41) -> np.ndarray:
    t_hi = table.t_max / 3.0 * (1 - 1e-12)
    t_lo = min(1.0, t_hi / 100)
    return np.geomspace(t_lo, t_hi, points)


def check_assumptions(fun: AttachmentFunction, table: PhiTable,
                      grid: Optional[Sequence[float]] = None,
                      offset: int = TREE_OFFSET) -> AssumptionReport:
    t = np.asarray(grid if grid is not None else default_grid(table), dtype=float)
    if t[-1] * 3 > table.t_max:
        raise ValueError(f"grid reaches t={t[-1]:g} but K(3t) needs table coverage "
                         f"to {3 * t[-1]:g} (have {table.t_max:g})")
    notes = []
    c1 = {Phi2Status.INFINITE: TriState.TRUE, Phi2Status.FINITE: TriState.FALSE}.get(
        table.phi2_status, TriState.UNKNOWN)
    Kt = table.K(t)
    surface = {d: table.K((1 + d) * t) / Kt for d in C2_DELTAS}
    top = _top_decade(t)
    c2_ok = float(np.max(surface[min(C2_DELTAS)][top])) <= 1 + C2_SLACK
    c3_curve = table.K(3 * t) / Kt
    c3 = float(np.max(c3_curve[top]))
    # checkable criterion for the growth assumption: rho(D_bar) > 1
    L = table.horizon
    i = np.arange(max(1, L // 10), L, dtype=float)
    D_bar = float(np.max(table.f_vals[max(1, L // 10):] / i))
    r, _ = rho_hat(fun, D_bar, 1e-10, offset, cap=4.0)
    if r > 1:
        prop = TriState.TRUE
    else:
        try:
            solve_lambda_star(fun, 1e-8, offset)
            prop = TriState.UNKNOWN
            notes.append("rho(D_bar) <= 1 but a Malthusian root exists; sufficient test inconclusive")
        except NoMalthusianRate:
            prop = TriState.FALSE
    return AssumptionReport(c1=c1, c2=TriState.of(c2_ok), c2_surface=surface, c3_estimate=c3,
                            c3_curve=c3_curve, t_grid=t, prop_under_lamb=prop,
                            underline_lambda_estimate=D_bar, D_bar=D_bar, rho_at_D_bar=r,
                            notes=notes)


def predict_asymptotics(fun: AttachmentFunction, table: PhiTable, result: MalthusianResult,
                        n: float) -> dict:
    """Predicted ``log I*_n`` and ``Phi_1(d_max(n))`` in the non-persistent regime.

    ``pred_log_index = lam^2/2 * K(log n / lam)`` and
    ``pred_phi1_dmax = log n / lam + lam/2 * K(log n / lam)``.
    """
    if table.phi2_status is Phi2Status.FINITE:
        raise RegimeError("Phi_2(inf) < inf: hub is persistent, use the persistent-regime "
                          "max-degree asymptotics instead")
    lam = result.lambda_star
    s = math.log(n) / lam
    Ks = float(table.K(s))
    out = {
        "n": n,
        "lambda_star": lam,
        "K": Ks,
        "pred_log_index": lam * lam / 2 * Ks,
        "pred_phi1_dmax": s + lam / 2 * Ks,
        "applicable": True,
        "note": "",
    }
    if fun.grows_unboundedly() is False:
        out["applicable"] = False
        out["note"] = "formula does not apply: f does not tend to infinity (e.g. f = 1)"
    return out


# ---------------------------------------------------------------------------
# uniform attachment constants


def w(theta: float) -> float:
    return theta - (1 + theta) * math.log1p(theta)


def w_inv(y: float) -> float:
    """Inverse of ``w`` on ``[0, inf)`` for ``y <= 0`` (``w`` is decreasing there)."""
    if y > 0:
        raise ValueError("w maps [0, inf) onto (-inf, 0]")
    if y == 0:
        return 0.0
    hi = 1.0
    while w(hi) > y:
        hi *= 2
    return optimize.brentq(lambda x: w(x) - y, 0.0, hi, xtol=1e-15, rtol=1e-15)


def Psi(u: float) -> float:
    return (1 - u) * (1 + w_inv(-u / (1 - u)))


def uniform_tree_constants() -> dict:
    res = optimize.minimize_scalar(lambda u: -Psi(u), bounds=(0.0, 0.9), method="bounded",
                                   options={"xatol": 1e-12})
    return {"u_hat": float(res.x), "max_slope": float(-res.fun)}
