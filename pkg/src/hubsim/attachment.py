"""Attachment functions and the prefix-sum functionals built from them.

An attachment function maps a vertex degree to the weight with which that
vertex receives the next edge.  Everything downstream is parameterized by the
prefix sums

    phi_k(l) = sum_{i < l} f(i)**-k,     k = 1, 2, 3,

extended to real arguments by linear interpolation, together with
``K = phi_2 o phi_1^{-1}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import special

VALIDATION_HORIZON = 10_000


class ModelError(ValueError):
    """The attachment function violates a model requirement (e.g. f <= 0)."""


class PhiRangeError(ValueError):
    """A query fell outside the table; ``needed_horizon`` says how far to grow."""

    def __init__(self, message: str, needed_horizon: int):
        super().__init__(f"{message} (requires horizon >= {needed_horizon})")
        self.needed_horizon = needed_horizon


class Kind(str, Enum):
    CONSTANT = "constant"
    AFFINE = "affine"
    POWER = "power"
    TABLE = "table"
    COMPOSITE = "composite"


@dataclass(frozen=True)
class AttachmentFunction:
    """A rule ``f: N0 -> (0, inf)`` plus declared structural facts.

    Kinds:

    * ``constant``: ``f(k) = c``
    * ``affine``: ``f(k) = k + alpha`` (``alpha = 1`` is ``f(k) = k + 1``)
    * ``power``: ``f(k) = (k + 1) ** alpha``
    * ``table``: explicit values, continued by ``tail`` (another function,
      evaluated at the same degree) or an error past the end
    * ``composite``: ``op`` in {"sum", "product"} over ``parts``

    Use the ``constant``/``affine``/``power``/``table``/``composite``
    constructors rather than filling fields by hand.
    """

    kind: Kind
    c: float = 1.0
    alpha: float = 0.0
    values: tuple[float, ...] = ()
    tail: Optional["AttachmentFunction"] = None
    op: str = ""
    parts: tuple["AttachmentFunction", ...] = ()
    monotone: Optional[bool] = None
    linear_bound_Cf: Optional[float] = None
    _f_star: float = field(default=math.nan, repr=False, compare=False)

    # -- constructors ------------------------------------------------------

    @classmethod
    def constant(cls, c: float = 1.0) -> "AttachmentFunction":
        if not c > 0:
            raise ModelError(f"constant attachment needs c > 0, got {c}")
        return cls._make(Kind.CONSTANT, c=float(c), monotone=True, linear_bound_Cf=float(c))

    @classmethod
    def affine(cls, alpha: float = 1.0) -> "AttachmentFunction":
        # alpha = 0 is allowed: f(0) = 0 only matters for a vertex of degree 0,
        # which in the tree model is the root before the first edge.
        if not alpha >= 0:
            raise ModelError(f"affine attachment needs alpha >= 0, got {alpha}")
        return cls._make(Kind.AFFINE, alpha=float(alpha), monotone=True,
                         linear_bound_Cf=max(1.0, float(alpha)))

    @classmethod
    def power(cls, alpha: float) -> "AttachmentFunction":
        if not alpha >= 0:
            raise ModelError(f"power attachment needs alpha >= 0, got {alpha}")
        # (k+1)^alpha <= (k+1) for alpha <= 1; for alpha > 1 no linear bound exists
        cf = 1.0 if alpha <= 1 else None
        return cls._make(Kind.POWER, alpha=float(alpha), monotone=True, linear_bound_Cf=cf)

    @classmethod
    def table(cls, values: Sequence[float], tail: Optional["AttachmentFunction"] = None,
              monotone: Optional[bool] = None,
              linear_bound_Cf: Optional[float] = None) -> "AttachmentFunction":
        vals = tuple(float(v) for v in values)
        if not vals:
            raise ModelError("table attachment needs at least one value")
        return cls._make(Kind.TABLE, values=vals, tail=tail, monotone=monotone,
                         linear_bound_Cf=linear_bound_Cf)

    @classmethod
    def from_table_file(cls, path: str | Path, **kw) -> "AttachmentFunction":
        vals = np.loadtxt(path, dtype=float, ndmin=1)
        return cls.table(vals.tolist(), **kw)

    @classmethod
    def composite(cls, op: str, parts: Sequence["AttachmentFunction"],
                  monotone: Optional[bool] = None,
                  linear_bound_Cf: Optional[float] = None) -> "AttachmentFunction":
        if op not in ("sum", "product"):
            raise ModelError(f"composite op must be 'sum' or 'product', got {op!r}")
        if len(parts) < 2:
            raise ModelError("composite needs at least two parts")
        return cls._make(Kind.COMPOSITE, op=op, parts=tuple(parts), monotone=monotone,
                         linear_bound_Cf=linear_bound_Cf)

    @classmethod
    def _make(cls, kind: Kind, **kw) -> "AttachmentFunction":
        fun = cls(kind=kind, **kw)
        object.__setattr__(fun, "_f_star", fun._compute_f_star())
        fun.validate()
        return fun

    # -- evaluation --------------------------------------------------------

    def __call__(self, k: int) -> float:
        return eval_f(self, k)

    def values_array(self, n: int, offset: int = 0) -> np.ndarray:
        """``f(offset), ..., f(offset + n - 1)`` as a float64 array."""
        k = np.arange(offset, offset + n, dtype=np.float64)
        return self._vec(k)

    def _vec(self, k: np.ndarray) -> np.ndarray:
        if self.kind is Kind.CONSTANT:
            return np.full(k.shape, self.c)
        if self.kind is Kind.AFFINE:
            return k + self.alpha
        if self.kind is Kind.POWER:
            return (k + 1.0) ** self.alpha
        if self.kind is Kind.TABLE:
            n = len(self.values)
            out = np.empty(k.shape)
            inside = k < n
            out[inside] = np.asarray(self.values)[k[inside].astype(np.int64)]
            if not inside.all():
                if self.tail is None:
                    raise ModelError(
                        f"degree {int(k[~inside].min())} beyond table of length {n} and no tail rule")
                out[~inside] = self.tail._vec(k[~inside])
            return out
        vals = [p._vec(k) for p in self.parts]
        acc = vals[0].copy()
        for v in vals[1:]:
            acc = acc + v if self.op == "sum" else acc * v
        return acc

    @property
    def f_star(self) -> float:
        """``inf_i f(i)``; exact for closed forms, prefix-plus-tail otherwise."""
        return self._f_star

    def _compute_f_star(self) -> float:
        if self.kind is Kind.CONSTANT:
            return self.c
        if self.kind is Kind.AFFINE:
            return self.alpha
        if self.kind is Kind.POWER:
            return 1.0
        if self.kind is Kind.TABLE:
            m = min(self.values)
            if self.tail is not None:
                m = min(m, float(self.tail._vec(np.arange(len(self.values),
                                                          len(self.values) + VALIDATION_HORIZON,
                                                          dtype=float)).min()))
            return m
        return float(self._vec(np.arange(VALIDATION_HORIZON, dtype=float)).min())

    def f_star_from(self, A: int) -> float:
        """``inf_{i >= A} f(i)`` evaluated on the validation prefix."""
        if self.kind is Kind.CONSTANT:
            return self.c
        if self.kind in (Kind.AFFINE, Kind.POWER):
            return float(self.values_array(1, A)[0])
        return float(self.values_array(VALIDATION_HORIZON, A).min())

    def validate(self, horizon: int = VALIDATION_HORIZON) -> None:
        """Check positivity on a prefix and any declared monotone / C_f claims."""
        if self.kind is Kind.TABLE and self.tail is None:
            horizon = min(horizon, len(self.values))
        v = self.values_array(horizon)
        start = 1 if (self.kind is Kind.AFFINE and self.alpha == 0) else 0
        if not np.all(v[start:] > 0) or not np.all(np.isfinite(v)):
            bad = int(np.argmax(~(v > 0) | ~np.isfinite(v)))
            raise ModelError(f"f({bad}) = {v[bad]} is not a positive finite number")
        if self.monotone and np.any(np.diff(v) < 0):
            bad = int(np.argmax(np.diff(v) < 0))
            raise ModelError(f"declared monotone but f({bad + 1}) < f({bad})")
        if self.linear_bound_Cf is not None:
            i = np.arange(horizon, dtype=float)
            if np.any(v > self.linear_bound_Cf * (i + 1) * (1 + 1e-12)):
                bad = int(np.argmax(v > self.linear_bound_Cf * (i + 1)))
                raise ModelError(f"declared C_f={self.linear_bound_Cf} but f({bad}) = {v[bad]}")

    def describe(self) -> str:
        if self.kind is Kind.CONSTANT:
            return f"f(k)={self.c:g}"
        if self.kind is Kind.AFFINE:
            return f"f(k)=k+{self.alpha:g}"
        if self.kind is Kind.POWER:
            return f"f(k)=(k+1)^{self.alpha:g}"
        if self.kind is Kind.TABLE:
            return f"table[{len(self.values)}]" + (f"+{self.tail.describe()}" if self.tail else "")
        sep = " + " if self.op == "sum" else " * "
        return "(" + sep.join(p.describe() for p in self.parts) + ")"

    def grows_unboundedly(self) -> Optional[bool]:
        """Whether ``f(k) -> inf``; ``None`` when only a table can say."""
        if self.kind is Kind.CONSTANT:
            return False
        if self.kind is Kind.AFFINE:
            return True
        if self.kind is Kind.POWER:
            return self.alpha > 0
        return None


def eval_f(fun: AttachmentFunction, k: int) -> float:
    if k < 0:
        raise ValueError(f"degree must be >= 0, got {k}")
    return float(fun._vec(np.array([float(k)]))[0])


# ---------------------------------------------------------------------------
# Phi tables


class Phi2Status(str, Enum):
    FINITE = "finite"
    INFINITE = "infinite"
    UNKNOWN = "unknown"


def _extended_cumsum(x: np.ndarray) -> np.ndarray:
    # long double accumulation, rounded once at the end
    out = np.zeros(len(x) + 1, dtype=np.longdouble)
    np.cumsum(x.astype(np.longdouble), out=out[1:])
    return out.astype(np.float64)


@dataclass(frozen=True)
class PhiTable:
    """Prefix sums of ``f**-k`` for ``k = 1, 2, 3`` on degrees ``0..horizon``.

    ``inc[k-1][l]`` holds ``f(l)**-k`` exactly as computed from ``eval_f``;
    ``phi[k-1][l]`` is the compensated prefix sum.
    """

    fun: AttachmentFunction
    horizon: int
    f_vals: np.ndarray
    phi1: np.ndarray
    phi2: np.ndarray
    phi3: np.ndarray
    phi2_status: Phi2Status
    phi2_limit: float  # value of phi_2(inf) when finite, else nan / inf
    phi2_tail_bound: float  # bound on phi_2(inf) - phi2[horizon] when finite

    def phi(self, k: int) -> np.ndarray:
        return (self.phi1, self.phi2, self.phi3)[k - 1]

    def increments(self, k: int) -> np.ndarray:
        return self.f_vals ** -float(k)

    # -- interpolated evaluation ---------------------------------------------

    def Phi(self, k: int, x):
        """Piecewise-linear ``Phi_k(x)``, the integral of the step-extended ``f**-k``."""
        x = np.asarray(x, dtype=float)
        if np.any(x < 0):
            raise ValueError("Phi is defined for x >= 0")
        if np.any(x > self.horizon):
            raise PhiRangeError(f"Phi_{k}({float(np.max(x))}) beyond table",
                                int(math.ceil(float(np.max(x)))) + 1)
        table = self.phi(k)
        lo = np.minimum(np.floor(x).astype(np.int64), self.horizon - 1)
        out = table[lo] + (x - lo) * (self.f_vals[lo] ** -float(k))
        out = np.where(x == self.horizon, table[-1], out)
        return out if out.ndim else float(out)

    def Phi1_inv(self, t):
        """Inverse of the interpolated ``Phi_1``."""
        return self._inv(self.phi1, 1, t)

    def Phi2_inv(self, y):
        return self._inv(self.phi2, 2, y)

    def _inv(self, table: np.ndarray, k: int, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise ValueError("inverse is defined for nonnegative arguments")
        top = table[-1]
        if np.any(t > top):
            raise PhiRangeError(f"Phi_{k}^-1({float(np.max(t))}) beyond Phi_{k}(horizon)={top}",
                                self._needed_horizon(table, k, float(np.max(t))))
        idx = np.searchsorted(table, t, side="right") - 1
        lo = np.clip(idx, 0, self.horizon - 1)
        out = lo + (t - table[lo]) * self.f_vals[lo] ** float(k)
        out = np.where(idx >= self.horizon, float(self.horizon), np.minimum(out, lo + 1.0))
        return out if out.ndim else float(out)

    def _needed_horizon(self, table: np.ndarray, k: int, t: float) -> int:
        # extrapolate with the last increment; doubling guards against shrinking increments
        last_inc = self.f_vals[-1] ** -float(k)
        guess = self.horizon + (t - table[-1]) / last_inc
        return int(max(2 * self.horizon, math.ceil(guess)))

    def K(self, t):
        """``K(t) = Phi_2(Phi_1^{-1}(t))``."""
        return self.Phi(2, self.Phi1_inv(t))

    def K_inv(self, y):
        """Inverse of ``K``; ``Phi_1 o Phi_2^{-1}`` since both pieces are strictly increasing."""
        return self.Phi(1, self.Phi2_inv(y))

    @property
    def t_max(self) -> float:
        """Largest ``t`` for which ``K(t)`` and ``Phi_1^{-1}(t)`` are covered."""
        return float(self.phi1[-1])


def build_phi_table(fun: AttachmentFunction, horizon: int) -> PhiTable:
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    f_vals = fun.values_array(horizon)
    if not np.all(f_vals > 0) or not np.all(np.isfinite(f_vals)):
        bad = int(np.argmax(~(f_vals > 0)))
        raise ModelError(f"f({bad}) = {f_vals[bad]} is not positive; Phi tables need f > 0")
    phis = [_extended_cumsum(f_vals ** -float(k)) for k in (1, 2, 3)]
    status, limit, tail = _classify_phi2(fun, f_vals, phis[1])
    return PhiTable(fun=fun, horizon=horizon, f_vals=f_vals, phi1=phis[0], phi2=phis[1],
                    phi3=phis[2], phi2_status=status, phi2_limit=limit, phi2_tail_bound=tail)


def ensure_phi_table(fun: AttachmentFunction, t_needed: float = 0.0,
                     degree_needed: int = 1, start: int = 1024) -> PhiTable:
    """Smallest doubling horizon whose table covers ``Phi_1^{-1}(t_needed)`` and ``degree_needed``."""
    horizon = max(start, degree_needed)
    while True:
        table = build_phi_table(fun, horizon)
        if table.t_max >= t_needed:
            return table
        horizon = max(2 * horizon, table._needed_horizon(table.phi1, 1, t_needed))


TAIL_FIT_MARGIN = 0.05


def tail_exponent(f_vals: np.ndarray) -> float:
    """Least-squares slope of ``log f`` against ``log(k+1)`` over the last decade."""
    n = len(f_vals)
    lo = max(1, n // 10)
    k = np.arange(lo, n, dtype=float)
    if len(k) < 2:
        return math.nan
    slope, _ = np.polyfit(np.log(k + 1.0), np.log(f_vals[lo:]), 1)
    return float(slope)


def _classify_phi2(fun: AttachmentFunction, f_vals: np.ndarray, phi2: np.ndarray):
    L = len(f_vals)
    partial = float(phi2[-1])
    if fun.kind is Kind.CONSTANT:
        return Phi2Status.INFINITE, math.inf, math.inf
    if fun.kind is Kind.POWER:
        a2 = 2.0 * fun.alpha
        if a2 <= 1.0:
            return Phi2Status.INFINITE, math.inf, math.inf
        # sum_{k>=L} (k+1)^-2a = hurwitz zeta(2a, L+1); bounded by the integral from L
        tail = float(special.zeta(a2, L + 1))
        bound = L ** (1.0 - a2) / (a2 - 1.0)
        return Phi2Status.FINITE, partial + tail, bound
    if fun.kind is Kind.AFFINE:
        a = fun.alpha
        tail = float(special.zeta(2.0, L + a))
        bound = 1.0 / (L + a - 1.0) if L + a > 1 else math.inf
        return Phi2Status.FINITE, partial + tail, bound
    if fun.kind is Kind.TABLE and fun.tail is None:
        return Phi2Status.UNKNOWN, math.nan, math.nan
    theta = tail_exponent(f_vals)
    if not math.isfinite(theta):
        return Phi2Status.UNKNOWN, math.nan, math.nan
    if theta < 0.5 - TAIL_FIT_MARGIN:
        return Phi2Status.INFINITE, math.inf, math.inf
    if theta > 0.5 + TAIL_FIT_MARGIN:
        # integral tail with the fitted power law: sum_{k>=L} f(k)^-2 ~ f(L)^-2 L / (2 theta - 1)
        est = f_vals[-1] ** -2.0 * L / (2 * theta - 1)
        return Phi2Status.FINITE, partial + est, 2 * est
    return Phi2Status.UNKNOWN, math.nan, math.nan
