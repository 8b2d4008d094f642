"""Domain types: sales functions, price impact, finite systems, shocks, capital rules.

All objects are immutable after construction. Array fields of
:class:`FiniteSystem` are stored as read-only float64 copies.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .errors import InputError

__all__ = [
    "SalesFunction",
    "ImpactFunction",
    "PriceImpact",
    "FiniteSystem",
    "ShockSpec",
    "CapitalRule",
    "eval_sales",
    "eval_impact",
    "left_continuous_modification",
    "cap_sales",
]

# kernel branch codes, mirrored in _ckernels.pyx
_IND, _POW, _LEVLIN, _LEVPRICE, _TABLIN, _TABSTEP = range(6)

SALES_KINDS = ("indicator", "power", "leverage_linear", "leverage_price", "table")
IMPACT_KINDS = ("linear", "power", "exponential", "table")


def _as_points(points, what):
    pts = [(float(a), float(b)) for a, b in points]
    if not pts:
        raise InputError(f"{what} needs at least one breakpoint")
    for (u0, v0), (u1, v1) in zip(pts, pts[1:]):
        if u1 < u0:
            raise InputError(f"{what} breakpoints must be sorted by abscissa")
        if v1 < v0:
            raise InputError(f"{what} values must be non-decreasing")
    if pts[0][0] < 0:
        raise InputError(f"{what} abscissae must be non-negative")
    if pts[0][0] > 0:
        pts.insert(0, (0.0, 0.0))
    return tuple(pts)


@dataclass(frozen=True)
class SalesFunction:
    """Fraction of holdings sold as a function of relative loss ``u = loss / capital``.

    ``left_continuous`` switches evaluation to the left-continuous modification
    (a view flag, the table data is shared). ``cap`` applies ``min(rho, cap)``.
    """

    kind: str
    q: float = math.inf
    lam: float = 1.0
    lam_max: float = 1.0
    breakpoints: tuple = ()
    mode: str = "linear"
    left_continuous: bool = False
    cap: float = 1.0

    def __post_init__(self):
        if self.kind not in SALES_KINDS:
            raise InputError(f"unknown sales function kind {self.kind!r}")
        if not 0.0 <= self.cap <= 1.0:
            raise InputError("sales cap must lie in [0, 1]")
        if self.kind == "power" and not self.q > 0:
            raise InputError("power sales exponent q must be positive")
        if self.kind in ("leverage_linear", "leverage_price"):
            if self.lam < 1.0 or self.lam_max < self.lam:
                raise InputError("leverage sales need 1 <= lam <= lam_max")
        if self.kind == "table":
            pts = _as_points(self.breakpoints, "sales table")
            if pts[-1][0] > 1.0:
                raise InputError("sales table abscissae must lie in [0, 1]")
            if pts[-1][1] > 1.0:
                raise InputError("sales table values must lie in [0, 1]")
            if self.mode not in ("linear", "step"):
                raise InputError("sales table mode must be 'linear' or 'step'")
            zero_vals = [v for u, v in pts if u == 0.0]
            if zero_vals and zero_vals[-1] != 0.0:
                raise InputError("sales table must satisfy rho(0) = 0")
            object.__setattr__(self, "breakpoints", pts)

    # -- constructors -------------------------------------------------------
    @classmethod
    def indicator(cls):
        return cls("indicator")

    @classmethod
    def power(cls, q):
        return cls("power", q=float(q))

    @classmethod
    def leverage_linear(cls, lam, lam_max):
        return cls("leverage_linear", lam=float(lam), lam_max=float(lam_max))

    @classmethod
    def leverage_price(cls, lam, lam_max):
        return cls("leverage_price", lam=float(lam), lam_max=float(lam_max))

    @classmethod
    def table(cls, breakpoints, mode="linear"):
        return cls("table", breakpoints=tuple(map(tuple, breakpoints)), mode=mode)

    # -- derived views ------------------------------------------------------
    def left_modification(self):
        return replace(self, left_continuous=True)

    def right_version(self):
        return replace(self, left_continuous=False)

    def capped(self, eps):
        eps = float(eps)
        if not 0.0 <= eps <= 1.0:
            raise InputError("cap must lie in [0, 1]")
        return replace(self, cap=min(self.cap, eps))

    # -- kernel encoding ----------------------------------------------------
    @cached_property
    def _code(self):
        if self.kind == "indicator" or (self.kind == "power" and math.isinf(self.q)):
            return _IND
        if self.kind == "power":
            return _POW
        if self.kind == "leverage_linear":
            return _LEVLIN
        if self.kind == "leverage_price":
            return _IND if self.lam == 1.0 else _LEVPRICE
        return _TABLIN if self.mode == "linear" else _TABSTEP

    @cached_property
    def _params(self):
        code = self._code
        if code == _POW:
            return self.q, 0.0
        if code == _LEVLIN:
            return self.lam_max / self.lam, 0.0
        if code == _LEVPRICE:
            return self.lam, self.lam_max
        return 0.0, 0.0

    @cached_property
    def _table_arrays(self):
        if self.kind != "table":
            return np.zeros(1), np.zeros(1)
        us = np.array([p[0] for p in self.breakpoints], dtype=float)
        vs = np.array([p[1] for p in self.breakpoints], dtype=float)
        return us, vs

    def kernel_spec(self):
        """Tuple consumed by the compiled kernels."""
        us, vs = self._table_arrays
        p0, p1 = self._params
        return self._code, p0, p1, us, vs, int(self.left_continuous), self.cap

    # -- evaluation ---------------------------------------------------------
    def __call__(self, u):
        return self._eval(u, self.left_continuous)

    def right_value(self, u):
        return self._eval(u, False)

    def left_value(self, u):
        return self._eval(u, True)

    def _eval(self, u, left):
        u = np.asarray(u, dtype=float)
        scalar = u.ndim == 0
        u = np.atleast_1d(u)
        over = u > 1.0
        uu = np.minimum(u, 1.0)
        use_left = left & ~over
        code = self._code
        p0, p1 = self._params
        if code == _IND:
            val = np.where(use_left, over, uu >= 1.0).astype(float)
        elif code == _POW:
            val = np.power(uu, p0)
        elif code == _LEVLIN:
            val = 1.0 - (1.0 - uu) * p0
        elif code == _LEVPRICE:
            val = 1.0 - p1 * (1.0 - (p0 - 1.0) / (p0 - uu))
        else:
            val = self._eval_table(uu, use_left, code == _TABSTEP)
        val = np.minimum(np.clip(val, 0.0, 1.0), self.cap)
        return val[0] if scalar else val

    def _eval_table(self, uu, use_left, step):
        us, vs = self._table_arrays
        last = len(us) - 1
        k = np.where(use_left, np.searchsorted(us, uu, side="left"),
                     np.searchsorted(us, uu, side="right")) - 1
        kc = np.clip(k, 0, last)
        kn = np.minimum(kc + 1, last)
        lo, hi = vs[kc], vs[kn]
        if step:
            val = lo
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                interp = lo + (uu - us[kc]) / (us[kn] - us[kc]) * (hi - lo)
            val = np.where(kc == last, lo, np.minimum(np.maximum(interp, lo), hi))
        return np.where(k < 0, 0.0, val)

    # -- analytic properties ------------------------------------------------
    @property
    def exponent(self):
        """``q`` for the ``u**q ∧ 1`` family (``inf`` for the indicator), else ``None``."""
        if self.kind == "indicator":
            return math.inf
        if self.kind == "power":
            return self.q
        return None

    @property
    def derivative_at_zero(self):
        if self.cap == 0.0:
            return 0.0
        code = self._code
        if code == _IND:
            return 0.0
        if code == _POW:
            if self.q == 1.0:
                return 1.0
            return 0.0 if self.q > 1.0 else math.inf
        if code == _LEVLIN:
            return 1.0 if self.lam_max == self.lam else 0.0
        if code == _LEVPRICE:
            return (self.lam - 1.0) / self.lam if self.lam_max == self.lam else 0.0
        if code == _TABSTEP:
            return 0.0
        us, vs = self._table_arrays
        if len(us) < 2:
            return 0.0
        return float((vs[1] - vs[0]) / (us[1] - us[0]))

    @property
    def is_continuous(self):
        code = self._code
        if code == _IND:
            return False
        if code == _TABSTEP:
            _, vs = self._table_arrays
            return bool(np.all(vs == 0.0))
        if code == _TABLIN:
            us, _ = self._table_arrays
            return bool(np.all(np.diff(us) > 0))
        return True

    @property
    def strictly_increasing_near_zero(self):
        if self.cap == 0.0:
            return False
        code = self._code
        if code == _POW:
            return True
        if code in (_LEVLIN, _LEVPRICE):
            return self.lam_max == self.lam and (code == _LEVLIN or self.lam > 1.0)
        if code == _TABLIN:
            return self.derivative_at_zero > 0
        return False

    @property
    def value_at_one(self):
        return float(self.right_value(1.0))

    def jump_points(self):
        """Abscissae in ``(0, 1]`` where the function may jump."""
        code = self._code
        if code == _IND:
            return (1.0,)
        if code in (_TABLIN, _TABSTEP):
            us, vs = self._table_arrays
            pts = []
            for k in range(1, len(us)):
                if code == _TABSTEP and vs[k] != vs[k - 1]:
                    pts.append(float(us[k]))
                elif code == _TABLIN and us[k] == us[k - 1] and vs[k] != vs[k - 1]:
                    pts.append(float(us[k]))
            return tuple(sorted(set(pts)))
        return ()

    def kink_points(self):
        """Abscissae where the function is not smooth (used as quadrature breakpoints)."""
        pts = set(self.jump_points())
        if self.kind == "table":
            pts.update(float(u) for u, _ in self.breakpoints if 0.0 < u <= 1.0)
        elif self._code == _LEVLIN or self._code == _LEVPRICE:
            pts.add(1.0 - self.lam / self.lam_max)
        if self.cap < 1.0 and self._code == _POW:
            pts.add(self.cap ** (1.0 / self.q))
        pts.add(1.0)
        return tuple(sorted(p for p in pts if 0.0 < p <= 1.0))

    # -- serialization ------------------------------------------------------
    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind == "power":
            d["q"] = "inf" if math.isinf(self.q) else self.q
        elif self.kind in ("leverage_linear", "leverage_price"):
            d.update(lam=self.lam, lam_max=self.lam_max)
        elif self.kind == "table":
            d.update(breakpoints=[list(p) for p in self.breakpoints], mode=self.mode)
        if self.left_continuous:
            d["left_continuous"] = True
        if self.cap < 1.0:
            d["cap"] = self.cap
        return d

    @classmethod
    def from_dict(cls, d):
        kind = d.get("kind")
        if kind == "power":
            q = d.get("q")
            if q is None:
                raise InputError("power sales function requires 'q'", field="q")
            f = cls.power(math.inf if q in ("inf", "infinity") else float(q))
        elif kind == "indicator":
            f = cls.indicator()
        elif kind in ("leverage_linear", "leverage_price"):
            try:
                f = cls(kind, lam=float(d["lam"]), lam_max=float(d["lam_max"]))
            except KeyError as e:
                raise InputError(f"{kind} requires {e.args[0]!r}", field=e.args[0]) from None
        elif kind == "table":
            f = cls.table(d.get("breakpoints", ()), d.get("mode", "linear"))
        else:
            raise InputError(f"unknown sales function kind {kind!r}", field="kind")
        if d.get("left_continuous"):
            f = f.left_modification()
        if "cap" in d:
            f = f.capped(float(d["cap"]))
        return f


def eval_sales(rho, u):
    """``rho(min(u, 1))`` with right-continuous evaluation at jumps."""
    u = np.asarray(u, dtype=float)
    if np.any(u < 0):
        raise InputError("relative loss must be non-negative")
    return rho.right_value(u)


def left_continuous_modification(rho):
    return rho.left_modification()


def cap_sales(rho, eps):
    return rho.capped(eps)


@dataclass(frozen=True)
class ImpactFunction:
    """Relative price drop of one asset as a function of its own sold shares per institution."""

    kind: str
    nu: float = 1.0
    points: tuple = ()

    def __post_init__(self):
        if self.kind not in IMPACT_KINDS:
            raise InputError(f"unknown price impact kind {self.kind!r}")
        if self.kind == "power" and not self.nu > 0:
            raise InputError("power impact exponent nu must be positive")
        if self.kind == "table":
            pts = _as_points(self.points, "impact table")
            if any(u1 == u0 for (u0, _), (u1, _) in zip(pts, pts[1:])):
                raise InputError("impact table must be continuous (no repeated abscissae)")
            if pts[-1][1] > 1.0:
                warnings.warn("impact table values above 1 clamped to 1", stacklevel=3)
                pts = tuple((u, min(v, 1.0)) for u, v in pts)
            object.__setattr__(self, "points", pts)

    @cached_property
    def _arrays(self):
        return (np.array([p[0] for p in self.points], dtype=float),
                np.array([p[1] for p in self.points], dtype=float))

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind == "linear":
            return np.minimum(y, 1.0)
        if self.kind == "power":
            return np.power(np.minimum(y, 1.0), self.nu)
        if self.kind == "exponential":
            return 1.0 - np.exp(-y)
        us, vs = self._arrays
        return np.interp(y, us, vs)

    @property
    def slope_at_zero(self):
        if self.kind in ("linear", "exponential"):
            return 1.0
        if self.kind == "power":
            if self.nu == 1.0:
                return 1.0
            return 0.0 if self.nu > 1.0 else math.inf
        us, vs = self._arrays
        return float((vs[1] - vs[0]) / (us[1] - us[0])) if len(us) > 1 else 0.0

    @property
    def exponent(self):
        """``nu`` for power-type impact (1 for linear), else ``None``."""
        if self.kind == "linear":
            return 1.0
        if self.kind == "power":
            return self.nu
        return None

    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind == "power":
            d["nu"] = self.nu
        elif self.kind == "table":
            d["points"] = [list(p) for p in self.points]
        return d

    @classmethod
    def from_dict(cls, d):
        kind = d.get("kind")
        if kind == "power":
            if "nu" not in d:
                raise InputError("power impact requires 'nu'", field="nu")
            return cls("power", nu=float(d["nu"]))
        if kind == "table":
            return cls("table", points=tuple(map(tuple, d.get("points", ()))))
        return cls(kind)


@dataclass(frozen=True)
class PriceImpact:
    """Per-asset price impact; asset ``m`` reacts to ``chi[m]`` only."""

    components: tuple

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise InputError("price impact needs at least one asset")
        object.__setattr__(self, "components", comps)

    @classmethod
    def uniform(cls, kind, M, **params):
        return cls(tuple(ImpactFunction(kind, **params) for _ in range(M)))

    @property
    def M(self):
        return len(self.components)

    def __call__(self, chi):
        chi = np.asarray(chi, dtype=float)
        if chi.shape[-1] != self.M:
            raise InputError(f"impact expects {self.M} assets, got {chi.shape[-1]}")
        out = np.empty_like(chi)
        for m, comp in enumerate(self.components):
            out[..., m] = comp(chi[..., m])
        return out

    def jacobian_at_zero(self):
        """Matrix ``J[l, m] = d h^l / d chi^m`` at 0 (diagonal; may contain ``inf``)."""
        J = np.zeros((self.M, self.M))
        for m, comp in enumerate(self.components):
            J[m, m] = comp.slope_at_zero
        return J

    def exponents(self):
        return [c.exponent for c in self.components]

    @property
    def is_linear(self):
        return all(c.kind == "linear" for c in self.components)

    def to_dict(self):
        kinds = {c.to_dict().__repr__() for c in self.components}
        if len(kinds) == 1:
            d = self.components[0].to_dict()
            d["assets"] = self.M
            return d
        return {"assets": [c.to_dict() for c in self.components]}

    @classmethod
    def from_dict(cls, d, M=None):
        assets = d.get("assets", M)
        if isinstance(assets, list):
            return cls(tuple(ImpactFunction.from_dict(a) for a in assets))
        if assets is None:
            raise InputError("price impact needs an asset count", field="assets")
        comp = ImpactFunction.from_dict(d)
        return cls((comp,) * int(assets))


def eval_impact(h, chi):
    chi = np.asarray(chi, dtype=float)
    if np.any(chi < 0):
        raise InputError("sold shares must be non-negative")
    return h(chi)


def _frozen(a):
    a = np.array(a, dtype=float, order="C", copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FiniteSystem:
    """One concrete system of ``n`` institutions and ``M`` assets."""

    holdings: np.ndarray
    capitals: np.ndarray
    losses: np.ndarray
    sales: SalesFunction
    impact: PriceImpact
    ids: tuple | None = None
    dropped_rows: int = 0

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.holdings, dtype=float))
        c = np.asarray(self.capitals, dtype=float).ravel()
        ell = np.asarray(self.losses, dtype=float).ravel()
        n, M = x.shape
        if c.shape != (n,) or ell.shape != (n,):
            raise InputError(f"capitals and losses must have length {n}")
        if self.impact.M != M:
            raise InputError(f"price impact has {self.impact.M} assets, holdings have {M}")
        if not np.all(np.isfinite(x)) or np.any(x < 0):
            row = int(np.argwhere(~(x >= 0) | ~np.isfinite(x))[0, 0])
            raise InputError("holdings must be finite and non-negative", row=row)
        bad = np.flatnonzero(~(c > 0) | ~np.isfinite(c))
        if bad.size:
            raise InputError("capital must be strictly positive", row=int(bad[0]), field="c")
        bad = np.flatnonzero(~(ell >= 0) | ~np.isfinite(ell))
        if bad.size:
            raise InputError("loss must be non-negative", row=int(bad[0]), field="l")
        empty = np.flatnonzero(~np.any(x > 0, axis=1))
        if empty.size:
            raise InputError("institution holds no assets", row=int(empty[0]))
        object.__setattr__(self, "holdings", _frozen(x))
        object.__setattr__(self, "capitals", _frozen(c))
        object.__setattr__(self, "losses", _frozen(ell))
        if self.ids is not None:
            object.__setattr__(self, "ids", tuple(self.ids))

    @classmethod
    def from_arrays(cls, holdings, capitals, losses, sales, impact, ids=None, drop_empty=True):
        """Build a system, dropping rows with all-zero holdings (with a warning)."""
        x = np.atleast_2d(np.asarray(holdings, dtype=float))
        keep = np.any(x > 0, axis=1)
        dropped = int((~keep).sum())
        if dropped and drop_empty:
            warnings.warn(f"dropped {dropped} institution(s) with all-zero holdings", stacklevel=2)
            x = x[keep]
            capitals = np.asarray(capitals, dtype=float)[keep]
            losses = np.asarray(losses, dtype=float)[keep]
            if ids is not None:
                ids = [i for i, k in zip(ids, keep) if k]
        return cls(x, capitals, losses, sales, impact, ids=ids, dropped_rows=dropped if drop_empty else 0)

    @property
    def n(self):
        return self.holdings.shape[0]

    @property
    def M(self):
        return self.holdings.shape[1]

    def mean_holdings(self):
        return self.holdings.mean(axis=0)

    def with_losses(self, losses):
        return replace(self, losses=np.asarray(losses, dtype=float))

    def with_sales(self, sales):
        return replace(self, sales=sales)

    def permuted(self, perm):
        perm = np.asarray(perm)
        ids = None if self.ids is None else [self.ids[i] for i in perm]
        return replace(self, holdings=self.holdings[perm], capitals=self.capitals[perm],
                       losses=self.losses[perm], ids=ids)


@dataclass(frozen=True)
class ShockSpec:
    """Exogenous loss family, independent of holdings and capital.

    ``atomic``: ``L = multiple * C`` with probability ``p``, else 0.
    ``proportional``: ``L = delta * C`` for everyone.
    """

    kind: str = "none"
    p: float = 0.0
    multiple: float = 1.0
    delta: float = 0.0
    independent: bool = True

    def __post_init__(self):
        if self.kind not in ("none", "atomic", "proportional"):
            raise InputError(f"unknown shock kind {self.kind!r}")
        if not 0.0 <= self.p <= 1.0:
            raise InputError("shock probability must lie in [0, 1]")
        if self.kind == "atomic" and self.multiple < 1.0:
            raise InputError("atomic shock multiple must be >= 1")
        if self.delta < 0:
            raise InputError("proportional shock must be non-negative")
        if not self.independent:
            raise InputError("only shocks independent of (X, C) are supported")

    @classmethod
    def none(cls):
        return cls("none")

    @classmethod
    def atomic(cls, p, multiple=1.0):
        return cls("atomic", p=float(p), multiple=float(multiple))

    @classmethod
    def proportional(cls, delta):
        return cls("proportional", delta=float(delta))

    def components(self):
        """``[(probability, L/C)]`` mixture components with positive probability."""
        if self.kind == "atomic":
            comps = [(self.p, self.multiple), (1.0 - self.p, 0.0)]
        elif self.kind == "proportional":
            comps = [(1.0, self.delta)]
        else:
            comps = [(1.0, 0.0)]
        return [(w, s) for w, s in comps if w > 0]

    def mean_relative_loss(self):
        return sum(w * s for w, s in self.components())

    @property
    def positive_probability(self):
        return sum(w for w, s in self.components() if s > 0)

    def to_dict(self):
        if self.kind == "atomic":
            return {"kind": "atomic", "p": self.p, "multiple": self.multiple}
        if self.kind == "proportional":
            return {"kind": "proportional", "delta": self.delta}
        return {"kind": "none"}

    @classmethod
    def from_dict(cls, d):
        kind = d.get("kind", "none")
        if kind == "atomic":
            return cls.atomic(d.get("p", 0.0), d.get("multiple", 1.0))
        if kind == "proportional":
            return cls.proportional(d.get("delta", 0.0))
        return cls(kind)


@dataclass(frozen=True)
class CapitalRule:
    """``C = alpha * x_tot**gamma``, or ``(sum_m w_m x^m)**gamma`` when ``asset_weights`` is set."""

    alpha: float = 1.0
    gamma: float = 0.0
    asset_weights: tuple | None = None

    def __post_init__(self):
        if not self.alpha > 0:
            raise InputError("capital level alpha must be positive")
        if self.gamma < 0:
            raise InputError("capital exponent gamma must be non-negative")
        if self.asset_weights is not None:
            w = tuple(float(v) for v in self.asset_weights)
            if any(v <= 0 for v in w):
                raise InputError("capital asset weights must be positive")
            object.__setattr__(self, "asset_weights", w)

    @classmethod
    def constant(cls, value):
        return cls(alpha=float(value), gamma=0.0)

    def capital(self, holdings):
        """Capital for each row of an ``(n, M)`` holdings matrix."""
        x = np.atleast_2d(np.asarray(holdings, dtype=float))
        if self.asset_weights is not None:
            return np.power(x @ np.asarray(self.asset_weights), self.gamma)
        return self.alpha * np.power(x.sum(axis=1), self.gamma)

    def of_total(self, total):
        return self.alpha * np.power(np.asarray(total, dtype=float), self.gamma)

    def to_dict(self):
        d = {"alpha": self.alpha, "gamma": self.gamma}
        if self.asset_weights is not None:
            d["asset_weights"] = list(self.asset_weights)
        return d

    @classmethod
    def from_dict(cls, d):
        if "value" in d:
            return cls.constant(d["value"])
        return cls(alpha=float(d.get("alpha", 1.0)), gamma=float(d.get("gamma", 0.0)),
                   asset_weights=d.get("asset_weights"))
