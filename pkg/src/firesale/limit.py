"""Limiting systems: the joint law of holdings, capital and shock, with expectation evaluators.

A catalog system is driven by one scalar latent variable ``T``. Institutions come
in types ``k`` (probability ``pi_k``) holding ``X = w_k * T`` and capital
``C = alpha_k * T**gamma``. The shock is independent of ``T`` and given as a
mixture of relative losses ``L / C``. Under this design every expectation of the
form ``E[X^m rho((L + X.h) / C)]`` reduces to one-dimensional integrals in ``T``.

A sample-cloud system is an explicit fixed sample; expectations are sample means
over the same draws for every ``chi`` (common random numbers).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy import integrate, special

from .errors import DomainError, InputError, IntegrationFailure
from .model import CapitalRule, FiniteSystem, PriceImpact, SalesFunction, ShockSpec

__all__ = ["Latent", "SampleCloud", "LimitSystem", "STRATEGIES"]

STRATEGIES = ("auto", "closed_form", "quadrature", "monte_carlo")

DEFAULT_MC_SAMPLES = 10**6


@dataclass(frozen=True)
class Latent:
    """Scalar driver: ``exponential(rate)``, ``pareto(beta)`` on ``[1, inf)`` or ``constant(value)``."""

    kind: str
    rate: float = 1.0
    beta: float = 3.0
    value: float = 1.0

    def __post_init__(self):
        if self.kind == "exponential":
            if not self.rate > 0:
                raise InputError("exponential rate must be positive")
        elif self.kind == "pareto":
            if not self.beta > 1:
                raise DomainError("pareto tail exponent must exceed 1")
        elif self.kind == "constant":
            if not self.value > 0:
                raise InputError("constant latent value must be positive")
        else:
            raise InputError(f"unknown latent kind {self.kind!r}")

    @classmethod
    def exponential(cls, rate=1.0):
        return cls("exponential", rate=float(rate))

    @classmethod
    def pareto(cls, beta):
        return cls("pareto", beta=float(beta))

    @classmethod
    def constant(cls, value):
        return cls("constant", value=float(value))

    @property
    def is_continuous(self):
        return self.kind != "constant"

    @property
    def support(self):
        if self.kind == "pareto":
            return 1.0, math.inf
        if self.kind == "exponential":
            return 0.0, math.inf
        return self.value, self.value

    def moment(self, p):
        """``E[T**p]``; ``inf`` when it diverges."""
        if self.kind == "constant":
            return self.value ** p
        if self.kind == "exponential":
            if p <= -1:
                return math.inf
            return math.gamma(p + 1.0) / self.rate ** p
        b = self.beta
        return (b - 1.0) / (b - 1.0 - p) if p < b - 1.0 else math.inf

    def mean(self):
        return self.moment(1.0)

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "exponential":
            return np.where(t >= 0, self.rate * np.exp(-self.rate * np.maximum(t, 0.0)), 0.0)
        if self.kind == "pareto":
            return np.where(t >= 1, (self.beta - 1.0) * np.power(np.maximum(t, 1.0), -self.beta), 0.0)
        raise DomainError("constant latent has no density")

    def prob_ge(self, a, strict=False):
        """``P(T >= a)`` (``P(T > a)`` when ``strict``)."""
        if self.kind == "constant":
            return float(self.value > a) if strict else float(self.value >= a)
        if self.kind == "exponential":
            return math.exp(-self.rate * max(a, 0.0))
        return max(a, 1.0) ** (1.0 - self.beta)

    def upper_first(self, a):
        """``E[T 1{T >= a}]``."""
        if self.kind == "constant":
            return self.value if self.value >= a else 0.0
        if math.isinf(a):
            return 0.0
        if self.kind == "exponential":
            a = max(a, 0.0)
            r = self.rate
            return (a + 1.0 / r) * math.exp(-r * a)
        b = self.beta
        if b <= 2:
            return math.inf
        return (b - 1.0) / (b - 2.0) * max(a, 1.0) ** (2.0 - b)

    def lower_power(self, p, a):
        """``E[T**p 1{T < a}]`` for ``p > -1``."""
        if self.kind == "constant":
            return self.value ** p if self.value < a else 0.0
        if self.kind == "exponential":
            if a <= 0:
                return 0.0
            r = self.rate
            if math.isinf(a):
                return math.gamma(p + 1.0) / r ** p
            return math.exp(math.lgamma(p + 1.0) - p * math.log(r)) * special.gammainc(p + 1.0, r * a)
        if a <= 1.0:
            return 0.0
        b = self.beta
        k = p - b + 1.0
        if math.isinf(a):
            return (b - 1.0) / -k if k < 0 else math.inf
        if k == 0.0:
            return (b - 1.0) * math.log(a)
        return (b - 1.0) * (a ** k - 1.0) / k

    def sample(self, gen, size):
        u = 1.0 - gen.random(size)  # in (0, 1]
        if self.kind == "exponential":
            return -np.log(u) / self.rate
        if self.kind == "pareto":
            return np.power(u, -1.0 / (self.beta - 1.0))
        return np.full(size, self.value)

    def to_dict(self):
        if self.kind == "exponential":
            return {"kind": "exponential", "rate": self.rate}
        if self.kind == "pareto":
            return {"kind": "pareto", "beta": self.beta}
        return {"kind": "constant", "value": self.value}

    @classmethod
    def from_dict(cls, d):
        kind = d.get("kind")
        if kind == "exponential":
            return cls.exponential(d.get("rate", 1.0))
        if kind == "pareto":
            if "beta" not in d:
                raise InputError("pareto latent requires 'beta'", field="beta")
            return cls.pareto(d["beta"])
        if kind == "constant":
            return cls.constant(d.get("value", 1.0))
        raise InputError(f"unknown latent kind {kind!r}", field="kind")


def _frozen(a):
    a = np.array(a, dtype=float, order="C", copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SampleCloud:
    """Fixed sample of holdings ``x`` (N x M), capitals ``c`` and a uniform column for shocks.

    ``losses`` holds explicit losses when the cloud was built from data; otherwise
    losses are generated from a :class:`ShockSpec` using ``shock_uniforms`` so that
    atomic shocks with larger ``p`` hit a superset of samples.
    """

    x: np.ndarray
    c: np.ndarray
    shock_uniforms: np.ndarray
    losses: np.ndarray | None = None

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        c = np.asarray(self.c, dtype=float).ravel()
        if c.shape[0] != x.shape[0] or np.asarray(self.shock_uniforms).shape[0] != x.shape[0]:
            raise InputError("sample cloud arrays must share their first dimension")
        if np.any(~(c > 0)):
            raise InputError("sample capitals must be positive", row=int(np.flatnonzero(~(c > 0))[0]))
        if np.any(x < 0):
            raise InputError("sample holdings must be non-negative")
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "c", _frozen(c))
        object.__setattr__(self, "shock_uniforms", _frozen(self.shock_uniforms))
        if self.losses is not None:
            object.__setattr__(self, "losses", _frozen(np.asarray(self.losses, dtype=float).ravel()))

    @property
    def size(self):
        return self.x.shape[0]

    def losses_for(self, shock):
        """Loss vector for ``shock`` (explicit losses when ``shock`` is ``None``)."""
        if shock is None:
            return self.losses if self.losses is not None else np.zeros(self.size)
        if shock.kind == "atomic":
            return np.where(self.shock_uniforms < shock.p, shock.multiple * self.c, 0.0)
        if shock.kind == "proportional":
            return shock.delta * self.c
        return np.zeros(self.size)


@dataclass(frozen=True, eq=False)
class LimitSystem:
    """Joint law of ``(X, C, L)`` with sales function and price impact.

    Build with :meth:`catalog` (scalar latent driver) or :meth:`from_samples` /
    :meth:`from_finite` (fixed sample). ``strategy`` selects how expectations are
    computed: ``closed_form``, ``quadrature``, ``monte_carlo`` or ``auto`` (the first
    of these that applies).
    """

    sales: SalesFunction
    impact: PriceImpact
    shock: ShockSpec | None = None
    latent: Latent | None = None
    weights: tuple = ()
    type_probs: tuple = ()
    capital: CapitalRule = field(default_factory=CapitalRule)
    cloud: SampleCloud | None = None
    holdings_scale: float = 1.0
    strategy: str = "auto"
    mc_samples: int = DEFAULT_MC_SAMPLES
    seed: int = 0
    quad_rtol: float = 1e-10

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise InputError(f"unknown expectation strategy {self.strategy!r}")
        if (self.latent is None) == (self.cloud is None):
            raise InputError("a limit system needs exactly one of a latent driver or a sample cloud")
        if not 0 < self.holdings_scale <= 1:
            raise InputError("holdings scale must lie in (0, 1]")
        if self.latent is not None:
            w = np.atleast_2d(np.asarray(self.weights, dtype=float))
            if w.shape[1] != self.impact.M:
                raise InputError(f"holding weights have {w.shape[1]} assets, impact has {self.impact.M}")
            if np.any(w < 0) or np.any(w.sum(axis=1) <= 0):
                raise InputError("holding weights must be non-negative with a positive row sum")
            probs = np.asarray(self.type_probs if self.type_probs else [1.0] * w.shape[0], dtype=float)
            if probs.shape != (w.shape[0],) or np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
                raise InputError("type probabilities must be non-negative and sum to 1")
            object.__setattr__(self, "weights", tuple(map(tuple, w.tolist())))
            object.__setattr__(self, "type_probs", tuple(probs.tolist()))
            if self.latent.kind == "pareto" and self.latent.beta <= 2:
                raise DomainError("pareto holdings need beta > 2 for a finite mean")
            if self.strategy == "monte_carlo" and self.mc_samples < 1:
                raise InputError("monte carlo sample size must be positive")
        else:
            if self.cloud.x.shape[1] != self.impact.M:
                raise InputError("sample cloud and impact disagree on the asset count")
            if self.strategy in ("closed_form", "quadrature"):
                raise InputError(f"strategy {self.strategy!r} needs a latent driver")

    # -- constructors -------------------------------------------------------
    @classmethod
    def catalog(cls, latent, sales, impact, weights=None, type_probs=None, capital=None,
                shock=None, **kw):
        M = impact.M
        if weights is None:
            weights = [[1.0] * M]
        return cls(sales=sales, impact=impact, shock=shock or ShockSpec.none(), latent=latent,
                   weights=tuple(map(tuple, np.atleast_2d(weights).tolist())),
                   type_probs=tuple(type_probs) if type_probs is not None else (),
                   capital=capital or CapitalRule(), **kw)

    @classmethod
    def from_samples(cls, x, c, sales, impact, losses=None, shock=None, seed=0):
        gen = np.random.Generator(np.random.Philox(seed))
        x = np.atleast_2d(np.asarray(x, dtype=float))
        cloud = SampleCloud(x, c, gen.random(x.shape[0]), losses)
        if losses is None and shock is None:
            shock = ShockSpec.none()
        return cls(sales=sales, impact=impact, shock=shock, cloud=cloud,
                   strategy="monte_carlo", seed=seed)

    @classmethod
    def from_finite(cls, sys: FiniteSystem):
        """Empirical law of a finite system (losses kept exactly)."""
        return cls.from_samples(sys.holdings, sys.capitals, sys.sales, sys.impact,
                                losses=sys.losses)

    # -- variants -----------------------------------------------------------
    def with_shock(self, shock):
        return replace(self, shock=shock)

    def with_sales(self, sales):
        return replace(self, sales=sales)

    def with_strategy(self, strategy, **kw):
        return replace(self, strategy=strategy, **kw)

    def with_capital(self, capital):
        return replace(self, capital=capital)

    def reduced(self, eps):
        """Holdings scaled by ``1 - eps`` and sales capped at ``eps``; capital unchanged."""
        eps = float(eps)
        if not 0 < eps < 1:
            raise InputError("reduction parameter must lie in (0, 1)")
        return replace(self, sales=self.sales.capped(eps),
                       holdings_scale=self.holdings_scale * (1.0 - eps))

    # -- structure ----------------------------------------------------------
    @property
    def M(self):
        return self.impact.M

    @cached_property
    def _w(self):
        return np.asarray(self.weights, dtype=float)

    @cached_property
    def _type_alpha(self):
        """Per-type capital level: ``C = alpha_k * T**gamma``."""
        cap = self.capital
        if cap.asset_weights is not None:
            aw = np.asarray(cap.asset_weights, dtype=float)
            if aw.shape[0] != self.M:
                raise InputError("capital asset weights must match the asset count")
            return np.power(self._w @ aw, cap.gamma)
        return np.full(self._w.shape[0], cap.alpha)

    @property
    def capital_exponent(self):
        return 1.0 - self.capital.gamma

    def shock_components(self):
        return (self.shock or ShockSpec.none()).components()

    @property
    def shock_positive(self):
        if self.cloud is not None and self.shock is None:
            return bool(np.any(self.cloud.losses > 0))
        return (self.shock or ShockSpec.none()).positive_probability > 0

    @property
    def _mc(self):
        """Sample arrays ``(x, c, l)`` used by the Monte Carlo strategy (fixed per system)."""
        return self._mc_draw[:3]

    @property
    def _mc_weights(self):
        """Normalised sample weights (mean 1), or ``None`` for an unweighted sample."""
        return self._mc_draw[3]

    @cached_property
    def _mc_draw(self):
        if self.cloud is not None:
            x = self.cloud.x
            if self.holdings_scale != 1.0:
                x = x * self.holdings_scale
            return np.ascontiguousarray(x), self.cloud.c, self.cloud.losses_for(self.shock), None
        gen = np.random.Generator(np.random.Philox(self.seed))
        N = self.mc_samples
        wts = None
        if self.latent.kind == "pareto":
            # Heavy-tailed drivers are drawn from a Pareto law with half the tail
            # index and reweighted; plain sampling never reaches the holdings
            # sizes that decide whether small shocks spread.
            b1 = self.latent.beta - 1.0
            t = np.power(1.0 - gen.random(N), -2.0 / b1)
            wts = np.power(t, -0.5 * b1)
            wts /= wts.mean()
        else:
            t = self.latent.sample(gen, N)
        cum = np.cumsum(self.type_probs)
        kind = np.minimum(np.searchsorted(cum, gen.random(N), side="right"), len(cum) - 1)
        w = self._w * self.holdings_scale
        x = np.ascontiguousarray(w[kind] * t[:, None])
        c = self._type_alpha[kind] * np.power(t, self.capital.gamma)
        cloud = SampleCloud(x, c, gen.random(N))
        return x, c, cloud.losses_for(self.shock or ShockSpec.none()), wts

    def mean_holdings(self):
        """``E[X^m]`` per asset (scaled holdings)."""
        if self.cloud is not None:
            x, _, _ = self._mc
            return x.mean(axis=0)
        pi = np.asarray(self.type_probs)
        return self.holdings_scale * (pi @ self._w) * self.latent.mean()

    def mean_total_holdings(self):
        return float(np.sum(self.mean_holdings()))

    def cross_moment_over_capital(self):
        """Matrix ``E[X^m X^l / C]`` (entries may be ``inf``)."""
        s = self.holdings_scale
        if self.cloud is not None:
            x, c, _ = self._mc
            return (x / c[:, None]).T @ x / x.shape[0]
        mom = self.latent.moment(2.0 - self.capital.gamma)
        out = np.zeros((self.M, self.M))
        for k, pk in enumerate(self.type_probs):
            w = self._w[k] * s
            out += pk * np.outer(w, w) / self._type_alpha[k]
        with np.errstate(invalid="ignore"):
            return np.where(out > 0, out * mom, 0.0)

    def total_moment_ratio(self, nu):
        """``E[X^tot (X^tot / C)**(1/nu)]`` for the total holding."""
        s = self.holdings_scale
        if self.cloud is not None:
            x, c, _ = self._mc
            xt = x.sum(axis=1)
            return float(np.mean(xt * np.power(xt / c, 1.0 / nu)))
        mom = self.latent.moment(1.0 + (1.0 - self.capital.gamma) / nu)
        total = 0.0
        for k, pk in enumerate(self.type_probs):
            wt = s * self._w[k].sum()
            total += pk * wt * (wt / self._type_alpha[k]) ** (1.0 / nu)
        return total * mom

    # -- strategy resolution ------------------------------------------------
    def _closed_form_ok(self):
        lat = self.latent
        if lat is None:
            return False
        if lat.kind == "constant":
            return True
        e = self.capital_exponent
        if e == 0:
            return True
        if e < 0:
            return False
        code = self.sales._code
        for _, shift in self.shock_components():
            if shift >= 1:
                continue
            if code == 0:
                continue
            if code == 1 and shift == 0:
                continue
            return False
        return True

    @property
    def resolved_strategy(self):
        if self.strategy != "auto":
            if self.strategy == "closed_form" and not self._closed_form_ok():
                raise InputError("no closed form for this combination of sales function and law")
            return self.strategy
        if self.cloud is not None:
            return "monte_carlo"
        return "closed_form" if self._closed_form_ok() else "quadrature"

    # -- expectations -------------------------------------------------------
    def expected_sales(self, chi, left=False):
        """``E[X^m rho((L + X.h(chi)) / C)]`` for each asset ``m``."""
        chi = self._check_chi(chi)
        h = self.impact(chi)
        how = self.resolved_strategy
        if how == "monte_carlo":
            return self._mc_sales(h, left)
        return self._latent_sales(h, left, how)

    def f(self, chi, left=False):
        chi = self._check_chi(chi)
        return self.expected_sales(chi, left) - chi

    def default_probability(self, chi, strict=False):
        """``P(L + X.h(chi) >= C)`` (``>`` when ``strict``)."""
        chi = self._check_chi(chi)
        h = self.impact(chi)
        if self.resolved_strategy == "monte_carlo":
            x, c, ell = self._mc
            u = (ell + _exposure(x, h)) / c
            hit = u > 1.0 if strict else u >= 1.0
            wts = self._mc_weights
            if wts is None:
                return float(np.count_nonzero(hit)) / x.shape[0]
            return float(np.sum(wts[hit])) / x.shape[0]
        lat = self.latent
        e = self.capital_exponent
        total = 0.0
        for k, pk in enumerate(self.type_probs):
            b = self.holdings_scale * float(self._w[k] @ h) / self._type_alpha[k]
            for pj, shift in self.shock_components():
                total += pk * pj * _latent_hit(lat, shift, b, e, strict)
        return total

    def _check_chi(self, chi):
        chi = np.asarray(chi, dtype=float).reshape(-1)
        if chi.shape[0] == 1 and self.M > 1:
            chi = np.full(self.M, chi[0])
        if chi.shape[0] != self.M:
            raise InputError(f"chi must have {self.M} components")
        if np.any(chi < 0) or np.any(np.isnan(chi)):
            raise InputError("chi must be non-negative")
        return chi

    def _mc_sales(self, h, left):
        x, c, ell = self._mc
        u = (ell + _exposure(x, h)) / c
        r = self.sales._eval(u, left)
        N = x.shape[0]
        if self._mc_weights is not None:
            r = r * self._mc_weights
        return np.array([np.sum(x[:, m] * r) / N for m in range(self.M)])

    def _latent_sales(self, h, left, how):
        lat = self.latent
        e = self.capital_exponent
        out = np.zeros(self.M)
        for k, pk in enumerate(self.type_probs):
            w = self._w[k] * self.holdings_scale
            b = float(w @ h) / self._type_alpha[k]
            acc = 0.0
            for pj, shift in self.shock_components():
                acc += pj * self._first_moment(shift, b, e, left, how)
            out += pk * w * acc
        return out

    def _first_moment(self, shift, b, e, left, how):
        """``E[T rho(shift + b T**e)]``."""
        rho, lat = self.sales, self.latent
        if lat.kind == "constant":
            v = lat.value
            return v * float(rho._eval(shift + b * v ** e, left))
        if b == 0.0 or e == 0.0:
            return lat.mean() * float(rho._eval(shift + b, left))
        if shift >= 1.0:
            return lat.mean() * rho.value_at_one
        if how == "closed_form" and e > 0:
            code = rho._code
            top_val = rho.value_at_one
            if code == 0:
                return top_val * lat.upper_first(((1.0 - shift) / b) ** (1.0 / e))
            if code == 1 and shift == 0.0:
                q = rho.q
                top = top_val ** (1.0 / q)
                a = (top / b) ** (1.0 / e)
                body = lat.lower_power(1.0 + e * q, a)
                return (b ** q * body if body > 0 else 0.0) + top_val * lat.upper_first(a)
        return self._quadrature(shift, b, e)

    def _quadrature(self, shift, b, e):
        rho, lat = self.sales, self.latent
        lo, hi = lat.support
        # abscissae in T where the relative loss crosses a kink of rho
        cuts = []
        for k in rho.kink_points():
            if k > shift:
                cuts.append(((k - shift) / b) ** (1.0 / e))
        pts = sorted({lo, hi, *[t for t in cuts if lo < t < hi]})
        total, err_tot = 0.0, 0.0
        top_val = rho.value_at_one

        def integrand(t):
            return t * float(rho.right_value(shift + b * t ** e)) * float(lat.pdf(t))

        for a, z in zip(pts, pts[1:]):
            mid = a + 1.0 if math.isinf(z) else 0.5 * (a + z)
            if shift + b * mid ** e >= 1.0 and e > 0:
                total += top_val * (lat.upper_first(a) - lat.upper_first(z))
                continue
            val, err, *rest = integrate.quad(integrand, a, z, epsabs=0.0, epsrel=self.quad_rtol,
                                             limit=400, full_output=1)
            total += val
            err_tot += err
        if err_tot > max(self.quad_rtol * abs(total), 1e-14):
            raise IntegrationFailure(f"quadrature error {err_tot:.3g} exceeds requested precision")
        return total

    # -- serialization ------------------------------------------------------
    def to_dict(self):
        d = {"sales": self.sales.to_dict(), "impact": self.impact.to_dict(),
             "strategy": self.strategy}
        if self.latent is not None:
            d.update(latent=self.latent.to_dict(), weights=[list(r) for r in self.weights],
                     type_probs=list(self.type_probs), capital=self.capital.to_dict())
        if self.shock is not None:
            d["shock"] = self.shock.to_dict()
        if self.strategy == "monte_carlo":
            d.update(mc_samples=self.mc_samples, seed=self.seed)
        return d

    @classmethod
    def from_dict(cls, d):
        sales = SalesFunction.from_dict(d.get("sales", {"kind": "indicator"}))
        weights = d.get("weights")
        M = len(weights[0]) if weights else None
        impact = PriceImpact.from_dict(d.get("impact", {"kind": "linear"}), M=M or 1)
        if "latent" not in d:
            raise InputError("limit system needs a 'latent' driver", field="latent")
        return cls.catalog(
            Latent.from_dict(d["latent"]), sales, impact, weights=weights,
            type_probs=d.get("type_probs"),
            capital=CapitalRule.from_dict(d.get("capital", {})),
            shock=ShockSpec.from_dict(d.get("shock", {"kind": "none"})),
            strategy=d.get("strategy", "auto"),
            mc_samples=int(d.get("mc_samples", DEFAULT_MC_SAMPLES)),
            seed=int(d.get("seed", 0)),
        )


def _exposure(x, h):
    # column accumulation: each sample's exposure is monotone in h
    acc = x[:, 0] * h[0]
    for m in range(1, x.shape[1]):
        acc = acc + x[:, m] * h[m]
    return acc


def _latent_hit(lat, shift, b, e, strict):
    """``P(shift + b T**e >= 1)`` (``>`` when ``strict``)."""
    if shift > 1.0 or (shift == 1.0 and not strict):
        return 1.0
    if shift == 1.0:
        return 1.0 if b > 0 else 0.0
    if b <= 0.0:
        return 0.0
    with np.errstate(over="ignore"):
        r = np.float64(1.0 - shift) / b  # inf for tiny b: nothing is hit
    if lat.kind == "constant" or e == 0:
        v = lat.value if lat.kind == "constant" else 1.0
        lhs = b * v ** e
        return float(lhs > 1.0 - shift) if strict else float(lhs >= 1.0 - shift)
    with np.errstate(over="ignore"):
        a = r ** (1.0 / e)
    if e > 0:
        return lat.prob_ge(a, strict)
    return 1.0 - lat.prob_ge(a, not strict)
