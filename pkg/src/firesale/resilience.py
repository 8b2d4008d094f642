"""Resilience verdicts from closed-form criteria and from numeric shock probing,
plus capital-requirement formulas for power-law holdings."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import DomainError, InputError, PreconditionViolated
from .fixpoint import smallest_joint_root
from .limit import LimitSystem
from .model import CapitalRule, ShockSpec

__all__ = [
    "Verdict",
    "RESILIENT",
    "NON_RESILIENT",
    "INCONCLUSIVE",
    "BAND",
    "classify_linear_impact",
    "classify_power_forms",
    "classify_derivative_criterion",
    "probe_resilience",
    "classify",
    "capital_threshold",
    "critical_capital",
    "min_tail_exponent",
    "estimate_alpha_star",
    "DEFAULT_DELTA_GRID",
]

RESILIENT = "Resilient"
NON_RESILIENT = "NonResilient"
INCONCLUSIVE = "Inconclusive"

# relative half-width of the band around a threshold that yields Inconclusive
BAND = 1e-6
DEFAULT_DELTA_GRID = (1e-1, 1e-2, 1e-3, 1e-4)
RESILIENCE_FLOOR = 1e-3
NONRES_FLOOR = 1e-2


@dataclass
class Verdict:
    label: str
    rule: str
    certificate: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def definite(self):
        return self.label != INCONCLUSIVE

    def to_dict(self):
        return {"label": self.label, "rule": self.rule,
                "certificate": _jsonable(self.certificate), "notes": list(self.notes)}

    def summary(self):
        return f"{self.label} (rule: {self.rule})"


def _jsonable(v):
    from .formats import num

    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return num(float(v))
    return v


def _compare(value, threshold):
    """-1 below, +1 above, 0 inside the relative band around ``threshold``."""
    if math.isinf(value) and math.isinf(threshold) and (value > 0) == (threshold > 0):
        return 0
    width = BAND * abs(threshold) if threshold != 0 else BAND
    if abs(value - threshold) <= width:
        return 0
    return 1 if value > threshold else -1


def _prod(a, b):
    # 0 * inf counts as 0: a vanishing factor carries no information either way
    if a == 0 or b == 0:
        return 0.0
    return a * b


def classify_linear_impact(sys: LimitSystem):
    """Single asset, linear impact: compare ``E[X^2/C] rho'(0)`` with 1."""
    if sys.M != 1 or not sys.impact.is_linear:
        raise PreconditionViolated("needs one asset with linear price impact")
    m2 = float(sys.cross_moment_over_capital()[0, 0])
    d0 = sys.sales.derivative_at_zero
    value = _prod(m2, d0)
    cert = {"E[X^2/C]": m2, "rho'(0)": d0, "value": value, "threshold": 1.0, "band": BAND}
    notes = []
    if sys.cloud is not None:
        notes.append("moment is a sample estimate; divergence cannot be detected")
    if math.isinf(m2) and d0 == 0:
        notes.append("E[X^2/C] diverges while rho'(0) = 0")
        return Verdict(INCONCLUSIVE, "linear-impact-second-moment", cert, notes)
    side = _compare(value, 1.0)
    cert["boundary"] = side == 0
    label = {1: NON_RESILIENT, -1: RESILIENT, 0: INCONCLUSIVE}[side]
    return Verdict(label, "linear-impact-second-moment", cert, notes)


def classify_derivative_criterion(sys: LimitSystem):
    """Per asset ``E[X^m rho'(0) sum_l X^l dh^l/dchi^m(0) / C]``; any value above 1 means non-resilient."""
    if sys.M == 1 and sys.impact.is_linear:
        return classify_linear_impact(sys)
    d0 = sys.sales.derivative_at_zero
    J = sys.impact.jacobian_at_zero()
    if np.any(np.isnan(J)) or math.isnan(d0):
        raise PreconditionViolated("derivatives at 0 are not available")
    K = sys.cross_moment_over_capital()
    values = []
    for m in range(sys.M):
        s = 0.0
        for ell in range(sys.M):
            s += _prod(K[m, ell], J[ell, m])
        values.append(_prod(d0, s))
    sides = [_compare(v, 1.0) for v in values]
    cert = {"rho'(0)": d0, "values": values, "threshold": 1.0, "band": BAND}
    if any(s > 0 for s in sides):
        return Verdict(NON_RESILIENT, "derivative-criterion", cert)
    cert["boundary"] = any(s == 0 for s in sides)
    return Verdict(INCONCLUSIVE, "derivative-criterion", cert,
                   ["criterion values at most 1 do not establish resilience"])


def classify_power_forms(beta, nu, q, capital: CapitalRule, weights=None):
    """Pareto(``beta``) holdings, ``h = chi**nu``, ``rho = min(u**q, 1)`` (``q = inf``: indicator).

    ``weights`` splits the Pareto variable ``X`` over assets (default: one asset);
    capital is ``alpha * X**gamma`` with ``X`` the Pareto variable.
    """
    beta, nu, q = float(beta), float(nu), float(q)
    if beta <= 2:
        raise DomainError("tail exponent must exceed 2")
    if not (nu > 0 and q > 0):
        raise PreconditionViolated("exponents nu and q must be positive")
    w = np.asarray(weights if weights is not None else [1.0], dtype=float)
    gamma = capital.gamma
    if capital.asset_weights is not None:
        alpha = float(np.dot(capital.asset_weights, w)) ** gamma
    else:
        alpha = capital.alpha
    one_minus = 1.0 - nu * q if math.isfinite(q) else -math.inf
    gthr = 1.0 - nu * (beta - 2.0)
    cert = {"beta": beta, "nu": nu, "q": q, "gamma": gamma, "alpha": alpha,
            "1-nu*q": one_minus, "gamma_threshold": gthr, "band": BAND}
    if one_minus > 0:
        return Verdict(NON_RESILIENT, "nu-q-product", cert)
    if one_minus == 0:
        wt = float(w.sum())
        p = 1.0 + (1.0 - gamma) / nu
        mom = (beta - 1.0) / (beta - 1.0 - p) if p < beta - 1.0 else math.inf
        value = wt * (wt / alpha) ** (1.0 / nu) * mom
        cert.update({"E[X(X/C)^(1/nu)]": value, "threshold": 1.0})
        side = _compare(value, 1.0)
        cert["boundary"] = side == 0
        return Verdict({1: NON_RESILIENT, -1: RESILIENT, 0: INCONCLUSIVE}[side],
                       "power-moment-ratio", cert)
    alpha_star = (beta - 2.0) / (1.0 - gamma) if gamma < 1 else math.inf
    cert.update({"alpha_star": alpha_star, "threshold": 1.0 / nu})
    side = _compare(alpha_star, 1.0 / nu)
    cert["boundary"] = side == 0
    return Verdict({1: RESILIENT, -1: NON_RESILIENT, 0: INCONCLUSIVE}[side],
                   "power-capital-exponent", cert)


def estimate_alpha_star(sys: LimitSystem, alphas=None):
    """Supremum of ``a`` with ``E[X^{1+a} / C^a] < inf`` for the total holding.

    Exact for catalog latent laws. For sample clouds the finiteness of each
    moment is judged from how the truncated mean grows with the truncation level;
    the result carries a confidence note.
    """
    if sys.latent is not None:
        lat, g = sys.latent, sys.capital.gamma
        if lat.kind != "pareto" or g >= 1:
            return math.inf, "exact: all such moments are finite"
        return (lat.beta - 2.0) / (1.0 - g), "exact for pareto holdings with power capital"
    alphas = np.linspace(0.05, 4.0, 80) if alphas is None else np.asarray(alphas, dtype=float)
    x, c, _ = sys._mc
    xt = x.sum(axis=1)
    order = np.argsort(xt)
    xs, cs = xt[order], c[order]
    N = len(xs)
    levels = [int(N * (1 - 10.0 ** -k)) for k in range(1, int(math.log10(N)))]
    if len(levels) < 3:
        return math.nan, "sample too small to judge tail moments"
    est = alphas[-1]
    for a in alphas:
        terms = xs * np.power(xs / cs, a)
        partial = np.cumsum(terms)
        tm = [partial[k - 1] / N for k in levels] + [partial[-1] / N]
        # growth of the truncated mean in the far tail signals divergence
        growth = (tm[-1] - tm[-2]) / tm[-1]
        if growth > 0.05:
            est = a
            break
    return float(est), "empirical: truncated-tail growth test, low confidence near the estimate"


def probe_resilience(sys: LimitSystem, shocks=None, delta_grid=DEFAULT_DELTA_GRID,
                     tol=1e-13, max_iter=10**6):
    """Shock the system with ``E[L/C] = delta`` over a decreasing grid and watch ``chi_hat``.

    ``shocks`` maps ``delta`` to a :class:`ShockSpec` (default: ``P(L = C) = delta``).
    Resilient when the largest component at the smallest ``delta`` is below
    ``1e-3 E[X^tot]``; non-resilient when it stays at or above ``1e-2 E[X^tot]``
    over the whole grid.
    """
    grid = [float(d) for d in delta_grid]
    if not grid or any(b >= a for a, b in zip(grid, grid[1:])) or grid[-1] < 0:
        raise InputError("delta grid must be non-empty, strictly decreasing and non-negative")
    make = shocks or (lambda d: ShockSpec.atomic(d, 1.0))
    mean_tot = sys.mean_total_holdings()
    res_floor = RESILIENCE_FLOOR * mean_tot
    nonres_floor = NONRES_FLOOR * mean_tot
    curve = []
    converged = True
    for d in grid:
        shocked = sys.with_shock(make(d) if d > 0 else ShockSpec.none())
        r = smallest_joint_root(shocked, tol, max_iter)
        converged = converged and r.converged
        curve.append((d, r.chi))
    tops = [float(np.max(c)) for _, c in curve]
    cert = {"curve": [{"delta": d, "chi": c} for d, c in curve],
            "resilience_floor": res_floor, "nonres_floor": nonres_floor,
            "terminal_delta": grid[-1], "converged": converged,
            "strategy": sys.resolved_strategy}
    if tops[-1] < res_floor:
        label, rule = RESILIENT, "numeric-probe"
    elif min(tops) >= nonres_floor:
        label, rule = NON_RESILIENT, "numeric-probe"
        if not sys.sales.strictly_increasing_near_zero:
            rule = "weak"
    else:
        label, rule = INCONCLUSIVE, "numeric-probe"
    notes = [] if converged else ["some probe points hit the iteration cap"]
    return Verdict(label, rule, cert, notes)


def _power_form_params(sys):
    """``(beta, nu, q, weights)`` when the system fits the power-form theorem, else ``None``."""
    lat = sys.latent
    if lat is None or lat.kind != "pareto" or len(sys.weights) != 1:
        return None
    q = sys.sales.exponent
    nus = sys.impact.exponents()
    if q is None or any(v is None for v in nus) or len(set(nus)) != 1:
        return None
    if sys.sales.cap < 1.0:
        return None
    return lat.beta, nus[0], q, np.asarray(sys.weights[0]) * sys.holdings_scale


def classify(sys: LimitSystem, probe=False, delta_grid=DEFAULT_DELTA_GRID):
    """Closed-form rules first; the numeric probe runs when asked or when they are silent.

    A closed-form boundary case stays Inconclusive even if the probe is definite;
    the probe verdict is attached to the certificate either way.
    """
    params = _power_form_params(sys)
    if params is not None:
        beta, nu, q, w = params
        v = classify_power_forms(beta, nu, q, sys.capital, weights=w)
    elif sys.M == 1 and sys.impact.is_linear:
        v = classify_linear_impact(sys)
    else:
        v = classify_derivative_criterion(sys)
    if probe or not v.definite:
        p = probe_resilience(sys, delta_grid=delta_grid)
        v.certificate["probe"] = p.to_dict()
        if not v.definite and not v.certificate.get("boundary", False) and p.definite:
            return Verdict(p.label, p.rule, {**p.certificate, "closed_form": v.to_dict()}, p.notes)
    return v


def capital_threshold(beta, nu):
    """Capital exponent above which power-law holdings are resilient: ``1 - nu(beta - 2)``.

    Returns ``(gamma_threshold, note)``; negative values are clamped to 0.
    """
    beta, nu = float(beta), float(nu)
    if beta <= 2:
        raise DomainError("tail exponent must exceed 2")
    if nu <= 0:
        raise DomainError("impact exponent must be positive")
    g = 1.0 - nu * (beta - 2.0)
    if g < 0:
        return 0.0, f"raw threshold {g:.12g} < 0: any gamma >= 0 is resilient"
    return g, ""


def critical_capital(structure, beta):
    """Critical ``(gamma_c, alpha_c)`` for linear impact and indicator sales.

    ``structure`` is ``{"weights": [...]}`` or ``{"S", "D", "J"}`` or
    ``{"S", "delta", "sigma"}``. Arithmetic is exact (rational) before the final
    conversion, so calibration points come out as the nearest double.
    """
    b = Fraction(beta) if not isinstance(beta, float) else Fraction.from_float(beta)
    if b <= 2:
        raise DomainError("tail exponent must exceed 2")
    tail = (b - 1) / (b - 2)
    g = 3 - b
    out = {}
    if g < 0:
        out["note"] = "raw gamma_c < 0 clamped to 0"
        g = Fraction(0)
    if "weights" in structure:
        lam = [Fraction.from_float(float(v)) if isinstance(v, float) else Fraction(v)
               for v in structure["weights"]]
        if not lam or any(v <= 0 for v in lam) or abs(float(sum(lam)) - 1.0) > 1e-12:
            raise DomainError("weights must be positive and sum to 1")
        alpha = sum(v * v for v in lam) * tail
    else:
        try:
            S = int(structure["S"])
        except KeyError:
            raise DomainError("structure needs 'weights' or 'S'") from None
        if "D" in structure:
            D, J = int(structure["D"]), int(structure["J"])
            if D < 0 or J < 0 or D + J == 0:
                raise DomainError("D and J must be non-negative with D + J > 0")
            delta = Fraction(D + J)
            sigma = Fraction(J, D + J)
        else:
            delta = Fraction(structure["delta"])
            sigma = Fraction(structure["sigma"])
            if delta <= 0 or not 0 <= sigma <= 1:
                raise DomainError("need delta > 0 and 0 <= sigma <= 1")
        if S < 1:
            raise DomainError("S must be at least 1")
        alpha = (1 + (S - 1) * sigma) / (delta * S) * tail
        out.update(delta=float(delta), sigma=float(sigma))
    out.update(gamma_c=float(g), alpha_c=float(alpha))
    return out


def min_tail_exponent(betas):
    """Smallest tail exponent; the tail of the sum of the assets decays with it."""
    betas = [float(b) for b in betas]
    if not betas:
        raise DomainError("need at least one tail exponent")
    if any(b <= 2 for b in betas):
        raise DomainError("all tail exponents must exceed 2")
    bmin = min(betas)
    cert = {"betas": betas, "beta_min": bmin,
            "tail_of_sum": f"bounded above and below by multiples of x^(1-{bmin:.12g})"}
    return bmin, cert
