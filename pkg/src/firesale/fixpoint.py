"""Limiting functionals and their roots.

``f^m(chi) = E[X^m rho((L + X.h(chi)) / C)] - chi^m``. The smallest joint root
``chi_hat`` is the limit of the iteration ``chi <- chi + f(chi)`` started at 0.
``chi_star`` (supremum of the connected component of 0 in ``{f >= 0}``) is the
limit of the smallest fixed points of ``chi <- chi + f(chi) + eps`` as ``eps``
decreases to 0.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, LadderNotConverged
from .limit import LimitSystem

__all__ = [
    "eval_f",
    "eval_g",
    "RootResult",
    "Root",
    "ChiReport",
    "smallest_joint_root",
    "chi_star",
    "root_inventory",
    "epsilon_reduced_system",
    "default_ladder",
]

PICARD_TOL = 1e-13
LADDER_TOL = 1e-5
MAX_ITER = 10**6


def default_ladder():
    return [2.0 ** -k for k in range(3, 21)]


def eval_f(sys: LimitSystem, chi, left=False):
    """``f^m(chi)``; ``left`` uses the left-continuous sales function."""
    return sys.f(chi, left=left)


def eval_g(sys: LimitSystem, chi, strict=False):
    """Limiting default fraction ``P(L + X.h(chi) >= C)`` (``>`` when ``strict``)."""
    return sys.default_probability(chi, strict=strict)


def epsilon_reduced_system(sys: LimitSystem, eps):
    """Holdings ``(1 - eps) X`` and sales ``min(rho, eps)``; a lower-bound system."""
    return sys.reduced(eps)


@dataclass
class RootResult:
    chi: np.ndarray
    iterations: int
    converged: bool
    monotone: bool = True


def _picard(sys, start, eps, tol, max_iter, left):
    chi = np.array(start, dtype=float)
    monotone = True
    for it in range(1, max_iter + 1):
        nxt = sys.expected_sales(chi, left=left) + eps
        if np.any(nxt < chi):
            monotone = False
        step = float(np.max(np.abs(nxt - chi)))
        chi = nxt
        if step < tol or step == 0.0:
            return RootResult(chi, it, True, monotone)
    return RootResult(chi, max_iter, False, monotone)


def smallest_joint_root(sys: LimitSystem, tol=PICARD_TOL, max_iter=MAX_ITER, left=False):
    """Iterate ``chi <- E[X rho((L + X.h(chi)) / C)]`` from 0 until the sup-norm step is below ``tol``."""
    return _picard(sys, np.zeros(sys.M), 0.0, tol, max_iter, left)


@dataclass
class Root:
    root: float
    f_left_slope: float
    type: str


def _bisect(f, a, b, fa, xtol):
    while b - a > xtol:
        mid = 0.5 * (a + b)
        fm = f(mid)
        if fm == 0.0:
            return mid
        if (fm > 0) == (fa > 0):
            a, fa = mid, fm
        else:
            b = mid
    return 0.5 * (a + b)


def root_inventory(sys: LimitSystem, step=None, upper=None, xtol=1e-10, left=False):
    """All sign changes of ``f`` on ``[0, E[X]]`` (single-asset systems).

    Returns ``(roots, merged)``; roots closer than one grid step are merged and
    counted in ``merged``. Roots where ``f`` touches 0 without changing sign are
    invisible to the scan.
    """
    if sys.M != 1:
        raise InputError("root inventory is defined for single-asset systems")
    mean = float(sys.mean_holdings()[0])
    upper = mean if upper is None else upper
    step = 1e-3 * mean if step is None else step

    def f(c):
        return float(sys.f([c], left=left)[0])

    k = int(math.ceil(upper / step))
    grid = np.linspace(0.0, k * step, k + 1)
    vals = np.array([f(g) for g in grid])
    found = []
    for i in range(len(grid)):
        if vals[i] == 0.0:
            found.append(grid[i])
        elif i + 1 < len(grid) and vals[i + 1] != 0.0 and (vals[i] > 0) != (vals[i + 1] > 0):
            found.append(_bisect(f, grid[i], grid[i + 1], vals[i], xtol))
    roots, merged = [], 0
    for r in found:
        if roots and r - roots[-1] < step:
            merged += 1
            continue
        roots.append(r)
    out = []
    for r in roots:
        d = min(step * 1e-3, r) if r > 0 else 0.0
        if d > 0:
            slope = (f(r) - f(r - d)) / d
        else:
            slope = (f(step * 1e-3) - f(0.0)) / (step * 1e-3)
        out.append(Root(float(r), float(slope), "stable" if slope < 0 else "unstable"))
    return out, merged


@dataclass
class ChiReport:
    chi_hat: np.ndarray
    chi_star: np.ndarray
    epsilon_ladder: list
    roots_1d: list | None
    pathological_flag: bool
    g_at_chi_hat: float
    g_at_chi_star: float
    g_strict_at_chi_hat: float
    g_strict_at_chi_star: float
    chi_hat_left: np.ndarray | None = None
    converged: bool = True
    iterations: int = 0
    terminal_eps: float = 0.0
    ladder_tol: float = LADDER_TOL
    interior_root_free: bool | None = None
    interior_check: str = ""
    merged_roots: int = 0
    strategy: str = ""
    notes: list = field(default_factory=list)

    def to_dict(self):
        from .formats import num

        vec = lambda v: None if v is None else [num(x) for x in v]  # noqa: E731
        d = {
            "chi_hat": vec(self.chi_hat),
            "chi_star": vec(self.chi_star),
            "chi_hat_left": vec(self.chi_hat_left),
            "epsilon_ladder": [{"eps": num(e), "chi": vec(c)} for e, c in self.epsilon_ladder],
            "terminal_eps": num(self.terminal_eps),
            "ladder_tol": num(self.ladder_tol),
            "pathological_flag": self.pathological_flag,
            "g_at_chi_hat": num(self.g_at_chi_hat),
            "g_at_chi_star": num(self.g_at_chi_star),
            "g_strict_at_chi_hat": num(self.g_strict_at_chi_hat),
            "g_strict_at_chi_star": num(self.g_strict_at_chi_star),
            "converged": self.converged,
            "iterations": self.iterations,
            "interior_root_free": self.interior_root_free,
            "interior_check": self.interior_check,
            "strategy": self.strategy,
            "notes": list(self.notes),
        }
        if self.roots_1d is not None:
            d["roots_1d"] = [{"root": num(r.root), "f_left_slope": num(r.f_left_slope), "type": r.type}
                             for r in self.roots_1d]
            d["merged_roots"] = self.merged_roots
        return d

    def write_roots(self, path):
        from .formats import fmt

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["root", "f_left_slope", "type"])
            for r in self.roots_1d or []:
                w.writerow([fmt(r.root), fmt(r.f_left_slope), r.type])


def _interior_check(sys, chi_s, tol):
    """Look for joint roots strictly between 0 and ``chi_star`` along a few rays."""
    if not np.any(chi_s > 0):
        return True, "chi_star is 0"
    ts = np.linspace(0.01, 0.99, 99)
    rays = [chi_s]
    if sys.M > 1:
        rays += [np.where(np.arange(sys.M) == m, chi_s, 0.0) for m in range(sys.M)]
    for ray in rays:
        for t in ts:
            if np.max(np.abs(sys.f(t * ray))) < tol:
                return False, "ray scan"
    return True, "diagonal and coordinate rays" if sys.M > 1 else "ray scan"


def chi_star(sys: LimitSystem, ladder=None, tol=LADDER_TOL, picard_tol=PICARD_TOL,
             max_iter=MAX_ITER, inventory=True):
    """Compute ``chi_hat``, ``chi_star`` and diagnostics.

    Each ladder point is the smallest fixed point of ``chi <- E[X rho(.)] + eps``.
    Points are solved from the smallest ``eps`` upward, each warm-started at the
    previous one (a valid lower start since the fixed points increase with
    ``eps``). ``chi_star`` is the value at the smallest ``eps`` once the last two
    ladder values agree within ``tol``.
    """
    ladder = default_ladder() if ladder is None else [float(e) for e in ladder]
    if len(ladder) < 2 or any(b >= a for a, b in zip(ladder, ladder[1:])) or ladder[-1] <= 0:
        raise InputError("epsilon ladder must be strictly decreasing, positive, with at least two points")
    notes = []
    hat = smallest_joint_root(sys, picard_tol, max_iter)
    iterations = hat.iterations
    converged = hat.converged
    if not hat.monotone:
        notes.append("iteration path for chi_hat was not monotone")

    points = {}
    start = np.zeros(sys.M)
    for eps in reversed(ladder):
        res = _picard(sys, start, eps, picard_tol, max_iter, False)
        iterations += res.iterations
        converged = converged and res.converged
        points[eps] = res.chi
        start = res.chi
    pts = [(e, points[e]) for e in ladder]
    last, prev = pts[-1][1], pts[-2][1]
    if float(np.max(np.abs(last - prev))) >= tol:
        raise LadderNotConverged(
            f"ladder values at eps={ladder[-2]:.3g} and eps={ladder[-1]:.3g} differ by "
            f"{float(np.max(np.abs(last - prev))):.3g} (tol {tol:.3g})", ladder=pts)
    cs = last.copy()

    hat_left = None
    if not sys.sales.is_continuous:
        hl = smallest_joint_root(sys, picard_tol, max_iter, left=True)
        hat_left = hl.chi
        iterations += hl.iterations

    roots, merged = None, 0
    if inventory and sys.M == 1:
        roots, merged = root_inventory(sys)
    pathological = bool(sys.shock_positive and float(np.max(np.abs(cs - hat.chi))) > 10 * tol)
    free, how = _interior_check(sys, cs, picard_tol * 10) if sys.M > 1 else (None, "")
    if sys.M == 1 and roots is not None:
        inner = [r for r in roots if 0.0 < r.root < cs[0] - 10 * tol]
        if not sys.shock_positive:
            free, how = (not inner), "root inventory"
    return ChiReport(
        chi_hat=hat.chi, chi_star=cs, epsilon_ladder=pts, roots_1d=roots,
        pathological_flag=pathological,
        g_at_chi_hat=eval_g(sys, hat.chi), g_at_chi_star=eval_g(sys, cs),
        g_strict_at_chi_hat=eval_g(sys, hat.chi, strict=True),
        g_strict_at_chi_star=eval_g(sys, cs, strict=True),
        chi_hat_left=hat_left, converged=converged, iterations=iterations,
        terminal_eps=ladder[-1], ladder_tol=tol, interior_root_free=free,
        interior_check=how, merged_roots=merged, strategy=sys.resolved_strategy, notes=notes,
    )
