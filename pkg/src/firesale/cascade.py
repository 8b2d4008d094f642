"""Round-by-round fire-sales and auxiliary processes on a finite system.

Real process, round ``k`` (``tau_1 = 0``):

* each institution's loss credits shares sold in earlier rounds at the price
  impact that prevailed when they were sold and marks the rest at ``h(tau_k / n)``;
* the cumulative sold fraction becomes ``rho(loss / c)``;
* ``tau_{k+1}`` is the total of sold shares.

The auxiliary process marks all holdings at the current impact:
``sigma_{k+1} = sum_i x_i rho((l_i + x_i . h(sigma_k / n)) / c_i)``.

Both kernels compute the exposure ``x . h`` with the same floating-point
operations. The auxiliary loss is ``l + x.h`` and the real loss is
``l + (x.h - correction)`` with ``0 <= correction <= x.h``; rounding is monotone,
so ``l <= real loss <= auxiliary loss`` and ``tau_k <= sigma_k`` hold exactly.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import kernels as _kernels
from .model import FiniteSystem

__all__ = [
    "CascadeResult",
    "CouplingReport",
    "FiniteFixedPoint",
    "run_fire_sales",
    "run_auxiliary",
    "verify_coupling",
    "smallest_fixed_point_finite",
    "DEFAULT_TOL",
    "DEFAULT_MAX_ROUNDS",
]

DEFAULT_TOL = 1e-12
DEFAULT_MAX_ROUNDS = 10**6


@dataclass
class CascadeResult:
    """Outcome of one run.

    ``trace`` (when recorded) lists ``(tau_k, h(tau_k / n))`` for ``k = 1..rounds+1``
    with raw share totals, not divided by ``n``.
    """

    process: str
    n: int
    sold_per_n: np.ndarray
    defaults: np.ndarray
    rounds: int
    converged: bool
    trace: list | None = None
    final_losses: np.ndarray | None = field(default=None, repr=False)

    @property
    def default_fraction(self):
        return len(self.defaults) / self.n

    @property
    def sold_totals(self):
        return self.sold_per_n * self.n

    def to_dict(self, max_defaults=1000):
        from .formats import num

        d = {
            "process": self.process,
            "n": self.n,
            "sold_per_n": [num(v) for v in self.sold_per_n],
            "default_fraction": num(self.default_fraction),
            "default_count": int(len(self.defaults)),
            "rounds": self.rounds,
            "converged": bool(self.converged),
        }
        if max_defaults:
            d["defaults"] = [int(i) for i in self.defaults[:max_defaults]]
            d["defaults_truncated"] = bool(len(self.defaults) > max_defaults)
        return d

    def write_trace(self, path):
        from .formats import fmt

        if self.trace is None:
            raise ValueError("run was executed without trace recording")
        M = len(self.sold_per_n)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["round"] + [f"tau_{m + 1}" for m in range(M)] + [f"h_{m + 1}" for m in range(M)])
            for k, (tau, h) in enumerate(self.trace, start=1):
                w.writerow([k] + [fmt(v) for v in tau] + [fmt(v) for v in h])


def _backend(name):
    return _kernels if name is None else _kernels.get_backend(name)


def _canonical(sys):
    """Rows sorted lexicographically by ``(x, c, l)``.

    Sums then run in an order that does not depend on how rows were supplied,
    which makes results exactly invariant under row permutations.
    """
    x, ell, c = sys.holdings, sys.losses, sys.capitals
    keys = [ell, c] + [x[:, m] for m in range(x.shape[1] - 1, -1, -1)]
    order = np.lexsort(keys)
    return order, np.ascontiguousarray(x[order]), ell[order], c[order]


def _restore(order, loss, c):
    out = np.empty_like(loss)
    out[order] = loss
    return out, np.sort(order[np.flatnonzero(loss >= c)])


def _converged(new, old, n, tol):
    diff = float(np.max(np.abs(new - old))) / n if new.size else 0.0
    return diff == 0.0 or diff < tol


def run_fire_sales(sys: FiniteSystem, tol=DEFAULT_TOL, max_rounds=DEFAULT_MAX_ROUNDS,
                   trace=False, backend=None):
    """Run the real fire-sales process until the sold totals stop moving."""
    if tol < 0:
        raise ValueError("tol must be non-negative")
    if max_rounds < 1:
        raise ValueError("max_rounds must be at least 1")
    kb = _backend(backend)
    order, x, ell, c = _canonical(sys)
    rho = sys.sales
    n, M = x.shape
    frac = np.zeros(n)
    realized = np.zeros(n)
    loss = np.empty(n)
    tau = np.zeros(M)
    nxt = np.empty(M)
    rec = [] if trace else None
    converged = False
    rounds = 0
    while rounds < max_rounds:
        h = np.ascontiguousarray(sys.impact(tau / n), dtype=float)
        if rec is not None:
            rec.append((tau.copy(), h))
        kb.real_round(x, ell, c, h, rho, frac, realized, loss)
        kb.sold_totals(x, frac, nxt)
        rounds += 1
        done = _converged(nxt, tau, n, tol)
        tau, nxt = nxt, tau
        if done:
            converged = True
            break
    # losses at the final impact level decide defaults
    h = np.ascontiguousarray(sys.impact(tau / n), dtype=float)
    if rec is not None:
        rec.append((tau.copy(), h))
    kb.real_round(x, ell, c, h, rho, frac.copy(), realized.copy(), loss)
    loss, defaults = _restore(order, loss, c)
    return CascadeResult("real", n, tau / n, defaults, rounds, converged, rec, loss)


def _aux_loop(sys, rho, tol, max_rounds, trace, kb):
    order, x, ell, c = _canonical(sys)
    n, M = x.shape
    frac = np.empty(n)
    sigma = np.zeros(M)
    nxt = np.empty(M)
    rec = [] if trace else None
    converged = False
    rounds = 0
    while rounds < max_rounds:
        h = np.ascontiguousarray(sys.impact(sigma / n), dtype=float)
        if rec is not None:
            rec.append((sigma.copy(), h))
        kb.aux_fractions(x, ell, c, h, rho, frac)
        kb.sold_totals(x, frac, nxt)
        rounds += 1
        done = _converged(nxt, sigma, n, tol)
        sigma, nxt = nxt, sigma
        if done:
            converged = True
            break
    return sigma, rounds, converged, rec, (order, x, ell, c)


def run_auxiliary(sys: FiniteSystem, tol=DEFAULT_TOL, max_rounds=DEFAULT_MAX_ROUNDS,
                  trace=False, backend=None):
    """Run the auxiliary process; defaults are ``{l + x . h(chi_n) >= c}``."""
    if tol < 0:
        raise ValueError("tol must be non-negative")
    if max_rounds < 1:
        raise ValueError("max_rounds must be at least 1")
    kb = _backend(backend)
    sigma, rounds, converged, rec, (order, x, ell, c) = _aux_loop(sys, sys.sales, tol, max_rounds, trace, kb)
    n = sys.n
    h = np.ascontiguousarray(sys.impact(sigma / n), dtype=float)
    if rec is not None:
        rec.append((sigma.copy(), h))
    xh = np.empty(n)
    kb.exposure(x, h, xh)
    loss, defaults = _restore(order, ell + xh, c)
    return CascadeResult("aux", n, sigma / n, defaults, rounds, converged, rec, loss)


@dataclass
class CouplingReport:
    """Per-round comparison of the two processes.

    ``margins[k] = sigma_{k+1} - tau_{k+1}``; row 0 is the common start and row
    ``k >= 1`` is the state produced by round ``k``.
    """

    margins: np.ndarray
    passed: np.ndarray
    real: CascadeResult
    aux: CascadeResult

    @property
    def ok(self):
        return bool(np.all(self.passed)) and bool(np.all(self.real.sold_per_n <= self.aux.sold_per_n))

    @property
    def first_violation(self):
        """Round whose output first breaks ``tau <= sigma``, or ``None``."""
        bad = np.flatnonzero(~self.passed)
        return int(bad[0]) if bad.size else None


def verify_coupling(sys: FiniteSystem, rounds=None, tol=0.0, backend=None, real_runner=None):
    """Run both processes with traces and compare them round by round.

    Traces are aligned on ``tau_1 = sigma_1 = 0``; the shorter one is extended
    with its final value. ``rounds`` limits the comparison length.
    """
    runner = real_runner or run_fire_sales
    max_rounds = DEFAULT_MAX_ROUNDS if rounds is None else int(rounds)
    real = runner(sys, tol=tol, max_rounds=max_rounds, trace=True, backend=backend)
    aux = run_auxiliary(sys, tol=tol, max_rounds=max_rounds, trace=True, backend=backend)
    a = np.array([t for t, _ in real.trace])
    b = np.array([s for s, _ in aux.trace])
    K = max(len(a), len(b))
    if rounds is not None:
        K = min(K, int(rounds) + 1)
    a = np.vstack([a, np.repeat(a[-1:], max(0, K - len(a)), axis=0)])[:K]
    b = np.vstack([b, np.repeat(b[-1:], max(0, K - len(b)), axis=0)])[:K]
    margins = b - a
    passed = np.all(a <= b, axis=1)
    return CouplingReport(margins, passed, real, aux)


@dataclass
class FiniteFixedPoint:
    chi: np.ndarray
    chi_left: np.ndarray | None
    iterations: int
    converged: bool


def smallest_fixed_point_finite(sys: FiniteSystem, tol=DEFAULT_TOL, max_rounds=DEFAULT_MAX_ROUNDS,
                                backend=None):
    """Smallest root of ``mean_i x_i rho((l_i + x_i . h(chi)) / c_i) - chi`` by iteration from 0.

    For sales functions with jumps, ``chi_left`` is the smallest root with the
    left-continuous modification, a lower bound for ``chi``.
    """
    kb = _backend(backend)
    sigma, it, conv, _, _ = _aux_loop(sys, sys.sales, tol, max_rounds, False, kb)
    chi_left = None
    if not sys.sales.is_continuous:
        lsig, it2, conv2, _, _ = _aux_loop(sys, sys.sales.left_modification(), tol, max_rounds, False, kb)
        chi_left = lsig / sys.n
        it = max(it, it2)
        conv = conv and conv2
    return FiniteFixedPoint(sigma / sys.n, chi_left, it, conv)
