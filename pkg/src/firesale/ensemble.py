"""Sampling finite systems from a law and running replicated studies.

Every replication draws from its own Philox stream keyed by
``child_seed(master, sweep_index, replication)``, so results do not depend on
execution order or on the number of worker processes.
"""
from __future__ import annotations

import csv
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from .cascade import DEFAULT_MAX_ROUNDS, DEFAULT_TOL, run_auxiliary, run_fire_sales
from .errors import DomainError, InputError
from .limit import Latent
from .model import CapitalRule, FiniteSystem, PriceImpact, SalesFunction, ShockSpec
from .resilience import critical_capital

__all__ = [
    "child_seed",
    "make_generator",
    "WeightedSplit",
    "SubsystemGrid",
    "InitialDefaultFraction",
    "EnsembleSpec",
    "sample_system",
    "Diversification",
    "Similarity",
    "StudyRow",
    "StudyResult",
    "run_study",
    "realize_pair",
    "WORKERS_ENV",
    "study_calibration",
    "default_workers",
]

WORKERS_ENV = "FIRESALE_WORKERS"

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix64(z):
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & _MASK
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK
    return z ^ (z >> 31)


def child_seed(master, sweep_index, replication_index):
    """Seed for one replication.

    ``(sweep << 32) | replication`` is a distinct counter for every pair below
    ``2**32``; adding it times an odd constant to the master and applying the
    SplitMix64 finalizer (a bijection of 64-bit words) keeps the map injective.
    """
    if not (0 <= sweep_index < 2**32 and 0 <= replication_index < 2**32):
        raise ValueError("sweep and replication indices must lie in [0, 2**32)")
    counter = (sweep_index << 32) | replication_index
    return _mix64((int(master) + _GOLDEN * (counter + 1)) & _MASK)


def make_generator(seed):
    return np.random.Generator(np.random.Philox(key=int(seed) & _MASK))


@dataclass(frozen=True)
class WeightedSplit:
    """Each institution splits its total holding over all assets with fixed weights."""

    weights: tuple

    def __post_init__(self):
        w = tuple(float(v) for v in self.weights)
        if not w or any(v < 0 for v in w) or sum(w) <= 0:
            raise InputError("split weights must be non-negative with a positive sum")
        object.__setattr__(self, "weights", w)

    @property
    def M(self):
        return len(self.weights)


@dataclass(frozen=True)
class SubsystemGrid:
    """``S`` equal subsystems; each institution spreads evenly over the ``J`` joint
    assets and the ``D`` assets of its own subsystem. Joint assets come first."""

    S: int
    D: int
    J: int

    def __post_init__(self):
        if self.S < 1 or self.D < 0 or self.J < 0 or self.D + self.J == 0:
            raise InputError("subsystem grid needs S >= 1, D, J >= 0 and D + J > 0")

    @property
    def M(self):
        return self.S * self.D + self.J

    @property
    def delta(self):
        return self.D + self.J

    @property
    def sigma(self):
        return self.J / (self.D + self.J)


@dataclass(frozen=True)
class InitialDefaultFraction:
    """``round(p n)`` institutions start with loss equal to capital."""

    p: float
    stratified: bool = True

    def __post_init__(self):
        if not 0 <= self.p <= 1:
            raise InputError("initial default fraction must lie in [0, 1]")


@dataclass(frozen=True)
class EnsembleSpec:
    n: int
    structure: WeightedSplit | SubsystemGrid
    holdings: Latent
    capital: CapitalRule
    shock: ShockSpec | InitialDefaultFraction
    sales: SalesFunction = field(default_factory=SalesFunction.indicator)
    impact_kind: str = "linear"
    impact_params: tuple = ()
    seed: int = 0
    pad: bool = False

    def __post_init__(self):
        if self.n < 1:
            raise InputError("system size must be positive")
        if self.holdings.kind == "pareto":
            if self.holdings.beta <= 1:
                raise DomainError("pareto tail exponent must exceed 1 for a finite mean")
            if self.holdings.beta <= 2:
                warnings.warn("pareto tail exponent <= 2: sampling works but limit results do not apply",
                              stacklevel=3)
        if isinstance(self.structure, SubsystemGrid) and self.n % self.structure.S:
            if not self.pad:
                raise InputError(f"n={self.n} is not divisible by S={self.structure.S}")
            S = self.structure.S
            object.__setattr__(self, "n", self.n + (-self.n) % S)

    @property
    def M(self):
        return self.structure.M

    def impact(self):
        return PriceImpact.uniform(self.impact_kind, self.M, **dict(self.impact_params))

    def with_structure(self, structure):
        return replace(self, structure=structure)


def _holdings(spec, totals):
    st = spec.structure
    n = spec.n
    if isinstance(st, WeightedSplit):
        w = np.asarray(st.weights) / sum(st.weights)
        return totals[:, None] * w[None, :]
    x = np.zeros((n, st.M))
    share = totals / st.delta
    block = n // st.S
    if st.J:
        x[:, : st.J] = share[:, None]
    for s in range(st.S):
        lo, hi = s * block, (s + 1) * block
        c0 = st.J + s * st.D
        x[lo:hi, c0: c0 + st.D] = share[lo:hi, None]
    return x


def _initial_defaults(spec, gen):
    n = spec.n
    sh = spec.shock
    k = int(round(sh.p * n))
    if isinstance(spec.structure, SubsystemGrid) and sh.stratified:
        S = spec.structure.S
        block = n // S
        counts = [k // S + (1 if s < k % S else 0) for s in range(S)]
        picks = [s * block + gen.choice(block, size=counts[s], replace=False) for s in range(S)]
        return np.sort(np.concatenate(picks)) if picks else np.zeros(0, dtype=int)
    return np.sort(gen.choice(n, size=k, replace=False))


def sample_system(spec: EnsembleSpec, seed=None):
    """Draw one finite system; a pure function of ``spec`` and ``seed``."""
    gen = make_generator(spec.seed if seed is None else seed)
    totals = spec.holdings.sample(gen, spec.n)
    x = _holdings(spec, totals)
    c = spec.capital.capital(x)
    if isinstance(spec.shock, InitialDefaultFraction):
        ell = np.zeros(spec.n)
        idx = _initial_defaults(spec, gen)
        ell[idx] = c[idx]
    else:
        u = gen.random(spec.n)
        sh = spec.shock
        if sh.kind == "atomic":
            ell = np.where(u < sh.p, sh.multiple * c, 0.0)
        elif sh.kind == "proportional":
            ell = sh.delta * c
        else:
            ell = np.zeros(spec.n)
    return FiniteSystem(x, c, ell, spec.sales, spec.impact())


def realize_pair(delta, sigma):
    """Integer ``(D, J)`` with ``D + J = delta`` and ``J / delta`` nearest ``sigma``; ties take the smaller J."""
    delta = int(delta)
    if delta < 1:
        raise InputError("diversification must be a positive integer")
    t = Fraction(sigma).limit_denominator(10**9) * delta
    J = math.floor(t)
    if t - J > Fraction(1, 2):
        J += 1
    return delta - J, J


@dataclass(frozen=True)
class Diversification:
    """Vary ``delta = D + J`` at fixed similarity ``sigma``."""

    deltas: tuple = tuple(range(2, 41, 2))
    sigma: float = 0.5
    name = "diversification"

    def points(self):
        return [(float(d), realize_pair(d, self.sigma)) for d in self.deltas]


@dataclass(frozen=True)
class Similarity:
    """Vary ``sigma = J / delta`` at fixed ``delta``."""

    sigmas: tuple = tuple(j / 20 for j in range(21))
    delta: int = 20
    name = "similarity"

    def points(self):
        return [(float(s), realize_pair(self.delta, s)) for s in self.sigmas]


@dataclass
class StudyRow:
    sweep_param: float
    realized_sigma: float
    replication: int
    seed: int
    default_fraction: float
    sold: np.ndarray
    rounds: int
    converged: bool


def _run_one(args):
    spec, sweep_param, sweep_index, D, J, rep, master, process, tol, max_rounds = args
    st = spec.structure
    if isinstance(st, SubsystemGrid):
        spec = spec.with_structure(SubsystemGrid(st.S, D, J))
    seed = child_seed(master, sweep_index, rep)
    sys = sample_system(spec, seed)
    run = run_fire_sales if process == "real" else run_auxiliary
    res = run(sys, tol=tol, max_rounds=max_rounds)
    return StudyRow(sweep_param, J / (D + J), rep, seed, res.default_fraction,
                    res.sold_per_n, res.rounds, res.converged)


def _run_chunk(tasks):
    return [_run_one(t) for t in tasks]


@dataclass
class StudyResult:
    sweep: str
    process: str
    rows: list
    replications: int
    theoretical: dict = field(default_factory=dict)

    def summary(self):
        """``(sweep_param, median, q25, q75, n_excluded)`` over converged rows."""
        out = []
        params = sorted({r.sweep_param for r in self.rows})
        for p in params:
            vals = np.array([r.default_fraction for r in self.rows if r.sweep_param == p and r.converged])
            excl = sum(1 for r in self.rows if r.sweep_param == p and not r.converged)
            if vals.size:
                q25, med, q75 = np.percentile(vals, [25, 50, 75])
            else:
                q25 = med = q75 = math.nan
            out.append((p, float(med), float(q25), float(q75), excl))
        return out

    def write_rows(self, path):
        from .formats import fmt

        M = max((len(r.sold) for r in self.rows), default=0)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sweep_param", "realized_sigma", "replication", "seed", "default_fraction"]
                       + [f"sold_{m + 1}" for m in range(M)] + ["rounds", "converged"])
            for r in self.rows:
                sold = [fmt(v) for v in r.sold] + [""] * (M - len(r.sold))
                w.writerow([fmt(r.sweep_param), fmt(r.realized_sigma), r.replication, r.seed,
                            fmt(r.default_fraction)] + sold + [r.rounds, str(bool(r.converged)).lower()])

    def write_summary(self, path):
        from .formats import fmt

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sweep_param", "median", "q25", "q75", "n_excluded"])
            for p, med, q25, q75, excl in self.summary():
                w.writerow([fmt(p), fmt(med), fmt(q25), fmt(q75), excl])

    def write_plot_data(self, path):
        from .formats import fmt

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "theoretical", "median", "q25", "q75"])
            for p, med, q25, q75, _ in self.summary():
                w.writerow([fmt(p), fmt(self.theoretical.get(p, math.nan)), fmt(med), fmt(q25), fmt(q75)])


def _theoretical(spec, points):
    """Asymptotic default fraction: 1 where the critical capital level is at least the
    capital held, otherwise just the initial defaults."""
    st = spec.structure
    sh = spec.shock
    base = sh.p if isinstance(sh, InitialDefaultFraction) else 0.0
    if not isinstance(st, SubsystemGrid) or spec.holdings.kind != "pareto" or spec.capital.gamma != 0:
        return {}
    cap = Fraction.from_float(spec.capital.alpha)
    out = {}
    for p, (D, J) in points:
        ac = critical_capital({"S": st.S, "D": D, "J": J}, spec.holdings.beta)["alpha_c"]
        out[p] = 1.0 if Fraction.from_float(ac) >= cap else base
    return out


def default_workers():
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "") or os.cpu_count() or 1))
    except ValueError:
        return 1


def run_study(spec: EnsembleSpec, sweep, replications, process="real", master_seed=None,
              tol=DEFAULT_TOL, max_rounds=DEFAULT_MAX_ROUNDS, workers=None):
    """Replicate ``spec`` over the sweep points; returns a :class:`StudyResult`.

    ``process`` is ``"real"`` or ``"aux"``. The result is identical for any
    ``workers`` value.
    """
    if replications < 1:
        raise InputError("empty study: replications must be at least 1")
    if process not in ("real", "aux"):
        raise InputError("process must be 'real' or 'aux'")
    if isinstance(sweep, (Diversification, Similarity)) and not isinstance(spec.structure, SubsystemGrid):
        raise InputError("diversification and similarity sweeps need a subsystem grid structure")
    master = spec.seed if master_seed is None else master_seed
    points = sweep.points()
    tasks = [(spec, p, i, D, J, r, master, process, tol, max_rounds)
             for i, (p, (D, J)) in enumerate(points) for r in range(replications)]
    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1 or len(tasks) < 2:
        rows = _run_chunk(tasks)
    else:
        size = max(1, len(tasks) // (4 * workers))
        chunks = [tasks[i: i + size] for i in range(0, len(tasks), size)]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = [row for part in ex.map(_run_chunk, chunks) for row in part]
    rows.sort(key=lambda r: (r.sweep_param, r.replication))
    return StudyResult(sweep.name, process, rows, replications, _theoretical(spec, points))


def study_calibration(n=10_000, seed=0, S=2, D=10, J=10, beta=3.0, p=0.01):
    """Study setup: Pareto total holdings, constant capital at the critical level of
    the ``(S, D, J)`` calibration point, indicator sales, ``h = 1 - exp(-chi)``."""
    ac = critical_capital({"S": S, "D": D, "J": J}, beta)["alpha_c"]
    return EnsembleSpec(n=n, structure=SubsystemGrid(S, D, J), holdings=Latent.pareto(beta),
                        capital=CapitalRule.constant(ac), shock=InitialDefaultFraction(p, True),
                        sales=SalesFunction.indicator(), impact_kind="exponential", seed=seed)
