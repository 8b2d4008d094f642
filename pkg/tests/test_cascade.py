import csv
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from firesale import kernels
from firesale.cascade import (run_auxiliary, run_fire_sales, smallest_fixed_point_finite,
                              verify_coupling)
from firesale.model import FiniteSystem, PriceImpact, SalesFunction

from conftest import SALES_ZOO, random_system
from oracles import finite_residual, hand_fire_sales, smallest_sign_change

LIN1 = PriceImpact.uniform("linear", 1)
ZERO = SalesFunction.indicator().capped(0.0)


def test_two_bank_real(two_bank):
    res = run_fire_sales(two_bank, tol=0.0)
    assert res.sold_per_n[0] == 0.5
    assert list(res.defaults) == [0]
    assert res.default_fraction == 0.5
    assert res.rounds == 2 and res.converged
    # bank 2 marks its share at h(1/2) = 0.5 < 1.2
    assert res.final_losses[1] == 0.5


def test_zero_losses_never_start():
    rng = np.random.default_rng(0)
    for rho in SALES_ZOO:
        sys = random_system(rng, sales=rho)
        sys = sys.with_losses(np.zeros(sys.n))
        for run in (run_fire_sales, run_auxiliary):
            res = run(sys)
            assert np.all(res.sold_per_n == 0) and len(res.defaults) == 0


def test_single_bank_sells_at_pre_sale_price():
    sys = FiniteSystem([[1.0]], [1.0], [1.0], SalesFunction.indicator(), LIN1)
    res = run_fire_sales(sys, tol=0.0, trace=True)
    assert res.sold_per_n[0] == 1.0
    assert list(res.defaults) == [0]
    # the round-1 sale is credited at h(0) = 0, so the loss stays at 1
    assert res.final_losses[0] == 1.0


def test_two_bank_auxiliary(two_bank):
    res = run_auxiliary(two_bank, tol=0.0)
    assert res.sold_per_n[0] == 0.5
    assert list(res.defaults) == [0]
    assert res.final_losses[1] == 0.5


def test_auxiliary_zero_sales_function(two_bank):
    assert run_auxiliary(two_bank.with_sales(ZERO)).sold_per_n[0] == 0.0


def test_max_rounds_flags_nonconvergence(two_bank):
    res = run_fire_sales(two_bank, max_rounds=1)
    assert not res.converged and res.rounds == 1


def test_matches_literal_transcription():
    rng = np.random.default_rng(21)
    h = lambda y: min(y, 1.0)  # noqa: E731
    for _ in range(40):
        sys = random_system(rng, M=1, impact=LIN1)
        rho = lambda u, r=sys.sales: float(r(min(u, 1.0)))  # noqa: E731
        taus, losses = hand_fire_sales(list(sys.holdings[:, 0]), list(sys.capitals), list(sys.losses), rho, h)
        res = run_fire_sales(sys, tol=0.0, trace=True)
        got = [t[0] for t, _ in res.trace]
        m = min(len(got), len(taus))
        np.testing.assert_allclose(got[:m], taus[:m], rtol=1e-12, atol=1e-12)
        # the transcription sums realized sales in a different order; drift stays at rounding level
        assert res.sold_per_n[0] * sys.n == pytest.approx(taus[-1], rel=1e-9, abs=1e-12)


def test_trace_and_json(tmp_path, two_bank):
    res = run_fire_sales(two_bank, tol=0.0, trace=True)
    path = tmp_path / "t.csv"
    res.write_trace(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["round", "tau_1", "h_1"]
    assert rows[1:] == [["1", "0", "0"], ["2", "1", "0.5"], ["3", "1", "0.5"]]
    doc = res.to_dict()
    json.dumps(doc)
    assert doc["sold_per_n"] == [0.5] and doc["default_fraction"] == 0.5 and doc["converged"]
    with pytest.raises(ValueError):
        run_fire_sales(two_bank).write_trace(path)


# -- invariants ------------------------------------------------------------------

@given(seed=st.integers(0, 2**32 - 1))
def test_monotone_bounded_trajectories(seed):
    sys = random_system(np.random.default_rng(seed))
    bound = sys.holdings.sum(axis=0)
    for run in (run_fire_sales, run_auxiliary):
        res = run(sys, tol=0.0, trace=True)
        tr = np.array([t for t, _ in res.trace])
        assert np.all(np.diff(tr, axis=0) >= 0)
        assert np.all(tr <= bound * (1 + 1e-12))
        hs = np.array([h for _, h in res.trace])
        assert np.all(np.diff(hs, axis=0) >= 0)


@given(seed=st.integers(0, 2**32 - 1))
def test_coupling_exact(seed):
    sys = random_system(np.random.default_rng(seed))
    rep = verify_coupling(sys)
    assert rep.ok, rep.first_violation
    assert np.all(rep.real.sold_per_n <= rep.aux.sold_per_n)


@given(seed=st.integers(0, 2**32 - 1))
def test_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    sys = random_system(rng)
    perm = rng.permutation(sys.n)
    for run in (run_fire_sales, run_auxiliary):
        a = run(sys, tol=0.0)
        b = run(sys.permuted(perm), tol=0.0)
        assert np.array_equal(a.sold_per_n, b.sold_per_n)
        assert a.default_fraction == b.default_fraction
        assert np.array_equal(np.sort(perm[b.defaults]), a.defaults)


def test_coupling_on_hundred_seeded_systems():
    for seed in range(100):
        rep = verify_coupling(random_system(np.random.default_rng(10_000 + seed)))
        assert rep.ok, (seed, rep.first_violation)


@pytest.mark.parametrize("rho", [SalesFunction.indicator(), SalesFunction.power(1.0),
                                 SalesFunction.table([(0.3, 0.2), (0.6, 0.5), (0.9, 1.0)], mode="step"),
                                 SalesFunction.leverage_price(2.0, 5.0)])
def test_auxiliary_is_smallest_sign_change(rho):
    rng = np.random.default_rng(17)
    for _ in range(10):
        sys = random_system(rng, M=1, sales=rho, impact=LIN1)
        res = run_auxiliary(sys, tol=0.0)
        x, c, ell = sys.holdings[:, 0], sys.capitals, sys.losses
        resid = lambda chi: float(np.mean(x * rho(np.minimum((ell + x * min(chi, 1.0)) / c, 1.0)))) - chi  # noqa: E731
        # spot-check the vectorised residual against the scalar transcription
        assert resid(0.3) == pytest.approx(finite_residual(x, c, ell, lambda u: float(rho(u)), 0.3), abs=1e-12)
        upper = float(sys.holdings.sum()) / sys.n
        root = smallest_sign_change(resid, 0.0, upper, 1e-4 * upper, 1e-10)
        assert res.sold_per_n[0] == pytest.approx(root, abs=1e-8)


def _bumped(rng, sys, bump):
    i = int(rng.integers(sys.n))
    ell = sys.losses.copy()
    ell[i] += bump * sys.capitals[i]
    return sys.with_losses(ell)


@given(seed=st.integers(0, 2**32 - 1), bump=st.floats(0.0, 2.0))
def test_auxiliary_monotone_in_shock(seed, bump):
    rng = np.random.default_rng(seed)
    sys = random_system(rng)
    a, b = run_auxiliary(sys, tol=0.0), run_auxiliary(_bumped(rng, sys, bump), tol=0.0)
    assert np.all(b.sold_per_n >= a.sold_per_n)
    assert b.default_fraction >= a.default_fraction


@given(seed=st.integers(0, 2**32 - 1), bump=st.floats(0.0, 2.0))
def test_real_monotone_in_shock_all_or_nothing(seed, bump):
    rng = np.random.default_rng(seed)
    sys = random_system(rng, sales=SalesFunction.indicator())
    a, b = run_fire_sales(sys, tol=0.0), run_fire_sales(_bumped(rng, sys, bump), tol=0.0)
    assert np.all(b.sold_per_n >= a.sold_per_n)


def test_real_process_path_dependence_with_partial_sales():
    """With partial sales a larger shock can make an institution sell earlier at a
    better price, which lowers its later loss and its final sold fraction."""
    x = [[2.0], [4.0], [2.0]]
    c = [1.0, 3.0, 3.0]
    base = FiniteSystem(x, c, [0.0, 0.0, 0.25], SalesFunction.power(1.0), LIN1)
    hit = base.with_losses([0.0, 0.0, 0.5])
    assert run_fire_sales(hit, tol=0.0).sold_per_n[0] < run_fire_sales(base, tol=0.0).sold_per_n[0]
    # the auxiliary process has no memory and stays monotone
    assert run_auxiliary(hit, tol=0.0).sold_per_n[0] >= run_auxiliary(base, tol=0.0).sold_per_n[0]


# -- coupling check plumbing -------------------------------------------------------

def test_verify_coupling_two_bank(two_bank):
    rep = verify_coupling(two_bank)
    assert rep.ok and rep.first_violation is None
    assert np.all(rep.margins >= 0)


def test_verify_coupling_zero_sales(two_bank):
    rep = verify_coupling(two_bank.with_sales(ZERO), rounds=5)
    assert rep.ok
    assert np.all(rep.margins == 0)


def _corrupted_runner(sys, tol, max_rounds, trace, backend):
    """Real process with a broken loss formula: sales are credited twice."""
    kb = kernels.get_backend(backend) if backend else kernels

    class Broken:
        @staticmethod
        def real_round(x, ell, c, h, rho, frac, realized, loss):
            kb.real_round(x, ell * 1.0, c, h, rho, frac, realized, loss)
            xh = np.empty(x.shape[0])
            kb.exposure(x, h, xh)
            bad = np.maximum(rho((ell + 3.0 * xh) / c), frac)
            frac[:] = bad

    import firesale.cascade as cascade_mod

    saved = cascade_mod._backend
    cascade_mod._backend = lambda name: type("K", (), {"real_round": Broken.real_round,
                                                       "sold_totals": kb.sold_totals})
    try:
        return run_fire_sales(sys, tol=tol, max_rounds=max_rounds, trace=trace, backend=backend)
    finally:
        cascade_mod._backend = saved


def test_verify_coupling_detects_corrupted_engine():
    # one asset, three banks; the corrupted engine triples the marked-to-market loss
    sys = FiniteSystem([[1.0], [1.0], [1.0]], [0.5, 1.0, 2.0], [0.5, 0.0, 0.0],
                       SalesFunction.indicator(), LIN1)
    rep = verify_coupling(sys, real_runner=_corrupted_runner)
    assert not rep.ok
    # round 1 marks at h(0) = 0, so the broken formula first shows in round 2
    assert rep.first_violation == 2
    assert np.all(rep.passed[:2])


# -- finite smallest fixed point ------------------------------------------------------

def test_fixed_point_equals_auxiliary_for_continuous():
    rng = np.random.default_rng(4)
    for _ in range(20):
        sys = random_system(rng, sales=SalesFunction.power(2.0))
        fp = smallest_fixed_point_finite(sys)
        aux = run_auxiliary(sys)
        np.testing.assert_allclose(fp.chi, aux.sold_per_n, atol=1e-12)
        assert fp.chi_left is None


def test_fixed_point_two_bank_indicator(two_bank):
    fp = smallest_fixed_point_finite(two_bank, tol=0.0)
    assert fp.chi[0] == 0.5
    assert fp.converged


def test_left_variant_two_bank(two_bank):
    """With the left-continuous indicator, bank 1 sitting exactly at its threshold
    does not sell, so 0 is already a root and is the smallest one. 0.5 is a root too."""
    fp = smallest_fixed_point_finite(two_bank, tol=0.0)
    assert fp.chi_left[0] == 0.0
    lm = two_bank.sales.left_modification()
    x, c, ell = two_bank.holdings[:, 0], two_bank.capitals, two_bank.losses
    resid = np.mean(x * lm((ell + x * 0.5) / c)) - 0.5
    assert resid == 0.0
    assert fp.chi_left[0] <= fp.chi[0]
