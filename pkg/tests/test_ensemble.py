import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from firesale.cascade import run_auxiliary, run_fire_sales
from firesale.ensemble import (Diversification, EnsembleSpec, InitialDefaultFraction, Similarity,
                               SubsystemGrid, WeightedSplit, child_seed, make_generator,
                               realize_pair, run_study, sample_system, study_calibration)
from firesale.errors import DomainError, InputError
from firesale.limit import Latent
from firesale.model import CapitalRule, ShockSpec


def small_spec(n=400, **kw):
    base = dict(n=n, structure=SubsystemGrid(2, 3, 3), holdings=Latent.pareto(3.0),
                capital=CapitalRule.constant(0.3), shock=InitialDefaultFraction(0.05, True),
                impact_kind="exponential", seed=11)
    base.update(kw)
    return EnsembleSpec(**base)


# -- seeds -----------------------------------------------------------------------------

def test_child_seed_basics():
    assert child_seed(5, 0, 0) != child_seed(5, 0, 1)
    assert child_seed(5, 0, 1) != child_seed(5, 1, 0)
    assert child_seed(5, 3, 7) == child_seed(5, 3, 7)
    assert 0 <= child_seed(2**64 - 1, 2**32 - 1, 2**32 - 1) < 2**64
    with pytest.raises(ValueError):
        child_seed(0, 2**32, 0)


def test_child_seed_no_collisions_over_a_million():
    seeds = {child_seed(123456789, s, r) for s in range(1000) for r in range(1000)}
    assert len(seeds) == 10**6


def test_child_seed_stable_values():
    # pinned so that stored studies stay reproducible across versions
    assert child_seed(0, 0, 0) == 0xE220A8397B1DCDAF
    assert make_generator(1).integers(0, 2**32) == make_generator(1).integers(0, 2**32)


# -- sampling ----------------------------------------------------------------------------

def test_pareto_mean_within_three_standard_errors():
    spec = small_spec(n=100_000, structure=WeightedSplit((1.0,)), shock=ShockSpec.none())
    x = sample_system(spec, seed=1).holdings[:, 0]
    se = x.std() / np.sqrt(len(x))
    assert abs(x.mean() - 2.0) <= 3 * se


def test_grid_structure_layout():
    spec = small_spec(n=4, structure=SubsystemGrid(2, 10, 10), shock=ShockSpec.none())
    sys = sample_system(spec, seed=3)
    x = sys.holdings
    assert x.shape == (4, 30)
    for i in range(4):
        nz = np.flatnonzero(x[i])
        own = 10 + 10 * (i // 2)
        assert list(nz) == list(range(10)) + list(range(own, own + 10))
        assert np.all(x[i, nz] == x[i, nz[0]])
        assert x[i].sum() == pytest.approx(20 * x[i, 0], rel=1e-15)


def test_capital_uses_row_sums():
    spec = small_spec(capital=CapitalRule(0.5, 0.7), shock=ShockSpec.none())
    sys = sample_system(spec, seed=4)
    np.testing.assert_array_equal(sys.capitals, 0.5 * np.power(sys.holdings.sum(axis=1), 0.7))
    assert np.all(sys.holdings >= 0)


def test_stratified_initial_defaults_exact():
    spec = small_spec(n=10_000, structure=SubsystemGrid(2, 10, 10), shock=InitialDefaultFraction(0.01, True))
    for seed in range(5):
        sys = sample_system(spec, seed=seed)
        hit = np.flatnonzero(sys.losses > 0)
        assert len(hit) == 100
        assert np.sum(hit < 5000) == 50 and np.sum(hit >= 5000) == 50
        np.testing.assert_array_equal(sys.losses[hit], sys.capitals[hit])


def test_unstratified_initial_defaults_count():
    spec = small_spec(n=1000, shock=InitialDefaultFraction(0.013, False))
    assert np.count_nonzero(sample_system(spec, seed=2).losses) == 13


def test_atomic_shock_sampling():
    spec = small_spec(n=20_000, structure=WeightedSplit((0.5, 0.5)), shock=ShockSpec.atomic(0.1))
    sys = sample_system(spec, seed=9)
    frac = np.mean(sys.losses > 0)
    assert abs(frac - 0.1) < 5 * np.sqrt(0.09 / 20_000)


def test_spec_validation():
    with pytest.raises(InputError):
        small_spec(n=5)
    assert small_spec(n=5, pad=True).n == 6
    with pytest.raises(InputError):
        small_spec(n=0)
    with pytest.raises(DomainError):
        small_spec(holdings=Latent.pareto(1.0))
    with pytest.warns(UserWarning):
        small_spec(holdings=Latent.pareto(1.8))


def test_sampling_is_deterministic():
    a, b = sample_system(small_spec(), seed=77), sample_system(small_spec(), seed=77)
    np.testing.assert_array_equal(a.holdings, b.holdings)
    np.testing.assert_array_equal(a.losses, b.losses)
    c = sample_system(small_spec(), seed=78)
    assert not np.array_equal(a.holdings, c.holdings)


# -- sweeps ------------------------------------------------------------------------------

def test_realize_pair():
    assert realize_pair(20, 0.5) == (10, 10)
    assert realize_pair(7, 0.5) == (4, 3)  # tie at 3.5 goes to the smaller J
    assert realize_pair(20, 0.33) == (13, 7)
    assert realize_pair(20, 1.0) == (0, 20)
    with pytest.raises(InputError):
        realize_pair(0, 0.5)


@given(delta=st.integers(1, 200), sigma=st.floats(0, 1))
def test_realize_pair_is_nearest(delta, sigma):
    D, J = realize_pair(delta, sigma)
    assert D + J == delta and D >= 0 and J >= 0
    assert all(abs(J / delta - sigma) <= abs(j / delta - sigma) + 1e-12 for j in range(delta + 1))


def test_default_sweeps():
    d = Diversification().points()
    assert [p for p, _ in d] == list(range(2, 41, 2))
    assert all(D == J for _, (D, J) in d)
    s = Similarity().points()
    assert len(s) == 21 and s[10] == (0.5, (10, 10))


# -- studies -------------------------------------------------------------------------------

def test_study_deterministic_and_worker_independent(tmp_path):
    spec = small_spec()
    sweep = Diversification((4, 6), 0.5)
    a = run_study(spec, sweep, 3, workers=1)
    b = run_study(spec, sweep, 3, workers=1)
    c = run_study(spec, sweep, 3, workers=2)
    for r in (b, c):
        a.write_rows(tmp_path / "a.csv")
        r.write_rows(tmp_path / "r.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "r.csv").read_bytes()


def test_study_single_replication_bit_identical():
    spec = small_spec()
    a = run_study(spec, Similarity((0.0, 0.5), 6), 1)
    b = run_study(spec, Similarity((0.0, 0.5), 6), 1)
    assert [(r.seed, r.default_fraction, r.rounds) for r in a.rows] == \
           [(r.seed, r.default_fraction, r.rounds) for r in b.rows]


def test_auxiliary_defaults_dominate_real():
    spec = small_spec()
    sweep = Diversification((2, 4, 6, 8), 0.5)
    real = run_study(spec, sweep, 4, process="real", workers=1)
    aux = run_study(spec, sweep, 4, process="aux", workers=1)
    for r, a in zip(real.rows, aux.rows):
        assert (r.sweep_param, r.replication, r.seed) == (a.sweep_param, a.replication, a.seed)
        assert a.default_fraction >= r.default_fraction
        assert np.all(a.sold >= r.sold)


def test_summary_recomputable_and_exclusions(tmp_path):
    spec = small_spec()
    res = run_study(spec, Diversification((2, 4), 0.5), 5, max_rounds=1, workers=1)
    for p, med, q25, q75, excl in res.summary():
        rows = [r for r in res.rows if r.sweep_param == p]
        assert len(rows) == 5
        assert excl == sum(not r.converged for r in rows)
        vals = [r.default_fraction for r in rows if r.converged]
        if vals:
            assert med == float(np.median(vals))
    res.write_summary(tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "sweep_param,median,q25,q75,n_excluded"


def test_study_errors():
    with pytest.raises(InputError):
        run_study(small_spec(), Diversification((2,), 0.5), 0)
    with pytest.raises(InputError):
        run_study(small_spec(structure=WeightedSplit((1.0,))), Diversification((2,), 0.5), 1)


def test_study_calibration_theoretical_curve(tmp_path):
    spec = study_calibration(n=200)
    res = run_study(spec, Diversification((18, 20, 22), 0.5), 1, workers=1)
    assert res.theoretical == {18.0: 1.0, 20.0: 1.0, 22.0: 0.01}
    res = run_study(spec, Similarity((0.45, 0.5, 0.55), 20), 1, workers=1)
    assert res.theoretical == {0.45: 0.01, 0.5: 1.0, 0.55: 1.0}
    res.write_plot_data(tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "x,theoretical,median,q25,q75" and len(lines) == 4


def test_study_calibration_small_scale_shape():
    # the collapse needs a large system; at n = 2000 finite-size effects suppress it
    spec = study_calibration(n=10_000)
    res = run_study(spec, Diversification((10, 34), 0.5), 3, workers=1)
    med = {p: m for p, m, *_ in res.summary()}
    assert med[10.0] > 0.9 and med[34.0] < 0.05


def test_process_coupling_on_sampled_systems():
    for seed in range(5):
        sys = sample_system(study_calibration(n=1000), seed=seed)
        assert run_auxiliary(sys).default_fraction >= run_fire_sales(sys).default_fraction


@pytest.mark.slow
def test_study_boundary_points_are_finite_size_effects():
    # at n = 10^4 the sweep points next to the calibration point collapse in
    # about half of the replications; ten times larger systems land on the
    # asymptotic side
    def collapse_rate(n, sweep, reps):
        res = run_study(study_calibration(n=n), sweep, reps, workers=1)
        return np.mean([r.default_fraction > 0.5 for r in res.rows])

    assert 0.4 <= collapse_rate(10_000, Diversification((18,), 0.5), 1000) <= 0.65
    assert 0.35 <= collapse_rate(10_000, Similarity((0.6,), 20), 1000) <= 0.6
    assert collapse_rate(100_000, Diversification((18,), 0.5), 100) >= 0.95
    assert collapse_rate(100_000, Similarity((0.6,), 20), 100) >= 0.95
    assert collapse_rate(100_000, Diversification((22,), 0.5), 100) <= 0.05
    assert collapse_rate(100_000, Similarity((0.4,), 20), 100) <= 0.05
