import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from disdrift.core import SdeValueError, TimeGrid, uniform_grid
from disdrift.noise import BrownianSource, JumpTrain, NoisePath, SeedSpec, bridge_values, \
    coarsen, refine_bridge, sample_jumps, sample_path


def test_same_seed_same_path():
    g = uniform_grid(1.0, 64)
    a = sample_path(g, SeedSpec(11, 3))
    b = sample_path(g, SeedSpec(11, 3))
    assert a == b
    assert a.values.tobytes() == b.values.tobytes()


def test_distinct_paths_differ():
    g = uniform_grid(1.0, 64)
    assert sample_path(g, SeedSpec(11, 3)) != sample_path(g, SeedSpec(11, 4))
    assert sample_path(g, SeedSpec(11, 3)) != sample_path(g, SeedSpec(12, 3))


def test_path_independent_of_other_paths():
    g = uniform_grid(1.0, 16)
    direct = sample_path(g, SeedSpec(5, 40))
    for i in range(40):
        sample_path(g, SeedSpec(5, i))
    assert sample_path(g, SeedSpec(5, 40)) == direct


def test_cumulative_differences_equal_increments_exactly():
    g = TimeGrid([0.0, 0.1, 0.35, 0.9, 1.0])
    p = sample_path(g, SeedSpec(1))
    assert len(p.increments) == len(g) - 1
    assert np.array_equal(np.diff(p.cumulative), p.increments)
    assert p.cumulative[0] == 0.0


def test_unit_interval_variance():
    g = uniform_grid(1.0, 1)
    w = np.array([sample_path(g, SeedSpec(2024, i)).values[1] for i in range(100_000)])
    assert 0.99 <= w.var(ddof=1) <= 1.01


def test_increments_pass_ks_test():
    g = TimeGrid(np.concatenate(([0.0], np.sort(np.random.default_rng(0).uniform(0, 1, 99)),
                                 [1.0])))
    dt = np.diff(g.nodes)
    passed = 0
    for run in range(20):
        z = np.concatenate([sample_path(g, SeedSpec(run, i)).increments / np.sqrt(dt)
                            for i in range(100)])
        if stats.kstest(z, "norm").pvalue > 0.01:
            passed += 1
    assert passed >= 19


def test_refine_coarsen_round_trip():
    coarse = uniform_grid(1.0, 8)
    p = sample_path(coarse, SeedSpec(3, 1))
    fine = refine_bridge(p, uniform_grid(1.0, 8 * 64), SeedSpec(3, 1))
    back = coarsen(fine, coarse)
    assert np.max(np.abs(back.increments - p.increments)) <= 1e-12
    assert np.array_equal(back.values, p.values)


def test_refine_to_same_grid_is_identity():
    g = uniform_grid(1.0, 8)
    p = sample_path(g, SeedSpec(3))
    assert refine_bridge(p, g, SeedSpec(3)) == p


def test_coarsen_to_same_grid_is_identity():
    g = uniform_grid(1.0, 8)
    p = sample_path(g, SeedSpec(3))
    assert coarsen(p, g) == p


def test_coarsen_sums_pairs():
    fine = sample_path(uniform_grid(1.0, 4), SeedSpec(9))
    c = coarsen(fine, uniform_grid(1.0, 2))
    assert c.increments[0] == pytest.approx(fine.increments[0] + fine.increments[1], abs=1e-15)
    assert c.values[1] == fine.values[2]


def test_coarsen_rejects_non_subset():
    fine = sample_path(uniform_grid(1.0, 4), SeedSpec(9))
    with pytest.raises(SdeValueError):
        coarsen(fine, uniform_grid(1.0, 3))


def test_refine_rejects_non_refinement():
    p = sample_path(uniform_grid(1.0, 4), SeedSpec(9))
    with pytest.raises(SdeValueError):
        refine_bridge(p, uniform_grid(1.0, 6), SeedSpec(9))
    with pytest.raises(SdeValueError):
        refine_bridge(p, uniform_grid(2.0, 8), SeedSpec(9))


def test_bridge_midpoint_statistics():
    # midpoint of a bridge from 0 to w on [0, 1]: mean w/2, variance 1/4
    w, n = 0.8, 100_000
    rng = np.random.default_rng(1)
    mids = np.empty(n)
    for i in range(n):
        mids[i] = bridge_values([0.0, 1.0], [0.0, w], [0.0, 0.5, 1.0], rng)[1]
    se_mean = math.sqrt(0.25 / n)
    se_var = 0.25 * math.sqrt(2 / (n - 1))
    assert abs(mids.mean() - w / 2) <= 3 * se_mean
    assert abs(mids.var(ddof=1) - 0.25) <= 3 * se_var


def test_bridge_covariance_on_several_nodes():
    # Cov(B(s), B(t)) = s (1 - t) for s <= t on [0, 1] with zero endpoints
    rng = np.random.default_rng(2)
    fine = [0.0, 0.25, 0.5, 0.75, 1.0]
    samples = np.array([bridge_values([0.0, 1.0], [0.0, 0.0], fine, rng)[1:4]
                        for _ in range(40_000)])
    cov = np.cov(samples.T)
    s = np.array(fine[1:4])
    expect = np.minimum.outer(s, s) * (1 - np.maximum.outer(s, s))
    assert np.max(np.abs(cov - expect)) < 0.01


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=1, max_size=3), st.integers(0, 2**32))
def test_refinement_chain_telescopes(factors, seed):
    n = 3
    grid = uniform_grid(1.0, n)
    base = sample_path(grid, SeedSpec(seed))
    path = base
    for f in factors:
        n *= f
        path = refine_bridge(path, uniform_grid(1.0, n), SeedSpec(seed))
    assert np.max(np.abs(coarsen(path, grid).increments - base.increments)) <= 1e-12


def test_refine_then_coarsen_commutes_with_coarsen_then_refine_in_law():
    # simulate-fine-then-coarsen and simulate-coarse-then-refine give the same
    # law on the coarse grid: compare variances of the first coarse increment
    coarse, fine = uniform_grid(1.0, 2), uniform_grid(1.0, 8)
    a = np.array([coarsen(sample_path(fine, SeedSpec(0, i)), coarse).increments[0]
                  for i in range(20_000)])
    b = np.array([coarsen(refine_bridge(sample_path(coarse, SeedSpec(1, i)), fine,
                                        SeedSpec(1, i)), coarse).increments[0]
                  for i in range(20_000)])
    band = 3 * 0.5 * math.sqrt(2 / 20_000)
    assert abs(a.var() - 0.5) <= band
    assert abs(b.var() - 0.5) <= band


def test_zero_rate_gives_empty_train():
    assert len(sample_jumps(0.0, 1.0, SeedSpec(0))) == 0


def test_negative_rate_rejected():
    with pytest.raises(SdeValueError):
        sample_jumps(-1.0, 1.0, SeedSpec(0))


def test_poisson_mean_count():
    n = 100_000
    counts = np.array([len(sample_jumps(2.0, 1.0, SeedSpec(17, i))) for i in range(n)])
    assert abs(counts.mean() - 2.0) <= 3 * math.sqrt(2.0 / n)


def test_event_times_strictly_increasing_in_horizon():
    for i in range(200):
        t = sample_jumps(5.0, 1.0, SeedSpec(4, i)).event_times
        assert np.all(np.diff(t) > 0)
        assert t.size == 0 or (t[0] > 0 and t[-1] <= 1.0)


def test_jump_train_validation():
    with pytest.raises(SdeValueError):
        JumpTrain([0.5, 0.2], 1.0, 1.0)
    with pytest.raises(SdeValueError):
        JumpTrain([0.0], 1.0, 1.0)


def test_seed_validation():
    with pytest.raises(SdeValueError):
        SeedSpec(-1)
    with pytest.raises(SdeValueError):
        SeedSpec(2**64)
    with pytest.raises(SdeValueError):
        SeedSpec(0, -1)


def test_noise_path_validation():
    g = uniform_grid(1.0, 2)
    with pytest.raises(SdeValueError):
        NoisePath(g, [0.0, 1.0])
    with pytest.raises(SdeValueError):
        NoisePath(g, [1.0, 1.0, 1.0])


def test_brownian_source_consistent_with_known_nodes():
    g = uniform_grid(1.0, 4)
    p = sample_path(g, SeedSpec(8))
    src = BrownianSource(np.random.default_rng(0), p)
    assert src.value(0.5) == p.values[2]
    # a query a hair away from a node snaps to it
    t, w = src.resolve(0.25 + 1e-14)
    assert t == 0.25 and w == p.values[1]
    assert src.draws == 0


def test_brownian_source_bridge_law():
    # W(0.5) given W(0)=0, W(1)=1 is N(0.5, 0.25)
    g = uniform_grid(1.0, 1)
    p = NoisePath(g, [0.0, 1.0])
    vals = np.array([BrownianSource(np.random.default_rng(i), p).value(0.5)
                     for i in range(20_000)])
    assert abs(vals.mean() - 0.5) <= 3 * math.sqrt(0.25 / 20_000)
    assert abs(vals.var() - 0.25) <= 3 * 0.25 * math.sqrt(2 / 20_000)


def test_brownian_source_extends_forward():
    src = BrownianSource(np.random.default_rng(0), T=1.0)
    w1 = src.value(0.3)
    assert src.value(0.3) == w1
    assert src.increment(0.3, 0.2) == src.value(0.5) - w1
