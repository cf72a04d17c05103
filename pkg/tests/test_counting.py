import numpy as np
import numpy.testing as npt
import pytest

from casanova.counting import build_processes, kaplan_meier_pooled, nelson_aalen
from casanova.survdata import SurvivalDataset


def test_tied_data_hand_example():
    # two events at t=1, one censored and one event at t=2; censored
    # observations tied with an event stay at risk at that time
    ds = SurvivalDataset.from_arrays(
        [1.0, 1.0, 2.0, 2.0], [1, 1, 0, 1], [1, 1, 2, 2]
    )
    sp = build_processes(ds)
    npt.assert_array_equal(sp.times, [1.0, 2.0])
    npt.assert_array_equal(sp.pooled_atrisk, [4, 2])
    npt.assert_array_equal(sp.pooled_events, [2, 1])
    pooled_increments = sp.pooled_events / sp.pooled_atrisk
    npt.assert_allclose(pooled_increments, [2 / 4, 1 / 2])
    # group-level: both t=1 events in group 1, the t=2 event in group 2
    npt.assert_allclose(sp.na_increments[0], [2 / 2, 0.0])
    npt.assert_allclose(sp.na_increments[1], [0.0, 1 / 2])


def test_risk_sets_use_inclusive_comparison():
    ds = SurvivalDataset.from_arrays([1.0, 1.0, 1.0, 2.0], [1, 0, 1, 1], [1, 1, 2, 2])
    sp = build_processes(ds)
    # everyone with X >= 1 is at risk at t=1, censored ties included
    npt.assert_array_equal(sp.atrisk[:, 0], [2, 2])
    npt.assert_array_equal(sp.atrisk[:, 1], [0, 1])


def test_km_left_starts_at_zero_and_lags():
    ds = SurvivalDataset.from_arrays([1.0, 2.0, 3.0, 4.0], [1, 1, 1, 1], [1, 2, 1, 2])
    sp = build_processes(ds)
    # distinct-time product form: S = prod(1 - dN/Y)
    surv = np.cumprod(1.0 - sp.pooled_events / sp.pooled_atrisk)
    npt.assert_allclose(sp.km_left, np.concatenate(([0.0], 1.0 - surv[:-1])), atol=1e-14)


def test_km_with_ties_distinct_product():
    # tie group of two events: single factor (1 - 2/Y), not (1 - 1/Y)^2
    ds = SurvivalDataset.from_arrays([1.0, 1.0, 2.0, 3.0], [1, 1, 1, 0], [1, 2, 1, 2])
    sp = build_processes(ds)
    t, km = kaplan_meier_pooled(ds)
    npt.assert_array_equal(t, [1.0, 2.0, 3.0])
    # distribution-function scale: F = 1 - prod(1 - dN/Y)
    surv = [1 - 2 / 4, (1 - 2 / 4) * (1 - 1 / 2), (1 - 2 / 4) * (1 - 1 / 2)]
    npt.assert_allclose(km, 1.0 - np.asarray(surv))
    npt.assert_allclose(sp.km_left, [0.0, 2 / 4, 3 / 4])


def test_nelson_aalen_cumsum():
    ds = SurvivalDataset.from_arrays(
        [2.0, 3.0, 5.0, 2.0, 4.0, 6.0], [1, 0, 1, 1, 1, 0], [1, 1, 1, 2, 2, 2]
    )
    t, na = nelson_aalen(ds, 1)
    npt.assert_array_equal(t, [2.0, 3.0, 4.0, 5.0, 6.0])
    npt.assert_allclose(na, np.cumsum([1 / 3, 0.0, 0.0, 1 / 1, 0.0]))
    _, na2 = nelson_aalen(ds, 2)
    npt.assert_allclose(na2, np.cumsum([1 / 3, 0.0, 1 / 2, 0.0, 0.0]))


def test_zero_over_zero_increment_is_zero():
    # group 1 leaves the risk set before the last event time
    ds = SurvivalDataset.from_arrays([1.0, 2.0, 3.0], [1, 1, 1], [1, 2, 2])
    sp = build_processes(ds)
    assert sp.atrisk[0, 2] == 0
    assert sp.na_increments[0, 2] == 0.0
    assert np.isfinite(sp.na_increments).all()


def test_pooled_equals_group_sums():
    rng = np.random.default_rng(2)
    times = rng.exponential(size=60).round(1) + 0.1  # force ties
    status = rng.integers(0, 2, size=60)
    status[:5] = 1
    group = rng.integers(1, 4, size=60)
    group[:3] = [1, 2, 3]
    ds = SurvivalDataset.from_arrays(times, status, group)
    sp = build_processes(ds)
    npt.assert_array_equal(sp.atrisk.sum(axis=0), sp.pooled_atrisk)
    npt.assert_array_equal(sp.events.sum(axis=0), sp.pooled_events)
    npt.assert_array_equal(sp.times, np.unique(times))


def test_row_order_invariance():
    rng = np.random.default_rng(8)
    times = rng.exponential(size=40).round(1) + 0.1
    status = rng.integers(0, 2, size=40)
    status[0] = 1
    group = rng.integers(1, 3, size=40)
    group[:2] = [1, 2]
    ds = SurvivalDataset.from_arrays(times, status, group)
    sp = build_processes(ds)
    perm = rng.permutation(40)
    ds2 = SurvivalDataset.from_arrays(times[perm], status[perm], group[perm])
    sp2 = build_processes(ds2)
    npt.assert_array_equal(sp.times, sp2.times)
    npt.assert_array_equal(sp.atrisk, sp2.atrisk)
    npt.assert_array_equal(sp.events, sp2.events)
    npt.assert_allclose(sp.km_left, sp2.km_left, atol=1e-14)


def test_atrisk_is_nonincreasing():
    ds = SurvivalDataset.from_arrays(
        [3.0, 1.0, 4.0, 1.0, 5.0, 2.0], [1, 1, 0, 1, 1, 0], [1, 2, 1, 2, 1, 2]
    )
    sp = build_processes(ds)
    assert np.all(np.diff(sp.atrisk, axis=1) <= 0)
    assert np.all(np.diff(sp.pooled_atrisk) < 0)


def test_km_left_bounded():
    ds = SurvivalDataset.from_arrays(
        np.arange(1.0, 21.0), np.ones(20, dtype=int), np.tile([1, 2], 10)
    )
    sp = build_processes(ds)
    assert np.all(sp.km_left >= 0.0)
    assert np.all(sp.km_left < 1.0)
    assert sp.km_left[0] == 0.0


def test_nelson_aalen_bad_group():
    ds = SurvivalDataset.from_arrays([1.0, 2.0], [1, 1], [1, 2])
    with pytest.raises(Exception):
        nelson_aalen(ds, 3)


def test_group_nelson_aalen_hand_example():
    # group 1 holds {(1,e),(2,e),(3,c)}; the far-away group-2 row never
    # enters group 1's risk sets, so A_1(3) = 1/3 + 1/2 = 5/6
    ds = SurvivalDataset.from_arrays(
        [1.0, 2.0, 3.0, 100.0], [1, 1, 0, 0], [1, 1, 1, 2]
    )
    t, na = nelson_aalen(ds, 1)
    npt.assert_allclose(na[t == 3.0], [1 / 3 + 1 / 2])


def test_pooled_km_hand_example():
    # pooled estimator ignores the grouping: S(1)=2/3, S(2)=1/3, censored at 3
    ds = SurvivalDataset.from_arrays([1.0, 2.0, 3.0], [1, 1, 0], [1, 1, 2])
    _, km = kaplan_meier_pooled(ds)
    npt.assert_allclose(1.0 - km, [2 / 3, 1 / 3, 1 / 3])  # survival scale
    sp = build_processes(ds)
    npt.assert_allclose(sp.km_left, [0.0, 1 / 3, 2 / 3])


def test_km_consistency_exponential():
    # product-limit estimate tracks 1 - exp(-t) at DKW scale
    rng = np.random.default_rng(2024)
    n = 10000
    times = rng.exponential(size=n)
    group = np.ones(n, dtype=int)
    group[n // 2 :] = 2  # grouping is irrelevant for the pooled estimator
    ds = SurvivalDataset.from_arrays(times, np.ones(n, dtype=int), group)
    t, F = kaplan_meier_pooled(ds)
    mask = t <= 2.0
    assert np.max(np.abs(F[mask] - (1.0 - np.exp(-t[mask])))) < 0.03
