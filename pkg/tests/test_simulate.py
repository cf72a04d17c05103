import json
from importlib import resources

import numpy as np
import numpy.testing as npt
import pytest

from casanova.laws import Exponential, LogNormal, Weibull
from casanova.simulate import (
    CENS_HIGH,
    CENS_LOW,
    CENS_MED,
    SIZES_BALANCED,
    SIZES_UNBALANCED,
    ScenarioConfig,
    ScenarioError,
    TargetUnreachableError,
    _prepare,
    _replicate_dataset,
    calibrate_censoring,
    calibrate_censoring_mc,
    censoring_rate,
    crossing_alternative,
    double_sizes,
    null_law,
    oneway_six,
    proportional_alternative,
    run_scenario,
    scaled,
    two_by_three,
)

BUNDLED = [
    "table1_interaction_exp_n1_low",
    "table1_main_exp_2n1_med",
    "table1_interaction_logn_n1_high",
    "table2_main_weib_prop_low_2n1",
    "table2_main_exp_cross_low_2n1",
    "table4_oneway_exp_n2_high",
]


def tiny_config(n_sim=12, n_perm=19, seed=3):
    return two_by_three(
        "tiny",
        "interaction:B,C",
        "exponential",
        sizes=(5, 5, 5, 5, 5, 5),
        censoring=(0.1,) * 6,
        n_sim=n_sim,
        n_perm=n_perm,
        seed=seed,
    )


def test_censoring_rate_closed_form():
    # for Exp(rate) and uniform censoring the rate is (1 - exp(-rate U)) / (rate U)
    law = Exponential(rate=1.0)
    for upper in (1.0, 3.0, 4.9651):
        ref = (1.0 - np.exp(-upper)) / upper
        npt.assert_allclose(censoring_rate(law, upper), ref, rtol=1e-10)


def test_calibration_hits_target():
    law = Exponential(rate=1.0)
    for target in (0.07, 0.2, 0.5):
        upper = calibrate_censoring(law, target)
        npt.assert_allclose(censoring_rate(law, upper), target, atol=1e-8)
    # the benchmark value for the 20% exponential setting
    npt.assert_allclose(calibrate_censoring(law, 0.2), 4.9651, atol=1e-3)


def test_calibration_zero_target_means_no_censoring():
    assert calibrate_censoring(Exponential(1.0), 0.0) is None
    assert calibrate_censoring_mc(Exponential(1.0), 0.0) is None


def test_calibration_rejects_bad_target():
    with pytest.raises(TargetUnreachableError):
        calibrate_censoring(Exponential(1.0), 1.0)
    with pytest.raises(TargetUnreachableError):
        calibrate_censoring(Exponential(1.0), -0.1)


def test_mc_calibration_cross_check():
    # simulation route agrees with the quadrature route
    for law, target in [
        (Exponential(1.0), 0.2),
        (Weibull(1.5, 5.0), 0.3),
        (LogNormal(0.0, 1.0), 0.25),
    ]:
        u_quad = calibrate_censoring(law, target)
        u_mc = calibrate_censoring_mc(law, target, n_draws=400_000, seed=1)
        assert abs(u_mc - u_quad) / u_quad < 0.02


def test_null_laws():
    assert null_law("exponential") == Exponential(rate=1.0)
    assert null_law("weibull") == Weibull(shape=1.5, scale=5.0)
    assert null_law("lognormal") == LogNormal(mu=0.0, sigma=1.0)
    with pytest.raises(ScenarioError):
        null_law("gamma")


def test_proportional_alternative_hazard_ratio():
    t = np.linspace(0.1, 6.0, 40)
    for kind in ("exponential", "weibull"):
        base = null_law(kind)
        alt = proportional_alternative(kind, hazard_ratio=2.5)
        npt.assert_allclose(alt.cumhaz(t) / base.cumhaz(t), 2.5, rtol=1e-10)
    with pytest.raises(ScenarioError):
        proportional_alternative("lognormal")


def test_crossing_alternative_crosses_null():
    null = Exponential(rate=1.0)
    alt = crossing_alternative()
    t = np.linspace(0.01, 4.0, 2000)
    diff = alt.sf(t) - null.sf(t)
    assert diff[0] > 0  # lower early hazard, higher early survival
    assert diff[-1] < 0  # higher late hazard wins eventually
    sign_changes = int(np.sum(np.diff(np.sign(diff)) != 0))
    assert sign_changes == 1


def test_scenario_round_trip(tmp_path):
    cfg = tiny_config()
    path = tmp_path / "tiny.json"
    cfg.to_json(path)
    cfg2 = ScenarioConfig.from_json(path)
    assert cfg2 == cfg


def test_scenario_validation():
    with pytest.raises(ScenarioError):
        two_by_three("bad", "interaction:B,C", "exponential",
                     sizes=(5,) * 5, censoring=(0.1,) * 6)
    with pytest.raises(ScenarioError):
        two_by_three("bad", "interaction:B,C", "exponential",
                     sizes=(5,) * 6, censoring=(0.1,) * 4)


def test_bundled_scenarios_load():
    for token in BUNDLED:
        raw = resources.files("casanova").joinpath(f"scenarios/{token}.json")
        cfg = ScenarioConfig.from_dict(json.loads(raw.read_text()))
        assert cfg.name == token
        assert cfg.k == 6
        assert len(cfg.weight_tokens) == 2
        _prepare(cfg)  # layout, hypothesis, weights, calibration all resolve


def test_replicate_dataset_is_deterministic():
    prep = _prepare(tiny_config())
    d1 = _replicate_dataset(prep, 4)
    d2 = _replicate_dataset(prep, 4)
    npt.assert_array_equal(d1.times, d2.times)
    npt.assert_array_equal(d1.status, d2.status)
    d3 = _replicate_dataset(prep, 5)
    assert not np.array_equal(d1.times, d3.times)


def test_replicate_dataset_matches_design():
    cfg = tiny_config()
    prep = _prepare(cfg)
    ds = _replicate_dataset(prep, 0)
    assert ds.n == sum(cfg.sizes)
    npt.assert_array_equal(ds.group_sizes, cfg.sizes)
    assert ds.layout.factors == (("B", 2), ("C", 3))


def test_run_scenario_thread_invariance():
    cfg = tiny_config(n_sim=10, n_perm=9)
    t1 = run_scenario(cfg, threads=1)
    t2 = run_scenario(cfg, threads=2)
    assert [m.rejections for m in t1.methods] == [m.rejections for m in t2.methods]
    assert [m.method for m in t1.methods] == [m.method for m in t2.methods]


def test_run_scenario_methods_and_rates():
    cfg = tiny_config(n_sim=8, n_perm=9)
    table = run_scenario(cfg, threads=1)
    assert [m.method for m in table.methods] == ["asy", "per", "per:logrank", "per:crossing"]
    for m in table.methods:
        assert 0.0 <= m.rate <= 1.0
        assert m.n_sim == 8
    assert table.rate("asy") == table.methods[0].rate
    with pytest.raises(KeyError):
        table.rate("nope")


def test_run_scenario_asymptotic_only():
    cfg = scaled(tiny_config(n_sim=6), n_perm=0)
    table = run_scenario(cfg, threads=1)
    assert [m.method for m in table.methods] == ["asy"]


def test_format_text_labels():
    cfg = tiny_config(n_sim=6, n_perm=9)
    table = run_scenario(cfg, threads=1)
    text = table.format_text()
    for label in ("Asy", "Per", "LR", "Cross"):
        assert label in text
    assert "per:logrank" not in text
    payload = table.to_dict()
    assert set(payload["methods"]) == {"asy", "per", "per:logrank", "per:crossing"}


def test_scaled_replaces_counts():
    cfg = tiny_config()
    cfg2 = scaled(cfg, n_sim=50, n_perm=101, seed=9)
    assert (cfg2.n_sim, cfg2.n_perm, cfg2.seed) == (50, 101, 9)
    assert cfg2.survival == cfg.survival


def test_double_sizes():
    assert double_sizes((15, 9, 5, 9, 7, 6)) == (30, 18, 10, 18, 14, 12)


def test_builder_constants():
    assert SIZES_BALANCED == (8,) * 6
    assert SIZES_UNBALANCED == (15, 9, 5, 9, 7, 6)
    assert len(CENS_LOW) == len(CENS_MED) == len(CENS_HIGH) == 6


def test_oneway_builder():
    cfg = oneway_six("ow", "exponential", SIZES_BALANCED, (0.2,) * 6,
                     alternative=proportional_alternative("exponential"))
    assert cfg.design == ("oneway", 6)
    assert cfg.effect == "oneway"
    # the first two groups carry the alternative
    assert cfg.survival[0] == proportional_alternative("exponential")
    assert cfg.survival[2] == null_law("exponential")
