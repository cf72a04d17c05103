import numpy as np
import numpy.testing as npt
import pytest

from casanova.counting import build_processes
from casanova.survdata import SurvivalDataset
from casanova.weights import (
    WeightError,
    WeightFunction,
    WeightSet,
    coefficient_matrix,
    crossing_weight,
    default_weights,
    fleming_harrington,
    group_scale,
    integrand,
    integrand_matrix,
    make_weight_set,
    parse_weight,
    parse_weight_set,
)


def test_weight_evaluation_matches_polyval():
    w = WeightFunction((0.5, -1.0, 2.0))
    x = np.linspace(0.0, 1.0, 37)
    npt.assert_allclose(w(x), np.polyval([2.0, -1.0, 0.5], x), atol=1e-14)


def test_weight_scalar_and_array_input():
    w = WeightFunction((1.0, -2.0))
    assert w(0.25) == pytest.approx(0.5)
    npt.assert_allclose(w(np.array([0.0, 0.5, 1.0])), [1.0, 0.0, -1.0])


def test_zero_polynomial_rejected():
    with pytest.raises(WeightError):
        WeightFunction((0.0, 0.0))
    with pytest.raises(WeightError):
        WeightFunction(())


def test_fleming_harrington_expansion():
    # x^r (1-x)^g expanded via binomial coefficients
    x = np.linspace(0.0, 1.0, 23)
    for r, g in [(0, 0), (1, 0), (0, 1), (2, 1), (1, 3)]:
        w = fleming_harrington(r, g)
        npt.assert_allclose(w(x), x**r * (1.0 - x) ** g, atol=1e-12)


def test_fleming_harrington_labels():
    assert fleming_harrington(0, 0).label == "logrank"
    assert fleming_harrington(1, 0).label == "fh(1,0)"


def test_fleming_harrington_rejects_negative_exponents():
    with pytest.raises(WeightError):
        fleming_harrington(-1, 0)


def test_crossing_weight():
    w = crossing_weight()
    assert w.label == "crossing"
    assert w(0.5) == pytest.approx(0.0)
    assert w(0.0) == pytest.approx(1.0)


def test_parse_weight():
    assert parse_weight("fh:0:0").label == "logrank"
    assert parse_weight("fh:2:1").coeffs == fleming_harrington(2, 1).coeffs
    w = parse_weight("poly:0.5,1.5")
    assert w.coeffs == (0.5, 1.5)
    assert w.label == "poly:0.5,1.5"
    # the canonical crossing polynomial keeps its name
    assert parse_weight("poly:1,-2").label == "crossing"


def test_parse_weight_errors():
    for bad in ["fh:1", "fh:a:b", "poly:x,y", "nope:1", "logrank"]:
        with pytest.raises(WeightError):
            parse_weight(bad)


def test_coefficient_matrix_and_independence():
    ws = default_weights()
    mat = coefficient_matrix(ws)
    assert mat.shape[0] == 2
    assert np.linalg.matrix_rank(mat) == 2
    with pytest.raises(WeightError):
        make_weight_set([WeightFunction((1.0,)), WeightFunction((2.0,))])
    with pytest.raises(WeightError):
        make_weight_set([crossing_weight(), WeightFunction((2.0, -4.0))])


def test_make_weight_set_marks_checked():
    ws = make_weight_set([fleming_harrington(0, 0), crossing_weight()])
    assert ws.independence_checked
    assert ws.labels == ("logrank", "crossing")


def test_parse_weight_set_default_tokens():
    ws = parse_weight_set(["fh:0:0", "poly:1,-2"])
    assert ws.labels == ("logrank", "crossing")
    assert len(default_weights().weights) == 2


def _toy_dataset():
    times = np.array([1.0, 2.0, 3.0, 4.0, 1.5, 2.5, 3.5, 4.5])
    status = np.array([1, 1, 0, 1, 1, 0, 1, 1])
    group = np.array([1, 1, 1, 1, 2, 2, 2, 2])
    return SurvivalDataset.from_arrays(times, status, group)


def test_group_scale_balanced_start():
    # with all k groups fully at risk the scale is prod(n_j/n) * 1 = 1/k^k
    # for balanced groups
    ds = _toy_dataset()
    sp = build_processes(ds)
    scale = group_scale(sp)
    assert scale[0] == pytest.approx((0.5 * 0.5) * 1.0)
    assert np.all(scale >= 0)
    assert np.all(scale <= sp.pooled_atrisk / sp.n)


def test_group_scale_vanishes_with_empty_group():
    ds = _toy_dataset()
    sp = build_processes(ds)
    scale = group_scale(sp)
    # after group 1's last observation (4.0) only group 2 remains at 4.5
    assert scale[-1] == 0.0


def test_integrand_matrix_stacks_rows():
    ds = _toy_dataset()
    sp = build_processes(ds)
    ws = default_weights()
    mat = integrand_matrix(ws, sp)
    assert mat.shape == (2, sp.grid_size)
    npt.assert_allclose(mat[0], integrand(ws.weights[0], sp), atol=1e-14)
    npt.assert_allclose(mat[1], integrand(ws.weights[1], sp), atol=1e-14)


def test_integrand_uses_left_limits():
    # the weight argument at the first event time is F(0-) = 0
    ds = _toy_dataset()
    sp = build_processes(ds)
    w = crossing_weight()
    vals = integrand(w, sp)
    assert vals[0] == pytest.approx(w(0.0) * group_scale(sp)[0])


def test_weight_set_requires_weights():
    with pytest.raises(WeightError):
        WeightSet(())
