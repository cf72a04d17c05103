import numpy as np
import numpy.testing as npt
import pytest

from casanova.linalg import (
    ContrastError,
    EffectLayoutError,
    HypothesisSpec,
    UnknownFactorError,
    centering,
    contrast,
    kronecker,
    parse_effect,
    pinv,
    projection,
    svd_rank,
)
from casanova.survdata import FactorialLayout, oneway_layout


def test_pinv_penrose_identities():
    rng = np.random.default_rng(7)
    a = rng.normal(size=(4, 6))
    ap = pinv(a)
    npt.assert_allclose(a @ ap @ a, a, atol=1e-10)
    npt.assert_allclose(ap @ a @ ap, ap, atol=1e-10)
    npt.assert_allclose((a @ ap).T, a @ ap, atol=1e-10)
    npt.assert_allclose((ap @ a).T, ap @ a, atol=1e-10)


def test_pinv_singular_matrix():
    # rank-1 matrix: pinv of outer(u, v) is outer(v, u) / (|u|^2 |v|^2)
    u = np.array([1.0, 2.0, -1.0])
    v = np.array([0.5, 1.5])
    a = np.outer(u, v)
    expected = np.outer(v, u) / (u @ u) / (v @ v)
    npt.assert_allclose(pinv(a), expected, atol=1e-12)


def test_pinv_zero_matrix():
    npt.assert_array_equal(pinv(np.zeros((3, 2))), np.zeros((2, 3)))


def test_pinv_cutoff_drops_tiny_singular_values():
    # second singular value sits below max(shape) * s_max * 1e-12
    u = np.eye(3)[:, :2]
    s = np.array([1.0, 1e-14])
    vt = np.eye(2)
    a = (u * s) @ vt
    ap = pinv(a)
    assert svd_rank(ap) == 1


def test_svd_rank():
    rng = np.random.default_rng(3)
    b = rng.normal(size=(5, 2))
    assert svd_rank(b @ b.T) == 2
    assert svd_rank(np.zeros((4, 4))) == 0
    assert svd_rank(np.eye(6)) == 6


def test_centering_matrix():
    p = centering(4)
    npt.assert_allclose(p @ p, p, atol=1e-12)
    npt.assert_allclose(p.sum(axis=1), np.zeros(4), atol=1e-12)
    assert svd_rank(p) == 3


def test_kronecker_matches_numpy():
    rng = np.random.default_rng(5)
    a, b = rng.normal(size=(2, 3)), rng.normal(size=(4, 2))
    npt.assert_allclose(kronecker(a, b), np.kron(a, b), atol=1e-13)


def test_projection_properties():
    rng = np.random.default_rng(11)
    h = rng.normal(size=(3, 6))
    hyp = projection(h, "custom")
    t = hyp.T
    npt.assert_allclose(t, t.T, atol=1e-12)
    npt.assert_allclose(t @ t, t, atol=1e-10)
    assert hyp.rank == 3
    # Ta = 0 iff Ha = 0 on random vectors and on an explicit null vector
    for _ in range(25):
        a = rng.normal(size=6)
        assert np.allclose(t @ a, 0, atol=1e-9) == np.allclose(h @ a, 0, atol=1e-9)
    null_vec = h.T @ np.linalg.solve(h @ h.T, h @ rng.normal(size=6))
    a0 = rng.normal(size=6)
    a0 -= h.T @ np.linalg.solve(h @ h.T, h @ a0)
    npt.assert_allclose(h @ a0, 0, atol=1e-10)
    npt.assert_allclose(t @ a0, 0, atol=1e-10)
    assert null_vec is not None


def test_projection_row_space_invariance():
    # T depends only on the row space of H
    rng = np.random.default_rng(13)
    h = rng.normal(size=(2, 5))
    m = rng.normal(size=(2, 2)) + 3 * np.eye(2)
    t1 = projection(h, "x").T
    t2 = projection(m @ h, "x").T
    npt.assert_allclose(t1, t2, atol=1e-10)


def test_range_basis():
    lay = FactorialLayout(factors=(("B", 2), ("C", 3)), levels=(("1", "2"), ("1", "2", "3")))
    hyp = contrast(lay, "interaction:B,C")
    q = hyp.range_basis()
    assert q.shape == (6, hyp.rank)
    npt.assert_allclose(q.T @ q, np.eye(hyp.rank), atol=1e-12)
    npt.assert_allclose(q @ q.T, hyp.T, atol=1e-10)


def test_parse_effect_grammar():
    assert parse_effect("oneway") == ("oneway", ())
    assert parse_effect("main:trt") == ("main", ("trt",))
    assert parse_effect("interaction:a,b") == ("interaction", ("a", "b"))
    assert parse_effect("interaction:a,b,c") == ("interaction", ("a", "b", "c"))
    with pytest.raises(ContrastError):
        parse_effect("main")
    with pytest.raises(ContrastError):
        parse_effect("interaction:a")
    with pytest.raises(ContrastError):
        parse_effect("banana:x")


def test_contrast_oneway():
    hyp = contrast(4, "oneway")
    expected = np.eye(4) - np.ones((4, 4)) / 4
    npt.assert_allclose(hyp.T, expected, atol=1e-12)
    assert hyp.rank == 3
    assert hyp.k == 4


def test_contrast_factorial_main_and_interaction():
    lay = FactorialLayout(factors=(("B", 2), ("C", 3)), levels=(("1", "2"), ("1", "2", "3")))
    p2 = centering(2)
    p3 = centering(3)
    j3 = np.ones((3, 3)) / 3
    j2 = np.ones((2, 2)) / 2
    npt.assert_allclose(contrast(lay, "main:B").T, np.kron(p2, j3), atol=1e-10)
    npt.assert_allclose(contrast(lay, "main:C").T, np.kron(j2, p3), atol=1e-10)
    npt.assert_allclose(contrast(lay, "interaction:B,C").T, np.kron(p2, p3), atol=1e-10)
    assert contrast(lay, "main:B").rank == 1
    assert contrast(lay, "main:C").rank == 2
    assert contrast(lay, "interaction:B,C").rank == 2


def test_contrast_interaction_order_invariant():
    lay = FactorialLayout(factors=(("B", 2), ("C", 3)), levels=(("1", "2"), ("1", "2", "3")))
    t1 = contrast(lay, "interaction:B,C").T
    t2 = contrast(lay, "interaction:C,B").T
    npt.assert_allclose(t1, t2, atol=1e-12)


def test_contrast_errors():
    lay = FactorialLayout(factors=(("B", 2), ("C", 3)), levels=(("1", "2"), ("1", "2", "3")))
    with pytest.raises(UnknownFactorError):
        contrast(lay, "main:Z")
    with pytest.raises(UnknownFactorError):
        contrast(oneway_layout(5), "interaction:group,other")
    with pytest.raises(EffectLayoutError):
        contrast(3, "main:B")
    with pytest.raises(ContrastError):
        contrast(lay, "interaction:B,B")


def test_contrast_oneway_on_factorial_layout():
    # all-groups-equal hypothesis is available on factorial layouts too
    lay = FactorialLayout(factors=(("B", 2), ("C", 3)), levels=(("1", "2"), ("1", "2", "3")))
    hyp = contrast(lay, "oneway")
    npt.assert_allclose(hyp.T, centering(6), atol=1e-12)
    assert hyp.rank == 5


def test_hypothesis_spec_consistency_guard():
    t = centering(3)
    with pytest.raises(ArithmeticError):
        HypothesisSpec(effect="bad", H=t, T=t, rank=3).range_basis()
