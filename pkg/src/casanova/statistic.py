"""Weighted hazard contrasts, their covariance, and the joint Wald-type test.

For m weights and k groups the normalized contrast vector is

    Z[(r-1)k + j] = sqrt(n) * sum_d  w_r[d] * dA_j[d]

with w_r the data-dependent integrand (weight at the left pooled KM limit
times the at-risk scale) and dA_j the group hazard increments.  Groups are
independent, so the covariance estimate is block structured: entries pair
weights r, r' within the same group j,

    Sigma[(r-1)k + j, (r'-1)k + j] = n * sum_d  w_r[d] w_r'[d] dN_j[d] / Y_j[d]^2.

The joint statistic compares T(m) Z against its estimated covariance through
a pseudoinverse, so rank-deficient hypotheses and degenerate covariances are
absorbed rather than raised.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaincc, gammainccinv

from . import linalg
from .counting import StepProcesses, build_processes
from .linalg import HypothesisSpec
from .survdata import SurvivalDataset
from .weights import WeightSet, integrand_matrix


def chi2_sf(x: float, df: float) -> float:
    """Upper tail of the chi-square distribution."""
    if df <= 0:
        raise ValueError("chi-square needs positive degrees of freedom")
    if x <= 0:
        return 1.0
    return float(gammaincc(df / 2.0, x / 2.0))


def chi2_quantile(alpha: float, df: float) -> float:
    """Upper-alpha quantile, the exact inverse of :func:`chi2_sf`."""
    if not (0 < alpha < 1):
        raise ValueError("alpha must lie strictly between 0 and 1")
    return float(2.0 * gammainccinv(df / 2.0, alpha))


def z_vector(sp: StepProcesses, ws: WeightSet) -> np.ndarray:
    """Normalized weighted hazard contrasts, length m*k, weight-major order."""
    W = integrand_matrix(ws, sp)  # (m, D)
    Z = np.sqrt(sp.n) * np.einsum("rd,jd->rj", W, sp.na_increments)
    return Z.reshape(-1)


def covariance(sp: StepProcesses, ws: WeightSet) -> np.ndarray:
    """Estimated covariance of :func:`z_vector`, shape (m*k, m*k)."""
    W = integrand_matrix(ws, sp)
    m = W.shape[0]
    k = sp.k
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(sp.atrisk > 0, sp.events / np.square(sp.atrisk), 0.0)
    blocks = sp.n * np.einsum("rd,sd,jd->rsj", W, W, q)  # (m, m, k)
    sigma = np.zeros((m * k, m * k))
    diag = np.arange(k)
    for r in range(m):
        for s in range(m):
            sigma[r * k + diag, s * k + diag] = blocks[r, s]
    return sigma


@dataclass(frozen=True)
class WaldResult:
    statistic: float
    df: int
    degenerate: bool


def wald(z: np.ndarray, sigma: np.ndarray, hyp: HypothesisSpec) -> WaldResult:
    """Joint Wald-type statistic for the hypothesis projection applied per weight.

    The statistic is (T(m) z)' (T(m) sigma T(m))^+ (T(m) z) with
    T(m) = I_m kron T, clamped at zero against rounding.  ``degenerate``
    flags a projected covariance whose numerical rank falls short of the
    nominal degrees of freedom m * rank(T); the pseudoinverse absorbs this,
    the chi-square reference is then an approximation on a smaller space.
    """
    z = np.asarray(z, dtype=float).reshape(-1)
    k = hyp.k
    m, rem = divmod(z.size, k)
    if rem != 0 or m == 0:
        raise ValueError(f"z length {z.size} is not a multiple of k={k}")
    tm = np.kron(np.eye(m), hyp.T)
    tz = tm @ z
    M = tm @ np.asarray(sigma, dtype=float) @ tm
    S = float(tz @ linalg.pinv(M) @ tz)
    df = m * hyp.rank
    return WaldResult(statistic=max(S, 0.0), df=df, degenerate=linalg.svd_rank(M) < df)


@dataclass(frozen=True)
class TestResult:
    """One test outcome; permutation fields stay None for asymptotic-only runs."""

    effect: str
    weight_labels: tuple[str, ...]
    statistic: float
    df: int
    p_asymptotic: float
    degenerate: bool = False
    p_permutation: float | None = None
    n_permutations: int | None = None
    permutation_mode: str | None = None
    seed: int | None = None

    def to_dict(self) -> dict:
        out = {
            "effect": self.effect,
            "weights": list(self.weight_labels),
            "statistic": self.statistic,
            "df": self.df,
            "p_asymptotic": self.p_asymptotic,
            "degenerate": self.degenerate,
        }
        if self.p_permutation is not None:
            out["p_permutation"] = self.p_permutation
            out["n_permutations"] = self.n_permutations
            out["permutation_mode"] = self.permutation_mode
            out["seed"] = self.seed
        return out


def asymptotic_test(
    ds: SurvivalDataset,
    hyp: HypothesisSpec,
    ws: WeightSet,
    sp: StepProcesses | None = None,
) -> TestResult:
    """Joint test with the chi-square reference distribution."""
    if sp is None:
        sp = build_processes(ds)
    z = z_vector(sp, ws)
    sigma = covariance(sp, ws)
    res = wald(z, sigma, hyp)
    return TestResult(
        effect=hyp.effect,
        weight_labels=ws.labels,
        statistic=res.statistic,
        df=res.df,
        p_asymptotic=chi2_sf(res.statistic, res.df),
        degenerate=res.degenerate,
    )
