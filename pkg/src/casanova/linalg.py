"""Contrast matrices and projection algebra for factorial hypotheses.

Everything here operates on tiny dense float64 matrices (at most km x km),
so the implementations favour robustness over speed.  The pseudoinverse and
rank share one singular-value cutoff convention, used consistently by every
quadratic form in the package.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CasanovaError

# Relative singular-value cutoff: values at or below
# max(shape) * s_max * PINV_RTOL are treated as exactly zero.
PINV_RTOL = 1e-12


class ContrastError(CasanovaError, ValueError):
    """Effect descriptor cannot be built for the given design."""


class UnknownFactorError(ContrastError):
    """Effect names a factor that is not part of the layout."""


class EffectLayoutError(ContrastError):
    """Effect is structurally inconsistent with the layout."""


def identity(k: int) -> np.ndarray:
    return np.eye(int(k))


def ones_matrix(k: int) -> np.ndarray:
    """k x k matrix of ones."""
    return np.ones((int(k), int(k)))


def centering(k: int) -> np.ndarray:
    """The projection I_k - J_k / k onto the zero-sum subspace."""
    k = int(k)
    return np.eye(k) - np.ones((k, k)) / k


def kronecker(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.kron(np.asarray(a, dtype=float), np.asarray(b, dtype=float))


def pinv(a: np.ndarray, tol: float | None = None) -> np.ndarray:
    """Moore-Penrose pseudoinverse via SVD with an explicit cutoff.

    Singular values at or below ``tol`` (default ``max(shape) * s_max * 1e-12``)
    are treated as exactly zero, so rank-deficient inputs are absorbed rather
    than amplified.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if not np.isfinite(a).all():
        raise ValueError("pinv requires finite entries")
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    if tol is None:
        tol = max(a.shape) * (s[0] if s.size else 0.0) * PINV_RTOL
    with np.errstate(divide="ignore"):
        inv = np.where(s > tol, 1.0 / s, 0.0)
    return (vt.T * inv) @ u.T


def svd_rank(a: np.ndarray, tol: float | None = None) -> int:
    """Numerical rank under the same cutoff convention as :func:`pinv`."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    s = np.linalg.svd(a, compute_uv=False)
    if tol is None:
        tol = max(a.shape) * (s[0] if s.size else 0.0) * PINV_RTOL
    return int(np.count_nonzero(s > tol))


@dataclass(frozen=True)
class HypothesisSpec:
    """A null hypothesis ``H a = 0`` with its unique projection form.

    ``T = H' (H H')^+ H`` is symmetric and idempotent; two contrast matrices
    with the same row space produce the same ``T``, so tests built from ``T``
    do not depend on how the hypothesis was written down.
    """

    effect: str
    H: np.ndarray = field(repr=False)
    T: np.ndarray = field(repr=False)
    rank: int

    @property
    def k(self) -> int:
        return self.T.shape[0]

    def range_basis(self) -> np.ndarray:
        """Orthonormal basis (k x rank) of the range of ``T``."""
        vals, vecs = np.linalg.eigh(self.T)
        keep = vals > 0.5  # eigenvalues of an idempotent matrix are 0 or 1
        basis = vecs[:, keep]
        if basis.shape[1] != self.rank:
            raise ArithmeticError("projection basis does not match rank")
        return basis


def projection(H: np.ndarray, effect: str = "") -> HypothesisSpec:
    """Build the projection ``T`` for a contrast matrix ``H``."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    T = H.T @ pinv(H @ H.T) @ H
    T = (T + T.T) / 2.0  # symmetrize against rounding
    rank_trace = int(round(np.trace(T)))
    rank_svd = svd_rank(T)
    if rank_trace != rank_svd:
        raise ArithmeticError(
            f"projection rank mismatch: trace {np.trace(T):.6f} vs svd {rank_svd}"
        )
    if np.max(np.abs(T @ T - T)) > 1e-10:
        raise ArithmeticError("projection is not numerically idempotent")
    return HypothesisSpec(effect=effect, H=H, T=T, rank=rank_trace)


def parse_effect(effect: str) -> tuple[str, tuple[str, ...]]:
    """Split an effect descriptor into (kind, factor names).

    Grammar: ``oneway`` | ``main:<factor>`` | ``interaction:<f1>,<f2>[,...]``.
    """
    text = effect.strip()
    if text == "oneway":
        return "oneway", ()
    kind, sep, rest = text.partition(":")
    names = tuple(p.strip() for p in rest.split(",") if p.strip())
    if kind == "main":
        if not sep or len(names) != 1:
            raise ContrastError(f"main effect needs exactly one factor: {effect!r}")
        return "main", names
    if kind == "interaction":
        if not sep or len(names) < 2:
            raise ContrastError(
                f"interaction needs at least two factors: {effect!r}"
            )
        if len(set(names)) != len(names):
            raise ContrastError(f"interaction repeats a factor: {effect!r}")
        return "interaction", names
    raise ContrastError(f"unknown effect descriptor: {effect!r}")


def contrast(layout, effect: str) -> HypothesisSpec:
    """Contrast and projection for an effect in a (possibly factorial) design.

    ``layout`` is either a plain group count ``k`` (one-way designs) or an
    object with a ``factors`` attribute listing ``(name, levels)`` pairs in
    the order that indexes groups row-major.  Main effects place the centering
    matrix on their factor and averaging matrices ``J/levels`` elsewhere;
    interactions place centering matrices on every named factor.
    """
    kind, names = parse_effect(effect)

    if isinstance(layout, (int, np.integer)):
        k = int(layout)
        if k < 2:
            raise ContrastError("one-way contrast needs at least two groups")
        if kind != "oneway":
            raise EffectLayoutError(
                f"effect {effect!r} needs a factorial layout, got a plain group count"
            )
        return projection(centering(k), effect="oneway")

    factors = list(layout.factors)
    if kind == "oneway":
        k = 1
        for _, levels in factors:
            k *= int(levels)
        return projection(centering(k), effect="oneway")

    known = [name for name, _ in factors]
    for name in names:
        if name not in known:
            raise UnknownFactorError(
                f"factor {name!r} not in layout (has {', '.join(known)})"
            )
    if kind == "interaction" and len(factors) < 2:
        raise EffectLayoutError("interaction needs at least two factors in the layout")

    H = np.ones((1, 1))
    for name, levels in factors:
        levels = int(levels)
        if levels < 2 and name in names:
            raise EffectLayoutError(f"factor {name!r} has fewer than two levels")
        block = centering(levels) if name in names else ones_matrix(levels) / levels
        H = np.kron(H, block)
    return projection(H, effect=f"{kind}:{','.join(names)}")
