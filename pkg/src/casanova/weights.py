"""Polynomial weight functions on [0,1] and the weighted at-risk integrand."""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

from .errors import CasanovaError


class WeightError(CasanovaError, ValueError):
    """Invalid weight definition or weight-set configuration."""


@dataclass(frozen=True)
class WeightFunction:
    """A polynomial weight, coefficients ordered low degree first.

    Weights are evaluated at the left-continuous pooled product-limit
    estimator, so the argument always lies in [0, 1].  The zero polynomial is
    rejected; a weight that never looks at the data is not a test direction.
    """

    coeffs: tuple[float, ...]
    label: str = ""

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.coeffs)
        if len(coeffs) == 0 or not any(c != 0.0 for c in coeffs):
            raise WeightError("weight polynomial must have a nonzero coefficient")
        if not all(np.isfinite(coeffs)):
            raise WeightError("weight coefficients must be finite")
        object.__setattr__(self, "coeffs", coeffs)
        if not self.label:
            object.__setattr__(
                self, "label", "poly:" + ",".join(format(c, "g") for c in coeffs)
            )

    @property
    def degree(self) -> int:
        deg = len(self.coeffs) - 1
        while deg > 0 and self.coeffs[deg] == 0.0:
            deg -= 1
        return deg

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        acc = np.full_like(x, self.coeffs[-1])
        for c in reversed(self.coeffs[:-1]):
            acc = acc * x + c
        return acc


def fleming_harrington(r: int, g: int) -> WeightFunction:
    """The weight x^r (1-x)^g, expanded to monomial coefficients."""
    r, g = int(r), int(g)
    if r < 0 or g < 0:
        raise WeightError("fleming-harrington exponents must be nonnegative")
    coeffs = [0.0] * r + [comb(g, i) * (-1.0) ** i for i in range(g + 1)]
    label = "logrank" if r == 0 and g == 0 else f"fh({r},{g})"
    return WeightFunction(tuple(coeffs), label=label)


def crossing_weight() -> WeightFunction:
    """The weight 1 - 2x, which changes sign at the pooled median."""
    return WeightFunction((1.0, -2.0), label="crossing")


@dataclass(frozen=True)
class WeightSet:
    """An ordered collection of weights tested jointly.

    ``independence_checked`` records whether linear independence of the
    coefficient vectors was verified; :func:`make_weight_set` is the checked
    constructor.  Dependent weights only pad the covariance with redundancy,
    the pseudoinverse quietly ignores them, so the check is advisory for the
    statistic itself but enforced before any permutation run.
    """

    weights: tuple[WeightFunction, ...]
    independence_checked: bool = False

    def __post_init__(self):
        if len(self.weights) == 0:
            raise WeightError("weight set must contain at least one weight")
        object.__setattr__(self, "weights", tuple(self.weights))

    def __len__(self) -> int:
        return len(self.weights)

    def __iter__(self):
        return iter(self.weights)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(w.label for w in self.weights)


def coefficient_matrix(ws: WeightSet) -> np.ndarray:
    """m x (maxdeg+1) matrix of polynomial coefficients, one row per weight."""
    width = max(len(w.coeffs) for w in ws.weights)
    mat = np.zeros((len(ws.weights), width))
    for i, w in enumerate(ws.weights):
        mat[i, : len(w.coeffs)] = w.coeffs
    return mat


def check_independence(ws: WeightSet) -> bool:
    """True when the coefficient vectors are linearly independent."""
    mat = coefficient_matrix(ws)
    return np.linalg.matrix_rank(mat) == mat.shape[0]


def make_weight_set(weights) -> WeightSet:
    """Validated constructor: rejects linearly dependent weight collections."""
    ws = WeightSet(tuple(weights), independence_checked=False)
    if not check_independence(ws):
        raise WeightError(
            "weights are linearly dependent; drop the redundant direction "
            f"(labels: {', '.join(ws.labels)})"
        )
    return WeightSet(ws.weights, independence_checked=True)


def default_weights() -> WeightSet:
    """Log-rank direction plus the sign-changing crossing direction."""
    return make_weight_set((fleming_harrington(0, 0), crossing_weight()))


def parse_weight(token: str) -> WeightFunction:
    """Parse ``fh:<r>:<g>`` or ``poly:<c0>,<c1>,...`` into a weight."""
    text = token.strip()
    head, sep, rest = text.partition(":")
    if not sep:
        raise WeightError(f"cannot parse weight {token!r}")
    if head == "fh":
        parts = rest.split(":")
        if len(parts) != 2:
            raise WeightError(f"fh weight needs two exponents: {token!r}")
        try:
            r, g = int(parts[0]), int(parts[1])
        except ValueError as exc:
            raise WeightError(f"fh exponents must be integers: {token!r}") from exc
        return fleming_harrington(r, g)
    if head == "poly":
        try:
            coeffs = tuple(float(p) for p in rest.split(","))
        except ValueError as exc:
            raise WeightError(f"poly coefficients must be numbers: {token!r}") from exc
        if coeffs == (1.0, -2.0):
            return crossing_weight()
        return WeightFunction(coeffs)
    raise WeightError(f"unknown weight kind {head!r} in {token!r}")


def parse_weight_set(tokens) -> WeightSet:
    return make_weight_set(parse_weight(t) for t in tokens)


def group_scale(sp) -> np.ndarray:
    """Per-time scale prod_j (Y_j / Y) * (Y / n) from the risk processes.

    Equals prod_j Y_j / (n * Y^(k-1)); the ratio form stays in [0, 1] * Y/n
    and is exactly zero wherever any group has left the risk set.
    """
    ratios = sp.atrisk / sp.pooled_atrisk[None, :]
    return ratios.prod(axis=0) * (sp.pooled_atrisk / sp.n)


def integrand(w: WeightFunction, sp) -> np.ndarray:
    """Data-dependent integrand: weight at the left KM limit times group scale."""
    return w(sp.km_left) * group_scale(sp)


def integrand_matrix(ws: WeightSet, sp) -> np.ndarray:
    """m x D matrix stacking :func:`integrand` for each weight."""
    scale = group_scale(sp)
    return np.stack([w(sp.km_left) for w in ws.weights]) * scale[None, :]
