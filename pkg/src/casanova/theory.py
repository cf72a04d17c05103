"""Large-sample limits: at-risk curves, limit covariance, noncentrality, power.

Under independent censoring the scaled at-risk process of group j converges
to y_j(t) = kappa_j (1 - G_j(t)) (1 - F_j(t)), a product of closed forms.
The pooled limit hazard h0 = sum_j kappa_j (1 - G_j) f_j / y drives the
limit F0 of the pooled product-limit estimator, and the limit mean and
covariance of the weighted hazard contrasts are one-dimensional integrals of
smooth functions of (y_1..y_k, F0).  All of this avoids simulation: the
integrals are evaluated with a composite Gauss-Legendre rule on a grid built
in two passes, first uniform in the drop of the pooled at-risk curve, then
refined to be uniform in F0, with law breakpoints (censoring bounds, hazard
jumps) inserted as segment boundaries.

Integrands are arranged so nothing divides by a vanishing quantity: the
mean integrand is  w(F0) gamma prod_{l != j}(y_l / y) kappa_j (1-G_j) f_j
and the covariance integrand replaces the first product by its square.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.special import gammaln

from . import linalg
from .errors import CasanovaError
from .laws import NoCensoring, TabulatedHazard
from .linalg import HypothesisSpec
from .statistic import chi2_quantile, chi2_sf
from .weights import WeightFunction, WeightSet

# pooled at-risk fraction below which the horizon is truncated
ATRISK_FLOOR = 1e-6

_GL_X, _GL_W = np.polynomial.legendre.leggauss(7)


class InvalidConfigError(CasanovaError, ValueError):
    """Population or alternative specification is not usable."""


class SingularLimitError(CasanovaError, ArithmeticError):
    """The limit experiment carries no usable mass."""


@dataclass(frozen=True)
class GroupPopulation:
    """One group's data-generating pair plus its asymptotic size fraction."""

    survival: object
    censoring: object
    kappa: float

    def atrisk(self, t):
        return self.kappa * self.censoring.sf(t) * self.survival.sf(t)

    def event_mass(self, t):
        """kappa_j (1 - G_j) f_j, the density of observed events."""
        return self.kappa * self.censoring.sf(t) * self.survival.pdf(t)


@dataclass(frozen=True)
class PopulationConfig:
    groups: tuple[GroupPopulation, ...]

    def __post_init__(self):
        groups = tuple(self.groups)
        if len(groups) < 2:
            raise InvalidConfigError("population needs at least two groups")
        kappas = np.array([g.kappa for g in groups])
        if np.any(kappas <= 0) or abs(kappas.sum() - 1.0) > 1e-9:
            raise InvalidConfigError("group fractions must be positive and sum to 1")
        object.__setattr__(self, "groups", groups)

    @property
    def k(self) -> int:
        return len(self.groups)

    def atrisk_curves(self, t):
        return np.stack([g.atrisk(t) for g in self.groups])

    def pooled_atrisk(self, t):
        return self.atrisk_curves(t).sum(axis=0)

    @classmethod
    def from_dict(cls, spec: dict) -> "PopulationConfig":
        from .laws import censoring_from_dict, law_from_dict

        try:
            entries = spec["groups"]
        except (TypeError, KeyError) as exc:
            raise InvalidConfigError("population spec needs a 'groups' list") from exc
        groups = []
        for entry in entries:
            try:
                groups.append(
                    GroupPopulation(
                        survival=law_from_dict(entry["survival"]),
                        censoring=censoring_from_dict(entry.get("censoring")),
                        kappa=float(entry["kappa"]),
                    )
                )
            except KeyError as exc:
                raise InvalidConfigError(f"group spec {entry!r} is missing {exc}") from exc
        return cls(groups=tuple(groups))


@dataclass(frozen=True)
class LocalAlternative:
    """Hazard perturbation direction: group j gets (1 + theta_j g(F0)/sqrt(n)).

    ``gamma`` is a polynomial evaluated at the pooled limit distribution
    function, the same vocabulary as the test weights.
    """

    theta: tuple[float, ...]
    gamma: WeightFunction

    def __post_init__(self):
        theta = tuple(float(x) for x in self.theta)
        if len(theta) == 0 or not all(np.isfinite(theta)):
            raise InvalidConfigError("theta must be a nonempty tuple of finite numbers")
        object.__setattr__(self, "theta", theta)

    @classmethod
    def from_dict(cls, spec: dict) -> "LocalAlternative":
        from .weights import parse_weight

        try:
            theta = tuple(float(x) for x in spec["theta"])
            gamma = spec.get("gamma", "poly:1")
        except (TypeError, KeyError) as exc:
            raise InvalidConfigError("alternative spec needs a 'theta' list") from exc
        return cls(theta=theta, gamma=parse_weight(gamma) if isinstance(gamma, str) else gamma)


@dataclass(frozen=True)
class LimitFunctions:
    """Tabulated limit curves with the quadrature nodes used to build them."""

    cfg: PopulationConfig
    times: np.ndarray = field(repr=False)  # segment edges, times[0] = 0
    y: np.ndarray = field(repr=False)  # (k, R+1) group at-risk curves
    y_pooled: np.ndarray = field(repr=False)
    cumhaz0: np.ndarray = field(repr=False)
    F0: np.ndarray = field(repr=False)
    nu: np.ndarray = field(repr=False)  # (k, R+1) cumulative event mass per group
    horizon: float
    # flattened per-node quantities for downstream integrals
    nodes: np.ndarray = field(repr=False)
    node_weights: np.ndarray = field(repr=False)
    F0_nodes: np.ndarray = field(repr=False)
    _chi: PchipInterpolator = field(repr=False)

    def cumhaz0_at(self, t):
        t = np.clip(np.asarray(t, dtype=float), 0.0, self.horizon)
        return self._chi(t)

    def F0_at(self, t):
        return -np.expm1(-self.cumhaz0_at(t))


def _segment_nodes(edges: np.ndarray):
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * np.diff(edges)
    pts = mid[:, None] + half[:, None] * _GL_X[None, :]
    wts = half[:, None] * _GL_W[None, :]
    return pts.ravel(), wts.ravel()


def _pooled_hazard(cfg: PopulationConfig, t: np.ndarray) -> np.ndarray:
    y = cfg.pooled_atrisk(t)
    mass = np.sum([g.event_mass(t) for g in cfg.groups], axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = mass / y
    return np.where(y > 0, h, 0.0)


def _breakpoints(cfg: PopulationConfig, horizon: float) -> np.ndarray:
    pts = []
    for g in cfg.groups:
        end = getattr(g.censoring, "support_end", np.inf)
        if np.isfinite(end) and 0.0 < end < horizon:
            pts.append(end)
        for b in getattr(g.survival, "breaks", ()):  # piecewise hazard jumps
            if 0.0 < b < horizon:
                pts.append(b)
    return np.asarray(sorted(set(pts)))


def _horizon(cfg: PopulationConfig) -> float:
    y0 = float(cfg.pooled_atrisk(np.asarray(0.0)))
    if y0 <= 0:
        raise SingularLimitError("pooled at-risk limit vanishes at time zero")
    target = ATRISK_FLOOR * y0
    ends = [getattr(g.censoring, "support_end", np.inf) for g in cfg.groups]
    edge = min(ends)
    if math.isfinite(edge):
        hi = edge * (1.0 - 1e-9)
    else:
        hi = 1.0
        for _ in range(80):
            if float(cfg.pooled_atrisk(np.asarray(hi))) <= target:
                break
            hi *= 2.0
        else:
            raise SingularLimitError("pooled at-risk limit does not decay")
    if float(cfg.pooled_atrisk(np.asarray(hi))) > target:
        return hi
    lo = 0.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if float(cfg.pooled_atrisk(np.asarray(mid))) > target:
            lo = mid
        else:
            hi = mid
    return hi


def limit_functions(cfg: PopulationConfig, resolution: int = 2048) -> LimitFunctions:
    """Tabulate y_j, F0, the pooled cumulative hazard and event masses.

    ``resolution`` controls the total segment count; accuracy improves like
    a high-order composite rule, so the default is far below the tolerance
    of anything built on top.
    """
    if resolution < 16:
        raise InvalidConfigError("resolution must be at least 16")
    tau = _horizon(cfg)
    if not (tau > 0):
        raise SingularLimitError("limit horizon is not positive")
    r1 = max(16, resolution // 2)
    y0 = float(cfg.pooled_atrisk(np.asarray(0.0)))
    y_tau = float(cfg.pooled_atrisk(np.asarray(tau)))

    # pass 1: edges uniform in the drop of the pooled at-risk curve
    targets = y0 + (y_tau - y0) * np.arange(1, r1) / r1
    lo = np.zeros(targets.size)
    hi = np.full(targets.size, tau)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        above = cfg.pooled_atrisk(mid) > targets
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    edges = np.concatenate(([0.0], 0.5 * (lo + hi), [tau]))
    edges = np.union1d(edges, _breakpoints(cfg, tau))

    pts, wts = _segment_nodes(edges)
    incr = (wts * _pooled_hazard(cfg, pts)).reshape(-1, 7).sum(axis=1)
    F0_pass1 = -np.expm1(-np.concatenate(([0.0], np.cumsum(incr))))

    # pass 2: refine with edges uniform in F0
    u_targets = F0_pass1[-1] * np.arange(1, r1) / r1
    refined = np.interp(u_targets, F0_pass1, edges)
    edges = np.union1d(edges, refined)
    edges = edges[np.concatenate(([True], np.diff(edges) > 0))]

    pts, wts = _segment_nodes(edges)
    incr = (wts * _pooled_hazard(cfg, pts)).reshape(-1, 7).sum(axis=1)
    cumhaz0 = np.concatenate(([0.0], np.cumsum(incr)))
    F0 = -np.expm1(-cumhaz0)

    nu_rows = []
    for g in cfg.groups:
        gi = (wts * g.event_mass(pts)).reshape(-1, 7).sum(axis=1)
        nu_rows.append(np.concatenate(([0.0], np.cumsum(gi))))

    chi = PchipInterpolator(edges, cumhaz0, extrapolate=True)
    F0_nodes = -np.expm1(-np.asarray(chi(pts)))

    return LimitFunctions(
        cfg=cfg,
        times=edges,
        y=cfg.atrisk_curves(edges),
        y_pooled=cfg.pooled_atrisk(edges),
        cumhaz0=cumhaz0,
        F0=F0,
        nu=np.stack(nu_rows),
        horizon=tau,
        nodes=pts,
        node_weights=wts,
        F0_nodes=F0_nodes,
        _chi=chi,
    )


def _node_frames(lf: LimitFunctions):
    """Shared per-node pieces: at-risk ratios, leave-one-out products, masses."""
    cfg = lf.cfg
    y = cfg.atrisk_curves(lf.nodes)  # (k, P)
    ysum = y.sum(axis=0)
    if np.any(ysum <= 0):
        raise SingularLimitError("pooled at-risk limit vanishes inside the horizon")
    ratios = y / ysum
    prod_all = ratios.prod(axis=0)
    prod_others = np.divide(
        prod_all[None, :], ratios, out=np.zeros((cfg.k, lf.nodes.size)), where=ratios > 0
    )
    mass = np.stack([g.event_mass(lf.nodes) for g in cfg.groups])
    return prod_others, mass


def limit_covariance(
    cfg: PopulationConfig, ws: WeightSet, lf: LimitFunctions | None = None
) -> np.ndarray:
    """Limit covariance of the normalized contrasts, shape (mk, mk)."""
    if lf is None:
        lf = limit_functions(cfg)
    prod_others, mass = _node_frames(lf)
    wv = np.stack([w(lf.F0_nodes) for w in ws.weights])  # (m, P)
    m, k = wv.shape[0], cfg.k
    sigma = np.zeros((m * k, m * k))
    for j in range(k):
        core = lf.node_weights * prod_others[j] ** 2 * mass[j]
        block = np.einsum("rp,sp,p->rs", wv, wv, core)
        for r in range(m):
            for s in range(m):
                sigma[r * k + j, s * k + j] = block[r, s]
    if np.trace(sigma) <= 0:
        raise SingularLimitError("limit covariance has no mass")
    return sigma


def limit_means(
    cfg: PopulationConfig,
    alt: LocalAlternative,
    ws: WeightSet,
    lf: LimitFunctions | None = None,
) -> np.ndarray:
    """Limit mean shift of the contrasts under the local alternative."""
    if lf is None:
        lf = limit_functions(cfg)
    if len(alt.theta) != cfg.k:
        raise InvalidConfigError(
            f"theta has length {len(alt.theta)}, population has k={cfg.k}"
        )
    prod_others, mass = _node_frames(lf)
    wv = np.stack([w(lf.F0_nodes) for w in ws.weights])
    gam = alt.gamma(lf.F0_nodes)
    m, k = wv.shape[0], cfg.k
    mu = np.zeros(m * k)
    for j in range(k):
        core = lf.node_weights * gam * prod_others[j] * mass[j]
        vals = alt.theta[j] * (wv * core[None, :]).sum(axis=1)
        mu[np.arange(m) * k + j] = vals
    return mu


@dataclass(frozen=True)
class NoncentralityResult:
    delta: float
    df: int
    mu: np.ndarray = field(repr=False)
    sigma: np.ndarray = field(repr=False)


def noncentrality_detail(
    cfg: PopulationConfig,
    alt: LocalAlternative,
    ws: WeightSet,
    hyp: HypothesisSpec,
    resolution: int = 2048,
) -> NoncentralityResult:
    """Noncentrality with its ingredients, for inspection and testing."""
    if hyp.k != cfg.k:
        raise InvalidConfigError(f"hypothesis is for k={hyp.k}, population has k={cfg.k}")
    lf = limit_functions(cfg, resolution=resolution)
    mu = limit_means(cfg, alt, ws, lf)
    sigma = limit_covariance(cfg, ws, lf)
    m = len(ws)
    tm = np.kron(np.eye(m), hyp.T)
    tmu = tm @ mu
    delta = float(tmu @ linalg.pinv(tm @ sigma @ tm) @ tmu)
    return NoncentralityResult(
        delta=max(delta, 0.0), df=m * hyp.rank, mu=mu, sigma=sigma
    )


def noncentrality(
    cfg: PopulationConfig,
    alt: LocalAlternative,
    ws: WeightSet,
    hyp: HypothesisSpec,
    resolution: int = 2048,
) -> float:
    """Limit noncentrality of the joint statistic under the local alternative."""
    return noncentrality_detail(cfg, alt, ws, hyp, resolution=resolution).delta


def _exchangeable(cfg: PopulationConfig) -> bool:
    first = cfg.groups[0]
    return all(
        g.survival == first.survival
        and g.censoring == first.censoring
        and abs(g.kappa - first.kappa) <= 1e-12
        for g in cfg.groups
    )


def noncentrality_factored(
    cfg: PopulationConfig,
    alt: LocalAlternative,
    ws: WeightSet,
    hyp: HypothesisSpec,
    resolution: int = 2048,
) -> float:
    """Shortcut for exchangeable groups: delta = (c' S^+ c) * theta' T theta.

    When every group shares one null law, censoring law and fraction, the
    mean factorizes as mu[(r-1)k+j] = c_r theta_j and the covariance is
    S kron I_k, so the general quadratic form collapses.  Serves as an
    independent cross-check of :func:`noncentrality` on its overlap.
    """
    if not _exchangeable(cfg):
        raise InvalidConfigError("factored shortcut needs exchangeable groups")
    if hyp.k != cfg.k or len(alt.theta) != cfg.k:
        raise InvalidConfigError("dimension mismatch between hypothesis and population")
    lf = limit_functions(cfg, resolution=resolution)
    prod_others, mass = _node_frames(lf)
    wv = np.stack([w(lf.F0_nodes) for w in ws.weights])
    gam = alt.gamma(lf.F0_nodes)
    core = lf.node_weights * prod_others[0] * mass[0]
    c = (wv * (gam * core)[None, :]).sum(axis=1)  # (m,)
    s_core = lf.node_weights * prod_others[0] ** 2 * mass[0]
    S = np.einsum("rp,sp,p->rs", wv, wv, s_core)  # (m, m)
    theta = np.asarray(alt.theta)
    ttheta = hyp.T @ theta
    return float(c @ linalg.pinv(S) @ c) * float(theta @ ttheta)


def noncentral_chi2_sf(x: float, df: int, delta: float) -> float:
    """Upper tail of the noncentral chi-square via its Poisson mixture.

    Terms are accumulated in log space until the remaining Poisson mass is
    below 1e-12, so the truncation error is far below any tolerance used on
    top of this.
    """
    if delta < 0 or not np.isfinite(delta):
        raise ValueError("noncentrality must be finite and nonnegative")
    lam = 0.5 * delta
    if lam == 0.0:
        return chi2_sf(x, df)
    total = 0.0
    cum = 0.0
    i = 0
    log_lam = math.log(lam)
    while cum < 1.0 - 1e-12:
        logw = -lam + i * log_lam - float(gammaln(i + 1))
        w = math.exp(logw)
        cum += w
        total += w * chi2_sf(x, df + 2 * i)
        i += 1
        if i > 1_000_000:
            raise ArithmeticError("noncentral mixture failed to converge")
    return min(max(total, 0.0), 1.0)


@dataclass(frozen=True)
class PowerPrediction:
    delta: float
    df: int
    alpha: float
    critical_value: float
    power: float


def predicted_power(
    cfg: PopulationConfig,
    alt: LocalAlternative,
    ws: WeightSet,
    hyp: HypothesisSpec,
    alpha: float = 0.05,
    resolution: int = 2048,
) -> PowerPrediction:
    """Asymptotic power of the joint test against a local alternative."""
    detail = noncentrality_detail(cfg, alt, ws, hyp, resolution=resolution)
    crit = chi2_quantile(alpha, detail.df)
    return PowerPrediction(
        delta=detail.delta,
        df=detail.df,
        alpha=alpha,
        critical_value=crit,
        power=noncentral_chi2_sf(crit, detail.df, detail.delta),
    )


def local_alternative_laws(
    cfg: PopulationConfig,
    alt: LocalAlternative,
    n: int,
    resolution: int = 2048,
) -> list[TabulatedHazard]:
    """Finite-n laws whose hazards are the locally perturbed null hazards.

    Group j receives cumulative hazard A_j + theta_j / sqrt(n) * int g(F0) dA_j,
    tabulated on the limit grid.  Raises when the perturbation would push a
    hazard negative somewhere on the grid.
    """
    if len(alt.theta) != cfg.k:
        raise InvalidConfigError("theta length must match the group count")
    if n < 1:
        raise InvalidConfigError("n must be positive")
    lf = limit_functions(cfg, resolution=resolution)
    gam = alt.gamma(lf.F0_nodes)
    scale = 1.0 / math.sqrt(n)
    laws = []
    for j, g in enumerate(cfg.groups):
        factor = 1.0 + alt.theta[j] * scale * gam
        if factor.min() < -1e-12:
            raise InvalidConfigError(
                f"group {j + 1}: perturbed hazard goes negative (min factor {factor.min():.3g})"
            )
        base = g.survival.hazard(lf.nodes)
        incr = (lf.node_weights * gam * base).reshape(-1, 7).sum(axis=1)
        pert = np.concatenate(([0.0], np.cumsum(incr)))
        cumhaz = g.survival.cumhaz(lf.times) + alt.theta[j] * scale * pert
        cumhaz = np.maximum.accumulate(np.maximum(cumhaz, 0.0))
        laws.append(TabulatedHazard(times=lf.times, cumhaz_values=cumhaz))
    return laws
