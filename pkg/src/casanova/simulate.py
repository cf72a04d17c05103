"""Monte Carlo studies: scenario configs, censoring calibration, rejection rates.

A scenario bundles the design, per-group survival laws, per-group target
censoring rates, the effect under test, weights, replication counts and a
master seed.  Replicate r seeds group j from the spawn key (r, j) of the
master seed and the permutation plan from (r, k), so results are identical
for any worker count and any chunking of the replicate range.

Censoring is uniform on [0, U_j] with U_j calibrated so the probability of
censoring under the group's own generating law hits the target; calibration
is deterministic (quadrature plus bisection), with a Monte Carlo variant
available behind a flag for cross-checking.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from multiprocessing import Pool

import numpy as np

from . import laws as laws_mod
from .errors import CasanovaError
from .laws import Exponential, LogNormal, PiecewiseHazard, UniformCensoring, Weibull
from .linalg import HypothesisSpec, contrast
from .permutation import JOINT, PermutationPlan, permutation_test_views
from .statistic import asymptotic_test
from .survdata import FactorialLayout, SurvivalDataset, oneway_layout
from .weights import WeightSet, parse_weight_set


class ScenarioError(CasanovaError, ValueError):
    """Scenario configuration is malformed."""


class TargetUnreachableError(CasanovaError, ArithmeticError):
    """No censoring bound attains the requested censoring rate."""


# ---------------------------------------------------------------------------
# censoring calibration


def censoring_rate(law, upper: float, segments: int = 256) -> float:
    """P(C < T) for C uniform on [0, upper], T from ``law``.

    Equals the average of the survival function over [0, upper], computed
    with a composite Gauss-Legendre rule.
    """
    x, w = np.polynomial.legendre.leggauss(7)
    edges = np.linspace(0.0, upper, segments + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * np.diff(edges)
    pts = mid[:, None] + half[:, None] * x[None, :]
    wts = half[:, None] * w[None, :]
    return float((wts * law.sf(pts)).sum() / upper)


def calibrate_censoring(law, target: float) -> float | None:
    """Censoring bound U with P(C < T) = target; None when target is zero.

    The rate decreases continuously from 1 (U -> 0) to 0 (U -> inf), so a
    bisection over a doubling bracket always lands within 1e-9 of the target.
    """
    if not (0.0 <= target < 1.0):
        raise TargetUnreachableError(f"target censoring rate {target} not in [0, 1)")
    if target == 0.0:
        return None
    hi = 1.0
    for _ in range(120):
        if censoring_rate(law, hi) < target:
            break
        hi *= 2.0
    else:
        raise TargetUnreachableError(
            f"censoring rate stays above {target} out to U={hi:.3g}"
        )
    lo = 0.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if mid == 0.0:
            break
        if censoring_rate(law, mid) > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def calibrate_censoring_mc(
    law, target: float, n_draws: int = 200_000, seed: int = 0
) -> float | None:
    """Monte Carlo calibration variant, for cross-checking the quadrature.

    Uses common random numbers across the bisection so the estimated rate is
    monotone in U and the result is deterministic for a given seed.
    """
    if not (0.0 <= target < 1.0):
        raise TargetUnreachableError(f"target censoring rate {target} not in [0, 1)")
    if target == 0.0:
        return None
    rng = np.random.default_rng(seed)
    t = law.sample(rng, n_draws)
    u = rng.random(n_draws)

    def rate(upper):
        return float(np.mean(u * upper < t))

    hi = 1.0
    for _ in range(120):
        if rate(hi) < target:
            break
        hi *= 2.0
    else:
        raise TargetUnreachableError(f"empirical censoring rate never falls below {target}")
    lo = 0.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if rate(mid) > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def sample_group(law, n: int, rng) -> np.ndarray:
    """n survival times from a law via its own sampling rule."""
    return law.sample(rng, int(n))


# ---------------------------------------------------------------------------
# scenario configuration


@dataclass(frozen=True)
class ScenarioConfig:
    """Complete description of one simulation study.

    ``design`` is ("oneway", k) or ("factorial", ((name, levels), ...)).
    ``censoring_targets`` holds one target rate per group, 0 meaning no
    censoring.  ``n_perm`` of 0 runs the asymptotic test only.
    """

    name: str
    design: tuple
    sizes: tuple[int, ...]
    survival: tuple
    censoring_targets: tuple[float, ...]
    effect: str
    weight_tokens: tuple[str, ...]
    alpha: float
    n_sim: int
    n_perm: int
    seed: int

    def __post_init__(self):
        k = self.k
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        object.__setattr__(self, "survival", tuple(self.survival))
        object.__setattr__(
            self, "censoring_targets", tuple(float(c) for c in self.censoring_targets)
        )
        object.__setattr__(self, "weight_tokens", tuple(self.weight_tokens))
        if len(self.sizes) != k or any(s < 1 for s in self.sizes):
            raise ScenarioError(f"need {k} positive group sizes, got {self.sizes}")
        if len(self.survival) != k:
            raise ScenarioError(f"need {k} survival laws, got {len(self.survival)}")
        if len(self.censoring_targets) != k or not all(
            0.0 <= c < 1.0 for c in self.censoring_targets
        ):
            raise ScenarioError("censoring targets must be k rates in [0, 1)")
        if not (0.0 < self.alpha < 1.0):
            raise ScenarioError("alpha must lie strictly between 0 and 1")
        if self.n_sim < 1 or self.n_perm < 0:
            raise ScenarioError("n_sim must be >= 1 and n_perm >= 0")
        if not (0 <= int(self.seed) < 2**63):
            raise ScenarioError("seed must be a nonnegative 63-bit integer")

    @property
    def k(self) -> int:
        kind = self.design[0]
        if kind == "oneway":
            return int(self.design[1])
        if kind == "factorial":
            k = 1
            for _, levels in self.design[1]:
                k *= int(levels)
            return k
        raise ScenarioError(f"unknown design kind {kind!r}")

    def layout(self) -> FactorialLayout:
        kind = self.design[0]
        if kind == "oneway":
            return oneway_layout(int(self.design[1]))
        factors = tuple((str(name), int(levels)) for name, levels in self.design[1])
        return FactorialLayout(
            factors=factors,
            levels=tuple(
                tuple(str(i + 1) for i in range(levels)) for _, levels in factors
            ),
        )

    def hypothesis(self) -> HypothesisSpec:
        if self.design[0] == "oneway":
            return contrast(int(self.design[1]), self.effect)
        return contrast(self.layout(), self.effect)

    def weight_set(self) -> WeightSet:
        return parse_weight_set(self.weight_tokens)

    def to_dict(self) -> dict:
        if self.design[0] == "oneway":
            design = {"type": "oneway", "k": int(self.design[1])}
        else:
            design = {
                "type": "factorial",
                "factors": [[str(n), int(l)] for n, l in self.design[1]],
            }
        return {
            "name": self.name,
            "design": design,
            "sizes": list(self.sizes),
            "survival": [laws_mod.law_to_dict(l) for l in self.survival],
            "censoring_targets": list(self.censoring_targets),
            "effect": self.effect,
            "weights": list(self.weight_tokens),
            "alpha": self.alpha,
            "n_sim": self.n_sim,
            "n_perm": self.n_perm,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, spec: dict) -> "ScenarioConfig":
        try:
            d = spec["design"]
            if d["type"] == "oneway":
                design = ("oneway", int(d["k"]))
            elif d["type"] == "factorial":
                design = (
                    "factorial",
                    tuple((str(n), int(l)) for n, l in d["factors"]),
                )
            else:
                raise ScenarioError(f"unknown design type {d['type']!r}")
            return cls(
                name=str(spec.get("name", "scenario")),
                design=design,
                sizes=tuple(spec["sizes"]),
                survival=tuple(laws_mod.law_from_dict(s) for s in spec["survival"]),
                censoring_targets=tuple(spec["censoring_targets"]),
                effect=str(spec["effect"]),
                weight_tokens=tuple(spec.get("weights", ("fh:0:0", "poly:1,-2"))),
                alpha=float(spec.get("alpha", 0.05)),
                n_sim=int(spec["n_sim"]),
                n_perm=int(spec["n_perm"]),
                seed=int(spec["seed"]),
            )
        except (KeyError, TypeError) as exc:
            raise ScenarioError(f"scenario spec is missing or malformed: {exc}") from exc

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "ScenarioConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# running a scenario


_TEXT_LABELS = {"asy": "Asy", "per": "Per", "per:logrank": "LR", "per:crossing": "Cross"}


def _method_label(method: str) -> str:
    """Column label for text tables; unknown methods print verbatim."""
    return _TEXT_LABELS.get(method, method)


@dataclass(frozen=True)
class MethodRate:
    method: str
    rejections: int
    n_sim: int

    @property
    def rate(self) -> float:
        return self.rejections / self.n_sim

    @property
    def std_error(self) -> float:
        p = self.rate
        return math.sqrt(p * (1.0 - p) / self.n_sim)


@dataclass(frozen=True)
class RejectionTable:
    """Empirical rejection rates of every method under one scenario."""

    scenario: str
    alpha: float
    n_sim: int
    n_perm: int
    seed: int
    methods: tuple[MethodRate, ...]
    censoring_bounds: tuple = ()

    def rate(self, method: str) -> float:
        for m in self.methods:
            if m.method == method:
                return m.rate
        raise KeyError(method)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "alpha": self.alpha,
            "n_sim": self.n_sim,
            "n_perm": self.n_perm,
            "seed": self.seed,
            "censoring_bounds": [
                None if u is None else float(u) for u in self.censoring_bounds
            ],
            "methods": {
                m.method: {
                    "rejections": m.rejections,
                    "rate": m.rate,
                    "std_error": m.std_error,
                }
                for m in self.methods
            },
        }

    def format_text(self) -> str:
        lines = [
            f"scenario: {self.scenario}",
            f"n_sim={self.n_sim} n_perm={self.n_perm} alpha={self.alpha} seed={self.seed}",
            f"{'method':<16}{'rejections':>12}{'rate%':>10}{'se%':>8}",
        ]
        for m in self.methods:
            lines.append(
                f"{_method_label(m.method):<16}{m.rejections:>12}"
                f"{100 * m.rate:>10.2f}{100 * m.std_error:>8.2f}"
            )
        return "\n".join(lines)


@dataclass(frozen=True)
class _Prepared:
    cfg: ScenarioConfig
    layout: FactorialLayout
    hyp: HypothesisSpec
    ws: WeightSet
    uppers: tuple
    group_vector: np.ndarray
    methods: tuple[str, ...]


def _prepare(cfg: ScenarioConfig) -> _Prepared:
    layout = cfg.layout()
    hyp = cfg.hypothesis()
    ws = cfg.weight_set()
    uppers = tuple(
        calibrate_censoring(law, target)
        for law, target in zip(cfg.survival, cfg.censoring_targets)
    )
    group_vector = np.repeat(np.arange(1, cfg.k + 1), cfg.sizes)
    methods = ["asy"]
    if cfg.n_perm > 0:
        methods.append("per")
        if len(ws) >= 2:
            methods.extend(f"per:{label}" for label in ws.labels)
    return _Prepared(
        cfg=cfg,
        layout=layout,
        hyp=hyp,
        ws=ws,
        uppers=uppers,
        group_vector=group_vector,
        methods=tuple(methods),
    )


def _replicate_dataset(prep: _Prepared, rep: int) -> SurvivalDataset:
    cfg = prep.cfg
    times = np.empty(prep.group_vector.size)
    status = np.empty(prep.group_vector.size, dtype=np.int64)
    pos = 0
    for j, (law, upper, size) in enumerate(
        zip(cfg.survival, prep.uppers, cfg.sizes)
    ):
        rng = np.random.Generator(
            np.random.Philox(np.random.SeedSequence(cfg.seed, spawn_key=(rep, j)))
        )
        t = sample_group(law, size, rng)
        if upper is None:
            c = np.full(size, np.inf)
        else:
            c = UniformCensoring(upper).sample(rng, size)
        times[pos : pos + size] = np.minimum(t, c)
        status[pos : pos + size] = (t <= c).astype(np.int64)
        pos += size
    return SurvivalDataset.from_arrays(times, status, prep.group_vector, prep.layout)


def _replicate_rejections(prep: _Prepared, rep: int) -> np.ndarray:
    cfg = prep.cfg
    ds = _replicate_dataset(prep, rep)
    out = np.zeros(len(prep.methods), dtype=np.int64)
    res = asymptotic_test(ds, prep.hyp, prep.ws)
    out[0] = res.p_asymptotic <= cfg.alpha
    if cfg.n_perm > 0:
        perm_seed = int(
            np.random.SeedSequence(cfg.seed, spawn_key=(rep, cfg.k)).generate_state(
                1, dtype=np.uint64
            )[0]
        )
        plan = PermutationPlan(seed=perm_seed, n_permutations=cfg.n_perm)
        views = permutation_test_views(ds, prep.hyp, prep.ws, plan, alpha=cfg.alpha)
        out[1] = views[JOINT].p_value <= cfg.alpha
        if len(prep.ws) >= 2:
            for i, label in enumerate(prep.ws.labels):
                out[2 + i] = views[label].p_value <= cfg.alpha
    return out


_WORKER_PREP: _Prepared | None = None


def _init_worker(cfg_dict: dict) -> None:
    global _WORKER_PREP
    _WORKER_PREP = _prepare(ScenarioConfig.from_dict(cfg_dict))


def _run_block(span: tuple[int, int]) -> np.ndarray:
    start, stop = span
    counts = np.zeros(len(_WORKER_PREP.methods), dtype=np.int64)
    for rep in range(start, stop):
        counts += _replicate_rejections(_WORKER_PREP, rep)
    return counts


def run_scenario(
    cfg: ScenarioConfig, threads: int | None = None, progress=None
) -> RejectionTable:
    """Empirical rejection rates over cfg.n_sim replicated datasets.

    ``threads`` processes work on disjoint replicate blocks; per-replicate
    seeding makes the result identical for any worker count.  ``progress``
    is an optional callback (done, total).
    """
    prep = _prepare(cfg)
    counts = np.zeros(len(prep.methods), dtype=np.int64)
    workers = threads if threads is not None else (os.cpu_count() or 1)
    workers = max(1, int(workers))
    block = max(1, min(64, math.ceil(cfg.n_sim / (4 * workers))))
    spans = [(s, min(s + block, cfg.n_sim)) for s in range(0, cfg.n_sim, block)]

    if workers == 1:
        global _WORKER_PREP
        _WORKER_PREP = prep
        done = 0
        for span in spans:
            counts += _run_block(span)
            done += span[1] - span[0]
            if progress is not None:
                progress(done, cfg.n_sim)
    else:
        done = 0
        with Pool(
            processes=workers, initializer=_init_worker, initargs=(cfg.to_dict(),)
        ) as pool:
            for span, got in zip(spans, pool.imap(_run_block, spans)):
                counts += got
                done += span[1] - span[0]
                if progress is not None:
                    progress(done, cfg.n_sim)

    return RejectionTable(
        scenario=cfg.name,
        alpha=cfg.alpha,
        n_sim=cfg.n_sim,
        n_perm=cfg.n_perm,
        seed=cfg.seed,
        methods=tuple(
            MethodRate(method=m, rejections=int(c), n_sim=cfg.n_sim)
            for m, c in zip(prep.methods, counts)
        ),
        censoring_bounds=prep.uppers,
    )


# ---------------------------------------------------------------------------
# ready-made scenario families


#: per-group target censoring rates for the two-by-three studies
CENS_LOW = (0.07, 0.06, 0.0, 0.06, 0.07, 0.0)
CENS_MED = (0.20, 0.30, 0.25, 0.35, 0.30, 0.20)
CENS_HIGH = (0.20, 0.50, 0.50, 0.20, 0.50, 0.20)

#: group sizes: balanced, and the unbalanced vector used throughout
SIZES_BALANCED = (8, 8, 8, 8, 8, 8)
SIZES_UNBALANCED = (15, 9, 5, 9, 7, 6)

DEFAULT_WEIGHT_TOKENS = ("fh:0:0", "poly:1,-2")


def null_law(kind: str):
    table = {
        "exponential": Exponential(rate=1.0),
        "weibull": Weibull(shape=1.5, scale=5.0),
        "lognormal": LogNormal(mu=0.0, sigma=1.0),
    }
    if kind not in table:
        raise ScenarioError(f"unknown null law kind {kind!r}")
    return table[kind]


def proportional_alternative(kind: str, hazard_ratio: float = 2.5):
    """Law with cumulative hazard ``hazard_ratio`` times the null's, same family."""
    if kind == "exponential":
        return Exponential(rate=1.0 * hazard_ratio)
    if kind == "weibull":
        # scaling the Weibull scale by c^(-1/shape) multiplies the hazard by c
        return Weibull(shape=1.5, scale=5.0 * hazard_ratio ** (-1.0 / 1.5))
    raise ScenarioError(f"no proportional-hazard alternative within {kind!r}")


#: early/late hazard levels and switch point of the shipped crossing family,
#: chosen so the crossing and joint directions dominate the pure log-rank
#: direction against the exponential null
CROSSING_EARLY = 0.5
CROSSING_LATE = 2.4
CROSSING_AT = 0.7


def crossing_alternative(
    early: float = CROSSING_EARLY, late: float = CROSSING_LATE, at: float = CROSSING_AT
) -> PiecewiseHazard:
    """Piecewise-constant hazard that crosses the exponential null hazard."""
    return PiecewiseHazard(breaks=(at,), rates=(early, late))


def _disturbed_groups(effect: str) -> tuple[int, ...]:
    # alternatives load on the first cell (interaction) or the first
    # treatment row (main effect / one-way)
    kind = effect.split(":", 1)[0]
    return (0,) if kind == "interaction" else (0, 1)


def two_by_three(
    name: str,
    effect: str,
    null_kind: str,
    sizes,
    censoring,
    alternative=None,
    n_sim: int = 1000,
    n_perm: int = 999,
    seed: int = 0,
    alpha: float = 0.05,
    weight_tokens=DEFAULT_WEIGHT_TOKENS,
) -> ScenarioConfig:
    """Two-factor design with 2 x 3 groups, optionally with disturbed cells."""
    base = null_law(null_kind)
    survival = [base] * 6
    if alternative is not None:
        for j in _disturbed_groups(effect):
            survival[j] = alternative
    return ScenarioConfig(
        name=name,
        design=("factorial", (("B", 2), ("C", 3))),
        sizes=tuple(sizes),
        survival=tuple(survival),
        censoring_targets=tuple(censoring),
        effect=effect,
        weight_tokens=tuple(weight_tokens),
        alpha=alpha,
        n_sim=n_sim,
        n_perm=n_perm,
        seed=seed,
    )


def oneway_six(
    name: str,
    null_kind: str,
    sizes,
    censoring,
    alternative=None,
    n_sim: int = 1000,
    n_perm: int = 999,
    seed: int = 0,
    alpha: float = 0.05,
    weight_tokens=DEFAULT_WEIGHT_TOKENS,
) -> ScenarioConfig:
    """One-way design with six groups, same law and censoring vocabulary."""
    base = null_law(null_kind)
    survival = [base] * 6
    if alternative is not None:
        for j in (0, 1):
            survival[j] = alternative
    return ScenarioConfig(
        name=name,
        design=("oneway", 6),
        sizes=tuple(sizes),
        survival=tuple(survival),
        censoring_targets=tuple(censoring),
        effect="oneway",
        weight_tokens=tuple(weight_tokens),
        alpha=alpha,
        n_sim=n_sim,
        n_perm=n_perm,
        seed=seed,
    )


def double_sizes(sizes) -> tuple[int, ...]:
    return tuple(2 * int(s) for s in sizes)


def scaled(cfg: ScenarioConfig, n_sim: int | None = None, n_perm: int | None = None, seed: int | None = None) -> ScenarioConfig:
    """Copy of a scenario with replication counts or seed replaced."""
    kwargs = {}
    if n_sim is not None:
        kwargs["n_sim"] = n_sim
    if n_perm is not None:
        kwargs["n_perm"] = n_perm
    if seed is not None:
        kwargs["seed"] = seed
    return replace(cfg, **kwargs)
