"""Studentized permutation inference with a vectorized, reproducible core.

The permutation distribution is generated by relabeling subjects across
groups while keeping their (time, status) pairs fixed.  Pooled quantities
(the time grid, pooled at-risk and event counts, the pooled product-limit
estimator and hence the weight values) do not depend on the labels, so they
are computed once; per-replicate work reduces to integer scatter-adds and
small einsums over batches of label vectors.

Reproducibility contract: replicate b draws its permutation from a fixed,
block-aligned window of a counter-based bit stream keyed by the seed, and
batches are cut at fixed boundaries derived from the dataset alone.  Results
are therefore bit-identical for any worker count, and workers are threads
(the heavy numpy kernels release the GIL).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import islice

import numpy as np

from .errors import CasanovaError
from .linalg import PINV_RTOL, HypothesisSpec
from .survdata import SurvivalDataset
from .weights import WeightSet, check_independence

DEFAULT_EXACT_CAP = 200_000

# Fixed batch size for replicate processing.  Part of the determinism
# contract: batch boundaries depend only on the dataset, never on workers.
_BATCH = 512
# Cap on batch * k * grid elements so huge datasets stay within memory.
_BATCH_CELL_BUDGET = 12_000_000

JOINT = "comb"


class InvalidPlanError(CasanovaError, ValueError):
    """Permutation plan is not executable as stated."""


class CapExceededError(InvalidPlanError):
    """Exact enumeration would exceed the configured cap."""


@dataclass(frozen=True)
class PermutationPlan:
    """How to generate the permutation distribution.

    ``mode`` is ``monte_carlo`` (``n_permutations`` random relabelings) or
    ``exact`` (full enumeration of distinct assignments, refused above
    ``exact_cap``).
    """

    seed: int
    n_permutations: int = 1999
    mode: str = "monte_carlo"
    exact_cap: int = DEFAULT_EXACT_CAP

    def __post_init__(self):
        if self.mode not in ("monte_carlo", "exact"):
            raise InvalidPlanError(f"unknown mode {self.mode!r}")
        if self.mode == "monte_carlo" and self.n_permutations < 1:
            raise InvalidPlanError("monte_carlo needs n_permutations >= 1")
        if not (0 <= int(self.seed) < 2**64):
            raise InvalidPlanError("seed must fit in an unsigned 64-bit integer")
        if self.exact_cap < 1:
            raise InvalidPlanError("exact_cap must be positive")


@dataclass(frozen=True)
class PermutationResult:
    """Observed statistic with its permutation reference distribution.

    ``p_value`` uses the add-one convention ``(1 + #{S_b >= S_obs}) / (B + 1)``
    under monte_carlo and the exact proportion ``#{S_b >= S_obs} / count``
    under full enumeration (the identity assignment is part of the
    enumeration, so the exact p-value is also strictly positive).  Replicates
    tied with the observed value count against it.
    """

    statistic: float
    df: int
    p_value: float
    quantile: float
    alpha: float
    n_replicates: int
    degenerate_count: int
    mode: str
    seed: int
    replicate_statistics: np.ndarray | None = field(default=None, repr=False)


def multinomial_count(sizes) -> int:
    """Number of distinct assignments of labels with the given multiplicities."""
    sizes = [int(s) for s in sizes]
    if any(s < 1 for s in sizes):
        raise InvalidPlanError("group sizes must be positive")
    total = math.factorial(sum(sizes))
    for s in sizes:
        total //= math.factorial(s)
    return total


def exact_assignments(sizes, cap: int = DEFAULT_EXACT_CAP):
    """All distinct label assignments for the given group sizes.

    Returns (count, iterator of int64 arrays).  Enumeration is lexicographic
    from the ascending-sorted label vector via repeated next-permutation
    steps, so each distinct assignment appears exactly once.
    """
    sizes = [int(s) for s in sizes]
    count = multinomial_count(sizes)
    if count > cap:
        raise CapExceededError(
            f"exact enumeration needs {count} assignments, cap is {cap}"
        )

    def _iterate():
        a = [j for j, s in enumerate(sizes) for _ in range(s)]
        n = len(a)
        while True:
            yield np.array(a, dtype=np.int64)
            i = n - 2
            while i >= 0 and a[i] >= a[i + 1]:
                i -= 1
            if i < 0:
                return
            j = n - 1
            while a[j] <= a[i]:
                j -= 1
            a[i], a[j] = a[j], a[i]
            a[i + 1 :] = reversed(a[i + 1 :])

    return count, _iterate()


def _suffix_cumsum(a: np.ndarray) -> np.ndarray:
    return np.flip(np.cumsum(np.flip(a, axis=-1), axis=-1), axis=-1)


class PermutationEngine:
    """Batched computation of the joint statistic over label vectors.

    One engine instance is bound to a dataset, hypothesis and weight set.
    ``views`` maps a name to the tuple of weight indices it combines: the
    joint view uses all weights, and for two or more weights each single
    weight is exposed under its label as well, computed from the same
    replicates.
    """

    def __init__(self, ds: SurvivalDataset, hyp: HypothesisSpec, ws: WeightSet):
        if hyp.k != ds.k:
            raise ValueError(f"hypothesis is for k={hyp.k}, data has k={ds.k}")
        self.n = ds.n
        self.k = ds.k
        self.m = len(ws)
        self.hyp = hyp
        self.rank = hyp.rank
        self.basis = hyp.range_basis()  # (k, rank)

        order = np.argsort(ds.times, kind="stable")
        t_sorted = ds.times[order]
        status_sorted = ds.status[order]
        self.base_labels = (ds.group - 1)[order].astype(np.int64)

        grid, d_idx = np.unique(t_sorted, return_inverse=True)
        self.grid_size = grid.size
        self.d_idx = d_idx.astype(np.int64)

        pooled_counts = np.bincount(self.d_idx, minlength=self.grid_size)
        pooled_atrisk = _suffix_cumsum(pooled_counts.astype(np.float64))
        ev = status_sorted == 1
        self.event_positions = np.flatnonzero(ev)
        pooled_events = np.bincount(
            self.d_idx[ev], minlength=self.grid_size
        ).astype(np.float64)
        survival = np.cumprod(1.0 - pooled_events / pooled_atrisk)
        km_left = np.concatenate(([0.0], 1.0 - survival[:-1]))

        # Cells that can contribute to any integral under any labeling:
        # an event must occur there and every group must be able to hold
        # at-risk mass (fewer than k at risk forces some empty group, which
        # zeroes the integrand through the at-risk product).
        keep = (pooled_events > 0) & (pooled_atrisk >= self.k)
        self.cells = np.flatnonzero(keep)
        self.wt = np.stack([w(km_left) for w in ws.weights])[:, keep]  # (m, E)
        self.pooled_atrisk_cells = pooled_atrisk[keep]
        self.pool_scale = pooled_atrisk[keep] / self.n
        self.pooled_events_cells = pooled_events[keep]
        self.d_evt = self.d_idx[ev]

        # replicates per batch, fixed by the dataset dimensions alone
        per_row = max(1, self.k * self.grid_size)
        self.batch_size = max(1, min(_BATCH, _BATCH_CELL_BUDGET // per_row))
        # counter blocks per replicate: 4 doubles per block, padded
        self._blocks_per_rep = -(-self.n // 4)

        self.views = self._build_views(ws)

    def _build_views(self, ws: WeightSet):
        views = [(JOINT, tuple(range(self.m)))]
        if self.m >= 2:
            seen = {JOINT}
            for i, label in enumerate(ws.labels):
                name = label if label not in seen else f"{label}#{i + 1}"
                seen.add(name)
                views.append((name, (i,)))
        return views

    @property
    def view_names(self):
        return tuple(name for name, _ in self.views)

    def view_df(self, name: str) -> int:
        for vname, idx in self.views:
            if vname == name:
                return len(idx) * self.rank
        raise KeyError(name)

    # ---- core batched evaluation -------------------------------------

    def statistics(self, labels: np.ndarray):
        """Joint statistics for a batch of label vectors.

        ``labels`` has shape (C, n) with values 0..k-1 aligned to the
        time-sorted observations.  Returns {view: (S, covariance_rank)}.
        """
        labels = np.atleast_2d(labels)
        C, n = labels.shape
        if n != self.n:
            raise ValueError(f"label vectors have length {n}, expected {self.n}")
        k, D, E = self.k, self.grid_size, self.cells.size

        offset = (np.arange(C, dtype=np.int64)[:, None] * k + labels) * D
        counts = np.bincount(
            (offset + self.d_idx[None, :]).ravel(), minlength=C * k * D
        ).reshape(C, k, D)
        events = np.bincount(
            (offset[:, self.event_positions] + self.d_evt[None, :]).ravel(),
            minlength=C * k * D,
        ).reshape(C, k, D)

        atrisk = _suffix_cumsum(counts.astype(np.float64))[:, :, self.cells]
        dN = events[:, :, self.cells].astype(np.float64)

        if __debug__ and C > 0:
            assert np.array_equal(
                atrisk.sum(axis=1)[0], self.pooled_atrisk_cells
            ), "pooled at-risk must be label-invariant"
            assert np.array_equal(
                dN.sum(axis=1)[0], self.pooled_events_cells
            ), "pooled events must be label-invariant"

        with np.errstate(divide="ignore"):
            inv_atrisk = np.where(atrisk > 0, 1.0 / atrisk, 0.0)
        dA = dN * inv_atrisk
        scale = (atrisk / self.pooled_atrisk_cells).prod(axis=1) * self.pool_scale
        W = self.wt[None, :, :] * scale[:, None, :]  # (C, m, E)

        Z = math.sqrt(self.n) * np.einsum("cre,cje->crj", W, dA)  # (C, m, k)
        q = dN * inv_atrisk * inv_atrisk
        blocks = self.n * np.einsum("cre,cse,cje->crsj", W, W, q)  # (C, m, m, k)

        out = {}
        for name, idx in self.views:
            out[name] = self._quadratic_form(Z, blocks, idx)
        return out

    def _quadratic_form(self, Z, blocks, idx):
        """Wald quadratic form restricted to the hypothesis range.

        With Q an orthonormal basis of range(T), the projected covariance
        T(m) Sigma T(m) equals Q(m) B Q(m)' for B = Q(m)' Sigma Q(m), and the
        statistic is a' B^+ a with a = Q(m)' Z.  B has size (mv * rank)^2,
        much smaller than (mv * k)^2, and carries exactly the nonzero
        eigenvalues of the projected covariance, so the cutoff applied to B
        reproduces the full-size pseudoinverse.
        """
        C = Z.shape[0]
        k, r = self.k, self.rank
        mv = len(idx)
        Q = self.basis

        a = np.einsum("crj,jq->crq", Z[:, idx, :], Q).reshape(C, mv * r)
        B = np.empty((C, mv * r, mv * r))
        for ai, ri in enumerate(idx):
            for bi, si in enumerate(idx):
                B[:, ai * r : (ai + 1) * r, bi * r : (bi + 1) * r] = np.einsum(
                    "cj,jp,jq->cpq", blocks[:, ri, si, :], Q, Q
                )

        evals, evecs = np.linalg.eigh(B)
        lmax = np.maximum(evals[:, -1], 0.0)
        # same relative cutoff the full-size pseudoinverse would use
        tol = (mv * k) * lmax * PINV_RTOL
        positive = evals > tol[:, None]
        proj = np.einsum("cpi,cp->ci", evecs, a)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = np.where(positive, 1.0 / evals, 0.0)
        S = np.einsum("ci,ci->c", proj * proj, inv)
        return np.maximum(S, 0.0), positive.sum(axis=1)

    # ---- label generation --------------------------------------------

    def mc_labels(self, seed: int, start: int, stop: int) -> np.ndarray:
        """Random relabelings for replicate indices [start, stop).

        Each replicate owns a fixed counter window (padded to whole 4-draw
        blocks), so any batching of [0, B) yields the same labels.
        """
        bitgen = np.random.Philox(key=int(seed))
        bitgen.advance(start * self._blocks_per_rep)
        gen = np.random.Generator(bitgen)
        u = gen.random((stop - start, self._blocks_per_rep * 4))[:, : self.n]
        perm = np.argsort(u, axis=1)
        return self.base_labels[perm]

    # ---- full runs ----------------------------------------------------

    def observed(self):
        """Statistics of the actual labeling, through the same code path."""
        return self.statistics(self.base_labels[None, :])

    def run(
        self,
        plan: PermutationPlan,
        alpha: float = 0.05,
        threads: int | None = None,
        keep_replicates: bool = False,
    ) -> dict[str, PermutationResult]:
        """Permutation distributions for every view, from shared replicates."""
        if not (0 < alpha < 1):
            raise InvalidPlanError("alpha must lie strictly between 0 and 1")
        observed = self.observed()

        joint_df = self.view_df(JOINT)
        degenerate = 0
        stats: dict[str, np.ndarray] = {}

        def consume(start, batch_out):
            nonlocal degenerate
            size = len(batch_out[JOINT][0])
            for name in self.view_names:
                stats[name][start : start + size] = batch_out[name][0]
            degenerate += int((batch_out[JOINT][1] < joint_df).sum())

        if plan.mode == "exact":
            # enumeration is inherently sequential; threads are ignored here
            total, batches = self._exact_batches(plan)
            stats = {name: np.empty(total) for name in self.view_names}
            for start, labels in batches:
                consume(start, self.statistics(labels))
        else:
            total = plan.n_permutations
            stats = {name: np.empty(total) for name in self.view_names}
            step = self.batch_size
            spans = [(s, min(s + step, total)) for s in range(0, total, step)]

            def work(span):
                start, stop = span
                return start, self.statistics(self.mc_labels(plan.seed, start, stop))

            n_workers = max(1, int(threads)) if threads else 1
            if n_workers == 1:
                for start, batch_out in map(work, spans):
                    consume(start, batch_out)
            else:
                with ThreadPoolExecutor(max_workers=n_workers) as pool:
                    for start, batch_out in pool.map(work, spans):
                        consume(start, batch_out)

        out = {}
        for name in self.view_names:
            s_obs = float(observed[name][0][0])
            svals = stats[name]
            ties_or_above = int((svals >= s_obs).sum())
            if plan.mode == "exact":
                p = ties_or_above / total
                rank_idx = math.ceil((1.0 - alpha) * total)
            else:
                p = (1.0 + ties_or_above) / (total + 1.0)
                rank_idx = math.ceil((1.0 - alpha) * (total + 1.0))
            if rank_idx <= total:
                quantile = float(np.partition(svals, rank_idx - 1)[rank_idx - 1])
            else:
                quantile = math.inf
            out[name] = PermutationResult(
                statistic=s_obs,
                df=self.view_df(name),
                p_value=float(p),
                quantile=quantile,
                alpha=alpha,
                n_replicates=total,
                degenerate_count=degenerate if name == JOINT else 0,
                mode=plan.mode,
                seed=int(plan.seed),
                replicate_statistics=svals.copy() if keep_replicates else None,
            )
        return out

    def _exact_batches(self, plan: PermutationPlan):
        sizes = np.bincount(self.base_labels, minlength=self.k)
        count, assignments = exact_assignments(sizes, cap=plan.exact_cap)

        def _batches():
            start = 0
            while True:
                chunk = list(islice(assignments, self.batch_size))
                if not chunk:
                    return
                yield start, np.stack(chunk)
                start += len(chunk)

        return count, _batches()


def permutation_test_views(
    ds: SurvivalDataset,
    hyp: HypothesisSpec,
    ws: WeightSet,
    plan: PermutationPlan,
    alpha: float = 0.05,
    threads: int | None = None,
    keep_replicates: bool = False,
) -> dict[str, PermutationResult]:
    """Joint and per-weight permutation tests from one set of replicates."""
    if not ws.independence_checked and not check_independence(ws):
        from .weights import WeightError

        raise WeightError("weight set is linearly dependent")
    engine = PermutationEngine(ds, hyp, ws)
    return engine.run(plan, alpha=alpha, threads=threads, keep_replicates=keep_replicates)


def permutation_test(
    ds: SurvivalDataset,
    hyp: HypothesisSpec,
    ws: WeightSet,
    plan: PermutationPlan,
    alpha: float = 0.05,
    threads: int | None = None,
    keep_replicates: bool = False,
) -> PermutationResult:
    """Studentized permutation test of the joint statistic."""
    return permutation_test_views(
        ds, hyp, ws, plan, alpha=alpha, threads=threads, keep_replicates=keep_replicates
    )[JOINT]
