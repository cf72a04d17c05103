"""Counting and at-risk step processes on the pooled distinct-time grid.

Ties are handled by the right-closed at-risk convention: an observation with
X_i = t is at risk at t regardless of its status, so censored subjects tied
with an event time still sit in the denominator at that time.  Hazard
increments use events over at-risk with the 0/0 = 0 convention for groups
that have left the risk set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .survdata import SurvivalDataset


def _suffix_cumsum(a: np.ndarray, axis: int = -1) -> np.ndarray:
    flipped = np.flip(a, axis=axis)
    return np.flip(np.cumsum(flipped, axis=axis), axis=axis)


@dataclass(frozen=True)
class StepProcesses:
    """Per-group and pooled processes evaluated on the distinct observed times.

    ``atrisk[j, d]`` counts subjects of group j+1 with X >= times[d];
    ``events[j, d]`` counts their events at exactly times[d].
    ``na_increments`` are the per-group hazard increments events / atrisk,
    0 where nobody is at risk.  ``km_left`` is the pooled product-limit
    distribution function evaluated just before each grid time, starting at 0.
    """

    times: np.ndarray = field(repr=False)
    atrisk: np.ndarray = field(repr=False)
    events: np.ndarray = field(repr=False)
    pooled_atrisk: np.ndarray = field(repr=False)
    pooled_events: np.ndarray = field(repr=False)
    na_increments: np.ndarray = field(repr=False)
    km_left: np.ndarray = field(repr=False)
    n: int
    k: int

    @property
    def grid_size(self) -> int:
        return self.times.size


def build_processes(ds: SurvivalDataset) -> StepProcesses:
    """Compute all step processes for a dataset in one pass."""
    times, inverse = np.unique(ds.times, return_inverse=True)
    D = times.size
    k = ds.k
    g = ds.group - 1

    counts = np.zeros((k, D))
    np.add.at(counts, (g, inverse), 1.0)
    events = np.zeros((k, D))
    ev = ds.status == 1
    np.add.at(events, (g[ev], inverse[ev]), 1.0)

    atrisk = _suffix_cumsum(counts, axis=1)
    pooled_atrisk = atrisk.sum(axis=0)
    pooled_events = events.sum(axis=0)

    # every grid time is an observed time, so the pooled risk set is nonempty
    na = np.divide(events, atrisk, out=np.zeros_like(events), where=atrisk > 0)
    survival = np.cumprod(1.0 - pooled_events / pooled_atrisk)
    km_left = np.concatenate(([0.0], 1.0 - survival[:-1]))

    return StepProcesses(
        times=times,
        atrisk=atrisk,
        events=events,
        pooled_atrisk=pooled_atrisk,
        pooled_events=pooled_events,
        na_increments=na,
        km_left=km_left,
        n=ds.n,
        k=k,
    )


def nelson_aalen(ds: SurvivalDataset, group: int):
    """Cumulative hazard estimate for one group.

    Returns (times, values) where values[d] is the estimate at times[d];
    the estimate is a right-continuous step function starting from 0.
    """
    if not (1 <= group <= ds.k):
        raise ValueError(f"group {group} out of range 1..{ds.k}")
    sp = build_processes(ds)
    return sp.times, np.cumsum(sp.na_increments[group - 1])


def kaplan_meier_pooled(ds: SurvivalDataset):
    """Pooled product-limit distribution function F on the distinct times."""
    sp = build_processes(ds)
    survival = np.cumprod(1.0 - sp.pooled_events / sp.pooled_atrisk)
    return sp.times, 1.0 - survival
