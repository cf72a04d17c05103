"""Right-censored survival data with group structure from crossed factors.

A dataset is a triple of aligned arrays (time, status, group) plus an
optional factorial layout describing how group indices arise from factor
level combinations.  Group indices are 1-based everywhere a user sees them;
levels are discovered in first-appearance order and groups are numbered
row-major over the factor columns, so the mapping is reproducible from the
file alone.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import CasanovaError


class DataError(CasanovaError, ValueError):
    """Malformed input data."""


class MissingColumnError(DataError):
    pass


class NoRowsError(DataError):
    pass


class NonPositiveTimeError(DataError):
    pass


class BadStatusError(DataError):
    pass


class EmptyGroupError(DataError):
    pass


@dataclass(frozen=True)
class Observation:
    """One subject: observed time, event indicator, 1-based group index."""

    time: float
    status: int
    group: int

    def __post_init__(self):
        if not (self.time > 0 and np.isfinite(self.time)):
            raise NonPositiveTimeError(f"observed time must be positive, got {self.time}")
        if self.status not in (0, 1):
            raise BadStatusError(f"status must be 0 or 1, got {self.status}")
        if self.group < 1:
            raise DataError(f"group index must be >= 1, got {self.group}")


@dataclass(frozen=True)
class FactorialLayout:
    """Crossed factors with named, ordered levels.

    ``factors`` lists (name, level count); ``levels`` lists the level names
    per factor in discovery order.  Group index is row-major: the last factor
    varies fastest.
    """

    factors: tuple[tuple[str, int], ...]
    levels: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        if len(self.factors) == 0:
            raise DataError("layout needs at least one factor")
        if len(self.factors) != len(self.levels):
            raise DataError("factors and levels length mismatch")
        for (name, count), names in zip(self.factors, self.levels):
            if count != len(names):
                raise DataError(f"factor {name!r}: {count} levels vs {len(names)} names")
            if count < 1:
                raise DataError(f"factor {name!r} has no levels")

    @property
    def k(self) -> int:
        out = 1
        for _, count in self.factors:
            out *= count
        return out

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.factors)

    def group_index(self, level_indices) -> int:
        """1-based group index for a tuple of 0-based level indices."""
        if len(level_indices) != len(self.factors):
            raise DataError("level tuple length does not match factor count")
        idx = 0
        for (name, count), li in zip(self.factors, level_indices):
            if not (0 <= li < count):
                raise DataError(f"level index {li} out of range for factor {name!r}")
            idx = idx * count + li
        return idx + 1

    def group_levels(self, group: int) -> tuple[int, ...]:
        """Inverse of :meth:`group_index`."""
        if not (1 <= group <= self.k):
            raise DataError(f"group {group} out of range 1..{self.k}")
        idx = group - 1
        out = []
        for _, count in reversed(self.factors):
            out.append(idx % count)
            idx //= count
        return tuple(reversed(out))

    def group_label(self, group: int) -> str:
        parts = self.group_levels(group)
        return "/".join(self.levels[i][li] for i, li in enumerate(parts))


def oneway_layout(k: int, name: str = "group") -> FactorialLayout:
    """Single pseudo-factor layout for one-way designs."""
    return FactorialLayout(
        factors=((name, int(k)),),
        levels=(tuple(str(j + 1) for j in range(int(k))),),
    )


@dataclass(frozen=True)
class SurvivalDataset:
    """Aligned observation arrays plus the group layout.

    Invariants enforced at construction: positive finite times, status in
    {0, 1}, group indices covering 1..k with every group nonempty, k >= 2.
    """

    times: np.ndarray = field(repr=False)
    status: np.ndarray = field(repr=False)
    group: np.ndarray = field(repr=False)
    layout: FactorialLayout

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        status = np.asarray(self.status, dtype=np.int64)
        group = np.asarray(self.group, dtype=np.int64)
        if times.ndim != 1 or times.shape != status.shape or times.shape != group.shape:
            raise DataError("times, status and group must be equal-length 1-d arrays")
        if times.size == 0:
            raise NoRowsError("dataset has no observations")
        if not np.all(np.isfinite(times)) or np.any(times <= 0):
            bad = int(np.argmax(~(np.isfinite(times) & (times > 0))))
            raise NonPositiveTimeError(f"row {bad + 1}: time must be positive and finite")
        if not np.all((status == 0) | (status == 1)):
            bad = int(np.argmax((status != 0) & (status != 1)))
            raise BadStatusError(f"row {bad + 1}: status must be 0 or 1")
        k = self.layout.k
        if k < 2:
            raise DataError("need at least two groups")
        if np.any(group < 1) or np.any(group > k):
            raise DataError(f"group indices must lie in 1..{k}")
        counts = np.bincount(group, minlength=k + 1)[1:]
        if np.any(counts == 0):
            j = int(np.argmax(counts == 0)) + 1
            raise EmptyGroupError(
                f"group {j} ({self.layout.group_label(j)}) has no observations"
            )
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "status", status)
        object.__setattr__(self, "group", group)

    @property
    def n(self) -> int:
        return self.times.size

    @property
    def k(self) -> int:
        return self.layout.k

    @property
    def group_sizes(self) -> np.ndarray:
        return np.bincount(self.group, minlength=self.k + 1)[1:]

    def observations(self):
        for t, s, g in zip(self.times, self.status, self.group):
            yield Observation(float(t), int(s), int(g))

    @classmethod
    def from_arrays(cls, times, status, group, layout=None) -> "SurvivalDataset":
        group = np.asarray(group, dtype=np.int64)
        if layout is None:
            layout = oneway_layout(int(group.max()) if group.size else 0)
        return cls(times=np.asarray(times, dtype=float), status=status, group=group, layout=layout)

    @classmethod
    def from_observations(cls, obs, layout=None) -> "SurvivalDataset":
        obs = list(obs)
        return cls.from_arrays(
            [o.time for o in obs], [o.status for o in obs], [o.group for o in obs], layout
        )

    def to_csv(self, path, time_col: str = "time", status_col: str = "status") -> None:
        """Write the dataset back out in the same shape :func:`load_csv` reads."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([time_col, status_col, *self.layout.names])
            for t, s, g in zip(self.times, self.status, self.group):
                parts = self.layout.group_levels(int(g))
                names = [self.layout.levels[i][li] for i, li in enumerate(parts)]
                writer.writerow([format(float(t), "g"), int(s), *names])


@dataclass(frozen=True)
class GroupSummary:
    group: int
    label: str
    size: int
    events: int
    censored_fraction: float


@dataclass(frozen=True)
class ValidationReport:
    groups: tuple[GroupSummary, ...]
    warnings: tuple[str, ...]
    errors: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return len(self.errors) == 0


def validate(ds: SurvivalDataset) -> ValidationReport:
    """Per-group summary with warnings for groups that cannot move the test.

    A group with zero observed events contributes nothing to any weighted
    hazard integral; that is legal but worth flagging.
    """
    groups = []
    warnings = []
    errors = []
    for j in range(1, ds.k + 1):
        mask = ds.group == j
        size = int(mask.sum())
        events = int(ds.status[mask].sum())
        label = ds.layout.group_label(j)
        groups.append(
            GroupSummary(
                group=j,
                label=label,
                size=size,
                events=events,
                censored_fraction=1.0 - events / size if size else 1.0,
            )
        )
        if size == 0:
            errors.append(f"group {j} ({label}) is empty")
        elif events == 0:
            warnings.append(f"group {j} ({label}) has no observed events")
    return ValidationReport(tuple(groups), tuple(warnings), tuple(errors))


def load_csv(
    source,
    time_col: str = "time",
    status_col: str = "status",
    factor_cols=("group",),
    status_values: tuple[str, str] | None = None,
) -> SurvivalDataset:
    """Read a dataset from a CSV file path or text stream.

    Factor levels are taken in first-appearance order and groups are numbered
    row-major over ``factor_cols``; two reads of the same file always produce
    the same dataset.  ``status_values`` optionally maps textual status codes
    as (event, censored); otherwise status cells must literally be 0 or 1.
    """
    factor_cols = tuple(factor_cols)
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, "r", newline="") as fh:
            return load_csv(fh, time_col, status_col, factor_cols, status_values)
    reader = csv.DictReader(source)
    if reader.fieldnames is None:
        raise NoRowsError("CSV has no header row")
    header = list(reader.fieldnames)
    for col in (time_col, status_col, *factor_cols):
        if col not in header:
            raise MissingColumnError(f"column {col!r} not found (header: {header})")

    times: list[float] = []
    status: list[int] = []
    level_maps: list[dict[str, int]] = [dict() for _ in factor_cols]
    level_lists: list[list[str]] = [[] for _ in factor_cols]
    row_levels: list[tuple[int, ...]] = []

    for rownum, row in enumerate(reader, start=2):  # header is line 1
        raw_t = (row[time_col] or "").strip()
        try:
            t = float(raw_t)
        except ValueError:
            raise NonPositiveTimeError(f"line {rownum}: cannot parse time {raw_t!r}")
        if not (t > 0 and np.isfinite(t)):
            raise NonPositiveTimeError(f"line {rownum}: time must be positive, got {raw_t!r}")
        raw_s = (row[status_col] or "").strip()
        if status_values is not None:
            event_label, censored_label = status_values
            if raw_s == event_label:
                s = 1
            elif raw_s == censored_label:
                s = 0
            else:
                raise BadStatusError(
                    f"line {rownum}: status {raw_s!r} is neither "
                    f"{event_label!r} nor {censored_label!r}"
                )
        else:
            if raw_s not in ("0", "1"):
                raise BadStatusError(f"line {rownum}: status must be 0 or 1, got {raw_s!r}")
            s = int(raw_s)
        combo = []
        for i, col in enumerate(factor_cols):
            cell = (row[col] or "").strip()
            if cell not in level_maps[i]:
                level_maps[i][cell] = len(level_lists[i])
                level_lists[i].append(cell)
            combo.append(level_maps[i][cell])
        times.append(t)
        status.append(s)
        row_levels.append(tuple(combo))

    if not times:
        raise NoRowsError("CSV contains a header but no data rows")

    layout = FactorialLayout(
        factors=tuple((col, len(level_lists[i])) for i, col in enumerate(factor_cols)),
        levels=tuple(tuple(lv) for lv in level_lists),
    )
    group = [layout.group_index(combo) for combo in row_levels]
    return SurvivalDataset.from_arrays(times, status, group, layout)


def veteran_path():
    """Filesystem path of the bundled two-by-three lung cancer subset."""
    return resources.files("casanova").joinpath("data/veteran_2x3.csv")


def load_veteran() -> SurvivalDataset:
    """Bundled lung cancer trial subset: treatment (2) crossed with cell type (3).

    102 subjects; survival times in days.  The data are the rows of the
    classic 137-subject trial whose cell type is smallcell, adeno or large,
    with treatment arms ordered experimental first.
    """
    text = veteran_path().read_text()
    return load_csv(io.StringIO(text), "time", "status", ("trt", "celltype"))
