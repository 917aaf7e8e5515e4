"""Shared province and week indices.

Every matrix and vector in the pipeline is aligned to one ProvinceIndex and
one WeekIndex fixed at load time, so that row i / column j mean the same
province and week everywhere downstream.
"""

from __future__ import annotations

import datetime
from dataclasses import dataclass, field

from .errors import ValidationError


def iso_weeks_in_year(year: int) -> int:
    # Dec 28 always falls in the last ISO week of its year.
    return datetime.date(year, 12, 28).isocalendar()[1]


def next_iso_week(year: int, week: int) -> tuple[int, int]:
    if week < iso_weeks_in_year(year):
        return year, week + 1
    return year + 1, 1


@dataclass(frozen=True)
class ProvinceIndex:
    """Ordered roster of province identifiers.

    The ordering is fixed at construction and shared by every panel,
    weight matrix and latent vector built from it.
    """

    ids: tuple[str, ...]
    positions: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.ids)) != len(self.ids):
            raise ValidationError("province ids must be unique")
        if not self.ids:
            raise ValidationError("province index is empty")
        object.__setattr__(self, "positions", {p: i for i, p in enumerate(self.ids)})

    @classmethod
    def from_ids(cls, ids) -> "ProvinceIndex":
        return cls(tuple(str(p) for p in ids))

    def __len__(self) -> int:
        return len(self.ids)

    def position(self, province_id: str) -> int:
        try:
            return self.positions[province_id]
        except KeyError:
            raise ValidationError(f"unknown province id: {province_id!r}") from None


@dataclass(frozen=True)
class WeekIndex:
    """Contiguous, strictly increasing sequence of (ISO year, ISO week) pairs."""

    weeks: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if not self.weeks:
            raise ValidationError("week index is empty")
        for (y, w) in self.weeks:
            if not 1 <= w <= iso_weeks_in_year(y):
                raise ValidationError(f"invalid ISO week: {(y, w)}")
        for prev, cur in zip(self.weeks, self.weeks[1:]):
            if next_iso_week(*prev) != cur:
                raise ValidationError(
                    f"week index not contiguous: {prev} followed by {cur}"
                )

    @classmethod
    def from_range(cls, start_year: int, start_week: int, n_weeks: int) -> "WeekIndex":
        if n_weeks < 1:
            raise ValidationError("n_weeks must be >= 1")
        weeks = [(start_year, start_week)]
        for _ in range(n_weeks - 1):
            weeks.append(next_iso_week(*weeks[-1]))
        return cls(tuple(weeks))

    def __len__(self) -> int:
        return len(self.weeks)

    def position(self, year: int, week: int) -> int:
        try:
            return self.weeks.index((year, week))
        except ValueError:
            raise ValidationError(f"week {(year, week)} outside the study index") from None

    def iso_weeks(self) -> tuple[int, ...]:
        """Week-of-year sequence with the calendar year stripped.

        Baseline years are aligned to the study period by ISO week number,
        so two indices "match" when these sequences are equal even if the
        year tags differ.
        """
        return tuple(w for (_, w) in self.weeks)

    def labels(self) -> list[str]:
        return [f"{y}-W{w:02d}" for (y, w) in self.weeks]
