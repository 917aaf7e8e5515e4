"""Loading and validation of the four input tables.

All inputs are pre-aggregated province-by-week CSVs (UTF-8, header row,
``.`` decimal separator):

* ``deaths_allcause_<year>.csv`` / ``deaths_official.csv`` with columns
  ``province_id,year,iso_week,deaths``
* ``population.csv`` with columns ``province_id,population``
* ``mobility/<YYYY-MM-DD>.csv`` with columns
  ``origin_id,destination_id,flow`` (one file per day)

Municipality-to-province and day-to-week aggregation happen upstream of
this package: weeks are ISO-8601, and weeks truncated at the study-period
boundary are expected to have been dropped by the caller.

Loaders are pure functions over immutable inputs; validation findings that
are not hard errors (for example zero-filled missing cells) are appended to
an optional :class:`ValidationLog`.
"""

from __future__ import annotations

import datetime
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ValidationError
from .indices import ProvinceIndex, WeekIndex

logger = logging.getLogger(__name__)

DEATHS_COLUMNS = ["province_id", "year", "iso_week", "deaths"]
POPULATION_COLUMNS = ["province_id", "population"]
MOBILITY_COLUMNS = ["origin_id", "destination_id", "flow"]


@dataclass
class ValidationLog:
    """Collector for non-fatal validation events (JSON-lines friendly)."""

    events: list[dict] = field(default_factory=list)

    def add(self, event: str, **details):
        record = {"event": event, **details}
        self.events.append(record)
        logger.warning("%s: %s", event, details)

    def __len__(self) -> int:
        return len(self.events)


@dataclass(frozen=True)
class MortalityPanel:
    """Province-by-week death counts for one year (or a baseline average)."""

    provinces: ProvinceIndex
    weeks: WeekIndex
    counts: np.ndarray  # (N_s, N_t), non-negative
    year_label: int

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=float)
        object.__setattr__(self, "counts", counts)
        if counts.shape != (len(self.provinces), len(self.weeks)):
            raise ValidationError(
                f"panel shape {counts.shape} does not match indices "
                f"({len(self.provinces)}, {len(self.weeks)})"
            )
        if not np.all(np.isfinite(counts)):
            raise ValidationError("panel contains non-finite counts")
        if np.any(counts < 0):
            raise ValidationError("negative count in mortality panel")


@dataclass(frozen=True)
class PopulationTable:
    provinces: ProvinceIndex
    pop: np.ndarray  # (N_s,), strictly positive

    def __post_init__(self):
        pop = np.asarray(self.pop, dtype=float)
        object.__setattr__(self, "pop", pop)
        if pop.shape != (len(self.provinces),):
            raise ValidationError("population vector does not match province index")
        if np.any(~np.isfinite(pop)) or np.any(pop <= 0):
            raise ValidationError("non-positive population")


@dataclass(frozen=True)
class MobilityStack:
    """Per-day origin-destination flow matrices in shared province order."""

    provinces: ProvinceIndex
    days: tuple[datetime.date, ...]
    flows: np.ndarray  # (N_d, N_s, N_s), non-negative

    def __post_init__(self):
        flows = np.asarray(self.flows, dtype=float)
        object.__setattr__(self, "flows", flows)
        n = len(self.provinces)
        if flows.shape != (len(self.days), n, n):
            raise ValidationError("flow stack shape does not match indices")
        if np.any(flows < 0) or not np.all(np.isfinite(flows)):
            raise ValidationError("negative flow")


def _read_csv(path, columns) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"input file not found: {path}")
    try:
        df = pd.read_csv(path)
    except pd.errors.EmptyDataError:
        df = pd.DataFrame(columns=columns)
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise ValidationError(f"{path}: missing columns {missing}")
    return df


def load_value_panel(
    path,
    provinces: ProvinceIndex,
    weeks: WeekIndex,
    column: str,
    allow_negative: bool = False,
    allow_missing_value: bool = False,
    log: ValidationLog | None = None,
) -> np.ndarray:
    """Generic province-by-week CSV reader aligned to the shared indices.

    Cells absent from the file are filled with 0 and reported to ``log``;
    unknown provinces, weeks outside the index and duplicate cells are hard
    errors. Death counts additionally reject negatives; derived panels
    (excess, bias) allow them, and bias panels may carry empty cells (NaN).
    """
    path = Path(path)
    df = _read_csv(path, ["province_id", "year", "iso_week", column])
    values = np.zeros((len(provinces), len(weeks)))
    seen = np.zeros(values.shape, dtype=bool)
    for row in df.itertuples(index=False):
        i = provinces.position(str(row.province_id))
        j = weeks.position(int(row.year), int(row.iso_week))
        if seen[i, j]:
            raise ValidationError(
                f"{path}: duplicate cell ({row.province_id}, {row.year}-W{row.iso_week})"
            )
        d = float(getattr(row, column))
        if np.isnan(d) and not allow_missing_value:
            raise ValidationError(
                f"{path}: missing {column} for ({row.province_id}, {row.year}-W{row.iso_week})"
            )
        if not np.isnan(d) and not np.isfinite(d):
            raise ValidationError(f"{path}: non-finite {column}")
        if not allow_negative and d < 0:
            raise ValidationError(
                f"{path}: negative count for ({row.province_id}, {row.year}-W{row.iso_week})"
            )
        values[i, j] = d
        seen[i, j] = True
    if log is not None:
        for i, j in zip(*np.nonzero(~seen)):
            y, w = weeks.weeks[j]
            log.add(
                "missing_cell_zero_filled",
                file=str(path),
                province_id=provinces.ids[i],
                year=y,
                iso_week=w,
            )
    return values


def load_weekly_deaths_panel(
    path,
    provinces: ProvinceIndex,
    weeks: WeekIndex,
    log: ValidationLog | None = None,
) -> MortalityPanel:
    """Load one deaths CSV into a panel aligned to the shared indices.

    Cells absent from the file are filled with 0 and reported to ``log``;
    unknown provinces, weeks outside the index, duplicate cells and negative
    counts are hard errors.
    """
    counts = load_value_panel(path, provinces, weeks, "deaths", log=log)
    years = sorted({y for (y, _) in weeks.weeks})
    return MortalityPanel(provinces, weeks, counts, year_label=years[0])


def load_population(path, provinces: ProvinceIndex) -> PopulationTable:
    """Load the per-province average population (one row per province)."""
    path = Path(path)
    df = _read_csv(path, POPULATION_COLUMNS)
    pop = np.full(len(provinces), np.nan)
    for row in df.itertuples(index=False):
        i = provinces.position(str(row.province_id))
        if not np.isnan(pop[i]):
            raise ValidationError(f"{path}: duplicate province {row.province_id}")
        p = float(row.population)
        if not np.isfinite(p) or p <= 0:
            raise ValidationError(f"{path}: non-positive population for {row.province_id}")
        pop[i] = p
    uncovered = np.nonzero(np.isnan(pop))[0]
    if uncovered.size:
        names = [provinces.ids[i] for i in uncovered]
        raise ValidationError(f"{path}: province uncovered: {names}")
    return PopulationTable(provinces, pop)


def load_mobility_stack(directory, provinces: ProvinceIndex) -> MobilityStack:
    """Load a directory of per-day flow CSVs named ``<YYYY-MM-DD>.csv``.

    Unlisted origin-destination pairs are 0; dates come out sorted ascending.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise ValidationError(f"mobility directory not found: {directory}")
    files = sorted(directory.glob("*.csv"))
    if not files:
        raise ValidationError(f"no mobility CSVs in {directory}")
    n = len(provinces)
    days, mats = [], []
    for f in files:
        try:
            day = datetime.date.fromisoformat(f.stem)
        except ValueError:
            raise ValidationError(f"mobility file name is not a date: {f.name}") from None
        df = _read_csv(f, MOBILITY_COLUMNS)
        mat = np.zeros((n, n))
        seen = np.zeros((n, n), dtype=bool)
        for row in df.itertuples(index=False):
            p = provinces.position(str(row.origin_id))
            q = provinces.position(str(row.destination_id))
            if seen[p, q]:
                raise ValidationError(
                    f"{f}: duplicate pair ({row.origin_id}, {row.destination_id})"
                )
            v = float(row.flow)
            if not np.isfinite(v) or v < 0:
                raise ValidationError(
                    f"{f}: negative flow ({row.origin_id} -> {row.destination_id})"
                )
            mat[p, q] = v
            seen[p, q] = True
        days.append(day)
        mats.append(mat)
    order = np.argsort(days)
    days = tuple(days[k] for k in order)
    flows = np.stack([mats[k] for k in order])
    return MobilityStack(provinces, days, flows)


def write_value_panel(values, provinces, weeks, column: str, path) -> None:
    """Write an aligned matrix in the long province-by-week CSV schema."""
    values = np.asarray(values)
    rows = []
    for i, pid in enumerate(provinces.ids):
        for j, (y, w) in enumerate(weeks.weeks):
            rows.append((pid, y, w, values[i, j]))
    pd.DataFrame(rows, columns=["province_id", "year", "iso_week", column]).to_csv(
        path, index=False
    )


def write_weekly_deaths_panel(panel: MortalityPanel, path) -> None:
    """Write a panel back to the deaths CSV schema (round-trips exactly)."""
    write_value_panel(panel.counts, panel.provinces, panel.weeks, "deaths", path)


def panel_indices_from_csv(path) -> tuple[ProvinceIndex, WeekIndex]:
    """Recover the canonical index ordering from a panel CSV.

    Province and week orderings follow first appearance, which for files
    written by this package is the original index order.
    """
    df = pd.read_csv(Path(path))
    for c in ("province_id", "year", "iso_week"):
        if c not in df.columns:
            raise ValidationError(f"{path}: missing column {c}")
    ids = df["province_id"].astype(str).drop_duplicates().tolist()
    weeks = [
        (int(y), int(w))
        for y, w in dict.fromkeys(zip(df["year"], df["iso_week"]))
    ]
    weeks.sort(key=lambda t: (t[0], t[1]))
    return ProvinceIndex.from_ids(ids), WeekIndex(tuple(weeks))


def write_population(table: PopulationTable, path) -> None:
    pd.DataFrame(
        {"province_id": table.provinces.ids, "population": table.pop}
    ).to_csv(path, index=False)
