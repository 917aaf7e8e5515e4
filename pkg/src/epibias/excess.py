"""Weekly excess-mortality estimation.

The expected mortality level is the cell-wise mean of the baseline years
(2015-2019 in the original application). The epidemic-year series is noisy,
so a short centered moving average is applied to it before subtraction; the
multi-year baseline is already smooth and is left untouched.

Baseline years are aligned to the epidemic year by ISO week number, so
panels "share indices" when provinces are identical and the week-of-year
sequences agree, even though the calendar year tags differ.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .indices import ProvinceIndex, WeekIndex
from .ingest import MortalityPanel


@dataclass(frozen=True)
class ExcessPanel:
    """Estimated excess deaths per province and week (may be negative)."""

    provinces: ProvinceIndex
    weeks: WeekIndex
    dhat: np.ndarray  # (N_s, N_t)

    def __post_init__(self):
        dhat = np.asarray(self.dhat, dtype=float)
        object.__setattr__(self, "dhat", dhat)
        if dhat.shape != (len(self.provinces), len(self.weeks)):
            raise ValidationError("excess panel shape does not match indices")
        if not np.all(np.isfinite(dhat)):
            raise ValidationError("excess panel contains non-finite values")


def check_aligned(a, b, what: str = "panels") -> None:
    """Require identical provinces and matching ISO week-of-year sequences."""
    if a.provinces.ids != b.provinces.ids:
        raise ValidationError(f"index mismatch: {what} have different province rosters")
    if a.weeks.iso_weeks() != b.weeks.iso_weeks():
        raise ValidationError(f"index mismatch: {what} cover different ISO weeks")


def compute_baseline(panels: list[MortalityPanel]) -> MortalityPanel:
    """Cell-wise arithmetic mean of the baseline-year panels."""
    if not panels:
        raise ValidationError("no baseline panels given")
    first = panels[0]
    for p in panels[1:]:
        check_aligned(first, p, "baseline panels")
    counts = np.mean([p.counts for p in panels], axis=0)
    return MortalityPanel(first.provinces, first.weeks, counts, year_label=0)


def smooth_series(panel: MortalityPanel, window: int) -> MortalityPanel:
    """Centered moving average per province, truncated at the boundaries.

    At the series ends the window shrinks to the available weeks, so for
    window=3 the first and last cells are means of 2 values. The window must
    be odd, positive and no longer than the series.
    """
    if window <= 0 or window % 2 == 0:
        raise ValidationError(f"window must be an odd positive integer, got {window}")
    n_t = len(panel.weeks)
    if window > n_t:
        raise ValidationError(f"window {window} exceeds series length {n_t}")
    half = window // 2
    counts = panel.counts
    smoothed = np.empty_like(counts)
    for j in range(n_t):
        lo, hi = max(0, j - half), min(n_t, j + half + 1)
        smoothed[:, j] = counts[:, lo:hi].mean(axis=1)
    return MortalityPanel(panel.provinces, panel.weeks, smoothed, panel.year_label)


def compute_excess(
    current: MortalityPanel, baseline: MortalityPanel, window: int = 3
) -> ExcessPanel:
    """Excess mortality: smoothed epidemic-year counts minus the baseline.

    Negative cells are preserved here; the bias module decides their fate.
    """
    check_aligned(current, baseline, "current/baseline")
    smoothed = smooth_series(current, window) if window > 1 else current
    dhat = smoothed.counts - baseline.counts
    return ExcessPanel(current.provinces, current.weeks, dhat)
