"""Under-reporting bias metrics and the logit-scale model response.

Two metrics compare estimated excess deaths ``dhat`` with officially
reported epidemic deaths ``Y``:

* additive: ``1000 * (dhat - Y) / POP`` -- per-mille share of the population
  that died of the epidemic without being reported (impact measure);
* multiplicative: ``1 - Y / dhat`` -- probability that an epidemic death
  went unreported (reporting-quality measure).

Both are theoretically in [0, 1] but exceed those bounds in practice, so
before the logit transform negatives (and cells where the multiplicative
ratio is undefined) are treated as 0 and everything is clamped into
``[eps, 1 - eps]``. Every modified cell is recorded for audit.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.special

from .errors import ValidationError
from .excess import ExcessPanel, check_aligned
from .indices import ProvinceIndex, WeekIndex
from .ingest import MortalityPanel, PopulationTable


class BiasKind(enum.Enum):
    ADDITIVE = "additive"
    MULTIPLICATIVE = "multiplicative"


@dataclass(frozen=True)
class BiasPanel:
    """Province-by-week bias values.

    Raw panels may hold negatives and NaN (undefined multiplicative cells);
    panels returned by :func:`prepare_panel` hold values in (0, 1) and list
    every modified cell in ``clamped_cells`` as ``(i, j, original_value)``.
    """

    provinces: ProvinceIndex
    weeks: WeekIndex
    values: np.ndarray
    kind: BiasKind
    clamped_cells: tuple[tuple[int, int, float], ...] = field(default=())

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if values.shape != (len(self.provinces), len(self.weeks)):
            raise ValidationError("bias panel shape does not match indices")


@dataclass(frozen=True)
class ResponseVector:
    """Logit-transformed bias, flattened province-major.

    Entry ``(i, j)`` of the panel lands at position ``i * N_t + j``. The
    prepared (0, 1) panel and the clamp audit trail ride along so callers
    can persist them.
    """

    y: np.ndarray  # (N_s * N_t,)
    provinces: ProvinceIndex
    weeks: WeekIndex
    kind: BiasKind
    prepared: np.ndarray  # (N_s, N_t) values in (0, 1)
    clamped_cells: tuple[tuple[int, int, float], ...]


def additive_bias(
    excess: ExcessPanel, official: MortalityPanel, pop: PopulationTable
) -> BiasPanel:
    """Per-mille unreported mortality: ``1000 * (dhat - Y) / POP_i``."""
    check_aligned(excess, official, "excess/official")
    if excess.provinces.ids != pop.provinces.ids:
        raise ValidationError("index mismatch: population roster differs")
    values = 1000.0 * (excess.dhat - official.counts) / pop.pop[:, None]
    return BiasPanel(excess.provinces, excess.weeks, values, BiasKind.ADDITIVE)


def multiplicative_bias(excess: ExcessPanel, official: MortalityPanel) -> BiasPanel:
    """Unreported share of excess deaths: ``1 - Y / dhat``.

    Cells with ``dhat <= 0`` have no defined ratio and come out as NaN;
    :func:`prepare_panel` later treats them as "no excess mortality" (0).
    """
    check_aligned(excess, official, "excess/official")
    values = np.full(excess.dhat.shape, np.nan)
    ok = excess.dhat > 0
    values[ok] = 1.0 - official.counts[ok] / excess.dhat[ok]
    return BiasPanel(excess.provinces, excess.weeks, values, BiasKind.MULTIPLICATIVE)


def _check_eps(eps: float) -> None:
    if not (0.0 < eps < 0.5):
        raise ValidationError(f"eps must lie in (0, 0.5), got {eps}")


def prepare_panel(panel: BiasPanel, eps: float = 1e-4) -> BiasPanel:
    """Apply the negative/undefined rule and clamp into ``[eps, 1 - eps]``.

    Undefined (NaN) and negative cells become 0 first, then all values are
    clamped. Cells whose value changed are recorded with their original
    value.
    """
    _check_eps(eps)
    original = panel.values
    values = np.where(np.isnan(original) | (original < 0), 0.0, original)
    values = np.clip(values, eps, 1.0 - eps)
    changed = ~(values == original)  # NaN != itself, so NaN cells count as changed
    clamped = tuple(
        (int(i), int(j), float(original[i, j])) for i, j in zip(*np.nonzero(changed))
    )
    return BiasPanel(panel.provinces, panel.weeks, values, panel.kind, clamped)


def logit(v):
    """ln(v / (1 - v))."""
    return scipy.special.logit(np.asarray(v, dtype=float))


def inverse_logit(x):
    return scipy.special.expit(np.asarray(x, dtype=float))


def prepare_response(panel: BiasPanel, eps: float = 1e-4) -> ResponseVector:
    """Prepared panel -> logit -> province-major response vector."""
    prepared = prepare_panel(panel, eps)
    y = logit(prepared.values).ravel(order="C")
    return ResponseVector(
        y=y,
        provinces=panel.provinces,
        weeks=panel.weeks,
        kind=panel.kind,
        prepared=prepared.values,
        clamped_cells=prepared.clamped_cells,
    )
