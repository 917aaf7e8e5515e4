"""Posterior summaries: variance shares, effect means, fitted values.

All summaries are computed from stored draws. Fitted values are reported on
the original bias scale: the inverse logit is applied to the linear
predictor of every draw first and the transformed values are then averaged,
so the reported mean is the posterior mean of the bias itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bias import inverse_logit
from .errors import ValidationError
from .model import predictor_coefficients
from .sampler import PosteriorDraws


@dataclass(frozen=True)
class VarianceShareSummary:
    """Per-draw variance shares and their posterior summaries.

    The interaction share is computed as the complement of the two main
    shares so every triplet sums to 1.0 exactly in floating point.
    """

    shares: np.ndarray  # (n_total_draws, 3): spatial, temporal, interaction
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    COMPONENTS = ("spatial", "temporal", "interaction")


def variance_share_triplets(phi: np.ndarray, psi: np.ndarray) -> np.ndarray:
    spatial = (1.0 - psi) * phi
    temporal = (1.0 - psi) * (1.0 - phi)
    interaction = 1.0 - (spatial + temporal)
    return np.column_stack([spatial, temporal, interaction])


def variance_shares(draws: PosteriorDraws) -> VarianceShareSummary:
    """Decompose each draw into (spatial, temporal, interaction) shares."""
    if draws.n_draws == 0:
        raise ValidationError("no draws")
    phi = draws.scalar("phi").ravel()
    psi = draws.scalar("psi").ravel()
    shares = variance_share_triplets(phi, psi)
    return VarianceShareSummary(
        shares=shares,
        mean=shares.mean(axis=0),
        lower=np.quantile(shares, 0.025, axis=0),
        upper=np.quantile(shares, 0.975, axis=0),
    )


@dataclass(frozen=True)
class EffectSummary:
    """Pointwise summaries of one random-effect block.

    ``mean``/``lower``/``upper`` describe the effect's contribution to the
    linear predictor (its predictor scale factor applied); the ``unscaled_*``
    columns summarize the unit-variance effect itself.
    """

    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    unscaled_mean: np.ndarray
    unscaled_lower: np.ndarray
    unscaled_upper: np.ndarray


def _summarize_block(block: np.ndarray, scales: np.ndarray) -> EffectSummary:
    contrib = block * scales[:, None]
    return EffectSummary(
        mean=contrib.mean(axis=0),
        lower=np.quantile(contrib, 0.025, axis=0),
        upper=np.quantile(contrib, 0.975, axis=0),
        unscaled_mean=block.mean(axis=0),
        unscaled_lower=np.quantile(block, 0.025, axis=0),
        unscaled_upper=np.quantile(block, 0.975, axis=0),
    )


def summarize_effects(draws: PosteriorDraws) -> tuple[EffectSummary, EffectSummary]:
    """(spatial, temporal) contribution summaries on the predictor scale."""
    if not draws.has_latent:
        raise ValidationError(
            "latent draws were not saved; rerun the fit with save_latent "
            "(CLI flag --save-latent)"
        )
    C, D = draws.n_chains, draws.n_draws
    a = np.array(
        [
            predictor_coefficients(draws.hyper_params(c, d))
            for c in range(C)
            for d in range(D)
        ]
    )
    u = draws.u.reshape(C * D, -1)
    v = draws.v.reshape(C * D, -1)
    return _summarize_block(u, a[:, 0]), _summarize_block(v, a[:, 1])


@dataclass(frozen=True)
class FittedPanel:
    """Posterior mean and quantiles of the fitted bias, original (0, 1) scale."""

    mean: np.ndarray    # (N_s, N_t)
    q025: np.ndarray
    median: np.ndarray
    q975: np.ndarray


def _eta_draws(draws: PosteriorDraws) -> np.ndarray:
    C, D = draws.n_chains, draws.n_draws
    n_s = draws.u.shape[2]
    n_t = draws.v.shape[2]
    a = np.array(
        [
            predictor_coefficients(draws.hyper_params(c, d))
            for c in range(C)
            for d in range(D)
        ]
    )
    u = draws.u.reshape(C * D, n_s)
    v = draws.v.reshape(C * D, n_t)
    w = draws.w.reshape(C * D, n_s * n_t)
    eta = (
        draws.mu.reshape(C * D, 1)
        + a[:, 0:1] * np.repeat(u, n_t, axis=1)
        + a[:, 1:2] * np.tile(v, (1, n_s))
        + a[:, 2:3] * w
    )
    return eta


def fitted_values(draws: PosteriorDraws) -> FittedPanel:
    """Inverse-logit per draw and cell, then summarize across draws."""
    if not draws.has_latent:
        raise ValidationError(
            "latent draws were not saved; rerun the fit with save_latent "
            "(CLI flag --save-latent)"
        )
    n_s = draws.u.shape[2]
    n_t = draws.v.shape[2]
    fitted = inverse_logit(_eta_draws(draws))
    q = np.quantile(fitted, [0.025, 0.5, 0.975], axis=0)
    return FittedPanel(
        mean=fitted.mean(axis=0).reshape(n_s, n_t),
        q025=q[0].reshape(n_s, n_t),
        median=q[1].reshape(n_s, n_t),
        q975=q[2].reshape(n_s, n_t),
    )


def interval_coverage(
    draws: PosteriorDraws, truth: dict, level: float = 0.9
) -> dict:
    """Equal-tailed credible-interval coverage of known true values.

    ``truth`` maps scalar parameter names to their generating values. Used
    by simulation-recovery reports.
    """
    lo_q, hi_q = (1.0 - level) / 2.0, 1.0 - (1.0 - level) / 2.0
    report = {}
    for name, true_value in truth.items():
        x = draws.scalar(name).ravel()
        lo, hi = np.quantile(x, [lo_q, hi_q])
        report[name] = {
            "true": float(true_value),
            "lower": float(lo),
            "upper": float(hi),
            "covered": bool(lo <= true_value <= hi),
            "posterior_mean": float(x.mean()),
        }
    return report
