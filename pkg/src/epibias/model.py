"""Latent Gaussian model: variance decomposition, priors, joint density.

The response is the logit of a bias panel, modelled as Gaussian around a
linear predictor built from an intercept, a spatial effect, a temporal
effect and their interaction. The three component variances are
reparametrized into a total structured variance ``V``, the share ``psi`` of
``V`` taken by the interaction, and the share ``phi`` of the main-effect
variance taken by the spatial effect:

    eta = mu + sqrt(V) * ( sqrt(1 - psi) * [ sqrt(phi)   * u_expanded
                                           + sqrt(1-phi) * v_expanded ]
                         + sqrt(psi) * w )

``u``, ``v``, ``w`` carry fixed unit-scaled structure matrices (see
:mod:`epibias.structure`), so the hyperparameters are interpretable as
variance and variance proportions.

Priors: ``sqrt(V)`` is exponential with rate ``-ln(alpha)/U`` (a penalized
complexity prior with tail statement ``P(sqrt(V) > U) = alpha``); ``phi`` is
uniform on (0, 1); ``psi`` has a penalized complexity prior with distance
``sqrt(psi)`` from the no-interaction base model, truncated to (0, 1] and
renormalized; the observation precision ``1/sigma2_eps`` is Gamma(1, 5e-5);
the intercept is a vague Normal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ValidationError
from .structure import ModelStructures

# Constraint residual beyond which a latent state is considered invalid.
CONSTRAINT_HARD_TOL = 1e-6


@dataclass(frozen=True)
class HyperParams:
    """Hyperparameters of the variance decomposition.

    Values outside the prior support (``V <= 0``, ``phi`` outside (0, 1),
    ``psi`` outside (0, 1], ``sigma2_eps <= 0``) are representable; the
    priors assign them ``-inf`` so samplers reject them.
    """

    V: float
    phi: float
    psi: float
    sigma2_eps: float

    def __post_init__(self):
        for name in ("V", "phi", "psi", "sigma2_eps"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"hyperparameter {name} must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.V, self.phi, self.psi, self.sigma2_eps])


HYPER_NAMES = ("V", "phi", "psi", "sigma2_eps")


@dataclass(frozen=True)
class LatentState:
    """Latent field: intercept, spatial, temporal and interaction effects."""

    mu: float
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))
        object.__setattr__(self, "w", np.asarray(self.w, dtype=float))
        if self.w.shape != (self.u.size * self.v.size,):
            raise ValidationError("interaction length must be len(u) * len(v)")


@dataclass(frozen=True)
class PriorConfig:
    """Prior hyper-settings.

    ``U`` is the tail bound for sqrt(V): in the original application 0.1 for
    the additive metric and 1.0 for the multiplicative one.
    """

    U: float
    alpha: float = 0.05
    lambda_psi: float = 1.0
    eps_prior: tuple[float, float] = (1.0, 5e-5)  # Gamma(shape, rate) on 1/sigma2_eps
    mu_sd: float = math.sqrt(1000.0)
    eps_clamp: float = 1e-4

    def __post_init__(self):
        if self.U <= 0:
            raise ValidationError("U must be positive")
        if not (0.0 < self.alpha < 1.0):
            raise ValidationError("alpha must lie in (0, 1)")
        if self.lambda_psi <= 0:
            raise ValidationError("lambda_psi must be positive")
        shape, rate = self.eps_prior
        if shape <= 0 or rate <= 0:
            raise ValidationError("eps_prior shape and rate must be positive")
        if self.mu_sd <= 0:
            raise ValidationError("mu_sd must be positive")
        if not (0.0 < self.eps_clamp < 0.5):
            raise ValidationError("eps_clamp must lie in (0, 0.5)")

    @classmethod
    def for_response(cls, kind: str, **overrides) -> "PriorConfig":
        """Defaults keyed by the bias metric: U=0.1 additive, U=1 multiplicative."""
        key = kind.value if hasattr(kind, "value") else str(kind)
        if key not in ("additive", "multiplicative"):
            raise ValidationError(f"unknown response kind: {kind!r}")
        overrides.setdefault("U", 0.1 if key == "additive" else 1.0)
        return cls(**overrides)

    @property
    def pc_rate_V(self) -> float:
        return pc_rate(self.U, self.alpha)


def pc_rate(U: float, alpha: float) -> float:
    """Exponential rate lambda with P(sqrt(V) > U) = alpha under Exp(lambda)."""
    if U <= 0:
        raise ValidationError("U must be positive")
    if not (0.0 < alpha < 1.0):
        raise ValidationError("alpha must lie in (0, 1)")
    return -math.log(alpha) / U


def predictor_coefficients(hp: HyperParams) -> tuple[float, float, float]:
    """(a_u, a_v, a_w): scale factors of u, v, w in the linear predictor."""
    V, phi, psi = hp.V, hp.phi, hp.psi
    a_u = math.sqrt(max(V * (1.0 - psi) * phi, 0.0))
    a_v = math.sqrt(max(V * (1.0 - psi) * (1.0 - phi), 0.0))
    a_w = math.sqrt(max(V * psi, 0.0))
    return a_u, a_v, a_w


def linear_predictor(state: LatentState, hp: HyperParams) -> np.ndarray:
    """Province-major predictor: u repeats across weeks, v tiles across provinces."""
    n_s, n_t = state.u.size, state.v.size
    a_u, a_v, a_w = predictor_coefficients(hp)
    return (
        state.mu
        + a_u * np.repeat(state.u, n_t)
        + a_v * np.tile(state.v, n_s)
        + a_w * state.w
    )


def _logpdf_V(V: float, lam: float) -> float:
    # density of V when sqrt(V) ~ Exp(lam)
    if V <= 0:
        return -np.inf
    s = math.sqrt(V)
    return math.log(lam) - lam * s - math.log(2.0) - 0.5 * math.log(V)


def _logpdf_psi(psi: float, lam: float) -> float:
    # PC prior with distance sqrt(psi), truncated to (0, 1] and renormalized
    if not (0.0 < psi <= 1.0):
        return -np.inf
    s = math.sqrt(psi)
    log_norm = math.log1p(-math.exp(-lam))
    return math.log(lam) - lam * s - math.log(2.0) - 0.5 * math.log(psi) - log_norm


def _logpdf_sigma2(sigma2: float, shape: float, rate: float) -> float:
    # Gamma(shape, rate) on the precision, with the change of variable to sigma2
    if sigma2 <= 0:
        return -np.inf
    tau = 1.0 / sigma2
    log_tau_density = (
        shape * math.log(rate)
        - math.lgamma(shape)
        + (shape - 1.0) * math.log(tau)
        - rate * tau
    )
    return log_tau_density - 2.0 * math.log(sigma2)


def log_prior_hyper(hp: HyperParams, cfg: PriorConfig) -> float:
    """Joint log prior of (V, phi, psi, sigma2_eps); -inf outside the support."""
    if not (0.0 < hp.phi < 1.0):
        return -np.inf
    shape, rate = cfg.eps_prior
    lp = (
        _logpdf_V(hp.V, cfg.pc_rate_V)
        + _logpdf_psi(hp.psi, cfg.lambda_psi)
        + _logpdf_sigma2(hp.sigma2_eps, shape, rate)
    )
    return lp  # the uniform phi term contributes 0


def prior_sample_hyper(cfg: PriorConfig, rng: np.random.Generator) -> HyperParams:
    """Exact draw from the hyperparameter prior (used for calibration checks)."""
    lam = cfg.pc_rate_V
    sqrt_v = rng.exponential(1.0 / lam)
    phi = rng.uniform(0.0, 1.0)
    # inverse CDF of the truncated PC prior on psi
    q = rng.uniform(0.0, 1.0)
    lam_psi = cfg.lambda_psi
    sqrt_psi = -math.log1p(-q * (1.0 - math.exp(-lam_psi))) / lam_psi
    shape, rate = cfg.eps_prior
    tau = rng.gamma(shape, 1.0 / rate)
    return HyperParams(V=sqrt_v**2, phi=phi, psi=sqrt_psi**2, sigma2_eps=1.0 / tau)


def gaussian_loglik(y: np.ndarray, eta: np.ndarray, sigma2: float) -> float:
    n = y.size
    resid = y - eta
    return -0.5 * n * math.log(2.0 * math.pi * sigma2) - resid @ resid / (2.0 * sigma2)


def _gmrf_logdensity(x: np.ndarray, Q, rank: int, log_gendet: float) -> float:
    # density on the constraint subspace (generalized determinant over the
    # non-null eigenvalues)
    quad = float(x @ (Q @ x))
    return -0.5 * rank * math.log(2.0 * math.pi) + 0.5 * log_gendet - 0.5 * quad


def joint_log_density(
    y: np.ndarray,
    state: LatentState,
    hp: HyperParams,
    structures: ModelStructures,
    cfg: PriorConfig,
) -> float:
    """Log of likelihood x latent GMRF priors x intercept prior x hyperprior.

    The latent state must satisfy the sum-to-zero constraints; a violation
    above ``1e-6`` is a hard error rather than a density value.
    """
    violation = structures.constraint_violation(state.u, state.v, state.w)
    if violation > CONSTRAINT_HARD_TOL:
        raise NumericalError(
            f"latent state violates sum-to-zero constraints by {violation:.3e}"
        )
    y = np.asarray(y, dtype=float)
    eta = linear_predictor(state, hp)
    if y.shape != eta.shape:
        raise ValidationError("response length does not match the model dimensions")
    s, t, inter = structures.spatial, structures.temporal, structures.interaction
    lp = gaussian_loglik(y, eta, hp.sigma2_eps)
    lp += _gmrf_logdensity(state.u, s.Q_u, s.rank, s.log_gendet)
    lp += _gmrf_logdensity(state.v, t.Q_v, t.rank, t.log_gendet)
    lp += _gmrf_logdensity(state.w, inter.Q_w, inter.rank, inter.log_gendet)
    lp += -0.5 * math.log(2.0 * math.pi * cfg.mu_sd**2) - state.mu**2 / (2.0 * cfg.mu_sd**2)
    lp += log_prior_hyper(hp, cfg)
    return float(lp)
