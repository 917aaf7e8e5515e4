"""MCMC engine for the latent Gaussian model.

Each iteration alternates two moves:

* an exact draw of the whole latent block (mu, u, v, w) from its Gaussian
  full conditional. The joint precision is assembled sparse, factorized
  with a fill-reducing ordering (CHOLMOD symbolic analysis is done once per
  sparsity pattern, numeric refactorization per iteration), and the
  sum-to-zero constraints are enforced exactly by conditioning by kriging;
* adaptive random-walk Metropolis updates of the hyperparameters on
  transformed scales (log V, logit phi, logit psi, log precision), one
  coordinate at a time. Step sizes are tuned toward a target acceptance
  rate during warmup and frozen afterwards.

Because the improper latent priors alone leave the intercept/main-effect/
interaction decomposition unidentified, the unconstrained full-conditional
precision is singular; a multiple of ``A'A`` (constraints ``A``) is added,
which leaves the distribution on the constraint subspace untouched and
makes the matrix positive definite.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.special
import scipy.stats

from .errors import NumericalError, ValidationError
from .model import (
    HYPER_NAMES,
    HyperParams,
    LatentState,
    PriorConfig,
    _logpdf_V,
    _logpdf_psi,
    _logpdf_sigma2,
    joint_log_density,
    predictor_coefficients,
)
from .structure import ModelStructures

try:
    from cvxopt import cholmod as _cholmod
    from cvxopt import matrix as _cvx_matrix
    from cvxopt import spmatrix as _cvx_spmatrix

    HAVE_CHOLMOD = True
except ImportError:  # pragma: no cover - cvxopt is a declared dependency
    HAVE_CHOLMOD = False

CONSTRAINT_DRAW_TOL = 1e-8


@dataclass(frozen=True)
class ChainConfig:
    """Sampler run configuration.

    ``fixed`` pins hyperparameters to constants (their Metropolis updates
    are skipped), which is used by degenerate-model validation tests.
    """

    n_chains: int = 4
    n_warmup: int = 2000
    n_draws: int = 2000
    thin: int = 1
    seed: int = 0
    adapt_target: float = 0.44
    step_init: float = 0.5
    hyper_sweeps: int = 5
    save_latent: bool = False
    backend: str = "auto"  # "cholmod", "dense" or "auto"
    threads: int = 1
    fixed: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_chains < 2:
            raise ValidationError("need at least 2 chains for diagnostics")
        if min(self.n_warmup, self.n_draws, self.thin) <= 0:
            raise ValidationError("n_warmup, n_draws and thin must be positive")
        if not (0.0 < self.adapt_target < 1.0):
            raise ValidationError("adapt_target must lie in (0, 1)")
        if self.step_init <= 0:
            raise ValidationError("step_init must be positive")
        if self.backend not in ("auto", "cholmod", "dense"):
            raise ValidationError(f"unknown backend: {self.backend!r}")
        unknown = set(self.fixed) - set(HYPER_NAMES)
        if unknown:
            raise ValidationError(f"unknown fixed hyperparameters: {sorted(unknown)}")


def _resolve_backend(name: str) -> str:
    if name == "auto":
        return "cholmod" if HAVE_CHOLMOD else "dense"
    if name == "cholmod" and not HAVE_CHOLMOD:
        raise ValidationError("cholmod backend requested but cvxopt is not available")
    return name


class _CholmodBackend:
    """Sparse Cholesky of the lower-triangular union pattern via CHOLMOD."""

    def __init__(self, pattern: sp.csc_matrix):
        _cholmod.options["supernodal"] = 2  # LL' factorization
        n = pattern.shape[0]
        cols = np.repeat(np.arange(n), np.diff(pattern.indptr))
        self._I = _cvx_matrix(pattern.indices.astype(np.int64).tolist(), tc="i")
        self._J = _cvx_matrix(cols.astype(np.int64).tolist(), tc="i")
        self._n = n
        self._A = _cvx_spmatrix(
            _cvx_matrix(np.ones(pattern.nnz)), self._I, self._J, (n, n)
        )
        self._F = _cholmod.symbolic(self._A)

    def refactor(self, values: np.ndarray) -> None:
        # values must be in CSC order of the union pattern
        self._A.V = _cvx_matrix(values)
        try:
            _cholmod.numeric(self._A, self._F)
        except ArithmeticError as exc:
            raise NumericalError(
                "sparse Cholesky factorization failed (matrix not positive "
                f"definite; diagonal range [{values.min():.3e}, {values.max():.3e}])"
            ) from exc

    def solve(self, B: np.ndarray) -> np.ndarray:
        X = _cvx_matrix(np.asarray(B, dtype=float))
        _cholmod.solve(self._F, X, sys=0)
        return np.array(X).reshape(np.asarray(B).shape)

    def sqrt_solve(self, z: np.ndarray) -> np.ndarray:
        """Return P' L^{-T} z, a standard draw mapped to covariance Q^{-1}."""
        X = _cvx_matrix(z)
        _cholmod.solve(self._F, X, sys=5)  # L' x = z
        _cholmod.solve(self._F, X, sys=8)  # x = P' x
        return np.array(X).ravel()


class _DenseBackend:
    """Dense Cholesky fallback with identical semantics."""

    def __init__(self, pattern: sp.csc_matrix):
        n = pattern.shape[0]
        self._rows = pattern.indices
        self._cols = np.repeat(np.arange(n), np.diff(pattern.indptr))
        self._Q = np.zeros((n, n))
        self._chol = None

    def refactor(self, values: np.ndarray) -> None:
        Q = self._Q
        Q.fill(0.0)
        Q[self._rows, self._cols] = values
        Q[self._cols, self._rows] = values
        try:
            self._chol = scipy.linalg.cho_factor(Q, lower=True)
        except scipy.linalg.LinAlgError as exc:
            raise NumericalError(
                "dense Cholesky factorization failed (matrix not positive definite)"
            ) from exc

    def solve(self, B: np.ndarray) -> np.ndarray:
        return scipy.linalg.cho_solve(self._chol, B)

    def sqrt_solve(self, z: np.ndarray) -> np.ndarray:
        return scipy.linalg.solve_triangular(
            self._chol[0], z, lower=True, trans="T"
        )


class LatentSystem:
    """Assembled full-conditional system for the latent block.

    The precision has a fixed sparsity pattern; only a handful of scalar
    coefficients (products of the predictor scales and the observation
    precision) change across iterations, so the per-term value vectors are
    precomputed and combined per draw.
    """

    def __init__(
        self,
        y: np.ndarray,
        structures: ModelStructures,
        prior_cfg: PriorConfig,
        backend: str = "auto",
    ):
        y = np.asarray(y, dtype=float)
        n_s, n_t = structures.n_s, structures.n_t
        N = n_s * n_t
        if y.shape != (N,):
            raise ValidationError(
                f"response length {y.size} does not match N_s*N_t = {N}"
            )
        self.structures = structures
        self.n_s, self.n_t, self.N = n_s, n_t, N
        self.n = 1 + n_s + n_t + N
        self.set_response(y)

        sl_u = slice(1, 1 + n_s)
        sl_v = slice(1 + n_s, 1 + n_s + n_t)
        sl_w = slice(1 + n_s + n_t, self.n)
        self.slices = (sl_u, sl_v, sl_w)

        A = self._build_constraints()
        self.A = A.tocsr()
        self._AT_dense = np.asarray(A.todense()).T

        # union sparsity pattern in canonical CSC order, with each term's
        # values scattered to aligned positions (keys sort by column, then row)
        terms = [T.tocoo() for T in self._build_terms(prior_cfg)]
        n = self.n
        keys = np.unique(
            np.concatenate([T.col.astype(np.int64) * n + T.row for T in terms])
        )
        indices = (keys % n).astype(np.int32)
        col_counts = np.bincount((keys // n).astype(np.int64), minlength=n)
        indptr = np.concatenate([[0], np.cumsum(col_counts)]).astype(np.int32)
        pattern = sp.csc_matrix(
            (np.zeros(keys.size), indices, indptr), shape=(n, n)
        )
        self.pattern = pattern
        data = np.zeros((keys.size, len(terms)))
        for k, T in enumerate(terms):
            pos = np.searchsorted(keys, T.col.astype(np.int64) * n + T.row)
            np.add.at(data[:, k], pos, T.data)
        self._term_data = data

        backend = _resolve_backend(backend)
        self.backend_name = backend
        cls = _CholmodBackend if backend == "cholmod" else _DenseBackend
        self._backend = cls(pattern)
        self._last_hp = None

    def set_response(self, y: np.ndarray) -> None:
        """Swap the response; the precision pattern does not depend on it."""
        y = np.asarray(y, dtype=float)
        if y.shape != (self.N,):
            raise ValidationError("response length does not match the system")
        self.y = y
        self._su = y.reshape(self.n_s, self.n_t).sum(axis=1)
        self._sv = y.reshape(self.n_s, self.n_t).sum(axis=0)
        self._sy = float(y.sum())
        self._last_hp = None

    def _build_constraints(self) -> sp.csr_matrix:
        s = self.structures
        A_u = sp.csr_matrix(s.spatial.constraint_matrix())
        A_v = sp.csr_matrix(s.temporal.constraint_matrix())
        A_w = s.interaction.constraints
        blocks = sp.block_diag([A_u, A_v, A_w], format="csr")
        zero_mu = sp.csr_matrix((blocks.shape[0], 1))
        return sp.hstack([zero_mu, blocks], format="csr")

    def _build_terms(self, prior_cfg: PriorConfig) -> list[sp.csc_matrix]:
        """Constant matrices T_k with Q(hp) = sum_k coef_k(hp) * T_k (lower tri)."""
        s = self.structures
        n_s, n_t, N, n = self.n_s, self.n_t, self.N, self.n
        sl_u, sl_v, sl_w = self.slices
        i_u = np.arange(sl_u.start, sl_u.stop)
        i_v = np.arange(sl_v.start, sl_v.stop)
        i_w = np.arange(sl_w.start, sl_w.stop)

        prior = sp.block_diag(
            [
                sp.csc_matrix(np.array([[1.0 / prior_cfg.mu_sd**2]])),
                s.spatial.Q_u,
                s.temporal.Q_v,
                s.interaction.Q_w,
            ],
            format="csc",
        )
        # kappa * A'A regularizes the constrained directions; any positive
        # kappa on the scale of the prior diagonal works since the kriging
        # correction removes its effect exactly on the constraint subspace.
        diag_prior = prior.diagonal()
        kappa = float(np.mean(diag_prior[1:]))
        AtA = (self.A.T @ self.A) * kappa
        t_const = sp.tril(prior + AtA, format="csc")

        def co(rows, cols, vals):
            return sp.csc_matrix((vals, (rows, cols)), shape=(n, n))

        ones = np.ones
        # province of every interaction cell, and week of every cell
        prov_of_w = np.repeat(np.arange(n_s), n_t)
        week_of_w = np.tile(np.arange(n_t), n_s)

        t_mu = co([0], [0], [float(N)])
        t_u_mu = co(i_u, np.zeros(n_s, int), np.full(n_s, float(n_t)))
        t_v_mu = co(i_v, np.zeros(n_t, int), np.full(n_t, float(n_s)))
        t_w_mu = co(i_w, np.zeros(N, int), ones(N))
        t_uu = co(i_u, i_u, np.full(n_s, float(n_t)))
        vv, uu = np.meshgrid(i_v, i_u, indexing="ij")
        t_vu = co(vv.ravel(), uu.ravel(), ones(n_s * n_t))
        t_wu = co(i_w, i_u[prov_of_w], ones(N))
        t_vv = co(i_v, i_v, np.full(n_t, float(n_s)))
        t_wv = co(i_w, i_v[week_of_w], ones(N))
        t_ww = co(i_w, i_w, ones(N))
        return [t_const, t_mu, t_u_mu, t_v_mu, t_w_mu, t_uu, t_vu, t_wu, t_vv, t_wv, t_ww]

    @staticmethod
    def _coefs(hp: HyperParams) -> np.ndarray:
        a_u, a_v, a_w = predictor_coefficients(hp)
        tau = 1.0 / hp.sigma2_eps
        return np.array(
            [
                1.0,
                tau,
                tau * a_u,
                tau * a_v,
                tau * a_w,
                tau * a_u**2,
                tau * a_u * a_v,
                tau * a_u * a_w,
                tau * a_v**2,
                tau * a_v * a_w,
                tau * a_w**2,
            ]
        )

    def _refactor(self, hp: HyperParams) -> None:
        if hp.sigma2_eps <= 0:
            raise NumericalError("observation variance must be positive")
        self._backend.refactor(self._term_data @ self._coefs(hp))
        a_u, a_v, a_w = predictor_coefficients(hp)
        tau = 1.0 / hp.sigma2_eps
        b = np.empty(self.n)
        b[0] = tau * self._sy
        sl_u, sl_v, sl_w = self.slices
        b[sl_u] = tau * a_u * self._su
        b[sl_v] = tau * a_v * self._sv
        b[sl_w] = tau * a_w * self.y
        # one multi-RHS solve covers the unconstrained mean and the kriging block
        X = self._backend.solve(np.column_stack([b, self._AT_dense]))
        self._mean = X[:, 0]
        W = X[:, 1:]
        S = self.A @ W
        self._W = W
        self._S_chol = scipy.linalg.cho_factor(S)
        self._last_hp = hp

    def _project(self, x: np.ndarray) -> np.ndarray:
        # conditioning by kriging; a second pass mops up rounding residue
        for _ in range(2):
            resid = self.A @ x
            x = x - self._W @ scipy.linalg.cho_solve(self._S_chol, resid)
        return x

    def _to_state(self, x: np.ndarray) -> LatentState:
        sl_u, sl_v, sl_w = self.slices
        return LatentState(mu=float(x[0]), u=x[sl_u], v=x[sl_v], w=x[sl_w])

    def constrained_mean(self, hp: HyperParams) -> LatentState:
        """Mean of the constrained Gaussian full conditional (deterministic)."""
        self._refactor(hp)
        return self._to_state(self._project(self._mean.copy()))

    def draw(self, hp: HyperParams, rng: np.random.Generator) -> LatentState:
        """Exact draw from the constrained full conditional of (mu, u, v, w)."""
        self._refactor(hp)
        z = rng.standard_normal(self.n)
        x = self._project(self._mean + self._backend.sqrt_solve(z))
        violation = float(np.abs(self.A @ x).max())
        if violation > CONSTRAINT_DRAW_TOL:
            raise NumericalError(
                f"constraint projection left residual {violation:.3e}"
            )
        return self._to_state(x)


def sample_latent(
    y,
    hp: HyperParams,
    structures: ModelStructures,
    rng: np.random.Generator,
    prior_cfg: PriorConfig,
    backend: str = "auto",
) -> LatentState:
    """One exact draw of the latent block (convenience wrapper).

    Builds the assembled system on every call; chains reuse a persistent
    :class:`LatentSystem` instead.
    """
    y = np.asarray(getattr(y, "y", y), dtype=float)
    return LatentSystem(y, structures, prior_cfg, backend).draw(hp, rng)


def accept_log_ratio(log_ratio: float, rng: np.random.Generator) -> bool:
    """Metropolis accept rule; a zero log-ratio always accepts."""
    if log_ratio >= 0:
        return True
    return rng.uniform() < math.exp(log_ratio)


_TRANSFORMS = {
    "V": (math.log, math.exp),
    "phi": (scipy.special.logit, scipy.special.expit),
    "psi": (scipy.special.logit, scipy.special.expit),
    "sigma2_eps": (lambda s: -math.log(s), lambda t: math.exp(-t)),  # log precision
}


def _coord_log_prior(name: str, value: float, cfg: PriorConfig) -> float:
    if name == "V":
        return _logpdf_V(value, cfg.pc_rate_V)
    if name == "phi":
        return 0.0 if 0.0 < value < 1.0 else -np.inf
    if name == "psi":
        return _logpdf_psi(value, cfg.lambda_psi)
    shape, rate = cfg.eps_prior
    return _logpdf_sigma2(value, shape, rate)


def _coord_log_jacobian(name: str, value: float) -> float:
    # |d value / d transformed|, for the change of variables in the target
    if value <= 0 or (name in ("phi", "psi") and value >= 1):
        return -np.inf
    if name in ("phi", "psi"):
        return math.log(value) + math.log1p(-value)
    return math.log(value)


class HyperSampler:
    """Adaptive Metropolis over the free hyperparameters.

    Two families of moves, both with step sizes tuned during warmup:

    * coordinate-wise random walks on transformed scales. The latent state
      is fixed during a sweep, so the Gaussian likelihood is cached as a
      small Gram system and each proposal costs O(1);
    * interweaved rescaling moves that change (V, psi, phi) together with a
      compensating rescaling of (u, v, w) keeping the linear predictor
      fixed. These traverse the centered parametrization's easy direction,
      which the coordinate moves cannot reach because the amplitude of the
      latent field and the variance parameters are tightly coupled.
    """

    _SCALE_MOVES = ("scale_V", "scale_psi", "scale_phi")

    def __init__(
        self,
        y: np.ndarray,
        prior_cfg: PriorConfig,
        cfg: ChainConfig,
        structures: ModelStructures | None = None,
    ):
        self.y = np.asarray(y, dtype=float)
        self.N = self.y.size
        self.prior_cfg = prior_cfg
        self.cfg = cfg
        self.structures = structures
        self.free = [n for n in HYPER_NAMES if n not in cfg.fixed]
        moves = list(self.free)
        if structures is not None:
            if "V" not in cfg.fixed:
                moves.append("scale_V")
            if "psi" not in cfg.fixed:
                moves.append("scale_psi")
            if "phi" not in cfg.fixed:
                moves.append("scale_phi")
        self.log_steps = {n: math.log(cfg.step_init) for n in moves}
        self.adapting = True
        self._adapt_count = {n: 0 for n in moves}
        self.accept_counts = {n: 0 for n in moves}
        self.proposal_counts = {n: 0 for n in moves}
        self._state = None

    def set_response(self, y: np.ndarray) -> None:
        self.y = np.asarray(y, dtype=float)

    def set_latent(self, state: LatentState, n_t: int) -> None:
        n_s = state.u.size
        basis = np.vstack(
            [np.repeat(state.u, n_t), np.tile(state.v, n_s), state.w]
        )
        r0 = self.y - state.mu
        self._G = basis @ basis.T
        self._g = basis @ r0
        self._r0r0 = float(r0 @ r0)
        self._state = state
        if self.structures is not None:
            s = self.structures
            self._quad = np.array(
                [
                    float(state.u @ (s.spatial.Q_u @ state.u)),
                    float(state.v @ (s.temporal.Q_v @ state.v)),
                    float(state.w @ (s.interaction.Q_w @ state.w)),
                ]
            )

    def _loglik(self, hp: HyperParams) -> float:
        a = np.array(predictor_coefficients(hp))
        rss = self._r0r0 - 2.0 * (a @ self._g) + a @ self._G @ a
        return -0.5 * self.N * math.log(2.0 * math.pi * hp.sigma2_eps) - rss / (
            2.0 * hp.sigma2_eps
        )

    def _coord_target(self, hp: HyperParams, name: str) -> float:
        value = getattr(hp, name)
        lp = _coord_log_prior(name, value, self.prior_cfg)
        if not np.isfinite(lp):
            return -np.inf
        return self._loglik(hp) + lp + _coord_log_jacobian(name, value)

    def _adapt(self, name: str, delta: float) -> None:
        if not self.adapting:
            return
        self._adapt_count[name] += 1
        t = self._adapt_count[name]
        gamma = min(0.25, t ** -0.6)
        alpha = min(1.0, math.exp(min(delta, 0.0)))
        self.log_steps[name] += gamma * (alpha - self.cfg.adapt_target)

    def step_coord(self, hp: HyperParams, name: str, rng: np.random.Generator):
        fwd, inv = _TRANSFORMS[name]
        theta = fwd(getattr(hp, name))
        step = math.exp(self.log_steps[name])
        proposal_value = inv(theta + step * rng.standard_normal())
        proposed = replace(hp, **{name: proposal_value})
        delta = self._coord_target(proposed, name) - self._coord_target(hp, name)
        accepted = accept_log_ratio(delta, rng)
        self.proposal_counts[name] += 1
        if accepted:
            hp = proposed
            self.accept_counts[name] += 1
        self._adapt(name, delta)
        return hp, accepted

    def sweep(self, hp: HyperParams, rng: np.random.Generator) -> HyperParams:
        for name in self.free:
            hp, _ = self.step_coord(hp, name, rng)
        return hp

    # -- interweaved rescaling moves -----------------------------------------
    #
    # Each proposes a new value of one variance-decomposition parameter and
    # rescales the latent blocks so the linear predictor (hence the
    # likelihood) is unchanged. Acceptance combines the parameter's prior
    # ratio, the change of the GMRF exponents, and the Jacobian of the
    # deterministic rescaling restricted to the constraint subspaces (one
    # factor per effective dimension, i.e. structure rank).

    def _ranks(self) -> tuple[int, int, int]:
        s = self.structures
        return s.spatial.rank, s.temporal.rank, s.interaction.rank

    def _apply_scaling(self, factors: np.ndarray) -> None:
        # refresh cached Gram pieces after u, v, w were divided by `factors`
        inv = 1.0 / factors
        self._G *= np.outer(inv, inv)
        self._g *= inv
        self._quad *= inv**2

    def _scale_move(self, hp, name, rng):
        """Shared engine: name picks which parameter drives the rescaling."""
        r_u, r_v, r_w = self._ranks()
        step = math.exp(self.log_steps[name])
        delta_theta = step * rng.standard_normal()
        if name == "scale_V":
            V_new = hp.V * math.exp(delta_theta)
            if V_new <= 0 or not math.isfinite(V_new):
                return hp, -np.inf, None
            c = math.sqrt(V_new / hp.V)
            factors = np.array([c, c, c])
            prior_delta = _logpdf_V(V_new, self.prior_cfg.pc_rate_V) - _logpdf_V(
                hp.V, self.prior_cfg.pc_rate_V
            )
            log_jac = 2.0 * math.log(c)
            proposed = replace(hp, V=V_new)
        elif name == "scale_psi":
            psi_new = float(scipy.special.expit(scipy.special.logit(hp.psi) + delta_theta))
            if not (0.0 < psi_new < 1.0) or not (0.0 < hp.psi < 1.0):
                return hp, -np.inf, None
            c_m = math.sqrt((1.0 - psi_new) / (1.0 - hp.psi))
            c_w = math.sqrt(psi_new / hp.psi)
            factors = np.array([c_m, c_m, c_w])
            lam = self.prior_cfg.lambda_psi
            prior_delta = _logpdf_psi(psi_new, lam) - _logpdf_psi(hp.psi, lam)
            log_jac = (
                math.log(psi_new) + math.log1p(-psi_new)
                - math.log(hp.psi) - math.log1p(-hp.psi)
            )
            proposed = replace(hp, psi=psi_new)
        else:  # scale_phi
            phi_new = float(scipy.special.expit(scipy.special.logit(hp.phi) + delta_theta))
            if not (0.0 < phi_new < 1.0) or not (0.0 < hp.phi < 1.0):
                return hp, -np.inf, None
            c_u = math.sqrt(phi_new / hp.phi)
            c_v = math.sqrt((1.0 - phi_new) / (1.0 - hp.phi))
            factors = np.array([c_u, c_v, 1.0])
            prior_delta = 0.0
            log_jac = (
                math.log(phi_new) + math.log1p(-phi_new)
                - math.log(hp.phi) - math.log1p(-hp.phi)
            )
            proposed = replace(hp, phi=phi_new)

        inv_sq = 1.0 / factors**2
        quad_delta = -0.5 * float(self._quad @ (inv_sq - 1.0))
        log_jac -= float(np.array([r_u, r_v, r_w]) @ np.log(factors))
        log_ratio = prior_delta + quad_delta + log_jac
        return proposed, log_ratio, factors

    def scale_moves(self, hp: HyperParams, state: LatentState, rng):
        """Apply each enabled rescaling move once; returns updated (hp, state)."""
        if self.structures is None:
            return hp, state
        for name in self._SCALE_MOVES:
            if name not in self.log_steps:
                continue
            proposed, log_ratio, factors = self._scale_move(hp, name, rng)
            self.proposal_counts[name] += 1
            accepted = np.isfinite(log_ratio) and accept_log_ratio(log_ratio, rng)
            if accepted:
                self.accept_counts[name] += 1
                state = LatentState(
                    mu=state.mu,
                    u=state.u / factors[0],
                    v=state.v / factors[1],
                    w=state.w / factors[2],
                )
                self._apply_scaling(factors)
                hp = proposed
            self._adapt(name, log_ratio if np.isfinite(log_ratio) else -np.inf)
        return hp, state


def update_hyper(
    current: HyperParams,
    state: LatentState,
    y,
    structures: ModelStructures,
    prior_cfg: PriorConfig,
    rng: np.random.Generator,
    step_sizes: dict | None = None,
    cfg: ChainConfig | None = None,
):
    """One non-adaptive Metropolis cycle over the hyperparameter coordinates.

    Returns the (possibly moved) hyperparameters and a per-coordinate
    acceptance dict. Chains use the persistent :class:`HyperSampler`.
    """
    cfg = cfg or ChainConfig()
    y = np.asarray(getattr(y, "y", y), dtype=float)
    sampler = HyperSampler(y, prior_cfg, cfg)
    sampler.adapting = False
    if step_sizes:
        for name, s in step_sizes.items():
            sampler.log_steps[name] = math.log(s)
    sampler.set_latent(state, structures.n_t)
    accepted = {}
    for name in sampler.free:
        current, accepted[name] = sampler.step_coord(current, name, rng)
    return current, accepted


@dataclass
class PosteriorDraws:
    """Stored MCMC draws, indexed by chain and (post-thinning) iteration.

    ``hyper`` is (n_chains, n_draws, 4) ordered as ``HYPER_NAMES``; latent
    blocks are present only when the run saved them.
    """

    hyper: np.ndarray
    mu: np.ndarray
    logdens: np.ndarray
    u: np.ndarray | None = None
    v: np.ndarray | None = None
    w: np.ndarray | None = None
    accept_rates: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @property
    def n_chains(self) -> int:
        return self.hyper.shape[0]

    @property
    def n_draws(self) -> int:
        return self.hyper.shape[1]

    @property
    def has_latent(self) -> bool:
        return self.u is not None

    def scalar(self, name: str) -> np.ndarray:
        """(n_chains, n_draws) series for a scalar parameter name."""
        if name in HYPER_NAMES:
            return self.hyper[:, :, HYPER_NAMES.index(name)]
        if name == "mu":
            return self.mu
        if name == "lp":
            return self.logdens
        raise ValidationError(f"unknown scalar parameter: {name!r}")

    def hyper_params(self, chain: int, draw: int) -> HyperParams:
        V, phi, psi, s2 = self.hyper[chain, draw]
        return HyperParams(V=V, phi=phi, psi=psi, sigma2_eps=s2)

    def latent_state(self, chain: int, draw: int) -> LatentState:
        if not self.has_latent:
            raise ValidationError(
                "latent draws were not saved; rerun the fit with save_latent "
                "(CLI flag --save-latent)"
            )
        return LatentState(
            mu=float(self.mu[chain, draw]),
            u=self.u[chain, draw],
            v=self.v[chain, draw],
            w=self.w[chain, draw],
        )

    def to_csv(self, path) -> None:
        import pandas as pd

        C, D = self.n_chains, self.n_draws
        cols = {
            "chain": np.repeat(np.arange(C), D),
            "iter": np.tile(np.arange(D), C),
        }
        for k, name in enumerate(HYPER_NAMES):
            cols[name] = self.hyper[:, :, k].ravel()
        cols["mu"] = self.mu.ravel()
        cols["lp"] = self.logdens.ravel()
        df = pd.DataFrame(cols)
        if self.has_latent:
            for prefix, block in (("u", self.u), ("v", self.v), ("w", self.w)):
                dim = block.shape[2]
                flat = block.reshape(C * D, dim)
                for k in range(dim):
                    df[f"{prefix}_{k}"] = flat[:, k]
        df.to_csv(path, index=False)

    @classmethod
    def from_csv(cls, path) -> "PosteriorDraws":
        import pandas as pd

        df = pd.read_csv(path)
        chains = np.unique(df["chain"].to_numpy())
        C = chains.size
        D = int((df["chain"] == chains[0]).sum())
        df = df.sort_values(["chain", "iter"], kind="stable")
        hyper = np.stack(
            [df[name].to_numpy().reshape(C, D) for name in HYPER_NAMES], axis=2
        )
        mu = df["mu"].to_numpy().reshape(C, D)
        lp = df["lp"].to_numpy().reshape(C, D)
        blocks = {}
        for prefix in ("u", "v", "w"):
            names = [c for c in df.columns if c.startswith(prefix + "_")]
            if names:
                names.sort(key=lambda c: int(c.split("_", 1)[1]))
                blocks[prefix] = (
                    df[names].to_numpy().reshape(C, D, len(names))
                )
        return cls(hyper=hyper, mu=mu, logdens=lp, **blocks)


def _initial_hyper(
    y: np.ndarray, cfg: ChainConfig, rng: np.random.Generator
) -> HyperParams:
    # over-dispersed, data-scaled starts on the transformed scale
    var_y = max(float(np.var(y)), 1e-8)
    values = {
        "V": math.exp(math.log(var_y / 2.0) + rng.standard_normal()),
        "phi": float(scipy.special.expit(rng.standard_normal())),
        "psi": float(scipy.special.expit(rng.standard_normal())),
        "sigma2_eps": math.exp(math.log(var_y / 2.0) + rng.standard_normal()),
    }
    values.update(cfg.fixed)
    return HyperParams(**values)


def _run_single_chain(args):
    y, structures, cfg, prior_cfg, seed_seq, chain_index = args
    rng = np.random.default_rng(seed_seq)
    system = LatentSystem(y, structures, prior_cfg, cfg.backend)
    hyper = HyperSampler(y, prior_cfg, cfg, structures)
    hp = _initial_hyper(y, cfg, rng)

    n_keep = cfg.n_draws
    hyper_draws = np.empty((n_keep, len(HYPER_NAMES)))
    mu_draws = np.empty(n_keep)
    lp_draws = np.empty(n_keep)
    latent = None
    if cfg.save_latent:
        latent = {
            "u": np.empty((n_keep, structures.n_s)),
            "v": np.empty((n_keep, structures.n_t)),
            "w": np.empty((n_keep, structures.n_s * structures.n_t)),
        }

    total = cfg.n_warmup + cfg.n_draws * cfg.thin
    kept = 0
    state = None
    for it in range(total):
        if it == cfg.n_warmup:
            hyper.adapting = False
        state = system.draw(hp, rng)
        hyper.set_latent(state, structures.n_t)
        for _ in range(cfg.hyper_sweeps):
            hp = hyper.sweep(hp, rng)
            hp, state = hyper.scale_moves(hp, state, rng)
        if it >= cfg.n_warmup and (it - cfg.n_warmup) % cfg.thin == cfg.thin - 1:
            lp = joint_log_density(y, state, hp, structures, prior_cfg)
            bad = math.isnan(lp) or lp == math.inf or (lp == -math.inf and not cfg.fixed)
            if bad or not np.isfinite(hp.as_array()).all():
                raise NumericalError(
                    f"chain {chain_index} diverged at iteration {it}: "
                    f"log-density {lp}, hyper {hp}"
                )
            hyper_draws[kept] = hp.as_array()
            mu_draws[kept] = state.mu
            lp_draws[kept] = lp
            if latent is not None:
                latent["u"][kept] = state.u
                latent["v"][kept] = state.v
                latent["w"][kept] = state.w
            kept += 1
    rates = {
        name: hyper.accept_counts[name] / max(hyper.proposal_counts[name], 1)
        for name in hyper.free
    }
    return hyper_draws, mu_draws, lp_draws, latent, rates


def run_chains(
    y, structures: ModelStructures, cfg: ChainConfig, prior_cfg: PriorConfig
) -> PosteriorDraws:
    """Run ``cfg.n_chains`` independent chains from over-dispersed starts.

    Per-chain seeds are spawned deterministically from ``cfg.seed``, so the
    result is reproducible bit-for-bit regardless of thread count.
    """
    y = np.asarray(getattr(y, "y", y), dtype=float)
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_chains)
    jobs = [
        (y, structures, cfg, prior_cfg, seeds[c], c) for c in range(cfg.n_chains)
    ]
    if cfg.threads > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.threads, cfg.n_chains)) as pool:
            results = list(pool.map(_run_single_chain, jobs))
    else:
        results = [_run_single_chain(job) for job in jobs]

    hyper = np.stack([r[0] for r in results])
    mu = np.stack([r[1] for r in results])
    lp = np.stack([r[2] for r in results])
    blocks = {}
    if cfg.save_latent:
        for key in ("u", "v", "w"):
            blocks[key] = np.stack([r[3][key] for r in results])
    rates = {
        name: float(np.mean([r[4][name] for r in results]))
        for name in results[0][4]
    }
    config = {
        "n_chains": cfg.n_chains,
        "n_warmup": cfg.n_warmup,
        "n_draws": cfg.n_draws,
        "thin": cfg.thin,
        "seed": cfg.seed,
        "adapt_target": cfg.adapt_target,
        "hyper_sweeps": cfg.hyper_sweeps,
        "backend": _resolve_backend(cfg.backend),
        "fixed": dict(cfg.fixed),
    }
    return PosteriorDraws(
        hyper=hyper, mu=mu, logdens=lp, accept_rates=rates, config=config, **blocks
    )


# --- convergence diagnostics -------------------------------------------------


def _split_chains(x: np.ndarray) -> np.ndarray:
    C, D = x.shape
    half = D // 2
    return np.concatenate([x[:, :half], x[:, half : 2 * half]], axis=0)


def split_rhat(x: np.ndarray) -> float:
    """Potential scale reduction on split chains; NaN for zero variance."""
    s = _split_chains(np.asarray(x, dtype=float))
    m, n = s.shape
    within = s.var(axis=1, ddof=1).mean()
    if within == 0.0:
        return math.nan
    between_over_n = s.mean(axis=1).var(ddof=1)
    var_plus = (n - 1) / n * within + between_over_n
    return float(math.sqrt(var_plus / within))


def _autocov(x: np.ndarray) -> np.ndarray:
    # biased autocovariance per row via FFT
    m, n = x.shape
    centered = x - x.mean(axis=1, keepdims=True)
    size = 2 ** int(math.ceil(math.log2(2 * n)))
    f = np.fft.rfft(centered, size, axis=1)
    acov = np.fft.irfft(f * np.conj(f), size, axis=1)[:, :n].real
    return acov / n


def ess_bulk(x: np.ndarray) -> float:
    """Bulk effective sample size: rank-normalized, Geyer-truncated."""
    s = _split_chains(np.asarray(x, dtype=float))
    m, n = s.shape
    if np.all(s == s.ravel()[0]):
        return math.nan
    ranks = scipy.stats.rankdata(s, method="average").reshape(s.shape)
    z = scipy.stats.norm.ppf((ranks - 3.0 / 8.0) / (s.size + 1.0 / 4.0))
    acov = _autocov(z)
    chain_var = acov[:, 0] * n / (n - 1)
    within = chain_var.mean()
    var_plus = (n - 1) / n * within + z.mean(axis=1).var(ddof=1)
    if var_plus == 0:
        return math.nan
    rho = 1.0 - (within - acov.mean(axis=0)) / var_plus
    # Geyer initial monotone positive sequence over pairs
    tau = -1.0
    prev_pair = math.inf
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1] if k + 1 < n else rho[k]
        if pair < 0:
            break
        pair = min(pair, prev_pair)
        prev_pair = pair
        tau += 2.0 * pair
    tau = max(tau, 1.0 / math.log10(m * n + 10.0))
    return float(min(m * n / tau, m * n))


@dataclass(frozen=True)
class ParamDiagnostic:
    rhat: float
    ess_bulk: float
    degenerate: bool

    @property
    def flagged(self) -> bool:
        return (not self.degenerate) and self.rhat > 1.01


@dataclass
class ConvergenceReport:
    params: dict

    @property
    def flagged(self) -> list:
        return [k for k, d in self.params.items() if d.flagged]

    @property
    def degenerate(self) -> list:
        return [k for k, d in self.params.items() if d.degenerate]

    @property
    def max_rhat(self) -> float:
        vals = [d.rhat for d in self.params.values() if not d.degenerate]
        return max(vals) if vals else math.nan

    def to_dict(self) -> dict:
        return {
            k: {"rhat": d.rhat, "ess_bulk": d.ess_bulk, "degenerate": d.degenerate}
            for k, d in self.params.items()
        }


def convergence(draws: PosteriorDraws, params=None) -> ConvergenceReport:
    """Split R-hat and bulk ESS per scalar parameter; flags R-hat > 1.01."""
    if draws.n_chains < 2:
        raise ValidationError("convergence diagnostics need at least 2 chains")
    if draws.n_draws // 2 < 10:
        raise ValidationError(
            "too few draws for diagnostics: need at least 10 per half-chain"
        )
    params = params or list(HYPER_NAMES) + ["mu"]
    out = {}
    for name in params:
        x = draws.scalar(name)
        r = split_rhat(x)
        if math.isnan(r):
            out[name] = ParamDiagnostic(math.nan, math.nan, True)
        else:
            out[name] = ParamDiagnostic(r, ess_bulk(x), False)
    return ConvergenceReport(out)
