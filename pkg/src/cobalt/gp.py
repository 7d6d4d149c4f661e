"""Additive SAAS Gaussian process over tree-decomposed latent inputs.

The kernel is a sum of Matern-5/2 ARD terms, one per tree edge, each acting
on the 2m latent coordinates of the edge's two variables. Inverse
lengthscales ``theta_d`` are shared per latent coordinate and carry a
horseshoe prior ``theta_d ~ HC(0, tau)``, ``tau ~ HC(0, tau0)``. Per-point
observation noise enters as a fixed diagonal; a residual floor is inferred.

All hyperparameters are sampled with NUTS in an unconstrained space::

    u = [log theta (D), log tau, log sigma_f^2 (C), log sigma_res^2, mu0]
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .decomp import TreeDecomposition
from .errors import FitError, ValidationError
from .nuts import sample_nuts, split_rhat

log = logging.getLogger(__name__)

SQRT5 = np.sqrt(5.0)
JITTER = 1e-8
_LOG_2_OVER_PI = np.log(2.0 / np.pi)
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


def matern52(r):
    r = np.asarray(r, dtype=float)
    return (1.0 + SQRT5 * r + (5.0 / 3.0) * r * r) * np.exp(-SQRT5 * r)


def _matern52_dlogr_factor(r):
    # d m52 / d log(theta_d) = factor(r) * theta_d^2 * delta_d^2
    return -(5.0 / 3.0) * (1.0 + SQRT5 * r) * np.exp(-SQRT5 * r)


def edge_kernel(sigma_f2: float, theta, za, zb) -> float:
    """Matern-5/2 ARD covariance between two points of one kernel component."""
    za = np.asarray(za, dtype=float)
    zb = np.asarray(zb, dtype=float)
    theta = np.asarray(theta, dtype=float)
    r = np.sqrt(np.sum((theta * (za - zb)) ** 2))
    return float(sigma_f2 * matern52(r))


def component_coords(tree: TreeDecomposition, m: int) -> list[np.ndarray]:
    """Latent coordinate indices used by each kernel component."""
    return [np.concatenate([np.arange(v * m, (v + 1) * m) for v in comp]) for comp in tree.components]


@dataclass(frozen=True)
class Hyperparameters:
    theta: np.ndarray  # (D,) inverse lengthscales
    tau: float
    sigma_f2: np.ndarray  # (C,) per component
    noise_res: float
    mu0: float

    @classmethod
    def from_vector(cls, u, D: int, C: int) -> "Hyperparameters":
        u = np.asarray(u, dtype=float)
        return cls(
            theta=np.exp(u[:D]),
            tau=float(np.exp(u[D])),
            sigma_f2=np.exp(u[D + 1 : D + 1 + C]),
            noise_res=float(np.exp(u[D + 1 + C])),
            mu0=float(u[D + 2 + C]),
        )

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [np.log(self.theta), [np.log(self.tau)], np.log(self.sigma_f2), [np.log(self.noise_res), self.mu0]]
        )

    def to_dict(self) -> dict:
        return {
            "theta": self.theta.tolist(),
            "tau": self.tau,
            "sigma_f2": self.sigma_f2.tolist(),
            "noise_res": self.noise_res,
            "mu0": self.mu0,
        }


def component_kernels(tree, hyp: Hyperparameters, m: int, Za, Zb=None) -> np.ndarray:
    """Stack of per-component kernel matrices, shape (C, na, nb)."""
    Za = np.asarray(Za, dtype=float)
    Zb = Za if Zb is None else np.asarray(Zb, dtype=float)
    D = m * tree.e
    if Za.shape[-1] != D or Zb.shape[-1] != D:
        raise ValidationError(f"inputs must have dimension D={D}")
    out = []
    for c, idx in enumerate(component_coords(tree, m)):
        diff = (Za[:, None, idx] - Zb[None, :, idx]) * hyp.theta[idx]
        r = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        out.append(hyp.sigma_f2[c] * matern52(r))
    return np.array(out)


def additive_kernel_matrix(tree, hyp: Hyperparameters, m: int, Za, Zb=None) -> np.ndarray:
    return component_kernels(tree, hyp, m, Za, Zb).sum(axis=0)


@dataclass(frozen=True)
class SaasPriors:
    tau0: float = 0.1
    noise_res_scale: float = 1.0  # half-normal scale on sigma_res^2 (standardized units)


@dataclass(frozen=True)
class MCMCConfig:
    warmup: int = 256
    draws: int = 128
    thin: int = 2
    chains: int = 1
    max_tree_depth: int = 8
    target_accept: float = 0.8


@dataclass(frozen=True)
class Standardizer:
    z_mean: np.ndarray
    z_scale: np.ndarray
    y_mean: float
    y_scale: float

    @classmethod
    def fit(cls, Z, y) -> "Standardizer":
        zs = Z.std(axis=0)
        zs = np.where(zs > 1e-12, zs, 1.0)
        ys = float(y.std()) if y.size > 1 else 1.0
        if not ys > 1e-12:
            ys = 1.0
        return cls(Z.mean(axis=0), zs, float(y.mean()), ys)

    @classmethod
    def identity(cls, D: int) -> "Standardizer":
        return cls(np.zeros(D), np.ones(D), 0.0, 1.0)

    def z(self, Z):
        return (np.asarray(Z, dtype=float) - self.z_mean) / self.z_scale


class MarginalLikelihood:
    """Log joint density of the hyperparameters (and its gradient) for fixed data."""

    def __init__(self, tree, m, Z, y, noise, priors: SaasPriors):
        self.tree, self.m = tree, m
        self.Z = np.asarray(Z, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.noise = np.asarray(noise, dtype=float)
        self.priors = priors
        self.n, self.D = self.Z.shape
        self.coords = component_coords(tree, m)
        self.C = len(self.coords)
        diff = self.Z[:, None, :] - self.Z[None, :, :]
        self.sq = np.moveaxis(diff * diff, -1, 0).reshape(self.D, -1)  # (D, n*n)
        # component/coordinate and variable/component incidence
        self.coord_mask = np.zeros((self.C, self.D))
        for c, idx in enumerate(self.coords):
            self.coord_mask[c, idx] = 1.0
        self.var_comp = np.array(
            [[1.0 if v in comp else 0.0 for comp in tree.components] for v in range(tree.e)]
        )
        self.var_of = np.arange(self.D) // m
        self._diag = np.arange(self.n) * (self.n + 1)

    @property
    def dim(self) -> int:
        return self.D + self.C + 3

    def unpack(self, u):
        return Hyperparameters.from_vector(u, self.D, self.C)

    def log_likelihood(self, u, grad=False):
        D, C, n = self.D, self.C, self.n
        theta = np.exp(u[:D])
        sf2 = np.exp(u[D + 1 : D + 1 + C])
        res = np.exp(u[D + 1 + C])
        mu0 = u[D + 2 + C]
        r = np.sqrt((self.coord_mask * theta**2) @ self.sq)  # (C, n*n)
        ex = np.exp(-SQRT5 * r)
        kc = sf2[:, None] * (1.0 + SQRT5 * r + (5.0 / 3.0) * r * r) * ex
        K = kc.sum(axis=0)
        K[self._diag] += self.noise + res + JITTER
        K = K.reshape(n, n)
        try:
            L = np.linalg.cholesky(K)
        except np.linalg.LinAlgError:
            return (-np.inf, np.zeros(self.dim)) if grad else -np.inf
        resid = self.y - mu0
        alpha = cho_solve((L, True), resid, check_finite=False)
        ll = -0.5 * resid @ alpha - np.log(np.diag(L)).sum() - n * _HALF_LOG_2PI
        if not grad:
            return ll
        Linv = solve_triangular(L, np.eye(n), lower=True, check_finite=False)
        W = (np.outer(alpha, alpha) - Linv.T @ Linv).ravel()
        gc = sf2[:, None] * (-(5.0 / 3.0)) * (1.0 + SQRT5 * r) * ex
        WG = (self.var_comp @ gc) * W  # (e, n*n)
        g = np.empty(self.dim)
        g[:D] = 0.5 * theta**2 * np.einsum("dk,dk->d", WG[self.var_of], self.sq)
        g[D] = 0.0
        g[D + 1 : D + 1 + C] = 0.5 * (kc @ W)
        g[D + 1 + C] = 0.5 * W[self._diag].sum() * res
        g[D + 2 + C] = alpha.sum()
        return ll, g

    def log_prior(self, u, grad=False):
        D, C = self.D, self.C
        tau0 = self.priors.tau0
        s_res = self.priors.noise_res_scale
        s = u[:D]
        t = u[D]
        q = u[D + 1 : D + 1 + C]
        r = u[D + 1 + C]
        mu0 = u[D + 2 + C]
        theta2 = np.exp(2 * s)
        tau2 = np.exp(2 * t)
        res = np.exp(r)
        lp = np.sum(_LOG_2_OVER_PI - t - np.log1p(theta2 / tau2) + s)
        lp += _LOG_2_OVER_PI - np.log(tau0) - np.log1p(tau2 / tau0**2) + t
        lp += np.sum(-0.5 * q * q - _HALF_LOG_2PI)
        lp += np.log(2.0) - 0.5 * np.log(2 * np.pi * s_res**2) - res**2 / (2 * s_res**2) + r
        lp += -0.5 * mu0 * mu0 - _HALF_LOG_2PI
        if not grad:
            return lp
        g = np.zeros(self.dim)
        g[:D] = 1.0 - 2.0 * theta2 / (tau2 + theta2)
        g[D] = np.sum(-1.0 + 2.0 * theta2 / (tau2 + theta2)) + 1.0 - 2.0 * tau2 / (tau0**2 + tau2)
        g[D + 1 : D + 1 + C] = -q
        g[D + 1 + C] = 1.0 - res**2 / s_res**2
        g[D + 2 + C] = -mu0
        return lp, g

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        if not np.all(np.isfinite(u)) or np.any(np.abs(u[:-1]) > 50):
            return -np.inf, np.zeros(self.dim)
        ll, gl = self.log_likelihood(u, grad=True)
        if not np.isfinite(ll):
            return -np.inf, np.zeros(self.dim)
        lp, gp = self.log_prior(u, grad=True)
        return ll + lp, gl + gp

    def initial_point(self) -> np.ndarray:
        return np.concatenate(
            [
                np.full(self.D, np.log(0.5)),
                [np.log(self.priors.tau0)],
                np.full(self.C, np.log(1.0 / self.C)),
                [np.log(0.1), 0.0],
            ]
        )


@dataclass(frozen=True)
class Prediction:
    mean: np.ndarray
    variance: np.ndarray
    edge_means: np.ndarray  # (n, C)
    edge_vars: np.ndarray  # (n, C)
    offset: float  # constant-mean contribution, added once

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.clip(self.variance, 0.0, None))

    @property
    def edge_stds(self) -> np.ndarray:
        return np.sqrt(np.clip(self.edge_vars, 0.0, None))


@dataclass(frozen=True, eq=False)
class SurrogatePosterior:
    tree: TreeDecomposition
    m: int
    draws: tuple[Hyperparameters, ...]
    Z: np.ndarray  # standardized training inputs
    scaler: Standardizer
    chol: np.ndarray  # (S, n, n)
    alpha: np.ndarray  # (S, n)
    diagnostics: dict = field(default_factory=dict)
    last_state: np.ndarray | None = None
    step_size: float | None = None
    inv_metric: np.ndarray | None = None

    @property
    def n_draws(self) -> int:
        return len(self.draws)

    @property
    def C(self) -> int:
        return len(self.tree.components)

    def _draw_component_terms(self, s, Zs, idx_c, c):
        h = self.draws[s]
        diff = (Zs[:, None, :] - self.Z[None, :, idx_c]) * h.theta[idx_c]
        r = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        k = h.sigma_f2[c] * matern52(r)  # (P, n)
        return k

    def component_moments(self, c: int, Zc) -> tuple[np.ndarray, np.ndarray]:
        """Moment-matched mean/variance of component ``c`` at points ``Zc``.

        ``Zc`` holds raw latent coordinates of the component's variables only,
        shape (P, len(coords)). Means exclude the constant offset.
        """
        idx = component_coords(self.tree, self.m)[c]
        Zs = (np.asarray(Zc, dtype=float) - self.scaler.z_mean[idx]) / self.scaler.z_scale[idx]
        mu = np.zeros((self.n_draws, Zs.shape[0]))
        var = np.zeros_like(mu)
        for s in range(self.n_draws):
            k = self._draw_component_terms(s, Zs, idx, c)
            mu[s] = k @ self.alpha[s]
            v = solve_triangular(self.chol[s], k.T, lower=True, check_finite=False)
            var[s] = self.draws[s].sigma_f2[c] - np.einsum("ij,ij->j", v, v)
        mean = mu.mean(axis=0)
        second = (var + mu * mu).mean(axis=0)
        ys = self.scaler.y_scale
        return ys * mean, ys * ys * (second - mean * mean)

    def predict(self, Z) -> Prediction:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        D = self.m * self.tree.e
        if Z.shape[-1] != D:
            raise ValidationError(f"inputs must have dimension D={D}")
        Zs = self.scaler.z(Z)
        coords = component_coords(self.tree, self.m)
        S, P, C = self.n_draws, Z.shape[0], self.C
        mu_c = np.zeros((S, P, C))
        var_c = np.zeros((S, P, C))
        mu_t = np.zeros((S, P))
        var_t = np.zeros((S, P))
        for s in range(S):
            h = self.draws[s]
            v_tot = 0.0
            for c, idx in enumerate(coords):
                k = self._draw_component_terms(s, Zs[:, idx], idx, c)
                v = solve_triangular(self.chol[s], k.T, lower=True, check_finite=False)
                mu_c[s, :, c] = k @ self.alpha[s]
                var_c[s, :, c] = h.sigma_f2[c] - np.einsum("ij,ij->j", v, v)
                v_tot = v_tot + v
            mu_t[s] = h.mu0 + mu_c[s].sum(axis=1)
            var_t[s] = h.sigma_f2.sum() - np.einsum("ij,ij->j", v_tot, v_tot)
        ys, ym = self.scaler.y_scale, self.scaler.y_mean
        mean = mu_t.mean(axis=0)
        variance = (var_t + mu_t**2).mean(axis=0) - mean**2
        e_mean = mu_c.mean(axis=0)
        e_var = (var_c + mu_c**2).mean(axis=0) - e_mean**2
        offset = float(np.mean([h.mu0 for h in self.draws]))
        return Prediction(
            mean=ym + ys * mean,
            variance=ys * ys * variance,
            edge_means=ys * e_mean,
            edge_vars=ys * ys * e_var,
            offset=ym + ys * offset,
        )

    def draw_means(self, Z) -> np.ndarray:
        """Per-draw total and per-component means (unstandardized), for checks."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        Zs = self.scaler.z(Z)
        coords = component_coords(self.tree, self.m)
        ys, ym = self.scaler.y_scale, self.scaler.y_mean
        total, parts = [], []
        for s, h in enumerate(self.draws):
            comp = np.stack(
                [self._draw_component_terms(s, Zs[:, idx], idx, c) @ self.alpha[s] for c, idx in enumerate(coords)],
                axis=1,
            )
            parts.append(ys * comp)
            total.append(ym + ys * (h.mu0 + comp.sum(axis=1)))
        return np.array(total), np.array(parts), np.array([ym + ys * h.mu0 for h in self.draws])


def _factorize(tree, m, Zs, ys_data, noise_s, hyp: Hyperparameters):
    K = additive_kernel_matrix(tree, hyp, m, Zs)
    K[np.diag_indices(K.shape[0])] += noise_s + hyp.noise_res + JITTER
    L = np.linalg.cholesky(K)
    alpha = cho_solve((L, True), ys_data - hyp.mu0)
    return L, alpha


def _prepare(Z, y, noise_var, standardize):
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    noise = np.zeros_like(y) if noise_var is None else np.asarray(noise_var, dtype=float).ravel()
    if Z.shape[0] != y.size or noise.size != y.size:
        raise ValidationError("Z, y and noise_var must have matching lengths")
    if y.size < 2:
        raise ValidationError("need at least two observations")
    if not (np.all(np.isfinite(Z)) and np.all(np.isfinite(y)) and np.all(np.isfinite(noise))):
        raise ValidationError("training data must be finite")
    if np.any(noise < 0):
        raise ValidationError("noise variances must be non-negative")
    scaler = Standardizer.fit(Z, y) if standardize else Standardizer.identity(Z.shape[1])
    return scaler.z(Z), (y - scaler.y_mean) / scaler.y_scale, noise / scaler.y_scale**2, scaler


def posterior_from_hyperparameters(
    Z, y, noise_var, tree: TreeDecomposition, m: int, draws, standardize: bool = True
) -> SurrogatePosterior:
    """Condition on data under fixed hyperparameter draws (no MCMC)."""
    Zs, ys_data, noise_s, scaler = _prepare(Z, y, noise_var, standardize)
    if Zs.shape[1] != m * tree.e:
        raise ValidationError(f"inputs must have dimension D={m * tree.e}")
    draws = tuple(draws)
    chol, alpha = zip(*(_factorize(tree, m, Zs, ys_data, noise_s, h) for h in draws))
    return SurrogatePosterior(tree, m, draws, Zs, scaler, np.array(chol), np.array(alpha))


def fit_posterior(
    Z,
    y,
    noise_var,
    tree: TreeDecomposition,
    m: int,
    rng: np.random.Generator,
    priors: SaasPriors = SaasPriors(),
    mcmc: MCMCConfig = MCMCConfig(),
    warm_start: SurrogatePosterior | None = None,
) -> SurrogatePosterior:
    """Sample hyperparameters with NUTS and cache one factorization per draw."""
    Zs, ys_data, noise_s, scaler = _prepare(Z, y, noise_var, True)
    if Zs.shape[1] != m * tree.e:
        raise ValidationError(f"inputs must have dimension D={m * tree.e}")
    model = MarginalLikelihood(tree, m, Zs, ys_data, noise_s, priors)

    samples, results = [], []
    for chain in range(mcmc.chains):
        step, metric = None, None
        if warm_start is not None and warm_start.last_state is not None and warm_start.last_state.size == model.dim:
            u0 = warm_start.last_state.copy()
            step, metric = warm_start.step_size, warm_start.inv_metric
        else:
            u0 = model.initial_point()
        for attempt in range(11):
            if np.isfinite(model(u0)[0]):
                break
            if attempt == 10:
                raise FitError("non-finite marginal likelihood at initialization after 10 re-jitters")
            u0 = model.initial_point() + rng.normal(0.0, 0.5, size=model.dim)
            step, metric = None, None
        res = sample_nuts(
            model,
            u0,
            rng,
            warmup=mcmc.warmup,
            draws=mcmc.draws,
            thin=mcmc.thin,
            target_accept=mcmc.target_accept,
            max_tree_depth=mcmc.max_tree_depth,
            step_size=step,
            inv_metric=metric,
        )
        samples.append(res.samples)
        results.append(res)

    chains = np.array(samples)
    rhat = split_rhat(chains)
    flat = chains.reshape(-1, model.dim)
    # carry a shrunk posterior-variance metric into the next warm start
    metric = results[-1].inv_metric
    if flat.shape[0] >= 8:
        k = flat.shape[0]
        metric = (k / (k + 5.0)) * flat.var(axis=0, ddof=1) + (5.0 / (k + 5.0)) * metric
        metric = np.clip(metric, 1e-4, 1e2)
    draws, chol, alpha = [], [], []
    for u in flat:
        h = model.unpack(u)
        try:
            L, a = _factorize(tree, m, Zs, ys_data, noise_s, h)
        except np.linalg.LinAlgError:
            continue
        draws.append(h)
        chol.append(L)
        alpha.append(a)
    if not draws:
        raise FitError("no MCMC draw produced a factorizable kernel matrix")
    diagnostics = {
        "rhat_max": float(np.nanmax(rhat)) if np.any(np.isfinite(rhat)) else float("nan"),
        "rhat": [float(v) for v in rhat],
        "accept_stat": float(np.mean([r.accept_stat for r in results])),
        "divergences": int(sum(r.divergences for r in results)),
        "step_size": float(results[-1].step_size),
        "mean_tree_depth": float(np.mean([r.mean_tree_depth for r in results])),
        "n_draws": len(draws),
    }
    return SurrogatePosterior(
        tree,
        m,
        tuple(draws),
        Zs,
        scaler,
        np.array(chol),
        np.array(alpha),
        diagnostics,
        last_state=flat[-1].copy(),
        step_size=results[-1].step_size,
        inv_metric=metric,
    )
