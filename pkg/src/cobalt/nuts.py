"""No-U-Turn sampler with dual-averaging step size and diagonal metric adaptation.

Trajectories use multinomial sampling across the built tree and the
generalized no-U-turn check on ``M^-1 p``. One chain per call; callers
combine chains.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MAX_DELTA_H = 1000.0


@dataclass(frozen=True)
class NutsResult:
    samples: np.ndarray  # (draws, dim)
    logp: np.ndarray
    step_size: float
    inv_metric: np.ndarray
    accept_stat: float
    divergences: int
    mean_tree_depth: float


class _DualAveraging:
    def __init__(self, eps0, target, gamma=0.05, t0=10.0, kappa=0.75):
        self.mu = np.log(10.0 * eps0)
        self.target, self.gamma, self.t0, self.kappa = target, gamma, t0, kappa
        self.h_bar = 0.0
        self.log_eps_bar = 0.0
        self.t = 0

    def update(self, accept):
        self.t += 1
        w = 1.0 / (self.t + self.t0)
        self.h_bar = (1 - w) * self.h_bar + w * (self.target - accept)
        log_eps = self.mu - np.sqrt(self.t) / self.gamma * self.h_bar
        eta = self.t ** (-self.kappa)
        self.log_eps_bar = eta * log_eps + (1 - eta) * self.log_eps_bar
        return float(np.exp(log_eps))

    @property
    def final(self):
        return float(np.exp(self.log_eps_bar))


def _leapfrog(logp_grad, q, p, g, eps, inv_metric):
    p = p + 0.5 * eps * g
    q = q + eps * inv_metric * p
    lp, g = logp_grad(q)
    p = p + 0.5 * eps * g
    return q, p, g, lp


class _Sampler:
    def __init__(self, logp_grad, inv_metric, max_depth, rng):
        self.logp_grad = logp_grad
        self.inv_metric = inv_metric
        self.max_depth = max_depth
        self.rng = rng

    def _energy(self, lp, p):
        return -lp + 0.5 * np.dot(p, self.inv_metric * p)

    def _build(self, q, p, g, lp, direction, depth, eps, H0):
        """Returns (q-, p-, g-, q+, p+, g+, q', g', lp', log_w, p_sum, ok, acc_sum, n_steps, diverged)."""
        if depth == 0:
            q1, p1, g1, lp1 = _leapfrog(self.logp_grad, q, p, g, direction * eps, self.inv_metric)
            H = self._energy(lp1, p1) if np.isfinite(lp1) else np.inf
            dH = H - H0
            if not np.isfinite(dH):
                dH = np.inf
            diverged = dH > _MAX_DELTA_H
            acc = float(np.exp(min(0.0, -dH))) if np.isfinite(dH) else 0.0
            log_w = -dH if np.isfinite(dH) else -np.inf
            return q1, p1, g1, q1, p1, g1, q1, g1, lp1, log_w, p1.copy(), not diverged, acc, 1, diverged

        left = self._build(q, p, g, lp, direction, depth - 1, eps, H0)
        if not left[11]:
            return left
        if direction == -1:
            right = self._build(left[0], left[1], left[2], None, direction, depth - 1, eps, H0)
            qm, pm, gm = right[0], right[1], right[2]
            qp, pp, gp = left[3], left[4], left[5]
        else:
            right = self._build(left[3], left[4], left[5], None, direction, depth - 1, eps, H0)
            qm, pm, gm = left[0], left[1], left[2]
            qp, pp, gp = right[3], right[4], right[5]
        log_w = np.logaddexp(left[9], right[9])
        q_new, g_new, lp_new = left[6], left[7], left[8]
        if right[11] and np.isfinite(log_w) and self.rng.uniform() < np.exp(right[9] - log_w):
            q_new, g_new, lp_new = right[6], right[7], right[8]
        p_sum = left[10] + right[10]
        ok = right[11] and self._no_uturn(pm, pp, p_sum)
        return (
            qm, pm, gm, qp, pp, gp, q_new, g_new, lp_new, log_w, p_sum, ok,
            left[12] + right[12], left[13] + right[13], left[14] or right[14],
        )

    def _no_uturn(self, pm, pp, p_sum):
        rho = self.inv_metric * p_sum
        return np.dot(rho, self.inv_metric * pm) > 0 and np.dot(rho, self.inv_metric * pp) > 0

    def transition(self, q, lp, g, eps):
        p0 = self.rng.normal(size=q.shape) / np.sqrt(self.inv_metric)
        H0 = self._energy(lp, p0)
        qm = qp = q
        pm = pp = p0
        gm = gp = g
        q_out, lp_out, g_out = q, lp, g
        log_w = 0.0
        p_sum = p0.copy()
        acc_sum, n_steps, diverged, depth = 0.0, 0, False, 0
        for depth in range(self.max_depth):
            direction = 1 if self.rng.uniform() < 0.5 else -1
            if direction == -1:
                sub = self._build(qm, pm, gm, None, -1, depth, eps, H0)
                qm, pm, gm = sub[0], sub[1], sub[2]
            else:
                sub = self._build(qp, pp, gp, None, 1, depth, eps, H0)
                qp, pp, gp = sub[3], sub[4], sub[5]
            acc_sum += sub[12]
            n_steps += sub[13]
            diverged = diverged or sub[14]
            if not sub[11]:
                break
            # biased progressive sampling favours the new subtree
            if self.rng.uniform() < np.exp(min(0.0, sub[9] - log_w)):
                q_out, g_out, lp_out = sub[6], sub[7], sub[8]
            log_w = np.logaddexp(log_w, sub[9])
            p_sum = p_sum + sub[10]
            if not self._no_uturn(pm, pp, p_sum):
                break
        return q_out, lp_out, g_out, acc_sum / max(n_steps, 1), diverged, depth + 1


def _find_initial_step(logp_grad, q, lp, g, inv_metric, rng):
    eps = 0.1
    p = rng.normal(size=q.shape) / np.sqrt(inv_metric)
    H0 = -lp + 0.5 * np.dot(p, inv_metric * p)
    _, p1, _, lp1 = _leapfrog(logp_grad, q, p, g, eps, inv_metric)
    H1 = -lp1 + 0.5 * np.dot(p1, inv_metric * p1) if np.isfinite(lp1) else np.inf
    direction = 1 if (H0 - H1) > np.log(0.8) else -1
    for _ in range(50):
        eps_new = eps * (2.0**direction)
        _, p1, _, lp1 = _leapfrog(logp_grad, q, p, g, eps_new, inv_metric)
        H1 = -lp1 + 0.5 * np.dot(p1, inv_metric * p1) if np.isfinite(lp1) else np.inf
        if direction == 1 and not (H0 - H1) > np.log(0.8):
            break
        eps = eps_new
        if direction == -1 and (H0 - H1) > np.log(0.8):
            break
    return eps


def sample_nuts(
    logp_grad,
    q0,
    rng: np.random.Generator,
    warmup: int = 256,
    draws: int = 128,
    thin: int = 2,
    target_accept: float = 0.8,
    max_tree_depth: int = 8,
    step_size: float | None = None,
    inv_metric=None,
) -> NutsResult:
    """Run one NUTS chain on ``logp_grad(q) -> (logp, grad)``.

    ``step_size`` and ``inv_metric`` warm-start adaptation; the metric is
    re-estimated from the middle part of warmup when warmup is long enough.
    """
    q = np.array(q0, dtype=float)
    dim = q.size
    inv_metric = np.ones(dim) if inv_metric is None else np.array(inv_metric, dtype=float)
    lp, g = logp_grad(q)
    if not np.isfinite(lp):
        raise ValueError("initial point has non-finite log density")
    sampler = _Sampler(logp_grad, inv_metric, max_tree_depth, rng)
    eps = step_size if step_size is not None else _find_initial_step(logp_grad, q, lp, g, inv_metric, rng)
    da = _DualAveraging(eps, target_accept)

    win_start, win_end = int(0.25 * warmup), int(0.85 * warmup)
    adapt_metric = warmup >= 40
    window = []
    for it in range(warmup):
        q, lp, g, acc, _, _ = sampler.transition(q, lp, g, eps)
        eps = da.update(acc)
        if adapt_metric and win_start <= it < win_end:
            window.append(q.copy())
        if adapt_metric and it == win_end - 1 and len(window) > 5:
            w = np.array(window)
            n = len(w)
            var = w.var(axis=0, ddof=1)
            sampler.inv_metric = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            eps = _find_initial_step(logp_grad, q, lp, g, sampler.inv_metric, rng)
            da = _DualAveraging(eps, target_accept)
    if warmup > 0:
        eps = da.final

    out, out_lp = [], []
    acc_total, divergences, depth_total = 0.0, 0, 0
    for it in range(draws * thin):
        q, lp, g, acc, div, depth = sampler.transition(q, lp, g, eps)
        acc_total += acc
        divergences += int(div)
        depth_total += depth
        if (it + 1) % thin == 0:
            out.append(q.copy())
            out_lp.append(lp)
    n_it = max(draws * thin, 1)
    return NutsResult(
        np.array(out).reshape(-1, dim),
        np.array(out_lp),
        float(eps),
        sampler.inv_metric.copy(),
        acc_total / n_it,
        divergences,
        depth_total / n_it,
    )


def split_rhat(chains) -> np.ndarray:
    """Split-R-hat per parameter; ``chains`` is (n_chains, draws, dim) or (draws, dim)."""
    x = np.asarray(chains, dtype=float)
    if x.ndim == 2:
        x = x[None]
    n = x.shape[1] // 2
    if n < 2:
        return np.full(x.shape[-1], np.nan)
    halves = np.concatenate([x[:, :n], x[:, -n:]], axis=0)
    chain_means = halves.mean(axis=1)
    chain_vars = halves.var(axis=1, ddof=1)
    W = chain_vars.mean(axis=0)
    B = n * chain_means.var(axis=0, ddof=1)
    var_hat = (n - 1) / n * W + B / n
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.sqrt(var_hat / W)
    return np.where(W > 0, r, 1.0)
