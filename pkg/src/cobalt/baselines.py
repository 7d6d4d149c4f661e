"""Comparison methods sharing COBALT's oracle, budget and run-log format.

* random search over the full tensor grid (optionally without repeats),
* a generational genetic algorithm on the anchor-index encoding,
* continuous-relaxation BO: the same surrogate, LCB minimized over the
  latent bounding box and rounded to the nearest anchor per variable.
"""

from __future__ import annotations

import logging

import numpy as np

from .acquire import lcb
from .decomp import sample_spanning_tree
from .errors import FitError, ValidationError
from .gp import SaasPriors, fit_posterior
from .loop import Problem, RunConfig, RunRecorder, RunResult, build_problem, random_design, substream, training_data
from .manifold import TensorGrid

log = logging.getLogger(__name__)


def run_random_search(cfg: RunConfig, problem: Problem | None = None) -> RunResult:
    problem = problem or build_problem(cfg)
    rec = RunRecorder(problem, "rs")
    grid = problem.grid
    rng = substream(cfg.seed, "rs")
    total = grid.n_combinations
    while rec.remaining > 0:
        d = random_design(grid.sizes, rng)
        if cfg.rs_dedupe and len(rec.seen) < total:
            while d in rec.seen:
                d = random_design(grid.sizes, rng)
        rec.evaluate(d)
    return rec.finish()


def penalized_fitness(obs, penalty: float) -> float:
    if obs.failed:
        return float("inf")
    return obs.y_obs + penalty * obs.violation


def run_ga(cfg: RunConfig, problem: Problem | None = None, initial_population=None) -> RunResult:
    """Generational GA: tournament-3, uniform crossover, uniform-reset mutation, elitism 1.

    Elites are carried over without re-evaluation; every child costs one
    oracle call, repeats included.
    """
    problem = problem or build_problem(cfg)
    rec = RunRecorder(problem, "ga")
    grid = problem.grid
    sizes = np.array(grid.sizes)
    e = grid.e
    rng = substream(cfg.seed, "ga")
    P = max(cfg.ga_population, 2)
    p_mut = 1.0 / e if cfg.ga_mutation is None else cfg.ga_mutation

    if initial_population is not None:
        pop = grid.check(np.asarray(initial_population))
        P = pop.shape[0]
    else:
        pop = np.array([random_design(sizes, rng) for _ in range(P)])
    fit = []
    for d in pop[: rec.remaining]:
        obs, _ = rec.evaluate(d, generation=0)
        fit.append(penalized_fitness(obs, cfg.ga_penalty))
    pop = pop[: len(fit)]
    fit = np.array(fit)

    gen = 0
    while rec.remaining > 0:
        gen += 1
        elite = int(np.argmin(fit))
        children = []
        for _ in range(P - 1):
            a = pop[_tournament(fit, rng)]
            b = pop[_tournament(fit, rng)]
            child = a.copy()
            if rng.uniform() < cfg.ga_crossover:
                child = np.where(rng.uniform(size=e) < 0.5, b, a)
            # a reset always moves the gene to a different category
            reset = (rng.uniform(size=e) < p_mut) & (sizes > 1)
            if reset.any():
                child = np.where(reset, (child + rng.integers(1, np.maximum(sizes, 2))) % sizes, child)
            children.append(child)
        new_fit = []
        for child in children[: rec.remaining]:
            obs, _ = rec.evaluate(child, generation=gen)
            new_fit.append(penalized_fitness(obs, cfg.ga_penalty))
        children = children[: len(new_fit)]
        pop = np.vstack([pop[elite : elite + 1]] + [np.array(children)] * bool(children))
        fit = np.concatenate([[fit[elite]], new_fit])
    return rec.finish()


def _tournament(fit, rng, k: int = 3) -> int:
    idx = rng.integers(0, len(fit), size=k)
    return int(idx[np.argmin(fit[idx])])


def round_to_anchors(z, grid: TensorGrid) -> tuple[tuple[int, ...], float]:
    """Nearest anchor per variable (L2, lower index on ties) and the L2 rounding displacement."""
    z = np.asarray(z, dtype=float)
    m = grid.m
    design = []
    for i, a in enumerate(grid.anchors):
        d2 = np.sum((a.coords - z[i * m : (i + 1) * m]) ** 2, axis=1)
        design.append(int(np.argmin(d2)))
    displacement = float(np.linalg.norm(z - grid.latent(design)))
    return tuple(design), displacement


def latent_box(grid: TensorGrid) -> tuple[np.ndarray, np.ndarray]:
    lo = np.concatenate([a.coords.min(axis=0) for a in grid.anchors])
    hi = np.concatenate([a.coords.max(axis=0) for a in grid.anchors])
    return lo, hi


def coordinate_descent(f, lo, hi, rng, restarts: int = 32, steps: int = 200, starts=None) -> tuple[np.ndarray, float]:
    """Multi-start coordinate descent of a batched function ``f(X) -> values`` on a box.

    Restarts are advanced together: each step tries +/- moves along one
    coordinate (cycled), accepts improvements and halves that coordinate's
    step on failure.
    """
    D = lo.size
    width = np.where(hi > lo, hi - lo, 1.0)
    x = lo + rng.uniform(size=(restarts, D)) * (hi - lo) if starts is None else np.array(starts, dtype=float)
    fx = f(x)
    h = np.tile(0.25 * width, (x.shape[0], 1))
    rows = np.arange(x.shape[0])
    for s in range(steps):
        d = s % D
        plus, minus = x.copy(), x.copy()
        plus[:, d] = np.minimum(x[:, d] + h[:, d], hi[d])
        minus[:, d] = np.maximum(x[:, d] - h[:, d], lo[d])
        vals = f(np.vstack([plus, minus]))
        fp, fm = vals[: len(x)], vals[len(x) :]
        use_p = (fp < fx) & (fp <= fm)
        use_m = (fm < fx) & ~use_p
        x[use_p], fx[use_p] = plus[use_p], fp[use_p]
        x[use_m], fx[use_m] = minus[use_m], fm[use_m]
        failed = ~(use_p | use_m)
        h[rows[failed], d] *= 0.5
    best = int(np.argmin(fx))
    return x[best], float(fx[best])


def run_crbo(cfg: RunConfig, problem: Problem | None = None) -> RunResult:
    """Continuous-relaxation BO with nearest-anchor rounding before every oracle call."""
    from .loop import _random_unseen, default_n_init

    problem = problem or build_problem(cfg)
    rec = RunRecorder(problem, "crbo")
    grid = problem.grid
    init_rng = substream(cfg.seed, "init")
    for _ in range(default_n_init(cfg, grid.e)):
        rec.evaluate(_random_unseen(grid.sizes, rec.seen, init_rng), event="init")

    lo, hi = latent_box(grid)
    priors = SaasPriors(tau0=cfg.saas_tau0)
    post = None
    t = 0
    while rec.remaining > 0:
        t += 1
        tree = sample_spanning_tree(grid.e, substream(cfg.seed, "tree", t))
        rng = substream(cfg.seed, "acquire", t)
        info = {"t": t, "tree": tree.to_list()}
        try:
            Z, y, noise = training_data(problem, rec.result.observations)
            post = fit_posterior(Z, y, noise, tree, grid.m, substream(cfg.seed, "mcmc", t), priors, cfg.mcmc(), post)
            z, value = coordinate_descent(
                lambda X: lcb(post.predict(X), cfg.kappa), lo, hi, rng, cfg.crbo_restarts, cfg.crbo_steps
            )
            design, disp = round_to_anchors(z, grid)
            info.update(
                continuous_point=[float(v) for v in z],
                acq_value=value,
                rounding_displacement=disp,
                diagnostics=post.diagnostics,
            )
        except (FitError, ValidationError, np.linalg.LinAlgError) as exc:
            log.warning("surrogate step failed at iteration %d (%s); using a random design", t, exc)
            design = random_design(grid.sizes, rng)
            post = None
            info.update(acq_value=None, rounding_displacement=None, fallback=str(exc))
        _, improved = rec.evaluate(design, event="iteration", **info)
        rec.result.iterations.append({**info, "design": list(design), "improved": improved})
    return rec.finish()


def mean_rounding_displacement(result: RunResult) -> float:
    vals = [it["rounding_displacement"] for it in result.iterations if it.get("rounding_displacement") is not None]
    return float(np.mean(vals)) if vals else float("nan")
