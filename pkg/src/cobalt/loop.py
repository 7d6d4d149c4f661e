"""COBALT outer loop: embed, initialize, then fit / acquire / evaluate until budget.

Every random choice draws from a named substream of the master seed, so a
run is a pure function of its configuration.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .acquire import (
    EvoConfig,
    SearchSpace,
    TrustRegion,
    admissible_anchors,
    count_unseen,
    initial_trust_region,
    maximize_acquisition,
    update_trust_region,
)
from .catalog import Catalog, bundled_catalog, load_catalog, normalize
from .decomp import sample_spanning_tree
from .errors import FitError, ValidationError
from .gp import MCMCConfig, SaasPriors, fit_posterior
from .manifold import AnchorSet, TensorGrid, embed_isomap, embed_pca
from .mcfea import CONSTRAINTS, MonteCarloOracle, Observation, UncertaintySpec
from .structmodel import StructureModel, bundled_structure, load_structure

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunConfig:
    """Flat run configuration; dotted keys such as ``mcmc.warmup`` map to ``mcmc_warmup``."""

    structure: str | None = None  # None selects the bundled ten-beam frame
    catalog: str | None = None  # None selects the bundled 54-section catalog
    catalog_indices: tuple[int, ...] | None = None
    group_map: tuple[int, ...] | None = None
    method: str = "cobalt"
    embedding_method: str = "isomap"
    embedding_k: int = 6
    embedding_m: int = 2
    budget: int = 60
    n_init: int | None = None  # None gives 2e + 2
    n_mc: int = 500
    gamma: float = 1.0
    beta: tuple[float, ...] = (1.0, 1.0, 1.0)
    kappa: float = 2.0
    mass_budget: float | None = 240.0
    cov_E: float = 0.05
    cov_load: float = 0.10
    geo_sigma_frac: float = 0.0
    tr_L_init: float | None = None
    tr_L_min: float | None = None
    tr_L_max: float | None = None
    evo_population: int = 50
    evo_generations: int = 100
    evo_p_mut: float = 0.3
    saas_tau0: float = 0.1
    mcmc_warmup: int = 256
    mcmc_draws: int = 128
    mcmc_thin: int = 2
    mcmc_chains: int = 1
    mcmc_max_tree_depth: int = 8
    rs_dedupe: bool = False
    ga_population: int = 20
    ga_crossover: float = 0.9
    ga_mutation: float | None = None  # None gives 1/e
    ga_penalty: float = 1e6
    crbo_restarts: int = 32
    crbo_steps: int = 200
    seed: int = 0

    def __post_init__(self):
        for name in ("catalog_indices", "group_map", "beta"):
            v = getattr(self, name)
            if isinstance(v, list):
                object.__setattr__(self, name, tuple(v))
        problems = self.problems()
        if problems:
            raise ValidationError("; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if self.budget < 1:
            out.append("budget must be at least 1")
        if self.n_init is not None and not (1 <= self.n_init <= self.budget):
            out.append(f"n_init must lie in [1, budget], got {self.n_init}")
        if self.embedding_m < 1:
            out.append("embedding.m must be at least 1")
        if self.embedding_k < 1:
            out.append("embedding.k must be at least 1")
        if self.embedding_method not in ("isomap", "pca"):
            out.append(f"unknown embedding method {self.embedding_method!r}")
        if self.method not in ("cobalt", "rs", "ga", "crbo"):
            out.append(f"unknown method {self.method!r}")
        if self.kappa < 0:
            out.append("kappa must be non-negative")
        if self.n_mc < 2:
            out.append("n_mc must be at least 2")
        if len(self.beta) != len(CONSTRAINTS):
            out.append(f"beta needs {len(CONSTRAINTS)} entries")
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in data.items():
            name = key.replace(".", "_")
            if name not in names:
                raise ValidationError(f"unknown config key {key!r}")
            kwargs[name] = value
        return cls(**kwargs)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        for k, v in out.items():
            if isinstance(v, tuple):
                out[k] = list(v)
        return out

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    @property
    def config_hash(self) -> str:
        """Provenance hash of every setting except the seed, so seed replicates share it."""
        d = self.to_dict()
        d.pop("seed")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def mcmc(self) -> MCMCConfig:
        return MCMCConfig(
            warmup=self.mcmc_warmup,
            draws=self.mcmc_draws,
            thin=self.mcmc_thin,
            chains=self.mcmc_chains,
            max_tree_depth=self.mcmc_max_tree_depth,
        )

    def evo(self) -> EvoConfig:
        return EvoConfig(population=self.evo_population, generations=self.evo_generations, p_mut=self.evo_p_mut)

    def uncertainty(self) -> UncertaintySpec:
        return UncertaintySpec(self.cov_E, self.cov_load, self.geo_sigma_frac)


def substream(seed: int, name: str, *index: int) -> np.random.Generator:
    """Independent generator for a named purpose (and optional index)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode()), *map(int, index)]))


def substream_seed(seed: int, name: str, *index: int) -> int:
    ss = np.random.SeedSequence([int(seed), zlib.crc32(name.encode()), *map(int, index)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass(frozen=True, eq=False)
class Problem:
    """Everything derived deterministically from a configuration."""

    config: RunConfig
    model: StructureModel
    catalog: Catalog  # physical catalog actually searched
    anchors: AnchorSet
    grid: TensorGrid
    oracle: MonteCarloOracle

    @property
    def e(self) -> int:
        return self.grid.e

    @property
    def n(self) -> int:
        return self.catalog.n

    def evaluate(self, design, index: int) -> Observation:
        seed = substream_seed(self.config.seed, "oracle", index)
        return self.oracle.safe_call(design, seed)


def build_problem(cfg: RunConfig) -> Problem:
    if cfg.structure is None:
        model = bundled_structure()
    else:
        if not Path(cfg.structure).exists():
            raise ValidationError(f"structure file not found: {cfg.structure}")
        model = load_structure(cfg.structure)
    if cfg.group_map is not None:
        k = max(cfg.group_map) + 1
        model = model.regrouped(cfg.group_map, [f"g{i}" for i in range(k)])
    if cfg.catalog is None:
        catalog = bundled_catalog()
    else:
        if not Path(cfg.catalog).exists():
            raise ValidationError(f"catalog file not found: {cfg.catalog}")
        catalog = load_catalog(cfg.catalog)
    if cfg.catalog_indices is not None:
        catalog = catalog.subset(list(cfg.catalog_indices))
    anchors = embed(catalog, cfg.embedding_method, cfg.embedding_k, cfg.embedding_m)
    grid = TensorGrid.shared(anchors, model.e)
    oracle = MonteCarloOracle(
        model, catalog, cfg.uncertainty(), cfg.n_mc, cfg.gamma, tuple(cfg.beta), cfg.mass_budget
    )
    return Problem(cfg, model, catalog, anchors, grid, oracle)


def embed(catalog: Catalog, method: str = "isomap", k: int = 6, m: int = 2) -> AnchorSet:
    norm = normalize(catalog)
    if not 1 <= m <= catalog.n - 1:
        raise ValidationError(f"embedding dimension m={m} must lie in [1, {catalog.n - 1}]")
    if method == "pca":
        return embed_pca(norm, min(m, norm.M))
    return embed_isomap(norm, min(k, catalog.n - 1), m)


def select_incumbent(obs) -> int:
    """Index of the best feasible observation; minimum violation when none is feasible."""
    obs = list(obs)
    if not obs:
        raise ValidationError("no observations")
    feasible = [i for i, o in enumerate(obs) if o.feasible and not o.failed]
    if feasible:
        return min(feasible, key=lambda i: (obs[i].y_obs, i))
    return min(range(len(obs)), key=lambda i: (obs[i].violation, i))


def _better(obs, i: int, j: int | None) -> bool:
    """Would observation ``i`` replace incumbent ``j``?"""
    return j is None or select_incumbent([obs[j], obs[i]]) == 1


@dataclass
class RunResult:
    method: str
    config: RunConfig
    observations: list = field(default_factory=list)
    incumbents: list = field(default_factory=list)  # incumbent index after each evaluation
    iterations: list = field(default_factory=list)
    records: list = field(default_factory=list)
    anchor_hash: str = ""

    @property
    def best_index(self) -> int:
        return self.incumbents[-1]

    @property
    def best(self) -> Observation:
        return self.observations[self.best_index]

    @property
    def found_feasible(self) -> bool:
        return any(o.feasible for o in self.observations)

    def designs(self) -> list[tuple[int, ...]]:
        return [o.design for o in self.observations]

    def best_feasible_trajectory(self) -> np.ndarray:
        out, best = [], np.inf
        for o in self.observations:
            if o.feasible and o.y_obs < best:
                best = o.y_obs
            out.append(best)
        return np.array(out)

    def log_text(self) -> str:
        return "".join(json.dumps(r, sort_keys=True, allow_nan=True) + "\n" for r in self.records)

    def write_log(self, path) -> Path:
        path = Path(path)
        path.write_text(self.log_text(), encoding="utf-8")
        return path


class RunRecorder:
    """Shared bookkeeping for COBALT and the baselines."""

    def __init__(self, problem: Problem, method: str):
        self.problem = problem
        self.cfg = problem.config
        self.result = RunResult(method, self.cfg, anchor_hash=problem.anchors.content_hash)
        self.seen: set[tuple[int, ...]] = set()
        self._hash = self.cfg.config_hash
        self._emit(
            "config",
            config=self.cfg.to_dict(),
            anchor_hash=problem.anchors.content_hash,
            residual_stress=problem.anchors.residual_stress,
            version=__version__,
        )

    @property
    def n_evals(self) -> int:
        return len(self.result.observations)

    @property
    def remaining(self) -> int:
        return self.cfg.budget - self.n_evals

    @property
    def incumbent(self) -> int | None:
        return self.result.incumbents[-1] if self.result.incumbents else None

    def _emit(self, event: str, **payload):
        rec = {
            "event": event,
            "method": self.result.method,
            "config_hash": self._hash,
            "seed": self.cfg.seed,
        }
        rec.update(payload)
        self.result.records.append(rec)

    def evaluate(self, design, event: str = "evaluation", **extra) -> tuple[Observation, bool]:
        """Call the oracle, log it and update the incumbent; returns (obs, improved)."""
        design = tuple(int(v) for v in self.problem.grid.check(design))
        index = self.n_evals
        obs = self.problem.evaluate(design, index)
        observations = self.result.observations
        observations.append(obs)
        self.seen.add(design)
        prev = self.incumbent
        improved = _better(observations, index, prev)
        inc = index if improved else prev
        self.result.incumbents.append(inc)
        latent = [float(v) for v in self.problem.grid.latent(design)]
        self._emit(event, index=index, observation=obs.to_dict(), latent=latent, incumbent=inc, **extra)
        if improved:
            self._emit("incumbent", index=index, design=list(design), y_obs=obs.y_obs, feasible=obs.feasible)
        return obs, improved

    def finish(self) -> RunResult:
        best = self.result.best
        cat = self.problem.catalog
        self._emit(
            "summary",
            n_evaluations=self.n_evals,
            best_index=self.result.best_index,
            best_design=list(best.design),
            best_ids=[cat.ids[i] for i in best.design],
            best_attributes={name: [float(cat.column(name)[i]) for i in best.design] for name in cat.attribute_names},
            y_obs=best.y_obs,
            feasible=best.feasible,
            found_feasible=self.result.found_feasible,
        )
        return self.result


def default_n_init(cfg: RunConfig, e: int) -> int:
    n = cfg.n_init if cfg.n_init is not None else 2 * e + 2
    return max(1, min(n, cfg.budget))


def random_design(sets_or_sizes, rng) -> tuple[int, ...]:
    out = []
    for s in sets_or_sizes:
        out.append(int(rng.integers(s)) if np.isscalar(s) else int(rng.choice(s)))
    return tuple(out)


def _random_unseen(sets, seen, rng, tries: int = 200) -> tuple[int, ...]:
    d = random_design(sets, rng)
    for _ in range(tries):
        if d not in seen:
            break
        d = random_design(sets, rng)
    return d


def training_data(problem: Problem, observations):
    ok = [o for o in observations if not o.failed and np.isfinite(o.y_obs)]
    Z = problem.grid.latent([o.design for o in ok])
    y = np.array([o.y_obs for o in ok])
    noise = np.array([o.noise_var for o in ok])
    return Z, y, noise


def run_cobalt(cfg: RunConfig, problem: Problem | None = None) -> RunResult:
    problem = problem or build_problem(cfg)
    grid = problem.grid
    rec = RunRecorder(problem, "cobalt")
    space = SearchSpace.build(grid, cfg.embedding_k)

    init_rng = substream(cfg.seed, "init")
    for _ in range(default_n_init(cfg, grid.e)):
        rec.evaluate(_random_unseen(grid.sizes, rec.seen, init_rng), event="init")

    obs = rec.result.observations
    tr = initial_trust_region(
        grid, obs[rec.incumbent].design, cfg.tr_L_init, cfg.tr_L_min, cfg.tr_L_max
    )
    priors = SaasPriors(tau0=cfg.saas_tau0)
    post = None
    t = 0
    while rec.remaining > 0:
        t += 1
        tree = sample_spanning_tree(grid.e, substream(cfg.seed, "tree", t))
        # widen the box while it holds nothing new to evaluate
        sets = admissible_anchors(grid, tr)
        while count_unseen(sets, rec.seen) == 0 and tr.length < tr.L_max:
            tr = dataclasses.replace(tr, length=min(2.0 * tr.length, tr.L_max))
            sets = admissible_anchors(grid, tr)
        acq_rng = substream(cfg.seed, "acquire", t)
        info = {"t": t, "tree": tree.to_list(), "trust_region": tr.to_dict()}
        try:
            Z, y, noise = training_data(problem, obs)
            post = fit_posterior(Z, y, noise, tree, grid.m, substream(cfg.seed, "mcmc", t), priors, cfg.mcmc(), post)
            res = maximize_acquisition(post, tr, space, cfg.kappa, cfg.evo(), acq_rng, frozenset(rec.seen))
            design = res.design
            info.update(acq_value=res.value, stalled=res.stalled, revisit=res.seen, diagnostics=post.diagnostics)
        except (FitError, ValidationError, np.linalg.LinAlgError) as exc:
            log.warning("surrogate step failed at iteration %d (%s); using a random admissible design", t, exc)
            design = _random_unseen(sets, rec.seen, acq_rng)
            post = None
            info.update(acq_value=None, stalled=False, revisit=design in rec.seen, fallback=str(exc))
        o, improved = rec.evaluate(design, event="iteration", **info)
        rec.result.iterations.append({**info, "design": list(design), "improved": improved})
        tr = update_trust_region(tr, improved, o.design, grid)
    return rec.finish()


def run(cfg: RunConfig, problem: Problem | None = None) -> RunResult:
    """Dispatch on ``cfg.method``."""
    if cfg.method == "cobalt":
        return run_cobalt(cfg, problem)
    from . import baselines

    return {"rs": baselines.run_random_search, "ga": baselines.run_ga, "crbo": baselines.run_crbo}[cfg.method](
        cfg, problem
    )
