"""Monte Carlo finite-element oracle: robust objective and constraint estimates."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .catalog import Catalog
from .errors import SolveError, ValidationError
from .fea import check_assignment, gravity_loads, section_properties, solve_batch, structural_mass
from .structmodel import StructureModel

log = logging.getLogger(__name__)

CONSTRAINTS = ("mass", "buckling_y", "buckling_z")
BOOTSTRAP_RESAMPLES = 200
E_FLOOR_FRACTION = 0.5


@dataclass(frozen=True)
class UncertaintySpec:
    """Coefficients of variation of the aleatoric parameters.

    Young's modulus ~ N(E0, (cov_E E0)^2) truncated below ``0.5 E0``; every
    loaded node's force vector is scaled by an independent N(1, cov_load^2);
    each node coordinate is offset by N(0, (geo_sigma_frac * L)^2) with L the
    characteristic span.
    """

    cov_E: float = 0.05
    cov_load: float = 0.10
    geo_sigma_frac: float = 0.0

    def __post_init__(self):
        if min(self.cov_E, self.cov_load, self.geo_sigma_frac) < 0:
            raise ValidationError("uncertainty fractions must be non-negative")

    @property
    def deterministic(self) -> bool:
        return self.cov_E == 0 and self.cov_load == 0 and self.geo_sigma_frac == 0

    @classmethod
    def none(cls) -> "UncertaintySpec":
        return cls(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class Realization:
    E: float
    load_scales: np.ndarray  # one factor per node (1 where unloaded)
    offsets: np.ndarray  # (n_nodes, dim)
    truncated: int = 0


def sample_realization(
    spec: UncertaintySpec, model: StructureModel, rng: np.random.Generator
) -> Realization:
    E0 = model.material.E0
    E, truncated = E0, 0
    if spec.cov_E > 0:
        E = rng.normal(E0, spec.cov_E * E0)
        while E < E_FLOOR_FRACTION * E0:
            truncated += 1
            E = rng.normal(E0, spec.cov_E * E0)
    scales = np.ones(model.n_nodes)
    if spec.cov_load > 0:
        scales = rng.normal(1.0, spec.cov_load, size=model.n_nodes)
    offsets = np.zeros_like(model.nodes)
    if spec.geo_sigma_frac > 0:
        sd = spec.geo_sigma_frac * model.characteristic_span()
        offsets = rng.normal(0.0, sd, size=model.nodes.shape)
    return Realization(float(E), scales, offsets, truncated)


@dataclass(frozen=True)
class Observation:
    design: tuple[int, ...]
    y_obs: float
    noise_var: float
    mean_J: float
    std_J: float
    robust_constraints: dict
    feasible: bool
    n_mc: int
    seed: int
    mass: float = float("nan")
    failed: bool = False
    diagnostic: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def violation(self) -> float:
        if self.failed:
            return float("inf")
        return float(sum(max(v, 0.0) for v in self.robust_constraints.values()))

    def to_dict(self) -> dict:
        return {
            "design": list(self.design),
            "y_obs": self.y_obs,
            "noise_var": self.noise_var,
            "mean_J": self.mean_J,
            "std_J": self.std_J,
            "robust_constraints": dict(self.robust_constraints),
            "feasible": self.feasible,
            "n_mc": self.n_mc,
            "seed": self.seed,
            "mass": self.mass,
            "failed": self.failed,
            "diagnostic": self.diagnostic,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Observation":
        return cls(
            design=tuple(int(v) for v in d["design"]),
            y_obs=float(d["y_obs"]),
            noise_var=float(d["noise_var"]),
            mean_J=float(d["mean_J"]),
            std_J=float(d["std_J"]),
            robust_constraints={k: float(v) for k, v in d["robust_constraints"].items()},
            feasible=bool(d["feasible"]),
            n_mc=int(d["n_mc"]),
            seed=int(d["seed"]),
            mass=float(d.get("mass", float("nan"))),
            failed=bool(d.get("failed", False)),
            diagnostic=str(d.get("diagnostic", "")),
        )


def failed_observation(design, n_mc: int, seed: int, message: str) -> Observation:
    return Observation(
        design=tuple(int(v) for v in design),
        y_obs=float("inf"),
        noise_var=float("nan"),
        mean_J=float("nan"),
        std_J=float("nan"),
        robust_constraints={},
        feasible=False,
        n_mc=n_mc,
        seed=seed,
        failed=True,
        diagnostic=message,
    )


def _mean_std(x: np.ndarray) -> tuple[float, float]:
    # constant samples give exactly (value, 0) rather than rounding noise
    if np.ptp(x) == 0:
        return float(x[0]), 0.0
    return float(np.mean(x)), float(np.std(x, ddof=1))


def robust_statistic(samples: np.ndarray, gamma: float) -> float:
    mean, std = _mean_std(samples)
    return mean + gamma * std


def bootstrap_variance(samples: np.ndarray, gamma: float, rng: np.random.Generator, B: int = BOOTSTRAP_RESAMPLES) -> float:
    """Variance of ``mean + gamma * sd`` over ``B`` bootstrap resamples."""
    n = samples.shape[0]
    if np.ptp(samples) == 0:
        return 0.0
    idx = rng.integers(0, n, size=(B, n))
    boot = samples[idx]
    stats = boot.mean(axis=1) + gamma * boot.std(axis=1, ddof=1)
    return float(np.var(stats, ddof=1))


def _betas(beta) -> dict:
    if beta is None:
        return {c: 1.0 for c in CONSTRAINTS}
    if isinstance(beta, (int, float)):
        return {c: float(beta) for c in CONSTRAINTS}
    if isinstance(beta, dict):
        return {c: float(beta.get(c, 1.0)) for c in CONSTRAINTS}
    vals = list(beta)
    if len(vals) != len(CONSTRAINTS):
        raise ValidationError(f"beta needs {len(CONSTRAINTS)} entries {CONSTRAINTS}")
    return dict(zip(CONSTRAINTS, map(float, vals)))


def evaluate_robust(
    model: StructureModel,
    catalog: Catalog,
    assignment,
    spec: UncertaintySpec,
    n_mc: int,
    gamma: float = 1.0,
    beta=None,
    mass_budget: float | None = None,
    seed: int = 0,
) -> Observation:
    """Run ``n_mc`` FEA solves over i.i.d. realizations and summarize them.

    Each realization draws from its own child stream of ``seed``, so results
    do not depend on evaluation order. A failing solve raises
    :class:`SolveError`.
    """
    if n_mc < 2:
        raise ValidationError(f"n_mc must be at least 2, got {n_mc}")
    if gamma < 0:
        raise ValidationError("gamma must be non-negative")
    a = check_assignment(model, catalog.physical, assignment)
    betas = _betas(beta)
    sections = section_properties(model, catalog, a)
    mass = structural_mass(model, sections)
    base_loads = model.nominal_loads
    dead = gravity_loads(model, sections) if model.self_weight else 0.0

    children = np.random.SeedSequence(seed).spawn(n_mc + 1)
    if spec.deterministic:
        E = np.full(1, model.material.E0)
        nodes = model.nodes[None]
        loads = (base_loads + dead)[None]
        truncated = 0
    else:
        reals = [sample_realization(spec, model, np.random.default_rng(c)) for c in children[:n_mc]]
        E = np.array([r.E for r in reals])
        nodes = model.nodes[None] + np.stack([r.offsets for r in reals])
        scales = np.stack([r.load_scales for r in reals])
        loads = base_loads[None] * scales[:, :, None] + dead
        truncated = sum(r.truncated for r in reals)
        if truncated:
            log.info("E truncation at %.2f E0 triggered %d times", E_FLOOR_FRACTION, truncated)

    res = solve_batch(model, sections, E, nodes, loads)
    J = res.strain_energy
    my = res.buckling_margins_y.max(axis=1)
    mz = res.buckling_margins_z.max(axis=1)
    if spec.deterministic:
        J, my, mz = (np.repeat(v, n_mc) for v in (J, my, mz))

    mean_J, std_J = _mean_std(J)
    y_obs = mean_J + gamma * std_J
    noise_var = bootstrap_variance(J, gamma, np.random.default_rng(children[n_mc]))

    constraints = {}
    if mass_budget is not None:
        constraints["mass"] = mass - float(mass_budget)
    for name, margins in (("buckling_y", my), ("buckling_z", mz)):
        mu, sd = _mean_std(margins)
        constraints[name] = mu + betas[name] * sd
    feasible = all(v <= 0 for v in constraints.values())
    return Observation(
        design=tuple(int(v) for v in a),
        y_obs=float(y_obs),
        noise_var=noise_var,
        mean_J=mean_J,
        std_J=std_J,
        robust_constraints=constraints,
        feasible=bool(feasible),
        n_mc=int(n_mc),
        seed=int(seed),
        mass=mass,
        extra={"truncated": truncated},
    )


@dataclass(frozen=True)
class MonteCarloOracle:
    """Binds a structure, catalog and robust settings into ``oracle(design, seed)``."""

    model: StructureModel
    catalog: Catalog
    spec: UncertaintySpec = field(default_factory=UncertaintySpec)
    n_mc: int = 500
    gamma: float = 1.0
    beta: object = None
    mass_budget: float | None = None

    def __call__(self, design, seed: int) -> Observation:
        return evaluate_robust(
            self.model,
            self.catalog,
            design,
            self.spec,
            self.n_mc,
            self.gamma,
            self.beta,
            self.mass_budget,
            seed,
        )

    def safe_call(self, design, seed: int) -> Observation:
        """Like calling the oracle, but solver failures become failed observations."""
        try:
            return self(design, seed)
        except (SolveError, ValidationError) as exc:
            log.warning("oracle failed on design %s: %s", list(design), exc)
            return failed_observation(design, self.n_mc, seed, str(exc))
