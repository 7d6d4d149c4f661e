"""Physical structure description: nodes, grouped frame elements, supports, loads.

File format (JSON)::

    {
      "name": "ten-beam",
      "dimensionality": 2,
      "nodes": [[x, y], ...],                     # metres
      "groups": ["horizontal", "vertical", ...],  # one categorical variable each
      "elements": [[node_i, node_j, group], ...],
      "supports": [{"node": 0, "fixed": [1, 1, 1]}, ...],
      "loads": [{"node": 5, "force": [0.0, -10000.0, 0.0]}, ...],
      "material": {"E0": 2.1e11, "rho": 7850.0, "g": 9.81, "nu": 0.3},
      "self_weight": false,
      "effective_length_factor": 1.0
    }

``fixed`` and ``force`` hold one entry per nodal DOF: (ux, uy, rz) in 2-D and
(ux, uy, uz, rx, ry, rz) in 3-D. A ``force`` may list translations only; the
remaining moment entries are taken as zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError

DEFAULT_MATERIAL = {"E0": 2.1e11, "rho": 7850.0, "g": 9.81, "nu": 0.3}

_BUNDLED_DIR = Path(__file__).parent / "data"


def dofs_per_node(dimensionality: int) -> int:
    return 3 if dimensionality == 2 else 6


@dataclass(frozen=True)
class Material:
    E0: float = 2.1e11
    rho: float = 7850.0
    g: float = 9.81
    nu: float = 0.3

    @property
    def shear_modulus_ratio(self) -> float:
        # G = E * ratio
        return 1.0 / (2.0 * (1.0 + self.nu))


@dataclass(frozen=True)
class StructureModel:
    nodes: np.ndarray
    elements: np.ndarray  # (n_el, 3): node_i, node_j, group
    groups: tuple[str, ...]
    supports: np.ndarray  # (n_nodes, dpn) bool
    nominal_loads: np.ndarray  # (n_nodes, dpn)
    material: Material = field(default_factory=Material)
    dimensionality: int = 2
    name: str = "structure"
    self_weight: bool = False
    effective_length_factor: float = 1.0

    def __post_init__(self):
        for attr, dtype in (("nodes", float), ("elements", int), ("supports", bool), ("nominal_loads", float)):
            arr = np.array(getattr(self, attr), dtype=dtype)
            arr.setflags(write=False)
            object.__setattr__(self, attr, arr)
        object.__setattr__(self, "groups", tuple(self.groups))

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def e(self) -> int:
        """Number of categorical variables (member groups)."""
        return len(self.groups)

    @property
    def dpn(self) -> int:
        return dofs_per_node(self.dimensionality)

    @property
    def loaded_nodes(self) -> np.ndarray:
        return np.flatnonzero(np.any(self.nominal_loads != 0, axis=1))

    def characteristic_span(self) -> float:
        """Largest distance between any two nodes."""
        diff = self.nodes[:, None, :] - self.nodes[None, :, :]
        return float(np.sqrt((diff**2).sum(-1)).max())

    def element_lengths(self, nodes=None) -> np.ndarray:
        x = self.nodes if nodes is None else nodes
        return np.linalg.norm(x[self.elements[:, 1]] - x[self.elements[:, 0]], axis=-1)

    def with_loads(self, scale: float) -> "StructureModel":
        return _replace(self, nominal_loads=self.nominal_loads * scale)

    def regrouped(self, mapping, names) -> "StructureModel":
        """Merge groups: ``mapping[old_group] = new_group``."""
        mapping = np.asarray(mapping, dtype=int)
        els = self.elements.copy()
        els[:, 2] = mapping[els[:, 2]]
        return _replace(self, elements=els, groups=tuple(names))


def _replace(model: StructureModel, **changes) -> StructureModel:
    fields = {k: getattr(model, k) for k in model.__dataclass_fields__}
    fields.update(changes)
    out = StructureModel(**fields)
    problems = validate(out)
    if problems:
        raise ValidationError("; ".join(problems))
    return out


def validate(model: StructureModel) -> list[str]:
    """Return a list of invariant violations; empty when the model is sound."""
    problems = []
    if model.dimensionality not in (2, 3):
        return [f"dimensionality must be 2 or 3, got {model.dimensionality}"]
    dpn = model.dpn
    nodes = model.nodes
    if nodes.ndim != 2 or nodes.shape[1] != model.dimensionality:
        return [f"nodes must be an (n, {model.dimensionality}) array"]
    if not np.all(np.isfinite(nodes)):
        problems.append("node coordinates must be finite")
    n = nodes.shape[0]
    els = model.elements
    if els.ndim != 2 or els.shape[1] != 3 or els.shape[0] == 0:
        problems.append("need at least one element given as (node_i, node_j, group)")
        return problems
    for k, (i, j, g) in enumerate(els):
        for node in (i, j):
            if not 0 <= node < n:
                problems.append(f"element {k} references missing node {node}")
        if not 0 <= g < model.e:
            problems.append(f"element {k} references missing group {g}")
        if i == j:
            problems.append(f"element {k} has zero length (node {i} repeated)")
        elif 0 <= i < n and 0 <= j < n and np.linalg.norm(nodes[j] - nodes[i]) <= 0:
            problems.append(f"element {k} has zero length")
    counts = np.bincount(np.clip(els[:, 2], 0, None), minlength=model.e)
    for g, name in enumerate(model.groups):
        if counts[g] == 0:
            problems.append(f"group {name!r} has no elements")
    if model.supports.shape != (n, dpn):
        problems.append(f"support mask must have shape ({n}, {dpn})")
    elif not model.supports.any():
        problems.append("no supports")
    if model.nominal_loads.shape != (n, dpn):
        problems.append(f"load table must have shape ({n}, {dpn})")
    elif not np.all(np.isfinite(model.nominal_loads)):
        problems.append("loads must be finite")
    mat = model.material
    if not (mat.E0 > 0 and mat.rho >= 0 and mat.g >= 0):
        problems.append("material constants must be positive")
    if not model.effective_length_factor > 0:
        problems.append("effective length factor must be positive")
    return problems


def from_dict(data: dict, source: str = "<dict>") -> StructureModel:
    try:
        dim = int(data.get("dimensionality", 2))
        if dim not in (2, 3):
            raise ValidationError(f"{source}: dimensionality must be 2 or 3, got {dim}")
        dpn = dofs_per_node(dim)
        nodes = np.array(data["nodes"], dtype=float)
        n = nodes.shape[0]
        groups = [str(g) for g in data["groups"]]
        elements = np.array([[int(v) for v in el] for el in data["elements"]], dtype=int).reshape(-1, 3)
        supports = np.zeros((n, dpn), dtype=bool)
        for s in data.get("supports", []):
            node = int(s["node"])
            if not 0 <= node < n:
                raise ValidationError(f"{source}: support references missing node {node}")
            supports[node] = _dof_vector(s["fixed"], dpn, dim, f"{source}: support at node {node}").astype(bool)
        loads = np.zeros((n, dpn))
        for ld in data.get("loads", []):
            node = int(ld["node"])
            if not 0 <= node < n:
                raise ValidationError(f"{source}: load references missing node {node}")
            loads[node] += _dof_vector(ld["force"], dpn, dim, f"{source}: load at node {node}")
        material = Material(**{**DEFAULT_MATERIAL, **data.get("material", {})})
    except KeyError as exc:
        raise ParseError(f"{source}: missing key {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ParseError(f"{source}: {exc}") from None

    model = StructureModel(
        nodes=nodes,
        elements=elements,
        groups=tuple(groups),
        supports=supports,
        nominal_loads=loads,
        material=material,
        dimensionality=dim,
        name=str(data.get("name", Path(source).stem)),
        self_weight=bool(data.get("self_weight", False)),
        effective_length_factor=float(data.get("effective_length_factor", 1.0)),
    )
    problems = validate(model)
    if problems:
        raise ValidationError(f"{source}: " + "; ".join(problems))
    return model


def _dof_vector(values, dpn, dim, where):
    v = np.asarray(values, dtype=float).ravel()
    if v.size == dim and dim != dpn:
        v = np.concatenate([v, np.zeros(dpn - dim)])
    if v.size != dpn:
        raise ValidationError(f"{where}: expected {dim} or {dpn} entries, got {v.size}")
    return v


def to_dict(model: StructureModel) -> dict:
    return {
        "name": model.name,
        "dimensionality": model.dimensionality,
        "nodes": model.nodes.tolist(),
        "groups": list(model.groups),
        "elements": model.elements.tolist(),
        "supports": [
            {"node": int(i), "fixed": model.supports[i].astype(int).tolist()}
            for i in np.flatnonzero(model.supports.any(axis=1))
        ],
        "loads": [
            {"node": int(i), "force": model.nominal_loads[i].tolist()}
            for i in np.flatnonzero(np.any(model.nominal_loads != 0, axis=1))
        ],
        "material": {
            "E0": model.material.E0,
            "rho": model.material.rho,
            "g": model.material.g,
            "nu": model.material.nu,
        },
        "self_weight": model.self_weight,
        "effective_length_factor": model.effective_length_factor,
    }


def load_structure(path) -> StructureModel:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"structure file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}: {exc.msg}") from None
    return from_dict(data, source=str(path))


def save_structure(model: StructureModel, path) -> None:
    Path(path).write_text(json.dumps(to_dict(model), indent=2) + "\n", encoding="utf-8")


def bundled_structure_path(name: str = "tenbeam") -> Path:
    return _BUNDLED_DIR / f"{name}.json"


def bundled_structure(name: str = "tenbeam") -> StructureModel:
    return load_structure(bundled_structure_path(name))
