"""Linear-elastic Euler-Bernoulli frame analysis.

Everything here is vectorized over a leading batch axis of realizations
(Young's modulus, perturbed node coordinates, loads) so a whole Monte Carlo
campaign for one assignment is a handful of numpy calls. The single-solve
entry point :func:`assemble_and_solve` is a batch of one.

Local axes: x runs from node i to node j. In 2-D the in-plane bending
stiffness uses ``Iz``. In 3-D local y is ``Z_global x x`` (global X is used
as reference for near-vertical members) and z completes the right-handed
triad, so gravity bending of a horizontal member engages ``Iy``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .catalog import Catalog
from .errors import SolveError, ValidationError
from .structmodel import StructureModel

_PIVOT_RTOL = 1e-12
_CHUNK_ENTRIES = 2e7


@dataclass(frozen=True)
class Sections:
    """Per-element raw section properties for one assignment."""

    A: np.ndarray
    Iy: np.ndarray
    Iz: np.ndarray
    J: np.ndarray


@dataclass(frozen=True)
class FeaResult:
    displacements: np.ndarray  # (n_nodes, dpn)
    strain_energy: float
    mass: float
    axial_forces: np.ndarray  # tension positive
    buckling_margins_y: np.ndarray  # positive = violated
    buckling_margins_z: np.ndarray
    loads: np.ndarray

    @property
    def external_work(self) -> float:
        """Half the work of the applied loads, ``P.u / 2``."""
        return 0.5 * float(np.sum(self.loads * self.displacements))

    def to_dict(self) -> dict:
        return {
            "strain_energy": self.strain_energy,
            "mass": self.mass,
            "axial_forces": self.axial_forces.tolist(),
            "buckling_margins_y": self.buckling_margins_y.tolist(),
            "buckling_margins_z": self.buckling_margins_z.tolist(),
            "displacements": self.displacements.tolist(),
        }


@dataclass(frozen=True)
class BatchResult:
    displacements: np.ndarray  # (S, n_nodes, dpn)
    strain_energy: np.ndarray  # (S,)
    axial_forces: np.ndarray  # (S, n_el)
    buckling_margins_y: np.ndarray
    buckling_margins_z: np.ndarray
    external_work: np.ndarray  # (S,)


def check_assignment(model: StructureModel, catalog: Catalog, assignment) -> np.ndarray:
    a = np.asarray(assignment)
    if a.shape != (model.e,):
        raise ValidationError(f"assignment needs {model.e} section indices, got shape {a.shape}")
    if not np.issubdtype(a.dtype, np.integer):
        if not np.all(np.equal(np.mod(a, 1), 0)):
            raise ValidationError("section indices must be integers")
        a = a.astype(int)
    if np.any(a < 0) or np.any(a >= catalog.n):
        raise ValidationError(f"section index out of range [0, {catalog.n})")
    return a.astype(int)


def section_properties(model: StructureModel, catalog: Catalog, assignment) -> Sections:
    cat = catalog.physical
    a = check_assignment(model, cat, assignment)
    per_el = a[model.elements[:, 2]]
    A = cat.column("A")[per_el]
    Iy = cat.column("Iy")[per_el]
    Iz = cat.column("Iz")[per_el]
    # polar approximation when the catalog carries no torsion constant
    J = cat.column("Jx")[per_el] if cat.has("Jx") else Iy + Iz
    return Sections(A, Iy, Iz, J)


def structural_mass(model: StructureModel, sections: Sections) -> float:
    """Mass on nominal geometry, ``sum(rho * A * L)``."""
    return float(np.sum(model.material.rho * sections.A * model.element_lengths()))


def gravity_loads(model: StructureModel, sections: Sections) -> np.ndarray:
    """Lumped nodal self-weight (half of each member to each end)."""
    loads = np.zeros((model.n_nodes, model.dpn))
    w = 0.5 * model.material.rho * model.material.g * sections.A * model.element_lengths()
    vertical = model.dimensionality - 1
    np.add.at(loads[:, vertical], model.elements[:, 0], -w)
    np.add.at(loads[:, vertical], model.elements[:, 1], -w)
    return loads


def _local_stiffness_2d(E, A, I, L):
    a = E * A / L
    b = 12 * E * I / L**3
    c = 6 * E * I / L**2
    d = 4 * E * I / L
    f = 2 * E * I / L
    z = np.zeros_like(a)
    rows = [
        [a, z, z, -a, z, z],
        [z, b, c, z, -b, c],
        [z, c, d, z, -c, f],
        [-a, z, z, a, z, z],
        [z, -b, -c, z, b, -c],
        [z, c, f, z, -c, d],
    ]
    return np.moveaxis(np.array(rows), (0, 1), (-2, -1))


def _local_stiffness_3d(E, G, A, Iy, Iz, J, L):
    k = np.zeros(np.shape(L) + (12, 12))
    ax = E * A / L
    tor = G * J / L
    k[..., 0, 0] = k[..., 6, 6] = ax
    k[..., 0, 6] = k[..., 6, 0] = -ax
    k[..., 3, 3] = k[..., 9, 9] = tor
    k[..., 3, 9] = k[..., 9, 3] = -tor
    # bending in the local x-y plane (about z)
    for (i, j), coef in {
        (1, 1): 12, (1, 5): 6, (1, 7): -12, (1, 11): 6,
        (5, 5): 4, (5, 7): -6, (5, 11): 2,
        (7, 7): 12, (7, 11): -6, (11, 11): 4,
    }.items():
        power = {12: 3, -12: 3, 6: 2, -6: 2, 4: 1, 2: 1}[coef]
        k[..., i, j] = k[..., j, i] = coef * E * Iz / L**power
    # bending in the local x-z plane (about y)
    for (i, j), coef in {
        (2, 2): 12, (2, 4): -6, (2, 8): -12, (2, 10): -6,
        (4, 4): 4, (4, 8): 6, (4, 10): 2,
        (8, 8): 12, (8, 10): 6, (10, 10): 4,
    }.items():
        power = {12: 3, -12: 3, 6: 2, -6: 2, 4: 1, 2: 1}[coef]
        k[..., i, j] = k[..., j, i] = coef * E * Iy / L**power
    return k


def _rotation_3d(xhat):
    ref = np.broadcast_to(np.array([0.0, 0.0, 1.0]), xhat.shape).copy()
    vertical = np.abs(xhat[..., 2]) > 0.999
    ref[vertical] = np.array([1.0, 0.0, 0.0])
    yhat = np.cross(ref, xhat)
    yhat /= np.linalg.norm(yhat, axis=-1, keepdims=True)
    zhat = np.cross(xhat, yhat)
    return np.stack([xhat, yhat, zhat], axis=-2)


def _global_element_stiffness(model, sections, E, nodes):
    """Element stiffness matrices in global axes, shape (S, n_el, nd, nd)."""
    els = model.elements
    d = nodes[:, els[:, 1]] - nodes[:, els[:, 0]]
    L = np.linalg.norm(d, axis=-1)
    if np.any(L <= 0) or not np.all(np.isfinite(L)):
        raise ValidationError("perturbed geometry has a zero-length element")
    xhat = d / L[..., None]
    Eb = E[:, None]
    if model.dimensionality == 2:
        k = _local_stiffness_2d(Eb, sections.A, sections.Iz, L)
        c, s = xhat[..., 0], xhat[..., 1]
        T = np.zeros(L.shape + (6, 6))
        for o in (0, 3):
            T[..., o, o] = c
            T[..., o, o + 1] = s
            T[..., o + 1, o] = -s
            T[..., o + 1, o + 1] = c
            T[..., o + 2, o + 2] = 1.0
    else:
        G = Eb * model.material.shear_modulus_ratio
        k = _local_stiffness_3d(Eb, G, sections.A, sections.Iy, sections.Iz, sections.J, L)
        R = _rotation_3d(xhat)
        T = np.zeros(L.shape + (12, 12))
        for o in (0, 3, 6, 9):
            T[..., o : o + 3, o : o + 3] = R
    return np.einsum("...ji,...jk,...kl->...il", T, k, T, optimize=True), L, xhat


@lru_cache(maxsize=64)
def _scatter(elements_bytes, n_el, dpn, ndof):
    els = np.frombuffer(elements_bytes, dtype=np.int64).reshape(n_el, 3)
    nd = 2 * dpn
    dofs = np.concatenate(
        [els[:, :1] * dpn + np.arange(dpn), els[:, 1:2] * dpn + np.arange(dpn)], axis=1
    )
    rows = (dofs[:, :, None] * ndof + dofs[:, None, :]).ravel()
    cols = np.arange(n_el * nd * nd)
    return sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(ndof * ndof, n_el * nd * nd)), dofs


def _assemble(model, ke):
    S = ke.shape[0]
    ndof = model.n_nodes * model.dpn
    els = np.ascontiguousarray(model.elements, dtype=np.int64)
    scatter, _ = _scatter(els.tobytes(), model.n_elements, model.dpn, ndof)
    flat = scatter @ ke.reshape(S, -1).T
    return np.asarray(flat).T.reshape(S, ndof, ndof)


def stiffness_matrix(model: StructureModel, catalog: Catalog, assignment, E=None, nodes=None) -> np.ndarray:
    """Global stiffness before support elimination."""
    sections = section_properties(model, catalog, assignment)
    E = model.material.E0 if E is None else E
    x = model.nodes if nodes is None else np.asarray(nodes, dtype=float)
    ke, _, _ = _global_element_stiffness(model, sections, np.array([float(E)]), x[None])
    return _assemble(model, ke)[0]


def solve_batch(model: StructureModel, sections: Sections, E, nodes, loads) -> BatchResult:
    """Static solves for S realizations.

    ``E`` has shape (S,), ``nodes`` (S, n_nodes, dim) and ``loads``
    (S, n_nodes, dpn).
    """
    E = np.asarray(E, dtype=float)
    nodes = np.asarray(nodes, dtype=float)
    loads = np.asarray(loads, dtype=float)
    if not (np.all(np.isfinite(E)) and np.all(np.isfinite(nodes)) and np.all(np.isfinite(loads))):
        raise ValidationError("non-finite modulus, coordinates or loads")
    if np.any(E <= 0):
        raise ValidationError("Young's modulus must be positive")
    S = E.shape[0]
    ndof = model.n_nodes * model.dpn
    chunk = max(1, int(_CHUNK_ENTRIES // (ndof * ndof)))
    parts = [
        _solve_chunk(model, sections, E[s : s + chunk], nodes[s : s + chunk], loads[s : s + chunk])
        for s in range(0, S, chunk)
    ]
    if len(parts) == 1:
        return parts[0]
    return BatchResult(*(np.concatenate(arrs) for arrs in zip(*(p.__dict__.values() for p in parts))))


def _solve_chunk(model, sections, E, nodes, loads):
    S = E.shape[0]
    ke, L, xhat = _global_element_stiffness(model, sections, E, nodes)
    K = _assemble(model, ke)
    free = ~model.supports.ravel()
    Kff = K[:, free][:, :, free]
    P = loads.reshape(S, -1)
    Pf = P[:, free]

    try:
        chol = np.linalg.cholesky(Kff)
    except np.linalg.LinAlgError:
        raise SolveError(_mechanism_message(model, Kff, free)) from None
    diagL = np.diagonal(chol, axis1=-2, axis2=-1)
    scale = np.max(np.diagonal(Kff, axis1=-2, axis2=-1), axis=-1)
    if np.any(diagL.min(axis=-1) ** 2 < _PIVOT_RTOL * scale):
        raise SolveError(_mechanism_message(model, Kff, free))

    uf = np.linalg.solve(Kff, Pf[..., None])[..., 0]
    u = np.zeros((S, K.shape[-1]))
    u[:, free] = uf
    energy = 0.5 * np.einsum("si,sij,sj->s", uf, Kff, uf)
    work = 0.5 * np.einsum("si,si->s", Pf, uf)

    dim = model.dimensionality
    ue = u.reshape(S, model.n_nodes, model.dpn)[..., :dim]
    du = ue[:, model.elements[:, 1]] - ue[:, model.elements[:, 0]]
    axial = E[:, None] * sections.A / L * np.einsum("sed,sed->se", du, xhat)

    Le = model.effective_length_factor * L
    Fy = np.pi**2 * E[:, None] * sections.Iy / Le**2
    Fz = np.pi**2 * E[:, None] * sections.Iz / Le**2
    compression = np.maximum(-axial, 0.0)
    return BatchResult(
        u.reshape(S, model.n_nodes, model.dpn), energy, axial, compression - Fy, compression - Fz, work
    )


def _mechanism_message(model, Kff, free):
    bad = 0
    for s in range(Kff.shape[0]):
        try:
            np.linalg.cholesky(Kff[s])
        except np.linalg.LinAlgError:
            bad = s
            break
    w, v = np.linalg.eigh(Kff[bad])
    dof = np.flatnonzero(free)[int(np.argmax(np.abs(v[:, 0])))]
    node, comp = divmod(int(dof), model.dpn)
    return (
        f"singular stiffness (mechanism): near-zero pivot {w[0]:.3e} "
        f"at node {node}, dof {comp}"
    )


def assemble_and_solve(
    model: StructureModel,
    catalog: Catalog,
    assignment,
    E: float | None = None,
    node_perturbation=None,
    loads=None,
) -> FeaResult:
    """Solve ``K u = P`` for one realization and post-process the members."""
    sections = section_properties(model, catalog, assignment)
    E = model.material.E0 if E is None else float(E)
    nodes = model.nodes if node_perturbation is None else model.nodes + np.asarray(node_perturbation, dtype=float)
    if loads is None:
        loads = model.nominal_loads
        if model.self_weight:
            loads = loads + gravity_loads(model, sections)
    loads = np.asarray(loads, dtype=float)
    res = solve_batch(model, sections, np.array([E]), nodes[None], loads[None])
    return FeaResult(
        displacements=res.displacements[0],
        strain_energy=float(res.strain_energy[0]),
        mass=structural_mass(model, sections),
        axial_forces=res.axial_forces[0],
        buckling_margins_y=res.buckling_margins_y[0],
        buckling_margins_z=res.buckling_margins_z[0],
        loads=loads,
    )
