"""Finite catalogs of categorical instances (cross-sections) and their attributes."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError

REQUIRED_COLUMNS = ("A", "Iy", "Iz")
OPTIONAL_COLUMNS = ("Jx",)

_BUNDLED_DIR = Path(__file__).parent / "data"


@dataclass(frozen=True)
class Catalog:
    """Immutable table of ``n`` instances, each an ``M``-vector of attributes.

    ``values`` keeps raw physical units (m^2, m^4). ``raw`` points at the
    un-normalized catalog when this one came out of :func:`normalize`, so
    structural analysis can always reach physical values.
    """

    ids: tuple[str, ...]
    attribute_names: tuple[str, ...]
    values: np.ndarray
    raw: "Catalog | None" = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        problems = catalog_problems(self.ids, self.attribute_names, values, check_area=self.raw is None)
        if problems:
            raise ValidationError("; ".join(problems))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def M(self) -> int:
        return self.values.shape[1]

    @property
    def physical(self) -> "Catalog":
        return self.raw if self.raw is not None else self

    def column(self, name: str) -> np.ndarray:
        try:
            j = self.attribute_names.index(name)
        except ValueError:
            raise KeyError(f"catalog has no attribute {name!r}") from None
        return self.values[:, j]

    def has(self, name: str) -> bool:
        return name in self.attribute_names

    def subset(self, indices) -> "Catalog":
        idx = [int(i) for i in indices]
        if self.raw is not None:
            raise ValidationError("subset the raw catalog, then normalize")
        return Catalog(tuple(self.ids[i] for i in idx), self.attribute_names, self.values[idx])


def catalog_problems(ids, names, values, check_area=True) -> list[str]:
    problems = []
    if values.ndim != 2:
        return ["attribute table must be two-dimensional"]
    n, m = values.shape
    if n < 2:
        problems.append(f"catalog needs at least 2 instances, got {n}")
    if len(ids) != n:
        problems.append(f"{len(ids)} ids for {n} rows")
    if len(names) != m:
        problems.append(f"{len(names)} attribute names for {m} columns")
    seen = set()
    for i in ids:
        if i in seen:
            problems.append(f"duplicate instance id {i!r}")
        seen.add(i)
    if not np.all(np.isfinite(values)):
        problems.append("attribute values must be finite")
    if check_area and "A" in names:
        area = values[:, list(names).index("A")]
        bad = [ids[k] for k in np.flatnonzero(~(area > 0))] if len(ids) == n else []
        if bad:
            problems.append(f"area must be strictly positive (instances {', '.join(bad)})")
    return problems


def load_catalog(path) -> Catalog:
    """Read a catalog CSV with header ``id,A,Iy,Iz[,Jx]``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"catalog file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if not header or header[0] != "id":
            raise ParseError(f"{path}:1: first column must be 'id'")
        names = tuple(header[1:])
        missing = [c for c in REQUIRED_COLUMNS if c not in names]
        if missing:
            raise ParseError(f"{path}:1: missing required columns {missing}")
        unknown = [c for c in names if c not in REQUIRED_COLUMNS + OPTIONAL_COLUMNS]
        if unknown:
            raise ParseError(f"{path}:1: unknown columns {unknown}")

        ids, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            values = []
            for name, cell in zip(names, row[1:]):
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(
                        f"{path}:{lineno}: column {name!r} is not numeric: {cell.strip()!r}"
                    ) from None
                if not math.isfinite(v):
                    raise ParseError(f"{path}:{lineno}: column {name!r} is not finite")
                values.append(v)
            ids.append(row[0].strip())
            rows.append(values)

    return Catalog(tuple(ids), names, np.array(rows, dtype=float).reshape(len(rows), len(names)))


def save_catalog(catalog: Catalog, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("id",) + catalog.attribute_names)
        for i, row in zip(catalog.ids, catalog.values):
            writer.writerow([i] + [repr(float(v)) for v in row])


def normalize(catalog: Catalog) -> Catalog:
    """Min-max scale every attribute column to [0, 1].

    Constant columns become all zeros. Normalizing an already normalized
    catalog returns identical values.
    """
    x = catalog.values
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    span = hi - lo
    out = np.zeros_like(x)
    live = span > 0
    out[:, live] = (x[:, live] - lo[live]) / span[live]
    # exact endpoints, so a second pass is a no-op
    for j in np.flatnonzero(live):
        out[x[:, j] == lo[j], j] = 0.0
        out[x[:, j] == hi[j], j] = 1.0
    return Catalog(catalog.ids, catalog.attribute_names, out, raw=catalog.physical)


def ibeam_properties(h: float, b: float, tf: float, tw: float) -> tuple[float, float, float, float]:
    """Thin-walled doubly symmetric I-section: (A, Iy strong axis, Iz weak axis, Jx)."""
    hw = h - 2 * tf
    A = 2 * b * tf + hw * tw
    Iy = (b * h**3 - (b - tw) * hw**3) / 12
    Iz = 2 * tf * b**3 / 12 + hw * tw**3 / 12
    J = (2 * b * tf**3 + hw * tw**3) / 3
    return A, Iy, Iz, J


# Light-gauge wide-flange family behind the bundled 54-section catalog.
GENERATOR_DEPTHS = tuple(round(0.06 + 0.0225 * i, 4) for i in range(9))  # m
GENERATOR_WIDTH_RATIOS = (1.2, 2.0)  # flange width / depth
GENERATOR_THICKNESSES = (0.0004, 0.0007, 0.0011)  # flange thickness, m
GENERATOR_WEB_RATIO = 0.6  # web / flange thickness


def generate_ibeam_catalog() -> Catalog:
    """Deterministic 9 x 2 x 3 = 54 section family with columns (A, Iy, Iz, Jx)."""
    ids, rows = [], []
    for h in GENERATOR_DEPTHS:
        for r in GENERATOR_WIDTH_RATIOS:
            for t in GENERATOR_THICKNESSES:
                ids.append(f"LG{round(h * 1000):03d}-W{round(r * 10):02d}-T{round(t * 1e5):03d}")
                rows.append(ibeam_properties(h, r * h, t, GENERATOR_WEB_RATIO * t))
    return Catalog(tuple(ids), ("A", "Iy", "Iz", "Jx"), np.array(rows))


def bundled_catalog_path() -> Path:
    return _BUNDLED_DIR / "catalog54.csv"


def bundled_catalog() -> Catalog:
    return load_catalog(bundled_catalog_path())
