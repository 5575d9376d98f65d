"""Problem parameters, trapping potentials, grids and grid fields."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .exceptions import (
    DomainError,
    ExponentTooLargeError,
    ExponentTooSmallError,
    NegativeCouplingError,
)

__all__ = [
    "ProblemParams",
    "PotentialSpec",
    "RadialGrid",
    "CartesianGrid2D",
    "Field",
    "make_params",
    "eval_potential",
    "well_coefficient",
    "potential_on",
    "sphere_area",
]


def sphere_area(n: int) -> float:
    """Surface area of the unit sphere in R^n."""
    return 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)


@dataclass(frozen=True)
class ProblemParams:
    p: float
    n: int
    a: float = 0.0
    relaxed: bool = False

    @property
    def s(self) -> float:
        return self.p + self.p**2 / self.n

    def with_a(self, a: float) -> "ProblemParams":
        return make_params(self.p, self.n, a, relaxed=self.relaxed)


def make_params(p: float, n: int, a: float = 0.0, relaxed: bool = False) -> ProblemParams:
    """Validate and build a parameter set.

    ``relaxed=True`` additionally admits ``p == n``; it exists so the planar
    cubic case (p = n = 2) can serve as a cross-check for the limit solver.
    The constrained minimizer refuses relaxed parameters.
    """
    if int(n) != n or n < 2:
        raise DomainError(f"dimension n must be an integer >= 2, got {n!r}")
    n = int(n)
    p = float(p)
    a = float(a)
    if not p > 1.0:
        raise ExponentTooSmallError(f"p must be > 1, got {p}")
    if p > n or (p == n and not relaxed):
        raise ExponentTooLargeError(f"p must be < n (p={p}, n={n})")
    if a < 0.0:
        raise NegativeCouplingError(f"a must be >= 0, got {a}")
    return ProblemParams(p=p, n=n, a=a, relaxed=bool(relaxed and p == n))


Point = Union[Sequence[float], np.ndarray]


@dataclass(frozen=True)
class PotentialSpec:
    """Trapping potential V.

    ``zero``          V = 0
    ``radial_power``  V = |x|^q
    ``multi_well``    V = h * prod_i |x - x_i|^{q_i}
    """

    kind: str
    q: float | None = None
    wells: tuple = ()
    h: float = 1.0

    def __post_init__(self):
        if self.kind == "zero":
            return
        if self.kind == "radial_power":
            if self.q is None or not self.q > 0:
                raise DomainError("radial_power needs q > 0")
            return
        if self.kind != "multi_well":
            raise DomainError(f"unknown potential kind {self.kind!r}")
        if not self.wells:
            raise DomainError("multi_well needs at least one well")
        if not self.h > 0:
            raise DomainError("envelope constant h must be > 0")
        wells = tuple((tuple(float(c) for c in x), float(q)) for x, q in self.wells)
        dims = {len(x) for x, _ in wells}
        if len(dims) != 1:
            raise DomainError("well centers must share one dimension")
        for x, q in wells:
            if not q > 0:
                raise DomainError(f"well exponent must be > 0, got {q}")
        centers = [x for x, _ in wells]
        if len(set(centers)) != len(centers):
            raise DomainError("well centers must be pairwise distinct")
        object.__setattr__(self, "wells", wells)

    @classmethod
    def zero(cls) -> "PotentialSpec":
        return cls("zero")

    @classmethod
    def radial_power(cls, q: float) -> "PotentialSpec":
        return cls("radial_power", q=float(q))

    @classmethod
    def multi_well(cls, wells, h: float = 1.0) -> "PotentialSpec":
        return cls("multi_well", wells=tuple(wells), h=float(h))

    @property
    def max_exponent(self) -> float:
        if self.kind == "radial_power":
            return self.q
        if self.kind == "multi_well":
            return max(q for _, q in self.wells)
        raise DomainError("the zero potential has no well exponent")

    @property
    def centers(self) -> np.ndarray:
        if self.kind == "multi_well":
            return np.array([x for x, _ in self.wells])
        raise DomainError("only multi_well potentials carry explicit centers")

    def evaluate(self, points) -> np.ndarray:
        """Vectorised V on an array of points with trailing axis = coordinates."""
        pts = np.asarray(points, dtype=float)
        if self.kind == "zero":
            return np.zeros(pts.shape[:-1])
        if self.kind == "radial_power":
            return np.linalg.norm(pts, axis=-1) ** self.q
        out = np.full(pts.shape[:-1], self.h)
        for x, q in self.wells:
            out = out * np.linalg.norm(pts - np.asarray(x), axis=-1) ** q
        return out

    def to_dict(self) -> dict:
        if self.kind == "zero":
            return {"kind": "zero"}
        if self.kind == "radial_power":
            return {"kind": "radial_power", "q": self.q}
        return {
            "kind": "multi_well",
            "h": self.h,
            "wells": [{"x": list(x), "q": q} for x, q in self.wells],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PotentialSpec":
        kind = d.get("kind")
        allowed = {"zero": {"kind"}, "radial_power": {"kind", "q"}, "multi_well": {"kind", "h", "wells"}}
        if kind not in allowed:
            raise DomainError(f"unknown potential kind {kind!r}")
        extra = set(d) - allowed[kind]
        if extra:
            raise DomainError(f"unknown potential key(s): {sorted(extra)}")
        if kind == "zero":
            return cls.zero()
        if kind == "radial_power":
            return cls.radial_power(d["q"])
        wells = []
        for w in d["wells"]:
            extra = set(w) - {"x", "q"}
            if extra:
                raise DomainError(f"unknown well key(s): {sorted(extra)}")
            wells.append((w["x"], w["q"]))
        return cls.multi_well(wells, h=d.get("h", 1.0))


def eval_potential(spec: PotentialSpec, x: Point) -> float:
    return float(spec.evaluate(np.asarray(x, dtype=float)[None, :])[0])


def well_coefficient(spec: PotentialSpec, i: int) -> float:
    """Limit of V(x)/|x - x_i|^{q_i} as x -> x_i."""
    if spec.kind != "multi_well":
        raise DomainError("well coefficients are defined for multi_well potentials only")
    if not 0 <= i < len(spec.wells):
        raise DomainError(f"well index {i} out of range")
    xi = np.asarray(spec.wells[i][0])
    c = spec.h
    for j, (xj, qj) in enumerate(spec.wells):
        if j != i:
            c *= float(np.linalg.norm(xi - np.asarray(xj))) ** qj
    return c


@dataclass(frozen=True)
class RadialGrid:
    """Uniform radial nodes r_j = j*h on [0, r_max] for radial fields in R^dim."""

    r_max: float
    m: int
    dim: int

    def __post_init__(self):
        if not self.r_max > 0:
            raise DomainError("r_max must be > 0")
        if self.m < 3:
            raise DomainError("radial grid needs at least 3 nodes")
        if self.dim < 1:
            raise DomainError("dim must be >= 1")

    @classmethod
    def with_spacing(cls, r_max: float, h: float, dim: int) -> "RadialGrid":
        m = int(round(r_max / h)) + 1
        if m % 2 == 0:
            m += 1
        return cls(r_max=(m - 1) * h, m=m, dim=dim)

    @property
    def h(self) -> float:
        return self.r_max / (self.m - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.m) * self.h

    @property
    def shape(self) -> tuple:
        return (self.m,)

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.m, dtype=bool)
        mask[-1] = True
        return mask


@dataclass(frozen=True)
class CartesianGrid2D:
    """Square grid [-L, L]^2 with N nodes per axis; arrays are indexed [ix, iy]."""

    half_width: float
    N: int
    center: tuple = (0.0, 0.0)

    def __post_init__(self):
        if not self.half_width > 0:
            raise DomainError("half_width must be > 0")
        if self.N < 3:
            raise DomainError("2-D grid needs at least 3 nodes per axis")

    @property
    def dim(self) -> int:
        return 2

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / (self.N - 1)

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(-self.half_width, self.half_width, self.N)

    def axes(self) -> tuple:
        return (self.axis + self.center[0], self.axis + self.center[1])

    def mesh(self) -> np.ndarray:
        """Node coordinates, shape (N, N, 2)."""
        x, y = self.axes()
        X, Y = np.meshgrid(x, y, indexing="ij")
        return np.stack([X, Y], axis=-1)

    @property
    def shape(self) -> tuple:
        return (self.N, self.N)

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[0, :] = mask[-1, :] = mask[:, 0] = mask[:, -1] = True
        return mask


Grid = Union[RadialGrid, CartesianGrid2D]


@dataclass(frozen=True)
class Field:
    """Real nodal values on a grid.

    Solver-produced fields carry the Dirichlet value 0 on boundary nodes; use
    :meth:`dirichlet` to build one.
    """

    values: np.ndarray
    grid: Grid = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise DomainError(f"field shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise DomainError("field values must be finite")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def dirichlet(cls, values, grid) -> "Field":
        v = np.array(values, dtype=float)
        v[grid.boundary_mask()] = 0.0
        return cls(v, grid)

    @property
    def is_radial(self) -> bool:
        return isinstance(self.grid, RadialGrid)

    def with_values(self, values) -> "Field":
        return Field(values, self.grid)

    def coordinates(self) -> np.ndarray:
        """Radial: node radii. 2-D: node coordinates of shape (N, N, 2)."""
        if self.is_radial:
            return self.grid.nodes
        return self.grid.mesh()


def potential_on(spec: PotentialSpec, grid: Grid) -> np.ndarray:
    """Nodal values of V on a grid.

    Radial grids only accept potentials that are functions of |x| about the origin.
    """
    if isinstance(grid, RadialGrid):
        r = grid.nodes
        if spec.kind == "zero":
            return np.zeros_like(r)
        if spec.kind == "radial_power":
            return r**spec.q
        if len(spec.wells) == 1 and not any(spec.wells[0][0]):
            return spec.h * r ** spec.wells[0][1]
        raise DomainError("a radial grid needs a potential that is radial about the origin")
    return spec.evaluate(grid.mesh())
