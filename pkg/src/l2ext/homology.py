"""Free chain complexes over C[Z^n] and their extended L^2 homology."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import ecat, fiber, spectral
from .ecat import VirtualModule
from .fiber import DEFAULT_RANK_TOL, TorusGrid
from .laurent import LaurentMatrix, adjoint, matmul

CHAIN_TOL = 1e-9
# absolute density tolerances at the default grids
DENSITY_TOL = {1: 1e-4, 2: 1e-3}


class ChainError(ValueError):
    """Boundary shapes or the chain condition are violated."""


@dataclass(frozen=True, eq=False)
class FreeChainComplex:
    num_vars: int
    ranks: tuple[int, ...]
    boundaries: tuple[LaurentMatrix, ...]  # boundaries[i - 1] is d_i : C_i -> C_{i-1}

    def __post_init__(self):
        object.__setattr__(self, "ranks", tuple(int(r) for r in self.ranks))
        object.__setattr__(self, "boundaries", tuple(self.boundaries))
        if len(self.boundaries) != max(len(self.ranks) - 1, 0):
            raise ChainError(f"{len(self.ranks)} degrees need {len(self.ranks) - 1} boundaries")
        for i, d in enumerate(self.boundaries, start=1):
            if d.shape != (self.ranks[i - 1], self.ranks[i]):
                raise ChainError(f"d_{i} has shape {d.shape}, expected {(self.ranks[i - 1], self.ranks[i])}")
            if d.num_vars != self.num_vars:
                raise ChainError(f"d_{i} has {d.num_vars} variables, expected {self.num_vars}")

    @property
    def top(self) -> int:
        return len(self.ranks) - 1

    def d(self, i: int) -> LaurentMatrix:
        """d_i : C_i -> C_{i-1}; zero outside 1..top."""
        if 1 <= i <= self.top:
            return self.boundaries[i - 1]
        rows = self.ranks[i - 1] if 1 <= i <= self.top + 1 else 0
        cols = self.ranks[i] if 0 <= i <= self.top else 0
        return LaurentMatrix.zeros(rows, cols, self.num_vars)

    def euler_characteristic(self) -> int:
        return sum((-1) ** i * r for i, r in enumerate(self.ranks))

    # -- JSON -----------------------------------------------------------
    def to_json(self) -> dict:
        return {
            "num_vars": self.num_vars,
            "ranks": list(self.ranks),
            "boundaries": [{"degree": i, "matrix": self.d(i).to_json()} for i in range(1, self.top + 1)],
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "FreeChainComplex":
        n = int(data["num_vars"])
        ranks = [int(r) for r in data["ranks"]]
        mats = {int(b["degree"]): LaurentMatrix.from_json(b["matrix"]) for b in data.get("boundaries", [])}
        bounds = []
        for i in range(1, len(ranks)):
            bounds.append(mats.get(i, LaurentMatrix.zeros(ranks[i - 1], ranks[i], n)))
        return cls(n, ranks, bounds)


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    degree: int | None = None
    residual: float = 0.0


def validate(c: FreeChainComplex) -> ValidationReport:
    """Check d_i d_{i+1} = 0 symbolically; report the first offending degree."""
    for i in range(1, c.top):
        prod = matmul(c.d(i), c.d(i + 1))
        res = prod.max_abs_coeff()
        if res >= CHAIN_TOL:
            return ValidationReport(False, i, res)
    return ValidationReport(True)


def require_valid(c: FreeChainComplex) -> None:
    rep = validate(c)
    if not rep.ok:
        raise ChainError(f"degree {rep.degree}: d_{rep.degree} d_{rep.degree + 1} != 0 (residual {rep.residual:.3g})")


@dataclass(frozen=True, eq=False)
class HomologyEntry:
    degree: int
    betti: int
    cycles_rank: int
    boundaries_rank: int
    torsion_module: VirtualModule
    torsion_density: spectral.SpectralDensity
    torsion_split: ecat.SplitReport
    _fit: list = field(default_factory=list, repr=False)

    @property
    def torsion_trivial(self) -> bool:
        return self.torsion_split.torsion_trivial

    @property
    def ns_fit(self) -> spectral.NSFit | None:
        """Novikov-Shubin fit of the torsion density; None if the window is too narrow."""
        if not self._fit:
            try:
                self._fit.append(spectral.ns_estimate(self.torsion_density))
            except spectral.FitError:
                self._fit.append(None)
        return self._fit[0]

    def to_json(self) -> dict:
        fit = self.ns_fit
        return {
            "degree": self.degree,
            "betti": self.betti,
            "cycles_rank": self.cycles_rank,
            "boundaries_rank": self.boundaries_rank,
            "torsion_trivial": self.torsion_trivial,
            "ns_fit": fit.to_json() if fit else None,
        }


def _generic_rank(a: LaurentMatrix, grid: TorusGrid, eps_rank: float) -> int:
    if a.rows == 0 or a.cols == 0:
        return 0
    return fiber.generic_rank(a, grid, eps_rank)


def homology(c: FreeChainComplex, i: int, grid: TorusGrid | None = None, eps_rank: float = DEFAULT_RANK_TOL,
             lambdas: np.ndarray | None = None) -> HomologyEntry:
    """H_i = (d_{i+1}: C_{i+1} -> Z_i): betti number and torsion density."""
    if not 0 <= i <= c.top:
        raise IndexError(f"degree {i} outside 0..{c.top}")
    grid = grid or TorusGrid.default(c.num_vars)
    r_in = _generic_rank(c.d(i), grid, eps_rank)
    r_out = _generic_rank(c.d(i + 1), grid, eps_rank)
    z = c.ranks[i] - r_in
    betti = z - r_out
    tors = VirtualModule.of(c.d(i + 1))
    rep = ecat.split(tors, grid, eps_rank)
    lambdas = spectral.log_lambdas() if lambdas is None else lambdas
    dens = spectral.density_from_singular_values(
        rep.torsion_rank_data.singular_values, rep.torsion_rank_data.generic_rank, lambdas, grid,
        tors.alpha.shape[1] - rep.torsion_rank_data.generic_rank,
    )
    return HomologyEntry(i, betti, z, r_out, tors, dens, rep)


@dataclass(frozen=True, eq=False)
class HomologyReport:
    complex: FreeChainComplex
    entries: tuple[HomologyEntry, ...]

    @property
    def betti(self) -> tuple[int, ...]:
        return tuple(e.betti for e in self.entries)

    def __getitem__(self, i: int) -> HomologyEntry:
        return self.entries[i]

    def to_json(self) -> dict:
        return {"ranks": list(self.complex.ranks), "degrees": [e.to_json() for e in self.entries]}

    def to_csv(self) -> str:
        lines = ["degree,betti,cycles_rank,boundaries_rank,torsion_trivial,ns,capacity"]
        for e in self.entries:
            fit = e.ns_fit
            ns = fit.ns if fit else ""
            cap = fit.capacity if fit else ""
            lines.append(f"{e.degree},{e.betti},{e.cycles_rank},{e.boundaries_rank},{e.torsion_trivial},{ns},{cap}")
        return "\n".join(lines) + "\n"


def homology_report(c: FreeChainComplex, grid: TorusGrid | None = None, eps_rank: float = DEFAULT_RANK_TOL,
                    lambdas: np.ndarray | None = None) -> HomologyReport:
    require_valid(c)
    return HomologyReport(c, tuple(homology(c, i, grid, eps_rank, lambdas) for i in range(c.top + 1)))


def dual_complex(c: FreeChainComplex) -> FreeChainComplex:
    """Cochain complex of adjoints, reindexed j = top - i so it is again a chain complex.

    Degree j of the result is C^{top - j}; its boundary d_j is the adjoint of
    d_{top - j + 1}.  Cohomology H^i(C) is therefore homology in degree top - i.
    """
    top = c.top
    ranks = tuple(reversed(c.ranks))
    bounds = [adjoint(c.d(top - j + 1)) for j in range(1, top + 1)]
    return FreeChainComplex(c.num_vars, ranks, bounds)


def cohomology(c: FreeChainComplex, i: int, grid: TorusGrid | None = None, eps_rank: float = DEFAULT_RANK_TOL,
               lambdas: np.ndarray | None = None) -> HomologyEntry:
    return homology(dual_complex(c), c.top - i, grid, eps_rank, lambdas)


def degree_map(c: FreeChainComplex) -> dict[int, int]:
    """Cohomological degree -> degree in the dual chain complex."""
    return {i: c.top - i for i in range(c.top + 1)}


def density_distance(f: spectral.SpectralDensity, g: spectral.SpectralDensity) -> float:
    return float(np.max(np.abs(f.values - g(f.lambdas)))) if f.lambdas.size else 0.0


@dataclass
class CheckReport:
    name: str
    passed: bool = True
    details: list[str] = field(default_factory=list)

    def record(self, ok: bool, msg: str) -> None:
        self.details.append(("ok   " if ok else "FAIL ") + msg)
        self.passed = self.passed and bool(ok)


def default_density_tol(num_vars: int) -> float:
    return DENSITY_TOL.get(num_vars, 1e-2)


def universal_coefficients_check(c: FreeChainComplex, grid: TorusGrid | None = None, tol: float | None = None,
                                 eps_rank: float = DEFAULT_RANK_TOL) -> CheckReport:
    """betti(H^i) = betti(H_i) and density of T(H^i) = density of T(H_{i-1})."""
    require_valid(c)
    grid = grid or TorusGrid.default(c.num_vars)
    tol = default_density_tol(c.num_vars) if tol is None else tol
    rep = CheckReport("universal coefficients")
    hom = homology_report(c, grid, eps_rank)
    dual = dual_complex(c)
    for i in range(c.top + 1):
        co = homology(dual, c.top - i, grid, eps_rank)
        rep.record(co.betti == hom[i].betti, f"betti H^{i} = {co.betti}, betti H_{i} = {hom[i].betti}")
        if i >= 1:
            dist = density_distance(co.torsion_density, hom[i - 1].torsion_density)
            rep.record(dist <= tol, f"|F(T H^{i}) - F(T H_{i - 1})| = {dist:.3g} (tol {tol:g})")
        else:
            rep.record(co.torsion_trivial or co.torsion_density.is_zero(), "T(H^0) trivial")
    return rep


def poincare_check(c: FreeChainComplex, n_top: int, orientable_manifold: bool = True,
                   grid: TorusGrid | None = None, tol: float | None = None,
                   eps_rank: float = DEFAULT_RANK_TOL) -> CheckReport:
    """H_i = H^{n-i} on betti numbers; T(H_i) matches e(T(H_{n-i-1})) in density."""
    if not orientable_manifold:
        raise ChainError("Poincare check needs an orientable closed manifold (trivial w)")
    require_valid(c)
    grid = grid or TorusGrid.default(c.num_vars)
    tol = default_density_tol(c.num_vars) if tol is None else tol
    rep = CheckReport("poincare duality")
    hom = homology_report(c, grid, eps_rank)
    dual = dual_complex(c)
    for i in range(n_top + 1):
        co = homology(dual, c.top - (n_top - i), grid, eps_rank)
        rep.record(hom[i].betti == co.betti, f"betti H_{i} = {hom[i].betti}, betti H^{n_top - i} = {co.betti}")
        rep.record(hom[i].betti == hom[n_top - i].betti,
                   f"betti H_{i} = {hom[i].betti}, betti H_{n_top - i} = {hom[n_top - i].betti}")
    for i in range(n_top):
        other = hom[n_top - i - 1].torsion_module
        if other.alpha.shape[0] and other.alpha.shape[1]:
            dual_side = spectral.density(
                VirtualModule.of(fiber.adjoint_symbol(other.alpha)), hom[i].torsion_density.lambdas, grid, eps_rank
            )
        else:
            dual_side = hom[n_top - i - 1].torsion_density
        dist = density_distance(hom[i].torsion_density, dual_side)
        rep.record(dist <= tol, f"|F(T H_{i}) - F(e T H_{n_top - i - 1})| = {dist:.3g} (tol {tol:g})")
    return rep


def projective_parts_weak_exactness_check(modules: Sequence[VirtualModule], maps: Sequence[ecat.EcatMorphism],
                                          grid: TorusGrid | None = None,
                                          eps_rank: float = DEFAULT_RANK_TOL) -> CheckReport:
    """For 0 -> X1 -> X -> X2 -> 0, compare the middle homology of
    P(X1) -> P(X) -> P(X2) with H = coker(T(X) -> T(X2)) as von Neumann dimensions.

    ``maps`` are the morphisms X1 -> X and X -> X2.  Everything is computed
    fiberwise: P(Y) is the cokernel of beta(z), T(Y) targets its column space.
    """
    if len(modules) != 3 or len(maps) != 2:
        raise ChainError("need three modules and two maps")
    x1, x, x2 = modules
    m1, m2 = maps
    if m1.source is not x1 or m1.target is not x or m2.source is not x or m2.target is not x2:
        raise ChainError("maps do not connect the modules in order")
    grid = grid or x.default_grid()
    rep = CheckReport("projective parts weak exactness")
    p = [ecat.split(m, grid, eps_rank).projective_dim for m in modules]
    r1 = _projective_map_rank(m1, grid, eps_rank)
    r2 = _projective_map_rank(m2, grid, eps_rank)
    middle = p[1] - r1 - r2
    h_dim = _torsion_cokernel_dim(m2, grid, eps_rank)
    rep.record(middle >= 0, f"middle homology of projective parts has dim {middle}")
    rep.record(middle == h_dim, f"middle homology dim {middle} vs dim H {h_dim}")
    return rep


def _torsion_cokernel_dim(m: ecat.EcatMorphism, grid: TorusGrid, eps_rank: float) -> int:
    """Projective dimension of coker(T(X) -> T(Y)) for m: X -> Y."""
    a = fiber.sample(m.source.alpha, grid).values
    b = fiber.sample(m.target.alpha, grid).values
    f = fiber.sample(m.f, grid).values
    ra, rb = _generic(a, eps_rank), _generic(b, eps_rank)
    if rb == 0:
        return 0
    ua = _column_space(a, ra)
    ub = _column_space(b, rb)
    ubh = np.conj(np.swapaxes(ub, 1, 2))
    h = np.concatenate([ubh @ b, -(ubh @ f @ ua)], axis=2)
    return rb - _generic(h, eps_rank)


def _column_space(vals: np.ndarray, r: int) -> np.ndarray:
    if r == 0:
        return np.zeros((vals.shape[0], vals.shape[1], 0), dtype=complex)
    u = np.linalg.svd(vals, full_matrices=True)[0]
    return u[:, :, :r]


def _projective_map_rank(m: ecat.EcatMorphism, grid: TorusGrid, eps_rank: float) -> int:
    """Generic rank of f compressed to the cokernel of the source and target alphas."""
    a = fiber.sample(m.source.alpha, grid).values
    b = fiber.sample(m.target.alpha, grid).values
    f = fiber.sample(m.f, grid).values
    ra = _generic(a, eps_rank)
    rb = _generic(b, eps_rank)
    ua = fiber.fiber_cokernel_basis(a, a.shape[1] - ra)
    ub = fiber.fiber_cokernel_basis(b, b.shape[1] - rb)
    comp = np.conj(np.swapaxes(ub, 1, 2)) @ f @ ua
    return _generic(comp, eps_rank)


def _generic(vals: np.ndarray, eps_rank: float) -> int:
    if vals.shape[1] == 0 or vals.shape[2] == 0:
        return 0
    sv = np.linalg.svd(vals, compute_uv=False)
    thr = fiber.rank_threshold(sv, eps_rank)
    return int((sv > thr).sum(axis=1).max())
