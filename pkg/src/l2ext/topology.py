"""CW presets over Z^n, twisted coefficients, TOR, generator bounds and Morse bounds."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from itertools import combinations
from typing import Mapping, Sequence

import numpy as np

from . import ecat, fiber, homology, spectral
from .ecat import VirtualModule
from .fiber import DEFAULT_RANK_TOL, SampledMatrix, TorusGrid
from .homology import CheckReport, FreeChainComplex
from .laurent import LaurentMatrix, LaurentPoly, kron

UNITARY_TOL = 1e-10


class TopologyError(ValueError):
    pass


# -- complexes -----------------------------------------------------------

def koszul_complex(n: int) -> FreeChainComplex:
    """Koszul complex of x_k = z_k - 1 over C[Z^n]; the cellular complex of the n-torus cover.

    Degree p has basis e_S for p-subsets S of {0..n-1} in lexicographic
    order, and d(e_S) = sum_k (-1)^k x_{s_k} e_{S - s_k}.
    """
    if n < 1:
        raise TopologyError("n must be >= 1")
    bases = [list(combinations(range(n), p)) for p in range(n + 1)]
    xs = [LaurentPoly.var(k, n) - 1 for k in range(n)]
    zero = LaurentPoly(n)
    bounds = []
    for p in range(1, n + 1):
        index = {s: i for i, s in enumerate(bases[p - 1])}
        rows = [[zero] * len(bases[p]) for _ in bases[p - 1]]
        for j, s in enumerate(bases[p]):
            for k, v in enumerate(s):
                face = s[:k] + s[k + 1 :]
                term = xs[v] if k % 2 == 0 else -xs[v]
                rows[index[face]][j] = rows[index[face]][j] + term
        bounds.append(LaurentMatrix.from_rows(rows, n))
    return FreeChainComplex(n, [len(b) for b in bases], bounds)


def koszul_resolution(n: int) -> FreeChainComplex:
    """Free resolution of the trivial module C over C[Z^n]."""
    return koszul_complex(n)


def product_complex(c: FreeChainComplex, d: FreeChainComplex) -> FreeChainComplex:
    """Tensor product over C[Z^(n+m)] with the Koszul sign on the second factor."""
    n = c.num_vars + d.num_vars
    cmats = [c.d(i).embed(n, 0) for i in range(c.top + 2)]
    dmats = [d.d(j).embed(n, c.num_vars) for j in range(d.top + 2)]
    top = c.top + d.top
    blocks = [[(i, k - i) for i in range(c.top, -1, -1) if 0 <= k - i <= d.top] for k in range(top + 1)]
    size = {(i, j): c.ranks[i] * d.ranks[j] for i in range(c.top + 1) for j in range(d.top + 1)}
    ranks = [sum(size[b] for b in blocks[k]) for k in range(top + 1)]
    bounds = []
    for k in range(1, top + 1):
        rows = blocks[k - 1]
        cols = blocks[k]
        grid = []
        for (ri, rj) in rows:
            row_blocks = []
            for (ci, cj) in cols:
                if (ri, rj) == (ci - 1, cj):
                    blk = kron(cmats[ci], LaurentMatrix.identity(d.ranks[cj], n))
                elif (ri, rj) == (ci, cj - 1):
                    blk = kron(LaurentMatrix.identity(c.ranks[ci], n), dmats[cj]).scale((-1) ** ci)
                else:
                    blk = LaurentMatrix.zeros(size[(ri, rj)], size[(ci, cj)], n)
                row_blocks.append(blk)
            grid.append(row_blocks)
        entries_rows = []
        for row_blocks in grid:
            height = row_blocks[0].rows if row_blocks else 0
            for r in range(height):
                entries_rows.append([blk[r, cc] for blk in row_blocks for cc in range(blk.cols)])
        bounds.append(LaurentMatrix(ranks[k - 1], ranks[k], n, [p for r in entries_rows for p in r]))
    return FreeChainComplex(n, ranks, bounds)


@dataclass(frozen=True, eq=False)
class CWPreset:
    name: str
    fundamental_group_rank: int
    complex: FreeChainComplex
    orientable_manifold: bool
    top_dim: int
    # presentations of H_p of the universal cover, when known (pi = Z only)
    cover_presentations: Mapping[int, LaurentMatrix] = field(default_factory=dict)


def _circle() -> FreeChainComplex:
    z = LaurentPoly.var(0, 1)
    return FreeChainComplex(1, (1, 1), [LaurentMatrix.from_rows([[z - 1]], 1)])


def _circle_subdivided() -> FreeChainComplex:
    # vertices v0, v1; edges e0: v0 -> v1 and e1: v1 -> z v0
    z = LaurentPoly.var(0, 1)
    return FreeChainComplex(1, (2, 2), [LaurentMatrix.from_rows([[-1, z], [1, -1]], 1)])


def _circle_sq() -> FreeChainComplex:
    z = LaurentPoly.var(0, 1)
    return FreeChainComplex(1, (1, 1), [LaurentMatrix.from_rows([[(z - 1) ** 2]], 1)])


PRESET_NAMES = ("circle", "circle_subdivided", "circle_sq", "torus2", "torus3")


def preset_complex(name: str) -> CWPreset:
    """Built-in presets; ``a*b`` names the product of two presets."""
    if "*" in name:
        left, right = name.split("*", 1)
        a, b = preset_complex(left), preset_complex(right)
        comp = product_complex(a.complex, b.complex)
        return CWPreset(name, a.fundamental_group_rank + b.fundamental_group_rank, comp,
                        a.orientable_manifold and b.orientable_manifold, a.top_dim + b.top_dim)
    z = LaurentPoly.var(0, 1)
    empty = LaurentMatrix.zeros(0, 0, 1)
    if name == "circle":
        return CWPreset(name, 1, _circle(), True, 1, {0: LaurentMatrix.from_rows([[z - 1]], 1), 1: empty})
    if name == "circle_subdivided":
        return CWPreset(name, 1, _circle_subdivided(), True, 1,
                        {0: LaurentMatrix.from_rows([[z - 1]], 1), 1: empty})
    if name == "circle_sq":
        return CWPreset(name, 1, _circle_sq(), False, 1,
                        {0: LaurentMatrix.from_rows([[(z - 1) ** 2]], 1), 1: empty})
    if name.startswith("torus") and name[5:].isdigit():
        n = int(name[5:])
        return CWPreset(name, n, koszul_complex(n), True, n)
    raise TopologyError(f"unknown preset {name!r}; known: {', '.join(PRESET_NAMES)} or products a*b")


# -- twisted coefficients ------------------------------------------------

@dataclass(frozen=True, eq=False)
class UnitaryRep:
    dim: int
    generators: tuple[np.ndarray, ...]

    def __post_init__(self):
        gens = tuple(np.asarray(g, dtype=complex).reshape(self.dim, self.dim) for g in self.generators)
        object.__setattr__(self, "generators", gens)
        eye = np.eye(self.dim)
        for k, g in enumerate(gens):
            if np.abs(g.conj().T @ g - eye).max() > UNITARY_TOL:
                raise TopologyError(f"generator {k} is not unitary")
        for a, b in combinations(gens, 2):
            if np.abs(a @ b - b @ a).max() > UNITARY_TOL:
                raise TopologyError("generators do not commute")

    @property
    def num_vars(self) -> int:
        return len(self.generators)

    @classmethod
    def trivial(cls, num_vars: int, dim: int = 1) -> "UnitaryRep":
        return cls(dim, tuple(np.eye(dim) for _ in range(num_vars)))

    @classmethod
    def diagonal(cls, phases: Sequence[Sequence[float]]) -> "UnitaryRep":
        """One generator per row of ``phases``; entries are angles of the diagonal characters."""
        gens = tuple(np.diag(np.exp(1j * np.asarray(p, dtype=float))) for p in phases)
        return cls(gens[0].shape[0], gens)

    def power(self, exp: Sequence[int]) -> np.ndarray:
        out = np.eye(self.dim, dtype=complex)
        for g, m in zip(self.generators, exp):
            base = g if m >= 0 else g.conj().T
            out = out @ np.linalg.matrix_power(base, abs(m))
        return out

    def to_json(self) -> dict:
        return {
            "dim": self.dim,
            "generators": [[[[v.real, v.imag] for v in row] for row in g] for g in self.generators],
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "UnitaryRep":
        dim = int(data["dim"])
        gens = []
        for g in data["generators"]:
            gens.append(np.array([[_parse_complex(v) for v in row] for row in g], dtype=complex))
        return cls(dim, tuple(gens))


def _parse_complex(v) -> complex:
    if isinstance(v, (list, tuple)):
        return complex(v[0], v[1] if len(v) > 1 else 0.0)
    if isinstance(v, Mapping):
        return complex(v.get("re", 0.0), v.get("im", 0.0))
    return complex(v)


def named_rep(name: str, num_vars: int) -> UnitaryRep:
    if name == "trivial":
        return UnitaryRep.trivial(num_vars)
    if name.startswith("trivial") and name[7:].isdigit():
        return UnitaryRep.trivial(num_vars, int(name[7:]))
    if name == "sign":
        return UnitaryRep.diagonal([[np.pi]] * num_vars)
    if name == "diag_pm":
        return UnitaryRep.diagonal([[0.0, np.pi]] * num_vars)
    raise TopologyError(f"unknown representation {name!r}")


def twist_matrix(a: LaurentMatrix, rho: UnitaryRep) -> LaurentMatrix:
    """Replace z^m by z^m rho(gamma)^m entrywise, inflating each entry to a d x d block."""
    if rho.num_vars != a.num_vars:
        raise TopologyError(f"representation has {rho.num_vars} generators, matrix {a.num_vars} variables")
    d, n = rho.dim, a.num_vars
    cache: dict = {}
    grid = [[LaurentPoly(n) for _ in range(a.cols * d)] for _ in range(a.rows * d)]
    for i in range(a.rows):
        for j in range(a.cols):
            for exp, c in a[i, j].terms.items():
                mat = cache.get(exp)
                if mat is None:
                    mat = cache[exp] = rho.power(exp)
                for r in range(d):
                    for s in range(d):
                        if mat[r, s] != 0:
                            grid[i * d + r][j * d + s] = grid[i * d + r][j * d + s] + LaurentPoly.monomial(exp, c * mat[r, s])
    return LaurentMatrix(a.rows * d, a.cols * d, n, [p for row in grid for p in row])


def twist(c: FreeChainComplex, rho: UnitaryRep) -> FreeChainComplex:
    return FreeChainComplex(c.num_vars, [r * rho.dim for r in c.ranks], [twist_matrix(b, rho) for b in c.boundaries])


# -- TOR -----------------------------------------------------------------

def tor(q: int, resolution: FreeChainComplex, grid: TorusGrid | None = None,
        eps_rank: float = DEFAULT_RANK_TOL, lambdas: np.ndarray | None = None) -> homology.HomologyEntry:
    """TOR_q(l^2(Z^n), N) for a finite free resolution of N."""
    homology.require_valid(resolution)
    if q < 0:
        raise TopologyError("q must be non-negative")
    if q > resolution.top:
        padded = FreeChainComplex(
            resolution.num_vars, tuple(resolution.ranks) + (0,) * (q - resolution.top),
            tuple(resolution.boundaries) + tuple(
                LaurentMatrix.zeros(resolution.ranks[-1] if k == 0 else 0, 0, resolution.num_vars)
                for k in range(q - resolution.top)
            ),
        )
        return homology.homology(padded, q, grid, eps_rank, lambdas)
    return homology.homology(resolution, q, grid, eps_rank, lambdas)


def cover_sequence_check(c: FreeChainComplex, presentations: Mapping[int, LaurentMatrix],
                     grid: TorusGrid | None = None, eps_rank: float = DEFAULT_RANK_TOL,
                     c_max: float = 4.0, ns_tol: float = 0.05) -> CheckReport:
    """0 -> TOR_1(M, H_{p-1}) -> H_p(X, M) -> TOR_0(M, H_p) -> 0 for pi = Z.

    ``presentations[p]`` presents H_p of the universal cover as the cokernel of
    a Laurent matrix in one variable.  Checks betti additivity and that the
    torsion of H_p(X, M) has the density class of TOR_0.
    """
    if c.num_vars != 1:
        raise TopologyError("the cover sequence needs a free fundamental group; only pi = Z is modeled")
    homology.require_valid(c)
    grid = grid or TorusGrid.default(1)
    rep = CheckReport("cover sequence")
    empty = LaurentMatrix.zeros(0, 0, 1)
    for p in range(c.top + 1):
        h = homology.homology(c, p, grid, eps_rank)
        pres = presentations.get(p, empty)
        prev = presentations.get(p - 1, empty)
        tor0 = ecat.split(VirtualModule.of(pres), grid, eps_rank) if pres.rows else None
        tor0_proj = tor0.projective_dim if tor0 else 0
        prev_rank = fiber.generic_rank(prev, grid, eps_rank) if prev.rows and prev.cols else 0
        tor1_dim = prev.cols - prev_rank
        rep.record(h.betti == tor0_proj + tor1_dim,
                   f"p={p}: betti {h.betti} = dim P(TOR_0) {tor0_proj} + dim TOR_1 {tor1_dim}")
        tor0_density = (spectral.density(VirtualModule.of(pres), h.torsion_density.lambdas, grid, eps_rank)
                        if pres.rows and pres.cols else None)
        if tor0_density is None or tor0_density.is_zero():
            rep.record(h.torsion_density.is_zero(), f"p={p}: T(H_p) and T(TOR_0) both trivial")
            continue
        dist = homology.density_distance(h.torsion_density, tor0_density)
        cdil = spectral.dilatationally_equivalent(h.torsion_density, tor0_density, c_max)
        rep.record(cdil is not None, f"p={p}: densities dilatationally equivalent (C={cdil}, sup dist {dist:.3g})")
        try:
            a = spectral.ns_estimate(h.torsion_density).ns
            b = spectral.ns_estimate(tor0_density).ns
            rep.record(abs(a - b) <= ns_tol * b, f"p={p}: ns(H_p) {a:.4f} vs ns(TOR_0) {b:.4f}")
        except spectral.FitError as err:
            rep.record(False, f"p={p}: ns fit failed: {err}")
    return rep


# -- minimal number of generators -----------------------------------------

@dataclass(frozen=True)
class MuBounds:
    lower: int
    upper: int | None = None
    upper_certificate: dict | None = None

    def to_json(self) -> dict:
        return {"lower": self.lower, "upper": self.upper, "upper_certificate": self.upper_certificate}


def _coranks(x: VirtualModule, grid: TorusGrid, eps_rank: float) -> tuple[SampledMatrix, np.ndarray, np.ndarray]:
    s = fiber.sample(x.alpha, grid)
    sv = fiber.singular_values(s)
    prof = fiber.rank_profile(s, eps_rank, sv)
    return s, sv, np.maximum(x.rank_dst - prof.fiber_ranks, 0)


def mu_lower(x: VirtualModule, grid: TorusGrid | None = None, eps_rank: float = DEFAULT_RANK_TOL) -> int:
    """Largest pointwise corank of alpha over the lattice.

    A character of L^infty agreeing with evaluation at z0 on continuous
    functions turns alpha beta + f gamma = 1 into a rank inequality, so any
    epimorphism from m free generators needs m >= rank_dst - rank alpha(z0).
    Only lattice points are probed.
    """
    grid = grid or x.default_grid()
    if x.rank_dst == 0:
        return 0
    return int(_coranks(x, grid, eps_rank)[2].max())


def _clusters(grid: TorusGrid, mask: np.ndarray) -> list[np.ndarray]:
    """Connected components of ``mask`` under periodic lattice adjacency."""
    shape = (grid.points_per_dim,) * grid.num_vars
    label = -np.ones(grid.size, dtype=int)
    out = []
    for start in np.flatnonzero(mask):
        if label[start] >= 0:
            continue
        comp, queue = [], deque([int(start)])
        label[start] = len(out)
        while queue:
            p = queue.popleft()
            comp.append(p)
            for q in _neighbours(p, shape):
                if mask[q] and label[q] < 0:
                    label[q] = len(out)
                    queue.append(q)
        out.append(np.array(comp))
    return out


def _neighbours(p: int, shape: tuple[int, ...]):
    multi = list(np.unravel_index(p, shape))
    for axis, size in enumerate(shape):
        for step in (1, -1):
            m = list(multi)
            m[axis] = (m[axis] + step) % size
            yield int(np.ravel_multi_index(tuple(m), shape))


def _voronoi(grid: TorusGrid, clusters: list[np.ndarray]) -> np.ndarray:
    """Lattice regions by multi-source BFS from the clusters (ties go to the lower index)."""
    shape = (grid.points_per_dim,) * grid.num_vars
    region = -np.ones(grid.size, dtype=int)
    queue = deque()
    for k, comp in enumerate(clusters):
        region[comp] = k
        queue.extend(int(p) for p in comp)
    while queue:
        p = queue.popleft()
        for q in _neighbours(p, shape):
            if region[q] < 0:
                region[q] = region[p]
                queue.append(q)
    return region


def mu_upper(x: VirtualModule, grid: TorusGrid | None = None, eps_rank: float = DEFAULT_RANK_TOL,
             eps_invertible: float = ecat.EPS_INVERTIBLE) -> MuBounds | None:
    """Try to build an epimorphism from m free generators, m the largest cluster corank.

    The degeneracy locus is split into lattice clusters; each cluster gets a
    constant frame spanning the cokernel of alpha at its worst point, and the
    frames are glued with characteristic functions of the clusters' regions.
    Returns None when the glued map fails the epimorphism check.
    """
    grid = grid or x.default_grid()
    lower = mu_lower(x, grid, eps_rank)
    s, sv, cor = _coranks(x, grid, eps_rank)
    k = x.rank_dst
    margin_floor = max(eps_invertible, grid.spacing * max(float(sv.max()) if sv.size else 0.0, 1.0))
    if k == 0:
        return MuBounds(0, 0, {"generators": 0, "margin": math.inf, "clusters": []})
    clusters = _clusters(grid, cor > 0)
    m = int(max((cor[c].max() for c in clusters), default=0))
    if m == 0:
        margin = ecat.epi_margin(s, SampledMatrix(grid, np.zeros((grid.size, k, 0), dtype=complex)))
        if margin > margin_floor:
            return MuBounds(lower, 0, {"generators": 0, "margin": margin, "clusters": []})
        return None
    region = _voronoi(grid, clusters)
    frames = []
    info = []
    for comp in clusters:
        worst = int(comp[np.argmax(cor[comp])])
        frames.append(fiber.fiber_cokernel_basis(s.values[worst : worst + 1], m)[0])
        info.append({
            "points": int(comp.size),
            "corank": int(cor[comp].max()),
            "at": [float(a) for a in grid.angles[worst]],
        })
    fvals = np.stack(frames)[region]
    f = SampledMatrix(grid, fvals, "scalar-symbol")
    margin = ecat.epi_margin(s, f)
    if margin <= margin_floor:
        return None
    return MuBounds(lower, m, {"generators": m, "margin": margin, "clusters": info})


def mu_bounds(x: VirtualModule, grid: TorusGrid | None = None, eps_rank: float = DEFAULT_RANK_TOL) -> MuBounds:
    up = mu_upper(x, grid, eps_rank)
    if up is not None:
        return up
    return MuBounds(mu_lower(x, grid, eps_rank))


def two_point_epi(theta1: float, nu1: float, theta2: float, nu2: float,
                  grid: TorusGrid | None = None) -> tuple[bool, float]:
    """Epimorphism check for the generator map (beta, alpha)^T onto X_{nu1,theta1} + X_{nu2,theta2}."""
    grid = grid or TorusGrid(1, 4096)
    a = fiber.abs_power(theta1, nu1)
    b = fiber.abs_power(theta2, nu2)
    target = ecat.direct_sum(VirtualModule.of(a), VirtualModule.of(b))
    f = fiber.vstack_symbols(b, a)
    src = VirtualModule.projective(1)
    m = ecat.EcatMorphism(src, target, f)
    margin = ecat.epi_margin(fiber.sample(target.alpha, grid), fiber.sample(f, grid))
    return ecat.is_epi(m, grid), margin


# -- Morse inequalities ---------------------------------------------------

def morse_module(c: FreeChainComplex, i: int, grid: TorusGrid) -> VirtualModule:
    """H_i + T(H_{i-1}) as (d_{i+1} | |d_i| : C_{i+1} + C_i -> C_i).

    |d_i| = (d_i* d_i)^(1/2) maps C_i onto the closure of the coboundary
    directions, so the two blocks land in complementary summands; the second
    is isomorphic to T(H_{i-1}) through the polar decomposition.
    """
    dn = fiber.sample(c.d(i + 1), grid)
    ab = fiber.fiber_abs(fiber.sample(c.d(i), grid))
    if ab.values.shape[1:] != (c.ranks[i], c.ranks[i]):
        ab = SampledMatrix(grid, np.zeros((grid.size, c.ranks[i], c.ranks[i]), dtype=complex), "laurent")
    alpha = fiber.hstack_symbols(dn, ab)
    return VirtualModule(alpha.shape[1], c.ranks[i], alpha)


@dataclass(frozen=True)
class MorseEntry:
    index: int
    lower_bound: int
    mu: MuBounds
    projective_dim: int
    torsion_prev_trivial: bool

    def to_json(self) -> dict:
        return {
            "index": self.index,
            "lower_bound": self.lower_bound,
            "mu_lower": self.mu.lower,
            "mu_upper": self.mu.upper,
            "certificate": self.mu.upper_certificate is not None,
        }


@dataclass(frozen=True)
class MorseReport:
    entries: tuple[MorseEntry, ...]
    rep_dim: int

    @property
    def bounds(self) -> tuple[int, ...]:
        return tuple(e.lower_bound for e in self.entries)

    def to_json(self) -> dict:
        return {"rep_dim": self.rep_dim, "indices": [e.to_json() for e in self.entries]}


def morse_bounds(c: FreeChainComplex | CWPreset, rho: UnitaryRep | None = None, grid: TorusGrid | None = None,
                 eps_rank: float = DEFAULT_RANK_TOL, with_upper: bool = True) -> MorseReport:
    """m_i >= ceil(mu[H_i + T(H_{i-1})] / dim V) for the twisted complex."""
    if isinstance(c, CWPreset):
        c = c.complex
    homology.require_valid(c)
    rho = rho or UnitaryRep.trivial(c.num_vars)
    tc = twist(c, rho) if rho.dim > 1 or any(np.abs(g - np.eye(rho.dim)).max() > 0 for g in rho.generators) else c
    grid = grid or TorusGrid.default(c.num_vars)
    entries = []
    for i in range(tc.top + 1):
        mod = morse_module(tc, i, grid)
        low = mu_lower(mod, grid, eps_rank)
        up = mu_upper(mod, grid, eps_rank) if with_upper else None
        mu = up if up is not None else MuBounds(low)
        prev = homology.homology(tc, i - 1, grid, eps_rank) if i >= 1 else None
        entries.append(MorseEntry(
            i, math.ceil(low / rho.dim), mu, homology.homology(tc, i, grid, eps_rank).betti,
            prev.torsion_trivial if prev else True,
        ))
    return MorseReport(tuple(entries), rho.dim)


def brooks_h0_check(preset: CWPreset, grid: TorusGrid | None = None,
                    eps_rank: float = DEFAULT_RANK_TOL) -> CheckReport:
    """T(H_0) is nontrivial (Z^n is amenable) and H^0 vanishes (Z^n is infinite)."""
    c = preset.complex
    grid = grid or TorusGrid.default(c.num_vars)
    rep = CheckReport(f"H0 amenability ({preset.name})")
    h0 = homology.homology(c, 0, grid, eps_rank)
    rep.record(not h0.torsion_trivial and float(h0.torsion_density.values.max()) > 0, "T(H_0) nontrivial")
    co = homology.cohomology(c, 0, grid, eps_rank)
    rep.record(co.betti == 0, f"betti H^0 = {co.betti}")
    return rep
