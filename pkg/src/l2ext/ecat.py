"""Virtual Hilbertian modules over N(Z^n) and their morphisms.

An object is a morphism ``alpha: A' -> A`` of free modules.  Its projective
part has dimension ``rank_dst - generic_rank(alpha)``; its torsion part is
the dense-image restriction of ``alpha``, whose spectral data near zero is
what ``spectral`` measures.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

import numpy as np

from . import fiber
from .fiber import (
    DEFAULT_RANK_TOL,
    PointwiseSymbol,
    RankProfile,
    SampledMatrix,
    Symbol,
    TorusGrid,
)
from .laurent import LaurentMatrix

EPS_INVERTIBLE = 1e-6
COMMUTE_TOL = 1e-9


class EcatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class VirtualModule:
    """(alpha: A' -> A) with bookkeeping for excised kernel directions.

    ``alpha`` has shape (rank_dst + excised_dst) x (rank_src + excised_src).
    ``excised_src`` counts a.e.-kernel directions of the source that
    ``normalize`` removed; ``excised_dst`` counts target directions outside
    the image closure that ``dual_torsion`` dropped.
    """

    rank_src: int
    rank_dst: int
    alpha: Symbol
    excised_src: int = 0
    excised_dst: int = 0

    def __post_init__(self):
        rows, cols = self.alpha.shape
        if rows != self.rank_dst + self.excised_dst or cols != self.rank_src + self.excised_src:
            raise EcatError(
                f"alpha has shape {self.alpha.shape}, expected "
                f"({self.rank_dst}+{self.excised_dst}) x ({self.rank_src}+{self.excised_src})"
            )

    @classmethod
    def of(cls, alpha: Symbol) -> "VirtualModule":
        return cls(alpha.shape[1], alpha.shape[0], alpha)

    @classmethod
    def projective(cls, rank: int, num_vars: int = 1) -> "VirtualModule":
        """(0 -> A) with A free of the given rank."""
        return cls(0, rank, LaurentMatrix.zeros(rank, 0, num_vars))

    @classmethod
    def zero(cls, num_vars: int = 1) -> "VirtualModule":
        return cls(0, 0, LaurentMatrix.zeros(0, 0, num_vars))

    @property
    def num_vars(self) -> int:
        return self.alpha.num_vars

    def default_grid(self) -> TorusGrid:
        if isinstance(self.alpha, SampledMatrix):
            return self.alpha.grid
        return TorusGrid.default(self.num_vars)


def direct_sum(*mods: VirtualModule) -> VirtualModule:
    alpha = fiber.block_diag_symbols(*(m.alpha for m in mods))
    return VirtualModule(
        sum(m.rank_src for m in mods),
        sum(m.rank_dst for m in mods),
        alpha,
        sum(m.excised_src for m in mods),
        sum(m.excised_dst for m in mods),
    )


def x_module(nu: float, theta: float) -> VirtualModule:
    """The torsion module given by multiplication with |z - e^{i theta}|^nu on L^2(S^1)."""
    return VirtualModule.of(fiber.abs_power(theta, nu))


@dataclass(frozen=True, eq=False)
class TorsionData:
    alpha: SampledMatrix
    singular_values: np.ndarray
    profile: RankProfile

    @property
    def generic_rank(self) -> int:
        return self.profile.generic_rank


@dataclass(frozen=True, eq=False)
class SplitReport:
    projective_dim: int
    torsion_rank_data: TorsionData
    is_torsion: bool
    is_null: bool
    min_sigma: float

    @property
    def torsion_trivial(self) -> bool:
        return self.torsion_rank_data.generic_rank == 0


def normalize(x: VirtualModule, grid: TorusGrid | None = None, eps_rank: float = DEFAULT_RANK_TOL) -> VirtualModule:
    """Excise the a.e. kernel of alpha (rank bookkeeping only; alpha is kept)."""
    grid = grid or x.default_grid()
    r = fiber.rank_profile(fiber.sample(x.alpha, grid), eps_rank).generic_rank
    total_src = x.rank_src + x.excised_src
    return VirtualModule(r, x.rank_dst, x.alpha, total_src - r, x.excised_dst)


def split(x: VirtualModule, grid: TorusGrid | None = None, eps_rank: float = DEFAULT_RANK_TOL,
          eps_invertible: float = EPS_INVERTIBLE) -> SplitReport:
    """Projective/torsion decomposition and the null test."""
    grid = grid or x.default_grid()
    s = fiber.sample(x.alpha, grid)
    sv = fiber.singular_values(s)
    prof = fiber.rank_profile(s, eps_rank, sv)
    r = prof.generic_rank
    projective_dim = x.rank_dst - r
    if projective_dim < 0:
        raise EcatError(f"generic rank {r} exceeds rank_dst {x.rank_dst}")
    is_torsion = projective_dim == 0
    if x.rank_dst == 0:
        min_sigma = np.inf
    elif r < x.rank_dst:
        min_sigma = 0.0
    else:
        # r-th largest singular value, i.e. the one governing surjectivity
        min_sigma = float(sv[:, sv.shape[1] - r].min())
    is_null = is_torsion and min_sigma > eps_invertible
    return SplitReport(projective_dim, TorsionData(s, sv, prof), is_torsion, is_null, min_sigma)


@dataclass(frozen=True, eq=False)
class EcatMorphism:
    """[f]: X -> Y with f: A -> B and an optional witness g: A' -> B'."""

    source: VirtualModule
    target: VirtualModule
    f: Symbol
    witness_g: Symbol | None = None

    def __post_init__(self):
        want = (self.target.alpha.shape[0], self.source.alpha.shape[0])
        if self.f.shape != want:
            raise EcatError(f"f has shape {self.f.shape}, expected {want}")
        if self.witness_g is not None:
            want_g = (self.target.alpha.shape[1], self.source.alpha.shape[1])
            if self.witness_g.shape != want_g:
                raise EcatError(f"witness g has shape {self.witness_g.shape}, expected {want_g}")

    def commutation_residual(self, grid: TorusGrid | None = None) -> float:
        """max over fibers of |f alpha - beta g|, relative to the largest term."""
        if self.witness_g is None:
            raise EcatError("no witness g supplied")
        grid = grid or self.source.default_grid()
        fa = fiber.sample(fiber.matmul_symbols(self.f, self.source.alpha), grid).values
        bg = fiber.sample(fiber.matmul_symbols(self.target.alpha, self.witness_g), grid).values
        if fa.size == 0:
            return 0.0
        scale = max(np.abs(fa).max(), np.abs(bg).max(), 1.0)
        return float(np.abs(fa - bg).max() / scale)

    def validate(self, grid: TorusGrid | None = None) -> None:
        if self.witness_g is not None and self.commutation_residual(grid) > COMMUTE_TOL:
            raise EcatError("square f*alpha = beta*g does not commute")


def identity_morphism(x: VirtualModule) -> EcatMorphism:
    n = x.num_vars
    return EcatMorphism(
        x, x,
        LaurentMatrix.identity(x.alpha.shape[0], n),
        LaurentMatrix.identity(x.alpha.shape[1], n),
    )


def zero_morphism(x: VirtualModule, y: VirtualModule) -> EcatMorphism:
    n = x.num_vars
    return EcatMorphism(
        x, y,
        LaurentMatrix.zeros(y.alpha.shape[0], x.alpha.shape[0], n),
        LaurentMatrix.zeros(y.alpha.shape[1], x.alpha.shape[1], n),
    )


def cokernel(m: EcatMorphism, grid: TorusGrid | None = None) -> VirtualModule:
    """((beta | -f): B' + A -> B)."""
    m.validate(grid)
    beta = m.target.alpha
    alpha = fiber.hstack_symbols(beta, fiber.scale_symbol(m.f, -1.0))
    return VirtualModule(alpha.shape[1], m.target.rank_dst, alpha, 0, m.target.excised_dst)


def _nearest_regular(grid: TorusGrid, bad: np.ndarray) -> dict[int, int]:
    """Map each degenerate lattice index to a nearby non-degenerate one."""
    n, N = grid.num_vars, grid.points_per_dim
    shape = (N,) * n
    out = {}
    for idx in np.flatnonzero(bad):
        multi = np.array(np.unravel_index(idx, shape))
        found = None
        for step in range(1, N):
            for axis in range(n):
                for sign in (1, -1):
                    cand = multi.copy()
                    cand[axis] = (cand[axis] + sign * step) % N
                    j = int(np.ravel_multi_index(tuple(cand), shape))
                    if not bad[j]:
                        found = j
                        break
                if found is not None:
                    break
            if found is not None:
                break
        if found is None:
            raise EcatError("no regular fiber found; map is degenerate everywhere")
        out[int(idx)] = found
    return out


def continuous_kernel_basis(s: SampledMatrix, dim: int, eps_rank: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Per-fiber kernel basis of generic dimension ``dim``.

    On fibers where the kernel jumps up, the basis is the limit taken from a
    neighbouring regular fiber, projected into the actual fiber kernel.
    """
    vals = s.values
    basis = fiber.fiber_kernel_basis(vals, dim)
    if dim == 0 or vals.shape[1] == 0:
        return basis
    sv = fiber.singular_values(s)
    thr = fiber.rank_threshold(sv, eps_rank)
    generic = vals.shape[2] - dim
    bad = (sv > thr).sum(axis=1) < generic
    if not bad.any():
        return basis
    for i, j in _nearest_regular(s.grid, bad).items():
        big = fiber.fiber_kernel_basis(vals[i : i + 1], vals.shape[2] - int((sv[i] > thr).sum()))[0]
        proj = big @ (big.conj().T @ basis[j])
        q, _ = np.linalg.qr(proj)
        basis[i] = q[:, :dim]
    return basis


@dataclass(frozen=True, eq=False)
class KernelData:
    module: VirtualModule
    split: SplitReport


def kernel_data(m: EcatMorphism, grid: TorusGrid | None = None, eps_rank: float = DEFAULT_RANK_TOL,
                eps_invertible: float = EPS_INVERTIBLE) -> KernelData:
    """Invariants of the kernel (gamma: P' -> P) built from the two pullbacks.

    P = ker[f, -beta] and P' = ker[f alpha, -beta] are computed fiberwise;
    gamma is (a', b') -> (alpha a', b') written in orthonormal fiber bases.
    """
    grid = grid or m.source.default_grid()
    alpha = fiber.sample(m.source.alpha, grid)
    beta = fiber.sample(m.target.alpha, grid)
    f = fiber.sample(m.f, grid)
    fa = f @ alpha
    neg_beta = -beta.values

    big = SampledMatrix(grid, np.concatenate([f.values, neg_beta], axis=2), "scalar-symbol")
    small = SampledMatrix(grid, np.concatenate([fa.values, neg_beta], axis=2), "scalar-symbol")
    k1 = big.cols - fiber.rank_profile(big, eps_rank).generic_rank
    k2 = small.cols - fiber.rank_profile(small, eps_rank).generic_rank
    q = continuous_kernel_basis(big, k1, eps_rank)
    qp = continuous_kernel_basis(small, k2, eps_rank)

    ra, rbp = alpha.cols, beta.cols
    lift = np.zeros((grid.size, alpha.rows + rbp, ra + rbp), dtype=complex)
    lift[:, : alpha.rows, :ra] = alpha.values
    lift[:, alpha.rows :, ra:] = np.eye(rbp)
    gamma = np.conj(np.swapaxes(q, 1, 2)) @ lift @ qp
    mod = VirtualModule(k2, k1, SampledMatrix(grid, gamma, "scalar-symbol"))
    return KernelData(mod, split(mod, grid, eps_rank, eps_invertible))


def _exceptional_allowance(grid: TorusGrid) -> int:
    # fraction < 2/N per dimension of the lattice
    return int(np.ceil(2 * grid.num_vars * grid.size / grid.points_per_dim))


def is_mono(m: EcatMorphism, grid: TorusGrid | None = None, eps_rank: float = DEFAULT_RANK_TOL) -> bool:
    """alpha(A') contains f^{-1}(beta(B')), fiberwise a.e."""
    grid = grid or m.source.default_grid()
    alpha = fiber.sample(m.source.alpha, grid)
    beta = fiber.sample(m.target.alpha, grid)
    f = fiber.sample(m.f, grid)
    ra = alpha.rows
    if ra == 0:
        return True
    big = SampledMatrix(grid, np.concatenate([f.values, -beta.values], axis=2), "scalar-symbol")
    sv_big = fiber.singular_values(big)
    thr_big = fiber.rank_threshold(sv_big, eps_rank)
    kdim = big.cols - (sv_big > thr_big).sum(axis=1)

    sv_a = fiber.singular_values(alpha)
    thr_a = fiber.rank_threshold(sv_a, eps_rank)
    ranks_a = (sv_a > thr_a).sum(axis=1) if alpha.cols else np.zeros(grid.size, dtype=int)
    if alpha.cols:
        u = np.linalg.svd(alpha.values, full_matrices=True)[0]
    else:
        u = np.broadcast_to(np.eye(ra, dtype=complex), (grid.size, ra, ra))
    bad = 0
    # group fibers by (preimage dim, rank of alpha) so each group is one batched solve
    keys = np.stack([kdim, ranks_a], axis=1)
    for k, r in {tuple(int(v) for v in row) for row in keys}:
        if k == 0:
            continue
        idx = np.flatnonzero((kdim == k) & (ranks_a == r))
        pre = fiber.fiber_kernel_basis(big.values[idx], k)[:, :ra, :]
        comp = u[idx][:, :, r:]
        resid = np.linalg.norm(np.conj(np.swapaxes(comp, 1, 2)) @ pre, axis=(1, 2))
        scale = np.maximum(np.linalg.norm(pre, axis=(1, 2)), 1.0)
        bad += int((resid > max(np.sqrt(eps_rank), 1e-6) * scale).sum())
    return bad < _exceptional_allowance(grid)


def epi_margin(beta: SampledMatrix, f: SampledMatrix) -> float:
    """Smallest over fibers of the rows-th singular value of [beta | f]."""
    rows = beta.rows
    if rows == 0:
        return np.inf
    vals = np.concatenate([beta.values, f.values], axis=2)
    if vals.shape[2] < rows:
        return 0.0
    sv = np.linalg.svd(vals, compute_uv=False)
    return float(sv[:, rows - 1].min())


def is_epi(m: EcatMorphism, grid: TorusGrid | None = None, eps_invertible: float = EPS_INVERTIBLE) -> bool:
    """B = beta(B') + f(A): [beta | f] onto with bounded right inverse at every fiber."""
    grid = grid or m.source.default_grid()
    beta = fiber.sample(m.target.alpha, grid)
    f = fiber.sample(m.f, grid)
    return epi_margin(beta, f) > eps_invertible


def dual_torsion(x: VirtualModule, grid: TorusGrid | None = None, eps_rank: float = DEFAULT_RANK_TOL) -> VirtualModule:
    """e(X) = (alpha*: A* -> A'*) for a torsion module."""
    rep = split(x, grid, eps_rank)
    if not rep.is_torsion:
        raise EcatError("dual_torsion needs a torsion module")
    return VirtualModule(x.rank_dst, x.rank_src, fiber.adjoint_symbol(x.alpha), x.excised_dst, x.excised_src)


# -- Hom vanishing between X_{nu,theta0} and X_{nu,theta1} ---------------

CandidateSymbol = Callable[[np.ndarray], np.ndarray]


def _bounded(func: Callable[[TorusGrid], np.ndarray], grid: TorusGrid, growth_cap: float) -> bool:
    with np.errstate(divide="ignore", invalid="ignore"):
        coarse = np.abs(func(grid))
        fine = np.abs(func(grid.refine(2)))
    # 0/0 sits on a measure-zero set and says nothing about boundedness
    coarse, fine = coarse[~np.isnan(coarse)], fine[~np.isnan(fine)]
    if np.isinf(coarse).any() or np.isinf(fine).any() or coarse.size == 0:
        return False
    return fine.max() <= growth_cap * coarse.max() + 1e-12


def classify_candidate(f: CandidateSymbol | PointwiseSymbol, theta0: float, theta1: float, nu: float,
                       grid: TorusGrid | None = None, growth_cap: float = 1.5) -> str:
    """'zero', 'nonzero' or 'invalid' for a candidate f in the square
    |z - z0|^nu f = g |z - z1|^nu.
    """
    grid = grid or TorusGrid(1, 4096)
    if isinstance(f, PointwiseSymbol):
        sym = f
        f = lambda ang: sym.eval_many(ang)[:, 0, 0]  # noqa: E731
    z0, z1 = np.exp(1j * theta0), np.exp(1j * theta1)

    def fvals(g: TorusGrid):
        return np.asarray(f(g.angles), dtype=complex).reshape(-1)

    def h(g: TorusGrid):
        z = np.exp(1j * g.angles[:, 0])
        return fvals(g) / np.abs(z - z1) ** nu

    def witness(g: TorusGrid):
        z = np.exp(1j * g.angles[:, 0])
        return fvals(g) * np.abs(z - z0) ** nu / np.abs(z - z1) ** nu

    if _bounded(h, grid, growth_cap):
        return "zero"
    if _bounded(witness, grid, growth_cap):
        return "nonzero"
    return "invalid"


def hom_vanishing_probe(theta0: float, theta1: float, nu: float,
                        candidates: Iterable[CandidateSymbol | PointwiseSymbol],
                        grid: TorusGrid | None = None) -> bool:
    """True if no candidate yields a nonzero morphism X_{nu,theta0} -> X_{nu,theta1}."""
    if np.isclose(np.angle(np.exp(1j * (theta0 - theta1))), 0.0):
        return False
    return all(classify_candidate(f, theta0, theta1, nu, grid) != "nonzero" for f in candidates)


# -- JSON --------------------------------------------------------------

def symbol_from_json(data: Mapping, num_vars: int = 1) -> Symbol:
    if "symbol" not in data:
        return LaurentMatrix.from_json(data)
    kind = data["symbol"]
    if kind == "abs_power":
        return fiber.abs_power(float(data["center_angle"]), float(data["nu"]), int(data.get("num_vars", num_vars)))
    if kind == "block_diag":
        return fiber.block_diag_symbols(*(symbol_from_json(b, num_vars) for b in data["blocks"]))
    raise EcatError(f"unknown symbol kind {kind!r}")


def symbol_to_json(sym: Symbol) -> dict:
    if isinstance(sym, LaurentMatrix):
        return sym.to_json()
    if isinstance(sym, PointwiseSymbol) and sym.description.get("symbol") == "abs_power":
        d = sym.description
        return {"symbol": "abs_power", "center_angle": d["center_angle"], "nu": d["nu"]}
    raise EcatError("only Laurent matrices and abs_power symbols are serializable")


def module_from_json(data: Mapping) -> VirtualModule:
    alpha = symbol_from_json(data["alpha"])
    mod = VirtualModule(int(data["rank_src"]), int(data["rank_dst"]), alpha)
    return mod


def module_to_json(x: VirtualModule) -> dict:
    return {"rank_src": x.rank_src, "rank_dst": x.rank_dst, "alpha": symbol_to_json(x.alpha)}
