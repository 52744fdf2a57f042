"""Fiberwise model of the von Neumann algebra of Z^n.

An element of N(Z^n) is a bounded measurable function on the n-torus; a
morphism of free modules is a matrix-valued such function.  We sample it on
an equispaced lattice and treat the von Neumann trace as the uniform
average over lattice points (trapezoid rule on the torus).
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

from . import laurent
from .laurent import LaurentMatrix

DEFAULT_POINTS = {1: 4096, 2: 256, 3: 32}
DEFAULT_RANK_TOL = 1e-8

_threads = 1


def set_threads(n: int | None) -> None:
    """Worker count for fiber SVDs; None means one per CPU."""
    global _threads
    _threads = max(1, n or os.cpu_count() or 1)


def get_threads() -> int:
    return _threads


def default_points(num_vars: int) -> int:
    return DEFAULT_POINTS.get(num_vars, 16)


@dataclass(frozen=True)
class TorusGrid:
    num_vars: int
    points_per_dim: int

    def __post_init__(self):
        if self.num_vars < 1:
            raise ValueError("num_vars must be >= 1")
        if self.points_per_dim < 2:
            raise ValueError("points_per_dim must be >= 2")

    @classmethod
    def default(cls, num_vars: int) -> "TorusGrid":
        return cls(num_vars, default_points(num_vars))

    @property
    def size(self) -> int:
        return self.points_per_dim**self.num_vars

    @property
    def weight(self) -> float:
        return 1.0 / self.size

    @property
    def spacing(self) -> float:
        return 2 * np.pi / self.points_per_dim

    @cached_property
    def angles(self) -> np.ndarray:
        """Lattice points as an array of shape (N^n, n), last coordinate fastest."""
        axis = self.spacing * np.arange(self.points_per_dim)
        mesh = np.meshgrid(*([axis] * self.num_vars), indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    def refine(self, factor: int = 2) -> "TorusGrid":
        return TorusGrid(self.num_vars, self.points_per_dim * factor)

    def integrate(self, values: np.ndarray) -> float:
        """Trace of a sampled scalar function: uniform mean, pairwise summed."""
        return float(np.sum(np.asarray(values, dtype=float)) * self.weight)


class PointwiseSymbol:
    """A bounded matrix-valued function on the torus that is not a Laurent polynomial.

    ``func`` maps angles of shape (P, n) to values of shape (P, rows, cols).
    """

    def __init__(self, num_vars: int, rows: int, cols: int, func: Callable[[np.ndarray], np.ndarray],
                 description: dict | None = None):
        self.num_vars = num_vars
        self.rows = rows
        self.cols = cols
        self.func = func
        self.description = description or {"symbol": "custom"}

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def eval_many(self, angles: np.ndarray) -> np.ndarray:
        vals = np.asarray(self.func(np.asarray(angles, dtype=float)), dtype=complex)
        return vals.reshape(angles.shape[0], self.rows, self.cols)

    def adjoint(self) -> "PointwiseSymbol":
        f = self.func
        return PointwiseSymbol(
            self.num_vars, self.cols, self.rows,
            lambda ang: np.conj(np.swapaxes(np.asarray(f(ang), dtype=complex).reshape(-1, self.rows, self.cols), 1, 2)),
            {"symbol": "adjoint", "of": self.description},
        )

    def __repr__(self):
        return f"PointwiseSymbol({self.rows}x{self.cols}, {self.description})"


def abs_power(center_angle: float, nu: float, num_vars: int = 1) -> PointwiseSymbol:
    """The 1x1 symbol z -> |z - exp(i*center)|^nu on the circle (first coordinate)."""
    if nu <= 0:
        raise ValueError("nu must be positive")
    z0 = np.exp(1j * center_angle)

    def f(ang):
        return np.abs(np.exp(1j * ang[:, 0]) - z0) ** nu

    return PointwiseSymbol(num_vars, 1, 1, f, {"symbol": "abs_power", "center_angle": center_angle, "nu": nu})


def characteristic(mask_func: Callable[[np.ndarray], np.ndarray], num_vars: int = 1) -> PointwiseSymbol:
    return PointwiseSymbol(num_vars, 1, 1, lambda ang: mask_func(ang).astype(float), {"symbol": "characteristic"})


@dataclass(frozen=True, eq=False)
class SampledMatrix:
    grid: TorusGrid
    values: np.ndarray
    provenance: str = "laurent"

    def __post_init__(self):
        if self.values.ndim != 3 or self.values.shape[0] != self.grid.size:
            raise ValueError(
                f"values must have shape ({self.grid.size}, rows, cols), got {self.values.shape}"
            )

    @property
    def rows(self) -> int:
        return self.values.shape[1]

    @property
    def cols(self) -> int:
        return self.values.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def num_vars(self) -> int:
        return self.grid.num_vars

    def adjoint(self) -> "SampledMatrix":
        return SampledMatrix(self.grid, np.conj(np.swapaxes(self.values, 1, 2)), self.provenance)

    def __matmul__(self, other: "SampledMatrix") -> "SampledMatrix":
        _same_grid(self, other)
        return SampledMatrix(self.grid, self.values @ other.values, _merge(self, other))

    def eval_many(self, angles: np.ndarray) -> np.ndarray:
        raise TypeError("a SampledMatrix is tied to its grid and cannot be re-evaluated")


def _same_grid(a: SampledMatrix, b: SampledMatrix):
    if a.grid != b.grid:
        raise ValueError(f"grid mismatch: {a.grid} vs {b.grid}")


def _merge(*mats: SampledMatrix) -> str:
    return "laurent" if all(m.provenance == "laurent" for m in mats) else "scalar-symbol"


Symbol = LaurentMatrix | PointwiseSymbol | SampledMatrix


def sample(a: Symbol, grid: TorusGrid) -> SampledMatrix:
    """Evaluate a symbol at every lattice point of ``grid``."""
    if isinstance(a, SampledMatrix):
        if a.grid != grid:
            raise ValueError(f"sampled matrix lives on {a.grid}, requested {grid}")
        return a
    if a.num_vars != grid.num_vars:
        raise ValueError(f"num_vars mismatch: symbol {a.num_vars}, grid {grid.num_vars}")
    provenance = "laurent" if isinstance(a, LaurentMatrix) else "scalar-symbol"
    return SampledMatrix(grid, a.eval_many(grid.angles), provenance)


def _svdvals(values: np.ndarray) -> np.ndarray:
    if values.shape[1] == 0 or values.shape[2] == 0:
        return np.zeros((values.shape[0], 0))
    return np.linalg.svd(values, compute_uv=False)[:, ::-1]


def singular_values(s: SampledMatrix) -> np.ndarray:
    """Per-fiber singular values, ascending; shape (P, min(rows, cols))."""
    vals = s.values
    nthreads = get_threads()
    if nthreads == 1 or vals.shape[0] < 4096:
        return np.ascontiguousarray(_svdvals(vals))
    chunks = np.array_split(np.arange(vals.shape[0]), nthreads)
    with ThreadPoolExecutor(nthreads) as ex:
        parts = list(ex.map(lambda idx: _svdvals(vals[idx]), chunks))
    return np.ascontiguousarray(np.concatenate(parts, axis=0))


@dataclass(frozen=True, eq=False)
class RankProfile:
    generic_rank: int
    fiber_ranks: np.ndarray
    rank_tolerance: float
    threshold: float
    sigma_max: float

    @property
    def min_fiber_rank(self) -> int:
        return int(self.fiber_ranks.min()) if self.fiber_ranks.size else 0


def rank_threshold(sv: np.ndarray, eps_rank: float) -> float:
    top = float(sv.max()) if sv.size else 0.0
    return eps_rank * max(top, 1.0)


def rank_profile(s: SampledMatrix, eps_rank: float = DEFAULT_RANK_TOL, sv: np.ndarray | None = None) -> RankProfile:
    if eps_rank <= 0:
        raise ValueError("eps_rank must be positive")
    if sv is None:
        sv = singular_values(s)
    thr = rank_threshold(sv, eps_rank)
    ranks = (sv > thr).sum(axis=1) if sv.size else np.zeros(s.grid.size, dtype=int)
    generic = int(ranks.max()) if ranks.size else 0
    return RankProfile(generic, ranks, eps_rank, thr, float(sv.max()) if sv.size else 0.0)


def generic_rank(a: Symbol, grid: TorusGrid | None = None, eps_rank: float = DEFAULT_RANK_TOL) -> int:
    grid = grid or _grid_for(a)
    return rank_profile(sample(a, grid), eps_rank).generic_rank


def vn_dim_kernel(a: Symbol, grid: TorusGrid | None = None, eps_rank: float = DEFAULT_RANK_TOL) -> int:
    """von Neumann dimension of the kernel: cols minus generic rank."""
    return a.shape[1] - generic_rank(a, grid, eps_rank)


def vn_dim_image_closure(a: Symbol, grid: TorusGrid | None = None, eps_rank: float = DEFAULT_RANK_TOL) -> int:
    return generic_rank(a, grid, eps_rank)


def _grid_for(a: Symbol) -> TorusGrid:
    if isinstance(a, SampledMatrix):
        return a.grid
    return TorusGrid.default(a.num_vars)


def fiber_kernel_basis(values: np.ndarray, dim: int) -> np.ndarray:
    """Orthonormal basis of the ``dim`` least-singular right directions, per fiber.

    Returns shape (P, cols, dim).  With ``dim`` equal to the generic kernel
    dimension this is the fiberwise kernel off the degeneracy locus.
    """
    p, _, cols = values.shape
    if dim == 0:
        return np.zeros((p, cols, 0), dtype=complex)
    if values.shape[1] == 0:
        return np.broadcast_to(np.eye(cols, dtype=complex)[:, :dim], (p, cols, dim)).copy()
    _, _, vh = np.linalg.svd(values, full_matrices=True)
    return np.conj(np.swapaxes(vh[:, cols - dim :, :], 1, 2))


def fiber_cokernel_basis(values: np.ndarray, dim: int) -> np.ndarray:
    """Orthonormal basis of the ``dim`` least-singular left directions, per fiber."""
    p, rows, _ = values.shape
    if dim == 0:
        return np.zeros((p, rows, 0), dtype=complex)
    if values.shape[2] == 0:
        return np.broadcast_to(np.eye(rows, dtype=complex)[:, :dim], (p, rows, dim)).copy()
    u, _, _ = np.linalg.svd(values, full_matrices=True)
    return u[:, :, rows - dim :]


def fiber_abs(s: SampledMatrix) -> SampledMatrix:
    """Fiberwise (A* A)^(1/2), the positive part of the polar decomposition."""
    if s.cols == 0:
        return SampledMatrix(s.grid, np.zeros((s.grid.size, 0, 0), dtype=complex), s.provenance)
    _, sv, vh = np.linalg.svd(s.values, full_matrices=True)
    k = sv.shape[1]
    diag = np.zeros((s.grid.size, s.cols), dtype=float)
    diag[:, :k] = sv
    v = np.conj(np.swapaxes(vh, 1, 2))
    return SampledMatrix(s.grid, (v * diag[:, None, :]) @ vh, "scalar-symbol")


# -- combinators over mixed symbol kinds --------------------------------
# All-Laurent inputs stay symbolic; any SampledMatrix pins the result to its
# grid; otherwise the result is a PointwiseSymbol evaluated lazily.

def _pinned_grid(syms) -> TorusGrid | None:
    grids = {s.grid for s in syms if isinstance(s, SampledMatrix)}
    if len(grids) > 1:
        raise ValueError("symbols sampled on different grids")
    return grids.pop() if grids else None


def _lazy(syms, rows, cols, combine, desc) -> PointwiseSymbol:
    n = syms[0].num_vars
    return PointwiseSymbol(n, rows, cols, lambda ang: combine([s.eval_many(ang) for s in syms]), desc)


def _check_vars(syms):
    if len({s.num_vars for s in syms}) != 1:
        raise ValueError("num_vars mismatch")


def _stack_values(vals, how):
    if how == "h":
        return np.concatenate(vals, axis=2)
    if how == "v":
        return np.concatenate(vals, axis=1)
    p = vals[0].shape[0]
    rows, cols = sum(v.shape[1] for v in vals), sum(v.shape[2] for v in vals)
    out = np.zeros((p, rows, cols), dtype=complex)
    r0 = c0 = 0
    for v in vals:
        out[:, r0 : r0 + v.shape[1], c0 : c0 + v.shape[2]] = v
        r0 += v.shape[1]
        c0 += v.shape[2]
    return out


def _combine_stack(syms, how):
    syms = list(syms)
    _check_vars(syms)
    if how == "h":
        if len({s.rows for s in syms}) != 1:
            raise ValueError("hstack needs equal row counts")
        rows, cols = syms[0].rows, sum(s.cols for s in syms)
    elif how == "v":
        if len({s.cols for s in syms}) != 1:
            raise ValueError("vstack needs equal column counts")
        rows, cols = sum(s.rows for s in syms), syms[0].cols
    else:
        rows, cols = sum(s.rows for s in syms), sum(s.cols for s in syms)
    if all(isinstance(s, LaurentMatrix) for s in syms):
        fn = {"h": laurent.hstack, "v": laurent.vstack, "d": laurent.block_diag}[how]
        return fn(*syms)
    grid = _pinned_grid(syms)
    if grid is not None:
        mats = [sample(s, grid) for s in syms]
        return SampledMatrix(grid, _stack_values([m.values for m in mats], how), _merge(*mats))
    return _lazy(syms, rows, cols, lambda vals: _stack_values(vals, how), {"symbol": "stack", "how": how})


def hstack_symbols(*syms: Symbol) -> Symbol:
    return _combine_stack(syms, "h")


def vstack_symbols(*syms: Symbol) -> Symbol:
    return _combine_stack(syms, "v")


def block_diag_symbols(*syms: Symbol) -> Symbol:
    return _combine_stack(syms, "d")


def matmul_symbols(a: Symbol, b: Symbol) -> Symbol:
    _check_vars([a, b])
    if a.cols != b.rows:
        raise ValueError(f"cannot multiply {a.shape} by {b.shape}")
    if isinstance(a, LaurentMatrix) and isinstance(b, LaurentMatrix):
        return laurent.matmul(a, b)
    grid = _pinned_grid([a, b])
    if grid is not None:
        return sample(a, grid) @ sample(b, grid)
    return _lazy([a, b], a.rows, b.cols, lambda v: v[0] @ v[1], {"symbol": "product"})


def scale_symbol(a: Symbol, c: complex) -> Symbol:
    if isinstance(a, LaurentMatrix):
        return a.scale(c)
    if isinstance(a, SampledMatrix):
        return SampledMatrix(a.grid, a.values * c, a.provenance)
    return _lazy([a], a.rows, a.cols, lambda v: v[0] * c, {"symbol": "scaled", "by": str(c)})


def adjoint_symbol(a: Symbol) -> Symbol:
    if isinstance(a, LaurentMatrix):
        return laurent.adjoint(a)
    return a.adjoint()


def zero_symbol(rows: int, cols: int, num_vars: int) -> LaurentMatrix:
    return LaurentMatrix.zeros(rows, cols, num_vars)


def identity_symbol(k: int, num_vars: int) -> LaurentMatrix:
    return LaurentMatrix.identity(k, num_vars)
