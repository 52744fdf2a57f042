"""Spectral density functions of torsion modules and Novikov-Shubin invariants."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import ecat
from .ecat import VirtualModule
from .fiber import DEFAULT_RANK_TOL, TorusGrid

FIT_HI = 0.5
FIT_DECADES = 1.5
FIT_FLOOR_WEIGHTS = 20
CAPACITY_LAMBDA_MIN = 1e-7
MIN_FIT_POINTS = 8
DILATATION_STEPS_PER_DECADE = 32


class FitError(ValueError):
    pass


def log_lambdas(lo: float = 1e-3, hi: float = 2.0, per_decade: int = 64) -> np.ndarray:
    if not (0 < lo < hi):
        raise ValueError("need 0 < lo < hi")
    count = int(math.ceil(per_decade * math.log10(hi / lo))) + 1
    return np.geomspace(lo, hi, count)


@dataclass(frozen=True, eq=False)
class SpectralDensity:
    lambdas: np.ndarray
    values: np.ndarray
    kernel_offset: int
    quadrature: TorusGrid
    total_dim: int

    @property
    def weight(self) -> float:
        return self.quadrature.weight

    def __call__(self, lam) -> np.ndarray:
        """Piecewise-linear interpolation in log(lambda), clamped at the ends."""
        return np.interp(np.log(lam), np.log(self.lambdas), self.values)

    def is_zero(self) -> bool:
        return not np.any(self.values > 0)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lambda", "F"])
        for lam, val in zip(self.lambdas, self.values):
            w.writerow([repr(float(lam)), repr(float(val))])
        return buf.getvalue()


def density_from_singular_values(sv: np.ndarray, generic_rank: int, lambdas: np.ndarray,
                                 grid: TorusGrid, kernel_offset: int = 0) -> SpectralDensity:
    """F(lambda) = trace-weighted count of the top generic_rank singular values <= lambda."""
    lambdas = np.asarray(lambdas, dtype=float)
    if lambdas.size == 0:
        raise ValueError("empty lambda grid")
    if generic_rank == 0 or sv.size == 0:
        vals = np.zeros_like(lambdas)
    else:
        top = np.sort(sv[:, sv.shape[1] - generic_rank :].reshape(-1))
        counts = np.searchsorted(top, lambdas, side="right")
        vals = counts * grid.weight
    return SpectralDensity(lambdas, vals, kernel_offset, grid, generic_rank)


def density(x: VirtualModule, lambdas: np.ndarray | None = None, grid: TorusGrid | None = None,
            eps_rank: float = DEFAULT_RANK_TOL) -> SpectralDensity:
    """Spectral density function of the torsion part of ``x``.

    Fibers of the torsion part carry the generic_rank largest singular values
    of alpha; the remaining ones vanish a.e. and belong to the excised kernel.
    """
    grid = grid or x.default_grid()
    if lambdas is None:
        lambdas = log_lambdas()
    rep = ecat.split(x, grid, eps_rank)
    td = rep.torsion_rank_data
    r = td.generic_rank
    offset = x.alpha.shape[1] - r
    return density_from_singular_values(td.singular_values, r, lambdas, grid, offset)


def closed_form_density(nu: float, lam) -> np.ndarray | float:
    """Exact density of X_{nu,theta}: arccos(1 - lambda^(2/nu)/2) / pi, capped at 1.

    Evaluated as 2 arcsin(lambda^(1/nu) / 2) / pi, the same function without
    the cancellation in 1 - x/2 for tiny lambda.
    """
    if nu <= 0:
        raise ValueError("nu must be positive")
    lam = np.asarray(lam, dtype=float)
    r = np.power(lam, 1.0 / nu) / 2.0
    out = np.where(r >= 1.0, 1.0, 2.0 * np.arcsin(np.minimum(r, 1.0)) / np.pi)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class NSFit:
    ns: float
    capacity: float
    fit_window: tuple[float, float]
    slope_stderr: float
    n_points_used: int
    flag: str = ""

    def to_json(self) -> dict:
        return {
            "ns": _json_float(self.ns),
            "capacity": _json_float(self.capacity),
            "window": list(self.fit_window),
            "stderr": self.slope_stderr,
        }


def _json_float(v: float):
    if math.isinf(v):
        return "inf"
    return v


def resolution_lambda(f: SpectralDensity) -> float | None:
    """Smallest grid lambda where F clears the quadrature floor of two weights."""
    above = np.flatnonzero(f.values > 2 * f.weight)
    return float(f.lambdas[above[0]]) if above.size else None


def ns_estimate(f: SpectralDensity, window: tuple[float, float] | None = None) -> NSFit:
    """Slope of log F against log lambda over the fit window.

    The default window starts where F reaches FIT_FLOOR_WEIGHTS lattice
    weights (so counting noise is at most 5%) and spans at most FIT_DECADES,
    so the slope tracks the small-lambda end that the lim inf is about rather
    than an average over mixed regimes.
    """
    if window is None:
        if resolution_lambda(f) is None:
            return NSFit(math.inf, 0.0, (float(f.lambdas[0]), FIT_HI), 0.0, 0, "trivial torsion")
        above = np.flatnonzero(f.values >= FIT_FLOOR_WEIGHTS * f.weight)
        lo = float(f.lambdas[above[0]]) if above.size else float(f.lambdas[-1])
        window = (lo, min(FIT_HI, lo * 10**FIT_DECADES))
    lo, hi = window
    sel = (f.lambdas >= lo) & (f.lambdas <= hi)
    if sel.any() and not np.any(f.values[sel] > 0):
        return NSFit(math.inf, 0.0, (lo, hi), 0.0, 0, "trivial torsion")
    sel &= f.values > 0
    n = int(sel.sum())
    if n < MIN_FIT_POINTS:
        raise FitError(
            f"only {n} usable points in window [{lo:.3g}, {hi:.3g}]; "
            f"refine the torus grid or widen the lambda grid"
        )
    res = stats.linregress(np.log(f.lambdas[sel]), np.log(f.values[sel]))
    slope = float(res.slope)
    if slope <= 0:
        return NSFit(0.0, math.inf, (lo, hi), float(res.stderr), n, "non-positive slope")
    return NSFit(slope, 1.0 / slope, (lo, hi), float(res.stderr), n)


def capacity_of(x: VirtualModule, lambdas: np.ndarray | None = None, grid: TorusGrid | None = None,
                eps_rank: float = DEFAULT_RANK_TOL, window: tuple[float, float] | None = None,
                max_points: int = 1 << 16) -> float:
    """Capacity 1/ns; the grid is refined fourfold while the fit lacks points.

    The default lambda grid reaches down to CAPACITY_LAMBDA_MIN so the fit
    floor is set by quadrature, not by where the lambda grid happens to start.
    """
    grid = grid or x.default_grid()
    if lambdas is None:
        lambdas = log_lambdas(CAPACITY_LAMBDA_MIN, 2.0)
    while True:
        try:
            return ns_estimate(density(x, lambdas, grid, eps_rank), window).capacity
        except FitError:
            if grid.points_per_dim * 4 > max_points ** (1 / grid.num_vars) + 1e-9:
                raise
            grid = grid.refine(4)


def dilatationally_equivalent(f: SpectralDensity, g: SpectralDensity, c_max: float = 1e3,
                              eps: float | None = None) -> float | None:
    """Smallest C in (1, c_max] with G(lambda/C) <= F(lambda) <= G(C lambda) near 0.

    The bound is tested on grid points of F in [floor, eps): below the
    quadrature floor of either density both are lattice-count noise.  eps
    defaults to one decade above the floor.  G is evaluated by clamped
    interpolation, which errs toward rejecting.
    """
    fz, gz = f.is_zero(), g.is_zero()
    if fz or gz:
        return 10 ** (1 / DILATATION_STEPS_PER_DECADE) if fz and gz else None
    floors = [r for r in (resolution_lambda(f), resolution_lambda(g)) if r is not None]
    lo = max([f.lambdas[0], g.lambdas[0], *floors])
    hi = min(f.lambdas[-1], g.lambdas[-1])
    if eps is None:
        eps = min(10 * lo, hi)
    lam = f.lambdas[(f.lambdas >= lo) & (f.lambdas < eps)]
    if lam.size == 0:
        return None
    fv = f(lam)
    steps = int(math.ceil(DILATATION_STEPS_PER_DECADE * math.log10(c_max)))
    tol = 1e-12
    for k in range(1, steps + 1):
        c = 10 ** (k / DILATATION_STEPS_PER_DECADE)
        if c > c_max * (1 + 1e-12):
            break
        if np.all(g(lam / c) <= fv + tol) and np.all(fv <= g(lam * c) + tol):
            return c
    return None


def exact_sequence_capacity_check(c_sub: float, c_total: float, c_quot: float, slack: float = 0.05) -> bool:
    """max(c_sub, c_quot) <= c_total <= c_sub + c_quot, each side with relative slack."""
    lower = max(c_sub, c_quot)
    upper = c_sub + c_quot
    if math.isinf(c_total):
        return math.isinf(upper)
    return lower * (1 - slack) <= c_total <= upper * (1 + slack) + 0.0
