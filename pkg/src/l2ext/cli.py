"""Command-line front end: l2ext {betti,density,ns,morse,mu,tor,check}."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import ecat, fiber, homology, laurent, spectral, topology
from .ecat import VirtualModule
from .fiber import DEFAULT_RANK_TOL, TorusGrid
from .homology import CheckReport, FreeChainComplex

EXIT_OK, EXIT_CHECK, EXIT_PARSE, EXIT_CHAIN, EXIT_USAGE = 0, 1, 2, 3, 4
COARSE_BELOW = 64


class UsageError(Exception):
    pass


class ParseError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    grid_points_per_dim: int | None = None
    rank_tol: float = DEFAULT_RANK_TOL
    lambda_grid: tuple[float, float, int] = (1e-3, 2.0, 64)
    fit_window: tuple[float, float] | None = None
    output_format: str = "json"
    threads: int | None = 1

    def grid(self, num_vars: int) -> TorusGrid:
        if self.grid_points_per_dim is None:
            return TorusGrid.default(num_vars)
        # a 1-d resolution is capped for higher rank tori so the lattice stays tractable
        n = min(self.grid_points_per_dim, max(fiber.default_points(num_vars), 2)) if num_vars > 1 \
            else self.grid_points_per_dim
        return TorusGrid(num_vars, n)

    def lambdas(self) -> np.ndarray:
        return spectral.log_lambdas(*self.lambda_grid)

    @property
    def coarse(self) -> bool:
        return self.grid_points_per_dim is not None and self.grid_points_per_dim < COARSE_BELOW


# -- argument parsing ----------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _pair(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo:hi, got {text!r}") from None
    if not 0 < lo < hi:
        raise argparse.ArgumentTypeError("need 0 < lo < hi")
    return lo, hi


def _lambda_spec(text: str) -> tuple[float, float, int]:
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected min:max:ppd, got {text!r}")
    lo, hi = _pair(":".join(parts[:2]))
    try:
        ppd = int(parts[2])
    except ValueError:
        raise argparse.ArgumentTypeError("points per decade must be an integer") from None
    if ppd < 1:
        raise argparse.ArgumentTypeError("points per decade must be positive")
    return lo, hi, ppd


def _grid_n(text: str) -> int:
    n = int(text)
    if n < 2:
        raise argparse.ArgumentTypeError("grid needs N >= 2")
    return n


def _threads(text: str) -> int | None:
    if text == "auto":
        return None
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("threads must be positive or 'auto'")
    return n


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--grid", type=_grid_n, default=None, metavar="N", help="lattice points per torus dimension")
    common.add_argument("--rank-tol", type=float, default=DEFAULT_RANK_TOL)
    common.add_argument("--lambda", dest="lambda_grid", type=_lambda_spec, default=(1e-3, 2.0, 64),
                        metavar="MIN:MAX:PPD")
    common.add_argument("--fit-window", type=_pair, default=None, metavar="LO:HI")
    common.add_argument("--output", choices=("json", "csv"), default="json")
    common.add_argument("--threads", type=_threads, default=1, metavar="N|auto")

    p = _Parser(prog="l2ext", description="L2 invariants of free chain complexes over C[Z^n].")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("betti", parents=[common], help="L2 Betti numbers")
    s.add_argument("target", help="preset name or complex JSON file")

    for name in ("density", "ns"):
        s = sub.add_parser(name, parents=[common], help=f"torsion {name} of a module or of H_i")
        s.add_argument("target", help="preset name, complex JSON or module JSON")
        s.add_argument("--degree", type=int, default=0)

    s = sub.add_parser("morse", parents=[common], help="Morse lower bounds")
    s.add_argument("target")
    s.add_argument("--rep", default="trivial", help="representation name or JSON file")
    s.add_argument("--no-upper", action="store_true", help="skip the generator construction")

    s = sub.add_parser("mu", parents=[common], help="bounds on the minimal number of generators")
    s.add_argument("target", help="module JSON, or complex with --degree (uses H_i + T(H_{i-1}))")
    s.add_argument("--degree", type=int, default=0)

    s = sub.add_parser("tor", parents=[common], help="TOR_q from a free resolution")
    s.add_argument("q", type=int)
    s.add_argument("--resolution", default="koszul1", help="koszulN or complex JSON file")

    sub.add_parser("check", parents=[common], help="property battery on built-in presets")
    return p


def config_from_args(args) -> RunConfig:
    return RunConfig(args.grid, args.rank_tol, args.lambda_grid, args.fit_window, args.output, args.threads)


# -- input loading ---------------------------------------------------------

def _read_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise ParseError(f"{path}: {err}") from None


def load_target(text: str) -> FreeChainComplex | VirtualModule:
    path = Path(text)
    if not path.exists():
        try:
            return topology.preset_complex(text).complex
        except topology.TopologyError as err:
            raise ParseError(str(err)) from None
    data = _read_json(path)
    try:
        if "ranks" in data:
            return FreeChainComplex.from_json(data)
        if "alpha" in data:
            return ecat.module_from_json(data)
    except homology.ChainError as err:
        raise ParseError(f"{path}: {err}") from None
    except (KeyError, TypeError, ValueError, laurent.LaurentError, ecat.EcatError) as err:
        raise ParseError(f"{path}: malformed input ({err})") from None
    raise ParseError(f"{path}: neither a complex (needs 'ranks') nor a module (needs 'alpha')")


def load_complex(text: str) -> FreeChainComplex:
    tgt = load_target(text)
    if not isinstance(tgt, FreeChainComplex):
        raise ParseError(f"{text}: expected a chain complex")
    return tgt


def load_rep(text: str, num_vars: int) -> topology.UnitaryRep:
    path = Path(text)
    try:
        if path.exists():
            return topology.UnitaryRep.from_json(_read_json(path))
        return topology.named_rep(text, num_vars)
    except (KeyError, TypeError, ValueError) as err:
        raise ParseError(f"{text}: {err}") from None


def _check_degree(c: FreeChainComplex, i: int) -> None:
    if not 0 <= i <= c.top:
        raise UsageError(f"degree {i} outside 0..{c.top}")


# -- output ----------------------------------------------------------------

def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)


def _fit_or_error(f: spectral.SpectralDensity, window) -> dict:
    try:
        return spectral.ns_estimate(f, window).to_json()
    except spectral.FitError as err:
        return {"error": str(err)}


# -- commands ----------------------------------------------------------------

def cmd_betti(args, cfg: RunConfig) -> tuple[int, str]:
    c = load_complex(args.target)
    homology.require_valid(c)
    grid = cfg.grid(c.num_vars)
    betti = [homology.homology(c, i, grid, cfg.rank_tol, cfg.lambdas()).betti for i in range(c.top + 1)]
    if cfg.output_format == "csv":
        return EXIT_OK, "degree,betti\n" + "".join(f"{i},{b}\n" for i, b in enumerate(betti))
    text = " ".join(f"b{i}={b}" for i, b in enumerate(betti))
    return EXIT_OK, _dump({"betti": betti, "summary": text})


def _density_for(args, cfg: RunConfig) -> spectral.SpectralDensity:
    tgt = load_target(args.target)
    if isinstance(tgt, FreeChainComplex):
        homology.require_valid(tgt)
        _check_degree(tgt, args.degree)
        return homology.homology(tgt, args.degree, cfg.grid(tgt.num_vars), cfg.rank_tol, cfg.lambdas()).torsion_density
    return spectral.density(tgt, cfg.lambdas(), cfg.grid(tgt.num_vars), cfg.rank_tol)


def cmd_density(args, cfg: RunConfig) -> tuple[int, str]:
    f = _density_for(args, cfg)
    if cfg.output_format == "csv":
        return EXIT_OK, f.to_csv()
    return EXIT_OK, _dump({
        "lambda": f.lambdas.tolist(),
        "F": f.values.tolist(),
        "fit": _fit_or_error(f, cfg.fit_window),
    })


def cmd_ns(args, cfg: RunConfig) -> tuple[int, str]:
    f = _density_for(args, cfg)
    fit = _fit_or_error(f, cfg.fit_window)
    trivial = f.is_zero()
    if cfg.output_format == "csv":
        if "error" in fit:
            return EXIT_OK, f"error\n{fit['error']}\n"
        lo, hi = fit["window"]
        return EXIT_OK, f"ns,capacity,window_lo,window_hi,stderr\n{fit['ns']},{fit['capacity']},{lo},{hi},{fit['stderr']}\n"
    out = {"fit": fit, "torsion_trivial": trivial}
    if trivial:
        out["summary"] = "torsion trivial; capacity 0"
    return EXIT_OK, _dump(out)


def cmd_morse(args, cfg: RunConfig) -> tuple[int, str]:
    c = load_complex(args.target)
    homology.require_valid(c)
    rho = load_rep(args.rep, c.num_vars)
    if rho.num_vars != c.num_vars:
        raise UsageError(f"representation has {rho.num_vars} generators, complex has {c.num_vars} variables")
    rep = topology.morse_bounds(c, rho, cfg.grid(c.num_vars), cfg.rank_tol, with_upper=not args.no_upper)
    if cfg.output_format == "csv":
        lines = ["index,lower_bound,mu_lower,mu_upper,certificate"]
        for e in rep.to_json()["indices"]:
            up = "" if e["mu_upper"] is None else e["mu_upper"]
            lines.append(f"{e['index']},{e['lower_bound']},{e['mu_lower']},{up},{e['certificate']}")
        return EXIT_OK, "\n".join(lines) + "\n"
    return EXIT_OK, _dump(rep.to_json())


def cmd_mu(args, cfg: RunConfig) -> tuple[int, str]:
    tgt = load_target(args.target)
    if isinstance(tgt, FreeChainComplex):
        homology.require_valid(tgt)
        _check_degree(tgt, args.degree)
        grid = cfg.grid(tgt.num_vars)
        mod = topology.morse_module(tgt, args.degree, grid)
    else:
        grid = cfg.grid(tgt.num_vars)
        mod = tgt
    b = topology.mu_bounds(mod, grid, cfg.rank_tol)
    if cfg.output_format == "csv":
        up = "" if b.upper is None else b.upper
        return EXIT_OK, f"lower,upper\n{b.lower},{up}\n"
    return EXIT_OK, _dump(b.to_json())


def cmd_tor(args, cfg: RunConfig) -> tuple[int, str]:
    name = args.resolution
    if name.startswith("koszul") and name[6:].isdigit():
        res = topology.koszul_resolution(int(name[6:]))
    else:
        res = load_complex(name)
    homology.require_valid(res)
    if args.q < 0:
        raise UsageError("q must be non-negative")
    e = topology.tor(args.q, res, cfg.grid(res.num_vars), cfg.rank_tol, cfg.lambdas())
    fit = _fit_or_error(e.torsion_density, cfg.fit_window) if not e.torsion_density.is_zero() else None
    zero = e.betti == 0 and e.torsion_density.is_zero()
    if cfg.output_format == "csv":
        return EXIT_OK, f"q,betti,torsion_trivial,zero\n{args.q},{e.betti},{e.torsion_density.is_zero()},{zero}\n"
    return EXIT_OK, _dump({"q": args.q, "betti": e.betti, "torsion_trivial": e.torsion_density.is_zero(),
                           "zero": zero, "fit": fit})


# -- property battery ------------------------------------------------------

def _skip(name: str) -> CheckReport:
    r = CheckReport(name)
    r.details.append("skip coarse grid; fit-based comparison not meaningful")
    return r


def _check_adjoint() -> CheckReport:
    rep = CheckReport("adjoint involution")
    rng = np.random.default_rng(0)
    for n in (1, 2):
        for _ in range(5):
            entries = []
            for _ in range(6):
                terms = {tuple(rng.integers(-3, 4, n)): complex(*rng.normal(size=2)) for _ in range(3)}
                entries.append(laurent.LaurentPoly(n, terms))
            a = laurent.LaurentMatrix(2, 3, n, entries)
            pts = rng.uniform(0, 2 * np.pi, (7, n))
            lhs = a.adjoint().eval_many(pts)
            rhs = np.conj(np.swapaxes(a.eval_many(pts), 1, 2))
            rep.record(a.adjoint().adjoint() == a and np.allclose(lhs, rhs, atol=1e-12),
                       f"n={n}: A** = A and adjoint evaluates to conjugate transpose")
    return rep


def _sample_modules() -> list[tuple[str, VirtualModule]]:
    return [
        ("X(1,0)", ecat.x_module(1.0, 0.0)),
        ("X(2,pi/3)", ecat.x_module(2.0, np.pi / 3)),
        ("X(1,0)+X(1/2,pi)", ecat.direct_sum(ecat.x_module(1.0, 0.0), ecat.x_module(0.5, np.pi))),
        ("T(H0 circle_subdivided)", VirtualModule.of(topology.preset_complex("circle_subdivided").complex.d(1))),
    ]


def _check_monotone(cfg: RunConfig) -> CheckReport:
    rep = CheckReport("density monotonicity")
    grid = cfg.grid(1)
    for name, x in _sample_modules():
        f = spectral.density(x, cfg.lambdas(), grid, cfg.rank_tol)
        ok = bool(np.all(np.diff(f.values) >= 0) and f.values.min() >= 0 and f.values.max() <= f.total_dim + 1e-12)
        rep.record(ok, f"{name}: F nondecreasing in [0, {f.total_dim}]")
    return rep


def _check_dual_density(cfg: RunConfig) -> CheckReport:
    rep = CheckReport("dual density invariance")
    grid = cfg.grid(1)
    for name, x in _sample_modules():
        f = spectral.density(x, cfg.lambdas(), grid, cfg.rank_tol)
        g = spectral.density(ecat.dual_torsion(x, grid, cfg.rank_tol), cfg.lambdas(), grid, cfg.rank_tol)
        dist = homology.density_distance(f, g)
        rep.record(dist <= 1e-12, f"{name}: |F(X) - F(eX)| = {dist:.3g}")
    return rep


def _check_betti_integrality(cfg: RunConfig) -> CheckReport:
    rep = CheckReport("betti integrality")
    names = ("circle", "circle_subdivided", "circle_sq", "torus2", "torus3")
    for name in names:
        c = topology.preset_complex(name).complex
        ref = homology.homology_report(c, cfg.grid(c.num_vars), cfg.rank_tol).betti
        for n in (4, 8, 16):
            b = homology.homology_report(c, TorusGrid(c.num_vars, n), cfg.rank_tol).betti
            rep.record(b == ref, f"{name} N={n}: betti {b} (reference {ref})")
    zero = FreeChainComplex(1, (2, 3), [laurent.LaurentMatrix.zeros(2, 3, 1)])
    b = homology.homology_report(zero, cfg.grid(1), cfg.rank_tol).betti
    rep.record(b == (2, 3), f"zero boundary ranks (2,3): betti {b}")
    return rep


def _check_mu_sandwich(cfg: RunConfig) -> CheckReport:
    rep = CheckReport("mu_lower sandwich")
    grid = cfg.grid(1)
    mods = [ecat.x_module(1.0, 0.0), ecat.x_module(2.0, 0.0), ecat.x_module(1.0, np.pi),
            ecat.direct_sum(ecat.x_module(1.0, 0.0), ecat.x_module(1.0, 0.0))]
    for i, x in enumerate(mods):
        for j, y in enumerate(mods):
            a, b = topology.mu_lower(x, grid), topology.mu_lower(y, grid)
            s = topology.mu_lower(ecat.direct_sum(x, y), grid)
            rep.record(max(a, b) <= s <= a + b, f"pair ({i},{j}): max({a},{b}) <= {s} <= {a + b}")
    return rep


def _check_additivity(cfg: RunConfig) -> CheckReport:
    rep = CheckReport("density additivity")
    grid = cfg.grid(1)
    x1, x2 = ecat.x_module(1.0, 0.0), ecat.x_module(2.0, 2 * np.pi / 3)
    lam = cfg.lambdas()
    f1, f2 = spectral.density(x1, lam, grid), spectral.density(x2, lam, grid)
    f = spectral.density(ecat.direct_sum(x1, x2), lam, grid)
    dist = float(np.abs(f.values - f1.values - f2.values).max())
    rep.record(dist <= 1e-12, f"|F(X1+X2) - F1 - F2| = {dist:.3g}")
    if not cfg.coarse:
        cap = spectral.capacity_of(ecat.direct_sum(x1, x2), None, grid, cfg.rank_tol, cfg.fit_window)
        rep.record(abs(cap - 2.0) <= 0.05 * 2.0, f"capacity of sum {cap:.4f}, expected max(1, 2)")
    return rep


def _check_homotopy(cfg: RunConfig) -> CheckReport:
    if cfg.coarse:
        return _skip("homotopy invariance")
    rep = CheckReport("homotopy invariance")
    a = homology.homology_report(topology.preset_complex("circle").complex, cfg.grid(1), cfg.rank_tol, cfg.lambdas())
    b = homology.homology_report(topology.preset_complex("circle_subdivided").complex, cfg.grid(1), cfg.rank_tol,
                                 cfg.lambdas())
    rep.record(a.betti == b.betti, f"betti {a.betti} vs {b.betti}")
    c = spectral.dilatationally_equivalent(a[0].torsion_density, b[0].torsion_density, 4.0)
    rep.record(c is not None, f"T(H_0) densities dilatationally equivalent with C = {c}")
    return rep


def _battery(cfg: RunConfig) -> list[Callable[[], CheckReport]]:
    tol = None
    if cfg.coarse:
        tol = max(homology.default_density_tol(2), 4.0 / cfg.grid_points_per_dim)
    presets = {n: topology.preset_complex(n) for n in ("circle", "circle_sq", "torus2", "torus3")}
    checks: list[Callable[[], CheckReport]] = [
        _check_adjoint,
        lambda: _check_monotone(cfg),
        lambda: _check_dual_density(cfg),
        lambda: _check_betti_integrality(cfg),
        lambda: _check_mu_sandwich(cfg),
        lambda: _check_additivity(cfg),
        lambda: _check_homotopy(cfg),
    ]
    for name in ("circle", "torus2"):
        c = presets[name].complex
        checks.append(lambda c=c, name=name: _renamed(
            homology.universal_coefficients_check(c, cfg.grid(c.num_vars), tol, cfg.rank_tol), name))
    t2 = presets["torus2"]
    checks.append(lambda: _renamed(homology.poincare_check(t2.complex, t2.top_dim, True, cfg.grid(2), tol,
                                                           cfg.rank_tol), "torus2"))
    for name in ("circle", "circle_sq"):
        if cfg.coarse:
            checks.append(lambda name=name: _skip(f"cover sequence ({name})"))
            continue
        p = presets[name]
        checks.append(lambda p=p: _renamed(topology.cover_sequence_check(p.complex, p.cover_presentations, cfg.grid(1),
                                                                     cfg.rank_tol), p.name))
    for name in ("circle", "torus2", "torus3"):
        p = presets[name]
        checks.append(lambda p=p: topology.brooks_h0_check(p, cfg.grid(p.complex.num_vars), cfg.rank_tol))
    checks.append(lambda: _morse_check(presets["circle"], (1, 1), cfg))
    return checks


def _renamed(rep: CheckReport, suffix: str) -> CheckReport:
    rep.name = f"{rep.name} ({suffix})"
    return rep


def _morse_check(p: topology.CWPreset, expected: tuple[int, ...], cfg: RunConfig) -> CheckReport:
    rep = CheckReport(f"morse bounds ({p.name})")
    got = topology.morse_bounds(p, None, cfg.grid(p.complex.num_vars), cfg.rank_tol).bounds
    rep.record(got == expected, f"bounds {got}, expected {expected}")
    return rep


def run_battery(cfg: RunConfig) -> list[CheckReport]:
    return [check() for check in _battery(cfg)]


def cmd_check(args, cfg: RunConfig) -> tuple[int, str]:
    reports = run_battery(cfg)
    ok = all(r.passed for r in reports)
    if cfg.output_format == "csv":
        lines = ["check,passed"] + [f"{r.name},{r.passed}" for r in reports]
        text = "\n".join(lines) + "\n"
    else:
        text = _dump({
            "coarse": cfg.coarse,
            "passed": ok,
            "checks": [{"name": r.name, "passed": r.passed, "details": r.details} for r in reports],
        })
    return (EXIT_OK if ok else EXIT_CHECK), text


COMMANDS = {
    "betti": cmd_betti,
    "density": cmd_density,
    "ns": cmd_ns,
    "morse": cmd_morse,
    "mu": cmd_mu,
    "tor": cmd_tor,
    "check": cmd_check,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    cfg = config_from_args(args)
    fiber.set_threads(cfg.threads)
    try:
        code, text = COMMANDS[args.command](args, cfg)
    except ParseError as err:
        print(f"parse error: {err}", file=sys.stderr)
        return EXIT_PARSE
    except homology.ChainError as err:
        print(f"chain condition: {err}", file=sys.stderr)
        return EXIT_CHAIN
    except (UsageError, topology.TopologyError, IndexError) as err:
        print(f"usage: {err}", file=sys.stderr)
        return EXIT_USAGE
    sys.stdout.write(text if text.endswith("\n") else text + "\n")
    if code == EXIT_CHECK:
        print("failed checks: " + ", ".join(_failed_names(text)), file=sys.stderr)
    return code


def _failed_names(text: str) -> list[str]:
    try:
        return [c["name"] for c in json.loads(text)["checks"] if not c["passed"]]
    except (ValueError, KeyError):
        return [line.split(",")[0] for line in text.splitlines()[1:] if line.endswith("False")]


if __name__ == "__main__":
    sys.exit(main())
