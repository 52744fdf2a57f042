"""L2 homology, spectral density functions and Novikov-Shubin invariants over C[Z^n]."""

from .ecat import VirtualModule, direct_sum, x_module
from .fiber import TorusGrid
from .homology import FreeChainComplex, homology_report
from .laurent import LaurentMatrix, LaurentPoly
from .spectral import ns_estimate
from .topology import koszul_complex, morse_bounds, preset_complex

__all__ = [
    "FreeChainComplex",
    "LaurentMatrix",
    "LaurentPoly",
    "TorusGrid",
    "VirtualModule",
    "direct_sum",
    "homology_report",
    "koszul_complex",
    "morse_bounds",
    "ns_estimate",
    "preset_complex",
    "x_module",
]

__version__ = "0.1.0"
