"""fracldp: spectral simulation lab for fractional reaction-diffusion SPDEs.

Deterministic skeleton (controlled) equations, tamed stochastic integrators,
action/rate-functional minimization, and finite-noise large-deviation probes
on periodic spectral grids.
"""

__version__ = "0.1.0"

from .grids import (
    DomainError,
    Field,
    GridMismatchError,
    GridSpec,
    SpectralSymbol,
    frac_laplacian,
    fractional_symbol,
    gagliardo_seminorm,
    h_alpha_norm,
    halpha_seminorm,
    l2_inner,
    l2_norm,
    lp_norm,
)

__all__ = [
    "__version__",
    "DomainError",
    "Field",
    "GridMismatchError",
    "GridSpec",
    "SpectralSymbol",
    "frac_laplacian",
    "fractional_symbol",
    "gagliardo_seminorm",
    "h_alpha_norm",
    "halpha_seminorm",
    "l2_inner",
    "l2_norm",
    "lp_norm",
]
