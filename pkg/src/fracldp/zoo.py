"""Shipped model builders.

``zoo()`` returns the certified members every validator must pass. The
oracle builders below it (constant reduction, linear additive, scalar linear)
deliberately bend the structural rules — constant kappa, zero drift — to
create closed-form comparison points for the integrators; they are test
devices, not certified models.
"""

from __future__ import annotations

import numpy as np

from .grids import Field, GridSpec
from .models import DriftSpec, ForcingSpec, ModelSpec, NoiseSpec, smooth_bump


def standard_grid(alpha: float = 1.0, points: int = 128, half_length: float = 4.0) -> GridSpec:
    return GridSpec(dim=1, half_length=half_length, points_per_dim=points, alpha=alpha)


def _mode_coefficients(n_modes: int, q: float, gamma0: float, decay: float = 2.0):
    k = np.arange(n_modes)
    gamma = gamma0 * decay ** (-k.astype(float))
    beta = gamma.copy()
    alpha = gamma * max(1.0, q * q / 4.0)
    # declared tail of the idealized geometric family beyond the truncation
    tail = (2.0 + max(1.0, q * q / 4.0)) * gamma0 * decay ** (-float(n_modes)) / (1.0 - 1.0 / decay)
    return alpha, beta, gamma, tail


def _sigma1_stack(grid: GridSpec, n_modes: int, amplitude: float, radius: float) -> np.ndarray:
    """Compactly supported forcing modes with geometrically decaying amplitude.

    Mode k is the mollifier bump modulated by cos(k*pi*x/radius), so the modes
    have distinct shapes but share the support |x| < radius.
    """
    base = smooth_bump(grid, radius=radius, amplitude=1.0).values
    x = grid.coords()[0]
    out = np.empty((n_modes, *grid.shape))
    for k in range(n_modes):
        out[k] = amplitude * 2.0 ** (-k) * base * np.cos(k * np.pi * x / radius)
    return out


def build_model(
    grid: GridSpec | None = None,
    drift_form: str = "cubic_minus_linear",
    p: float = 4.0,
    noise_form: str = "saturated_power",
    q: float = 2.5,
    n_modes: int = 4,
    gamma0: float = 0.04,
    saturation: float = 0.1,
    kappa_amplitude: float = 0.5,
    kappa_radius: float = 0.5,
    sigma1_amplitude: float = 0.15,
    sigma1_radius: float = 0.5,
    forcing_form: str = "bump",
    forcing_amplitude: float = 0.2,
    forcing_radius: float = 0.5,
) -> ModelSpec:
    """Assemble a certified model from bump-parameterized data (config surface)."""
    if grid is None:
        grid = standard_grid()
    if drift_form == "cubic_minus_linear":
        drift = DriftSpec(form="cubic_minus_linear")
    elif drift_form == "pure_power":
        drift = DriftSpec(
            form="pure_power", p=p, lambda1=1.0, lambda2=1.0,
            psi1_bound=0.0, psi2_bound=1.0, psi3_bound=0.0, psi4_bound=0.0,
        )
    else:
        raise ValueError(f"build_model supports built-in drift forms only, got {drift_form!r}")
    c_alpha, c_beta, c_gamma, tail = _mode_coefficients(n_modes, q, gamma0)
    noise = NoiseSpec(
        grid=grid,
        n_modes=n_modes,
        q=q,
        kappa=smooth_bump(grid, radius=kappa_radius, amplitude=kappa_amplitude),
        sigma1=_sigma1_stack(grid, n_modes, sigma1_amplitude, sigma1_radius),
        coeff_alpha=c_alpha,
        coeff_beta=c_beta,
        coeff_gamma=c_gamma,
        form=noise_form,
        saturation=saturation,
        tail_bound=tail,
    )
    forcing = ForcingSpec(grid=grid, form=forcing_form, amplitude=forcing_amplitude, radius=forcing_radius)
    return ModelSpec(grid=grid, drift=drift, noise=noise, forcing=forcing)


def default_model(grid: GridSpec | None = None) -> ModelSpec:
    """The default campaign model: cubic bistable drift, saturated superlinear
    noise (q = 2.5), compact bump data supported in |x| <= L/8."""
    return build_model(grid or standard_grid())


def fractional_model(grid: GridSpec | None = None) -> ModelSpec:
    """Fractional-diffusion member (alpha = 0.6), otherwise default data."""
    return build_model(grid or standard_grid(alpha=0.6))


def pure_power_model(grid: GridSpec | None = None) -> ModelSpec:
    """Odd-power drift with linear-growth noise (q = 2): the benign member."""
    return build_model(grid or standard_grid(), drift_form="pure_power", noise_form="smooth_power", q=2.0)


def boundary_growth_model(grid: GridSpec | None = None) -> ModelSpec:
    """Noise at the admissibility boundary q = 1 + p/2 = 3."""
    return build_model(grid or standard_grid(), q=3.0)


def zoo() -> dict:
    """Certified members keyed by name; all must pass every validator."""
    return {
        "default": default_model,
        "fractional": fractional_model,
        "pure-power": pure_power_model,
        "boundary-growth": boundary_growth_model,
    }


def default_initial_datum(grid: GridSpec, amplitude: float = 1.0, radius: float = 0.5) -> Field:
    return smooth_bump(grid, radius=radius, amplitude=amplitude)


# ---------------------------------------------------------------------------
# oracle constructions (closed-form comparison points; intentionally exempt
# from the compact-support rule — see validate_noise's kappa-support finding)


def _zero_drift() -> DriftSpec:
    return DriftSpec(
        form="custom-callback", p=4.0, lambda1=1.0, lambda2=1.0,
        psi1_bound=0.0, psi2_bound=1.0, psi3_bound=0.0, psi4_bound=0.0,
        callback=lambda t, x, u: np.zeros_like(u),
        deriv_callback=lambda t, x, u: np.zeros_like(u),
    )


def _linear_drift(a: float) -> DriftSpec:
    return DriftSpec(
        form="custom-callback", p=4.0, lambda1=1.0, lambda2=1.0,
        psi1_bound=0.0, psi2_bound=1.0, psi3_bound=0.0, psi4_bound=0.0,
        callback=lambda t, x, u, a=a: a * u,
        deriv_callback=lambda t, x, u, a=a: np.full_like(u, a),
    )


def constant_reduction_model(
    grid: GridSpec | None = None,
    drift_form: str = "cubic_minus_linear",
    q: float = 2.5,
    sigma1_value: float = 0.2,
    gamma0: float = 0.09,
    forcing_value: float = 0.1,
) -> ModelSpec:
    """All data spatially constant (kappa = 1 everywhere, one mode): the PDE
    collapses to a scalar equation, matched path-by-path by a scalar stepper."""
    grid = grid or GridSpec(dim=1, half_length=2.0, points_per_dim=16, alpha=0.75)
    drift = DriftSpec() if drift_form == "cubic_minus_linear" else _zero_drift()
    noise = NoiseSpec(
        grid=grid,
        n_modes=1,
        q=q,
        kappa=Field(grid, np.ones(grid.shape)),
        sigma1=np.full((1, *grid.shape), sigma1_value),
        coeff_alpha=np.array([gamma0 * max(1.0, q * q / 4.0)]),
        coeff_beta=np.array([gamma0]),
        coeff_gamma=np.array([gamma0]),
        form="saturated_power",
        saturation=0.1,
    )
    forcing = ForcingSpec(
        grid=grid, form="custom-callback",
        callback=lambda t, vals=np.full(grid.shape, forcing_value): vals,
    )
    return ModelSpec(grid=grid, drift=drift, noise=noise, forcing=forcing)


def linear_additive_model(
    grid: GridSpec | None = None, n_modes: int = 2, sigma1_amplitude: float = 0.3
) -> ModelSpec:
    """Zero drift, purely additive noise: the solution is Gaussian with
    closed-form per-mode statistics under the exact integrating factor."""
    grid = grid or GridSpec(dim=1, half_length=4.0, points_per_dim=32, alpha=0.75)
    noise = NoiseSpec(
        grid=grid,
        n_modes=n_modes,
        q=2.0,
        kappa=Field(grid, np.zeros(grid.shape)),
        sigma1=_sigma1_stack(grid, n_modes, sigma1_amplitude, grid.half_length / 2),
        coeff_alpha=np.ones(n_modes),
        coeff_beta=np.ones(n_modes),
        coeff_gamma=np.ones(n_modes),
        form="smooth_power",
    )
    return ModelSpec(
        grid=grid, drift=_zero_drift(), noise=noise, forcing=ForcingSpec(grid=grid, form="zero")
    )


def scalar_linear_model(
    a: float = 1.0, sigma1_value: float = 0.3, grid: GridSpec | None = None
) -> ModelSpec:
    """1-mode linear model du = (-(-Delta)^a u - a*u + sqrt(eps)*s dW): spatially
    constant initial data stay constant, giving the scalar OU process
    dc = -a*c dt + sqrt(eps)*s dW with analytic action (used by the
    large-deviation acceptance probes)."""
    grid = grid or GridSpec(dim=1, half_length=2.0, points_per_dim=8, alpha=1.0)
    noise = NoiseSpec(
        grid=grid,
        n_modes=1,
        q=2.0,
        kappa=Field(grid, np.zeros(grid.shape)),
        sigma1=np.full((1, *grid.shape), sigma1_value),
        coeff_alpha=np.ones(1),
        coeff_beta=np.ones(1),
        coeff_gamma=np.ones(1),
        form="smooth_power",
    )
    return ModelSpec(
        grid=grid, drift=_linear_drift(a), noise=noise, forcing=ForcingSpec(grid=grid, form="zero")
    )
