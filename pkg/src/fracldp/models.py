"""Reaction-diffusion model specifications and structural-condition validators.

A model couples a dissipative polynomial drift F(t, x, u), a multiplicative
noise family sigma_k(t, x, u) = sigma1_k(t, x) + kappa(x)*sigma2_k(t, x, u),
and a deterministic forcing g. The admissibility conditions are quantitative:

drift (exponent p > 2, constants lambda1, lambda2 > 0, bounded psi_i):
  (coercivity)  F(t,x,u)*u >= lambda1*|u|^p - psi1
  (growth)      |F(t,x,u)| <= psi2*|u|^(p-1) + psi3
  (monotone)    (F(u1)-F(u2))*(u1-u2) >=
                    lambda2*(|u1|^(p-2)u1 - |u2|^(p-2)u2)*(u1-u2) - psi4*(u1-u2)^2

noise (exponent q in [2, 1+p/2], per-mode coefficients alpha_k, beta_k, gamma_k):
  (lipschitz)   |s2_k(u1)-s2_k(u2)|^2 <= alpha_k*(1+|u1|^(q-2)+|u2|^(q-2))*(u1-u2)^2
  (growth)      |s2_k(u)|^2 <= beta_k + gamma_k*|u|^q
  (summable)    sum_k (alpha_k + beta_k + gamma_k) < infinity (finite family +
                declared tail bound for the idealized series)

Validators sample these conditions densely, report worst margins with
witnesses, and compute the derived Hilbert-Schmidt growth/Lipschitz constants
used by the energy estimates downstream. Margins are normalized by the local
magnitude scale so float cancellation at |u| ~ 1e3 cannot masquerade as a
violation.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np

from .grids import DomainError, Field, GridMismatchError, GridSpec, lp_norm

DRIFT_FORMS = ("cubic_minus_linear", "pure_power", "custom-callback")
NOISE_FORMS = ("smooth_power", "saturated_power", "custom-callback")
FORCING_FORMS = ("zero", "bump", "custom-callback")


class ConditionError(ValueError):
    """Raised when a spec is structurally inconsistent (not merely uncertified)."""


def signed_power(u: np.ndarray, exponent: float) -> np.ndarray:
    """sign(u)*|u|^exponent, the odd power map."""
    return np.sign(u) * np.abs(u) ** exponent


def smooth_bump(grid: GridSpec, radius: float, amplitude: float = 1.0, center: float = 0.0) -> Field:
    """Compactly supported mollifier bump: amplitude*exp(1 - 1/(1-(r/radius)^2)).

    Support is the open ball |x - center| < radius; infinitely differentiable.
    """
    if radius <= 0:
        raise DomainError(f"bump radius must be positive, got {radius}")
    r = np.zeros(grid.shape)
    for c in grid.coords():
        r = r + (c - center) ** 2
    r = np.sqrt(r)
    s = np.clip(r / radius, 0.0, 1.0 - 1e-12)
    vals = np.where(r < radius, amplitude * np.exp(1.0 - 1.0 / (1.0 - s**2)), 0.0)
    return Field(grid, vals)


# ---------------------------------------------------------------------------
# drift


@dataclass(frozen=True)
class DriftSpec:
    """Reaction term F(t, x, u) with its certificate constants.

    Built-in forms:
      * ``cubic_minus_linear``: F(u) = u^3 - u (p = 4); certified with
        lambda1 = 1/2, psi1 = 1/2 (since u^4 - u^2 >= u^4/2 - 1/2),
        psi2 = psi3 = 1, lambda2 = 1, psi4 = 1.
      * ``pure_power``: F(u) = |u|^(p-2) u; lambda1 = lambda2 = 1, psi_i = 0
        except psi2 = 1.
      * ``custom-callback``: user callable ``f(t, coords, u)`` (vectorized in
        u), optional derivative ``df(t, coords, u)`` for adjoint gradients.
    """

    form: str = "cubic_minus_linear"
    p: float = 4.0
    lambda1: float = 0.5
    lambda2: float = 1.0
    psi1_bound: float = 0.5
    psi2_bound: float = 1.0
    psi3_bound: float = 1.0
    psi4_bound: float = 1.0
    callback: Optional[Callable] = None
    deriv_callback: Optional[Callable] = None

    def __post_init__(self) -> None:
        if self.form not in DRIFT_FORMS:
            raise ConditionError(f"unknown drift form {self.form!r}; expected one of {DRIFT_FORMS}")
        if not (self.p > 2.0):
            raise ConditionError(f"drift exponent p must exceed 2, got {self.p}")
        if self.lambda1 <= 0 or self.lambda2 <= 0:
            raise ConditionError("lambda1 and lambda2 must be positive")
        if min(self.psi1_bound, self.psi2_bound, self.psi3_bound, self.psi4_bound) < 0:
            raise ConditionError("psi bounds must be non-negative")
        if self.form == "cubic_minus_linear" and self.p != 4.0:
            raise ConditionError("cubic_minus_linear is a p = 4 drift")
        if self.form == "custom-callback" and self.callback is None:
            raise ConditionError("custom-callback drift requires a callback")

    def value(self, t: float, coords, u: np.ndarray) -> np.ndarray:
        if self.form == "cubic_minus_linear":
            return u**3 - u
        if self.form == "pure_power":
            return signed_power(u, self.p - 1.0)
        return self.callback(t, coords, u)

    def deriv(self, t: float, coords, u: np.ndarray) -> Optional[np.ndarray]:
        """dF/du, or None when a custom drift ships no derivative."""
        if self.form == "cubic_minus_linear":
            return 3.0 * u**2 - 1.0
        if self.form == "pure_power":
            return (self.p - 1.0) * np.abs(u) ** (self.p - 2.0)
        if self.deriv_callback is not None:
            return self.deriv_callback(t, coords, u)
        return None


class DriftOverflowError(FloatingPointError):
    """|u|^(p-1) left the float range; carries the first offending flat index."""

    def __init__(self, index: int):
        self.index = index
        super().__init__(f"drift evaluation overflowed at flat index {index}")


def drift_eval(drift: DriftSpec, t: float, u: Field) -> Field:
    """Evaluate F(t, x, u) on a field; overflow is an error, not an inf."""
    with np.errstate(over="ignore", invalid="ignore"):
        out = drift.value(t, u.grid.coords(), u.values)
    out = np.asarray(out, dtype=float)
    if not np.all(np.isfinite(out)):
        idx = int(np.flatnonzero(~np.isfinite(out.reshape(-1)))[0])
        raise DriftOverflowError(idx)
    return Field(u.grid, out)


def elementary_margins(u1, u2, p: float):
    """Margins of the two power-monotonicity inequalities (vectorized).

    With D = (|u1|^(p-2)u1 - |u2|^(p-2)u2)*(u1-u2):
      margin1 = D - 2^(1-p)*|u1-u2|^p        (power lower bound)
      margin2 = D - (|u1|^(p-2)+|u2|^(p-2))*(u1-u2)^2 / 2   (mean lower bound)

    Both are >= 0 for every real pair when p >= 2.
    """
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    d = u1 - u2
    big = (signed_power(u1, p - 1.0) - signed_power(u2, p - 1.0)) * d
    m1 = big - 2.0 ** (1.0 - p) * np.abs(d) ** p
    m2 = big - 0.5 * (np.abs(u1) ** (p - 2.0) + np.abs(u2) ** (p - 2.0)) * d**2
    return m1, m2


def elementary_inequalities(u1: float, u2: float, p: float) -> tuple[float, float]:
    """Scalar margins of the two elementary inequalities at a single pair."""
    m1, m2 = elementary_margins(u1, u2, p)
    return float(m1), float(m2)


# ---------------------------------------------------------------------------
# noise


@dataclass(frozen=True)
class NoiseSpec:
    """Mode family sigma_k(t,x,u) = sigma1_k(x) + kappa(x)*sigma2_k(t,x,u).

    Built-in sigma2 forms are separable, sigma2_k(u) = sqrt(gamma_k)*s(u):
      * ``smooth_power``: s(u) = sign(u)|u|^(q/2) — pure superlinear growth.
      * ``saturated_power``: s(u) = sign(u)*phi/(1+saturation*phi) with
        phi = |u|^(q/2) — same local growth, bounded at infinity.
    Both satisfy |s(u)|^2 <= |u|^q, so the growth condition holds with margin
    beta_k for any declared positive coefficients, and the local Lipschitz
    condition holds with alpha_k >= gamma_k*max(1, q^2/4).

    ``custom-callback`` supplies ``s2(t, coords, u, k)`` (vectorized in u) and
    optionally ``ds2(t, coords, u, k)``.

    ``tail_bound`` declares sum_{k >= K}(alpha+beta+gamma) of the idealized
    infinite family this finite spec truncates.
    """

    grid: GridSpec
    n_modes: int
    q: float
    kappa: Field
    sigma1: np.ndarray = dc_field(repr=False)  # (K, *grid.shape), time-constant
    coeff_alpha: np.ndarray = dc_field(repr=False)
    coeff_beta: np.ndarray = dc_field(repr=False)
    coeff_gamma: np.ndarray = dc_field(repr=False)
    form: str = "saturated_power"
    saturation: float = 0.1
    sigma2_callback: Optional[Callable] = None
    sigma2_deriv_callback: Optional[Callable] = None
    tail_bound: float = 0.0

    def __post_init__(self) -> None:
        if self.form not in NOISE_FORMS:
            raise ConditionError(f"unknown noise form {self.form!r}; expected one of {NOISE_FORMS}")
        if self.n_modes < 1:
            raise ConditionError("n_modes must be at least 1")
        if not (self.q >= 2.0):
            raise ConditionError(f"noise growth exponent q must be >= 2, got {self.q}")
        if self.kappa.grid != self.grid:
            raise GridMismatchError("kappa lives on a different grid")
        sig1 = np.asarray(self.sigma1, dtype=float)
        if sig1.shape != (self.n_modes, *self.grid.shape):
            raise GridMismatchError(
                f"sigma1 must have shape (K, *grid.shape) = {(self.n_modes, *self.grid.shape)}"
            )
        if not np.all(np.isfinite(sig1)):
            raise DomainError("non-finite sigma1 mode values")
        sig1 = sig1.copy()
        sig1.setflags(write=False)
        object.__setattr__(self, "sigma1", sig1)
        for name in ("coeff_alpha", "coeff_beta", "coeff_gamma"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (self.n_modes,):
                raise ConditionError(f"{name} must have one entry per mode")
            if not np.all(arr > 0) or not np.all(np.isfinite(arr)):
                raise ConditionError(f"{name} entries must be positive and finite")
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.form == "custom-callback" and self.sigma2_callback is None:
            raise ConditionError("custom-callback noise requires a callback")
        if self.form == "saturated_power" and self.saturation < 0:
            raise ConditionError("saturation must be non-negative")
        if self.tail_bound < 0:
            raise ConditionError("tail_bound must be non-negative")

    # -- separable built-in profile ------------------------------------------

    @property
    def separable(self) -> bool:
        return self.form in ("smooth_power", "saturated_power")

    def profile(self, u: np.ndarray) -> np.ndarray:
        """Shared scalar profile s(u) of the built-in forms."""
        phi = np.abs(u) ** (self.q / 2.0)
        if self.form == "smooth_power":
            return np.sign(u) * phi
        return np.sign(u) * phi / (1.0 + self.saturation * phi)

    def profile_deriv(self, u: np.ndarray) -> np.ndarray:
        dphi = (self.q / 2.0) * np.abs(u) ** (self.q / 2.0 - 1.0)
        if self.form == "smooth_power":
            return dphi
        phi = np.abs(u) ** (self.q / 2.0)
        return dphi / (1.0 + self.saturation * phi) ** 2

    def sigma2_mode(self, t: float, k: int, u: np.ndarray) -> np.ndarray:
        """sigma2_k(t, x, u) as an array shaped like u."""
        if self.separable:
            return np.sqrt(self.coeff_gamma[k]) * self.profile(u)
        return self.sigma2_callback(t, self.grid.coords(), u, k)

    def sigma2_mode_deriv(self, t: float, k: int, u: np.ndarray) -> Optional[np.ndarray]:
        if self.separable:
            return np.sqrt(self.coeff_gamma[k]) * self.profile_deriv(u)
        if self.sigma2_deriv_callback is not None:
            return self.sigma2_deriv_callback(t, self.grid.coords(), u, k)
        return None

    def mode_values(self, t: float, u: np.ndarray) -> np.ndarray:
        """All K mode fields sigma1_k + kappa*sigma2_k(u), shape (K, *grid.shape)."""
        out = np.empty((self.n_modes, *u.shape))
        for k in range(self.n_modes):
            out[k] = self.sigma1[k] + self.kappa.values * self.sigma2_mode(t, k, u)
        return out

    def sigma1_sq(self) -> float:
        """sum_k ||sigma1_k||_L2^2 at any time (modes are time-constant)."""
        return float(self.grid.cell_volume * np.sum(self.sigma1**2))


def noise_apply_array(noise: NoiseSpec, t: float, u: np.ndarray, w: np.ndarray) -> np.ndarray:
    """sum_k sigma_k(t, x, u) * w_k for raw arrays; leading batch axes allowed.

    ``u`` has shape (*batch, *grid.shape) and ``w`` shape (*batch, K); the
    result matches ``u``. This is the hot path shared by the deterministic and
    stochastic steppers, so built-in (separable) forms avoid materializing the
    K mode fields.
    """
    grid = noise.grid
    dim = grid.dim
    batch = u.shape[: u.ndim - dim]
    if w.shape != (*batch, noise.n_modes):
        raise GridMismatchError(f"mode-weight shape {w.shape} does not match batch {batch}")
    add = np.tensordot(w, noise.sigma1, axes=([-1], [0]))
    if noise.separable:
        c = np.sqrt(noise.coeff_gamma)
        scale = (w @ c).reshape(*batch, *([1] * dim))
        return add + noise.kappa.values * noise.profile(u) * scale
    coords = grid.coords()
    out = add
    for k in range(noise.n_modes):
        wk = w[..., k].reshape(*batch, *([1] * dim))
        out = out + noise.kappa.values * noise.sigma2_callback(t, coords, u, k) * wk
    return out


def sigma_apply(noise: NoiseSpec, t: float, u: Field, v: np.ndarray) -> Field:
    """Apply sigma(t, u) to a mode-coefficient vector: sum_k sigma_k(u)*v_k."""
    v = np.asarray(v, dtype=float)
    if v.shape != (noise.n_modes,):
        raise GridMismatchError(f"expected {noise.n_modes} mode coefficients, got {v.shape}")
    return Field(u.grid, noise_apply_array(noise, t, u.values, v))


def hs_norm_sq(noise: NoiseSpec, t: float, u: Field) -> float:
    """Squared Hilbert-Schmidt norm sum_k ||sigma1_k + kappa*sigma2_k(u)||_L2^2."""
    modes = noise.mode_values(t, u.values)
    return float(noise.grid.cell_volume * np.sum(modes**2))


# -- derived growth/Lipschitz constants -------------------------------------


def _kappa_norm(noise: NoiseSpec, r: float) -> float:
    return lp_norm(noise.kappa, r)


def growth_constant(noise: NoiseSpec, p: float, eps: float) -> float:
    """Constant C(eps) in the split HS bound
    ||sigma(t,u)||_HS^2 <= eps*||u||_Lp^p + 2*sum_k||sigma1_k||^2 + C(eps).

    Derived from Holder (exponents p/q, p/(p-q)) and Young's inequality; the
    kappa norm involved is ||kappa||_{L^{2p/(p-q)}}.
    """
    if eps <= 0:
        raise DomainError("eps must be positive")
    q = noise.q
    if not (q < p):
        raise ConditionError("growth split requires q < p")
    base = 2.0 * float(np.sum(noise.coeff_beta)) * _kappa_norm(noise, 2.0) ** 2
    a = 2.0 * float(np.sum(noise.coeff_gamma)) * _kappa_norm(noise, 2.0 * p / (p - q)) ** 2
    if a == 0.0:
        return base
    young = (1.0 - q / p) * (q / (p * eps)) ** (q / (p - q)) * a ** (p / (p - q))
    return base + young


def _boundary_exponent(p: float, q: float) -> float:
    """Kappa-norm exponent 4p/(p-2(q-1)); +inf at the boundary q = 1+p/2."""
    denom = p - 2.0 * (q - 1.0)
    if denom <= 1e-12:
        return np.inf
    return 4.0 * p / denom


def linear_growth_constants(noise: NoiseSpec, p: float) -> tuple[float, float]:
    """Constants (base, c) in the alternative HS growth bound
    ||sigma(t,u)||_HS^2 <= 2*sum||sigma1_k||^2 + base + c*(1+||u||_Lp^(p/2))*||u||_L2.

    base = 2*sum beta_k*||kappa||_L2^2;  c = 2*sum gamma_k*||kappa||_X^2 with
    X = 4p/(p-2(q-1)) (the L-inf limit at the boundary q = 1+p/2).
    """
    base = 2.0 * float(np.sum(noise.coeff_beta)) * _kappa_norm(noise, 2.0) ** 2
    c = 2.0 * float(np.sum(noise.coeff_gamma)) * _kappa_norm(noise, _boundary_exponent(p, noise.q)) ** 2
    return base, c


def lipschitz_constant(noise: NoiseSpec, p: float) -> float:
    """Constant C in the HS Lipschitz bound
    ||sigma(t,u1)-sigma(t,u2)||_HS^2 <= C*(1+||u1||_Lp^(p/2)+||u2||_Lp^(p/2))*||u1-u2||_L2.
    """
    q = noise.q
    s_alpha = float(np.sum(noise.coeff_alpha))
    term1 = (2.0 / p) * s_alpha * _kappa_norm(noise, 4.0 * p / (p - 2.0)) ** 2 * max(p - 2.0, 1.0)
    denom = p - 2.0 * (q - 1.0)
    factor = max(denom / (q - 1.0), 1.0) if denom > 1e-12 else 1.0
    term2 = (
        (4.0 * (q - 1.0) / p)
        * s_alpha
        * _kappa_norm(noise, _boundary_exponent(p, q)) ** 2
        * factor
    )
    return term1 + term2


# ---------------------------------------------------------------------------
# forcing


@dataclass(frozen=True)
class ForcingSpec:
    """Deterministic forcing g(t); built-ins are time-constant.

    ``zero`` and ``bump`` (compact support, mollifier profile) cover the
    standard experiments; ``custom-callback`` takes ``g(t) -> ndarray``.
    """

    grid: GridSpec
    form: str = "zero"
    amplitude: float = 0.0
    radius: float = 0.5
    callback: Optional[Callable] = None
    _values: np.ndarray = dc_field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.form not in FORCING_FORMS:
            raise ConditionError(f"unknown forcing form {self.form!r}; expected one of {FORCING_FORMS}")
        if self.form == "custom-callback":
            if self.callback is None:
                raise ConditionError("custom-callback forcing requires a callback")
            object.__setattr__(self, "_values", None)
            return
        if self.form == "zero":
            vals = np.zeros(self.grid.shape)
        else:
            vals = smooth_bump(self.grid, radius=self.radius, amplitude=self.amplitude).values.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "_values", vals)

    def value(self, t: float) -> np.ndarray:
        if self._values is not None:
            return self._values
        return np.asarray(self.callback(t), dtype=float)

    def sq_integral(self, horizon: float, n_quad: int = 128) -> float:
        """int_0^T ||g(t)||_L2^2 dt (exact for the time-constant built-ins)."""
        w = self.grid.cell_volume
        if self._values is not None:
            return float(horizon * w * np.sum(self._values**2))
        ts = np.linspace(0.0, horizon, n_quad + 1)
        vals = np.array([w * np.sum(self.value(t) ** 2) for t in ts])
        return float(np.trapezoid(vals, ts))


# ---------------------------------------------------------------------------
# assembled model


@dataclass(frozen=True)
class ModelSpec:
    """Grid + drift + noise + forcing, cross-validated at construction."""

    grid: GridSpec
    drift: DriftSpec
    noise: NoiseSpec
    forcing: ForcingSpec

    def __post_init__(self) -> None:
        if self.noise.grid != self.grid or self.forcing.grid != self.grid:
            raise GridMismatchError("noise/forcing grids do not match the model grid")
        hi = 1.0 + self.drift.p / 2.0
        if not (2.0 <= self.noise.q <= hi + 1e-12):
            raise ConditionError(
                f"noise exponent q = {self.noise.q} outside [2, 1 + p/2] = [2, {hi}]"
            )


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class SamplingPlan:
    """How densely to sample the structural conditions.

    ``n_samples`` scalar points per condition (log-spaced magnitudes up to
    ``u_max``, both signs, zero included); ``n_fields`` random smooth fields
    for the integrated (Hilbert-Schmidt) conditions; everything seeded.
    """

    n_samples: int = 20000
    u_max: float = 1.0e3
    t_max: float = 1.0
    n_fields: int = 48
    field_amplitude_max: float = 20.0
    seed: int = 1234

    def __post_init__(self) -> None:
        if self.n_samples < 100:
            raise DomainError("n_samples must be at least 100")
        if self.u_max <= 0 or self.t_max < 0:
            raise DomainError("u_max must be positive and t_max non-negative")


@dataclass
class ConditionCheck:
    name: str
    margin: float
    passed: bool
    samples: int
    witness: Optional[dict] = None

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "margin": self.margin,
            "passed": bool(self.passed),
            "samples": self.samples,
            "witness": self.witness,
        }


@dataclass
class ValidationReport:
    checks: list
    constants: dict
    certificates: dict

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str) -> ConditionCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def as_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checks": [c.as_dict() for c in self.checks],
            "constants": self.constants,
            "certificates": self.certificates,
        }


MARGIN_TOL = 1e-9


def _scalar_samples(plan: SamplingPlan, rng: np.random.Generator) -> np.ndarray:
    n_log = plan.n_samples // 2
    mags = np.geomspace(1e-8, plan.u_max, n_log)
    uniform = rng.uniform(-plan.u_max ** 0.5, plan.u_max ** 0.5, plan.n_samples - n_log - 1)
    u = np.concatenate([mags, -mags, uniform, [0.0]])
    rng.shuffle(u)
    return u


def _normalized_min(margin: np.ndarray, scale: np.ndarray):
    """Minimum of margin / max(1, scale) and its index."""
    norm = margin / np.maximum(1.0, scale)
    idx = int(np.argmin(norm))
    return float(norm[idx]), idx


def validate_drift(drift: DriftSpec, plan: SamplingPlan, grid: Optional[GridSpec] = None) -> ValidationReport:
    """Sample the three drift conditions; bisection certifies lambda1, lambda2.

    Margins are normalized by the local term magnitude (see module docstring);
    the pass threshold is -1e-9.
    """
    rng = np.random.default_rng(plan.seed)
    u = _scalar_samples(plan, rng)
    u2 = rng.permutation(u)
    ts = np.linspace(0.0, plan.t_max, 5)
    coords = grid.coords() if grid is not None else [np.zeros(1)]
    p = drift.p

    checks = []

    def eval_f(t, uu):
        return np.asarray(drift.value(t, coords, uu), dtype=float)

    # coercivity and growth, tracked across sampled times
    worst = None
    worst_growth = None
    for t in ts:
        f = eval_f(t, u)
        coercive = f * u - drift.lambda1 * np.abs(u) ** p + drift.psi1_bound
        scale = np.abs(f * u) + drift.lambda1 * np.abs(u) ** p + drift.psi1_bound
        m, i = _normalized_min(coercive, scale)
        if worst is None or m < worst[0]:
            worst = (m, {"t": float(t), "u": float(u[i])})
        gr = drift.psi2_bound * np.abs(u) ** (p - 1.0) + drift.psi3_bound - np.abs(f)
        m2, i2 = _normalized_min(gr, np.abs(f) + drift.psi2_bound * np.abs(u) ** (p - 1.0))
        if worst_growth is None or m2 < worst_growth[0]:
            worst_growth = (m2, {"t": float(t), "u": float(u[i2])})
    checks.append(
        ConditionCheck("drift-coercivity", worst[0], worst[0] >= -MARGIN_TOL, len(u) * len(ts), worst[1])
    )
    checks.append(
        ConditionCheck(
            "drift-growth", worst_growth[0], worst_growth[0] >= -MARGIN_TOL, len(u) * len(ts), worst_growth[1]
        )
    )

    # monotonicity on pairs
    worst_mono = None
    for t in ts:
        f1, f2 = eval_f(t, u), eval_f(t, u2)
        du = u - u2
        lhs = (f1 - f2) * du
        pen = (signed_power(u, p - 1.0) - signed_power(u2, p - 1.0)) * du
        margin = lhs - drift.lambda2 * pen + drift.psi4_bound * du**2
        scale = np.abs(lhs) + drift.lambda2 * np.abs(pen) + drift.psi4_bound * du**2
        m, i = _normalized_min(margin, scale)
        if worst_mono is None or m < worst_mono[0]:
            worst_mono = (m, {"t": float(t), "u1": float(u[i]), "u2": float(u2[i])})
    checks.append(
        ConditionCheck("drift-monotonicity", worst_mono[0], worst_mono[0] >= -MARGIN_TOL, len(u) * len(ts), worst_mono[1])
    )

    # certificates by bisection (largest constants passing at the declared psi)
    def coercivity_ok(lam: float) -> bool:
        for t in ts:
            f = eval_f(t, u)
            margin = f * u - lam * np.abs(u) ** p + drift.psi1_bound
            scale = np.abs(f * u) + lam * np.abs(u) ** p + drift.psi1_bound
            if _normalized_min(margin, scale)[0] < -MARGIN_TOL:
                return False
        return True

    def monotonicity_ok(lam: float) -> bool:
        for t in ts:
            f1, f2 = eval_f(t, u), eval_f(t, u2)
            du = u - u2
            lhs = (f1 - f2) * du
            pen = (signed_power(u, p - 1.0) - signed_power(u2, p - 1.0)) * du
            margin = lhs - lam * pen + drift.psi4_bound * du**2
            scale = np.abs(lhs) + lam * np.abs(pen) + drift.psi4_bound * du**2
            if _normalized_min(margin, scale)[0] < -MARGIN_TOL:
                return False
        return True

    def bisect_largest(ok, hi: float = 8.0) -> float:
        if not ok(1e-12):
            return 0.0
        lo = 0.0
        while ok(hi) and hi < 1e6:
            hi *= 2.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if ok(mid):
                lo = mid
            else:
                hi = mid
        return lo

    certificates = {
        "lambda1": bisect_largest(coercivity_ok),
        "lambda2": bisect_largest(monotonicity_ok),
    }
    return ValidationReport(checks=checks, constants={}, certificates=certificates)


def _synth_fields(grid: GridSpec, plan: SamplingPlan, rng: np.random.Generator) -> list[np.ndarray]:
    """Random smooth fields spanning amplitudes: low-mode Fourier sums,
    bump multiples, and constants."""
    out = []
    x = grid.coords()
    amps = np.geomspace(0.05, plan.field_amplitude_max, max(plan.n_fields // 3, 2))
    for j in range(plan.n_fields):
        a = amps[j % len(amps)]
        kind = j % 3
        if kind == 0:
            vals = np.zeros(grid.shape)
            for m in range(1, 5):
                coef = rng.standard_normal(2)
                phase = np.pi * m * x[0] / grid.half_length
                vals += coef[0] * np.cos(phase) + coef[1] * np.sin(phase)
            vals *= a / max(np.max(np.abs(vals)), 1e-12)
        elif kind == 1:
            vals = smooth_bump(grid, radius=grid.half_length / 2, amplitude=a).values * np.sign(
                rng.standard_normal()
            )
        else:
            vals = np.full(grid.shape, a * np.sign(rng.standard_normal()))
        out.append(vals)
    return out


def validate_noise(noise: NoiseSpec, p: float, plan: SamplingPlan) -> ValidationReport:
    """Sample the per-mode Lipschitz/growth conditions and the derived
    Hilbert-Schmidt bounds; record the computed constants.

    Checks: per-mode local Lipschitz ("noise-lipschitz"), per-mode growth
    ("noise-growth"), the split HS bound at eps in {0.1, 1} ("hs-split-*"),
    the linear-in-||u|| HS growth bound ("hs-linear"), the HS Lipschitz bound
    on field pairs ("hs-lipschitz"), coefficient summability ("summability"),
    and the kappa support rule ("kappa-support").
    """
    rng = np.random.default_rng(plan.seed + 1)
    u = _scalar_samples(plan, rng)
    u2 = rng.permutation(u)
    q = noise.q
    grid = noise.grid
    coords = grid.coords()
    ts = np.linspace(0.0, plan.t_max, 3)
    checks = []

    def s2(t, k, uu):
        return noise.sigma2_mode(t, k, uu)

    # per-mode scalar conditions
    worst_lip, worst_gr = None, None
    for t in ts:
        for k in range(noise.n_modes):
            a_k, b_k, g_k = noise.coeff_alpha[k], noise.coeff_beta[k], noise.coeff_gamma[k]
            s_1, s_2 = s2(t, k, u), s2(t, k, u2)
            lip_rhs = a_k * (1.0 + np.abs(u) ** (q - 2.0) + np.abs(u2) ** (q - 2.0)) * (u - u2) ** 2
            lip_lhs = (s_1 - s_2) ** 2
            m, i = _normalized_min(lip_rhs - lip_lhs, lip_rhs + lip_lhs)
            if worst_lip is None or m < worst_lip[0]:
                worst_lip = (m, {"t": float(t), "mode": k, "u1": float(u[i]), "u2": float(u2[i])})
            gr_rhs = b_k + g_k * np.abs(u) ** q
            gr_lhs = s_1**2
            m2, i2 = _normalized_min(gr_rhs - gr_lhs, gr_rhs + gr_lhs)
            if worst_gr is None or m2 < worst_gr[0]:
                worst_gr = (m2, {"t": float(t), "mode": k, "u": float(u[i2])})
    n_pts = len(u) * len(ts) * noise.n_modes
    checks.append(ConditionCheck("noise-lipschitz", worst_lip[0], worst_lip[0] >= -MARGIN_TOL, n_pts, worst_lip[1]))
    checks.append(ConditionCheck("noise-growth", worst_gr[0], worst_gr[0] >= -MARGIN_TOL, n_pts, worst_gr[1]))

    # integrated Hilbert-Schmidt bounds on synthesized fields
    fields = _synth_fields(grid, plan, rng)
    w = grid.cell_volume
    sig1_sq = noise.sigma1_sq()
    constants = {}
    eps_list = (0.1, 1.0)
    for eps in eps_list:
        constants[f"growth_constant_eps_{eps}"] = growth_constant(noise, p, eps)
    base_lin, c_lin = linear_growth_constants(noise, p)
    constants["linear_growth_base"] = base_lin
    constants["linear_growth_c"] = c_lin
    c_lip = lipschitz_constant(noise, p)
    constants["hs_lipschitz_c"] = c_lip

    def field_lp(vals, r):
        return (w * np.sum(np.abs(vals) ** r)) ** (1.0 / r)

    worst_split = {eps: None for eps in eps_list}
    worst_lin = None
    worst_hlip = None
    t0 = 0.0
    for j, vals in enumerate(fields):
        hs = float(w * np.sum(noise.mode_values(t0, vals) ** 2))
        lp_p = w * np.sum(np.abs(vals) ** p)
        l2 = np.sqrt(w * np.sum(vals**2))
        for eps in eps_list:
            bound = eps * lp_p + 2.0 * sig1_sq + constants[f"growth_constant_eps_{eps}"]
            m = (bound - hs) / max(1.0, bound + hs)
            if worst_split[eps] is None or m < worst_split[eps][0]:
                worst_split[eps] = (m, {"field": j})
        bound = 2.0 * sig1_sq + base_lin + c_lin * (1.0 + lp_p ** 0.5) * l2
        m = (bound - hs) / max(1.0, bound + hs)
        if worst_lin is None or m < worst_lin[0]:
            worst_lin = (m, {"field": j})
        other = fields[(j + 1) % len(fields)]
        diff_modes = noise.mode_values(t0, vals) - noise.mode_values(t0, other)
        hs_diff = float(w * np.sum(diff_modes**2))
        lp_other = w * np.sum(np.abs(other) ** p)
        dl2 = np.sqrt(w * np.sum((vals - other) ** 2))
        bound = c_lip * (1.0 + lp_p ** 0.5 + lp_other ** 0.5) * dl2
        m = (bound - hs_diff) / max(1.0, bound + hs_diff)
        if worst_hlip is None or m < worst_hlip[0]:
            worst_hlip = (m, {"fields": (j, (j + 1) % len(fields))})
    for eps in eps_list:
        m, wit = worst_split[eps]
        checks.append(ConditionCheck(f"hs-split-eps-{eps}", m, m >= -MARGIN_TOL, len(fields), wit))
    checks.append(ConditionCheck("hs-linear", worst_lin[0], worst_lin[0] >= -MARGIN_TOL, len(fields), worst_lin[1]))
    checks.append(ConditionCheck("hs-lipschitz", worst_hlip[0], worst_hlip[0] >= -MARGIN_TOL, len(fields), worst_hlip[1]))

    # summability of the declared family (finite + declared tail)
    total = float(np.sum(noise.coeff_alpha + noise.coeff_beta + noise.coeff_gamma)) + noise.tail_bound
    checks.append(
        ConditionCheck("summability", 1.0 if np.isfinite(total) else -1.0, bool(np.isfinite(total)), noise.n_modes)
    )
    constants["coefficient_sum"] = total

    # kappa support rule: supported within [-L/2, L/2]
    r = grid.radial()
    outside = float(w * np.sum(noise.kappa.values[r > grid.half_length / 2.0] ** 2))
    checks.append(
        ConditionCheck(
            "kappa-support",
            -outside,
            outside <= 1e-14,
            grid.n_total,
            None if outside <= 1e-14 else {"mass_outside": outside},
        )
    )

    q_hi = 1.0 + p / 2.0
    checks.append(
        ConditionCheck("exponent-range", float(min(q - 2.0, q_hi - q)), 2.0 - MARGIN_TOL <= q <= q_hi + 1e-12, 1)
    )
    return ValidationReport(checks=checks, constants=constants, certificates={})
