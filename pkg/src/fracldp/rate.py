"""Action functional, rate minimization, level sets, and Hausdorff geometry.

The rate of a path phi from u0 is the cheapest control steering the
deterministic solver along it,

    I(phi) = inf { (1/2) int_0^T sum_k v_k(t)^2 dt : u_v = phi },

with inf over the empty set = +infinity. Over the discretized control matrix
the infimum becomes a finite-dimensional penalty problem

    J_mu(v) = action(v) + mu * dist^2(u_v, target),

solved by L-BFGS with gradients from the adjoint of the discrete forward
scheme and a doubling continuation on mu. Returned values are upper bounds on
the discretized rate; non-convergence of the residual across continuations is
the +infinity branch surfacing.

The forward map here is the deterministic solver itself (same code path), so
rate results compose exactly with the skeleton and Monte Carlo modules.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize

from .grids import DomainError, Field, GridMismatchError, array_l2_sq
from .models import ModelSpec
from .skeleton import (
    BlowUpError,
    Control,
    StepKernel,
    TimeGrid,
    path_distance,
    solve_skeleton,
    step_once,
)


class OptimizationError(RuntimeError):
    """The penalty objective diverged (non-finite values or runaway growth)."""


class DependencyError(RuntimeError):
    """A required upstream computation (rate value, level set) is missing."""


def action(v: Control) -> float:
    """(1/2) sum_n |v_n|^2 dt — the quadratic control cost; 0 iff v = 0."""
    return 0.5 * v.l2_sq()


def g0_map(model: ModelSpec, u0: Field, v: Control, tg: Optional[TimeGrid] = None) -> np.ndarray:
    """Trajectory of the deterministic solution map at control v.

    Same code path as solve_skeleton (definitional). The abstract solution map
    is 0 on driving inputs that are not integrals of square-integrable
    controls; piecewise-constant controls always are, so that branch is
    unreachable in this representation.
    """
    return solve_skeleton(model, u0, v, tg).trajectory


@dataclass(frozen=True)
class OptimizerSettings:
    max_iters: int = 400
    gradient_tol: float = 1e-9
    penalty0: float = 10.0
    max_continuations: int = 16
    residual_tol: float = 1e-4

    def __post_init__(self) -> None:
        if self.max_iters < 1 or self.max_continuations < 1:
            raise DomainError("iteration budgets must be positive")
        if self.penalty0 <= 0 or self.residual_tol <= 0 or self.gradient_tol <= 0:
            raise DomainError("tolerances and the initial penalty must be positive")


@dataclass
class RateQuery:
    """Target specification for rate evaluation: a full path or an endpoint."""

    u0: Field
    target_path: Optional[np.ndarray] = None
    target_endpoint: Optional[Field] = None
    tau_end: float = 1e-3
    settings: OptimizerSettings = dc_field(default_factory=OptimizerSettings)

    def __post_init__(self) -> None:
        if (self.target_path is None) == (self.target_endpoint is None):
            raise DomainError("exactly one of target_path / target_endpoint is required")
        if self.tau_end <= 0:
            raise DomainError("tau_end must be positive")

    @property
    def mode(self) -> str:
        return "path" if self.target_path is not None else "endpoint"


@dataclass
class RateResult:
    value: float
    minimizer: Optional[Control]
    residual: float
    converged: bool
    iterations: int
    penalty: float

    def as_dict(self) -> dict:
        return {
            "value": self.value,
            "residual": self.residual,
            "converged": bool(self.converged),
            "iterations": self.iterations,
            "penalty": self.penalty,
            "action": None if self.minimizer is None else action(self.minimizer),
        }


_RETREAT = 1.0e12  # objective value handed to the line search when a probe blows up


def _forward_states(model: ModelSpec, kernel: StepKernel, u0: Field, weights: np.ndarray) -> np.ndarray:
    """All states u_0..u_N of the step recursion (adjoint needs the full sweep)."""
    tg = kernel.timegrid
    states = np.empty((tg.n_steps + 1, *model.grid.shape))
    states[0] = u0.values
    u = u0.values
    ts = tg.times()
    for n in range(tg.n_steps):
        u, _ = step_once(kernel, ts[n], u, weights[n])
        if not np.all(np.isfinite(u)):
            raise BlowUpError(n + 1, float("inf"))
        states[n + 1] = u
    return states


def _apply_propagator(kernel: StepKernel, lam: np.ndarray) -> np.ndarray:
    """The integrating-factor operator; real-symmetric, hence self-adjoint."""
    axes = kernel.spatial_axes
    return np.fft.ifftn(np.fft.fftn(lam, axes=axes) * kernel.propagator, axes=axes).real


def _mode_derivs(model: ModelSpec, t: float, u: np.ndarray) -> Optional[np.ndarray]:
    """d sigma_k / du stacked over k, or None when unavailable (callback case)."""
    noise = model.noise
    out = np.empty((noise.n_modes, *u.shape))
    for k in range(noise.n_modes):
        d = noise.sigma2_mode_deriv(t, k, u)
        if d is None:
            return None
        out[k] = noise.kappa.values * np.asarray(d)
    return out


def _has_exact_gradients(model: ModelSpec) -> bool:
    probe = np.zeros(model.grid.shape)
    if model.drift.deriv(0.0, tuple(model.grid.coords()), probe) is None:
        return False
    return _mode_derivs(model, 0.0, probe) is not None


def _dist_sq_and_partials(grid, tg, states, target_path, target_endpoint):
    """Penalty distance squared and its plain partials d(dist^2)/d(states).

    Path targets use the squared time-RMS of the L2 spatial norm; endpoint
    targets the squared L2 norm at the horizon. Both are smooth in v.
    """
    if target_path is not None:
        c = 1.0 / (tg.n_steps + 1)
        diffs = states - target_path
        dist_sq = c * float(grid.cell_volume * np.sum(diffs**2))
        dpen = (2.0 * c * grid.cell_volume) * diffs
    else:
        diff_end = states[-1] - target_endpoint
        dist_sq = float(grid.cell_volume * np.sum(diff_end**2))
        dpen = np.zeros_like(states)
        dpen[-1] = 2.0 * grid.cell_volume * diff_end
    return dist_sq, dpen


def _adjoint_grad(model, kernel, states, weights, dpen) -> np.ndarray:
    """Backward costate sweep for d(target term)/dv given its state partials.

    The forward step is u_{n+1} = E[u_n + dt(g - f/(1+dt|f|)) + sigma(u_n) w_n]
    with E the (self-adjoint) integrating factor, so the costate recursion is

        lam_n = J_n * (E lam_{n+1}) + dpen_n,
        J_n   = 1 - dt f'(u_n)/(1+dt|f(u_n)|)^2 + sum_k w_nk kappa sigma2_k'(u_n),

    and the returned (n_steps, K) array is dt <sigma_k(u_n), E lam_{n+1}>_grid
    — the target term's gradient in v (the action term adds dt v separately).
    """
    tg = kernel.timegrid
    dt = tg.dt
    ts = tg.times()
    coords = kernel.coords
    spatial = tuple(range(model.grid.dim))
    grad = np.empty((tg.n_steps, model.noise.n_modes))
    lam = dpen[tg.n_steps]
    for n in range(tg.n_steps - 1, -1, -1):
        u_n = states[n]
        e_lam = _apply_propagator(kernel, lam)
        sig = model.noise.mode_values(ts[n], u_n)
        grad[n] = dt * np.tensordot(sig, e_lam, axes=(tuple(a + 1 for a in spatial), spatial))
        f = np.asarray(model.drift.value(ts[n], coords, u_n), dtype=float)
        fprime = np.asarray(model.drift.deriv(ts[n], coords, u_n), dtype=float)
        jac = 1.0 - dt * fprime / (1.0 + dt * np.abs(f)) ** 2
        jac = jac + np.tensordot(weights[n], _mode_derivs(model, ts[n], u_n), axes=(0, 0))
        lam = jac * e_lam + dpen[n]
    return grad


def _objective_and_grad(model, kernel, u0, flat_v, mu, target_path, target_endpoint):
    """J_mu(v) = action + mu dist^2 and dJ/dv via one forward/adjoint sweep."""
    tg = kernel.timegrid
    dt = tg.dt
    n_modes = model.noise.n_modes
    v = flat_v.reshape(tg.n_steps, n_modes)
    weights = dt * v
    states = _forward_states(model, kernel, u0, weights)

    dist_sq, dpen = _dist_sq_and_partials(model.grid, tg, states, target_path, target_endpoint)
    act = 0.5 * dt * float(np.sum(v**2))
    value = act + mu * dist_sq
    grad_v = dt * v + _adjoint_grad(model, kernel, states, weights, mu * dpen)
    return value, grad_v.reshape(-1), float(np.sqrt(dist_sq))


def _objective_fd(model, kernel, u0, flat_v, mu, target_path, target_endpoint):
    """Value + residual only (no adjoint); also backs numeric gradients."""
    tg = kernel.timegrid
    v = flat_v.reshape(tg.n_steps, model.noise.n_modes)
    states = _forward_states(model, kernel, u0, tg.dt * v)
    dist_sq, _ = _dist_sq_and_partials(model.grid, tg, states, target_path, target_endpoint)
    act = 0.5 * tg.dt * float(np.sum(v**2))
    return act + mu * dist_sq, float(np.sqrt(dist_sq))


def _residual_of(model, kernel, u0, x, target_path, target_endpoint) -> float:
    try:
        _, res = _objective_fd(model, kernel, u0, x, 1.0, target_path, target_endpoint)
    except BlowUpError:
        return float("inf")
    return res


def _stepwise_least_squares(model: ModelSpec, kernel: StepKernel, target_path: np.ndarray) -> np.ndarray:
    """Minimum-norm control matching a path target step by step.

    A path constraint pins every intermediate state, so the transition at step
    n only involves that step's weights: solve the K-column least squares
    || E(sigma(phi_n)) w - (phi_{n+1} - E base_n) || per step. For targets in
    the range of the forward map this is exact (and action-minimal among exact
    matches); otherwise it is the greedy tracker — either way a warm start the
    penalty continuation then polishes.
    """
    tg = kernel.timegrid
    dt = tg.dt
    ts = tg.times()
    coords = kernel.coords
    v = np.empty((tg.n_steps, model.noise.n_modes))
    for n in range(tg.n_steps):
        phi_n = target_path[n]
        f = np.asarray(model.drift.value(ts[n], coords, phi_n), dtype=float)
        base = phi_n + dt * (model.forcing.value(ts[n]) - f / (1.0 + dt * np.abs(f)))
        sig = model.noise.mode_values(ts[n], phi_n)
        cols = np.stack([_apply_propagator(kernel, s).ravel() for s in sig], axis=1)
        rhs = (target_path[n + 1] - _apply_propagator(kernel, base)).ravel()
        w, *_ = np.linalg.lstsq(cols, rhs, rcond=None)
        v[n] = w / dt
    return v


def minimize_rate(
    model: ModelSpec,
    query: RateQuery,
    tg: TimeGrid,
    warm_start: Optional[Control] = None,
) -> RateResult:
    """Penalty-continuation minimization of the discretized rate.

    Doubles the penalty until the residual meets tolerance or the continuation
    budget runs out. The result's ``value`` is an upper bound on the
    discretized rate when ``converged``; otherwise value is +inf with the best
    residual reached — the empty-infimum branch. Endpoint queries use
    ``query.tau_end`` as the terminal matching tolerance, path queries
    ``settings.residual_tol``.
    """
    grid = model.grid
    if query.u0.grid != grid:
        raise GridMismatchError("query initial datum grid does not match the model")
    target_path = None
    target_endpoint = None
    if query.mode == "path":
        target_path = np.asarray(query.target_path, dtype=float)
        if target_path.shape != (tg.n_steps + 1, *grid.shape):
            raise GridMismatchError(
                f"target path must have shape {(tg.n_steps + 1, *grid.shape)}, got {target_path.shape}"
            )
        start_gap = float(np.sqrt(array_l2_sq(grid, target_path[0] - query.u0.values)))
        if start_gap > 1e-9:
            raise DomainError(f"target path starts {start_gap:.3e} away from u0 (limit 1e-9)")
        tol = query.settings.residual_tol
    else:
        if query.target_endpoint.grid != grid:
            raise GridMismatchError("endpoint target grid does not match the model")
        target_endpoint = query.target_endpoint.values
        tol = query.tau_end

    st = query.settings
    kernel = StepKernel.build(model, tg)
    n_modes = model.noise.n_modes
    dim = tg.n_steps * n_modes
    if warm_start is not None and warm_start.values.shape != (tg.n_steps, n_modes):
        raise GridMismatchError("warm start control has the wrong shape")
    if warm_start is not None:
        x = warm_start.values.reshape(-1).copy()
    elif target_path is not None:
        # reachable paths are solved outright by the stepwise least squares;
        # the continuation below then only has to certify (or polish) it
        x = _stepwise_least_squares(model, kernel, target_path).reshape(-1)
        if not np.all(np.isfinite(x)) or _residual_of(
            model, kernel, query.u0, x, target_path, target_endpoint
        ) > _residual_of(model, kernel, query.u0, np.zeros(dim), target_path, target_endpoint):
            x = np.zeros(dim)
    else:
        x = np.zeros(dim)

    exact = _has_exact_gradients(model)
    total_iters = 0
    # seed with the starting iterate: a feasible warm start (the stepwise
    # solve, typically) must never be lost to a low-penalty wander
    mu = st.penalty0
    best = (_residual_of(model, kernel, query.u0, x, target_path, target_endpoint), x.copy(), mu)
    stall = 0
    for _ in range(st.max_continuations if best[0] > tol else 0):
        if exact:
            def fun(z, mu=mu):
                try:
                    val, grad, _ = _objective_and_grad(
                        model, kernel, query.u0, z, mu, target_path, target_endpoint
                    )
                except BlowUpError:
                    # hand the line search a steep retreat toward smaller controls
                    return _RETREAT * (1.0 + float(z @ z)), 2.0 * _RETREAT * z
                if not np.isfinite(val):
                    raise OptimizationError("penalty objective diverged to non-finite values")
                return val, grad

            sol = optimize.minimize(
                fun, x, jac=True, method="L-BFGS-B",
                options={"maxiter": st.max_iters, "gtol": st.gradient_tol, "ftol": 1e-15},
            )
        else:
            def fun(z, mu=mu):
                try:
                    val, _ = _objective_fd(
                        model, kernel, query.u0, z, mu, target_path, target_endpoint
                    )
                except BlowUpError:
                    return _RETREAT * (1.0 + float(z @ z))
                if not np.isfinite(val):
                    raise OptimizationError("penalty objective diverged to non-finite values")
                return val

            sol = optimize.minimize(
                fun, x, method="L-BFGS-B",
                options={"maxiter": st.max_iters, "gtol": st.gradient_tol, "ftol": 1e-15},
            )
        x = sol.x
        total_iters += int(sol.nit)
        res = _residual_of(model, kernel, query.u0, x, target_path, target_endpoint)
        if res < best[0]:
            stall = 0 if res < 0.99 * best[0] else stall + 1
            best = (res, x.copy(), mu)
        else:
            stall += 1
        if res <= tol or stall >= 3:  # three flat continuations: infeasible regime
            break
        mu *= 2.0

    res, x, mu = best
    v = Control(tg, x.reshape(tg.n_steps, n_modes))
    if res <= tol:
        return RateResult(
            value=action(v), minimizer=v, residual=res,
            converged=True, iterations=total_iters, penalty=mu,
        )
    return RateResult(
        value=float("inf"), minimizer=None, residual=res,
        converged=False, iterations=total_iters, penalty=mu,
    )


def check_gradient(
    model: ModelSpec, u0: Field, tg: TimeGrid, seed: int = 0, scale: float = 0.3
) -> float:
    """Max relative error of the adjoint gradient vs central differences.

    Cross-validation utility: the optimizer trusts the adjoint for built-in
    model forms, and this compares it against the finite-difference fallback
    on a random control.
    """
    rng = np.random.default_rng(seed)
    kernel = StepKernel.build(model, tg)
    v = scale * rng.standard_normal(tg.n_steps * model.noise.n_modes)
    target = g0_map(model, u0, Control.zero(tg, model.noise.n_modes))
    _, grad, _ = _objective_and_grad(model, kernel, u0, v, 5.0, target, None)
    num = np.empty_like(v)
    h = 1e-6
    for i in range(v.size):
        vp = v.copy()
        vp[i] += h
        vm = v.copy()
        vm[i] -= h
        fp, _ = _objective_fd(model, kernel, u0, vp, 5.0, target, None)
        fm, _ = _objective_fd(model, kernel, u0, vm, 5.0, target, None)
        num[i] = (fp - fm) / (2 * h)
    denom = np.maximum(np.abs(num), 1e-8)
    return float(np.max(np.abs(grad - num) / denom))


# ---------------------------------------------------------------------------
# level sets


@dataclass
class LevelSet:
    """Finite sample of the action sub-level set {I <= s} from one datum."""

    u0: Field
    s: float
    controls: list
    trajectories: list
    timegrid: TimeGrid

    def __post_init__(self) -> None:
        if not self.controls:
            raise DomainError("level set needs at least one member")
        for c in self.controls:
            if action(c) > self.s + 1e-9:
                raise DomainError("level set member exceeds the action budget")

    def __len__(self) -> int:
        return len(self.controls)


def sample_level_set(
    model: ModelSpec,
    u0: Field,
    s: float,
    n_samples: int,
    tg: TimeGrid,
    seed: int = 0,
    controls: Optional[Sequence[Control]] = None,
) -> LevelSet:
    """Uniform action-ball sample mapped through the solution operator.

    Controls are uniform on {action <= s}: in the flattened coefficient space
    the set is the ball of radius sqrt(2 s / dt), sampled as a Gaussian
    direction times radius * U^(1/d). s = 0 degenerates to the single zero
    control. Passing ``controls`` overrides sampling (paired experiments reuse
    one draw across data).
    """
    if s < 0:
        raise DomainError("level must be non-negative")
    if controls is None:
        if n_samples < 1:
            raise DomainError("n_samples must be at least 1")
        dim = tg.n_steps * model.noise.n_modes
        rng = np.random.Generator(
            np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=(7,)))
        )
        if s == 0.0:
            controls = [Control.zero(tg, model.noise.n_modes)]
        else:
            radius = np.sqrt(2.0 * s / tg.dt)
            controls = []
            for _ in range(n_samples):
                direction = rng.standard_normal(dim)
                direction /= np.linalg.norm(direction)
                r = radius * rng.uniform() ** (1.0 / dim)
                controls.append(
                    Control(tg, (r * direction).reshape(tg.n_steps, model.noise.n_modes))
                )
    trajectories = [solve_skeleton(model, u0, c, tg).trajectory for c in controls]
    return LevelSet(
        u0=u0, s=s, controls=list(controls), trajectories=trajectories, timegrid=tg
    )


def hausdorff_distance(a: LevelSet, b: LevelSet, p: float, which: str = "combined") -> float:
    """Symmetric Hausdorff distance between sampled trajectory sets."""
    if not a.trajectories or not b.trajectories:
        raise DomainError("Hausdorff distance needs non-empty sets")
    if a.timegrid != b.timegrid:
        raise GridMismatchError("level sets live on different time grids")
    grid = a.u0.grid
    tg = a.timegrid
    d = np.empty((len(a.trajectories), len(b.trajectories)))
    for i, ta in enumerate(a.trajectories):
        for j, tb in enumerate(b.trajectories):
            d[i, j] = path_distance(grid, tg, ta, tb, p, which=which)
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


@dataclass
class ContinuityCurve:
    """Level-set Hausdorff distance against initial-datum perturbation size."""

    deltas: list
    distances: list
    bound_values: list  # shape of the continuity bound, ||du0|| + ||du0||^(p/2)
    c1: float
    passed: bool

    def as_rows(self):
        for d, h, bv in zip(self.deltas, self.distances, self.bound_values):
            yield {"delta": d, "hausdorff": h, "bound_shape": bv}


def level_set_continuity_experiment(
    model: ModelSpec,
    u0: Field,
    perturbation: Field,
    deltas: Sequence[float],
    s: float,
    tg: TimeGrid,
    n_samples: int = 24,
    seed: int = 0,
) -> ContinuityCurve:
    """Hausdorff sensitivity of the level set to the initial datum.

    Uses one shared control sample for every perturbed set (paired sampling),
    so the measured distance isolates initial-data sensitivity: delta = 0
    gives exactly 0. Pass verdict: distances non-increasing as the deltas
    shrink (give them in decreasing order), and exactly 0 at delta = 0 when
    included. ``c1`` is the smallest constant with
    distance <= c1 * (||du0|| + ||du0||^(p/2)) across the sweep.
    """
    if any(d < 0 for d in deltas):
        raise DomainError("perturbation sizes must be non-negative")
    if list(deltas) != sorted(deltas, reverse=True):
        raise DomainError("deltas must be given in decreasing order")
    if perturbation.grid != model.grid:
        raise GridMismatchError("perturbation grid does not match the model")
    base = sample_level_set(model, u0, s, n_samples, tg, seed=seed)
    p = model.drift.p
    distances = []
    bound_values = []
    ratios = []
    for d in deltas:
        pert = Field(model.grid, u0.values + d * perturbation.values)
        shifted = sample_level_set(model, pert, s, n_samples, tg, controls=base.controls)
        h = hausdorff_distance(base, shifted, p)
        dn = float(np.sqrt(array_l2_sq(model.grid, d * perturbation.values)))
        shape = dn + dn ** (p / 2.0)
        distances.append(h)
        bound_values.append(shape)
        if shape > 0:
            ratios.append(h / shape)
    c1 = max(ratios) if ratios else 0.0
    monotone = all(
        distances[i + 1] <= distances[i] + 1e-12 for i in range(len(distances) - 1)
    )
    exact_zero = (0.0 not in list(deltas)) or distances[list(deltas).index(0.0)] == 0.0
    return ContinuityCurve(
        deltas=[float(d) for d in deltas],
        distances=distances,
        bound_values=bound_values,
        c1=c1,
        passed=monotone and exact_zero,
    )


# ---------------------------------------------------------------------------
# ball-constrained rate minima (for set-indexed probability bounds)


def constrained_rate_minimum(
    model: ModelSpec,
    u0: Field,
    phi_ref: np.ndarray,
    radius: float,
    mode: str,
    tg: TimeGrid,
    settings: Optional[OptimizerSettings] = None,
    warm_start: Optional[Control] = None,
) -> RateResult:
    """Smallest action subject to the path lying inside/outside a ball.

    The ball is {dist_rms(u_v, phi_ref) < radius} in the time-averaged L2
    distance (the smooth norm the Monte Carlo summaries also report), and the
    constraint enters as a doubled hinge penalty: inside mode penalizes
    max(0, dist - 0.95 radius)^2, outside mode max(0, 1.05 radius - dist)^2 —
    the 5% interior margin keeps minimizers strictly off the boundary so
    membership survives sampling and discretization jitter.
    """
    if mode not in ("inside", "outside"):
        raise DomainError(f"mode must be 'inside' or 'outside', got {mode!r}")
    if radius <= 0:
        raise DomainError("radius must be positive")
    st = settings or OptimizerSettings()
    kernel = StepKernel.build(model, tg)
    n_modes = model.noise.n_modes
    dim = tg.n_steps * n_modes
    if warm_start is not None and warm_start.values.shape != (tg.n_steps, n_modes):
        raise GridMismatchError("warm start control has the wrong shape")
    x = warm_start.values.reshape(-1).copy() if warm_start is not None else np.zeros(dim)
    phi_ref = np.asarray(phi_ref, dtype=float)
    if phi_ref.shape != (tg.n_steps + 1, *model.grid.shape):
        raise GridMismatchError("reference trajectory shape mismatch")

    tw = np.full(tg.n_steps + 1, tg.dt)
    tw[0] = tw[-1] = 0.5 * tg.dt
    grid = model.grid

    def rms_dist(states: np.ndarray) -> float:
        per = grid.cell_volume * ((states - phi_ref).reshape(tg.n_steps + 1, -1) ** 2).sum(axis=1)
        return float(np.sqrt(np.sum(tw * per) / tg.horizon))

    def violation(dist: float) -> float:
        if mode == "inside":
            return max(0.0, dist - 0.95 * radius)
        return max(0.0, 1.05 * radius - dist)

    exact = _has_exact_gradients(model)
    if mode == "outside":
        # the distance gradient is singular on the reference path itself, so a
        # zero start (u_v = phi_ref) needs a deterministic symmetry-breaking nudge
        try:
            if rms_dist(_forward_states(model, kernel, u0, tg.dt * x.reshape(tg.n_steps, n_modes))) < 1e-12:
                x = x + 1e-2 * np.random.Generator(np.random.Philox(99)).standard_normal(dim)
        except BlowUpError:
            pass

    def value_and_gap(z):
        states = _forward_states(model, kernel, u0, tg.dt * z.reshape(tg.n_steps, n_modes))
        dist = rms_dist(states)
        gap = violation(dist)
        return 0.5 * tg.dt * float(np.sum(z**2)), dist, gap, states

    mu = st.penalty0
    try:
        best = (value_and_gap(x)[2], x.copy(), mu)
    except BlowUpError:
        best = (float("inf"), x.copy(), mu)
    stall = 0
    total = 0
    for _ in range(st.max_continuations if best[0] > st.residual_tol else 0):
        if exact:
            def fun(z, mu=mu):
                try:
                    act, dist, gap, states = value_and_gap(z)
                except BlowUpError:
                    return _RETREAT * (1.0 + float(z @ z)), 2.0 * _RETREAT * z
                val = act + mu * gap**2
                if not np.isfinite(val):
                    raise OptimizationError("constrained objective diverged")
                v = z.reshape(tg.n_steps, n_modes)
                grad = tg.dt * v
                if gap > 0.0 and dist > 0.0:
                    # d(gap^2)/du_n = 2 gap s tw_n cv (u_n - phi_n)/(T dist),
                    # s = +1 inside (dist too big), -1 outside (dist too small)
                    sgn = 1.0 if mode == "inside" else -1.0
                    scale = 2.0 * mu * gap * sgn * grid.cell_volume / (tg.horizon * dist)
                    dpen = (scale * tw).reshape(-1, *([1] * grid.dim)) * (states - phi_ref)
                    grad = grad + _adjoint_grad(model, kernel, states, tg.dt * v, dpen)
                return val, grad.reshape(-1)

            sol = optimize.minimize(
                fun, x, jac=True, method="L-BFGS-B",
                options={"maxiter": st.max_iters, "gtol": st.gradient_tol, "ftol": 1e-15},
            )
        else:
            def fun(z, mu=mu):
                try:
                    act, _, gap, _ = value_and_gap(z)
                except BlowUpError:
                    return _RETREAT * (1.0 + float(z @ z))
                val = act + mu * gap**2
                if not np.isfinite(val):
                    raise OptimizationError("constrained objective diverged")
                return val

            sol = optimize.minimize(
                fun, x, method="L-BFGS-B",
                options={"maxiter": st.max_iters, "gtol": st.gradient_tol, "ftol": 1e-15},
            )
        x = sol.x
        total += int(sol.nit)
        try:
            _, _, gap, _ = value_and_gap(x)
        except BlowUpError:
            gap = float("inf")
        if gap < best[0]:
            stall = 0 if gap < 0.99 * best[0] else stall + 1
            best = (gap, x.copy(), mu)
        else:
            stall += 1
        if gap <= st.residual_tol or stall >= 3:
            break
        mu *= 2.0

    gap, x, mu = best
    v = Control(tg, x.reshape(tg.n_steps, n_modes))
    if gap <= st.residual_tol:
        return RateResult(value=action(v), minimizer=v, residual=gap,
                          converged=True, iterations=total, penalty=mu)
    return RateResult(value=float("inf"), minimizer=None, residual=gap,
                      converged=False, iterations=total, penalty=mu)
