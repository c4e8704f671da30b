"""Noise-driven integrators and Monte Carlo batch machinery.

The driving noise is a K-mode truncation of a cylindrical Wiener process:
independent scalar Brownian motions W_k feeding the mode family sigma_k.
``simulate_sde`` integrates

    du = [-(-Delta)^alpha u - F(t,x,u) + g(t)] dt + sqrt(eps) sigma(t,u) dW,

``simulate_shifted`` adds the control drift sigma(t,u) v(t) dt (the
change-of-measure dynamics used by the variational analysis), and both funnel
through the deterministic module's step kernel, so the eps -> 0 limit is the
skeleton solver's arithmetic exactly.

Streams are counter-based: path ``stream_id`` under base ``seed`` uses
``Philox(SeedSequence(entropy=seed, spawn_key=(stream_id,)))``, which makes
batches embarrassingly parallel and bit-reproducible regardless of scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Optional, Sequence

import numpy as np

from .grids import DomainError, Field, GridMismatchError
from .grids import array_l2_sq, array_lp_pow, array_seminorm_sq
from .models import ModelSpec
from .skeleton import (
    BlowUpError,
    Control,
    SkeletonSolution,
    StepKernel,
    TimeGrid,
    evolve_dense,
    step_once,
)

SCHEMES = ("tamed_imex_em",)


class InsufficientSamplesError(DomainError):
    """Batch too small for the requested statistical contract."""


class EstimationError(RuntimeError):
    """Monte Carlo estimate undefined (e.g. every path blew up)."""


@dataclass(frozen=True)
class WienerDriver:
    """Reproducible K-mode Brownian increment source."""

    n_modes: int
    seed: int
    stream_id: int = 0

    def __post_init__(self) -> None:
        if self.n_modes < 1:
            raise DomainError("n_modes must be at least 1")
        if self.stream_id < 0:
            raise DomainError("stream_id must be non-negative")

    def generator(self) -> np.random.Generator:
        return np.random.Generator(
            np.random.Philox(np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,)))
        )

    def increments(self, tg: TimeGrid) -> np.ndarray:
        """(n_steps, K) of independent N(0, dt) mode increments."""
        rng = self.generator()
        return np.sqrt(tg.dt) * rng.standard_normal(size=(tg.n_steps, self.n_modes))

    def with_stream(self, stream_id: int) -> "WienerDriver":
        return WienerDriver(n_modes=self.n_modes, seed=self.seed, stream_id=stream_id)


@dataclass(frozen=True)
class SdeConfig:
    epsilon: float
    timegrid: TimeGrid
    scheme: str = "tamed_imex_em"
    linf_guard: float = 1.0e6

    def __post_init__(self) -> None:
        if not (0.0 < self.epsilon <= 1.0):
            raise DomainError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if self.scheme not in SCHEMES:
            raise DomainError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if not (self.linf_guard > 0):
            raise DomainError("linf_guard must be positive")


@dataclass
class PathSample:
    """One noise-driven trajectory with the skeleton solver's diagnostics."""

    solution: SkeletonSolution
    epsilon: float
    seed: int
    stream_id: int

    @property
    def trajectory(self) -> np.ndarray:
        return self.solution.trajectory

    @property
    def driver_meta(self) -> tuple:
        return (self.seed, self.stream_id)


def _check_sde_inputs(model: ModelSpec, u0: Field, driver: WienerDriver) -> None:
    if u0.grid != model.grid:
        raise GridMismatchError("initial datum grid does not match the model")
    if driver.n_modes != model.noise.n_modes:
        raise GridMismatchError(
            f"driver has {driver.n_modes} modes, model noise has {model.noise.n_modes}"
        )


def simulate_sde(model: ModelSpec, u0: Field, cfg: SdeConfig, driver: WienerDriver) -> PathSample:
    """One tamed IMEX Euler-Maruyama path of the eps-noise equation."""
    _check_sde_inputs(model, u0, driver)
    weights = np.sqrt(cfg.epsilon) * driver.increments(cfg.timegrid)
    traj, l2_sq, semi_sq, lp_p = evolve_dense(model, u0, cfg.timegrid, weights, cfg.linf_guard)
    sol = SkeletonSolution(
        grid=model.grid, timegrid=cfg.timegrid, trajectory=traj,
        l2_sq=l2_sq, halpha_semi_sq=semi_sq, lp_p=lp_p, p=model.drift.p,
    )
    return PathSample(solution=sol, epsilon=cfg.epsilon, seed=driver.seed, stream_id=driver.stream_id)


def simulate_shifted(
    model: ModelSpec, u0: Field, cfg: SdeConfig, v: Control, driver: WienerDriver
) -> PathSample:
    """Controlled-plus-noise dynamics: drift shifted by sigma(t,u) v(t)."""
    _check_sde_inputs(model, u0, driver)
    if v.timegrid != cfg.timegrid:
        raise GridMismatchError("control lives on a different time grid")
    if v.n_modes != model.noise.n_modes:
        raise GridMismatchError("control mode count does not match the model noise")
    weights = cfg.timegrid.dt * v.values + np.sqrt(cfg.epsilon) * driver.increments(cfg.timegrid)
    traj, l2_sq, semi_sq, lp_p = evolve_dense(model, u0, cfg.timegrid, weights, cfg.linf_guard)
    sol = SkeletonSolution(
        grid=model.grid, timegrid=cfg.timegrid, trajectory=traj,
        l2_sq=l2_sq, halpha_semi_sq=semi_sq, lp_p=lp_p, p=model.drift.p,
    )
    return PathSample(solution=sol, epsilon=cfg.epsilon, seed=driver.seed, stream_id=driver.stream_id)


# ---------------------------------------------------------------------------
# batched simulation with streaming reductions


@dataclass
class PathSummary:
    """Per-path scalars; full trajectories are never stored for batches."""

    stream_id: int
    epsilon: float
    blow_step: Optional[int]
    sup_l2: float
    terminal_l2: float
    terminal_mean: float
    v_int: float
    lp_int: float
    energy: float
    dists: np.ndarray  # combined path-norm distance to each reference
    probe_inner: Optional[float] = None  # <u(T), probe>_L2 when a probe was given
    dists_l2rms: Optional[np.ndarray] = None  # sqrt((1/T) int ||u-ref||^2 dt) per reference
    dists_terminal: Optional[np.ndarray] = None  # ||u(T) - ref(T)||_L2 per reference

    def as_record(self) -> dict:
        rec = {
            "stream_id": self.stream_id,
            "epsilon": self.epsilon,
            "blow_up": self.blow_step is not None,
            "blow_step": self.blow_step,
            "sup_l2": self.sup_l2,
            "terminal_l2": self.terminal_l2,
            "terminal_mean": self.terminal_mean,
            "v_int": self.v_int,
            "lp_int": self.lp_int,
            "energy": self.energy,
        }
        for j, d in enumerate(np.atleast_1d(self.dists)):
            rec[f"dist_{j}"] = float(d)
        return rec


def batch_paths(
    model: ModelSpec,
    u0: Field,
    cfg: SdeConfig,
    n_paths: int,
    base_seed: int,
    stream_offset: int = 0,
    shift: Optional[Control] = None,
    references: Sequence[np.ndarray] = (),
    probe: Optional[Field] = None,
) -> list[PathSummary]:
    """Simulate ``n_paths`` streams at once, reducing each to a PathSummary.

    Drivers are the same per-path counter-based generators ``simulate_sde``
    uses, so a batch is bit-reproducible for a fixed batch size, and each
    member matches the corresponding single-path run to floating-point
    roundoff (batched FFT vectorization rounds the last ulp differently, so
    exact bit-identity holds per execution shape, not across shapes).
    Path blow-ups freeze the offending member at its last finite state, set
    ``blow_step``, and poison its distances with +inf; they never abort the
    batch. Distances to ``references`` (trajectories on the same grids)
    accumulate on the fly in the combined path norm
    sup-L2 + L2-in-time-H^alpha + Lp-in-time-Lp.
    """
    if n_paths < 1:
        raise DomainError("n_paths must be at least 1")
    _check_sde_inputs(model, u0, WienerDriver(model.noise.n_modes, base_seed, stream_offset))
    tg = cfg.timegrid
    grid = model.grid
    p = model.drift.p
    kernel = StepKernel.build(model, tg)
    n_refs = len(references)
    for r in references:
        if r.shape != (tg.n_steps + 1, *grid.shape):
            raise GridMismatchError("reference trajectory shape mismatch")

    root = np.sqrt(cfg.epsilon)
    weights = np.empty((n_paths, tg.n_steps, model.noise.n_modes))
    for b in range(n_paths):
        drv = WienerDriver(model.noise.n_modes, base_seed, stream_offset + b)
        weights[b] = root * drv.increments(tg)
    if shift is not None:
        if shift.timegrid != tg:
            raise GridMismatchError("shift control lives on a different time grid")
        weights += tg.dt * shift.values[None]

    ts = tg.times()
    # trapezoid weights for time integrals on the step grid
    tw = np.full(tg.n_steps + 1, tg.dt)
    tw[0] = tw[-1] = 0.5 * tg.dt

    u = np.broadcast_to(u0.values, (n_paths, *grid.shape)).copy()
    hat = np.fft.fftn(u, axes=kernel.spatial_axes)
    ref_hats = [np.fft.fftn(r, axes=kernel.spatial_axes) for r in references]

    l2_sq = array_l2_sq(grid, u)
    semi_sq = array_seminorm_sq(grid, kernel.multipliers, hat)
    lp_pow = array_lp_pow(grid, u, p)
    sup_l2_sq = l2_sq.copy()
    v_acc = tw[0] * (l2_sq + semi_sq)
    lp_acc = tw[0] * lp_pow

    # per-reference accumulators of the path-norm pieces (plus the smooth
    # time-averaged L2 distance used by ball-constrained rate comparisons)
    d_sup_sq = np.zeros((n_paths, n_refs))
    d_v_acc = np.zeros((n_paths, n_refs))
    d_lp_acc = np.zeros((n_paths, n_refs))
    d_l2_acc = np.zeros((n_paths, n_refs))
    for j in range(n_refs):
        diff = u - references[j][0]
        dl2 = array_l2_sq(grid, diff)
        d_sup_sq[:, j] = dl2
        d_v_acc[:, j] = tw[0] * (dl2 + array_seminorm_sq(grid, kernel.multipliers, hat - ref_hats[j][0]))
        d_lp_acc[:, j] = tw[0] * array_lp_pow(grid, diff, p)
        d_l2_acc[:, j] = tw[0] * dl2

    blow_step = np.zeros(n_paths, dtype=int)  # 0 = alive
    for n in range(tg.n_steps):
        u_next, hat_next = step_once(kernel, ts[n], u, weights[:, n])
        mags = np.max(np.abs(u_next.reshape(n_paths, -1)), axis=1)
        bad = (~np.isfinite(mags)) | (mags > cfg.linf_guard)
        newly = bad & (blow_step == 0)
        if np.any(newly):
            blow_step[newly] = n + 1
        alive = blow_step == 0
        # frozen members keep their last finite state
        u = np.where(alive.reshape((-1,) + (1,) * grid.dim), u_next, u)
        hat = np.where(alive.reshape((-1,) + (1,) * grid.dim), hat_next, hat)

        l2_sq = array_l2_sq(grid, u)
        semi_sq = array_seminorm_sq(grid, kernel.multipliers, hat)
        lp_pow = array_lp_pow(grid, u, p)
        np.maximum(sup_l2_sq, np.where(alive, l2_sq, sup_l2_sq), out=sup_l2_sq)
        w = tw[n + 1] if n + 1 < tg.n_steps else tw[-1]
        v_acc += np.where(alive, w * (l2_sq + semi_sq), 0.0)
        lp_acc += np.where(alive, w * lp_pow, 0.0)
        for j in range(n_refs):
            diff = u - references[j][n + 1]
            dl2 = array_l2_sq(grid, diff)
            np.maximum(d_sup_sq[:, j], np.where(alive, dl2, 0.0), out=d_sup_sq[:, j])
            dsemi = array_seminorm_sq(grid, kernel.multipliers, hat - ref_hats[j][n + 1])
            d_v_acc[:, j] += np.where(alive, w * (dl2 + dsemi), 0.0)
            d_lp_acc[:, j] += np.where(alive, w * array_lp_pow(grid, diff, p), 0.0)
            d_l2_acc[:, j] += np.where(alive, w * dl2, 0.0)

    terminal_mean = np.mean(u.reshape(n_paths, -1), axis=1)
    dists = np.sqrt(d_sup_sq) + np.sqrt(d_v_acc) + d_lp_acc ** (1.0 / p)
    dists_rms = np.sqrt(d_l2_acc / tg.horizon)
    d_term = np.empty((n_paths, n_refs))
    for j in range(n_refs):
        d_term[:, j] = np.sqrt(array_l2_sq(grid, u - references[j][-1]))
    energy = sup_l2_sq + v_acc + lp_acc
    probe_inner = None
    if probe is not None:
        if probe.grid != grid:
            raise GridMismatchError("probe field lives on a different grid")
        probe_inner = grid.cell_volume * (u.reshape(n_paths, -1) @ probe.values.reshape(-1))

    out = []
    for b in range(n_paths):
        blown = int(blow_step[b]) or None
        out.append(
            PathSummary(
                stream_id=stream_offset + b,
                epsilon=cfg.epsilon,
                blow_step=blown,
                sup_l2=float(np.sqrt(sup_l2_sq[b])),
                terminal_l2=float(np.sqrt(l2_sq[b])),
                terminal_mean=float(terminal_mean[b]),
                v_int=float(v_acc[b]),
                lp_int=float(lp_acc[b]),
                energy=float(energy[b]) if blown is None else float("inf"),
                dists=(np.full(n_refs, np.inf) if blown is not None else dists[b]),
                probe_inner=(None if probe_inner is None else float(probe_inner[b])),
                dists_l2rms=(np.full(n_refs, np.inf) if blown is not None else dists_rms[b]),
                dists_terminal=(np.full(n_refs, np.inf) if blown is not None else d_term[b]),
            )
        )
    return out


def blow_fraction(summaries: Sequence[PathSummary]) -> float:
    if not summaries:
        raise InsufficientSamplesError("empty batch")
    return sum(1 for s in summaries if s.blow_step is not None) / len(summaries)


# ---------------------------------------------------------------------------
# statistics


def wilson_interval(successes: int, n: int, z: float = 1.96) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion — behaves at p_hat = 0/1."""
    if n < 1:
        raise InsufficientSamplesError("Wilson interval needs at least one trial")
    if not (0 <= successes <= n):
        raise DomainError("successes must lie in [0, n]")
    phat = successes / n
    denom = 1.0 + z * z / n
    center = (phat + z * z / (2 * n)) / denom
    half = z * np.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    return (max(0.0, center - half), min(1.0, center + half))


@dataclass
class EnergyCell:
    u0_l2_sq: float
    mean: float
    ci_half: float
    n_effective: int
    blow_fraction: float


@dataclass
class EnergyCheck:
    """Affine-growth audit of the expected energy functional in ||u0||^2."""

    cells: list
    slope: float
    intercept: float
    curvature: float
    passed: bool

    def as_dict(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "curvature": self.curvature,
            "passed": bool(self.passed),
            "cells": [vars(c) for c in self.cells],
        }


def energy_estimate(summaries: Sequence[PathSummary]) -> tuple[float, float]:
    """Batch mean and 95% CI half-width of the path energy functional.

    The functional is sup_t ||u||^2 + int ||u||_V^2 + int ||u||_p^p; blown
    paths are excluded (their frequency is the caller's concern).
    """
    vals = np.array([s.energy for s in summaries if s.blow_step is None])
    if vals.size < 100:
        raise InsufficientSamplesError(
            f"need at least 100 surviving paths for a moment estimate, have {vals.size}"
        )
    mean = float(np.mean(vals))
    half = float(1.96 * np.std(vals, ddof=1) / np.sqrt(vals.size))
    return mean, half


def energy_estimate_check(
    model: ModelSpec,
    cfg: SdeConfig,
    datums: Sequence[Field],
    n_paths: int,
    base_seed: int,
    curvature_slack: float = 0.02,
) -> EnergyCheck:
    """Moment growth audit: the expected energy must be affine in ||u0||^2.

    Regresses the per-datum batch means against ||u0||^2 (least squares with a
    quadratic term as the curvature probe). Pass requires slope and intercept
    non-negative within the widest cell CI (fits on Monte Carlo means jitter
    below zero by sampling noise) and no super-affine curvature: a POSITIVE
    quadratic contribution at the largest datum must stay within twice that CI
    plus ``curvature_slack`` times the largest mean (short-horizon transients
    of the Lp term curve upward by a few percent without threatening the
    affine bound itself; concave saturation is always acceptable).
    """
    if len(datums) < 3:
        raise InsufficientSamplesError("affine audit needs at least 3 initial data")
    cells = []
    for i, u0 in enumerate(datums):
        sums = batch_paths(model, u0, cfg, n_paths, base_seed, stream_offset=i * n_paths)
        mean, half = energy_estimate(sums)
        cells.append(
            EnergyCell(
                u0_l2_sq=float(array_l2_sq(model.grid, u0.values)),
                mean=mean,
                ci_half=half,
                n_effective=sum(1 for s in sums if s.blow_step is None),
                blow_fraction=blow_fraction(sums),
            )
        )
    x = np.array([c.u0_l2_sq for c in cells])
    y = np.array([c.mean for c in cells])
    coef_lin = np.polyfit(x, y, 1)
    slope, intercept = float(coef_lin[0]), float(coef_lin[1])
    if len(cells) >= 4:
        curvature = float(np.polyfit(x, y, 2)[0])
    else:
        curvature = 0.0
    widest = max(c.ci_half for c in cells)
    bulge = max(0.0, curvature) * float(np.max(x)) ** 2
    curvature_ok = bulge <= 2.0 * widest + curvature_slack * float(np.max(y)) + 1e-12
    passed = slope >= -widest - 1e-12 and intercept >= -widest - 1e-12 and curvature_ok
    return EnergyCheck(cells=cells, slope=slope, intercept=intercept, curvature=curvature, passed=passed)


# ---------------------------------------------------------------------------
# convergence of shifted paths to the skeleton (uniformly over data/controls)


@dataclass
class ConvergenceRow:
    epsilon: float
    p_hat: float
    ci_lo: float
    ci_hi: float
    worst_cell: tuple
    exceed_count: int
    n_paths: int


@dataclass
class ConvergenceTable:
    rows: list
    eta: float
    passed: bool

    def as_rows(self):
        for r in self.rows:
            yield {
                "epsilon": r.epsilon,
                "p_hat": r.p_hat,
                "ci_lo": r.ci_lo,
                "ci_hi": r.ci_hi,
                "worst_u0": r.worst_cell[0],
                "worst_control": r.worst_cell[1],
                "exceed_count": r.exceed_count,
                "n_paths": r.n_paths,
            }


def uniform_convergence_experiment(
    model: ModelSpec,
    u0_set: Sequence[Field],
    v_set: Sequence[Control],
    eps_list: Sequence[float],
    eta: float,
    n_paths: int,
    base_seed: int,
    radius_bound: Optional[float] = None,
    action_bound: Optional[float] = None,
) -> ConvergenceTable:
    """Estimate p(eps) = max over (u0, v) cells of P(||u^eps_v - u_v|| > eta).

    The distance is the combined path norm to the cell's skeleton solution.
    Pass verdict: p_hat non-increasing along the (decreasing) eps_list within
    CI slack, and the smallest-eps estimate CI-separated below the largest-eps
    one. ``radius_bound``/``action_bound`` optionally declare the bounded sets
    the sweep quantifies over; members violating them are rejected.
    """
    if not u0_set or not v_set:
        raise DomainError("u0_set and v_set must be non-empty")
    eps_arr = [float(e) for e in eps_list]
    if any(e2 >= e1 for e1, e2 in zip(eps_arr, eps_arr[1:])):
        raise DomainError("eps_list must be strictly decreasing")
    if eta <= 0:
        raise DomainError("eta must be positive")
    for i, u0 in enumerate(u0_set):
        norm = float(np.sqrt(array_l2_sq(model.grid, u0.values)))
        if radius_bound is not None and norm > radius_bound + 1e-9:
            raise DomainError(f"initial datum {i} has norm {norm:.4g} outside the declared ball {radius_bound}")
    for j, v in enumerate(v_set):
        if action_bound is not None and 0.5 * v.l2_sq() > action_bound + 1e-9:
            raise DomainError(f"control {j} has action {0.5 * v.l2_sq():.4g} outside the declared bound {action_bound}")

    tg = v_set[0].timegrid
    skeletons = {}
    from .skeleton import solve_skeleton

    for i, u0 in enumerate(u0_set):
        for j, v in enumerate(v_set):
            skeletons[(i, j)] = solve_skeleton(model, u0, v).trajectory

    rows = []
    for e_idx, eps in enumerate(eps_arr):
        cfg = SdeConfig(epsilon=eps, timegrid=tg)
        worst = None
        for i, u0 in enumerate(u0_set):
            for j, v in enumerate(v_set):
                offset = ((e_idx * len(u0_set) + i) * len(v_set) + j) * n_paths
                sums = batch_paths(
                    model, u0, cfg, n_paths, base_seed,
                    stream_offset=offset, shift=v, references=[skeletons[(i, j)]],
                )
                exceed = sum(1 for s in sums if not (s.dists[0] <= eta))
                if worst is None or exceed > worst[0]:
                    worst = (exceed, (i, j))
        lo, hi = wilson_interval(worst[0], n_paths)
        rows.append(
            ConvergenceRow(
                epsilon=eps, p_hat=worst[0] / n_paths, ci_lo=lo, ci_hi=hi,
                worst_cell=worst[1], exceed_count=worst[0], n_paths=n_paths,
            )
        )

    trend_ok = all(
        rows[k + 1].ci_lo <= rows[k].ci_hi + 1e-12 for k in range(len(rows) - 1)
    )
    separated = rows[-1].ci_hi < rows[0].ci_lo
    return ConvergenceTable(rows=rows, eta=eta, passed=trend_ok and separated)
