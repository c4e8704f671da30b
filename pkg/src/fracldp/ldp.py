"""Monte Carlo probes of the two uniform large-deviation statements.

The asymptotic liminf/limsup bounds become finite-epsilon *trend verdicts*:
each cell of the (epsilon, datum, target) grid records the event probability
p-hat with a Wilson interval and the margin pairing eps*ln(p-hat) with the
matching rate quantity; a probe passes when the worst margin over the data
set clears an explicit slack at the smallest epsilon and has trended the
right way along the sweep. Slack and the epsilon ladder persist with every
report.

Probabilities below Monte Carlo resolution (no hits at the given sample
size) are censored: margins then use the Wilson upper bound, and a censored
cell whose interval is compatible with both verdicts makes the report
*indeterminate* rather than failed.

Ball events around a reference path use the full product path norm; set
events for the open/closed probes use the time-averaged L2 distance — the
same smooth norm the constrained rate minimizer works in, so measured
frequencies and rate constants refer to one geometry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .grids import DomainError, Field, GridMismatchError, l2_norm
from .models import ModelSpec
from .rate import RateResult, g0_map, sample_level_set
from .skeleton import Control, TimeGrid
from .stochastic import (
    EstimationError,
    SdeConfig,
    batch_paths,
    wilson_interval,
)


class DependencyError(RuntimeError):
    """A required upstream computation (rate value, level set) is missing."""


@dataclass(frozen=True)
class LdpExperimentPlan:
    """Shared layout of one Monte Carlo large-deviation campaign.

    ``initial_data`` is a finite sample of the data family the uniform
    statements quantify over; declaring ``initial_radius`` asserts it is a
    bounded-ball sample and is validated here. ``delta`` is the path-norm
    event radius, ``s_levels`` the action levels of the level-set probe.
    """

    model: ModelSpec
    initial_data: tuple
    eps_list: tuple
    delta: float
    timegrid: TimeGrid
    s_levels: tuple = ()
    n_paths: int = 400
    path_norm: str = "combined"
    slack: float = 0.5
    initial_radius: Optional[float] = None
    linf_guard: float = 1.0e6

    def __post_init__(self) -> None:
        object.__setattr__(self, "initial_data", tuple(self.initial_data))
        object.__setattr__(self, "eps_list", tuple(float(e) for e in self.eps_list))
        object.__setattr__(self, "s_levels", tuple(float(s) for s in self.s_levels))
        if not self.initial_data:
            raise DomainError("plan needs at least one initial datum")
        for u0 in self.initial_data:
            if u0.grid != self.model.grid:
                raise GridMismatchError("initial datum grid does not match the model")
        if not self.eps_list or any(e <= 0 or e > 1 for e in self.eps_list):
            raise DomainError("eps_list entries must lie in (0, 1]")
        if any(b >= a for a, b in zip(self.eps_list, self.eps_list[1:])):
            raise DomainError("eps_list must be strictly decreasing")
        if self.delta <= 0:
            raise DomainError("delta must be positive")
        if self.n_paths < 100:
            raise DomainError("n_paths must be at least 100 per cell")
        if any(s < 0 for s in self.s_levels):
            raise DomainError("s_levels must be non-negative")
        if self.slack <= 0:
            raise DomainError("slack must be positive")
        if not self.linf_guard > 0:
            raise DomainError("linf_guard must be positive")
        if self.initial_radius is not None:
            for u0 in self.initial_data:
                if l2_norm(u0) > self.initial_radius + 1e-12:
                    raise DomainError(
                        "initial datum violates the declared ball radius "
                        f"({l2_norm(u0):.4f} > {self.initial_radius})"
                    )


@dataclass
class LdpReport:
    """Cell records plus aggregate trend verdicts of one probe run."""

    probe: str
    eps_list: list
    slack: float
    records: list
    lower_margins: list  # worst (min) lower margin per epsilon, [] if unused
    upper_margins: list  # worst (max) upper margin per epsilon, [] if unused
    verdict: str  # "pass" | "fail" | "indeterminate"
    indeterminate_cells: int
    notes: str = ""

    @property
    def passed(self) -> bool:
        return self.verdict != "fail"

    def as_rows(self):
        yield from self.records


def _select_dists(summaries, which: str) -> np.ndarray:
    if which == "combined":
        rows = [s.dists for s in summaries]
    elif which == "l2rms":
        rows = [s.dists_l2rms for s in summaries]
    elif which == "terminal":
        rows = [s.dists_terminal for s in summaries]
    else:
        raise DomainError(f"unknown distance selector {which!r}")
    return np.vstack([np.atleast_1d(r) for r in rows])


def estimate_ball_probability(
    model: ModelSpec,
    u0: Field,
    phi: np.ndarray,
    delta: float,
    epsilon: float,
    n_paths: int,
    base_seed: int,
    timegrid: TimeGrid,
    which: str = "combined",
    side: str = "inside",
    stream_offset: int = 0,
    linf_guard: float = 1.0e6,
):
    """Fraction of simulated paths within (or beyond) delta of a reference.

    Returns (p_hat, (ci_lo, ci_hi)) with a Wilson interval; deterministic
    given ``base_seed``/``stream_offset``. ``side="inside"`` counts
    dist < delta, ``side="outside"`` counts dist >= delta; on one seed the
    two fractions add to exactly 1 (shared paths, complementary events).
    Blown-up paths carry infinite distance, hence never lie inside a ball.
    """
    if delta < 0:
        raise DomainError("delta must be non-negative")
    if side not in ("inside", "outside"):
        raise DomainError(f"side must be 'inside' or 'outside', got {side!r}")
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (timegrid.n_steps + 1, *model.grid.shape):
        raise GridMismatchError("reference trajectory shape mismatch")
    cfg = SdeConfig(epsilon=epsilon, timegrid=timegrid, linf_guard=linf_guard)
    sums = batch_paths(
        model, u0, cfg, n_paths, base_seed, stream_offset=stream_offset, references=[phi]
    )
    if all(s.blow_step is not None for s in sums):
        raise EstimationError("every sampled path blew up; no event frequency to report")
    d = _select_dists(sums, which)[:, 0]
    hits = int(np.sum(d < delta)) if side == "inside" else int(np.sum(d >= delta))
    return hits / n_paths, wilson_interval(hits, n_paths)


def _log_margin(eps: float, p_hat: float, ci_hi: float) -> tuple[float, bool]:
    """eps*ln(p-hat), censored at the Wilson upper bound when no hits landed."""
    if p_hat > 0.0:
        return eps * math.log(p_hat), False
    return eps * math.log(ci_hi), True


def _trend_verdict(
    lower_cells_by_eps: list,
    upper_cells_by_eps: list,
    slack: float,
    trend_tol: float,
    upper_trend: bool = True,
):
    """Aggregate per-epsilon cell margins into (worst curves, verdict, n_straddling).

    Lower cells must end >= -slack trending upward (margins climb toward the
    rate comparison from below). Upper cells must end <= slack; when
    ``upper_trend`` is set the worst upper margin must also be non-increasing
    along the sweep (the level-set escape probe starts near s and decays),
    while a threshold-only policy suits probes whose healthy margin rises
    toward zero from below.

    Censored lower margins are optimistic (Wilson upper bound), so a
    lower-probe failure is conclusive however it was estimated, while a pass
    leaning on one is only indeterminate. Censored upper margins are
    conservative: passes through them stand, but when the failing cell is the
    censored one the point estimate may still satisfy the bound, so the run is
    unresolved rather than refuted.
    """
    lower_curve = [min(m for m, _ in cells) for cells in lower_cells_by_eps if cells]
    upper_curve = [max(m for m, _ in cells) for cells in upper_cells_by_eps if cells]
    straddling = 0
    if lower_curve:
        straddling += sum(1 for m, cens in lower_cells_by_eps[-1] if cens and m >= -slack)
    if upper_curve:
        straddling += sum(1 for m, cens in upper_cells_by_eps[-1] if cens and m > slack)

    if lower_curve and (
        lower_curve[-1] < -slack or lower_curve[-1] < lower_curve[0] - trend_tol
    ):
        return lower_curve, upper_curve, "fail", straddling
    upper_bad = upper_curve and upper_curve[-1] > slack
    if upper_trend and upper_curve:
        upper_bad = upper_bad or upper_curve[-1] > upper_curve[0] + trend_tol
    if upper_bad:
        worst_m = max(m for m, _ in upper_cells_by_eps[-1])
        worst_censored = any(
            cens for m, cens in upper_cells_by_eps[-1] if m == worst_m
        )
        verdict = "indeterminate" if worst_censored else "fail"
        return lower_curve, upper_curve, verdict, straddling
    verdict = "indeterminate" if straddling else "pass"
    return lower_curve, upper_curve, verdict, straddling


def _check_rate_grid(rates, n_data: int, n_targets: int, label: str):
    if rates is None:
        raise DependencyError(f"missing rate results for the {label} probe")
    rates = [list(row) for row in rates]
    if len(rates) != n_data or any(len(row) != n_targets for row in rates):
        raise DependencyError(
            f"{label} rate grid must be {n_data} data x {n_targets} targets"
        )
    for row in rates:
        for r in row:
            if not isinstance(r, RateResult):
                raise DependencyError(f"{label} rate entries must be RateResult instances")
    return rates


def fw_bounds_experiment(
    plan: LdpExperimentPlan,
    controls: Sequence[Control],
    rates: Sequence[Sequence[RateResult]],
    base_seed: int = 0,
    n_level_samples: int = 24,
    level_seed: int = 1,
    trend_tol: float = 0.05,
) -> LdpReport:
    """Finite-epsilon probe of the path-ball lower and level-set upper bounds.

    Lower probe: each control v becomes, per datum, the target path
    G0(u0, v); the margin eps*ln p(dist < delta) + I pairs the measured ball
    frequency with the supplied rate value for that (datum, control) pair.
    Upper probe: per action level s, the distance to a sampled level set (the
    pairing-shared draw across data) yields eps*ln p(dist >= delta) + s.
    The sampled set under-covers the true one, so the measured distance — and
    hence the margin — is biased conservatively upward (noted in the report).

    ``rates`` is indexed [datum][control] and must come from a rate
    computation (the converged minimize_rate result; its value is an upper
    bound, which only tightens the lower-probe verdict).
    """
    controls = list(controls)
    if not controls:
        raise DependencyError("fw probe needs at least one target control")
    rates = _check_rate_grid(rates, len(plan.initial_data), len(controls), "fw lower")
    for row in rates:
        for r in row:
            if not (r.converged and np.isfinite(r.value)):
                raise DependencyError("fw lower probe needs finite converged rate values")
    model = plan.model
    tg = plan.timegrid

    # shared spadework: target paths per (datum, control); level sets paired
    # across data through one control draw per level
    targets = [[g0_map(model, u0, v, tg) for v in controls] for u0 in plan.initial_data]
    level_controls = {
        s: sample_level_set(
            model, plan.initial_data[0], s, n_level_samples, tg, seed=level_seed + k
        ).controls
        for k, s in enumerate(plan.s_levels)
    }
    level_sets = [
        {
            s: sample_level_set(
                model, u0, s, 0, tg, controls=level_controls[s]
            ).trajectories
            for s in plan.s_levels
        }
        for u0 in plan.initial_data
    ]

    records = []
    lower_by_eps = []
    upper_by_eps = []
    for e_idx, eps in enumerate(plan.eps_list):
        lower_cells = []
        upper_cells = []
        for d_idx, u0 in enumerate(plan.initial_data):
            refs = list(targets[d_idx])
            level_cols = {}
            col = len(refs)
            for s in plan.s_levels:
                members = level_sets[d_idx][s]
                level_cols[s] = (col, col + len(members))
                refs.extend(members)
                col += len(members)
            cfg = SdeConfig(epsilon=eps, timegrid=tg, linf_guard=plan.linf_guard)
            offset = (e_idx * len(plan.initial_data) + d_idx) * plan.n_paths
            sums = batch_paths(
                model, u0, cfg, plan.n_paths, base_seed,
                stream_offset=offset, references=refs,
            )
            if all(s_.blow_step is not None for s_ in sums):
                raise EstimationError(
                    f"every path blew up at eps={eps}, datum {d_idx}"
                )
            dmat = _select_dists(sums, plan.path_norm)
            for j in range(len(controls)):
                hits = int(np.sum(dmat[:, j] < plan.delta))
                p_hat = hits / plan.n_paths
                lo, hi = wilson_interval(hits, plan.n_paths)
                log_term, censored = _log_margin(eps, p_hat, hi)
                margin = log_term + rates[d_idx][j].value
                lower_cells.append((margin, censored))
                records.append({
                    "probe": "fw-lower", "eps": eps, "datum": d_idx,
                    "target": f"path-{j}", "p_hat": p_hat, "ci_lo": lo, "ci_hi": hi,
                    "eps_ln_p": log_term, "rate": rates[d_idx][j].value,
                    "margin": margin, "censored": censored,
                })
            for s in plan.s_levels:
                a, b = level_cols[s]
                set_dist = dmat[:, a:b].min(axis=1)
                hits = int(np.sum(set_dist >= plan.delta))
                p_hat = hits / plan.n_paths
                lo, hi = wilson_interval(hits, plan.n_paths)
                log_term, censored = _log_margin(eps, p_hat, hi)
                margin = log_term + s
                upper_cells.append((margin, censored))
                records.append({
                    "probe": "fw-upper", "eps": eps, "datum": d_idx,
                    "target": f"level-{s:g}", "p_hat": p_hat, "ci_lo": lo, "ci_hi": hi,
                    "eps_ln_p": log_term, "rate": s,
                    "margin": margin, "censored": censored,
                })
        lower_by_eps.append(lower_cells)
        upper_by_eps.append(upper_cells)

    lower_curve, upper_curve, verdict, straddling = _trend_verdict(
        lower_by_eps, upper_by_eps, plan.slack, trend_tol
    )
    return LdpReport(
        probe="fw",
        eps_list=list(plan.eps_list),
        slack=plan.slack,
        records=records,
        lower_margins=lower_curve,
        upper_margins=upper_curve,
        verdict=verdict,
        indeterminate_cells=straddling,
        notes=(
            "level-set distances use the finite sampled set (an over-estimate of "
            "the true distance), so upper-probe margins are conservatively inflated"
        ),
    )


@dataclass(frozen=True)
class PathSetSpec:
    """A ball (open) or complement-of-ball (closed) event set in path space.

    The geometry is the time-averaged L2 distance to ``reference`` — the norm
    ``constrained_rate_minimum`` works in, so rate constants and event
    frequencies refer to the same sets. ``radius=inf`` makes the open ball the
    whole space.
    """

    name: str
    reference: np.ndarray
    radius: float
    kind: str  # "open-ball" | "closed-complement"

    def __post_init__(self) -> None:
        if self.kind not in ("open-ball", "closed-complement"):
            raise DomainError(f"unknown set kind {self.kind!r}")
        if not self.radius > 0:
            raise DomainError("set radius must be positive")
        if self.kind == "closed-complement" and not np.isfinite(self.radius):
            raise DomainError("complement of an infinite ball is empty")


def dz_bounds_experiment(
    plan: LdpExperimentPlan,
    sets: Sequence[PathSetSpec],
    set_rates: Sequence[Sequence[RateResult]],
    base_seed: int = 0,
    trend_tol: float = 0.05,
) -> LdpReport:
    """Finite-epsilon probe of the open-set lower / closed-set upper bounds.

    ``set_rates`` is indexed [set][datum] with the constrained rate minimum of
    each set from each datum (value may be +inf when the constrained solve
    found the set unreachable). Per set and epsilon the margin pairs the worst
    event frequency over the data sample with the worst rate constant:
    min-over-data eps*ln p + max-over-data I for open sets (the uniform lower
    bound), max-over-data eps*ln p + min-over-data I for closed ones.
    """
    sets = list(sets)
    if not sets:
        raise DependencyError("dz probe needs at least one event set")
    rates = _check_rate_grid(set_rates, len(sets), len(plan.initial_data), "dz")
    model = plan.model
    tg = plan.timegrid
    for spec in sets:
        ref = np.asarray(spec.reference, dtype=float)
        if ref.shape != (tg.n_steps + 1, *model.grid.shape):
            raise GridMismatchError(f"set {spec.name!r} reference shape mismatch")

    records = []
    lower_by_eps = []
    upper_by_eps = []
    for e_idx, eps in enumerate(plan.eps_list):
        frac = np.empty((len(sets), len(plan.initial_data)))
        ci_hi_mat = np.empty_like(frac)
        ci_lo_mat = np.empty_like(frac)
        for d_idx, u0 in enumerate(plan.initial_data):
            cfg = SdeConfig(epsilon=eps, timegrid=tg, linf_guard=plan.linf_guard)
            offset = (e_idx * len(plan.initial_data) + d_idx) * plan.n_paths
            sums = batch_paths(
                model, u0, cfg, plan.n_paths, base_seed,
                stream_offset=offset,
                references=[np.asarray(s.reference, dtype=float) for s in sets],
            )
            if all(s_.blow_step is not None for s_ in sums):
                raise EstimationError(f"every path blew up at eps={eps}, datum {d_idx}")
            dmat = _select_dists(sums, "l2rms")
            for k, spec in enumerate(sets):
                if spec.kind == "open-ball":
                    hits = int(np.sum(dmat[:, k] < spec.radius))
                else:
                    hits = int(np.sum(dmat[:, k] >= spec.radius))
                frac[k, d_idx] = hits / plan.n_paths
                ci_lo_mat[k, d_idx], ci_hi_mat[k, d_idx] = wilson_interval(hits, plan.n_paths)

        lower_cells = []
        upper_cells = []
        for k, spec in enumerate(sets):
            terms = []
            censored_any = False
            for d_idx in range(len(plan.initial_data)):
                log_term, censored = _log_margin(eps, frac[k, d_idx], ci_hi_mat[k, d_idx])
                censored_any = censored_any or censored
                terms.append(log_term)
                records.append({
                    "probe": "dz-open" if spec.kind == "open-ball" else "dz-closed",
                    "eps": eps, "datum": d_idx, "target": spec.name,
                    "p_hat": frac[k, d_idx],
                    "ci_lo": ci_lo_mat[k, d_idx], "ci_hi": ci_hi_mat[k, d_idx],
                    "eps_ln_p": log_term, "rate": rates[k][d_idx].value,
                    "margin": None, "censored": censored,
                })
            rate_vals = [rates[k][d].value for d in range(len(plan.initial_data))]
            if spec.kind == "open-ball":
                margin = min(terms) + max(rate_vals)
                lower_cells.append((margin, censored_any))
            else:
                margin = max(terms) + min(rate_vals)
                upper_cells.append((margin, censored_any))
            for rec in records[-len(plan.initial_data):]:
                rec["margin"] = margin
        lower_by_eps.append(lower_cells)
        upper_by_eps.append(upper_cells)

    lower_curve, upper_curve, verdict, straddling = _trend_verdict(
        lower_by_eps, upper_by_eps, plan.slack, trend_tol, upper_trend=False
    )
    return LdpReport(
        probe="dz",
        eps_list=list(plan.eps_list),
        slack=plan.slack,
        records=records,
        lower_margins=lower_curve,
        upper_margins=upper_curve,
        verdict=verdict,
        indeterminate_cells=straddling,
        notes="set events and rate constants share the time-averaged L2 geometry",
    )


@dataclass
class UniformityReport:
    """Spread of per-datum margins across the initial-data sample."""

    eps_list: list
    spreads: list  # max - min of per-datum margins at each epsilon
    margins: list  # per epsilon: list of per-datum margins
    warning: Optional[str]
    passed: bool

    def as_rows(self):
        for eps, spread, ms in zip(self.eps_list, self.spreads, self.margins):
            yield {"eps": eps, "spread": spread, "margins": list(ms)}


def uniformity_sweep(
    plan: LdpExperimentPlan,
    controls: Sequence[Control],
    rates: Sequence[Sequence[RateResult]],
    base_seed: int = 0,
) -> UniformityReport:
    """Spread of the lower-probe margins across initial data, per epsilon.

    The uniform statements assert one epsilon threshold serving the whole
    data family; its desk-scale shadow is that the spread (max - min of
    per-datum margins) stays bounded as epsilon shrinks. Pass: the final
    spread does not exceed the initial spread by more than the plan slack.
    A singleton data set makes the sweep vacuous (warning, trivially passed).
    """
    controls = list(controls)
    if not controls:
        raise DependencyError("uniformity sweep needs at least one target control")
    rates = _check_rate_grid(rates, len(plan.initial_data), len(controls), "uniformity")
    model = plan.model
    tg = plan.timegrid
    targets = [[g0_map(model, u0, v, tg) for v in controls] for u0 in plan.initial_data]

    margins_by_eps = []
    for e_idx, eps in enumerate(plan.eps_list):
        per_datum = []
        for d_idx, u0 in enumerate(plan.initial_data):
            cfg = SdeConfig(epsilon=eps, timegrid=tg, linf_guard=plan.linf_guard)
            offset = (e_idx * len(plan.initial_data) + d_idx) * plan.n_paths
            sums = batch_paths(
                model, u0, cfg, plan.n_paths, base_seed,
                stream_offset=offset, references=targets[d_idx],
            )
            if all(s_.blow_step is not None for s_ in sums):
                raise EstimationError(f"every path blew up at eps={eps}, datum {d_idx}")
            dmat = _select_dists(sums, plan.path_norm)
            cell = []
            for j in range(len(controls)):
                hits = int(np.sum(dmat[:, j] < plan.delta))
                _, hi = wilson_interval(hits, plan.n_paths)
                log_term, _ = _log_margin(eps, hits / plan.n_paths, hi)
                cell.append(log_term + rates[d_idx][j].value)
            per_datum.append(min(cell))
        margins_by_eps.append(per_datum)

    spreads = [max(ms) - min(ms) for ms in margins_by_eps]
    warning = None
    if len(plan.initial_data) == 1:
        warning = "degenerate: a single initial datum makes uniformity vacuous"
    passed = spreads[-1] <= spreads[0] + plan.slack
    return UniformityReport(
        eps_list=list(plan.eps_list),
        spreads=spreads,
        margins=margins_by_eps,
        warning=warning,
        passed=passed,
    )
