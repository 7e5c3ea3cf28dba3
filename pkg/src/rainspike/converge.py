"""Monte Carlo convergence experiments for the spike-train limit.

Two error metrics are estimated over a decreasing epsilon sweep, with both
processes driven by common random numbers (the same per-path substreams at
every sweep point):

* the mean squared sup-norm gap between the dry-accrual components of the
  finite-rate and limit processes, and
* the mean squared difference of the rain-process pairings <sigma, phi>
  against smooth compactly supported bump functions.

Each sweep is summarized by per-epsilon means with standard errors and an
ordinary least squares log-log rate fit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import (
    DEFAULT_EPS_SWEEP,
    EventLog,
    ModelParams,
    NumericalError,
    ParamError,
    PathRecord,
    RngStream,
)
from .simulate import EnsembleResult, SimGrid, coupled_ensemble

__all__ = [
    "SmoothBump",
    "ConvergenceReport",
    "SweepPoint",
    "default_bumps",
    "pairing_finite",
    "pairing_finite_events",
    "pairing_limit",
    "pairing_limit_spikes",
    "fit_rate",
    "run_sweep",
    "sup_error_experiment",
    "pairing_error_experiment",
]


@dataclass(frozen=True)
class SmoothBump:
    """Smooth bump a * exp(-1 / (1 - ((t-c)/w)^2)) supported on (c-w, c+w)."""

    center: float
    half_width: float
    amplitude: float = 1.0

    def __post_init__(self):
        if self.half_width <= 0:
            raise ParamError("half_width > 0 violated")
        if self.center - self.half_width <= 0:
            raise ParamError("bump support must start after 0")

    def check_support(self, t_end: float) -> None:
        if self.center + self.half_width >= t_end:
            raise ParamError("bump support must end before the horizon")

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        x = (t - self.center) / self.half_width
        out = np.zeros_like(x)
        inside = np.abs(x) < 1.0
        xi = x[inside]
        out[inside] = self.amplitude * np.exp(-1.0 / (1.0 - xi * xi))
        return out if out.ndim else float(out)

    def lipschitz_bound(self, n_grid: int = 40001) -> float:
        """max |phi'| estimated on a dense grid over the support."""
        t = np.linspace(self.center - self.half_width, self.center + self.half_width, n_grid)
        y = self(t)
        return float(np.max(np.abs(np.gradient(y, t))))


def default_bumps(T: float) -> tuple[SmoothBump, ...]:
    """Early/mid/late bump battery covering the horizon."""
    return (
        SmoothBump(center=T / 4.0, half_width=T / 10.0),
        SmoothBump(center=T / 2.0, half_width=T / 5.0),
        SmoothBump(center=3.0 * T / 4.0, half_width=T / 10.0),
    )


def _simpson_uniform(y: np.ndarray, dx: float) -> float:
    """Composite Simpson on uniformly spaced samples.

    With an odd number of intervals the final one is closed by a trapezoid;
    its O(dx^3) local error is far below the test tolerances at the step
    sizes used here.
    """
    n = y.size - 1
    if n <= 0:
        return 0.0
    if n == 1:
        return 0.5 * dx * (y[0] + y[1])
    stop = n if n % 2 == 0 else n - 1
    ys = y[: stop + 1]
    total = dx / 3.0 * (ys[0] + ys[-1] + 4.0 * ys[1:-1:2].sum() + 2.0 * ys[2:-1:2].sum())
    if n % 2 == 1:
        total += 0.5 * dx * (y[-2] + y[-1])
    return float(total)


def _integrate_phi(phi, a: float, b: float, dt: float) -> float:
    """integral of phi over [a, b]: Simpson on the grid nodes inside plus
    trapezoid corrections on the partial end strips."""
    if b <= a:
        return 0.0
    k0 = math.ceil(a / dt - 1e-12)
    k1 = math.floor(b / dt + 1e-12)
    if k1 <= k0:
        mid = 0.5 * (a + b)
        va, vm, vb = phi(a), phi(mid), phi(b)
        return (b - a) / 6.0 * (va + 4.0 * vm + vb)
    nodes = np.arange(k0, k1 + 1) * dt
    total = _simpson_uniform(phi(nodes), dt)
    left = nodes[0] - a
    if left > 0:
        total += 0.5 * left * (phi(a) + phi(nodes[0]))
    right = b - nodes[-1]
    if right > 0:
        total += 0.5 * right * (phi(nodes[-1]) + phi(b))
    return float(total)


def pairing_finite_events(
    events: EventLog, rain_rate: float, dt: float, t_end: float, phi: SmoothBump
) -> float:
    """<sigma_eps, phi> = (r/eps) * sum over rain intervals of int phi dt."""
    phi.check_support(t_end)
    total = 0.0
    for a, b in zip(events.rain_start, events.rain_end):
        total += _integrate_phi(phi, float(a), float(b), dt)
    if events.pending_onset is not None:
        total += _integrate_phi(phi, float(events.pending_onset), t_end, dt)
    return rain_rate * total


def pairing_finite(path: PathRecord, phi: SmoothBump) -> float:
    """Pairing of a finite-rate path's rain process with a test function."""
    if path.kind != "finite":
        raise ParamError("pairing_finite requires a finite-rate path")
    t_end = float(path.times[-1])
    dt = float(path.times[1] - path.times[0])
    rate = float(np.max(path.sigma)) if path.sigma.size else 0.0
    if rate == 0.0:
        # no rain anywhere: the pairing vanishes regardless of the rate
        phi.check_support(t_end)
        return 0.0
    return pairing_finite_events(path.events, rate, dt, t_end, phi)


def pairing_limit_spikes(spikes: np.ndarray, mass: float, phi: SmoothBump, t_end: float) -> float:
    """<sigma, phi> = mass * sum of phi at the spike times; no quadrature."""
    phi.check_support(t_end)
    spikes = np.asarray(spikes, dtype=float)
    if spikes.size == 0:
        return 0.0
    return float(mass * np.sum(phi(spikes)))


def pairing_limit(path: PathRecord, phi: SmoothBump) -> float:
    """Pairing of a limit path's spike train with a test function."""
    if path.kind != "limit" or path.spike_mass is None:
        raise ParamError("pairing_limit requires a limit path")
    return pairing_limit_spikes(path.sigma, path.spike_mass, phi, float(path.times[-1]))


@dataclass(frozen=True)
class SweepPoint:
    """Per-epsilon Monte Carlo summary of one coupled ensemble."""

    epsilon: float
    n_paths: int
    sup_sq_mean: float
    sup_sq_se: float
    pair_sq_mean: tuple[float, ...]
    pair_sq_se: tuple[float, ...]
    mismatch_freq: float


@dataclass(frozen=True)
class ConvergenceReport:
    """Errors over an epsilon sweep with a fitted log-log rate."""

    label: str
    epsilons: tuple[float, ...]
    errors: tuple[float, ...]
    std_errors: tuple[float, ...]
    slope: float
    intercept: float
    r_squared: float
    n_paths: int
    dt: float
    seed: int
    excluded: tuple[float, ...] = ()

    def monotone_decreasing(self, n_se: float = 1.0) -> bool:
        """Errors decreasing along the sweep within n_se combined standard errors."""
        e, s = np.asarray(self.errors), np.asarray(self.std_errors)
        slack = n_se * np.sqrt(s[:-1] ** 2 + s[1:] ** 2)
        return bool(np.all(e[1:] < e[:-1] + slack))


def fit_rate(epsilons: Sequence[float], errors: Sequence[float]) -> tuple[float, float, float]:
    """OLS fit of log(error) against log(epsilon): (slope, intercept, r^2)."""
    eps = np.asarray(epsilons, dtype=float)
    err = np.asarray(errors, dtype=float)
    if eps.size < 3:
        raise ParamError("rate fit needs at least 3 sweep points")
    if np.any(err <= 0):
        raise ParamError("rate fit needs positive errors")
    x, y = np.log(eps), np.log(err)
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    resid = y - (intercept + slope * x)
    sst = float(np.sum((y - ym) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / sst if sst > 0 else 1.0
    return slope, intercept, r2


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    # np.sum/np.mean use pairwise summation, keeping the reduction
    # order-independent across batch layouts
    m = float(np.mean(x))
    se = float(np.std(x, ddof=1) / np.sqrt(x.size)) if x.size > 1 else 0.0
    return m, se


def _sweep_point(params, eps, phis, n_paths, dt, seed, batch_size) -> SweepPoint:
    p = params.replace(epsilon=eps)
    grid = SimGrid.for_params(p, dt=dt)
    res: EnsembleResult = coupled_ensemble(p, grid, RngStream(seed, 0), n_paths, batch_size)
    sup2 = res.sup_error**2
    if not np.isfinite(sup2).all():
        bad = int(np.nonzero(~np.isfinite(sup2))[0][0])
        raise NumericalError(
            f"non-finite sup error at epsilon={eps}: master_seed={seed} stream_id={bad}"
        )
    sup_m, sup_se = _mean_se(sup2)
    pair_m, pair_se = [], []
    for phi in phis:
        diffs = np.empty(n_paths)
        for i in range(n_paths):
            pf = pairing_finite_events(res.finite_events[i], p.rain_rate, grid.dt, p.T, phi)
            pl = pairing_limit_spikes(res.limit_spikes[i], p.b, phi, p.T)
            diffs[i] = pf - pl
        if not np.isfinite(diffs).all():
            bad = int(np.nonzero(~np.isfinite(diffs))[0][0])
            raise NumericalError(
                f"non-finite pairing at epsilon={eps}: master_seed={seed} stream_id={bad}"
            )
        m, se = _mean_se(diffs**2)
        pair_m.append(m)
        pair_se.append(se)
    mismatch = float(np.mean(res.finite_count < res.limit_count))
    return SweepPoint(
        epsilon=eps,
        n_paths=n_paths,
        sup_sq_mean=sup_m,
        sup_sq_se=sup_se,
        pair_sq_mean=tuple(pair_m),
        pair_sq_se=tuple(pair_se),
        mismatch_freq=mismatch,
    )


def run_sweep(
    params: ModelParams,
    eps_sweep: Sequence[float] = DEFAULT_EPS_SWEEP,
    phis: Sequence[SmoothBump] = (),
    n_paths: int = 2000,
    dt: Optional[float] = None,
    seed: int = 0,
    batch_size: int = 1000,
    threads: int = 1,
) -> list[SweepPoint]:
    """Coupled ensembles at every sweep point, sharing per-path substreams.

    The same (master_seed, path) substreams drive every epsilon, so sweep
    points are coupled by common random numbers; results are deterministic
    and independent of ``threads``/``batch_size``.
    """
    eps = [float(e) for e in eps_sweep]
    if len(eps) < 1 or any(e2 >= e1 for e1, e2 in zip(eps, eps[1:])):
        raise ParamError("epsilon sweep must be strictly decreasing")
    if n_paths < 100:
        raise ParamError("n_paths >= 100 violated")
    for phi in phis:
        phi.check_support(params.T)
    if threads > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=threads) as ex:
            futs = [
                ex.submit(_sweep_point, params, e, tuple(phis), n_paths, dt, seed, batch_size)
                for e in eps
            ]
            return [f.result() for f in futs]
    return [_sweep_point(params, e, tuple(phis), n_paths, dt, seed, batch_size) for e in eps]


def _report(label, points, errors, ses, n_paths, dt_eff, seed) -> ConvergenceReport:
    eps = [pt.epsilon for pt in points]
    keep = [i for i, (m, s) in enumerate(zip(errors, ses)) if s <= 0.3 * m]
    excluded = tuple(eps[i] for i in range(len(eps)) if i not in keep)
    if len(keep) < 3:
        raise ParamError("rate fit needs at least 3 sweep points after exclusions")
    slope, intercept, r2 = fit_rate([eps[i] for i in keep], [errors[i] for i in keep])
    return ConvergenceReport(
        label=label,
        epsilons=tuple(eps),
        errors=tuple(errors),
        std_errors=tuple(ses),
        slope=slope,
        intercept=intercept,
        r_squared=r2,
        n_paths=n_paths,
        dt=dt_eff,
        seed=seed,
        excluded=excluded,
    )


def _dt_effective(params: ModelParams, dt: Optional[float]) -> float:
    return SimGrid.for_params(params, dt=dt).dt


def sup_error_experiment(
    params: ModelParams,
    eps_sweep: Sequence[float] = DEFAULT_EPS_SWEEP,
    n_paths: int = 2000,
    dt: Optional[float] = None,
    seed: int = 0,
    batch_size: int = 1000,
    threads: int = 1,
) -> ConvergenceReport:
    """Mean squared sup-norm gap of the dry-accrual components over the sweep."""
    points = run_sweep(params, eps_sweep, (), n_paths, dt, seed, batch_size, threads)
    return _report(
        "sup_error",
        points,
        [pt.sup_sq_mean for pt in points],
        [pt.sup_sq_se for pt in points],
        n_paths,
        _dt_effective(params.replace(epsilon=points[0].epsilon), dt),
        seed,
    )


def pairing_error_experiment(
    params: ModelParams,
    eps_sweep: Sequence[float] = DEFAULT_EPS_SWEEP,
    phis: Optional[Sequence[SmoothBump]] = None,
    n_paths: int = 2000,
    dt: Optional[float] = None,
    seed: int = 0,
    batch_size: int = 1000,
    threads: int = 1,
) -> list[ConvergenceReport]:
    """Mean squared pairing differences over the sweep, one report per bump."""
    if phis is None:
        phis = default_bumps(params.T)
    points = run_sweep(params, eps_sweep, phis, n_paths, dt, seed, batch_size, threads)
    dt_eff = _dt_effective(params.replace(epsilon=points[0].epsilon), dt)
    reports = []
    for j, phi in enumerate(phis):
        reports.append(
            _report(
                f"pairing(center={phi.center:g},half_width={phi.half_width:g})",
                points,
                [pt.pair_sq_mean[j] for pt in points],
                [pt.pair_sq_se[j] for pt in points],
                n_paths,
                dt_eff,
                seed,
            )
        )
    return reports
