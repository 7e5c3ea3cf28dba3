"""Path-level simulators for the threshold moisture model.

Two processes share one Wiener increment stream:

* the finite-rate hysteresis diffusion, which moistens at rate m below the
  threshold b and rains out at rate r/epsilon until it returns to zero, and
* its limit, where the moistening diffusion E(t) never resets and rain is
  delivered as instantaneous mass-b spikes at the first-passage times of
  E through the levels b, 2b, 3b, ...

Threshold crossings are detected at grid nodes and the crossing instants
recorded by linear interpolation inside the step; the step that contains a
crossing is integrated entirely under the pre-crossing regime, and the new
regime owns the state from the following node on (right-continuous state).
The O(sqrt(dt)) crossing bias this leaves is controlled by the dt
acceptance tests; an optional Brownian-bridge correction can resample
crossings missed between nodes.

The engine is vectorized across paths.  Ensembles draw one increment block
per path from counter-based substreams, so results are independent of
batching and scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (
    EventLog,
    ModelParams,
    NumericalError,
    ParamError,
    PathRecord,
    RngStream,
    validate,
)

__all__ = [
    "SimGrid",
    "CoupledPair",
    "EnsembleResult",
    "simulate_hysteresis",
    "simulate_limit",
    "simulate_coupled",
    "pathwise_sup_error",
    "hysteresis_ensemble",
    "coupled_ensemble",
]

_FINITE_CHECK_EVERY = 128


@dataclass(frozen=True)
class SimGrid:
    """Uniform time grid: n_steps steps of length dt covering [0, T]."""

    dt: float
    n_steps: int
    bridge_correction: bool = False

    def __post_init__(self):
        if self.dt <= 0:
            raise ParamError("dt > 0 violated")
        if self.n_steps < 1:
            raise ParamError("n_steps >= 1 violated")

    @classmethod
    def for_params(
        cls,
        params: ModelParams,
        dt: Optional[float] = None,
        bridge_correction: bool = False,
    ) -> "SimGrid":
        """Grid with the requested (or default) step, snapped so that
        n_steps * dt == T exactly."""
        d_max = max(params.D0, params.D1)
        if dt is None:
            dt = 1e-4 * params.b**2 / d_max**2 if d_max > 0 else 1e-4 * params.T
        n_steps = max(1, math.ceil(params.T / dt - 1e-9))
        return cls(dt=params.T / n_steps, n_steps=n_steps, bridge_correction=bridge_correction)

    def check_resolves(self, params: ModelParams) -> None:
        """Default validation: the grid must resolve the threshold diffusion scale."""
        d_max = max(params.D0, params.D1)
        if d_max > 0 and self.dt > params.b**2 / (100.0 * d_max**2):
            raise ParamError("grid too coarse: dt <= b^2/(100 max(D0,D1)^2) violated")

    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt


@dataclass(frozen=True)
class CoupledPair:
    """Finite-rate and limit records driven by one shared increment block."""

    finite: PathRecord
    limit: PathRecord
    shared_increments: np.ndarray


@dataclass
class EnsembleResult:
    """Per-path summaries of a (possibly coupled) simulation ensemble."""

    n_paths: int
    finite_events: list
    final_q: np.ndarray
    rain_time: np.ndarray
    finite_count: np.ndarray
    sup_error: Optional[np.ndarray] = None
    limit_spikes: Optional[list] = None
    limit_count: Optional[np.ndarray] = None


def _draw_blocks(params, grid, streams):
    """One (n_paths, n_steps) increment block plus bridge uniforms if enabled."""
    n = grid.n_steps
    sd = np.sqrt(grid.dt)
    dW = np.empty((len(streams), n))
    U = np.empty((len(streams), n)) if grid.bridge_correction else None
    for i, s in enumerate(streams):
        gen = s.generator()
        dW[i] = gen.normal(0.0, sd, size=n)
        if U is not None:
            U[i] = gen.uniform(size=n)
    return dW, U


class _FiniteState:
    """Vectorized hysteresis integrator state for one batch of paths."""

    def __init__(self, params, n_paths):
        self.p = params
        self.q = np.full(n_paths, params.q0)
        self.rain = np.zeros(n_paths, dtype=bool)
        self.E = np.full(n_paths, params.q0)
        self.P = np.zeros(n_paths)
        self.dry_from = np.zeros(n_paths)
        self.rain_from = np.full(n_paths, np.nan)
        self.events = [[] for _ in range(n_paths)]

    def step(self, t, dt, dw, u=None):
        p = self.p
        rain = self.rain
        drift = np.where(rain, -p.rain_rate, p.m)
        amp = np.where(rain, p.D1, p.D0)
        dq = drift * dt + amp * dw
        qn = self.q + dq
        self.E += np.where(rain, 0.0, dq)
        self.P += np.where(rain, dq, 0.0)

        up = ~rain & (qn >= p.b)
        down = rain & (qn <= 0.0)
        up_bridge = down_bridge = None
        if u is not None:
            # resample sub-step excursions missed between nodes; their
            # crossing instant is unknown, take the step midpoint
            if p.D0 > 0:
                gap = (p.b - self.q) * (p.b - qn)
                pu = np.exp(-2.0 * np.maximum(gap, 0.0) / (p.D0**2 * dt))
                up_bridge = ~rain & ~up & (u < pu)
            if p.D1 > 0:
                gap = self.q * qn
                pd = np.exp(-2.0 * np.maximum(gap, 0.0) / (p.D1**2 * dt))
                down_bridge = rain & ~down & (u < pd)
        for i in np.nonzero(up)[0]:
            den = qn[i] - self.q[i]
            frac = (p.b - self.q[i]) / den if den > 0 else 0.5
            self.rain_from[i] = t + dt * min(max(frac, 0.0), 1.0)
        for i in np.nonzero(down)[0]:
            den = self.q[i] - qn[i]
            frac = self.q[i] / den if den > 0 else 0.5
            self._end_rain(i, t + dt * min(max(frac, 0.0), 1.0))
        if up_bridge is not None:
            for i in np.nonzero(up_bridge)[0]:
                self.rain_from[i] = t + 0.5 * dt
            up |= up_bridge
        if down_bridge is not None:
            for i in np.nonzero(down_bridge)[0]:
                self._end_rain(i, t + 0.5 * dt)
            down |= down_bridge
        self.rain = rain ^ (up | down)
        self.q = qn

    def _end_rain(self, i, t_c):
        self.events[i].append((self.dry_from[i], self.rain_from[i], t_c))
        self.dry_from[i] = t_c
        self.rain_from[i] = np.nan

    def event_log(self, i) -> EventLog:
        ev = self.events[i]
        pending = None if not self.rain[i] else float(self.rain_from[i])
        if ev:
            ds, rs, re = (np.asarray(col) for col in zip(*ev))
        else:
            ds = rs = re = np.empty(0)
        return EventLog(ds, rs, re, pending_onset=pending)


class _LimitState:
    """Vectorized limit-process integrator: E plus level-crossing spikes."""

    def __init__(self, params, n_paths):
        self.p = params
        self.E = np.full(n_paths, params.q0)
        self.k_next = np.ones(n_paths, dtype=np.int64)
        self.spikes = [[] for _ in range(n_paths)]

    def step(self, t, dt, dw, u=None):
        p = self.p
        En = self.E + p.m * dt + p.D0 * dw
        level = self.k_next * p.b
        hit = En >= level
        for i in np.nonzero(hit)[0]:
            den = En[i] - self.E[i]
            while En[i] >= self.k_next[i] * p.b:
                lev = self.k_next[i] * p.b
                frac = (lev - self.E[i]) / den if den > 0 else 0.5
                self.spikes[i].append(t + dt * min(max(frac, 0.0), 1.0))
                self.k_next[i] += 1
        if u is not None and p.D0 > 0:
            gap = (level - self.E) * (level - En)
            ph = np.exp(-2.0 * np.maximum(gap, 0.0) / (p.D0**2 * dt))
            for i in np.nonzero(~hit & (u < ph))[0]:
                self.spikes[i].append(t + 0.5 * dt)
                self.k_next[i] += 1
        self.E = En

    def crossings(self) -> np.ndarray:
        return self.k_next - 1


def _run_batch(params, grid, streams, with_limit, record):
    n_paths, n = len(streams), grid.n_steps
    dW, U = _draw_blocks(params, grid, streams)
    dt = grid.dt
    fin = _FiniteState(params, n_paths)
    lim = _LimitState(params, n_paths) if with_limit else None
    sup = np.zeros(n_paths) if with_limit else None

    if record:
        times = grid.times()
        q_path = np.empty((n_paths, n + 1))
        sig_path = np.empty((n_paths, n + 1))
        e_path = np.empty((n_paths, n + 1))
        p_path = np.empty((n_paths, n + 1))
        q_path[:, 0], sig_path[:, 0] = params.q0, 0.0
        e_path[:, 0], p_path[:, 0] = params.q0, 0.0
        if with_limit:
            el_path = np.empty((n_paths, n + 1))
            nc_path = np.empty((n_paths, n + 1), dtype=np.int64)
            el_path[:, 0], nc_path[:, 0] = params.q0, 0

    for k in range(n):
        t = k * dt
        u = U[:, k] if U is not None else None
        fin.step(t, dt, dW[:, k], u)
        if with_limit:
            lim.step(t, dt, dW[:, k], u)
            np.maximum(sup, np.abs(fin.E - lim.E), out=sup)
        if record:
            q_path[:, k + 1] = fin.q
            sig_path[:, k + 1] = np.where(fin.rain, params.rain_rate, 0.0)
            e_path[:, k + 1] = fin.E
            p_path[:, k + 1] = fin.P
            if with_limit:
                el_path[:, k + 1] = lim.E
                nc_path[:, k + 1] = lim.crossings()
        if k % _FINITE_CHECK_EVERY == 0 or k == n - 1:
            if not np.isfinite(fin.q).all():
                raise NumericalError(f"non-finite moisture state at step <= {k}")

    out = {"fin": fin, "lim": lim, "sup": sup, "dW": dW}
    if record:
        out["times"] = times
        out["finite_arrays"] = (q_path, sig_path, e_path, p_path)
        if with_limit:
            out["limit_arrays"] = (el_path, nc_path)
    return out


def _finite_record(params, batch, i) -> PathRecord:
    q, sig, e, p = (a[i] for a in batch["finite_arrays"])
    return PathRecord(
        times=batch["times"], q=q, sigma=sig, E=e, P=p,
        events=batch["fin"].event_log(i), kind="finite",
    )


def _limit_record(params, batch, i) -> PathRecord:
    el, nc = (a[i] for a in batch["limit_arrays"])
    spikes = np.asarray(batch["lim"].spikes[i])
    q = el - params.b * nc
    e_log = EventLog(
        dry_start=np.concatenate([[0.0], spikes[:-1]]) if spikes.size else np.empty(0),
        rain_start=spikes,
        rain_end=spikes,
    )
    return PathRecord(
        times=batch["times"], q=q, sigma=spikes, E=el, P=q - el, events=e_log,
        kind="limit", spike_mass=params.b,
    )


def _check_inputs(params, grid, strict):
    validate(params, degenerate_ok=not strict)
    if strict:
        grid.check_resolves(params)
    if grid.n_steps * grid.dt < params.T - 1e-9 * params.T:
        raise ParamError("grid does not cover [0, T]")


def simulate_hysteresis(
    params: ModelParams, grid: SimGrid, stream: RngStream, strict: bool = True
) -> PathRecord:
    """Euler path of the finite-rate two-threshold hysteresis diffusion.

    Dry state: dq = m dt + D0 dW; rain state: dq = -(r/eps) dt + D1 dW.
    The state flips to rain at the first grid-resolved up-crossing of b and
    back to dry at the next down-crossing of 0.  E accrues the dry
    increments and P the rain increments, so q = E + P exactly.
    """
    _check_inputs(params, grid, strict)
    batch = _run_batch(params, grid, [stream], with_limit=False, record=True)
    return _finite_record(params, batch, 0)


def simulate_limit(
    params: ModelParams, grid: SimGrid, stream: RngStream, strict: bool = True
) -> PathRecord:
    """Euler path of the limit process.

    E(t) = q0 + m t + D0 W(t); spike i fires at the first grid-resolved
    crossing of the level i*b, and q(t) = E(t) - b * (completed crossings),
    which realizes the teleport from b back to 0.
    """
    _check_inputs(params, grid, strict)
    batch = _run_batch(params, grid, [stream], with_limit=True, record=True)
    return _limit_record(params, batch, 0)


def simulate_coupled(
    params: ModelParams, grid: SimGrid, stream: RngStream, strict: bool = True
) -> CoupledPair:
    """Finite and limit paths driven by the same Wiener increments."""
    _check_inputs(params, grid, strict)
    batch = _run_batch(params, grid, [stream], with_limit=True, record=True)
    return CoupledPair(
        finite=_finite_record(params, batch, 0),
        limit=_limit_record(params, batch, 0),
        shared_increments=batch["dW"][0],
    )


def pathwise_sup_error(pair: CoupledPair) -> float:
    """max over grid nodes of |E_finite(t) - E_limit(t)|."""
    tf, tl = pair.finite.times, pair.limit.times
    if tf.shape != tl.shape or not np.array_equal(tf, tl):
        raise ParamError("coupled records have misaligned grids")
    return float(np.max(np.abs(pair.finite.E - pair.limit.E)))


def _ensemble(params, grid, stream, n_paths, with_limit, batch_size, strict):
    _check_inputs(params, grid, strict)
    events, spikes = [], []
    final_q = np.empty(n_paths)
    rain_time = np.empty(n_paths)
    n_fin = np.empty(n_paths, dtype=np.int64)
    sup = np.empty(n_paths) if with_limit else None
    n_lim = np.empty(n_paths, dtype=np.int64) if with_limit else None
    T = params.T
    for lo in range(0, n_paths, batch_size):
        hi = min(lo + batch_size, n_paths)
        streams = [stream.child(i) for i in range(lo, hi)]
        batch = _run_batch(params, grid, streams, with_limit=with_limit, record=False)
        fin = batch["fin"]
        for j in range(hi - lo):
            ev = fin.event_log(j)
            events.append(ev)
            n_fin[lo + j] = ev.count(T)
            rt = float(np.sum(ev.rain_durations))
            if ev.pending_onset is not None:
                rt += T - ev.pending_onset
            rain_time[lo + j] = rt
        final_q[lo:hi] = fin.q
        if with_limit:
            sup[lo:hi] = batch["sup"]
            for j in range(hi - lo):
                sp = np.asarray(batch["lim"].spikes[j])
                spikes.append(sp)
                n_lim[lo + j] = sp.size
    return EnsembleResult(
        n_paths=n_paths,
        finite_events=events,
        final_q=final_q,
        rain_time=rain_time,
        finite_count=n_fin,
        sup_error=sup,
        limit_spikes=spikes if with_limit else None,
        limit_count=n_lim,
    )


def hysteresis_ensemble(
    params: ModelParams,
    grid: SimGrid,
    stream: RngStream,
    n_paths: int,
    batch_size: int = 1000,
    strict: bool = True,
) -> EnsembleResult:
    """Independent finite-rate paths; per-path event logs and summaries.

    Path i uses the counter-based substream ``stream.child(i)``, so the
    result is independent of batch size and scheduling.
    """
    return _ensemble(params, grid, stream, n_paths, False, batch_size, strict)


def coupled_ensemble(
    params: ModelParams,
    grid: SimGrid,
    stream: RngStream,
    n_paths: int,
    batch_size: int = 1000,
    strict: bool = True,
) -> EnsembleResult:
    """Coupled finite/limit paths sharing increments; tracks sup |dE|."""
    return _ensemble(params, grid, stream, n_paths, True, batch_size, strict)
