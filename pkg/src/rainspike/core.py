"""Shared parameter, path, and event types plus the deterministic RNG contract.

Everything here is immutable after construction and safe to share across
threads. Randomness flows exclusively through :class:`RngStream`, which is
counter-based (Philox) so parallel ensembles reproduce bit-identically
regardless of scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "ParamError",
    "NumericalError",
    "ModelParams",
    "EventLog",
    "PathRecord",
    "RngStream",
    "validate",
    "gaussian_increments",
    "DEFAULT_PARAMS",
    "DEFAULT_EPS_SWEEP",
]


class ParamError(ValueError):
    """An invariant on model parameters or configuration is violated."""


class NumericalError(RuntimeError):
    """A simulation or solver produced a non-finite or unstable state."""


@dataclass(frozen=True)
class ModelParams:
    """Physical and asymptotic parameters of the moisture model.

    m        moistening rate (cm/time, > 0)
    r        base rain rate (cm/time, > 0); the effective rain rate is r/epsilon
    epsilon  asymptotic scale, in (0, 1]
    D0       dry-state noise amplitude (cm/sqrt(time), > 0)
    D1       rain-state noise amplitude (cm/sqrt(time), >= D0)
    b        rain-onset threshold (cm, > 0)
    T        time horizon (> 0)
    q0       initial moisture (cm, < b)
    """

    m: float = 1.0
    r: float = 1.0
    epsilon: float = 0.1
    D0: float = 1.0
    D1: float = 1.0
    b: float = 1.0
    T: float = 10.0
    q0: float = 0.0

    @property
    def rain_rate(self) -> float:
        """Effective rain rate r/epsilon (derived, never stored)."""
        return self.r / self.epsilon

    def replace(self, **kw) -> "ModelParams":
        from dataclasses import replace as _replace

        return _replace(self, **kw)


#: Canonical order-one default parameter set used throughout the test suite.
DEFAULT_PARAMS = ModelParams()

#: Default epsilon sweep for convergence experiments.
DEFAULT_EPS_SWEEP = (0.2, 0.1, 0.05, 0.025, 0.0125)


def validate(params: ModelParams, degenerate_ok: bool = False) -> ModelParams:
    """Check all parameter invariants; return params unchanged if they hold.

    Raises :class:`ParamError` naming the first violated invariant.
    ``degenerate_ok`` admits zero noise or zero moistening rate, used by
    deterministic-skeleton and boundary-inactive test builds.
    """
    checks = [
        (params.m > 0 or (degenerate_ok and params.m == 0), "m > 0"),
        (params.r > 0, "r > 0"),
        (0 < params.epsilon <= 1, "epsilon in (0, 1]"),
        (params.D0 > 0 or (degenerate_ok and params.D0 == 0), "D0 > 0"),
        (params.D1 > 0 or (degenerate_ok and params.D1 == 0), "D1 > 0"),
        (params.D0 <= params.D1, "D0 <= D1"),
        (params.b > 0, "b > 0"),
        (params.T > 0, "T > 0"),
        (params.q0 < params.b, "q0 < b"),
    ]
    for ok, name in checks:
        if not ok:
            raise ParamError(f"{name} violated")
    for name in ("m", "r", "epsilon", "D0", "D1", "b", "T", "q0"):
        if not np.isfinite(getattr(params, name)):
            raise ParamError(f"{name} finite violated")
    return params


@dataclass(frozen=True)
class EventLog:
    """Ordered dry/rain first-passage events of a single path.

    Each completed event is a triple (dry_start, rain_start, rain_end):
    the dry spell [dry_start, rain_start) followed by the rain spell
    [rain_start, rain_end).  A rain onset observed before the horizon whose
    end was not observed is kept in ``pending_onset`` so event counts stay
    exact.  Rain durations may be zero only for the limit (spike) process.
    """

    dry_start: np.ndarray
    rain_start: np.ndarray
    rain_end: np.ndarray
    pending_onset: Optional[float] = None

    def __post_init__(self):
        ds = np.asarray(self.dry_start, dtype=float)
        rs = np.asarray(self.rain_start, dtype=float)
        re = np.asarray(self.rain_end, dtype=float)
        if not (ds.shape == rs.shape == re.shape):
            raise ParamError("event arrays must have equal length")
        object.__setattr__(self, "dry_start", ds)
        object.__setattr__(self, "rain_start", rs)
        object.__setattr__(self, "rain_end", re)
        if ds.size:
            if not np.all(ds < rs):
                raise ParamError("dry_start < rain_start violated")
            if not np.all(rs <= re):
                raise ParamError("rain_start <= rain_end violated")
            # contiguous cycles share the boundary instant, hence <=
            if ds.size > 1 and not np.all(re[:-1] <= ds[1:]):
                raise ParamError("rain_end <= next dry_start violated")
        if self.pending_onset is not None and ds.size:
            if self.pending_onset <= re[-1]:
                raise ParamError("pending onset must follow last rain_end")

    def __len__(self) -> int:
        return int(self.dry_start.size)

    @property
    def dry_durations(self) -> np.ndarray:
        return self.rain_start - self.dry_start

    @property
    def rain_durations(self) -> np.ndarray:
        return self.rain_end - self.rain_start

    @property
    def onsets(self) -> np.ndarray:
        """All rain-onset times, including a pending (unfinished) one."""
        if self.pending_onset is None:
            return self.rain_start
        return np.append(self.rain_start, self.pending_onset)

    def count(self, t: float) -> int:
        """Number of rain onsets in [0, t]."""
        return int(np.searchsorted(self.onsets, t, side="right"))


@dataclass(frozen=True)
class PathRecord:
    """A discretized realization of the moisture process on a time grid.

    For ``kind="finite"`` sigma holds the rain-rate value on the grid
    (0 when dry, r/epsilon when raining).  For ``kind="limit"`` sigma holds
    the spike times; each spike carries moisture mass ``spike_mass`` (the
    threshold b) and the rain intervals in ``events`` have zero duration.
    In both cases q = E + P pointwise.
    """

    times: np.ndarray
    q: np.ndarray
    sigma: np.ndarray
    E: np.ndarray
    P: np.ndarray
    events: EventLog
    kind: str = "finite"
    spike_mass: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("finite", "limit"):
            raise ParamError(f"unknown path kind {self.kind!r}")
        t = np.asarray(self.times, dtype=float)
        if t.size == 0 or t[0] != 0.0:
            raise ParamError("times must start at 0")
        if np.any(np.diff(t) <= 0):
            raise ParamError("times must be strictly increasing")
        for name in ("q", "E", "P"):
            if np.asarray(getattr(self, name)).shape != t.shape:
                raise ParamError(f"{name} must match the time grid")
        if self.kind == "finite" and np.asarray(self.sigma).shape != t.shape:
            raise ParamError("sigma must match the time grid")


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream addressed by (master_seed, stream_id).

    ``generator()`` always builds a fresh generator from the key, so the
    stream's output depends only on the key, never on call history or
    scheduling.  A call site needing several draws makes one generator and
    consumes it sequentially; path ensembles use one stream per path.
    """

    master_seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        key = np.array(
            [self.master_seed & 0xFFFFFFFFFFFFFFFF, self.stream_id & 0xFFFFFFFFFFFFFFFF],
            dtype=np.uint64,
        )
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, offset: int) -> "RngStream":
        return RngStream(self.master_seed, self.stream_id + offset)


def gaussian_increments(stream: RngStream, n: int, dt: float) -> np.ndarray:
    """n i.i.d. normal(0, dt) Wiener increments, reproducible per stream."""
    if n < 0:
        raise ParamError("n >= 0 violated")
    if dt <= 0:
        raise ParamError("dt > 0 violated")
    if n == 0:
        return np.empty(0)
    return stream.generator().normal(0.0, np.sqrt(dt), size=n)
