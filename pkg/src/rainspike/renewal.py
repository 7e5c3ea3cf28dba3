"""First-passage-time laws of the threshold model and the event-count tail bound.

Dry spells end when the drifted moisture diffusion first travels the
threshold distance; rain spells end when the fast downward diffusion first
returns to zero.  Both durations are inverse-Gaussian.  This module carries
their density, CDF, moments, Laplace transform (all closed form), an exact
sampler, and the Chernoff-style bound on how many rain events fit in a
finite horizon.

Symbol convention: the dry law has (drift m, noise D0, distance b); the
rain law has (drift r/epsilon, noise D1, distance b).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtr

from .core import EventLog, ModelParams, NumericalError, ParamError, RngStream, validate

__all__ = [
    "FirstPassageLaw",
    "TailBoundParams",
    "dry_law",
    "rain_law",
    "fpt_density",
    "fpt_cdf",
    "fpt_moments",
    "fpt_mgf",
    "fpt_sample",
    "fpt_sample_n",
    "truncation_point",
    "tail_s_max",
    "event_count_tail_bound",
    "event_count_tail_bound_min",
    "renewal_simulate_exact",
    "renewal_event_counts",
]


@dataclass(frozen=True)
class FirstPassageLaw:
    """Law of the first time a drifted diffusion travels a fixed distance.

    Inverse Gaussian with mean distance/drift and shape distance^2/noise^2.
    """

    drift: float
    noise: float
    distance: float

    def __post_init__(self):
        if self.drift <= 0:
            raise ParamError("drift > 0 violated")
        if self.noise <= 0:
            raise ParamError("noise > 0 violated")
        if self.distance <= 0:
            raise ParamError("distance > 0 violated")

    @property
    def mean(self) -> float:
        return self.distance / self.drift

    @property
    def variance(self) -> float:
        return self.distance * self.noise**2 / self.drift**3

    @property
    def shape(self) -> float:
        """Inverse-Gaussian shape parameter lambda."""
        return self.distance**2 / self.noise**2


def dry_law(params: ModelParams) -> FirstPassageLaw:
    return FirstPassageLaw(drift=params.m, noise=params.D0, distance=params.b)


def rain_law(params: ModelParams) -> FirstPassageLaw:
    return FirstPassageLaw(drift=params.rain_rate, noise=params.D1, distance=params.b)


def fpt_density(law: FirstPassageLaw, t) -> np.ndarray:
    """Inverse-Gaussian density d/sqrt(2 pi s^2 t^3) exp(-(d - v t)^2 / (2 s^2 t))."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ParamError("t > 0 violated")
    d, v, s2 = law.distance, law.drift, law.noise**2
    return d / np.sqrt(2.0 * np.pi * s2 * t**3) * np.exp(-((d - v * t) ** 2) / (2.0 * s2 * t))


def fpt_cdf(law: FirstPassageLaw, t) -> np.ndarray:
    """Inverse-Gaussian CDF, computed in log space to avoid overflow."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ParamError("t >= 0 violated")
    mu, lam = law.mean, law.shape
    out = np.zeros_like(t)
    pos = t > 0
    tp = t[pos]
    a = np.sqrt(lam / tp)
    term1 = ndtr(a * (tp / mu - 1.0))
    # exp(2 lam / mu) * Phi(-a (t/mu + 1)): both factors extreme, combine in logs
    term2 = np.exp(2.0 * lam / mu + log_ndtr(-a * (tp / mu + 1.0)))
    out[pos] = term1 + term2
    return out if out.ndim else float(out)


def fpt_moments(law: FirstPassageLaw) -> tuple[float, float, float]:
    """(mean, second raw moment, fourth raw moment) of the passage time.

    For the rain law these reduce to mean = b eps / r,
    second = b D1^2 eps^3 / r^3 + b^2 eps^2 / r^2, and the quartic
    b^4 e^4/r^4 + 6 b^3 D1^2 e^5/r^5 + 15 b^2 D1^4 e^6/r^6 + 15 b D1^6 e^7/r^7.
    """
    mu = law.mean
    rho = law.noise**2 / (law.distance * law.drift)  # mu / shape
    m1 = mu
    m2 = mu**2 * (1.0 + rho)
    m4 = mu**4 * (1.0 + 6.0 * rho + 15.0 * rho**2 + 15.0 * rho**3)
    return m1, m2, m4


def fpt_mgf(law: FirstPassageLaw, s) -> np.ndarray:
    """Laplace transform E[exp(-s tau)], closed form, defined for all s >= 0."""
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ParamError("s >= 0 violated")
    d, v, s2 = law.distance, law.drift, law.noise**2
    val = np.exp(-(d * v / s2) * (np.sqrt(1.0 + 2.0 * s2 * s / v**2) - 1.0))
    return val if val.ndim else float(val)


def fpt_sample_n(law: FirstPassageLaw, stream: RngStream, n: int) -> np.ndarray:
    """n exact inverse-Gaussian samples (no time discretization).

    Transform method: square a standard normal, solve the quadratic for the
    candidate root, then select between the two roots with the standard
    acceptance ratio mu / (mu + x).
    """
    if n < 0:
        raise ParamError("n >= 0 violated")
    gen = stream.generator()
    return _ig_draw(gen, law.mean, law.shape, n)


def fpt_sample(law: FirstPassageLaw, stream: RngStream) -> float:
    """One exact inverse-Gaussian sample; strictly positive."""
    return float(fpt_sample_n(law, stream, 1)[0])


def _ig_draw(gen: np.random.Generator, mu: float, lam: float, n: int) -> np.ndarray:
    nu = gen.normal(size=n)
    y = nu * nu
    x = mu + mu * mu * y / (2.0 * lam) - (mu / (2.0 * lam)) * np.sqrt(
        4.0 * mu * lam * y + mu * mu * y * y
    )
    # roundoff can pin the small root to 0 for extreme y; root product is mu^2
    x = np.maximum(x, np.finfo(float).tiny)
    z = gen.uniform(size=n)
    return np.where(z <= mu / (mu + x), x, mu * mu / x)


def truncation_point(law: FirstPassageLaw, tail: float = 1e-12) -> float:
    """Upper limit beyond which the law's tail mass is below ``tail``."""
    t = law.mean + 10.0 * np.sqrt(law.variance)
    for _ in range(200):
        if 1.0 - fpt_cdf(law, t) < tail:
            return float(t)
        t *= 2.0
    raise NumericalError(f"could not truncate tail below {tail} for {law}")


def tail_s_max(params: ModelParams) -> float:
    """Admissible upper limit for the Chernoff parameter s."""
    return min(
        params.r * params.b / (params.epsilon * params.D1**2),
        params.m * params.b / params.D0**2,
    )


@dataclass(frozen=True)
class TailBoundParams:
    """Chernoff parameter s together with its admissible range (0, s_max)."""

    s: float
    s_max: float

    def __post_init__(self):
        if not (0 < self.s < self.s_max):
            raise ParamError("0 < s < s_max violated")

    @classmethod
    def for_params(cls, params: ModelParams, s: float) -> "TailBoundParams":
        return cls(s=s, s_max=tail_s_max(params))


def event_count_tail_bound(
    params: ModelParams, s, N: int, sharp: bool = False
) -> float:
    """Upper bound on P(number of rain onsets in [0, T] equals N).

    The bound is exp(s T) times the N-th power of the dry-duration Laplace
    transform; with ``sharp=True`` the rain-duration transform is kept as
    well (the pre-limit product form, tighter for epsilon > 0).
    """
    if N < 1:
        raise ParamError("N >= 1 violated")
    if isinstance(s, TailBoundParams):
        tb = s
        if tb.s_max > tail_s_max(params):
            raise ParamError("s_max inconsistent with params")
    else:
        tb = TailBoundParams.for_params(params, float(s))
    # log bound = s T + N log M_dry(s) [+ N log M_rain(s) for the sharp form]
    log_bound = tb.s * params.T + N * _log_mgf(dry_law(params), tb.s)
    if sharp:
        log_bound += N * _log_mgf(rain_law(params), tb.s)
    return float(np.exp(log_bound))


def _log_mgf(law: FirstPassageLaw, s: float) -> float:
    d, v, s2 = law.distance, law.drift, law.noise**2
    return -(d * v / s2) * (np.sqrt(1.0 + 2.0 * s2 * s / v**2) - 1.0)


def event_count_tail_bound_min(
    params: ModelParams, N: int, n_grid: int = 50, sharp: bool = False
) -> float:
    """Tail bound minimized over a geometric grid of s in (0, s_max)."""
    s_hi = tail_s_max(params)
    grid = np.geomspace(s_hi * 1e-6, s_hi * (1.0 - 1e-9), n_grid)
    return min(event_count_tail_bound(params, TailBoundParams(s, s_hi), N, sharp=sharp) for s in grid)


def renewal_simulate_exact(params: ModelParams, stream: RngStream) -> EventLog:
    """Alternate exact dry/rain durations until the next onset passes T.

    Every rain onset inside the horizon is recorded with its full sampled
    duration (the final rain spell may extend past T).
    """
    validate(params)
    gen = stream.generator()
    d_law, r_law = dry_law(params), rain_law(params)
    ds, rs, re = [], [], []
    t = 0.0
    while True:
        td = float(_ig_draw(gen, d_law.mean, d_law.shape, 1)[0])
        onset = t + td
        if onset > params.T:
            break
        tr = float(_ig_draw(gen, r_law.mean, r_law.shape, 1)[0])
        ds.append(t)
        rs.append(onset)
        re.append(onset + tr)
        t = onset + tr
    return EventLog(np.asarray(ds), np.asarray(rs), np.asarray(re))


def renewal_event_counts(params: ModelParams, n_paths: int, stream: RngStream) -> np.ndarray:
    """Rain-onset counts N(T) for an ensemble, via vectorized exact sampling."""
    validate(params)
    gen = stream.generator()
    d_law, r_law = dry_law(params), rain_law(params)
    mean_cycle = d_law.mean + r_law.mean
    sd_n = np.sqrt(params.T * (d_law.variance + r_law.variance) / mean_cycle**3)
    cols = int(np.ceil(params.T / mean_cycle + 10.0 * sd_n + 20.0))
    td = _ig_draw(gen, d_law.mean, d_law.shape, n_paths * cols).reshape(n_paths, cols)
    tr = _ig_draw(gen, r_law.mean, r_law.shape, n_paths * cols).reshape(n_paths, cols)
    while True:
        cycles = td + tr
        starts = np.cumsum(cycles, axis=1) - cycles  # dry_start of each cycle
        onsets = starts + td
        if not np.all(onsets[:, -1] <= params.T):
            break
        extra = max(8, cols // 2)
        td = np.hstack([td, _ig_draw(gen, d_law.mean, d_law.shape, n_paths * extra).reshape(n_paths, extra)])
        tr = np.hstack([tr, _ig_draw(gen, r_law.mean, r_law.shape, n_paths * extra).reshape(n_paths, extra)])
        cols += extra
    return (onsets <= params.T).sum(axis=1)
