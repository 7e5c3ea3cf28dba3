"""Finite-volume solvers for the coupled and limiting moisture densities.

The coupled system evolves a dry-state density rho0 on (q_min, b) and a
rain-state density rho1 on (0, q_max).  Each field has one absorbing
boundary (rho0 at q = b, rho1 at q = 0); the probability flux absorbed
there re-enters the partner field as a point source (rho0's outflux feeds
rho1 at q = b, rho1's outflux feeds rho0 at q = 0).  The limit equation
keeps only the dry field and reinjects its own outflux at q = 0, the
teleporting boundary.

Discretization: cell-centered uniform grid whose faces hit q = 0 and
q = b exactly; upwind advection and centered diffusion, both implicit
(one tridiagonal solve per field per step, unconditionally stable, which
the stiff rain drift r/epsilon requires); delta sources realized as
single-step injections of exactly the mass absorbed at the partner's
boundary, so total mass is conserved to rounding by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_banded

from .core import ModelParams, NumericalError, ParamError, validate

__all__ = [
    "PdeGrid",
    "DensityField",
    "FluxPair",
    "BoundaryLayerProfile",
    "initial_field",
    "solve_coupled_fp",
    "solve_limit_fp",
    "solve_coupled_stationary",
    "solve_limit_stationary",
    "flux_pair",
    "boundary_layer_profile",
    "stationary_rain_fraction",
    "layer_width",
]

_MASS_TOL_PER_STEP = 1e-8
_NEG_FLOOR = -1e-12
_EDGE_MASS_TOL = 1e-8


def layer_width(params: ModelParams) -> float:
    """Decay scale eps*D1^2/(2r) of the rain density near q = 0."""
    return params.epsilon * params.D1**2 / (2.0 * params.r)


@dataclass(frozen=True)
class PdeGrid:
    """Uniform cell-centered grid; q = 0 and q = b lie on cell faces.

    The dry field occupies cells in (q_min, b); the rain field (coupled
    system only) occupies cells in (0, q_max).
    """

    q_min: float
    q_max: float
    dq: float
    dt: float

    def __post_init__(self):
        if self.dq <= 0 or self.dt <= 0:
            raise ParamError("dq > 0 and dt > 0 violated")
        for name, edge in (("q_min", self.q_min), ("q_max", self.q_max)):
            k = edge / self.dq
            if abs(k - round(k)) > 1e-9:
                raise ParamError(f"{name} must be a multiple of dq")
        if self.q_min >= 0:
            raise ParamError("q_min < 0 violated")

    @classmethod
    def for_params(
        cls,
        params: ModelParams,
        kind: str = "coupled",
        dq: Optional[float] = None,
        dt: Optional[float] = None,
        span_factor: float = 20.0,
    ) -> "PdeGrid":
        """Grid defaults: dq resolves the rain boundary layer (coupled) or
        b/500 (limit); q_min sits span_factor dry e-folding lengths below 0;
        q_max extends 12 layer widths above b (coupled) or equals b."""
        b = params.b
        if dq is None:
            dq = layer_width(params) / 10.0 if kind == "coupled" else b / 500.0
        m_cells = max(1, round(b / dq))
        dq = b / m_cells
        efold = params.D0**2 / (2.0 * params.m) if params.m > 0 else b
        q_min = -dq * math.ceil(span_factor * efold / dq)
        if kind == "coupled":
            q_max = b + dq * max(1, math.ceil(12.0 * layer_width(params) / dq))
        else:
            q_max = b
        if dt is None:
            dt = 2e-3
        return cls(q_min=q_min, q_max=q_max, dq=dq, dt=dt)

    def check_resolves(self, params: ModelParams) -> None:
        if self.dq > params.epsilon * params.D1**2 / (10.0 * params.r):
            raise ParamError("dq <= eps*D1^2/(10 r) violated: grid cannot resolve the boundary layer")

    def dry_centers(self, b: float) -> np.ndarray:
        n = round((b - self.q_min) / self.dq)
        return self.q_min + (np.arange(n) + 0.5) * self.dq

    def rain_centers(self) -> np.ndarray:
        n = round(self.q_max / self.dq)
        return (np.arange(n) + 0.5) * self.dq


@dataclass(frozen=True)
class DensityField:
    """Dry/rain densities on the grid at one instant.

    ``rho1``/``centers1`` are None for the single-field limit equation.
    """

    centers0: np.ndarray
    rho0: np.ndarray
    t: float
    dq: float
    centers1: Optional[np.ndarray] = None
    rho1: Optional[np.ndarray] = None

    def mass(self) -> float:
        m = float(np.sum(self.rho0)) * self.dq
        if self.rho1 is not None:
            m += float(np.sum(self.rho1)) * self.dq
        return m

    def rho0_at(self, q) -> np.ndarray:
        return np.interp(q, self.centers0, self.rho0, left=0.0, right=0.0)

    def rho1_at(self, q) -> np.ndarray:
        if self.rho1 is None:
            return np.zeros_like(np.asarray(q, dtype=float))
        return np.interp(q, self.centers1, self.rho1, left=0.0, right=0.0)


@dataclass(frozen=True)
class FluxPair:
    """Boundary-normal probability fluxes out of the absorbing faces."""

    f0_at_b: float
    f1_at_0: float


@dataclass(frozen=True)
class BoundaryLayerProfile:
    """First-order rain density shape near q = 0 for small epsilon.

    value(q) = (f0/r) (1 - exp(-q / width)) for 0 <= q <= b and 0 outside,
    where width = eps*D1^2/(2r).  The plateau level is f0/r; the physical
    rain density is epsilon times this profile to leading order.  The
    profile's own boundary flux at q = 0 reproduces f0 exactly, which is
    the matched-asymptotics flux identity f1(0) = f0(b).
    """

    flux_at_threshold: float
    width: float
    threshold: float

    @property
    def plateau(self) -> float:
        return self.flux_at_threshold

    @property
    def implied_flux_at_zero(self) -> float:
        return self.flux_at_threshold

    def __call__(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        out = np.where(
            (q >= 0.0) & (q <= self.threshold),
            self.plateau * (1.0 - np.exp(-np.maximum(q, 0.0) / self.width)),
            0.0,
        )
        return out if out.ndim else float(out)


def boundary_layer_profile(params: ModelParams, f0_at_b: float) -> BoundaryLayerProfile:
    """Asymptotic rain-density profile scaled by the dry boundary flux."""
    w = layer_width(params)
    if not w < params.b / 10.0:
        raise ParamError("layer width >= b/10: epsilon too large for the asymptotic profile")
    return BoundaryLayerProfile(
        flux_at_threshold=f0_at_b / params.r, width=w, threshold=params.b
    )


def stationary_rain_fraction(params: ModelParams) -> tuple[float, float]:
    """Renewal-reward diagnostics: (time fraction raining, mean rain amount rate).

    fraction = E[rain spell]/(E[dry spell] + E[rain spell]) = eps*m/(r + eps*m);
    the mean delivered-rain rate is (r/eps) * fraction = r*m/(r + eps*m).
    """
    em = params.epsilon * params.m
    return em / (params.r + em), params.r * params.m / (params.r + em)


class _Tridiag:
    """Implicit upwind advection-diffusion stepper for one field."""

    def __init__(self, n, dq, dt, drift, diff_half, left_bc, right_bc):
        # face coefficients: F_j = a_j * rho_{j-1} + b_j * rho_j
        a = np.full(n + 1, max(drift, 0.0) + diff_half / dq)
        b = np.full(n + 1, min(drift, 0.0) - diff_half / dq)
        if left_bc == "noflux":
            a[0] = b[0] = 0.0
        elif left_bc == "absorbing":
            a[0], b[0] = 0.0, min(drift, 0.0) - 2.0 * diff_half / dq
        else:
            raise ParamError(f"unknown boundary condition {left_bc!r}")
        if right_bc == "noflux":
            a[n] = b[n] = 0.0
        elif right_bc == "absorbing":
            a[n], b[n] = max(drift, 0.0) + 2.0 * diff_half / dq, 0.0
        else:
            raise ParamError(f"unknown boundary condition {right_bc!r}")
        self.a, self.b = a, b
        self.n, self.dq, self.dt = n, dq, dt
        # banded matrix of I + dt * L, L rho = (F_{i+1} - F_i)/dq
        ab = np.zeros((3, n))
        ab[0, 1:] = dt * b[1:n] / dq  # super-diagonal
        ab[1, :] = 1.0 + dt * (a[1:] - b[:n]) / dq
        ab[2, :-1] = -dt * a[1:n] / dq  # sub-diagonal
        self.ab = ab

    def step(self, rho: np.ndarray) -> np.ndarray:
        return solve_banded((1, 1), self.ab, rho)


def initial_field(params: ModelParams, grid: PdeGrid, coupled: bool = True) -> DensityField:
    """Default start: normalized Gaussian bump of width b/20 in rho0 at q0."""
    c0 = grid.dry_centers(params.b)
    w = params.b / 20.0
    rho0 = np.exp(-0.5 * ((c0 - params.q0) / w) ** 2)
    rho0 /= np.sum(rho0) * grid.dq
    if coupled:
        c1 = grid.rain_centers()
        return DensityField(c0, rho0, 0.0, grid.dq, c1, np.zeros_like(c1))
    return DensityField(c0, rho0, 0.0, grid.dq)


def _check_field(rho, step, label):
    if not np.isfinite(rho).all():
        raise NumericalError(f"non-finite {label} density at step {step}")
    if rho.min() < _NEG_FLOOR:
        raise NumericalError(f"{label} density below the negativity floor at step {step}: {rho.min():.3e}")


class _CoupledStepper:
    """One explicit-exchange step of the two implicitly-updated fields."""

    def __init__(self, params, grid):
        b, dq, dt = params.b, grid.dq, grid.dt
        self.c0 = grid.dry_centers(b)
        self.c1 = grid.rain_centers()
        n0, n1 = self.c0.size, self.c1.size
        self.solver0 = _Tridiag(n0, dq, dt, params.m, params.D0**2 / 2.0, "noflux", "absorbing")
        self.solver1 = _Tridiag(
            n1, dq, dt, -params.rain_rate, params.D1**2 / 2.0, "absorbing", "noflux"
        )
        # injection cells: rho1 around the face at q=b, rho0 around q=0
        ib = round(b / dq)
        self.inj1 = (ib - 1, min(ib, n1 - 1))
        iz = round(-grid.q_min / dq)
        self.inj0 = (iz - 1, iz)
        self.dq, self.dt = dq, dt

    def step(self, rho0, rho1):
        dq = self.dq
        m0_old = np.sum(rho0) * dq
        rho0_star = self.solver0.step(rho0)
        absorbed0 = m0_old - np.sum(rho0_star) * dq
        rho1_in = rho1.copy()
        rho1_in[self.inj1[0]] += 0.5 * absorbed0 / dq
        rho1_in[self.inj1[1]] += 0.5 * absorbed0 / dq
        m1_in = np.sum(rho1_in) * dq
        rho1_new = self.solver1.step(rho1_in)
        absorbed1 = m1_in - np.sum(rho1_new) * dq
        rho0_new = rho0_star.copy()
        rho0_new[self.inj0[0]] += 0.5 * absorbed1 / dq
        rho0_new[self.inj0[1]] += 0.5 * absorbed1 / dq
        return rho0_new, rho1_new, absorbed0 / self.dt, absorbed1 / self.dt


class _LimitStepper:
    """One teleporting-boundary step: absorb at b, reinject at q = 0."""

    def __init__(self, params, grid):
        self.c0 = grid.dry_centers(params.b)
        n = self.c0.size
        self.solver = _Tridiag(
            n, grid.dq, grid.dt, params.m, params.D0**2 / 2.0, "noflux", "absorbing"
        )
        iz = round(-grid.q_min / grid.dq)
        self.inj = (iz - 1, iz)
        self.dq, self.dt = grid.dq, grid.dt

    def step(self, rho):
        dq = self.dq
        m_old = np.sum(rho) * dq
        rho_new = self.solver.step(rho)
        absorbed = m_old - np.sum(rho_new) * dq
        rho_new[self.inj[0]] += 0.5 * absorbed / dq
        rho_new[self.inj[1]] += 0.5 * absorbed / dq
        return rho_new, absorbed / self.dt


def _edge_mass_check(rho, dq, label):
    edge = float(np.sum(rho[:5])) * dq
    if edge > _EDGE_MASS_TOL:
        raise NumericalError(
            f"truncation-edge mass {edge:.3e} in {label} exceeds {_EDGE_MASS_TOL}; widen the domain"
        )


def _run(params, grid, t_end, rho0, rho1, snapshot_times, coupled, stop_tol=None):
    stepper = _CoupledStepper(params, grid) if coupled else _LimitStepper(params, grid)
    snaps_at = sorted(snapshot_times or [])
    out: list[DensityField] = []
    t = 0.0
    step = 0
    mass = np.sum(rho0) * grid.dq + (np.sum(rho1) * grid.dq if coupled else 0.0)
    f0_rate = f1_rate = 0.0
    n_steps = math.ceil(t_end / grid.dt - 1e-12)

    def snapshot(tt):
        if coupled:
            return DensityField(stepper.c0, rho0.copy(), tt, grid.dq, stepper.c1, rho1.copy())
        return DensityField(stepper.c0, rho0.copy(), tt, grid.dq)

    while step < n_steps:
        if coupled:
            rho0_n, rho1_n, f0_rate, f1_rate = stepper.step(rho0, rho1)
            new_mass = (np.sum(rho0_n) + np.sum(rho1_n)) * grid.dq
        else:
            rho0_n, f0_rate = stepper.step(rho0)
            rho1_n = rho1
            new_mass = np.sum(rho0_n) * grid.dq
        if abs(new_mass - mass) > _MASS_TOL_PER_STEP:
            raise NumericalError(
                f"mass drift {new_mass - mass:.3e} at step {step} (t={t:.4f}) exceeds {_MASS_TOL_PER_STEP}"
            )
        if step % 64 == 0:
            _check_field(rho0_n, step, "dry")
            if coupled:
                _check_field(rho1_n, step, "rain")
        if stop_tol is not None:
            delta = float(np.max(np.abs(rho0_n - rho0)))
            if coupled:
                delta = max(delta, float(np.max(np.abs(rho1_n - rho1))))
            scale = max(float(np.max(rho0_n)), 1e-12)
            if delta / (grid.dt * scale) < stop_tol and step > 10:
                rho0, rho1, mass = rho0_n, rho1_n, new_mass
                t += grid.dt
                break
        rho0, rho1, mass = rho0_n, rho1_n, new_mass
        t += grid.dt
        step += 1
        while snaps_at and t >= snaps_at[0] - 1e-12:
            snaps_at.pop(0)
            out.append(snapshot(t))

    _check_field(rho0, step, "dry")
    _edge_mass_check(rho0, grid.dq, "dry (left edge)")
    if coupled:
        _check_field(rho1, step, "rain")
        _edge_mass_check(rho1[::-1], grid.dq, "rain (right edge)")
    out.append(snapshot(t))
    return out, f0_rate, f1_rate


def solve_coupled_fp(
    params: ModelParams,
    grid: PdeGrid,
    t_end: float,
    initial: Optional[DensityField] = None,
    snapshot_times: Optional[Sequence[float]] = None,
    strict: bool = True,
) -> list[DensityField]:
    """Evolve the coupled dry/rain system; returns snapshots (final included)."""
    validate(params, degenerate_ok=not strict)
    if strict:
        grid.check_resolves(params)
    if initial is None:
        initial = initial_field(params, grid, coupled=True)
    if abs(initial.mass() - 1.0) > 1e-6:
        raise ParamError("initial mass must be 1")
    fields, _, _ = _run(
        params, grid, t_end, initial.rho0.copy(), initial.rho1.copy(), snapshot_times, True
    )
    return fields


def solve_limit_fp(
    params: ModelParams,
    grid: PdeGrid,
    t_end: float,
    initial: Optional[DensityField] = None,
    snapshot_times: Optional[Sequence[float]] = None,
    strict: bool = True,
) -> list[DensityField]:
    """Evolve the teleporting-boundary limit equation on (q_min, b)."""
    validate(params, degenerate_ok=not strict)
    if initial is None:
        initial = initial_field(params, grid, coupled=False)
    if abs(initial.mass() - 1.0) > 1e-6:
        raise ParamError("initial mass must be 1")
    fields, _, _ = _run(
        params, grid, t_end, initial.rho0.copy(), np.empty(0), snapshot_times, False
    )
    return fields


def solve_coupled_stationary(
    params: ModelParams,
    grid: PdeGrid,
    t_max: float = 200.0,
    stop_tol: float = 1e-5,
    strict: bool = True,
) -> tuple[DensityField, FluxPair]:
    """Run the coupled system to its stationary state.

    Returns the final field and the absorbed-mass flux rates of the last
    step (the bookkeeping route; ``flux_pair`` gives the profile route).
    """
    validate(params, degenerate_ok=not strict)
    if strict:
        grid.check_resolves(params)
    init = initial_field(params, grid, coupled=True)
    fields, f0, f1 = _run(
        params, grid, t_max, init.rho0.copy(), init.rho1.copy(), None, True, stop_tol=stop_tol
    )
    return fields[-1], FluxPair(f0_at_b=f0, f1_at_0=f1)


def solve_limit_stationary(
    params: ModelParams,
    grid: PdeGrid,
    t_max: float = 200.0,
    stop_tol: float = 1e-5,
    strict: bool = True,
) -> tuple[DensityField, float]:
    """Run the limit equation to stationarity; returns field and boundary flux."""
    validate(params, degenerate_ok=not strict)
    init = initial_field(params, grid, coupled=False)
    fields, f0, _ = _run(
        params, grid, t_max, init.rho0.copy(), np.empty(0), None, False, stop_tol=stop_tol
    )
    return fields[-1], f0


def flux_pair(field: DensityField, params: ModelParams) -> FluxPair:
    """Boundary fluxes estimated from the density profiles.

    Second-order one-sided differences against the absorbing face value 0:
    f0(b) = (D0^2/2) * drho0/dq magnitude at b, f1(0) = (D1^2/2) * drho1/dq
    at 0.  Independent of the solver's absorbed-mass bookkeeping, so the
    two routes cross-check each other.
    """
    dq = field.dq
    r0 = field.rho0
    # centers at b - dq/2, b - 3dq/2; face value 0 at b
    slope0 = (9.0 * r0[-1] - r0[-2]) / (3.0 * dq)
    f0 = params.D0**2 / 2.0 * slope0
    if field.rho1 is None or field.rho1.size < 2:
        return FluxPair(f0_at_b=f0, f1_at_0=float("nan"))
    r1 = field.rho1
    slope1 = (9.0 * r1[0] - r1[1]) / (3.0 * dq)
    f1 = params.D1**2 / 2.0 * slope1
    return FluxPair(f0_at_b=f0, f1_at_0=f1)
