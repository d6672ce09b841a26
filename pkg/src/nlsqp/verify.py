"""Independent validation of constructed solutions.

None of this feeds back into the constructor: weighted lattice norms,
pointwise PDE residuals at space-time collocation points, and a split-step
spectral integrator that evolves the initial data and watches the seed
modes drift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .lattice import ProblemSpec, SiteIndex, SparseSeries, FrequencyVector


class VerifyError(RuntimeError):
    pass


class GridTooCoarse(VerifyError):
    pass


class IntegratorInstability(VerifyError):
    def __init__(self, message: str, suggested_dt: float):
        super().__init__(message)
        self.suggested_dt = suggested_dt


@dataclass(frozen=True)
class WeightSpec:
    """Exponential lattice weight, flat on the core |x|_1 <= x0:
    rho(x) = exp(beta * max(0, |x|_1 - x0))."""

    beta: float = 0.1
    x0: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.beta < 1.0):
            raise VerifyError("weight exponent beta must lie in (0, 1)")
        if self.x0 < 0:
            raise VerifyError("x0 must be nonnegative")

    def log_weight(self, s: SiteIndex) -> float:
        return self.beta * max(0.0, s.l1() - self.x0)


def default_weight(spec: ProblemSpec, beta: float = 0.1) -> WeightSpec:
    x0 = max(s.l1() for s in spec.seed_sites())
    return WeightSpec(beta=beta, x0=float(x0))


def weighted_norm(f: SparseSeries, w: WeightSpec) -> float:
    """sqrt(sum |f(x)|^2 rho(x)^2), accumulated in the log domain so large
    supports cannot overflow."""
    logs = []
    for s, val in f.items():
        a = abs(val)
        if a > 0:
            logs.append(2.0 * (math.log(a) + w.log_weight(s)))
    if not logs:
        return 0.0
    top = max(logs)
    acc = sum(math.exp(x - top) for x in logs)
    log_norm = 0.5 * (top + math.log(acc))
    if log_norm > 709.0:  # beyond float range; the log was still exact
        return math.inf
    return math.exp(log_norm)


# ---------------------------------------------------------------------------
# Collocation residual


@dataclass
class ResidualReport:
    sup: float
    mean: float
    t_points: int
    x_points: int


def pde_residual(
    u: SparseSeries,
    omega: FrequencyVector,
    spec: ProblemSpec,
    grid: Optional[Tuple[int, int]] = None,
) -> ResidualReport:
    """Evaluate i u_t + Lap(u) - |u|^{2p} u - m u on a collocation grid.

    The series is in physical scaling.  Time and space derivatives are
    exact on each term (in.w and -|j|^2); the nonlinearity is applied
    pointwise.  The grid must resolve the support: at least 2*max|j|+1
    points per space dimension and 2*max|n.w|+1 in time.
    """
    terms = u.items()
    if not terms:
        return ResidualReport(0.0, 0.0, 0, 0)
    narr = np.array([s.n for s, _ in terms], dtype=float)
    jarr = np.array([s.j for s, _ in terms], dtype=float)
    amps = np.array([v for _, v in terms], dtype=complex)
    w = np.array(omega.omega, dtype=float)
    tfreq = narr @ w
    jsq = np.sum(jarr * jarr, axis=1)

    max_j = int(np.max(np.abs(jarr))) if jarr.size else 0
    max_t = float(np.max(np.abs(tfreq))) if tfreq.size else 0.0
    if grid is None:
        grid = (max(2 * int(math.ceil(max_t)) + 1, 16), max(2 * max_j + 1, 9))
    t_points, x_points = grid
    if x_points < 2 * max_j + 1:
        raise GridTooCoarse(
            f"need at least {2 * max_j + 1} spatial points per dimension")
    if t_points < 2 * max_t:
        raise GridTooCoarse(f"need at least {2 * max_t:.0f} time points")

    tg = np.linspace(0.0, 2 * math.pi, t_points, endpoint=False)
    xg = np.linspace(0.0, 2 * math.pi, x_points, endpoint=False)
    # e^{i n.w t} factor: (terms, T)
    et = np.exp(1j * np.outer(tfreq, tg))
    # e^{i j.x} factor per dimension, collapsed to (terms, X^d)
    ex = np.ones((len(terms), 1), dtype=complex)
    for dim in range(spec.d):
        phase = np.exp(1j * np.outer(jarr[:, dim], xg))
        ex = (ex[:, :, None] * phase[:, None, :]).reshape(len(terms), -1)

    u_field = np.einsum("kt,kx,k->tx", et, ex, amps)
    lin_field = np.einsum("kt,kx,k->tx", et, ex, -(tfreq + jsq) * amps)
    resid = lin_field - (np.abs(u_field) ** (2 * spec.p)) * u_field \
        - spec.phase_m * u_field
    flat = np.abs(resid).ravel()
    return ResidualReport(sup=float(flat.max()), mean=float(flat.mean()),
                          t_points=t_points, x_points=x_points)


# ---------------------------------------------------------------------------
# Split-step evolution


@dataclass
class DriftReport:
    times: np.ndarray
    mode_amps: np.ndarray       # (samples, b) |psi_hat(t, j_k)|
    mode_phases: np.ndarray     # (samples, b) unwrapped phase of psi_hat(t, j_k)
    amp_drift: float            # max relative drift of the seed amplitudes
    phase_error: np.ndarray     # (samples, b) phase minus the -omega_k t law
    mass_drift: float           # relative l2 mass drift over the run
    dt: float
    grid: int


def evolve_drift(
    u: SparseSeries,
    omega: FrequencyVector,
    spec: ProblemSpec,
    T: float,
    dt: float,
    grid_points: Optional[int] = None,
    n_samples: int = 200,
) -> DriftReport:
    """Strang split-step integration of the physical equation from psi(0, x)
    = u(0, x), tracking the seed-mode amplitudes and phases."""
    if spec.d > 2:
        raise VerifyError("split-step validator supports d <= 2")
    terms = u.items()
    max_j = max((max(abs(c) for c in s.j) for s, _ in terms), default=1)
    if grid_points is None:
        grid_points = max(16, 2 ** math.ceil(math.log2(2 * (2 * spec.p + 1) * max_j + 2)))
    m = grid_points
    if dt > 0.5:
        raise IntegratorInstability("dt too large for the phase rotation", 0.1)

    # psi(0, x) on the grid: collapse the n direction (t = 0).
    shape = (m,) * spec.d
    psi = np.zeros(shape, dtype=complex)
    for s, val in terms:
        idx = tuple(c % m for c in s.j)
        psi[idx] += val
    psi = np.fft.ifftn(psi) * psi.size  # values on the grid

    k1 = np.fft.fftfreq(m, d=1.0 / m)
    if spec.d == 1:
        ksq = k1 ** 2
    else:
        kx, ky = np.meshgrid(k1, k1, indexing="ij")
        ksq = kx ** 2 + ky ** 2
    lin_phase = np.exp(-1j * ksq * dt)

    steps = int(round(T / dt))
    # Sample densely enough that no mode advances more than ~pi/2 between
    # samples, otherwise phase unwrapping aliases the rotation rate.
    max_omega = max(1.0, max(abs(w) for w in omega.omega))
    max_interval = 0.5 * math.pi / max_omega
    sample_every = max(1, min(steps // max(1, n_samples), int(max_interval / dt)))
    mode_bins = [tuple(c % m for c in j) for j in spec.j_list]

    mass0 = float(np.sum(np.abs(psi) ** 2))
    times: List[float] = []
    amps: List[List[float]] = []
    phases: List[List[float]] = []

    def record(tnow: float):
        ft = np.fft.fftn(psi) / psi.size
        times.append(tnow)
        amps.append([abs(ft[bin]) for bin in mode_bins])
        phases.append([math.atan2(ft[bin].imag, ft[bin].real) for bin in mode_bins])

    record(0.0)
    half = dt / 2.0
    mfac = spec.phase_m
    for step in range(steps):
        nl = np.abs(psi) ** (2 * spec.p) + mfac
        psi = psi * np.exp(-1j * nl * half)
        psi = np.fft.ifftn(np.fft.fftn(psi) * lin_phase)
        nl = np.abs(psi) ** (2 * spec.p) + mfac
        psi = psi * np.exp(-1j * nl * half)
        if (step + 1) % sample_every == 0 or step == steps - 1:
            record((step + 1) * dt)
        mass = float(np.sum(np.abs(psi) ** 2))
        if mass0 > 0 and abs(mass - mass0) / mass0 > 1e-3:
            raise IntegratorInstability(
                f"mass drifted {abs(mass - mass0) / mass0:.2e} at t={step * dt:.3f}",
                suggested_dt=dt / 4.0)

    times_a = np.array(times)
    amps_a = np.array(amps)
    phases_a = np.unwrap(np.array(phases), axis=0)
    a0 = amps_a[0]
    amp_drift = float(np.max(np.abs(amps_a - a0) / np.maximum(a0, 1e-300)))
    expected = -np.outer(times_a, np.array(omega.omega))
    phase_err = phases_a - phases_a[0] - expected
    mass_end = float(np.sum(np.abs(psi) ** 2))
    mass_drift = abs(mass_end - mass0) / mass0 if mass0 > 0 else 0.0
    return DriftReport(times=times_a, mode_amps=amps_a, mode_phases=phases_a,
                       amp_drift=amp_drift, phase_error=phase_err,
                       mass_drift=mass_drift, dt=dt, grid=m)
