"""Ohmic harmonic bath: spectral density, response function, and the
discretized influence-functional coefficients.

Units: hbar = 1, frequencies in units of the tunneling amplitude, times in
its inverse.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.integrate import quad

from .errors import DomainError, NumericalToleranceError

__all__ = [
    "OhmicBath",
    "ResponseSamples",
    "EtaTable",
    "spectral_density",
    "response_function",
    "response_samples",
    "twice_integrated_response",
    "dephasing_exponent",
    "eta_table",
]

# integrand values at omega below this use the analytic omega -> 0 limit
SMALL_OMEGA = 1e-8
QUAD_EPSABS = 1e-10
# Q(t) enters the eta coefficients through four-term differences
Q_EPSABS = 1e-13
QUAD_LIMIT = 2000
CUTOFF_MULTIPLE = 60.0


@dataclass(frozen=True)
class OhmicBath:
    """J(w) = (pi/2) xi w exp(-w/omega_c) at inverse temperature beta.

    ``xi = 0`` is accepted as the decoupled limit.
    """

    xi: float
    omega_c: float
    beta: float

    def __post_init__(self):
        for name in ("xi", "omega_c", "beta"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise DomainError(f"bath parameter {name} must be finite, got {value}")
        if self.xi < 0:
            raise DomainError(f"Kondo parameter must be >= 0, got {self.xi}")
        if self.omega_c <= 0:
            raise DomainError(f"cutoff frequency must be > 0, got {self.omega_c}")
        if self.beta <= 0:
            raise DomainError(f"inverse temperature must be > 0, got {self.beta}")

    @property
    def omega_max(self) -> float:
        return CUTOFF_MULTIPLE * self.omega_c


def spectral_density(bath: OhmicBath, omega):
    """Ohmic spectral density with exponential cutoff."""
    w = np.asarray(omega, dtype=float)
    if np.any(w < 0):
        raise DomainError("spectral density is defined for omega >= 0")
    out = 0.5 * np.pi * bath.xi * w * np.exp(-w / bath.omega_c)
    return float(out) if out.ndim == 0 else out


def _thermal_weight(bath, w):
    # J(w) coth(beta w / 2) / pi, finite at w -> 0 (limit xi / beta)
    if w < SMALL_OMEGA:
        return bath.xi / bath.beta
    return 0.5 * bath.xi * w * math.exp(-w / bath.omega_c) / math.tanh(0.5 * bath.beta * w)


def _quad(f, a, b, what, epsabs=QUAD_EPSABS, **kw):
    out = quad(f, a, b, epsabs=epsabs, epsrel=1e-11, limit=QUAD_LIMIT, full_output=1, **kw)
    value, err = out[0], out[1]
    if len(out) == 4 and err > 100 * epsabs:
        raise NumericalToleranceError(f"quadrature for {what} did not converge", achieved=err)
    return value


def _quad_oscillating(f, a, b, t, what, epsabs=QUAD_EPSABS):
    """Adaptive quadrature of an integrand oscillating as cos/sin(w t).

    Breakpoints at every half period keep each panel smooth.  QUADPACK's
    Fourier-weighted rule is avoided: it returns wrong values with tiny
    error estimates for some frequencies (e.g. t = 1.1400000000000001).
    """
    if t == 0:
        return _quad(f, a, b, what, epsabs)
    half = math.pi / t
    k0 = math.floor(a / half) + 1
    k1 = math.ceil(b / half) - 1
    points = half * np.arange(k0, k1 + 1) if k1 >= k0 else None
    if points is None:
        return _quad(f, a, b, what, epsabs)
    out = quad(f, a, b, points=points, epsabs=epsabs, epsrel=1e-11,
               limit=max(QUAD_LIMIT, 4 * points.size + 50), full_output=1)
    if len(out) == 4 and out[1] > 100 * epsabs:
        raise NumericalToleranceError(f"quadrature for {what} did not converge", achieved=out[1])
    return out[0]


def response_function(bath: OhmicBath, t: float) -> complex:
    """Bath response alpha(t) = (1/pi) int J(w)[coth(beta w/2) cos(wt) - i sin(wt)] dw."""
    if t < 0:
        raise DomainError(f"response function is evaluated for t >= 0, got {t}")
    if bath.xi == 0:
        return 0j
    wmax = bath.omega_max
    f_re = lambda w: _thermal_weight(bath, w)
    f_im = lambda w: -0.5 * bath.xi * w * math.exp(-w / bath.omega_c)
    if t == 0:
        return complex(_quad(f_re, 0.0, wmax, "Re alpha(0)"), 0.0)
    re = _quad_oscillating(lambda w: f_re(w) * math.cos(w * t), 0.0, wmax, t, "Re alpha(t)")
    im = _quad_oscillating(lambda w: f_im(w) * math.sin(w * t), 0.0, wmax, t, "Im alpha(t)")
    return complex(re, im)


@dataclass(frozen=True)
class ResponseSamples:
    t_grid: np.ndarray
    alpha: np.ndarray


def response_samples(bath: OhmicBath, t_grid) -> ResponseSamples:
    t_grid = np.asarray(t_grid, dtype=float)
    alpha = np.array([response_function(bath, t) for t in t_grid])
    return ResponseSamples(t_grid, alpha)


def twice_integrated_response(bath: OhmicBath, t: float) -> complex:
    """Q(t) = int_0^t dt' int_0^t' dt'' alpha(t' - t'').

    This is the double time integral of the kernel over the triangle
    0 <= t'' <= t' <= t, carried out analytically in time so that only a
    frequency quadrature remains:

        Re Q = (1/pi) int J coth(beta w/2) (1 - cos wt) / w^2 dw
        Im Q = -(1/pi) int J (wt - sin wt) / w^2 dw
    """
    if t < 0:
        raise DomainError(f"Q(t) is defined for t >= 0, got {t}")
    if t == 0 or bath.xi == 0:
        return 0j
    xi, wc, beta = bath.xi, bath.omega_c, bath.beta
    wmax = bath.omega_max
    # below w1 = 1/t the integrands carry no oscillation; above it the
    # panels are split at the half periods of the cos/sin factors
    w1 = min(wmax, 1.0 / t)

    def re_f(w):
        if w < SMALL_OMEGA:
            return xi * t * t / (2.0 * beta)
        return 0.5 * xi * math.exp(-w / wc) / math.tanh(0.5 * beta * w) * (1.0 - math.cos(w * t)) / w

    def im_f(w):
        if w < SMALL_OMEGA:
            return 0.0
        return -0.5 * xi * math.exp(-w / wc) * (w * t - math.sin(w * t)) / w

    re = _quad(re_f, 0.0, w1, "Re Q(t)", epsabs=Q_EPSABS)
    im = _quad(im_f, 0.0, w1, "Im Q(t)", epsabs=Q_EPSABS)
    if w1 < wmax:
        re += _quad_oscillating(re_f, w1, wmax, t, "Re Q(t)", epsabs=Q_EPSABS)
        im += _quad_oscillating(im_f, w1, wmax, t, "Im Q(t)", epsabs=Q_EPSABS)
    return complex(re, im)


def dephasing_exponent(bath: OhmicBath, t: float) -> float:
    """Gamma(t) such that coherences decay as exp(-Gamma(t)) under pure dephasing.

    The influence functional on the constant paths s+ = +1, s- = -1 is
    exp(-4 Re Q(t)).
    """
    return 4.0 * twice_integrated_response(bath, t).real


@dataclass(frozen=True, eq=False)
class EtaTable:
    """Influence-functional coefficients on the symmetric Trotter grid.

    Path point k sits at t_k = k dt and couples to the bath over the cell
    [t_k - dt/2, t_k + dt/2]; the cells of the first point and of the final
    point are half width.  For k > k' the coefficient is the integral of
    alpha(t' - t'') over cell k x cell k'; for k = k' it is the integral over
    the lower triangle of the cell.

    ``q`` holds Q(m dt / 2) for m = 0 .. len(q) - 1.
    """

    dt: float
    kmax: int
    n_steps: int
    q: np.ndarray

    def _cell(self, k, final):
        lo = 0 if k == 0 else 2 * k - 1
        hi = 2 * final if k == final else 2 * k + 1
        return lo, hi

    def _Q(self, m):
        return self.q[m] if m > 0 else 0j

    def coefficient(self, k: int, kp: int, final: int) -> complex:
        """eta_{k,k'} for a path ending at point ``final`` (k >= k')."""
        if not 0 <= kp <= k <= final:
            raise IndexError(f"need 0 <= k' <= k <= final, got k={k}, k'={kp}, final={final}")
        if k - kp > self.kmax:
            return 0j
        a, b = self._cell(k, final)
        if k == kp:
            return self._Q(b - a)
        ap, bp = self._cell(kp, final)
        return self._Q(b - ap) - self._Q(b - bp) - self._Q(a - ap) + self._Q(a - bp)

    @cached_property
    def bulk(self) -> np.ndarray:
        """eta for two interior points, indexed by lag 0 .. kmax."""
        far = 10 * (self.kmax + 2)
        return np.array([self.coefficient(far, far - lag, far + 1) for lag in range(self.kmax + 1)])

    @cached_property
    def end(self) -> np.ndarray:
        """eta with k the final point and k' interior, indexed by lag."""
        far = 10 * (self.kmax + 2)
        return np.array([self.coefficient(far, far - lag, far) for lag in range(self.kmax + 1)])

    @cached_property
    def start(self) -> np.ndarray:
        """eta_{k,0} with k interior, indexed by k = 0 .. kmax (k = 0 is the self term)."""
        far = 10 * (self.kmax + 2)
        return np.array([self.coefficient(k, 0, far) for k in range(self.kmax + 1)])

    @cached_property
    def end_start(self) -> np.ndarray:
        """eta_{N,0} with N the final point, indexed by N = 0 .. kmax (entry 0 unused)."""
        out = np.zeros(self.kmax + 1, dtype=complex)
        for n in range(1, self.kmax + 1):
            out[n] = self.coefficient(n, 0, n)
        return out

    def lookup(self, k: int, kp: int, final: int) -> complex:
        """Table-driven equivalent of :meth:`coefficient`."""
        lag = k - kp
        if lag > self.kmax:
            return 0j
        if kp == 0:
            if k == 0:
                return self.start[0]
            return self.end_start[k] if k == final else self.start[k]
        return self.end[lag] if k == final else self.bulk[lag]


def eta_table(bath: OhmicBath, dt: float, n_steps: int, kmax: int) -> EtaTable:
    """Tabulate the influence coefficients for memory length ``kmax`` steps.

    ``kmax`` larger than ``n_steps`` is clamped (full memory).
    """
    if dt <= 0:
        raise DomainError(f"time step must be > 0, got {dt}")
    if kmax < 1:
        raise DomainError(f"memory length must be >= 1, got {kmax}")
    if n_steps < 1:
        raise DomainError(f"n_steps must be >= 1, got {n_steps}")
    kmax = min(int(kmax), int(n_steps))
    h = 0.5 * dt
    m_max = 2 * kmax + 2
    q = np.array([twice_integrated_response(bath, m * h) for m in range(m_max + 1)])
    q.setflags(write=False)
    return EtaTable(float(dt), kmax, int(n_steps), q)
