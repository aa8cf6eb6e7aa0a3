"""Physical configuration: oscillator, coupling, temperature and form factor.

Form factors are radial profiles f(|k|) on R^3, supported in |k| <= cutoff.
Every momentum integral in the package is an integral against the spectral
measure mu(dr) = 4 pi r^2 f(r)^2 dr; a discrete-mode form factor replaces
mu by a finite sum of point masses g_j^2 delta(r - omega_j).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad
from scipy.special import roots_jacobi, roots_legendre

FOUR_PI = 4.0 * math.pi


class DomainError(ValueError):
    """An integral that the invariants promise to be finite is not."""


class QuadratureError(RuntimeError):
    """A radial quadrature did not reach its tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class FormFactor:
    """Base class for radial form factors.

    Subclasses provide ``spectral_nodes(order)`` returning (r_i, W_i) with
    sum_i W_i h(r_i) ~ int 4 pi r^2 f(r)^2 h(r) dr for any h that is smooth
    up to a 1/r singularity at the origin.
    """

    cutoff: float

    def spectral_nodes(self, order: int) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def weighted_norm_sq(self, w: float) -> float:
        raise NotImplementedError

    @property
    def is_discrete(self) -> bool:
        return False

    def scaled(self, t: float) -> "FormFactor":
        raise NotImplementedError


@dataclass(frozen=True)
class PowerLaw(FormFactor):
    """f(r) = amplitude * r**exponent for r <= cutoff."""

    amplitude: float
    exponent: float
    cutoff: float

    def __post_init__(self):
        if self.amplitude <= 0 or self.cutoff <= 0:
            raise ValueError("PowerLaw amplitude and cutoff must be positive")
        if self.exponent <= -1:
            raise DomainError(f"exponent {self.exponent} <= -1 makes int |f|^2/|k| dk diverge")

    def profile(self, r):
        r = np.asarray(r, dtype=float)
        return np.where(r <= self.cutoff, self.amplitude * r**self.exponent, 0.0)

    def weighted_norm_sq(self, w: float) -> float:
        power = 2 * self.exponent + 3 + w
        if power <= 0:
            raise DomainError(f"int |f|^2 |k|^{w} dk diverges at the origin for exponent {self.exponent}")
        return FOUR_PI * self.amplitude**2 * self.cutoff**power / power

    def spectral_nodes(self, order: int):
        return _power_law_nodes(self.amplitude, self.exponent, self.cutoff, order)

    def scaled(self, t: float) -> "PowerLaw":
        return PowerLaw(self.amplitude * abs(t), self.exponent, self.cutoff)


@lru_cache(maxsize=256)
def _power_law_nodes(c: float, p: float, kappa: float, order: int):
    # Gauss-Jacobi in r with weight r^(1+2p); the leftover factor r*h(r) is smooth
    x, w = roots_jacobi(order, 0.0, 1.0 + 2.0 * p)
    r = 0.5 * kappa * (1.0 + x)
    weights = FOUR_PI * c**2 * (0.5 * kappa) ** (2.0 + 2.0 * p) * w * r
    r.setflags(write=False)
    weights.setflags(write=False)
    return r, weights


@dataclass(frozen=True)
class Tabulated(FormFactor):
    """Piecewise-linear radial profile through (radii[i], values[i]); zero outside."""

    radii: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        r = np.asarray(self.radii, dtype=float)
        if r.ndim != 1 or len(r) < 2 or len(r) != len(self.values):
            raise ValueError("tabulated form factor needs matching radii/values of length >= 2")
        if r[0] < 0 or np.any(np.diff(r) <= 0):
            raise ValueError("radii must be nonnegative and strictly increasing")
        object.__setattr__(self, "radii", tuple(float(x) for x in self.radii))
        object.__setattr__(self, "values", tuple(float(x) for x in self.values))

    @property
    def cutoff(self) -> float:
        return self.radii[-1]

    def profile(self, r):
        r = np.asarray(r, dtype=float)
        inside = (r >= self.radii[0]) & (r <= self.radii[-1])
        return np.where(inside, np.interp(r, self.radii, self.values), 0.0)

    def weighted_norm_sq(self, w: float) -> float:
        # f^2 is quadratic on each panel, so int r^(2+w) f^2 dr is exact by monomials
        a = 2.0 + w
        total = 0.0
        for r0, r1, v0, v1 in zip(self.radii[:-1], self.radii[1:], self.values[:-1], self.values[1:]):
            slope = (v1 - v0) / (r1 - r0)
            b = v0 - slope * r0
            coeffs = (b * b, 2.0 * b * slope, slope * slope)
            for j, cj in enumerate(coeffs):
                if cj == 0.0:
                    continue
                e = a + j + 1
                if e <= 0 and r0 == 0.0:
                    raise DomainError(f"int |f|^2 |k|^{w} dk diverges at the origin")
                if e == 0:
                    total += cj * math.log(r1 / r0)
                else:
                    total += cj * (r1**e - r0**e) / e
        return FOUR_PI * total

    def spectral_nodes(self, order: int):
        return _tabulated_nodes(self.radii, self.values, order)

    def scaled(self, t: float) -> "Tabulated":
        return Tabulated(self.radii, tuple(abs(t) * v for v in self.values))


@lru_cache(maxsize=64)
def _tabulated_nodes(radii, values, order):
    per_panel = max(4, order // max(1, len(radii) - 1))
    x, w = roots_legendre(per_panel)
    rs, ws = [], []
    for r0, r1 in zip(radii[:-1], radii[1:]):
        half = 0.5 * (r1 - r0)
        r = r0 + half * (1.0 + x)
        rs.append(r)
        ws.append(half * w)
    r = np.concatenate(rs)
    f = np.interp(r, radii, values)
    weights = FOUR_PI * r**2 * f**2 * np.concatenate(ws)
    r.setflags(write=False)
    weights.setflags(write=False)
    return r, weights


@dataclass(frozen=True)
class Modes(FormFactor):
    """Finitely many boson modes: frequencies omega_j > 0 with couplings g_j.

    Stands in for a continuum form factor: int |f|^2 h(|k|) dk := sum g_j^2 h(omega_j).
    """

    frequencies: tuple[float, ...]
    couplings: tuple[float, ...]

    def __post_init__(self):
        if len(self.frequencies) == 0 or len(self.frequencies) != len(self.couplings):
            raise ValueError("modes need matching, nonempty frequencies and couplings")
        if any(w <= 0 for w in self.frequencies):
            raise ValueError("mode frequencies must be positive")
        object.__setattr__(self, "frequencies", tuple(float(x) for x in self.frequencies))
        object.__setattr__(self, "couplings", tuple(float(x) for x in self.couplings))

    @property
    def cutoff(self) -> float:
        return max(self.frequencies)

    @property
    def is_discrete(self) -> bool:
        return True

    def weighted_norm_sq(self, w: float) -> float:
        om = np.asarray(self.frequencies)
        g = np.asarray(self.couplings)
        return float(np.sum(g**2 * om**w))

    def spectral_nodes(self, order: int = 0):
        return np.asarray(self.frequencies), np.asarray(self.couplings) ** 2

    def scaled(self, t: float) -> "Modes":
        return Modes(self.frequencies, tuple(abs(t) * g for g in self.couplings))


def _graded_integral(f: FormFactor, h: Callable[[np.ndarray], np.ndarray], rtol: float) -> Optional[float]:
    """Adaptive quad on dyadic panels shrinking toward r = 0.

    Thermal weights at large beta live on |k| of order 1/beta, far below what
    a single Gauss rule over the whole support resolves.
    """
    profile = getattr(f, "profile", None)
    if profile is None:
        return None
    cut = float(f.cutoff)
    edges = {0.0, cut, *(cut * 2.0**-k for k in range(1, 64))}
    edges.update(x for x in getattr(f, "radii", ()) if 0.0 < x < cut)
    edges = sorted(edges)

    def dens(r):
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            v = FOUR_PI * r * r * profile(r) ** 2 * h(np.asarray(r, dtype=float))
        return float(v) if v == v else 0.0

    total = err = 0.0
    for a, b in zip(edges, edges[1:]):
        val, e = quad(dens, a, b, epsabs=0.0, epsrel=rtol, limit=200)
        total += val
        err += e
    if err > 100.0 * rtol * abs(total) and total != 0.0:
        return None
    return total


def spectral_integral(
    f: FormFactor,
    h: Callable[[np.ndarray], np.ndarray],
    rtol: float = 1e-12,
    start_order: int = 32,
    max_order: int = 2048,
) -> float:
    """int |f(k)|^2 h(|k|) dk, refining the radial rule until two orders agree.

    Falls back to graded adaptive quadrature when the largest rule is not enough.
    """
    if f.is_discrete:
        r, w = f.spectral_nodes()
        return float(np.sum(w * h(r)))
    order = start_order
    r, w = f.spectral_nodes(order)
    prev = float(np.sum(w * h(r)))
    while order < max_order:
        order *= 2
        r, w = f.spectral_nodes(order)
        cur = float(np.sum(w * h(r)))
        if abs(cur - prev) <= rtol * max(abs(cur), 1e-300):
            return cur
        prev = cur
    graded = _graded_integral(f, h, max(rtol, 1e-10))
    if graded is not None:
        return graded
    raise QuadratureError("radial quadrature did not converge", abs(cur - prev))


def weighted_norm_sq(f: FormFactor, w: float) -> float:
    """int |f(k)|^2 |k|^w dk over R^3."""
    if w <= -3:
        raise DomainError("weight exponent must exceed -3")
    return f.weighted_norm_sq(w)


def coth_weighted_norm_sq(f: FormFactor, beta: float) -> float:
    """int |f(k)|^2 coth(beta |k| / 2) dk."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    return spectral_integral(f, lambda r: 1.0 / np.tanh(0.5 * beta * r))


@dataclass(frozen=True)
class ModelParams:
    """Oscillator frequency theta, coupling lam, inverse temperature beta, form factor."""

    theta: float
    lam: float
    beta: float
    form_factor: FormFactor

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError(f"theta must be positive, got {self.theta}")
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")

    def with_(self, **changes) -> "ModelParams":
        vals = dict(theta=self.theta, lam=self.lam, beta=self.beta, form_factor=self.form_factor)
        vals.update(changes)
        return ModelParams(**vals)


@dataclass(frozen=True)
class EtaProfiles:
    """Scalar norm profiles entering the interaction-strength functionals.

    ``g_norm``/``h_norm`` are k -> ||G(k)||, ||H(k)||; ``f_gamma_norm`` and
    ``f_star_gamma_norm`` are k -> ||F(k) H_+^-gamma|| and ||F(k)* H_+^-gamma||.
    A missing profile counts as identically zero.
    """

    gamma: float
    g_norm: Optional[FormFactor] = None
    h_norm: Optional[FormFactor] = None
    f_gamma_norm: Optional[FormFactor] = None
    f_star_gamma_norm: Optional[FormFactor] = None

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 0.5:
            raise ValueError(f"gamma must lie in [0, 1/2], got {self.gamma}")


def _eta_weight_integral(prof: Optional[FormFactor]) -> float:
    if prof is None:
        return 0.0
    return 2.0 * weighted_norm_sq(prof, 0.0) + 4.0 * weighted_norm_sq(prof, -1.0)


def eta_functionals(p: EtaProfiles) -> tuple[float, float]:
    """(eta1, eta2) = integrals of the squared profiles against (2 + 4/|k|) dk.

    Both F-profiles enter squared.
    """
    eta1 = _eta_weight_integral(p.g_norm) + _eta_weight_integral(p.h_norm)
    eta2 = _eta_weight_integral(p.f_gamma_norm) + _eta_weight_integral(p.f_star_gamma_norm)
    return eta1, eta2
