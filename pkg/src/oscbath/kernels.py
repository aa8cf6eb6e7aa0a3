"""Thermal imaginary-time two-point kernels of the oscillator and the field.

Convention: an operator at imaginary time s is A(s) = exp(-s beta H) A exp(s beta H),
and in a product the leftmost operator carries the smallest s.  With that
ordering the free two-point functions depend only on t = |s_i - s_j| in [0, 1]:

    K_osc(t) = cosh(beta theta (t - 1/2)) / (2 theta sinh(beta theta / 2))
    K_f(t)   = int |f(k)|^2 cosh(beta |k| (t - 1/2)) / (2 sinh(beta |k| / 2)) dk
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import roots_legendre

from .model import (
    FormFactor,
    Modes,
    PowerLaw,
    QuadratureError,
    spectral_integral,
    weighted_norm_sq,
)

CREATE = +1
ANNIHILATE = -1


def rho_beta(k_abs, beta: float):
    """Planck occupation 1/(exp(beta k) - 1)."""
    k = np.asarray(k_abs, dtype=float)
    if np.any(k <= 0):
        raise ZeroDivisionError("Planck density has a pole at |k| = 0")
    x = beta * k
    out = np.exp(-x) / -np.expm1(-x)
    return float(out) if out.ndim == 0 else out


def cosh_over_sinh(a, b):
    """cosh(a)/sinh(b) for b > 0 without overflow for large arguments."""
    a = np.abs(np.asarray(a, dtype=float))
    b = np.asarray(b, dtype=float)
    return np.exp(a - b) * (1.0 + np.exp(-2.0 * a)) / (-np.expm1(-2.0 * b))


def k_osc(t, beta: float, theta: float):
    """Oscillator kernel <q(s) q(s + t)> for the Gibbs state of theta (b*b + 1/2)."""
    t = np.asarray(t, dtype=float)
    out = cosh_over_sinh(beta * theta * (t - 0.5), 0.5 * beta * theta) / (2.0 * theta)
    return float(out) if out.ndim == 0 else out


def fourier_osc(n, beta: float, theta: float):
    """Fourier coefficients int_0^1 K_osc(t) e^{-2 pi i n t} dt = beta / ((beta theta)^2 + (2 pi n)^2).

    K(t) = K(1 - t), so the kernels are even functions on the unit circle and
    K(|s - t|) is a convolution kernel there.
    """
    n = np.asarray(n, dtype=float)
    out = beta / ((beta * theta) ** 2 + (2.0 * np.pi * n) ** 2)
    return float(out) if out.ndim == 0 else out


class SupKf(NamedTuple):
    exact: float
    coth_bound: float


@dataclass(frozen=True)
class KernelEval:
    """K_f evaluator with the radial quadrature nodes fixed at construction."""

    beta: float
    theta: float
    form_factor: FormFactor
    rtol: float = 1e-11
    nodes: np.ndarray = field(init=False, repr=False, compare=False)
    weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.beta <= 0 or self.theta <= 0:
            raise ValueError("beta and theta must be positive")
        f = self.form_factor
        if f.is_discrete:
            r, w = f.spectral_nodes()
        else:
            r, w = self._converged_nodes(f)
        object.__setattr__(self, "nodes", np.asarray(r, dtype=float))
        object.__setattr__(self, "weights", np.asarray(w, dtype=float))

    def _converged_nodes(self, f: FormFactor):
        probe = np.array([0.0, 0.5])
        order = 32
        r, w = f.spectral_nodes(order)
        prev = self._eval(probe, r, w)
        while order < 4096:
            order *= 2
            r2, w2 = f.spectral_nodes(order)
            cur = self._eval(probe, r2, w2)
            resid = float(np.max(np.abs(cur - prev) / np.abs(cur)))
            if resid <= self.rtol:
                # the coarser rule already met tolerance; keep it for speed
                return r, w
            r, w, prev = r2, w2, cur
        raise QuadratureError("K_f radial quadrature did not converge", resid)

    def _eval(self, t, r, w):
        t = np.asarray(t, dtype=float)
        br = self.beta * r
        flat = t.ravel()
        out = np.empty(flat.shape)
        block = max(1, (1 << 20) // max(1, len(r)))
        for i in range(0, len(flat), block):
            seg = flat[i:i + block]
            out[i:i + block] = 0.5 * cosh_over_sinh(np.multiply.outer(seg - 0.5, br), 0.5 * br) @ w
        return out.reshape(t.shape)

    def k_f(self, t):
        """Field kernel <Phi(s) Phi(s + t)> for the form factor."""
        out = self._eval(t, self.nodes, self.weights)
        return float(out) if np.ndim(out) == 0 else out

    def k_osc(self, t):
        return k_osc(t, self.beta, self.theta)

    def fourier_f(self, n):
        """Fourier coefficients int_0^1 K_f(t) e^{-2 pi i n t} dt of the field kernel."""
        n = np.asarray(n, dtype=float)
        br = self.beta * self.nodes
        flat = (2.0 * np.pi * n.ravel()) ** 2
        out = np.empty(flat.shape)
        block = max(1, (1 << 20) // max(1, len(br)))
        for i in range(0, len(flat), block):
            seg = flat[i:i + block]
            out[i:i + block] = (br / (br**2 + seg[:, None])) @ self.weights
        out = out.reshape(n.shape)
        return float(out) if out.ndim == 0 else out


def k_f(t, ev: KernelEval):
    return ev.k_f(t)


def integral_k_osc(beta: float, theta: float) -> float:
    """int_{-1}^{1} K_osc(|s|) ds = 2 / (theta^2 beta)."""
    return 2.0 / (theta**2 * beta)


def _gl01(order: int):
    x, w = roots_legendre(order)
    return 0.5 * (x + 1.0), 0.5 * w


def integral_k_osc_quadrature(beta: float, theta: float, order: int = 64) -> float:
    t, w = _gl01(order)
    return 2.0 * float(np.sum(w * k_osc(t, beta, theta)))


def integral_k_f(ev: KernelEval) -> float:
    """int_{-1}^{1} K_f(|s|) ds = (2/beta) int |f|^2/|k| dk."""
    return 2.0 / ev.beta * weighted_norm_sq(ev.form_factor, -1.0)


def integral_k_f_quadrature(ev: KernelEval, order: int = 64) -> float:
    t, w = _gl01(order)
    return 2.0 * float(np.sum(w * ev.k_f(t)))


def sup_k_f(ev: KernelEval) -> SupKf:
    """Exact sup of K_f over [0, 1] (attained at the ends) and the coth(x) <= 1 + 1/x bound."""
    f = ev.form_factor
    bound = 0.5 * weighted_norm_sq(f, 0.0) + weighted_norm_sq(f, -1.0) / ev.beta
    return SupKf(exact=ev.k_f(0.0), coth_bound=bound)


def _cross_integral(f_i: FormFactor, f_j: FormFactor, h) -> float:
    """int f_i(k) f_j(k) h(|k|) dk for real radial profiles."""
    if f_i is f_j or f_i == f_j:
        return spectral_integral(f_i, h)
    if isinstance(f_i, Modes) and isinstance(f_j, Modes):
        if f_i.frequencies != f_j.frequencies:
            raise ValueError("discrete form factors must share their mode frequencies")
        om = np.asarray(f_i.frequencies)
        return float(np.sum(np.asarray(f_i.couplings) * np.asarray(f_j.couplings) * h(om)))
    if isinstance(f_i, PowerLaw) and isinstance(f_j, PowerLaw):
        merged = PowerLaw(
            np.sqrt(f_i.amplitude * f_j.amplitude),
            0.5 * (f_i.exponent + f_j.exponent),
            min(f_i.cutoff, f_j.cutoff),
        )
        return spectral_integral(merged, h)
    raise NotImplementedError(f"cross integral of {type(f_i).__name__} and {type(f_j).__name__}")


def two_point(sign_i: int, sign_j: int, s_i: float, s_j: float,
              f_i: FormFactor, f_j: FormFactor, beta: float) -> float:
    """omega_f(a^{sign_i}(f_i)(s_i) a^{sign_j}(f_j)(s_j)) for the free thermal field.

    ``sign`` is +1 for a creation and -1 for an annihilation operator; the
    operators carry imaginary times as in the module docstring.
    """
    if sign_i not in (CREATE, ANNIHILATE) or sign_j not in (CREATE, ANNIHILATE):
        raise ValueError("signs must be +1 (creation) or -1 (annihilation)")
    if sign_i == sign_j:
        return 0.0
    d = s_j - s_i
    if sign_i == CREATE:
        # <a*(e^{-beta s_i k} f_i) a(e^{beta s_j k} f_j)> = int f_i f_j e^{beta d k} rho
        return _cross_integral(f_i, f_j, lambda k: np.exp(beta * d * k) / np.expm1(beta * k))
    # <a(e^{beta s_i k} f_i) a*(e^{-beta s_j k} f_j)> = int f_i f_j e^{-beta d k} (1 + rho)
    return _cross_integral(f_i, f_j, lambda k: np.exp(beta * (1.0 - d) * k) / np.expm1(beta * k))
