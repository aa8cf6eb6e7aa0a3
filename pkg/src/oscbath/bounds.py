"""Analytic bounds and convergence criteria as executable numbers and predicates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import gammaln

from .model import (
    DomainError,
    EtaProfiles,
    ModelParams,
    eta_functionals,
    spectral_integral,
    weighted_norm_sq,
)
from .kernels import KernelEval, sup_k_f
from .quadrature import MCResult, mc_integrate_simplex_gaps

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class BoundResult:
    name: str
    value: Optional[float] = None
    lower: Optional[float] = None
    upper: Optional[float] = None
    inputs: dict = field(default_factory=dict)
    satisfied: Optional[bool] = None
    margin: Optional[float] = None
    notes: str = ""

    def __post_init__(self):
        if self.lower is not None and self.upper is not None and self.lower > self.upper:
            raise AssertionError(f"{self.name}: lower {self.lower} exceeds upper {self.upper}")


def _params_echo(p: ModelParams) -> dict:
    return {"theta": p.theta, "lam": p.lam, "beta": p.beta, "form_factor": repr(p.form_factor)}


# --- J-integral sandwich -------------------------------------------------

def _csch(x):
    x = np.asarray(x, dtype=float)
    out = 2.0 * np.exp(-x) / -np.expm1(-2.0 * x)
    return float(out) if out.ndim == 0 else out


def sinh_overlap(params: ModelParams) -> float:
    """Theta^-1 int |f|^2 / (sinh(beta|k|/2) sinh(beta theta/2)) dk."""
    b, th = params.beta, params.theta
    integral = spectral_integral(params.form_factor, lambda r: _csch(0.5 * b * r))
    return integral * _csch(0.5 * b * th) / th


def lem1_constants(params: ModelParams) -> tuple[float, float]:
    """(C with the |k|^{1/2} weight in the denominator, C with the |k|^{-1/2} weight)."""
    f = params.form_factor
    half = 0.5 * weighted_norm_sq(f, 0.0)
    return half / weighted_norm_sq(f, 1.0), half / weighted_norm_sq(f, -1.0)


@dataclass(frozen=True)
class JSandwich:
    m: int
    lower: float
    lower_unhalved: float
    upper_proof: float
    upper_plus: float
    upper_minus: float


def lem1_bounds(m: int, params: ModelParams) -> JSandwich:
    """Bounds on the connected 2m-point integral J.

    ``lower`` is (K_osc(1/2) K_f(1/2))^m, the minimum of the integrand;
    ``lower_unhalved`` drops the two factors 1/2 of the kernels at t = 1/2.
    ``upper_proof`` is (int K_osc)^m (int K_f)^(m-1) sup K_f with the exact
    sup; ``upper_plus``/``upper_minus`` are the summarized geometric forms
    with C from ``lem1_constants``.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    b, th = params.beta, params.theta
    ev = KernelEval(b, th, params.form_factor)
    overlap = sinh_overlap(params)
    nm = weighted_norm_sq(params.form_factor, -1.0)
    upper_proof = (2.0 / (th**2 * b)) ** m * (2.0 * nm / b) ** (m - 1) * sup_k_f(ev).exact
    geo = (2.0 * math.sqrt(nm) / (th * b)) ** (2 * m)
    c_plus, c_minus = lem1_constants(params)
    return JSandwich(
        m=m,
        lower=(overlap / 4.0) ** m,
        lower_unhalved=overlap**m,
        upper_proof=upper_proof,
        upper_plus=geo * (c_plus * b + 1.0),
        upper_minus=geo * (c_minus * b + 1.0),
    )


# --- upper bound chain on h_2n -------------------------------------------

def harmonic_number(n: int) -> float:
    return math.fsum(1.0 / m for m in range(1, n + 1))


def eq4_11_chain(n: int, params: ModelParams, which: str = "minus") -> dict:
    """Successive upper bounds on h_2n down to the closed (n+1)^((C beta+1)/2) form.

    ``harmonic`` keeps sum 1/m; ``closed`` replaces it by ln(n+1), which is
    not an upper bound for it (H_n > ln(n+1) for every n >= 1), so the chain
    reports whether that step was valid.
    """
    c = lem1_constants(params)[0 if which == "plus" else 1]
    x = 0.5 * (c * params.beta + 1.0)
    geo = (2.0 * math.sqrt(weighted_norm_sq(params.form_factor, -1.0)) * abs(params.lam) / params.theta) ** (2 * n)
    h = harmonic_number(n)
    return {
        "n": n,
        "C": c,
        "harmonic": geo * math.exp(x * h),
        "closed": geo * (n + 1.0) ** x,
        "harmonic_sum": h,
        "log_n_plus_1": math.log(n + 1.0),
        "log_step_valid": h <= math.log(n + 1.0),
    }


def eq4_11a_bound(n: int, params: ModelParams, which: str = "minus") -> float:
    """(2 |lam| ||k|^-1/2 f|| / theta)^2n (n+1)^((C beta + 1)/2)."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0:
        return 1.0
    return eq4_11_chain(n, params, which)["closed"]


def thm4a_certify(params: ModelParams) -> BoundResult:
    """Beta-independent criterion |2 lam / theta| ||k|^-1/2 f|| < 1."""
    norm = math.sqrt(weighted_norm_sq(params.form_factor, -1.0))
    margin = 1.0 - abs(2.0 * params.lam / params.theta) * norm
    return BoundResult(
        name="thm4a",
        value=1.0 - margin,
        inputs={**_params_echo(params), "norm_inv_sqrt_k": norm},
        satisfied=margin > 0,
        margin=margin,
        notes="holds for every beta > 0",
    )


# --- divergence ----------------------------------------------------------

def eq4_12_base(params: ModelParams) -> float:
    """(lam beta / 2)^2 times the sinh overlap; h_2n >= base^n / (2n)."""
    return (0.5 * params.lam * params.beta) ** 2 * sinh_overlap(params)


def eq4_12_lower(n: int, params: ModelParams) -> float:
    if n < 1:
        raise ValueError("n must be >= 1")
    return eq4_12_base(params) ** n / (2.0 * n)


@dataclass(frozen=True)
class DivergenceWitness:
    lam_star: float
    base: float
    applies: bool


def divergence_threshold(params: ModelParams, rtol: float = 1e-10) -> float:
    """Smallest |lam| with eq4_12_base >= 1, by bisection, nudged up until the base is >= 1.

    Returns inf when the base at unit coupling underflows, i.e. lam* is beyond
    floating-point range (beta theta of order 10^3).
    """
    unit = eq4_12_base(params.with_(lam=1.0))
    if unit <= 0 or not math.isfinite(1.0 / math.sqrt(unit)):
        return math.inf
    lo, hi = 0.0, 1.0
    while unit * hi * hi < 1.0:
        lo, hi = hi, 2.0 * hi
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if unit * mid * mid >= 1.0:
            hi = mid
        else:
            lo = mid
    while eq4_12_base(params.with_(lam=hi)) < 1.0:
        hi = math.nextafter(hi, math.inf)
    return hi


def divergence_search(params: ModelParams) -> Optional[DivergenceWitness]:
    """Witness that sum h_2n^(1/2) diverges at ``params``, or None if the base is < 1."""
    base = eq4_12_base(params)
    if base < 1.0:
        return None
    return DivergenceWitness(divergence_threshold(params), base, True)


# --- general-model estimate ----------------------------------------------

def main_estimate_bound(n: int, beta: float, eta1: float, eta2: float, gamma: float,
                        const_C: float = 1.0, const: float = 1.0) -> float:
    """const (n+1)^2 (1+beta)^n (8 eta1 + sqrt(8 C eta2) / (n+1)^((1-2 gamma)/2))^n."""
    if not 0.0 <= gamma <= 0.5:
        raise ValueError(f"gamma must lie in [0, 1/2], got {gamma}")
    if n < 0 or eta1 < 0 or eta2 < 0 or const_C < 0:
        raise ValueError("n, eta1, eta2 and const_C must be nonnegative")
    inner = 8.0 * eta1 + math.sqrt(8.0 * const_C * eta2) / (n + 1.0) ** (0.5 * (1.0 - 2.0 * gamma))
    return const * (n + 1.0) ** 2 * ((1.0 + beta) * inner) ** n


def main_estimate_root(n: int, beta: float, eta1: float, eta2: float, gamma: float,
                       const_C: float = 1.0, const: float = 1.0) -> float:
    """n-th root of main_estimate_bound, evaluated in log space so large n does not underflow."""
    if n < 1:
        raise ValueError("n must be >= 1")
    main_estimate_bound(0, beta, eta1, eta2, gamma, const_C, const)
    inner = 8.0 * eta1 + math.sqrt(8.0 * const_C * eta2) / (n + 1.0) ** (0.5 * (1.0 - 2.0 * gamma))
    if inner == 0.0:
        return 0.0
    log_b = math.log(const) + 2.0 * math.log(n + 1.0) + n * math.log((1.0 + beta) * inner)
    return math.exp(log_b / n)


def thm2_certify(profile: EtaProfiles, beta: float, const_C: float = 1.0) -> BoundResult:
    """Geometric-ratio surrogate for the "much less than 1" conditions.

    gamma < 1/2: (1+beta) 8 eta1 < 1.  gamma = 1/2: (1+beta)(8 eta1 + sqrt(8 C eta2)) < 1.
    The thresholds are this package's choice; the constant C defaults to 1.
    """
    eta1, eta2 = eta_functionals(profile)
    if profile.gamma < 0.5:
        ratio = (1.0 + beta) * 8.0 * eta1
    else:
        ratio = (1.0 + beta) * (8.0 * eta1 + math.sqrt(8.0 * const_C * eta2))
    return BoundResult(
        name="thm2_surrogate",
        value=ratio,
        inputs={"beta": beta, "gamma": profile.gamma, "eta1": eta1, "eta2": eta2, "const_C": const_C},
        satisfied=ratio < 1.0,
        margin=1.0 - ratio,
        notes="surrogate thresholds are package-defined",
    )


# --- simplex integrals ---------------------------------------------------

def lem0_2_value(n1: int, n2: int, gamma: float, alpha1: float) -> float:
    """Gamma(1-alpha1)^-1 Gamma(1-gamma)^(2 n2) / Gamma(n1 + 2 n2 (1-gamma)).

    This is the closed form under test; ``simplex_gap_integral`` is the exact
    value of the same time-simplex integral.
    """
    if alpha1 >= 1 or gamma >= 1:
        raise DomainError("exponents must be < 1")
    if n1 < 0 or n2 < 0 or n1 + n2 < 1:
        raise ValueError("need n1, n2 >= 0 and n1 + n2 >= 1")
    log_v = -gammaln(1.0 - alpha1) + 2 * n2 * gammaln(1.0 - gamma) - gammaln(n1 + 2 * n2 * (1.0 - gamma))
    return float(math.exp(log_v))


def simplex_gap_integral(gap_exponents: Sequence[float]) -> float:
    """int over {1 >= s_1 >= .. >= s_n >= 0} of prod g_i^-e_i, g = cyclic gaps (periodic first).

    Dirichlet integral: Gamma(2-e_1) prod_{i>=2} Gamma(1-e_i) / Gamma(n+1 - sum e).
    """
    e = np.asarray(gap_exponents, dtype=float)
    if len(e) < 1:
        raise ValueError("need at least one gap")
    if np.any(e >= 1):
        raise DomainError("gap exponents must be < 1")
    log_v = gammaln(2.0 - e[0]) + np.sum(gammaln(1.0 - e[1:])) - gammaln(len(e) + 1.0 - e.sum())
    return float(math.exp(log_v))


def kappa_gap_exponents(alphas: Sequence[float], convention: str = "preceding") -> list[float]:
    """Map per-insertion exponents alpha_1..alpha_n to cyclic gap exponents.

    "preceding": the periodic gap carries alpha_1 and gap s_{i-1}-s_i carries alpha_i.
    "following": the periodic gap carries alpha_1 and gap s_i-s_{i+1} carries alpha_i,
    so alpha_1 appears twice and alpha_n not at all.
    """
    a = [float(x) for x in alphas]
    if convention == "preceding":
        return a
    if convention == "following":
        return [a[0]] + a[:-1]
    raise ValueError(f"unknown convention {convention!r}")


def kappa_pattern_exponents(n1: int, n2: int, gamma: float, alpha1: Optional[float] = None) -> list[float]:
    """Per-insertion exponents: n1 insertions with 0 then 2 n2 with gamma; alpha1 overrides the first."""
    a = [0.0] * n1 + [float(gamma)] * (2 * n2)
    if alpha1 is not None:
        a[0] = float(alpha1)
    return a


def c_kappa_mc(alphas: Sequence[float], samples: int, seed: int,
               convention: str = "preceding", workers: Optional[int] = None) -> MCResult:
    """Monte Carlo value of int over the simplex of the C_kappa gap product."""
    e = np.asarray(kappa_gap_exponents(alphas, convention), dtype=float)
    if np.any(e >= 1):
        raise DomainError("non-integrable exponent >= 1")
    return mc_integrate_simplex_gaps(e, lambda g: np.prod(g ** (-e), axis=1), seed, samples, workers)


# --- Stirling ------------------------------------------------------------

@dataclass(frozen=True)
class StirlingCheck:
    x: float
    lower: float
    gamma_value: float
    upper: float
    lower_holds: bool
    upper_holds: bool


def stirling_check(x: float) -> StirlingCheck:
    """sqrt(2 pi) x^(x-1/2) e^-x <= Gamma(x) <= e times that, compared in log space.

    The reported values are inf once they leave floating-point range; the
    flags always come from the logarithms.
    """
    if x < 1:
        raise ValueError("x must be >= 1")
    x = float(x)
    log_low = LOG_SQRT_2PI + (x - 0.5) * math.log(x) - x
    log_up = log_low + 1.0
    log_g = float(gammaln(x))
    return StirlingCheck(x, _exp(log_low), _exp(log_g), _exp(log_up),
                         log_low <= log_g, log_g <= log_up)


def _exp(v: float) -> float:
    return math.exp(v) if v < 709.0 else math.inf


@dataclass(frozen=True)
class RatioCheck:
    n1: int
    n2: int
    gamma: float
    lhs: float
    rhs: float
    holds: bool


def eq3_57_ratio(n1: int, n2: int, gamma: float) -> RatioCheck:
    """Gamma(n1+n2+1)/Gamma(n1+2(1-gamma)n2) against (n+1)^2 (a/e)^(-(1-2 gamma) n2)."""
    if n1 < 0 or n2 < 0 or n1 + n2 < 1:
        raise ValueError("need n1, n2 >= 0 and n1 + n2 >= 1")
    n = n1 + 2 * n2
    a = n1 + 2.0 * (1.0 - gamma) * n2
    log_lhs = float(gammaln(n1 + n2 + 1.0) - gammaln(a))
    log_rhs = 2.0 * math.log(n + 1.0) - (1.0 - 2.0 * gamma) * n2 * (math.log(a) - 1.0)
    return RatioCheck(n1, n2, gamma, math.exp(log_lhs), math.exp(log_rhs), log_lhs <= log_rhs)
