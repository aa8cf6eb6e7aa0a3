"""Dyson-series coefficients h_2n and convergence diagnostics for sum h_2n^(1/2).

Only even powers of the coupling appear, so every coefficient is reported for
|lam|; the sign convention of the coupling never matters.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.optimize import brentq
from scipy.special import zeta

from .bounds import (
    BoundResult,
    divergence_search,
    divergence_threshold,
    eq4_12_base,
    eq4_12_lower,
    thm2_certify,
    thm4a_certify,
)
from .kernels import KernelEval, fourier_osc
from .model import EtaProfiles, ModelParams, coth_weighted_norm_sq, weighted_norm_sq
from .pairings import (
    CombinatorialBlowup,
    PairGraph,
    Pairing,
    compositions,
    connected_components,
    pairing_index_array,
)
from .quadrature import cycle_integral, mc_integrate_cube

MAX_DIRECT_N = 4


class Method(str, Enum):
    DIRECT = "DirectPairing"
    LINKED = "LinkedCluster"
    FOCK = "FockOracle"
    BEM3D = "Bem3d"


class Verdict(str, Enum):
    CERTIFIED = "CertifiedConvergent"
    CONVERGENT = "NumericallyConvergent"
    DIVERGENT = "NumericallyDivergent"
    INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class SeriesTerm:
    n: int
    value: float
    method: Method
    error_estimate: float = 0.0
    wall_time: float = 0.0

    def __post_init__(self):
        if self.error_estimate < 0:
            raise ValueError("error estimate must be nonnegative")


@dataclass
class ConvergenceReport:
    terms: list
    partial_sums: list
    ratios: list
    verdict: Verdict
    criteria: list = field(default_factory=list)
    cross_checks: list = field(default_factory=list)
    witness: Optional[dict] = None
    notes: list = field(default_factory=list)


@lru_cache(maxsize=64)
def kernel_eval(params: ModelParams) -> KernelEval:
    return KernelEval(params.beta, params.theta, params.form_factor)


def pairing_sum(kmat: np.ndarray, m: int) -> np.ndarray:
    """sum over pairings P of prod_{(i,j) in P} kmat[..., i, j] for a stack of 2m x 2m matrices."""
    idx = pairing_index_array(m)
    vals = kmat[:, idx[..., 0], idx[..., 1]]
    return vals.prod(axis=2).sum(axis=1)


def _zero_or_one(n: int, params: ModelParams, method: Method) -> Optional[SeriesTerm]:
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0:
        return SeriesTerm(0, 1.0, method)
    if params.lam == 0:
        return SeriesTerm(n, 0.0, method)
    return None


def h2n_direct(n: int, params: ModelParams, samples: int = 200_000, seed: int = 0,
               workers: Optional[int] = None, max_n: int = MAX_DIRECT_N) -> SeriesTerm:
    """(beta lam)^2n/(2n)! times the hypercube average of the double pairing sum."""
    trivial = _zero_or_one(n, params, Method.DIRECT)
    if trivial is not None:
        return trivial
    if n > max_n:
        raise CombinatorialBlowup(f"direct pairing sum guarded at n <= {max_n}, got n={n}")
    start = time.perf_counter()
    ev = kernel_eval(params)
    pts = 2 * n
    iu, ju = np.triu_indices(pts, 1)

    def integrand(u):
        d = np.abs(u[:, iu] - u[:, ju])
        ko = np.zeros((len(u), pts, pts))
        kf = np.zeros((len(u), pts, pts))
        ko[:, iu, ju] = ev.k_osc(d)
        kf[:, iu, ju] = ev.k_f(d)
        return pairing_sum(ko, n) * pairing_sum(kf, n)

    r = mc_integrate_cube(pts, integrand, seed, samples, workers)
    pre = (params.beta * params.lam) ** pts / math.factorial(pts)
    return SeriesTerm(n, pre * r.value, Method.DIRECT, pre * r.stderr, time.perf_counter() - start)


@dataclass(frozen=True)
class JValue:
    m: int
    value: float
    error: float
    method: str
    warning: Optional[str] = None


@lru_cache(maxsize=512)
def _j_trace(m: int, params: ModelParams, grid: int) -> JValue:
    ev = kernel_eval(params)
    c = cycle_integral(m, ev.k_osc, ev.k_f, grid=grid)
    return JValue(m, c.value, c.error, "trace", c.warning)


@lru_cache(maxsize=512)
def _j_fourier(m: int, params: ModelParams) -> JValue:
    """sum_n (K_osc^(n) K_f^(n))^m over Fourier modes of the unit circle.

    Modes beyond the cutoff are summed from the leading 1/n^4 asymptotics
    with the Hurwitz zeta function.
    """
    ev = kernel_eval(params)
    b = params.beta
    scale = max(params.theta, float(np.max(ev.nodes)))
    cut = max(1024, int(math.ceil(8.0 * b * scale)))
    n = np.arange(cut + 1)
    x = (fourier_osc(n, b, params.theta) * ev.fourier_f(n)) ** m
    head = float(x[0] + 2.0 * np.sum(x[1:]))
    c = b * b * weighted_norm_sq(params.form_factor, 1.0)
    tail = 2.0 * (c / (2.0 * np.pi) ** 4) ** m * float(zeta(4 * m, cut + 1))
    value = head + tail
    return JValue(m, value, abs(tail) + m * ev.rtol * value, "fourier")


def cycle_graph(m: int, shift: int = 1) -> PairGraph:
    """A connected graph on 2m points: osc lines (1,2),(3,4),..; field lines close the cycle.

    ``shift`` relabels the points by a cyclic rotation of the odd positions so
    that different shifts give structurally different (but connected) graphs.
    """
    pts = list(range(1, 2 * m + 1))
    osc = [(pts[2 * i], pts[2 * i + 1]) for i in range(m)]
    fl = [(pts[2 * i + 1], pts[(2 * i + 2) % (2 * m)]) for i in range(m)]
    if shift != 1:
        perm = pts[::2][shift - 1:] + pts[::2][:shift - 1]
        relabel = {}
        for old, new in zip(pts[::2], perm):
            relabel[old] = new
        for p in pts[1::2]:
            relabel[p] = p
        osc = [(relabel[a], relabel[b]) for a, b in osc]
        fl = [(relabel[a], relabel[b]) for a, b in fl]
    return PairGraph(Pairing.from_pairs(osc), Pairing.from_pairs(fl))


def graph_integral_mc(graph: PairGraph, params: ModelParams, samples: int = 1_000_000,
                      seed: int = 0, workers: Optional[int] = None) -> JValue:
    """Hypercube Monte Carlo of the product of kernels along the lines of a connected graph."""
    if len(connected_components(graph).components) != 1:
        raise ValueError("graph must be connected")
    ev = kernel_eval(params)
    osc = np.array(graph.osc_lines.pairs) - 1
    fl = np.array(graph.f_lines.pairs) - 1

    def integrand(u):
        a = ev.k_osc(np.abs(u[:, osc[:, 0]] - u[:, osc[:, 1]])).prod(axis=1)
        b = ev.k_f(np.abs(u[:, fl[:, 0]] - u[:, fl[:, 1]])).prod(axis=1)
        return a * b

    r = mc_integrate_cube(2 * graph.m, integrand, seed, samples, workers)
    return JValue(graph.m, r.value, r.stderr, "mc")


def j_cycle(m: int, params: ModelParams, method: str = "trace", grid: int = 64,
            samples: int = 1_000_000, seed: int = 0, graph: Optional[PairGraph] = None) -> JValue:
    """Connected 2m-point integral J(2m, beta).

    "trace" uses Nystrom matrices on ``grid`` nodes, "fourier" the exact
    diagonalization on the circle, "mc" hypercube sampling of one graph.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if method == "trace":
        return _j_trace(m, params, grid)
    if method == "fourier":
        return _j_fourier(m, params)
    if method == "mc":
        return graph_integral_mc(graph or cycle_graph(m), params, samples, seed)
    raise ValueError(f"unknown method {method!r}")


def linked_coefficients(n: int) -> list[tuple[tuple[int, ...], Fraction]]:
    """(composition, 1/k! prod 1/(2 m_a)) over compositions of n."""
    out = []
    for comp in compositions(n):
        c = Fraction(1, math.factorial(len(comp)))
        for m in comp:
            c /= 2 * m
        out.append((comp, c))
    return out


def h2n_linked(n: int, params: ModelParams, grid: int = 64, method: str = "fourier") -> SeriesTerm:
    """lam^2n sum_k 1/k! sum_compositions prod J(2m_a) beta^(2m_a) / (2m_a).

    ``method`` selects how J is computed (see ``j_cycle``); "trace" loses
    accuracy once beta * frequency is large compared with ``grid``.
    """
    trivial = _zero_or_one(n, params, Method.LINKED)
    if trivial is not None:
        return trivial
    start = time.perf_counter()
    if method not in ("fourier", "trace"):
        raise ValueError(f"unknown method {method!r}")
    js = {m: j_cycle(m, params, method, grid) for m in range(1, n + 1)}
    total = err = 0.0
    for comp, coef in linked_coefficients(n):
        term = float(coef) * math.prod(js[m].value for m in comp)
        total += term
        err += term * sum(js[m].error / js[m].value for m in comp)
    pre = (params.lam * params.beta) ** (2 * n)
    return SeriesTerm(n, pre * total, Method.LINKED, pre * err, time.perf_counter() - start)


# --- comparison series --------------------------------------------------

BEM3D_FORMS = {"moments": 0.25, "unscaled": 1.0}


def bem3d_base(params: ModelParams, form: str = "moments") -> float:
    """Ratio-test base of the comparison series.

    "unscaled": (lam beta)^2 coth(theta beta/2) X(beta) / theta with
    X = int |f|^2 coth(beta|k|/2).  "moments" carries an extra 1/4, which is
    what the free moments <q^2> = coth/(2 theta), <Phi^2> = X/2 produce.
    """
    if form not in BEM3D_FORMS:
        raise ValueError(f"unknown form {form!r}")
    b, th = params.beta, params.theta
    x = coth_weighted_norm_sq(params.form_factor, b)
    return BEM3D_FORMS[form] * (params.lam * b) ** 2 / (th * math.tanh(0.5 * th * b)) * x


def bem3d_term(n: int, params: ModelParams, form: str = "moments") -> SeriesTerm:
    """(lam beta)^2n / (2n)! <q^2n> <Phi^2n> = base^n binom(2n, n) 4^-n."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0:
        return SeriesTerm(0, 1.0, Method.BEM3D)
    base = bem3d_base(params, form)
    if base == 0:
        return SeriesTerm(n, 0.0, Method.BEM3D)
    log_binom = math.lgamma(2 * n + 1) - 2 * math.lgamma(n + 1)
    return SeriesTerm(n, math.exp(n * math.log(base) + log_binom - n * math.log(4.0)), Method.BEM3D)


def bem3d_threshold(params: ModelParams, form: str = "moments") -> float:
    """beta* where the ratio-test base equals 1; 0.0 if it is >= 1 for every beta.

    The base increases with beta, from 4 c lam^2 ||k|^-1/2 f||^2 / theta^2 at
    beta -> 0 (c the form's factor) to infinity.
    """
    if params.lam == 0:
        return math.inf
    small = BEM3D_FORMS[form] * 4.0 * params.lam**2 * weighted_norm_sq(params.form_factor, -1.0) / params.theta**2
    if small >= 1.0:
        return 0.0

    def g(log_b):
        return math.log(bem3d_base(params.with_(beta=math.exp(log_b)), form))

    lo, hi = math.log(1e-12), 0.0
    while g(hi) < 0:
        hi += 1.0
    return math.exp(brentq(g, lo, hi, xtol=1e-14, rtol=1e-13))


def bem3d_verdict(params: ModelParams, n_max: int = 10, form: str = "moments") -> ConvergenceReport:
    """Ratio test on the comparison series; it converges exactly when the base is < 1."""
    base = bem3d_base(params, form)
    terms = [bem3d_term(n, params, form) for n in range(n_max + 1)]
    sums = [float(x) for x in np.cumsum([t.value for t in terms])]
    ratios = [terms[i + 1].value / terms[i].value if terms[i].value > 0 else 0.0 for i in range(n_max)]
    ok = base < 1.0
    crit = BoundResult(
        name="bem3d_ratio_test",
        value=base,
        inputs={"theta": params.theta, "lam": params.lam, "beta": params.beta, "form": form},
        satisfied=ok,
        margin=1.0 - base,
        notes="term ratio is base (2n+1)/(2n+2), tending to base",
    )
    return ConvergenceReport(terms, sums, ratios, Verdict.CERTIFIED if ok else Verdict.DIVERGENT, [crit])


# --- report ------------------------------------------------------------

def series_report(params: ModelParams, n_max: int, budget: Optional[float] = None, grid: int = 64,
                  samples: int = 200_000, seed: int = 0, direct_upto: int = 2,
                  eta: Optional[EtaProfiles] = None, const_C: float = 1.0,
                  workers: Optional[int] = None, j_method: str = "fourier") -> ConvergenceReport:
    """Linked-cluster terms up to n_max with analytic verdicts attached.

    CertifiedConvergent is issued only from an analytic criterion.  Past the
    time ``budget`` (seconds) the remaining terms are skipped and the report
    is Inconclusive.
    """
    if n_max < 2:
        raise ValueError("n_max must be >= 2")
    start = time.perf_counter()
    notes = ["coefficients depend on lam only through lam^2; values reported for |lam|"]
    terms, checks = [], []
    exhausted = False
    for n in range(n_max + 1):
        if budget is not None and time.perf_counter() - start > budget:
            exhausted = True
            notes.append(f"budget of {budget} s exhausted before n={n}")
            break
        terms.append(h2n_linked(n, params, grid, j_method))
        if 1 <= n <= direct_upto and params.lam != 0:
            checks.append(h2n_direct(n, params, samples, seed + n, workers))
    roots = [math.sqrt(max(t.value, 0.0)) for t in terms]
    sums = [float(x) for x in np.cumsum(roots)]
    ratios = [roots[i + 1] / roots[i] if roots[i] > 0 else 0.0 for i in range(len(roots) - 1)]

    criteria = [thm4a_certify(params)]
    if eta is not None:
        criteria.append(thm2_certify(eta, params.beta, const_C))
    witness = None
    if params.lam != 0:
        base = eq4_12_base(params)
        lam_star = divergence_threshold(params)
        found = divergence_search(params)
        criteria.append(BoundResult(
            name="eq4_12_divergence",
            value=base,
            inputs={"lam_star": lam_star},
            satisfied=found is not None,
            margin=base - 1.0,
            notes="h_2n >= base^n/(2n); base >= 1 forces divergence",
        ))
        if found is not None:
            witness = {"lam_star": found.lam_star, "base": found.base,
                       "lower_bounds": [eq4_12_lower(n, params) for n in range(1, len(terms) + 1)]}

    if exhausted:
        verdict = Verdict.INCONCLUSIVE
    elif any(c.satisfied for c in criteria if c.name in ("thm4a", "thm2_surrogate")):
        verdict = Verdict.CERTIFIED
    elif witness is not None:
        verdict = Verdict.DIVERGENT
    elif ratios and ratios[-1] < 1.0 and all(r < 1.0 for r in ratios[-2:]):
        verdict = Verdict.CONVERGENT
    elif ratios and ratios[-1] >= 1.0:
        verdict = Verdict.DIVERGENT
    else:
        verdict = Verdict.INCONCLUSIVE
    return ConvergenceReport(terms, sums, ratios, verdict, criteria, checks, witness, notes)
