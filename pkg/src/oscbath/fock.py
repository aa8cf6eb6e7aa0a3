"""Truncated Fock-space oracle: dense matrices for the oscillator and a few boson modes.

Everything here is computed from matrices and exact traces, independently
of the pairing and kernel pipeline it is used to check.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .dyson import Method, SeriesTerm, _zero_or_one, pairing_sum
from .kernels import k_osc
from .model import FormFactor, ModelParams, Modes, PowerLaw, weighted_norm_sq
from .quadrature import mc_integrate_simplex

MAX_DIMENSION = 200_000
MAX_DENSE = 8_000
MAX_ORACLE_N = 2
EXP_LIMIT = 700.0


class GuardError(ValueError):
    """A size guard of the oracle would be exceeded."""


@dataclass(frozen=True)
class TruncationSpec:
    d_el: int
    modes: tuple[tuple[float, float], ...]
    d_b: int

    def __post_init__(self):
        if self.d_el < 2 or self.d_b < 2:
            raise ValueError("keep at least two levels per factor")
        object.__setattr__(self, "modes", tuple((float(w), float(g)) for w, g in self.modes))
        if any(w <= 0 for w, _ in self.modes):
            raise ValueError("mode frequencies must be positive")

    def check_dimension(self) -> None:
        # only joint-space constructions need this; factorized traces never form the product
        if self.dimension > MAX_DIMENSION:
            raise GuardError(f"total dimension {self.dimension} exceeds {MAX_DIMENSION}")

    @property
    def dimension(self) -> int:
        return self.d_el * self.d_b ** len(self.modes)

    def as_form_factor(self) -> Modes:
        return Modes(tuple(w for w, _ in self.modes), tuple(g for _, g in self.modes))


def mode_discretization(f: FormFactor, M: int) -> list[tuple[float, float]]:
    """Collapse the spectral measure into M modes of equal mass ||f||^2/M.

    Bin j has edges at the j/M quantiles of mu(dr) = 4 pi r^2 f^2 dr; its mode
    sits at omega_j = mass / int_bin mu(dr)/r, so sum g^2 = ||f||^2 and
    sum g^2/omega = ||k|^-1/2 f||^2 hold exactly for each M.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    if isinstance(f, Modes):
        return list(zip(f.frequencies, f.couplings))
    total = weighted_norm_sq(f, 0.0)
    mass = total / M
    if isinstance(f, PowerLaw):
        a = 2.0 * f.exponent + 3.0
        edges = f.cutoff * (np.arange(M + 1) / M) ** (1.0 / a)
        inv = 4.0 * math.pi * f.amplitude**2 * np.diff(edges ** (a - 1.0)) / (a - 1.0)
    else:
        r = np.linspace(0.0, f.cutoff, 20001)[1:]
        prof = f.profile(r) ** 2
        dens = 4.0 * math.pi * r * r * prof
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(r))])
        cum *= total / cum[-1]
        cum_inv = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] / r[1:] + dens[:-1] / r[:-1]) * np.diff(r))])
        cum_inv *= weighted_norm_sq(f, -1.0) / cum_inv[-1]
        targets = np.linspace(0.0, total, M + 1)
        inv = np.diff(np.interp(targets, cum, cum_inv))
    omegas = mass / inv
    return [(float(w), math.sqrt(mass)) for w in omegas]


def _ladder(d: int) -> sp.csr_matrix:
    """Annihilation operator on the first d number states."""
    return sp.diags(np.sqrt(np.arange(1, d, dtype=float)), 1, shape=(d, d), format="csr")


def _embed(ops: Sequence[sp.spmatrix]) -> sp.csr_matrix:
    out = ops[0]
    for op in ops[1:]:
        out = sp.kron(out, op, format="csr")
    return out


def build_operators(spec: TruncationSpec, params: ModelParams) -> dict:
    """Sparse H_free, H_int, q and the per-mode field operators in the product number basis."""
    spec.check_dimension()
    th = params.theta
    b = _ladder(spec.d_el)
    eye_el = sp.identity(spec.d_el, format="csr")
    eye_b = sp.identity(spec.d_b, format="csr")
    nmodes = len(spec.modes)
    a = _ladder(spec.d_b)
    num_b = a.T @ a
    phi_1 = (a + a.T) / math.sqrt(2.0)

    def on_mode(j, op):
        return _embed([eye_el] + [op if i == j else eye_b for i in range(nmodes)])

    q_el = (b + b.T) / math.sqrt(2.0 * th)
    q = _embed([q_el] + [eye_b] * nmodes)
    h_free = _embed([th * (b.T @ b + 0.5 * eye_el)] + [eye_b] * nmodes)
    phis = []
    field = sp.csr_matrix(q.shape)
    for j, (w, g) in enumerate(spec.modes):
        h_free = h_free + w * on_mode(j, num_b)
        pj = on_mode(j, phi_1)
        phis.append(pj)
        field = field + g * pj
    h_int = params.lam * (q @ field)
    return {"H_free": h_free.tocsr(), "H_int": h_int.tocsr(), "H": (h_free + h_int).tocsr(),
            "q": q, "phi": phis, "field": field.tocsr()}


@dataclass(frozen=True)
class SpectralData:
    energies: np.ndarray
    vectors: np.ndarray
    beta: float
    log_z: float

    @property
    def partition_function(self) -> float:
        return math.exp(self.log_z)


def diagonalize(h, beta: float) -> SpectralData:
    """Full dense eigendecomposition; log Z is accumulated relative to the ground energy."""
    dim = h.shape[0]
    if dim > MAX_DENSE:
        raise GuardError(f"dense diagonalization of dimension {dim} exceeds {MAX_DENSE}")
    mat = h.toarray() if sp.issparse(h) else np.asarray(h, dtype=float)
    if not np.allclose(mat, mat.T, atol=1e-12, rtol=0):
        raise ValueError("Hamiltonian is not symmetric")
    e, v = np.linalg.eigh(mat)
    log_z = -beta * e[0] + math.log(np.sum(np.exp(-beta * (e - e[0]))))
    e.setflags(write=False)
    v.setflags(write=False)
    return SpectralData(e, v, beta, log_z)


def thermal_expectation(sd: SpectralData, ops: Sequence[tuple[object, float]],
                        beta: Optional[float] = None) -> float:
    """Tr[e^{-beta H} A_1(s_1) ... A_k(s_k)] / Z with A(s) = e^{-s beta H} A e^{s beta H}.

    ``ops`` lists (matrix, s) left to right; s must not decrease along the
    list and s_k - s_1 <= 1.  Cyclically rotating e^{s_k beta H} to the front
    leaves only factors e^{-beta g E} with gaps g >= 0, so with energies shifted
    to the ground state nothing overflows.
    """
    beta = sd.beta if beta is None else beta
    if not ops:
        return 1.0
    e = sd.energies - sd.energies[0]
    s = [float(t) for _, t in ops]
    gaps = [1.0 + s[0] - s[-1]] + [s[i] - s[i - 1] for i in range(1, len(s))]
    for i, g in enumerate(gaps):
        if beta * g * e[-1] < -EXP_LIMIT:
            raise FloatingPointError(f"Boltzmann factor overflows at gap {i} (width {g})")
    v = sd.vectors
    acc = None
    for (a, _), g in zip(ops, gaps):
        mat = a.toarray() if sp.issparse(a) else np.asarray(a, dtype=float)
        rot = v.T @ mat @ v
        step = np.exp(-beta * g * e)[:, None] * rot
        acc = step if acc is None else acc @ step
    z = float(np.sum(np.exp(-beta * e)))
    return float(np.trace(acc)) / z


class FreeModeTrace:
    """Exact truncated correlators of amp*(a + a*) for one free mode of frequency omega.

    <A(t_1) ... A(t_k)> with t ascending is a sum over up/down paths delta of
    W(delta) exp(-beta omega sum_i t_i delta_i); the weights W are summed over
    the thermal initial level once, so evaluation is vectorized over samples.
    """

    def __init__(self, omega: float, amp: float, d: int, beta: float):
        self.omega, self.amp, self.d, self.beta = omega, amp, d, beta
        lv = np.arange(d)
        p = np.exp(-beta * omega * lv)
        self.p = p / p.sum()
        self._cache: dict[int, list] = {}

    def _paths(self, k: int):
        if k in self._cache:
            return self._cache[k]
        out = []
        # rightmost operator acts first; walk from l_k back to l_0 = l_k
        for bits in range(1 << k):
            delta = np.array([1 if (bits >> i) & 1 else -1 for i in range(k)])
            if delta.sum() != 0:
                continue
            w = 0.0
            for n0 in range(self.d):
                lvl, amp = n0, self.p[n0]
                for i in range(k - 1, -1, -1):
                    nxt = lvl + delta[i]
                    if nxt < 0 or nxt >= self.d:
                        amp = 0.0
                        break
                    amp *= self.amp * math.sqrt(max(lvl, nxt))
                    lvl = nxt
                w += amp
            if w != 0.0:
                out.append((delta, w))
        self._cache[k] = out
        return out

    def correlator(self, times: np.ndarray) -> np.ndarray:
        """times: (S, k), each row ascending."""
        times = np.atleast_2d(np.asarray(times, dtype=float))
        k = times.shape[1]
        if k == 0:
            return np.ones(len(times))
        if k % 2:
            return np.zeros(len(times))
        if self.beta * self.omega * k > EXP_LIMIT:
            raise FloatingPointError("beta*omega too large for the path-sum evaluation")
        out = np.zeros(len(times))
        for delta, w in self._paths(k):
            out += w * np.exp(-self.beta * self.omega * (times @ delta))
        return out


def field_correlator(traces: Sequence[FreeModeTrace], times: np.ndarray) -> np.ndarray:
    """<Phi(t_1) ... Phi(t_k)> for Phi = sum_j of independent modes, by a subset recursion."""
    times = np.atleast_2d(times)
    k = times.shape[1]
    full = (1 << k) - 1
    subsets = {}
    for mask in range(1 << k):
        cols = [i for i in range(k) if (mask >> i) & 1]
        if len(cols) % 2 == 0:
            subsets[mask] = cols
    acc = {0: np.ones(len(times))}
    for tr in traces:
        corr = {mask: tr.correlator(times[:, cols]) for mask, cols in subsets.items() if mask}
        nxt = {}
        for mask in subsets:
            total = acc.get(mask, 0.0)
            sub = mask
            while sub:
                rest = mask ^ sub
                if sub in corr and rest in acc:
                    total = total + acc[rest] * corr[sub]
                sub = (sub - 1) & mask
            nxt[mask] = total
        acc = nxt
    return acc[full] if full in acc else np.zeros(len(times))


@dataclass(frozen=True)
class WickEntry:
    label: str
    n: int
    trace: float
    pairing: float
    rel_dev: float


@dataclass(frozen=True)
class WickReport:
    entries: tuple[WickEntry, ...]

    @property
    def max_rel_dev(self) -> float:
        return max(e.rel_dev for e in self.entries)


DEFAULT_TIMES = (0.05, 0.2, 0.35, 0.6, 0.8, 0.95)


def _pairing_value(kernel, times: np.ndarray, n: int) -> float:
    pts = 2 * n
    km = np.zeros((1, pts, pts))
    for i in range(pts):
        for j in range(i + 1, pts):
            km[0, i, j] = kernel(times[j] - times[i])
    return float(pairing_sum(km, n)[0])


def wick_check(spec: TruncationSpec, beta: float, n: int, times: Optional[Sequence[float]] = None,
               theta: float = 1.0) -> WickReport:
    """Exact free 2n-point traces against the pairing sums of the two-point kernels.

    Checks the oscillator q and each mode's field operator separately, each
    on its own truncated factor.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    t = np.sort(np.asarray(times if times is not None else DEFAULT_TIMES[:2 * n], dtype=float))
    if len(t) != 2 * n:
        raise ValueError(f"need {2 * n} insertion times")
    entries = []
    b = _ladder(spec.d_el).toarray()
    h_osc = theta * (b.T @ b + 0.5 * np.eye(spec.d_el))
    q = (b + b.T) / math.sqrt(2.0 * theta)
    sd = diagonalize(h_osc, beta)
    tr = thermal_expectation(sd, [(q, s) for s in t])
    pv = _pairing_value(lambda d: k_osc(d, beta, theta), t, n)
    entries.append(WickEntry("oscillator", n, tr, pv, abs(tr - pv) / abs(pv)))
    a = _ladder(spec.d_b).toarray()
    phi = (a + a.T) / math.sqrt(2.0)
    for j, (w, g) in enumerate(spec.modes):
        sd = diagonalize(w * (a.T @ a), beta)
        tr = g ** (2 * n) * thermal_expectation(sd, [(phi, s) for s in t])

        def kf(d, w=w, g=g):
            return g * g * math.cosh(beta * w * (d - 0.5)) / (2.0 * math.sinh(0.5 * beta * w))

        pv = _pairing_value(kf, t, n)
        entries.append(WickEntry(f"mode{j}", n, tr, pv, abs(tr - pv) / abs(pv)))
    return WickReport(tuple(entries))


def h2n_oracle(n: int, params: ModelParams, spec: TruncationSpec, samples: int = 200_000,
               seed: int = 0, workers: Optional[int] = None, max_n: int = MAX_ORACLE_N) -> SeriesTerm:
    """(beta lam)^2n times the ordered-simplex integral of exact free traces.

    Oscillator and field factor separately because the free state is a
    product; the field trace is over the truncated modes of ``spec``.
    """
    if isinstance(params.form_factor, Modes) and params.form_factor != spec.as_form_factor():
        raise ValueError("params and spec must use the same discrete modes")
    trivial = _zero_or_one(n, params, Method.FOCK)
    if trivial is not None:
        return trivial
    if n > max_n:
        raise GuardError(f"oracle guarded at n <= {max_n}, got n={n}")
    start = time.perf_counter()
    beta = params.beta
    osc = FreeModeTrace(params.theta, 1.0 / math.sqrt(2.0 * params.theta), spec.d_el, beta)
    modes = [FreeModeTrace(w, g / math.sqrt(2.0), spec.d_b, beta) for w, g in spec.modes]

    def integrand(s):
        t = s[:, ::-1]
        return osc.correlator(t) * field_correlator(modes, t)

    r = mc_integrate_simplex(2 * n, integrand, seed, samples, workers)
    pre = (beta * params.lam) ** (2 * n)
    return SeriesTerm(n, pre * r.value, Method.FOCK, pre * r.stderr, time.perf_counter() - start)
