"""Integration engines: simplex Monte Carlo, tensor grids, and kernel-operator traces.

Monte Carlo runs are split into fixed chunks of CHUNK samples; chunk c draws
from a generator seeded by (seed, c), and chunk sums are reduced in chunk
order.  Results therefore do not depend on how many worker threads are used.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterator, Optional

import numpy as np
from scipy.special import gammaln, roots_legendre

CHUNK = 1 << 15
THREADS_ENV = "OSCBATH_THREADS"


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(chunk,)))


@dataclass(frozen=True)
class MCResult:
    value: float
    stderr: float
    count: int


def _chunk_sizes(count: int) -> list[int]:
    full, rest = divmod(count, CHUNK)
    return [CHUNK] * full + ([rest] if rest else [])


def mc_mean(draw: Callable[[np.random.Generator, int], np.ndarray],
            integrand: Callable[[np.ndarray], np.ndarray],
            count: int, seed: int, workers: Optional[int] = None) -> MCResult:
    """Sample mean of integrand(draw(rng, size)) with its standard error."""
    if count < 2:
        raise ValueError("need at least two samples")
    sizes = _chunk_sizes(count)

    def run(job):
        c, size = job
        x = draw(chunk_rng(seed, c), size)
        vals = np.asarray(integrand(x), dtype=float)
        bad = ~np.isfinite(vals)
        if np.any(bad):
            idx = int(np.argmax(bad))
            raise FloatingPointError(f"integrand returned {vals[idx]} at sample {x[idx].tolist()}")
        return float(np.sum(vals)), float(np.sum(vals * vals))

    workers = workers or default_workers()
    jobs = list(enumerate(sizes))
    if workers == 1:
        parts = [run(j) for j in jobs]
    else:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, jobs))
    s = s2 = 0.0
    for a, b in parts:
        s += a
        s2 += b
    mean = s / count
    var = max(s2 / count - mean * mean, 0.0)
    return MCResult(mean, math.sqrt(var / (count - 1)), count)


def uniform_simplex(rng: np.random.Generator, size: int, n: int) -> np.ndarray:
    """Points (s_1 >= s_2 >= ... >= s_n) uniform on the unit simplex."""
    return -np.sort(-rng.random((size, n)), axis=1)


def sample_simplex(n: int, seed: int, count: int) -> Iterator[np.ndarray]:
    """Stream uniform simplex points chunk by chunk (same chunking as mc_mean)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    for c, size in enumerate(_chunk_sizes(count)):
        yield uniform_simplex(chunk_rng(seed, c), size, n)


def mc_integrate_simplex(n: int, integrand: Callable[[np.ndarray], np.ndarray],
                         seed: int, count: int, workers: Optional[int] = None) -> MCResult:
    """int over {1 >= s_1 >= ... >= s_n >= 0} of integrand, by uniform sampling."""
    vol = math.exp(-math.lgamma(n + 1))
    r = mc_mean(lambda rng, size: uniform_simplex(rng, size, n), integrand, count, seed, workers)
    return MCResult(r.value * vol, r.stderr * vol, count)


def mc_integrate_cube(n: int, integrand: Callable[[np.ndarray], np.ndarray],
                      seed: int, count: int, workers: Optional[int] = None) -> MCResult:
    return mc_mean(lambda rng, size: rng.random((size, n)), integrand, count, seed, workers)


def simplex_gaps(s: np.ndarray) -> np.ndarray:
    """Cyclic gaps (1 - s_1 + s_n, s_1 - s_2, ..., s_{n-1} - s_n); they sum to 1."""
    periodic = 1.0 - s[:, :1] + s[:, -1:]
    return np.concatenate([periodic, -np.diff(s, axis=1)], axis=1)


def mc_integrate_simplex_gaps(gap_exponents, integrand: Callable[[np.ndarray], np.ndarray],
                              seed: int, count: int, workers: Optional[int] = None) -> MCResult:
    """Integrate a function of the cyclic gaps over the simplex by Dirichlet importance sampling.

    ``integrand`` receives the gap array (periodic gap first).  Gaps are drawn
    from Dirichlet(a) with a_i = 1 - e_i/2 (a_1 gets +1 for the free offset
    of s_n), so that integrands behaving like prod g_i^(-e_i) keep a finite
    variance without the proposal matching them exactly.
    """
    e = np.asarray(gap_exponents, dtype=float)
    n = len(e)
    if np.any(e >= 1):
        raise ValueError("gap exponents must be < 1 for integrability")
    if n == 1:
        # a single gap is identically 1 and s_n ranges over [0, 1]
        return mc_mean(lambda rng, size: np.ones((size, 1)), integrand, count, seed, workers)
    a = 1.0 - 0.5 * np.clip(e, 0.0, None)
    a[0] += 1.0
    log_norm = gammaln(a.sum()) - gammaln(a).sum()

    def weight(g):
        # Lebesgue measure on the simplex carries an extra length g_1 for the offset
        log_q = log_norm + np.sum((a - 1.0) * np.log(g), axis=1)
        return integrand(g) * g[:, 0] * np.exp(-log_q)

    def draw(rng, size):
        g = rng.dirichlet(a, size)
        return np.maximum(g, np.finfo(float).tiny)

    return mc_mean(draw, weight, count, seed, workers)


def gauss_legendre_01(order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = roots_legendre(order)
    return 0.5 * (x + 1.0), 0.5 * w


def tensor_grid_integrate(n: int, integrand: Callable[[np.ndarray], np.ndarray], order: int = 32) -> float:
    """Product Gauss-Legendre rule on [0,1]^n; integrand takes points of shape (..., n)."""
    t, w = gauss_legendre_01(order)
    mesh = np.stack(np.meshgrid(*([t] * n), indexing="ij"), axis=-1)
    wts = np.ones([order] * n)
    for axis in range(n):
        shape = [1] * n
        shape[axis] = order
        wts = wts * w.reshape(shape)
    return float(np.sum(wts * integrand(mesh.reshape(-1, n)).reshape(wts.shape)))


@dataclass(frozen=True)
class DiscretizedKernelOperator:
    """Nystrom matrix M[i, j] = K(|t_i - t_j|) w_j of a translation kernel on [0, 1]."""

    nodes: np.ndarray
    weights: np.ndarray
    matrix: np.ndarray

    @classmethod
    def build(cls, kernel: Callable[[np.ndarray], np.ndarray], n: int) -> "DiscretizedKernelOperator":
        t, w = gauss_legendre_01(n)
        k = kernel(np.abs(t[:, None] - t[None, :]))
        return cls(t, w, k * w[None, :])

    def symmetric(self) -> np.ndarray:
        """W^1/2 K W^1/2, similar to ``matrix`` and symmetric."""
        sw = np.sqrt(self.weights)
        return sw[:, None] * (self.matrix / self.weights[None, :]) * sw[None, :]


@dataclass(frozen=True)
class CycleIntegral:
    value: float
    error: float
    coarse: float
    fine: float
    grid: int
    warning: Optional[str] = None


def _cycle_trace(m: int, s1: np.ndarray, s2: np.ndarray) -> float:
    return float(np.trace(np.linalg.matrix_power(s1 @ s2, m)))


def cycle_integral(m: int, k1: Callable, k2: Callable, grid: int = 64, rtol: float = 5e-3) -> CycleIntegral:
    """int over [0,1]^{2m} of the alternating cycle K1 K2 K1 K2 ... as trace((T1 T2)^m).

    Gauss-Legendre Nystrom matrices at ``grid`` and 2*``grid`` nodes.  The
    kernels have a kink on the diagonal, so the rule converges like N^-2;
    the returned value is the Richardson extrapolation of the two grids and
    the error estimate is |fine - coarse| / 3.  A warning is attached when the
    grids differ by more than ``rtol``.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if grid < 16:
        raise ValueError("grid must be >= 16")
    vals = []
    for n in (grid, 2 * grid):
        a = DiscretizedKernelOperator.build(k1, n).symmetric()
        b = DiscretizedKernelOperator.build(k2, n).symmetric()
        vals.append(_cycle_trace(m, a, b))
    coarse, fine = vals
    if coarse < 0 or fine < 0:
        raise AssertionError(f"cycle integral of positive kernels came out negative: {coarse}, {fine}")
    err = abs(fine - coarse) / 3.0
    value = fine + (fine - coarse) / 3.0
    warn = None
    if abs(fine - coarse) > rtol * fine:
        warn = f"cycle integral m={m} changed by {abs(fine - coarse) / fine:.2e} between grids {grid} and {2 * grid}"
        warnings.warn(warn, RuntimeWarning, stacklevel=2)
    return CycleIntegral(value, err, coarse, fine, grid, warn)
