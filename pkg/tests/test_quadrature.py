import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oscbath.kernels import KernelEval
from oscbath.model import PowerLaw
from oscbath.quadrature import (
    CHUNK,
    DiscretizedKernelOperator,
    cycle_integral,
    mc_integrate_cube,
    mc_integrate_simplex,
    mc_integrate_simplex_gaps,
    sample_simplex,
    simplex_gaps,
    tensor_grid_integrate,
)


def within(r, target, k=3.0):
    return abs(r.value - target) <= k * r.stderr


def test_samples_are_ordered_and_deterministic():
    a = np.concatenate(list(sample_simplex(4, 7, 50_000)))
    b = np.concatenate(list(sample_simplex(4, 7, 50_000)))
    assert a.shape == (50_000, 4)
    assert np.array_equal(a, b)
    assert np.all(np.diff(a, axis=1) <= 0) and a.min() >= 0 and a.max() <= 1


def test_sample_means():
    one = np.concatenate(list(sample_simplex(1, 1, 100_000)))[:, 0]
    assert abs(one.mean() - 0.5) <= 3 * one.std() / math.sqrt(len(one))
    two = np.concatenate(list(sample_simplex(2, 2, 100_000)))[:, 0]
    assert abs(two.mean() - 2 / 3) <= 3 * two.std() / math.sqrt(len(two))


@pytest.mark.parametrize("n", range(1, 7))
def test_simplex_volume(n):
    # a mildly varying integrand so the estimator has a nonzero spread
    r = mc_integrate_simplex(n, lambda s: 1.0 + 0.1 * (s[:, 0] - n / (n + 1)), 3, 40_000)
    assert within(r, 1 / math.factorial(n), k=4)


def test_constant_three():
    r = mc_integrate_simplex(3, lambda s: np.ones(len(s)), 0, 10_000)
    assert r.value == pytest.approx(1 / 6, rel=1e-14)


def test_nonfinite_integrand_reports_sample():
    with pytest.raises(FloatingPointError, match="at sample"):
        mc_integrate_cube(2, lambda u: np.where(u[:, 0] > 0.5, np.inf, 1.0), 0, 1000)


def test_worker_count_does_not_change_result():
    f = lambda u: np.cos(u.sum(axis=1))
    a = mc_integrate_cube(3, f, 11, 3 * CHUNK + 17, workers=1)
    b = mc_integrate_cube(3, f, 11, 3 * CHUNK + 17, workers=4)
    assert a == b


def test_stderr_scales_like_inverse_sqrt():
    f = lambda u: np.exp(u[:, 0] * u[:, 1])
    a = mc_integrate_cube(2, f, 5, 4 * CHUNK)
    b = mc_integrate_cube(2, f, 6, 8 * CHUNK)
    assert a.stderr / b.stderr == pytest.approx(math.sqrt(2), rel=0.2)


def test_gaps_sum_to_one():
    s = np.concatenate(list(sample_simplex(5, 0, 1000)))
    g = simplex_gaps(s)
    assert np.allclose(g.sum(axis=1), 1.0)
    assert np.all(g >= 0)


def test_separable_kernel_product_vs_grid(unit_power_law):
    ev = KernelEval(1.0, 1.0, unit_power_law)
    f = lambda u: ev.k_osc(np.abs(u[:, 0] - u[:, 1])) * ev.k_f(np.abs(u[:, 0] - u[:, 1]))
    grid = tensor_grid_integrate(2, f, order=200)
    mc = mc_integrate_cube(2, f, 1, 200_000)
    assert within(mc, grid)


@pytest.mark.parametrize("e", [(0.5, 0.5), (0.0, 0.25, 0.25), (0.3, 0.0, 0.6, 0.1)])
def test_gap_sampler_matches_dirichlet_integral(e):
    e = np.asarray(e)
    exact = math.exp(math.lgamma(2 - e[0]) + sum(math.lgamma(1 - x) for x in e[1:]) - math.lgamma(len(e) + 1 - e.sum()))
    r = mc_integrate_simplex_gaps(e, lambda g: np.prod(g ** -e, axis=1), 9, 200_000)
    assert within(r, exact)


def test_gap_sampler_rejects_nonintegrable():
    with pytest.raises(ValueError):
        mc_integrate_simplex_gaps([1.0, 0.0], lambda g: g[:, 0], 0, 100)


def test_operator_row_sums():
    op = DiscretizedKernelOperator.build(lambda d: np.exp(-d), 40)
    t = op.nodes
    exact = 2 - np.exp(-t) - np.exp(t - 1)
    assert np.allclose(op.matrix.sum(axis=1), exact, rtol=1e-3)


@pytest.mark.parametrize("m", [1, 2, 5])
def test_cycle_integral_constant_kernels(m):
    one = lambda d: np.ones_like(d)
    assert cycle_integral(m, one, one, grid=16).value == pytest.approx(1.0, rel=1e-12)


def test_cycle_integral_m2_vs_mc(unit_power_law):
    ev = KernelEval(1.0, 1.0, unit_power_law)
    c = cycle_integral(2, ev.k_osc, ev.k_f)

    def cyc(u):
        d = lambda i, j: np.abs(u[:, i] - u[:, j])
        return ev.k_osc(d(0, 1)) * ev.k_f(d(1, 2)) * ev.k_osc(d(2, 3)) * ev.k_f(d(3, 0))

    mc = mc_integrate_cube(4, cyc, 2, 400_000)
    assert abs(mc.value - c.value) <= 3 * math.hypot(mc.stderr, c.error)


def test_cycle_integral_symmetric_in_kernels(unit_power_law):
    ev = KernelEval(0.7, 1.4, unit_power_law)
    a = cycle_integral(3, ev.k_osc, ev.k_f)
    b = cycle_integral(3, ev.k_f, ev.k_osc)
    assert a.value == pytest.approx(b.value, rel=1e-10)


def test_cycle_integral_rejects_small_grid():
    one = lambda d: np.ones_like(d)
    with pytest.raises(ValueError):
        cycle_integral(1, one, one, grid=8)


@given(st.integers(1, 4), st.floats(0.3, 3.0), st.floats(0.3, 3.0))
def test_cycle_integral_positive_and_converged(m, b, th):
    from oscbath.dyson import j_cycle
    from oscbath.model import ModelParams
    ev = KernelEval(b, th, PowerLaw(1.0, 0.0, 1.0))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        c = cycle_integral(m, ev.k_osc, ev.k_f, grid=64)
    assert c.value > 0 and c.error >= 0
    if b * th <= 4.0:
        assert abs(c.fine - c.coarse) < 5e-3 * c.fine
    # the extrapolated value stays accurate past the range where the raw grids agree
    exact = j_cycle(m, ModelParams(th, 0.1, b, PowerLaw(1.0, 0.0, 1.0)), "fourier").value
    assert c.value == pytest.approx(exact, rel=1e-4)
