import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oscbath import fock
from oscbath.dyson import h2n_direct, h2n_linked
from oscbath.kernels import KernelEval, k_osc
from oscbath.model import ModelParams, Modes, PowerLaw, coth_weighted_norm_sq, weighted_norm_sq


def modes_of(ms):
    return Modes(tuple(w for w, _ in ms), tuple(g for _, g in ms))


def test_single_mode_discretization(unit_power_law):
    [(w, g)] = fock.mode_discretization(unit_power_law, 1)
    assert g * g == pytest.approx(4 * math.pi / 3, rel=1e-14)
    assert g * g / w == pytest.approx(2 * math.pi, rel=1e-14)


@pytest.mark.parametrize("M", [1, 4, 16])
def test_discretization_conserves_norms(unit_power_law, M):
    ms = modes_of(fock.mode_discretization(unit_power_law, M))
    assert ms.weighted_norm_sq(0) == pytest.approx(weighted_norm_sq(unit_power_law, 0), rel=1e-12)
    assert ms.weighted_norm_sq(-1) == pytest.approx(weighted_norm_sq(unit_power_law, -1), rel=1e-12)


def test_discretization_refinement(unit_power_law):
    f = PowerLaw(1.0, 0.5, 2.0)
    a = modes_of(fock.mode_discretization(f, 8)).weighted_norm_sq(-1)
    b = modes_of(fock.mode_discretization(f, 16)).weighted_norm_sq(-1)
    assert abs(a - b) / b < 0.02
    m16 = fock.mode_discretization(unit_power_law, 16)
    coth = sum(g * g / math.tanh(w / 2) for w, g in m16)
    assert coth == pytest.approx(coth_weighted_norm_sq(unit_power_law, 1.0), rel=0.03)


def test_tabulated_discretization():
    from oscbath.model import Tabulated
    t = Tabulated((0.0, 0.5, 1.0), (0.0, 1.0, 0.2))
    ms = modes_of(fock.mode_discretization(t, 10))
    assert ms.weighted_norm_sq(0) == pytest.approx(t.weighted_norm_sq(0), rel=1e-12)
    assert ms.weighted_norm_sq(-1) == pytest.approx(t.weighted_norm_sq(-1), rel=1e-6)


def test_operators_ladder_and_spectrum():
    spec = fock.TruncationSpec(6, ((0.7, 0.3), (1.6, 0.5)), 4)
    p = ModelParams(1.2, 0.0, 1.0, modes_of(spec.modes))
    ops = fock.build_operators(spec, p)
    b = fock._ladder(6).toarray()
    comm = b @ b.T - b.T @ b
    assert np.allclose(comm[:-1, :-1], np.eye(5), atol=0)
    h = ops["H_free"].toarray()
    assert np.allclose(h, h.T)
    e = np.sort(np.linalg.eigvalsh(h))
    assert e[0] == pytest.approx(0.6)
    lattice = sorted(1.2 * (n + 0.5) + 0.7 * a + 1.6 * c for n in range(6) for a in range(4) for c in range(4))
    assert np.allclose(e, lattice)


def test_interaction_symmetric():
    spec = fock.TruncationSpec(5, ((0.7, 0.3),), 5)
    ops = fock.build_operators(spec, ModelParams(1.0, 0.4, 1.0, modes_of(spec.modes)))
    for key in ("H", "H_int"):
        m = ops[key].toarray()
        assert np.abs(m - m.T).max() < 1e-14


def test_dimension_guard():
    spec = fock.TruncationSpec(10, tuple((1.0, 0.1) for _ in range(6)), 10)
    with pytest.raises(fock.GuardError):
        fock.build_operators(spec, ModelParams(1.0, 0.1, 1.0, modes_of(spec.modes)))


def test_partition_function_identity():
    h = np.diag([0.3, 1.0, 2.5]) + 0.1 * (np.eye(3, k=1) + np.eye(3, k=-1))
    sd = fock.diagonalize(h, 1.8)
    e = sd.energies
    assert sd.partition_function == pytest.approx(np.sum(np.exp(-0.7 * e) * np.exp(-1.1 * e)), rel=1e-14)
    # Tr e^{-beta H} computed without the eigenbasis
    from scipy.linalg import expm
    assert sd.partition_function == pytest.approx(np.trace(expm(-1.8 * h)), rel=1e-13)
    assert fock.thermal_expectation(sd, []) == pytest.approx(1.0, rel=1e-14)


def test_odd_parity_vanishes():
    spec = fock.TruncationSpec(6, ((0.8, 0.4),), 6)
    ops = fock.build_operators(spec, ModelParams(1.0, 0.5, 1.0, modes_of(spec.modes)))
    sd = fock.diagonalize(ops["H"], 1.0)
    val = fock.thermal_expectation(sd, [(ops["q"], 0.1), (ops["field"], 0.4), (ops["q"], 0.7)])
    assert abs(val) < 1e-12


def _free_osc(d=40, theta=1.0, beta=1.0):
    b = fock._ladder(d).toarray()
    h = theta * (b.T @ b + 0.5 * np.eye(d))
    q = (b + b.T) / math.sqrt(2 * theta)
    return fock.diagonalize(h, beta), q


def test_single_insertion_vanishes():
    sd, q = _free_osc()
    assert abs(fock.thermal_expectation(sd, [(q, 0.3)])) < 1e-12
    assert abs(fock.thermal_expectation(sd, [(q, 0.1), (q, 0.2), (q, 0.7)])) < 1e-12


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_two_point_matches_k_osc(s, t):
    sd, q = _free_osc()
    lo, hi = sorted((s, t))
    val = fock.thermal_expectation(sd, [(q, lo), (q, hi)])
    assert val == pytest.approx(k_osc(hi - lo, 1.0, 1.0), rel=1e-6)


def test_single_mode_field_two_point():
    w, g, beta = 1.3, 0.8, 1.0
    a = fock._ladder(40).toarray()
    sd = fock.diagonalize(w * a.T @ a, beta)
    phi = g * (a + a.T) / math.sqrt(2)
    ev = KernelEval(beta, 1.0, Modes((w,), (g,)))
    for s, t in [(0.1, 0.4), (0.0, 1.0), (0.3, 0.3)]:
        assert fock.thermal_expectation(sd, [(phi, s), (phi, t)]) == pytest.approx(ev.k_f(t - s), rel=1e-6)


def test_stabilized_large_beta():
    sd, q = _free_osc(d=30, beta=400.0)
    val = fock.thermal_expectation(sd, [(q, 0.2), (q, 0.9)])
    assert val == pytest.approx(k_osc(0.7, 400.0, 1.0), rel=1e-6, abs=1e-300)


def test_misordered_times_overflow_is_named():
    sd, q = _free_osc(d=30, beta=400.0)
    with pytest.raises(FloatingPointError, match="gap"):
        fock.thermal_expectation(sd, [(q, 0.9), (q, 0.1)])


@pytest.mark.parametrize("n", [1, 2, 3])
def test_wick(n):
    spec = fock.TruncationSpec(40, ((1.3, 0.7),), 40)
    r = fock.wick_check(spec, 1.0, n)
    assert r.max_rel_dev < 1e-5


def test_wick_equal_time_fourth_moment():
    a = fock._ladder(40).toarray()
    sd = fock.diagonalize(1.2 * a.T @ a, 1.0)
    phi = (a + a.T) / math.sqrt(2)
    four = fock.thermal_expectation(sd, [(phi, 0.4)] * 4)
    two = fock.thermal_expectation(sd, [(phi, 0.4)] * 2)
    assert four == pytest.approx(3 * two**2, rel=1e-6)


def test_path_sum_matches_dense_trace():
    w, amp, d, beta = 0.9, 0.6, 25, 1.2
    tr = fock.FreeModeTrace(w, amp, d, beta)
    a = fock._ladder(d).toarray()
    sd = fock.diagonalize(w * a.T @ a, beta)
    A = amp * (a + a.T)
    times = np.array([[0.05, 0.3, 0.31, 0.9], [0.0, 0.0, 0.5, 1.0]])
    for row in times:
        dense = fock.thermal_expectation(sd, [(A, t) for t in row])
        assert tr.correlator(row[None, :])[0] == pytest.approx(dense, rel=1e-12)
    assert tr.correlator(times[:, :3]).tolist() == [0.0, 0.0]


def test_two_mode_field_correlator_matches_joint_trace():
    spec = fock.TruncationSpec(2, ((0.8, 0.5), (1.7, 0.9)), 14)
    p = ModelParams(1.0, 0.0, 1.0, modes_of(spec.modes))
    ops = fock.build_operators(spec, p)
    sd = fock.diagonalize(ops["H"], 1.0)
    traces = [fock.FreeModeTrace(w, g / math.sqrt(2), 14, 1.0) for w, g in spec.modes]
    t = np.array([[0.1, 0.25, 0.6, 0.8]])
    dense = fock.thermal_expectation(sd, [(ops["field"], s) for s in t[0]])
    assert fock.field_correlator(traces, t)[0] == pytest.approx(dense, rel=1e-10)


def test_truncation_convergence():
    ms = ((0.6, 0.7),)
    p = ModelParams(1.0, 0.3, 1.0, modes_of(ms))
    a = fock.h2n_oracle(1, p, fock.TruncationSpec(20, ms, 30), samples=20_000)
    b = fock.h2n_oracle(1, p, fock.TruncationSpec(40, ms, 60), samples=20_000)
    assert a.value == pytest.approx(b.value, rel=1e-6)


def test_oracle_trivial_and_guard():
    ms = ((1.0, 0.5),)
    p = ModelParams(1.0, 0.3, 1.0, modes_of(ms))
    spec = fock.TruncationSpec(10, ms, 10)
    assert fock.h2n_oracle(0, p, spec).value == 1.0
    assert fock.h2n_oracle(1, p.with_(lam=0.0), spec).value == 0.0
    with pytest.raises(fock.GuardError):
        fock.h2n_oracle(3, p, spec)
    with pytest.raises(ValueError):
        fock.h2n_oracle(1, p.with_(form_factor=Modes((2.0,), (0.5,))), spec)


@pytest.mark.parametrize("n", [1, 2])
def test_three_way_agreement(n, unit_power_law):
    ms = fock.mode_discretization(unit_power_law, 6)
    p = ModelParams(1.0, 0.3, 1.0, modes_of(ms))
    spec = fock.TruncationSpec(40, tuple(ms), 60)
    o = fock.h2n_oracle(n, p, spec, samples=100_000, seed=11)
    d = h2n_direct(n, p, samples=100_000, seed=12)
    lk = h2n_linked(n, p)
    for x, y in ((o, d), (o, lk), (d, lk)):
        assert abs(x.value - y.value) <= 3 * math.hypot(x.error_estimate, y.error_estimate)
