import math

import numpy as np
import pytest

from nlsqp.lattice import Box, FrequencyVector, linear_solution, make_spec, site
from nlsqp.newton import (
    ConditionGateError,
    ConvergenceError,
    MIN_AMPLITUDE,
    analytic_q_jacobian,
    diophantine_check,
    excision_sweep,
    fd_q_jacobian,
    first_iteration,
    newton_step,
    q_solve,
    residual_norms,
    residual_series,
    solve,
)
from nlsqp.verify import default_weight


def hand_q_tp2(a1, a2, delta):
    """Hand convolution oracle for the TP2 modulated frequencies."""
    return (1 + delta * (a1 ** 2 + 2 * a2 ** 2),
            4 + delta * (2 * a1 ** 2 + a2 ** 2))


def test_q_solve_tp1(tp1):
    u0, _ = linear_solution(tp1)
    w = q_solve(u0, tp1)
    assert w.omega[0] == pytest.approx(4 + 1e-3 * 0.49, abs=1e-15)


def test_q_solve_tp2_closed_form(tp2):
    u0, _ = linear_solution(tp2)
    w = q_solve(u0, tp2)
    assert w.omega == pytest.approx(hand_q_tp2(0.6, 0.8, 1e-3), abs=1e-14)


def test_q_solve_small_amplitude_limit():
    for eps in (1e-2, 1e-3):
        spec = make_spec(d=1, b=2, p=1, delta=1e-3, j_list=[1, 2],
                         amplitudes=[eps, eps])
        u0, _ = linear_solution(spec)
        w = q_solve(u0, spec)
        assert max(abs(a - b) for a, b in zip(w.omega, (1, 4))) <= 4e-3 * eps ** 2


def test_q_solve_with_phase():
    spec = make_spec(d=1, b=1, p=1, delta=1e-3, j_list=[2], amplitudes=[0.7],
                     phase_m=0.25)
    u0, _ = linear_solution(spec)
    w = q_solve(u0, spec)
    assert w.omega[0] == pytest.approx(4 + 0.25 + 1e-3 * 0.49)


def test_newton_tp1_one_step(tp1):
    rep = solve(tp1)
    assert rep.steps == 1
    assert rep.residual_history[-1][1] < 1e-12
    assert rep.omega[0] == pytest.approx(4 + 1e-3 * 0.49, abs=1e-12)
    # Plane wave: no off-seed correction at all.
    assert len(rep.state.u) == 1


def test_newton_tp2_residual_cubes(tp2):
    # Post-first-step residual drops like delta^3 (slope fitted over three
    # decades in the acceptance suite; spot ratio here).
    vals = []
    for dl in (1e-2, 1e-3):
        spec = make_spec(d=1, b=2, p=1, delta=dl, j_list=[1, 2],
                         amplitudes=[0.6, 0.8])
        state, _ = first_iteration(spec)
        vals.append(state.residual_weighted)
    assert vals[0] / vals[1] == pytest.approx(1e3, rel=0.5)


def test_newton_step_anchors_seed_amplitudes(tp2):
    state, _ = first_iteration(tp2)
    for s, (j, a) in zip(tp2.seed_sites(), tp2.modes):
        assert state.u[s] == a  # bit-exact anchoring


def test_newton_step_reality(tp2):
    from nlsqp.lattice import conjugate_flip
    state, _ = first_iteration(tp2)
    flip = conjugate_flip(state.u)
    assert flip.support() == state.v.support()
    for s in state.v.support():
        assert state.v[s] == flip[s]
    assert all(abs(w - round(w, 12)) <= 1 for w in state.omega.omega)  # real by type


def test_first_iteration_jacobian_tp2(tp2):
    _, mod = first_iteration(tp2)
    d = tp2.delta
    expected = d * np.array([[2 * 0.6, 4 * 0.8], [4 * 0.6, 2 * 0.8]])
    assert np.allclose(mod.jacobian, expected, rtol=1e-12)
    assert mod.jac_det == pytest.approx(-12 * d * d * 0.6 * 0.8, rel=1e-8)
    assert mod.jac_fd_rel_err <= 1e-6


def test_jacobian_fd_matches_analytic(tp1, tp2):
    for spec in (tp1, tp2):
        ja = analytic_q_jacobian(spec)
        jf = fd_q_jacobian(spec)
        assert np.max(np.abs(ja - jf)) <= 1e-6 * np.max(np.abs(ja))


def test_first_iteration_delta_omega_exact(tp2):
    _, mod = first_iteration(tp2)
    expected = (1e-3 * (0.36 + 2 * 0.64), 1e-3 * (2 * 0.36 + 0.64))
    assert mod.delta_omega == pytest.approx(expected, abs=1e-10)


def test_first_iteration_refuses_failed_condition(tp2):
    from nlsqp.conditions import ConditionReport
    bad = {"i": ConditionReport(name="non_intersection", verdict="fail")}
    with pytest.raises(ConditionGateError):
        first_iteration(tp2, condition_reports=bad)


def test_first_iteration_refuses_tiny_amplitude():
    spec = make_spec(d=1, b=2, p=1, delta=1e-3, j_list=[1, 2],
                     amplitudes=[0.5, MIN_AMPLITUDE / 2])
    with pytest.raises(ConditionGateError, match="fewer frequencies"):
        first_iteration(spec)


def test_delta_omega_slope_one():
    norms, deltas = [], (1e-2, 1e-3, 1e-4)
    for dl in deltas:
        spec = make_spec(d=1, b=2, p=1, delta=dl, j_list=[1, 2],
                         amplitudes=[0.6, 0.8])
        u0, _ = linear_solution(spec)
        w1 = q_solve(u0, spec)
        norms.append(np.linalg.norm(np.array(w1.omega) - np.array((1.0, 4.0))))
    slope = np.polyfit(np.log(deltas), np.log(norms), 1)[0]
    assert slope == pytest.approx(1.0, abs=0.15)


def test_q_solve_rejects_non_real_bracket(tp2):
    # A lone complex off-seed term breaks the flip symmetry of the cubic
    # bracket, so the frequency would come out complex.
    from nlsqp.lattice import SparseSeries
    from nlsqp.newton import NonRealFrequency
    u0, _ = linear_solution(tp2)
    terms = {s: u0[s] for s in u0.support()}
    # (-2,1|0) + (0,-1|2) - (-1,0|1) = (-1,0|1): the phase of this term
    # survives into the first seed bracket.
    terms[site((-2, 1), (0,))] = 0.3j
    u_bad = SparseSeries(2, 1, terms, drop_tol=0.0)
    with pytest.raises(NonRealFrequency):
        q_solve(u_bad, tp2)


def test_assemble_box_must_hold_seed(tp2):
    from nlsqp.linop import LinopError, assemble
    u0, v0 = linear_solution(tp2)
    op = assemble(u0, v0, tp2.omega0(), tp2, Box(1, 1))
    with pytest.raises(LinopError, match="seed"):
        op.q_indices()


# -- Diophantine -------------------------------------------------------------


def test_diophantine_integral_frequency_fails(tp2):
    rep = diophantine_check(tp2.omega0(), 1e-3, 1e-2, 6.0, 5)
    assert not rep.passed
    assert rep.worst_margin == 0.0
    assert rep.worst_n == (1, 0)


def test_diophantine_tp2_modulated_passes(tp2):
    u0, _ = linear_solution(tp2)
    w1 = q_solve(u0, tp2)
    rep = diophantine_check(w1, 1e-3, 1e-2, 6.0, 20)
    assert rep.passed
    # The minimizer realizes the fitted kappa.
    n = rep.worst_n
    x = w1.dot(n)
    margin = abs(x - round(x))
    assert rep.fitted_kappa == pytest.approx(
        margin * max(abs(c) for c in n) ** 6.0 / 1e-3)


def test_resonance_kill(tp2):
    u0, _ = linear_solution(tp2)
    w0, w1 = tp2.omega0(), q_solve(u0, tp2)
    n = (4, -1)
    assert w0.dot(n) == 0.0
    killed = w1.dot(n)
    assert abs(killed - 1e-3 * (2 * 0.36 + 7 * 0.64)) <= 1e-10


# -- Full solve --------------------------------------------------------------


def test_solve_tp2(tp2):
    rep = solve(tp2, tol=1e-12)
    assert rep.converged and rep.steps <= 6
    assert rep.quad_ratios  # quadratic-convergence constants recorded
    assert rep.cs_mass <= 1e-11
    assert rep.amplitudes_physical == pytest.approx(
        tuple(math.sqrt(1e-3) * a for a in (0.6, 0.8)))


def test_solve_tp3(tp3):
    rep = solve(tp3, box=Box(6, 3))
    assert rep.converged and rep.steps <= 6
    assert rep.residual_history[-1][1] < 1e-11
    assert rep.cs_mass <= 1e-11
    # Physical amplitude scaling delta^(1/2p) with p = 2.
    assert rep.amplitudes_physical[0] == pytest.approx(1e-3 ** 0.25 * 0.9)


def test_solve_nonconvergence_reports_history(tp2):
    with pytest.raises(ConvergenceError) as err:
        solve(tp2, tol=1e-30, max_iter=3)
    assert len(err.value.history) >= 3


def test_solve_omega_shift_matches_qsolve(tp1):
    rep = solve(tp1)
    assert rep.omega_shifts[0] == pytest.approx(1e-3 * 0.49, rel=1e-10)


def test_residual_series_flip_symmetry(tp2):
    u0, v0 = linear_solution(tp2)
    fu, fv = residual_series(u0, v0, tp2.omega0(), tp2)
    from nlsqp.lattice import conjugate_flip
    ff = conjugate_flip(fu)
    assert ff.support() == fv.support()
    for s in fv.support():
        assert fv[s] == pytest.approx(ff[s])


# -- Excision sweep ----------------------------------------------------------


def test_excision_sweep_tp1_analytic(tp1):
    # Analytic oracle: the seed 2x2 block determinant is 3 a^4, the isolated
    # blocks are 2 a^2; for the tested epsilons the quartic is binding, so
    # the excised fraction is the measure of {a : 3 a^4 < eps}.
    res = excision_sweep(tp1, [1e-1, 1e-2, 1e-3], n_samples=2000, seed=42,
                         box=Box(4, 3))
    for eps, frac in zip(res.epsilons, res.fractions):
        analytic = min(1.0, (eps / 3.0) ** 0.25)
        sigma = math.sqrt(analytic * (1 - analytic) / res.n_samples)
        assert abs(frac - analytic) <= 2.5 * sigma


def test_excision_sweep_monotone(tp1):
    res = excision_sweep(tp1, [1e-1, 1e-2, 1e-3, 1e-4], n_samples=500,
                         seed=3, box=Box(4, 3))
    assert all(a >= b for a, b in zip(res.fractions, res.fractions[1:]))


def test_excision_sweep_eps_zero(tp1):
    res = excision_sweep(tp1, [0.0], n_samples=200, seed=1, box=Box(4, 3))
    assert res.fractions == [0.0]


def test_excision_sweep_deterministic(tp1):
    r1 = excision_sweep(tp1, [1e-2], n_samples=300, seed=9, box=Box(4, 3))
    r2 = excision_sweep(tp1, [1e-2], n_samples=300, seed=9, box=Box(4, 3))
    assert r1.fractions == r2.fractions
    assert np.array_equal(r1.min_block_values, r2.min_block_values)
