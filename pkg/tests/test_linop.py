import math

import numpy as np
import pytest

from nlsqp.lattice import Box, FrequencyVector, linear_solution, make_spec, site
from nlsqp.linop import (
    ExcisionError,
    assemble,
    block_decompose,
    invert_with_certificates,
    n0_scale,
    resolvent_square_norm,
    restricted_solver,
    schur_complement,
    second_step_radius,
    theta_spectrum_scan,
)
from nlsqp.newton import q_solve


def seed_operator(spec, box=None, theta=0.0):
    u0, v0 = linear_solution(spec)
    return assemble(u0, v0, spec.omega0(), spec, box or Box(9, 3), theta=theta)


def test_assemble_tp1_seed_block_entries(tp1):
    op = seed_operator(tp1)
    a = 0.7
    iu = op.doubled_index(site((-1,), (2,)), "U")
    iv = op.doubled_index(site((1,), (-2,)), "V")
    m = op.matrix
    d = tp1.delta
    assert m[iu, iu] == pytest.approx(d * 2 * a * a)   # diag vanishes on C
    assert m[iu, iv] == pytest.approx(d * a * a)
    assert m[iv, iu] == pytest.approx(d * a * a)
    assert m[iv, iv] == pytest.approx(d * 2 * a * a)


def test_assemble_delta_scaling_leaves_pure_diagonal(tp1):
    # With the coupling scaled out, F' - D has every entry proportional to
    # delta: halving delta halves the off-diagonal part exactly.
    import scipy.sparse as sp
    spec2 = make_spec(d=1, b=1, p=1, delta=5e-4, j_list=[2], amplitudes=[0.7])
    op1, op2 = seed_operator(tp1), seed_operator(spec2)
    a1 = op1.matrix - sp.diags(op1.diag.astype(complex))
    a2 = op2.matrix - sp.diags(op2.diag.astype(complex))
    # Recovering A by subtracting the diagonal costs ~|diag| * eps.
    diff = (a1 - 2 * a2).toarray()
    assert np.max(np.abs(diff)) < 1e-13


def test_assemble_symbol_conjugate_symmetry(tp2):
    op = seed_operator(tp2)
    from nlsqp.lattice import conjugate_flip
    flipped = conjugate_flip(op.symbols.uu)
    assert flipped.support() == op.symbols.vv.support()


def test_assemble_self_adjoint(tp2):
    op = seed_operator(tp2)
    diff = (op.matrix - op.matrix.getH()).toarray()
    assert np.max(np.abs(diff)) == 0.0


def test_assemble_theta_enters_antisymmetrically(tp2):
    op0 = seed_operator(tp2)
    opt = seed_operator(tp2, theta=0.25)
    ns = op0.n_sites
    assert np.allclose(opt.diag[:ns] - op0.diag[:ns], 0.25)
    assert np.allclose(opt.diag[ns:] - op0.diag[ns:], -0.25)


def test_phase_m_enters_both_blocks():
    spec = make_spec(d=1, b=1, p=1, delta=1e-3, j_list=[2], amplitudes=[0.7],
                     phase_m=0.5)
    op = seed_operator(spec)
    ns = op.n_sites
    op0 = seed_operator(make_spec(d=1, b=1, p=1, delta=1e-3, j_list=[2],
                                  amplitudes=[0.7]))
    assert np.allclose(op.diag[:ns] - op0.diag[:ns], 0.5)
    assert np.allclose(op.diag[ns:] - op0.diag[ns:], 0.5)


# -- Schur reduction ---------------------------------------------------------


def test_schur_tiny_delta_limit(tp1):
    # As delta -> 0 the correction dies and H -> F'_PP - lam; with lam = 0
    # and the seed frequency the dispersion part of H vanishes entirely.
    spec = make_spec(d=1, b=1, p=1, delta=1e-8, j_list=[2], amplitudes=[0.7])
    rep = schur_complement(seed_operator(spec), lam=0.0)
    assert rep.correction_norm < 1e-14
    assert np.max(np.abs(rep.h)) < 1e-7  # everything O(delta)


def test_schur_correction_delta_squared():
    corrs = []
    for dl in (1e-3, 5e-4, 2.5e-4):
        spec = make_spec(d=1, b=2, p=1, delta=dl, j_list=[1, 2],
                         amplitudes=[0.6, 0.8])
        corrs.append(schur_complement(seed_operator(spec)).correction_norm)
    assert corrs[0] / corrs[1] == pytest.approx(4.0, rel=0.05)
    assert corrs[1] / corrs[2] == pytest.approx(4.0, rel=0.05)


def test_schur_correction_vanishes_without_cross_terms(tp1):
    # For a single mode the j-box at radius 3 clips every coupling from the
    # variety to its complement (the uu shift moves |j| by 4), so the
    # correction term is exactly zero.
    rep = schur_complement(seed_operator(tp1))
    assert rep.correction_norm == 0.0


# -- Block decomposition -----------------------------------------------------


def test_block_decompose_tp1(tp1):
    op = seed_operator(tp1)
    dec = block_decompose(op, op.graph())
    d, a = tp1.delta, 0.7
    two = [i for i, s in enumerate(dec.sizes) if s == 2]
    assert len(two) == 1
    k = two[0]
    eigs = np.sort(np.linalg.eigvalsh(dec.gammas[k]))
    assert eigs == pytest.approx([d * a * a, 3 * d * a * a])
    assert abs(dec.dets[k]) == pytest.approx(3 * a ** 4 * d * d)


def test_block_dets_delta_invariant_normalized(tp1):
    vals = []
    for dl in (1e-3, 1e-4):
        spec = make_spec(d=1, b=1, p=1, delta=dl, j_list=[2], amplitudes=[0.7])
        dec = block_decompose(seed_operator(spec))
        vals.append(sorted(dec.dets_normalized))
    assert np.allclose(vals[0], vals[1], rtol=1e-12)


def test_block_diag_consistency(tp2):
    # The embedded blocks reproduce P F' P entrywise.
    op = seed_operator(tp2)
    dec = block_decompose(op)
    m = op.matrix
    for idxs, gamma in zip(dec.component_indices, dec.gammas):
        sub = m[idxs][:, idxs].toarray()
        assert np.array_equal(sub, gamma)
    # and blocks never couple to each other
    flat = [i for idxs in dec.component_indices for i in idxs]
    for a_idx, idxs_a in enumerate(dec.component_indices):
        for b_idx, idxs_b in enumerate(dec.component_indices):
            if a_idx == b_idx:
                continue
            cross = m[idxs_a][:, idxs_b].toarray()
            assert np.max(np.abs(cross)) == 0.0


# -- Certified inversion -----------------------------------------------------


def test_invert_tp1_norm(tp1):
    cert = invert_with_certificates(seed_operator(tp1), mode="seed")
    assert cert.norm_bound == pytest.approx(1.0 / (tp1.delta * 0.49), rel=1e-6)


def test_invert_roundtrip_identity(tp2):
    op = seed_operator(tp2)
    cert = invert_with_certificates(op, mode="seed", fit_decay=False)
    rng = np.random.default_rng(0)
    for _ in range(3):
        x = rng.standard_normal(op.dim) + 1j * rng.standard_normal(op.dim)
        y = op.matrix @ cert.apply(x)
        assert np.linalg.norm(y - x) <= 1e-10 * np.linalg.norm(x)


def test_invert_norm_delta_scaling(tp2):
    norms, deltas = [], (1e-2, 1e-3, 1e-4)
    for dl in deltas:
        spec = make_spec(d=1, b=2, p=1, delta=dl, j_list=[1, 2],
                         amplitudes=[0.6, 0.8])
        cert = invert_with_certificates(seed_operator(spec), mode="seed",
                                        fit_decay=False)
        norms.append(cert.norm_bound)
    slope = np.polyfit(np.log(deltas), np.log(norms), 1)[0]
    assert slope == pytest.approx(-1.0, abs=0.15)


def test_invert_decay_certificate(tp2):
    cert = invert_with_certificates(seed_operator(tp2), mode="seed")
    assert cert.decay.beta_hat >= 0.05
    assert cert.decay.bound_ok


def test_invert_excision_error_names_block(tp1):
    op = seed_operator(tp1)
    with pytest.raises(ExcisionError) as err:
        invert_with_certificates(op, mode="seed", eps_first=1e6)
    assert err.value.value >= 0
    assert err.value.threshold == 1e6


def test_restricted_solver_matches_submatrix(tp2):
    op = seed_operator(tp2)
    solve, keep = restricted_solver(op, op.q_indices())
    rng = np.random.default_rng(1)
    rhs = rng.standard_normal(len(keep))
    x = solve(rhs)
    sub = op.matrix[keep][:, keep].toarray()
    assert np.linalg.norm(sub @ x - rhs) <= 1e-9 * np.linalg.norm(rhs)


def test_resolvent_square_norm_scales_like_delta():
    vals = []
    for dl in (1e-2, 1e-3):
        spec = make_spec(d=1, b=2, p=1, delta=dl, j_list=[1, 2],
                         amplitudes=[0.6, 0.8])
        vals.append(resolvent_square_norm(seed_operator(spec)))
    assert vals[0] / vals[1] == pytest.approx(10.0, rel=0.2)


# -- Theta family ------------------------------------------------------------


def test_theta_zero_reproduces_certificate(tp2):
    u0, v0 = linear_solution(tp2)
    box = Box(6, 3)
    scan = theta_spectrum_scan(u0, v0, tp2.omega0(), tp2, box, [0.0], eps=0.3)
    op = assemble(u0, v0, tp2.omega0(), tp2, box)
    cert = invert_with_certificates(op, mode="seed", fit_decay=False)
    assert scan.points[0].norm == pytest.approx(cert.norm_bound, rel=1e-6)


def test_theta_scan_bad_set_shrinks_with_delta():
    grid = list(np.linspace(-0.5, 0.5, 201))
    fracs = []
    for dl in (1e-2, 1e-3):
        spec = make_spec(d=1, b=2, p=1, delta=dl, j_list=[1, 2],
                         amplitudes=[0.6, 0.8])
        u0, v0 = linear_solution(spec)
        scan = theta_spectrum_scan(u0, v0, spec.omega0(), spec, Box(4, 3),
                                   grid, eps=0.3)
        fracs.append(scan.bad_fraction)
    assert fracs[1] <= fracs[0]
    assert fracs[1] <= 0.1


def test_theta_decomposition_integral_part():
    spec = make_spec(d=1, b=1, p=1, delta=1e-3, j_list=[2], amplitudes=[0.7])
    u0, v0 = linear_solution(spec)
    scan = theta_spectrum_scan(u0, v0, spec.omega0(), spec, Box(3, 2),
                               [0.4, 1.3, -2.6, 5000.0], eps=0.3)
    assert [p.theta_int for p in scan.points] == [0, 1, -3, 5000]
    for p in scan.points:
        assert -0.5 <= p.theta_frac < 0.5 + 1e-12
    # Within the norm-bound window nothing is restricted; far beyond
    # 2 |log delta|^{2s} + 1 the shift is flagged as outside the analysis.
    assert [p.restricted for p in scan.points] == [False, False, False, True]


def test_theta_scan_threads_deterministic(tp2, monkeypatch):
    u0, v0 = linear_solution(tp2)
    grid = list(np.linspace(-0.3, 0.3, 24))
    monkeypatch.delenv("NLSQP_THREADS", raising=False)
    serial = theta_spectrum_scan(u0, v0, tp2.omega0(), tp2, Box(4, 3), grid)
    monkeypatch.setenv("NLSQP_THREADS", "3")
    threaded = theta_spectrum_scan(u0, v0, tp2.omega0(), tp2, Box(4, 3), grid)
    assert [p.norm for p in serial.points] == [p.norm for p in threaded.points]
    assert serial.bad_fraction == threaded.bad_fraction


def test_second_step_radius_formula():
    assert second_step_radius(1e-3, 2.0) == math.ceil(abs(math.log(1e-3)) ** 2)
    assert second_step_radius(1e-2, 1.0) == 5


def test_n0_scale_monotone():
    assert n0_scale(6, 1.0, 1) == max(100 * 6, 36)
    assert n0_scale(6, 1.0, 2) >= n0_scale(6, 1.0, 1)
