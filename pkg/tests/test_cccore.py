import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ccdegree.cccore import (FieldMismatchError, NewtonOptions, Sampler, bch_series, cc_energy,
                             cc_residual, fd_jacobian, hessian_apply, hessian_tensor, jacobian,
                             make_solution, modified_hamiltonian, multistart_solve, newton_solve,
                             sim_hamiltonian)
from ccdegree.cluster import cluster_log, intermediate_normalize
from ccdegree.fockspace import fci_solve

from conftest import chain, dimer, random_problem
from oracles import expm_residual


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["full", "ccsd", "doubles"]))
def test_residual_matches_general_exponential(seed, scheme):
    p = random_problem(scheme=scheme)
    t = 0.4 * np.random.default_rng(seed).standard_normal(p.d)
    ref, Hs = expm_residual(p.H, p.space.cluster_matrix(t), p.space.det_index, p.space.signs)
    assert np.allclose(cc_residual(p, t), ref, atol=1e-11)
    assert np.allclose(sim_hamiltonian(p, t), Hs, atol=1e-11)
    assert cc_energy(p, t) == pytest.approx(Hs[0, 0], abs=1e-11)


def test_bch_terminates_at_fourth_order():
    p = random_problem(scheme="ccsd")
    t = 0.3 * np.random.default_rng(1).standard_normal(p.d)
    assert np.allclose(sim_hamiltonian(p, t, "bch"), sim_hamiltonian(p, t), atol=1e-11)
    T = p.space.cluster_matrix(t)
    assert np.allclose(bch_series(p.H, T, 6), bch_series(p.H, T, 4), atol=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.booleans())
def test_jacobian_matches_finite_differences(seed, cplx):
    p = random_problem(K=5, N=2, seed=seed % 50, scheme="full",
                       field="complex" if cplx else "real")
    rng = np.random.default_rng(seed)
    t = p.space.random_amplitudes(rng, 0.3, cplx)
    assert np.max(np.abs(jacobian(p, t) - fd_jacobian(p, t))) <= 1e-7


def test_full_zeros_are_eigenstates():
    # every eigenvector with reference weight gives a zero with its eigenvalue
    p = random_problem(scheme="full")
    w, V = fci_solve(p.H)
    for k in range(len(w)):
        if abs(V[0, k]) < 0.05:
            continue
        t = cluster_log(p.space, intermediate_normalize(p.space, V[:, k]))
        assert np.max(np.abs(cc_residual(p, t))) <= 1e-9
        assert cc_energy(p, t) == pytest.approx(w[k], abs=1e-9)


def test_jacobian_at_zero_equals_modified_hamiltonian_form():
    p = chain(scheme="ccsd")
    sol = newton_solve(p, p.zeros())
    assert sol.converged
    assert np.allclose(jacobian(p, sol.t, at_zero=True), jacobian(p, sol.t), atol=1e-9)


def test_full_jacobian_spectrum_at_zero_is_shifted_spectrum():
    p = dimer()
    sol = newton_solve(p, p.zeros())
    w = np.sort(np.linalg.eigvals(jacobian(p, sol.t)).real)
    e = np.linalg.eigvalsh(p.H)
    assert np.allclose(w, np.sort(e[1:] - e[0]), atol=1e-9)


def test_modified_hamiltonian_is_identity_on_full_space():
    p = dimer()
    t = 0.2 * np.ones(p.d)
    assert np.array_equal(modified_hamiltonian(p, t), sim_hamiltonian(p, t))


def test_dimer_doubles_amplitude_closed_form():
    p = dimer(4.0, "doubles")
    assert p.d == 1
    sol = newton_solve(p, p.zeros())
    assert sol.converged
    assert abs(sol.t[0]) == pytest.approx(np.sqrt(2) - 1, abs=1e-10)
    assert sol.energy == pytest.approx(-0.82842712474619007, abs=1e-10)


@pytest.mark.parametrize("U", [1.0, 4.0, 8.0])
def test_dimer_full_cc_recovers_ground_state(U):
    sol = newton_solve(dimer(U), dimer(U).zeros())
    assert sol.converged and sol.residual_inf <= 1e-10
    assert sol.energy == pytest.approx((U - np.sqrt(U * U + 16)) / 2, abs=1e-10)


def test_chain_full_cc_energy():
    p = chain()
    sol = newton_solve(p, p.zeros())
    assert sol.energy == pytest.approx(-2.875942809005061, abs=1e-9)


def test_newton_reports_failure_honestly():
    p = random_problem(scheme="ccsd")
    sol = newton_solve(p, 50 * np.ones(p.d), NewtonOptions(max_iter=2))
    assert not sol.converged and sol.residual_inf > 1e-10 and sol.message


def test_newton_fd_jacobian_option():
    p = dimer()
    a = newton_solve(p, p.zeros(), NewtonOptions(jacobian="fd"))
    b = newton_solve(p, p.zeros())
    assert a.converged and np.allclose(a.t, b.t, atol=1e-9)
    with pytest.raises(ValueError):
        NewtonOptions(jacobian="broyden")


def test_newton_with_right_hand_side():
    p = random_problem(scheme="ccsd")
    rhs = cc_residual(p, 0.05 * np.cos(np.arange(p.d)))
    sol = newton_solve(p, p.zeros(), rhs=rhs)
    assert np.allclose(cc_residual(p, sol.t), rhs, atol=1e-10)


def test_field_mismatch_rejected():
    p = dimer()
    with pytest.raises(FieldMismatchError):
        cc_residual(p, p.zeros().astype(complex))
    pc = p.with_field("complex")
    with pytest.raises(FieldMismatchError):
        cc_residual(pc, p.zeros())
    with pytest.raises(ValueError):
        cc_residual(p, np.zeros(p.d + 1))


def test_complex_field_agrees_on_real_input():
    p = random_problem(scheme="ccsd")
    t = 0.3 * np.random.default_rng(2).standard_normal(p.d)
    pc = p.with_field("complex")
    assert np.allclose(cc_residual(pc, t.astype(complex)), cc_residual(p, t))


def test_multistart_independent_of_worker_count():
    p = dimer(4.0, "full")
    s = Sampler(seed=3, radius=1.0, count=12)
    a = multistart_solve(p, s, workers=1)
    b = multistart_solve(p, s, workers=4)
    assert len(a) == len(b) >= 1
    for x, y in zip(a, b):
        assert np.array_equal(x.t, y.t)
    assert all(np.max(np.abs(cc_residual(p, x.t))) <= 1e-10 for x in a)
    E = sorted(x.energy for x in a)
    assert E == sorted(set(E))


def test_make_solution():
    p = dimer()
    sol = make_solution(p, p.zeros())
    assert not sol.converged and sol.energy == pytest.approx(p.H[0, 0])


def test_hessian_matches_jacobian_differences():
    p = random_problem(K=5, N=2, seed=4, scheme="full")
    rng = np.random.default_rng(0)
    t = 0.3 * rng.standard_normal(p.d)
    u, v = rng.standard_normal(p.d), rng.standard_normal(p.d)
    h = 1e-5
    fd = (jacobian(p, t + h * v) - jacobian(p, t - h * v)) @ u / (2 * h)
    assert np.allclose(hessian_apply(p, t, u, v), fd, atol=1e-7)
    D = hessian_tensor(p, t)
    assert np.allclose(np.einsum("bac,a,c->b", D, u, v), hessian_apply(p, t, u, v), atol=1e-11)
    # symmetric in the two directions since cluster operators commute
    assert np.allclose(D, D.transpose(0, 2, 1), atol=1e-11)
