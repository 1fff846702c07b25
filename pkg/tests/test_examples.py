"""Small worked cases: limits with known answers for every module."""
import json

import numpy as np
import pytest

from ccdegree.analysis import eom_spectrum, fock_splitting_test, realification_check
from ccdegree.cccore import (CCProblem, Sampler, cc_energy, cc_residual, jacobian,
                             modified_hamiltonian, multistart_solve, newton_solve,
                             sim_hamiltonian)
from ccdegree.cli import main
from ccdegree.cluster import AmplitudeSpace, TruncationScheme, amp_norm
from ccdegree.fockspace import (ANNIHILATE, CREATE, DeterminantSpace, Excitation, Integrals,
                                OrbitalBasis, apply_excitation, apply_ladder, apply_string,
                                fci_solve, hamiltonian_matrix)
from ccdegree.homotopy import (KPHomotopy, LinearHomotopy, SplitSpec, energy_error_estimate,
                               g_operator, gamma_operator, kp_energy, kp_existence_report,
                               kp_jacobian, kp_verify, linear_residual, trace_path)
from ccdegree.models import (hubbard_integrals, load_integrals, random_integrals, scf_solve,
                             to_mo_basis)

from conftest import chain, dimer


# ------------------------------------------------------------ determinants

def test_ladder_cases():
    assert apply_ladder(0, CREATE, 0) == (1, 0b1)
    assert apply_ladder(0, ANNIHILATE, 0b11) == (1, 0b10)
    assert apply_ladder(1, ANNIHILATE, 0b11) == (-1, 0b01)
    assert apply_string([(2, CREATE), (2, CREATE)], 0b11) is None


def test_identity_excitation():
    assert apply_excitation(Excitation(), 0b1010) == (1, 0b1010)


def test_zero_and_diagonal_integrals():
    space = DeterminantSpace(OrbitalBasis(4, 2))
    zero = Integrals(np.zeros((4, 4)), np.zeros((4,) * 4))
    assert not np.any(hamiltonian_matrix(zero, space))
    lam = np.array([-1.0, 0.5, 2.0, 3.5])
    H = hamiltonian_matrix(Integrals(np.diag(lam), np.zeros((4,) * 4)), space)
    expected = [sum(lam[p] for p in range(4) if d >> p & 1) for d in space.dets]
    assert np.array_equal(H, np.diag(expected))
    w, V = fci_solve(np.diag([3.0, 1.0, 2.0]))
    assert np.array_equal(w, [1.0, 2.0, 3.0]) and np.array_equal(np.abs(V), np.eye(3)[:, [1, 2, 0]])


def test_dimer_matrix_against_hand_table():
    # determinants of the half-filled dimer, orbital p = 2 * site + spin
    U = 3.0
    space = DeterminantSpace(OrbitalBasis(4, 2))
    H = hamiltonian_matrix(hubbard_integrals(2, 1.0, U), space)
    # both electrons on one site: diagonal U
    for d in space.dets:
        doubly = (d & 0b0011) == 0b0011 or (d & 0b1100) == 0b1100
        assert H[space.index[d], space.index[d]] == (U if doubly else 0.0)
    # same-spin pairs (both up or both down) are decoupled from everything
    for d in (0b0101, 0b1010):
        row = H[space.index[d]]
        assert np.count_nonzero(row) == 0
    # each opposite-spin singly occupied configuration hops to both doubly occupied ones
    for d in (0b1001, 0b0110):
        hops = [abs(H[space.index[d], space.index[e]]) for e in (0b0011, 0b1100)]
        assert hops == [1.0, 1.0]


def test_hubbard_limits():
    # U = 0: sums of one-particle energies +-1
    w = fci_solve(hamiltonian_matrix(hubbard_integrals(2, 1.0, 0.0),
                                     DeterminantSpace(OrbitalBasis(4, 2))))[0]
    assert np.allclose(w, [-2, 0, 0, 0, 0, 2])
    # atomic limit: diagonal, eigenvalues count doubly occupied sites
    H = hamiltonian_matrix(hubbard_integrals(3, 0.0, 2.5), DeterminantSpace(OrbitalBasis(6, 3)))
    assert np.array_equal(H, np.diag(np.diag(H)))
    assert set(np.diag(H)) == {0.0, 2.5}


def test_single_line_integral_file(tmp_path):
    path = tmp_path / "one.txt"
    path.write_text("1 1 0 0 −1.0\n")
    ints = load_integrals(path)
    assert ints.K == 1 and ints.h[0, 0] == -1.0


def test_scf_without_two_body_term():
    ints = hubbard_integrals(3, 1.0, 0.0)
    with pytest.warns(RuntimeWarning):
        mf = scf_solve(ints, 3)
    assert mf.converged and mf.iterations == 1
    assert mf.scf_energy == pytest.approx(np.sum(np.linalg.eigvalsh(ints.h)[:3]), abs=1e-12)


def test_identity_orbital_transform():
    ints = random_integrals(4, 1)
    mo = to_mo_basis(ints, np.eye(4))
    assert np.array_equal(mo.h, ints.h) and np.allclose(mo.W, ints.W, atol=1e-15)


def test_gap_excitation_energy():
    p = chain(2.0)
    k = p.space.index[Excitation((p.N - 1,), (p.N,))]
    assert p.eps[k] == pytest.approx(p.fock.eps_min, abs=1e-12)
    assert np.min(p.eps) == pytest.approx(p.fock.eps_min, abs=1e-12)


# ------------------------------------------------------------ amplitude spaces

def test_amplitude_dimensions():
    b = OrbitalBasis(4, 2)
    assert AmplitudeSpace(b, TruncationScheme("full")).dim == 5
    assert AmplitudeSpace(b, TruncationScheme("ranks", (2,))).dim == 1
    assert AmplitudeSpace(OrbitalBasis(8, 4), TruncationScheme("full")).dim == 69


def test_cluster_operator_cases():
    sp = AmplitudeSpace(OrbitalBasis(4, 2), TruncationScheme("full"))
    ref = sp.reference()
    assert not np.any(sp.cluster_apply(np.zeros(sp.dim), ref))
    assert np.array_equal(sp.exp_matrix(np.zeros(sp.dim)), np.eye(sp.sector_dim))
    t = np.zeros(sp.dim)
    t[2] = 0.7
    assert np.allclose(sp.cluster_apply(t, ref), 0.7 * sp.embed(np.eye(sp.dim)[2]))
    assert amp_norm(np.eye(2)[0], "fock", np.array([2.0, 5.0])) == pytest.approx(np.sqrt(2))


# ------------------------------------------------------------ CC maps

def test_non_interacting_reference_is_exact():
    p = dimer(0.0)
    assert not np.any(np.abs(cc_residual(p, p.zeros())) > 1e-14)
    assert np.allclose(sim_hamiltonian(p, p.zeros()), p.H)
    assert np.array_equal(modified_hamiltonian(p, p.zeros()), p.H)
    # one-body diagonal problem: Jacobian spectrum is the excitation energies
    eom = eom_spectrum(p, p.zeros())
    assert np.allclose(np.sort(eom.excitation_energies.real), np.sort(p.eps), atol=1e-12)
    rep = fock_splitting_test(p, p.zeros())
    assert rep.nondegenerate and abs(rep.omega0) <= 1e-14


def test_energy_at_zero_amplitudes_is_mean_field_energy():
    p = chain(2.0)
    assert cc_energy(p, p.zeros()) == pytest.approx(-2.472135954999579, abs=1e-12)
    assert isinstance(cc_energy(p, p.zeros()), float)


def test_newton_start_at_zero_and_basin():
    p = chain(2.0, "ccsd")
    sol = newton_solve(p, p.zeros())
    again = newton_solve(p, sol.t)
    assert again.converged and again.iterations <= 1
    near = newton_solve(p, sol.t + 1e-3 * np.sin(np.arange(p.d)))
    assert np.linalg.norm(near.t - sol.t) < 1e-8
    one = multistart_solve(p, Sampler(seed=0, radius=1e-3, count=1, center=sol.t), workers=1)
    assert len(one) == 1 and np.linalg.norm(one[0].t - sol.t) < 1e-8


def test_doubles_dimer_complex_zero_count():
    p = dimer(4.0, "doubles", "complex")
    sols = multistart_solve(p, Sampler(seed=0, radius=2.0, count=200), workers=1)
    # the single amplitude satisfies a scalar quadratic: at most two roots, bound 4^d
    assert 1 <= len(sols) <= 2 <= 4 ** p.d


def test_realification_small_cases():
    assert realification_check(np.eye(3))["rel_err"] == 0.0
    rep = realification_check(np.diag([1j]))
    assert rep["det_real_of_realification"] == pytest.approx(1.0)
    assert rep["abs_det_complex_sq"] == pytest.approx(1.0)


# ------------------------------------------------------------ homotopies

def test_kp_limits():
    p = chain(2.0)
    split = SplitSpec(2)
    t = 0.2 * np.cos(np.arange(p.d))
    t0, ta = split.parts(p, t)
    assert np.array_equal(kp_jacobian(p, split, t, 1.0), jacobian(p, t))
    assert kp_energy(p, split, t, 1.0) == pytest.approx(cc_energy(p, t))
    assert kp_energy(p, split, t, 0.0) == pytest.approx(cc_energy(p, t0))
    assert not np.any(gamma_operator(p, split, t0, 0.4))
    assert not np.any(g_operator(p, split, t, 1.0))


def test_frozen_lambda_reproduces_start():
    p = dimer(4.0)
    sol = newton_solve(p, p.zeros())
    path = trace_path(KPHomotopy(p, SplitSpec(1)), sol, 1.0, 1.0)
    assert path.completed and len(path.points) == 1
    assert np.allclose(path.points[0].t, sol.t, atol=1e-14)


def test_exact_reference_limits():
    p = dimer(0.0)
    split = SplitSpec(1)
    path = trace_path(KPHomotopy(p, split), p.zeros())
    scf = cc_energy(p, p.zeros())
    ref = p.space.reference()
    for pt in path.points:
        rep = kp_verify(p, split, ref, scf, pt.t, pt.lam)
        assert rep.energy_kp == pytest.approx(scf, abs=1e-14) and rep.residual == 0.0
    est = energy_error_estimate(p, split, path.end.t, p.zeros())
    assert est.bound == 0.0 and est.actual == 0.0
    rep = kp_existence_report(p, split, p.zeros(), samples=8)
    assert rep.Delta <= 1e-14 and rep.g == 0.0
    # simultaneous zero of both endpoint maps stays a zero for all lambda
    for lam in (0.0, 0.3, 1.0):
        assert np.max(np.abs(linear_residual(p, split, p.zeros(), lam, 1.0, p.zeros()))) <= 1e-14


def test_error_estimate_rho2_uses_truncated_energy():
    p = chain(2.0)
    split = SplitSpec(2)
    star = newton_solve(p, p.zeros())
    path = trace_path(KPHomotopy(p, split), star)
    rep = energy_error_estimate(p, split, path.end.t, star.t)
    assert rep.actual == pytest.approx(rep.actual_truncated, abs=1e-13)


def test_existence_flags_strong_coupling():
    p = dimer(8.0)
    rep = kp_existence_report(p, SplitSpec(1), newton_solve(p, p.zeros()).t, samples=16)
    assert not (rep.condition_i and rep.condition_ii)


def test_linear_endpoint_recovers_truncated_zero():
    p = chain(1.0)
    split = SplitSpec(2)
    star = newton_solve(p, p.zeros())
    path = trace_path(LinearHomotopy(p, split, 1.0, star.t), star)
    assert path.completed
    m0, _ = split.masks(p)
    t0, _ = split.parts(p, path.end.t)
    trunc = p.with_scheme("ccsd")
    assert np.max(np.abs(cc_residual(trunc, t0[m0]))) <= 1e-9


def test_sign_changes_are_flagged():
    p = dimer(8.0)
    path = trace_path(KPHomotopy(p, SplitSpec(1)), newton_solve(p, p.zeros()))
    signs = [pt.sgn_det for pt in path.points]
    flips = sum(a != b for a, b in zip(signs, signs[1:]))
    assert flips == len(path.sign_changes) == 1


# ------------------------------------------------------------ command line

def test_missing_input_leaves_no_output(tmp_path, capsys):
    out = tmp_path / "x.json"
    code = main(["index", "--solution", str(tmp_path / "absent.json"), "--out", str(out)])
    assert code == 2 and not out.exists()
    assert json.loads(capsys.readouterr().err)["error"] == "validation"


def test_custom_hamiltonian_problem():
    # a problem can be assembled from any Hermitian matrix on the sector
    sp = AmplitudeSpace(OrbitalBasis(4, 2), TruncationScheme("full"))
    q = CCProblem(np.diag([0.0, 1.0, 2.0, 3.0, 4.0, 5.0]), sp)
    assert not np.any(cc_residual(q, q.zeros()))
    with pytest.raises(ValueError):
        CCProblem(np.zeros((3, 3)), sp)
