"""Linear and rank-split (beta-nested) homotopies between truncated and full CC.

The rank split divides the amplitude space into ``V0`` (excitation ranks up to
``rho``) and ``Va`` (ranks above ``rho``). For ``t = t0 + ta`` the split
homotopy evaluates the residual at ``t0 + lam * ta`` on ``V0`` rows and at
``t`` on ``Va`` rows, so ``lam = 1`` is the plain CC map and ``lam = 0`` is the
truncated CC system augmented by an equation for ``ta``.

Functions
---------
kp_residual, kp_jacobian, kp_energy
    Residual, derivative in ``t`` and energy of the split homotopy.
gamma_operator
    Difference operator of the two similarity transforms as a commutator sum.
kp_verify
    Evaluate both sides of the energy-defect identity against an eigenpair.
energy_error_estimate, kp_existence_report
    A posteriori bound on the energy and existence constants at a full zero.
trace_path
    Predictor-corrector continuation in ``lam``.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .analysis import is_real, sign_det
from .cccore import (CCProblem, CCSolution, _commutator_jacobian, cc_energy, cc_residual,
                     commutator, hessian_tensor, jacobian, sim_hamiltonian, worker_count)
from .cluster import ELL2, FOCK, norm_equivalence_constant, norm_gram

OVERLAP_TOL = 1e-10
ZERO_TOL = 1e-8
DEFAULT_SAMPLES = 256


class OverlapError(ValueError):
    """The homotopy state is (numerically) orthogonal to the target eigenstate."""


class DegenerateZeroError(ValueError):
    """The Jacobian at the zero is singular."""


@dataclass(frozen=True)
class SplitSpec:
    """Rank cut ``rho``: ``V0`` holds ranks ``<= rho``, ``Va`` ranks ``> rho``."""

    rho: int

    def masks(self, p: CCProblem):
        """Boolean masks ``(m0, ma)`` over the amplitudes of ``p``."""
        N = p.N
        if not 1 <= self.rho < N:
            raise ValueError(f"cut rank must satisfy 1 <= rho < N={N}, got {self.rho}")
        m0 = p.space.ranks <= self.rho
        ma = ~m0
        if not m0.any() or not ma.any():
            raise ValueError("rank cut leaves one side of the split empty")
        return m0, ma

    def parts(self, p: CCProblem, t):
        """``(t0, ta)`` with ``t = t0 + ta``."""
        m0, ma = self.masks(p)
        t = np.asarray(t)
        return np.where(m0, t, 0), np.where(ma, t, 0)

    def projectors(self, p: CCProblem):
        """Diagonal projector matrices ``P0`` and ``Pa``."""
        m0, ma = self.masks(p)
        return np.diag(m0.astype(float)), np.diag(ma.astype(float))


# ---------------------------------------------------------- split homotopy

def kp_residual(p: CCProblem, split: SplitSpec, t, lam: float) -> np.ndarray:
    """Residual of the split homotopy at ``(t, lam)``."""
    t = p.check_amplitudes(t)
    m0, _ = split.masks(p)
    t0, ta = split.parts(p, t)
    r0 = cc_residual(p, t0 + lam * ta)
    r1 = cc_residual(p, t)
    return np.where(m0, r0, r1)


def kp_residual_definition(p: CCProblem, split: SplitSpec, t, lam: float) -> np.ndarray:
    """Same map evaluated from its defining three-term form.

    ``V0`` rows: ``<H(t0) Phi_0 + lam H(t0)(exp(Ta) - I) Phi_0, Phi_k>``;
    ``Va`` rows: ``<H(t) Phi_0, Phi_k>``. Used as an independent check of
    :func:`kp_residual`.
    """
    t = p.check_amplitudes(t)
    sp = p.space
    m0, _ = split.masks(p)
    t0, ta = split.parts(p, t)
    H0 = sim_hamiltonian(p, t0)
    ref = sp.reference(H0.dtype)
    shifted = sp.exp_apply(ta, ref) - ref
    v0 = H0[:, 0] + lam * (H0 @ shifted)
    r0 = sp.project(v0)
    r1 = sp.project(sim_hamiltonian(p, t)[:, 0])
    return np.where(m0, r0, r1)


def kp_jacobian(p: CCProblem, split: SplitSpec, t, lam: float) -> np.ndarray:
    """Derivative in ``t`` of :func:`kp_residual`.

    ``V0`` rows are the CC Jacobian at ``t0 + lam ta`` with the ``Va``
    columns scaled by ``lam``; ``Va`` rows are the CC Jacobian at ``t``.
    """
    t = p.check_amplitudes(t)
    m0, ma = split.masks(p)
    t0, ta = split.parts(p, t)
    Js = jacobian(p, t0 + lam * ta)
    J1 = jacobian(p, t)
    out = J1.copy()
    out[m0] = Js[m0]
    out[np.ix_(m0, ma)] *= lam
    return out


def kp_fd_jacobian(p: CCProblem, split: SplitSpec, t, lam: float, step: float = 1e-5):
    t = p.check_amplitudes(t)
    J = np.zeros((p.d, p.d), dtype=np.result_type(t, p.H))
    for k in range(p.d):
        e = np.zeros(p.d, dtype=t.dtype)
        e[k] = step
        J[:, k] = (kp_residual(p, split, t + e, lam) - kp_residual(p, split, t - e, lam)) / (2 * step)
    return J


def kp_energy(p: CCProblem, split: SplitSpec, t, lam: float):
    """``<H exp(T0 + lam Ta) Phi_0, Phi_0>``."""
    t = p.check_amplitudes(t)
    t0, ta = split.parts(p, t)
    return cc_energy(p, t0 + lam * ta)


def kp_hat_hamiltonian(p: CCProblem, split: SplitSpec, t) -> np.ndarray:
    """``H(t) - sum_{k in V0} <H(t) Phi_0, Phi_k> X_k``."""
    t = p.check_amplitudes(t)
    m0, _ = split.masks(p)
    Hs = sim_hamiltonian(p, t)
    c = np.where(m0, p.space.project(Hs[:, 0]), 0)
    return Hs - p.space.cluster_matrix(c)


@dataclass
class KPBlockReport:
    """Block spectra of the split-homotopy derivative at a ``lam = 0`` zero."""

    eig_v0: np.ndarray
    eig_va: np.ndarray
    energy_v0: complex
    energy_full: complex
    nu0: Optional[int]
    nua: Optional[int]
    index: Optional[int]
    sgn_det: int
    upper_block_norm: float

    def to_json(self) -> dict:
        return {"nu0": self.nu0, "nu_angle": self.nua, "index": self.index,
                "sgn_det": self.sgn_det, "upper_block_norm": self.upper_block_norm}


def kp_block_spectra(p: CCProblem, split: SplitSpec, t) -> KPBlockReport:
    """Spectra of the two diagonal blocks of the derivative at ``lam = 0``.

    At a zero of the ``lam = 0`` system the derivative is block lower
    triangular: the ``V0`` block is ``H(t0)`` restricted to ``V0`` minus
    ``E(t0)``, the ``Va`` block is the hat operator at ``t`` restricted to
    ``Va`` minus ``E(t)``. The index is ``(-1)**(nu0 + nua)`` for real zeros.
    """
    t = p.check_amplitudes(t)
    m0, ma = split.masks(p)
    t0, _ = split.parts(p, t)
    sp = p.space
    B0 = sp.block(sim_hamiltonian(p, t0))[np.ix_(m0, m0)]
    Ba = sp.block(kp_hat_hamiltonian(p, split, t))[np.ix_(ma, ma)]
    E0, E1 = cc_energy(p, t0), cc_energy(p, t)
    e0 = np.linalg.eigvals(B0)
    ea = np.linalg.eigvals(Ba)
    J = kp_jacobian(p, split, t, 0.0)
    upper = float(np.max(np.abs(J[np.ix_(m0, ma)]), initial=0.0))
    if p.field == "real":
        nu0 = int(np.sum(is_real(e0) & (e0.real < E0)))
        nua = int(np.sum(is_real(ea) & (ea.real < E1)))
        sd = sign_det(J)
        index = (-1) ** (nu0 + nua) if sd != 0 else None
    else:
        nu0 = nua = None
        sd = 0
        index = 1
    return KPBlockReport(e0 - E0, ea - E1, E0, E1, nu0, nua, index, sd, upper)


def gamma_operator(p: CCProblem, split: SplitSpec, t, lam: float) -> np.ndarray:
    """``sum_{k=1}^{2N} (1-lam)^(k-1)/k! exp(-S) [H, Ta]_(k) exp(S)``, ``S = T0 + lam Ta``."""
    t = p.check_amplitudes(t)
    t0, ta = split.parts(p, t)
    sp = p.space
    s = t0 + lam * ta
    Ta = sp.cluster_matrix(ta)
    C = p.H.astype(np.result_type(p.H, Ta))
    acc = np.zeros_like(C)
    for k in range(1, 2 * p.N + 1):
        C = commutator(C, Ta)
        acc = acc + ((1 - lam) ** (k - 1) / math.factorial(k)) * C
    return sp.exp_matrix(-s) @ acc @ sp.exp_matrix(s)


def g_operator(p: CCProblem, split: SplitSpec, t, lam: float) -> np.ndarray:
    """``H(t) - H(t0 + lam ta)`` as a difference of two similarity transforms."""
    t = p.check_amplitudes(t)
    t0, ta = split.parts(p, t)
    return sim_hamiltonian(p, t) - sim_hamiltonian(p, t0 + lam * ta)


# ----------------------------------------------------------- verification

def _pairing(p: CCProblem):
    """Inner product used for the identity checks.

    Real field: ``<a, b> = sum a_i conj(b_i)``. Complex field: the bilinear
    form ``sum a_i b_i``, valid only for a real symmetric Hamiltonian.
    """
    if p.field == "real":
        return lambda a, b: np.vdot(b, a)
    if np.iscomplexobj(p.H):
        raise ValueError("complex amplitudes with a complex Hamiltonian are not supported here")
    return lambda a, b: np.dot(a, b)


def _angle_det_mask(p: CCProblem, split: SplitSpec) -> np.ndarray:
    _, ma = split.masks(p)
    mask = np.zeros(p.space.sector_dim, dtype=bool)
    mask[p.space.det_index[ma]] = True
    return mask


@dataclass
class KPVerifyReport:
    lhs: complex
    rhs: complex
    residual: float
    overlap: complex
    energy_kp: complex
    energy: float
    lam: float
    reference_only: bool
    energy_defect: float

    def to_json(self) -> dict:
        def c(z):
            return {"re": float(np.real(z)), "im": float(np.imag(z))}
        return {"lhs": c(self.lhs), "rhs": c(self.rhs), "residual": self.residual,
                "overlap": c(self.overlap), "energy_kp": c(self.energy_kp),
                "energy": self.energy, "lambda": self.lam,
                "reference_only": self.reference_only, "energy_defect": self.energy_defect}


def kp_verify(p: CCProblem, split: SplitSpec, psi, energy: float, t, lam: float,
              tol: float = ZERO_TOL, overlap_tol: float = OVERLAP_TOL) -> KPVerifyReport:
    """Check the energy-defect identity at a zero ``t`` of the homotopy at ``lam``.

    Compares ``(E_KP - E) <exp(S) Phi_0, psi>`` with
    ``<(H(t) - H(S)) Phi_0, Pa exp(S)^+ Pa psi>`` where ``S = T0 + lam Ta``
    and ``Pa`` projects onto the determinants reached by ``Va``. When
    ``psi`` has no ``Va`` component, ``E_KP = E`` is expected
    (``reference_only`` is then set).

    Raises
    ------
    ValueError
        If ``t`` is not a zero of the homotopy within ``tol``.
    OverlapError
        If the overlap is below ``overlap_tol`` (the energy may diverge there).
    """
    t = p.check_amplitudes(t)
    r = float(np.max(np.abs(kp_residual(p, split, t, lam))))
    if r > tol:
        raise ValueError(f"point is not a zero of the homotopy (residual {r:.3e})")
    psi = np.asarray(psi)
    if psi.shape != (p.space.sector_dim,):
        raise ValueError("eigenvector does not match the determinant space")
    pair = _pairing(p)
    sp = p.space
    t0, ta = split.parts(p, t)
    s = t0 + lam * ta
    ref = sp.reference(np.result_type(s, float))
    v = sp.exp_apply(s, ref)
    ov = pair(v, psi)
    if abs(ov) <= overlap_tol * max(1.0, np.linalg.norm(v) * np.linalg.norm(psi)):
        raise OverlapError(
            f"overlap {abs(ov):.3e} with the eigenstate vanishes; the energy is not determined")
    e_kp = kp_energy(p, split, t, lam)
    lhs = (e_kp - energy) * ov
    mask = _angle_det_mask(p, split)
    pa_psi = np.where(mask, psi, 0)
    Es = sp.exp_matrix(s)
    adj = Es.conj().T if p.field == "real" else Es.T
    y = np.where(mask, adj @ pa_psi, 0)
    g0 = g_operator(p, split, t, lam)[:, 0]
    rhs = pair(g0, y)
    reference_only = not np.any(np.abs(pa_psi) > 1e-14 * np.linalg.norm(psi))
    return KPVerifyReport(lhs=lhs, rhs=rhs, residual=float(abs(lhs - rhs)), overlap=ov,
                          energy_kp=e_kp, energy=float(np.real(energy)), lam=float(lam),
                          reference_only=reference_only,
                          energy_defect=float(abs(e_kp - energy)))


# ----------------------------------------------------------- error estimate

@dataclass
class ErrorEstimateReport:
    actual: float
    actual_truncated: float
    bound: float
    constant: float
    overlap: float
    M: float
    C: float
    angle_norm: float
    y_norm: float
    samples: int
    holds: bool

    def to_json(self) -> dict:
        return dict(self.__dict__)


def energy_error_estimate(p: CCProblem, split: SplitSpec, t_kp, t_star, samples: int = 64,
                          tol: float = ZERO_TOL, overlap_tol: float = OVERLAP_TOL,
                          seed: int = 0) -> ErrorEstimateReport:
    """Bound ``|E(t_kp) - E(t_star)| <= Cst * ||ta_kp||``.

    ``t_kp`` is a zero of the ``lam = 0`` system and ``t_star`` a zero of the
    full CC map. ``Cst = (C**2 + M) * ||y|| / |<exp(T0) Phi_0, exp(T*) Phi_0>|``
    with ``y = Pa exp(T0)^+ Pa exp(T*) Phi_0``, ``C`` the Fock/l2 norm
    equivalence constant and ``M`` the largest norm of the ``Va`` rows of the
    fluctuation commutator Jacobian sampled along ``[t0_kp, t_kp]``.
    """
    if not p.space.is_full:
        raise ValueError("the error estimate needs the full amplitude space")
    if p.field != "real":
        raise ValueError("the error estimate is implemented for the real field")
    t_kp = p.check_amplitudes(t_kp)
    t_star = p.check_amplitudes(t_star)
    r1 = float(np.max(np.abs(kp_residual(p, split, t_kp, 0.0))))
    r2 = float(np.max(np.abs(cc_residual(p, t_star))))
    if r1 > tol or r2 > tol:
        raise ValueError(f"inputs are not converged zeros (residuals {r1:.3e}, {r2:.3e})")
    m0, ma = split.masks(p)
    sp = p.space
    t0, ta = split.parts(p, t_kp)
    ref = sp.reference(float)
    u = sp.exp_apply(t0, ref)
    w = sp.exp_apply(t_star, ref)
    ov = float(np.dot(u, w))
    if abs(ov) <= overlap_tol:
        raise OverlapError("the truncated and full states are orthogonal")
    mask = _angle_det_mask(p, split)
    y = np.where(mask, sp.exp_matrix(t0).T @ np.where(mask, w, 0), 0)
    y_norm = float(np.linalg.norm(y))
    C = norm_equivalence_constant(p.eps)
    Wf = p.Wf
    M = 0.0
    xs = np.linspace(0.0, 1.0, max(2, samples))
    for x in xs:
        Ws = sim_hamiltonian(p, t0 + x * ta, op=Wf)
        Jw = _commutator_jacobian(sp, Ws)[ma]
        M = max(M, float(np.linalg.norm(Jw, 2)))
    a_norm = float(np.linalg.norm(ta))
    const = (C ** 2 + M) * y_norm / abs(ov)
    e_star = cc_energy(p, t_star)
    actual = abs(cc_energy(p, t_kp) - e_star)
    actual0 = abs(cc_energy(p, t0) - e_star)
    bound = const * a_norm
    return ErrorEstimateReport(actual=actual, actual_truncated=actual0, bound=bound,
                               constant=const, overlap=ov, M=M, C=C, angle_norm=a_norm,
                               y_norm=y_norm, samples=len(xs),
                               holds=bool(actual <= bound + 1e-12))


# ------------------------------------------------------- existence constants

@dataclass
class KPExistenceReport:
    Delta: float
    gamma_alpha: float
    alpha: float
    Theta: np.ndarray
    Theta_norm: float
    theta0: float
    theta_angle: float
    g: float
    kappa: float
    M_delta: float
    epsilon: float
    delta: float
    eta: float
    condition_i: bool
    condition_ii: bool
    kappa_limit: float
    norm: str
    samples: int

    def to_json(self) -> dict:
        out = {k: v for k, v in self.__dict__.items() if k != "Theta"}
        out["Theta"] = np.asarray(self.Theta).tolist()
        return out


def _eta(gamma, g, M, delta, Theta_norm, Delta, theta0, theta_a, eps) -> float:
    num = (1 - g) * (gamma - 0.5 * M * Theta_norm * delta)
    den = Delta + M * delta
    if den == 0:
        lead = math.inf if num > 0 else (-math.inf if num < 0 else 0.0)
    else:
        lead = num / den
    tail = 0.5 * max(eps + 2 * (1 + 1 / eps) * theta0, 2 * (1 + 1 / eps) * theta_a)
    return lead - tail


def _kappa_factor(eta: float) -> float:
    """``(2 sqrt(eta) - sqrt(2)) / (2 - sqrt(2) + 2 sqrt(eta))``; tends to 1 as eta grows."""
    if eta < 0:
        return -math.inf
    if math.isinf(eta):
        return 1.0
    s = math.sqrt(eta)
    return (2 * s - math.sqrt(2)) / (2 - math.sqrt(2) + 2 * s)


def _bilinear_norm(D: np.ndarray, gi: np.ndarray) -> float:
    """Upper bound on the bilinear norm: spectral norm of the unfolded tensor."""
    Ds = D * gi[:, None, None] * gi[None, :, None] * gi[None, None, :]
    d = Ds.shape[0]
    return float(np.linalg.norm(Ds.reshape(d, d * d), 2))


def kp_existence_report(p: CCProblem, split: SplitSpec, t_star, alpha: Optional[float] = None,
                        epsilon: Optional[float] = None, delta: Optional[float] = None,
                        norm: str = ELL2, samples: int = DEFAULT_SAMPLES, seed: int = 0,
                        delta_range=(1e-4, 1.0), rank_tol: float = 1e-10) -> KPExistenceReport:
    """Evaluate the constants of the existence conditions at a full CC zero.

    The amplitude norm has diagonal Gram matrix ``G`` (ones for ``l2``,
    excitation energies for ``fock``). If ``delta`` or ``epsilon`` is not
    given they are chosen on a grid to maximize the margin of the second
    condition. ``M_delta`` is a sampled supremum over the ball of radius
    ``delta``; each sample is bounded above by the unfolded spectral norm.
    """
    if p.field != "real":
        raise ValueError("the existence report is implemented for the real field")
    t_star = p.check_amplitudes(t_star)
    m0, ma = split.masks(p)
    sp = p.space
    d = p.d
    J = jacobian(p, t_star)
    sv = np.linalg.svd(J, compute_uv=False)
    if sv[-1] <= rank_tol * max(1.0, sv[0]):
        raise DegenerateZeroError("zero is degenerate: the Jacobian is singular")
    G = norm_gram(norm, p.eps if norm == FOCK else None, d)
    gh, gi = np.sqrt(G), 1 / np.sqrt(G)
    Jt = gi[:, None] * J * gi[None, :]
    sym_min = float(np.linalg.eigvalsh(0.5 * (Jt + Jt.T))[0])
    if alpha is None:
        alpha = 0.0 if sym_min > 0 else -2.0 * sym_min
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    gamma = sym_min + alpha
    Theta = np.eye(d) + alpha * np.linalg.solve(J.T, np.diag(G))

    def vnorm(Mx):
        return float(np.linalg.norm(gh[:, None] * Mx * gi[None, :], 2))

    P0 = np.diag(m0.astype(float))
    Pa = np.diag(ma.astype(float))
    Th_norm = vnorm(Theta)
    theta0 = vnorm(P0 @ (Theta - np.eye(d)) @ P0) ** 2
    theta_a = vnorm(P0 @ (Theta - np.eye(d)) @ Pa) ** 2
    # largest cosine between V0 and Va in the G inner product
    Q0 = np.linalg.qr(gh[:, None] * np.eye(d)[:, m0])[0]
    Qa = np.linalg.qr(gh[:, None] * np.eye(d)[:, ma])[0]
    g = float(np.linalg.norm(Q0.T @ Qa, 2)) if Q0.size and Qa.size else 0.0
    # subspace defect
    op = p.Wf if p.fock is not None else p.H
    singles = np.where(sp.ranks == 1, t_star, 0)
    T1d = sp.cluster_matrix(singles).conj().T
    Dop = op + T1d @ op - op @ T1d
    B = sp.block(Dop)[np.ix_(ma, m0)]
    Delta = float(np.linalg.norm(gi[ma][:, None] * B * gi[m0][None, :], 2))
    kappa = float(np.sqrt(np.sum(G[ma] * np.abs(t_star[ma]) ** 2)))
    # sampled second-derivative norms
    rng = np.random.default_rng(seed)
    lo, hi = delta_range if delta is None else (0.0, delta)
    radii = [0.0]
    norms = [_bilinear_norm(hessian_tensor(p, t_star, op=op), gi)]
    for _ in range(max(0, samples - 1)):
        z = rng.standard_normal(d)
        z = z / math.sqrt(np.sum(G * z * z))
        if delta is None:
            r = math.exp(rng.uniform(math.log(lo), math.log(hi)))
        else:
            r = delta * rng.uniform()
        radii.append(r)
        norms.append(_bilinear_norm(hessian_tensor(p, t_star + r * z, op=op), gi))
    radii, norms = np.array(radii), np.array(norms)

    def M_of(dl):
        return float(np.max(norms[radii <= dl]))

    eps_grid = [epsilon] if epsilon is not None else list(np.geomspace(1e-6, 1e3, 181))
    delta_grid = [delta] if delta is not None else list(np.geomspace(lo, hi, 61))
    best = None
    for dl in delta_grid:
        M = M_of(dl)
        for ep in eps_grid:
            eta = _eta(gamma, g, M, dl, Th_norm, Delta, theta0, theta_a, ep)
            limit = _kappa_factor(eta) * dl
            key = (bool(eta > 0.5 and kappa < limit), limit - kappa, eta)
            if best is None or key > best[0]:
                best = (key, dl, ep, M, eta, limit)
    _, dl, ep, M, eta, limit = best
    return KPExistenceReport(Delta=Delta, gamma_alpha=gamma, alpha=float(alpha), Theta=Theta,
                             Theta_norm=Th_norm, theta0=theta0, theta_angle=theta_a, g=g,
                             kappa=kappa, M_delta=M, epsilon=float(ep), delta=float(dl),
                             eta=float(eta), condition_i=bool(eta > 0.5),
                             condition_ii=bool(eta > 0.5 and kappa < limit),
                             kappa_limit=float(limit), norm=norm, samples=len(norms))


# --------------------------------------------------------- linear homotopy

def linear_residual(p: CCProblem, split: SplitSpec, t, lam: float, alpha: float, u_perp,
                    norm: str = ELL2) -> np.ndarray:
    """``(1 - lam) [A(t0) on V0 (+) alpha G (ta - u_perp)] + lam A(t)``.

    ``u_perp`` is a vector over the full amplitude index whose ``V0`` part
    is ignored.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    t = p.check_amplitudes(t)
    m0, ma = split.masks(p)
    t0, ta = split.parts(p, t)
    u = np.where(ma, np.asarray(u_perp), 0)
    G = norm_gram(norm, p.eps if norm == FOCK else None, p.d)
    first = np.where(m0, cc_residual(p, t0), alpha * G * (ta - u))
    return (1 - lam) * first + lam * cc_residual(p, t)


def linear_jacobian(p: CCProblem, split: SplitSpec, t, lam: float, alpha: float,
                    norm: str = ELL2) -> np.ndarray:
    t = p.check_amplitudes(t)
    m0, ma = split.masks(p)
    t0, _ = split.parts(p, t)
    G = norm_gram(norm, p.eps if norm == FOCK else None, p.d)
    first = np.zeros((p.d, p.d), dtype=np.result_type(t, p.H))
    first[np.ix_(m0, m0)] = jacobian(p, t0)[np.ix_(m0, m0)]
    idx = np.flatnonzero(ma)
    first[idx, idx] = alpha * G[idx]
    return (1 - lam) * first + lam * jacobian(p, t)


class KPHomotopy:
    """Split homotopy as a ``(residual, jacobian, energy)`` triple."""

    def __init__(self, p: CCProblem, split: SplitSpec):
        split.masks(p)
        self.p, self.split = p, split

    def residual(self, t, lam):
        return kp_residual(self.p, self.split, t, lam)

    def jacobian(self, t, lam):
        return kp_jacobian(self.p, self.split, t, lam)

    def energy(self, t, lam):
        return kp_energy(self.p, self.split, t, lam)


class LinearHomotopy:
    """Linear homotopy with a fixed ``Va`` target ``u_perp`` and weight ``alpha``."""

    def __init__(self, p: CCProblem, split: SplitSpec, alpha: float, u_perp, norm: str = ELL2):
        split.masks(p)
        self.p, self.split, self.alpha, self.norm = p, split, alpha, norm
        self.u_perp = np.asarray(u_perp)

    def residual(self, t, lam):
        return linear_residual(self.p, self.split, t, lam, self.alpha, self.u_perp, self.norm)

    def jacobian(self, t, lam):
        return linear_jacobian(self.p, self.split, t, lam, self.alpha, self.norm)

    def energy(self, t, lam):
        return cc_energy(self.p, t)


# ----------------------------------------------------------- path tracing

@dataclass
class TraceOptions:
    step: float = 0.05
    min_step: float = 1e-4
    max_step: float = 0.1
    tol: float = 1e-11
    max_newton: int = 25
    max_correction: float = 0.5
    grow_after: int = 3


@dataclass
class PathPoint:
    lam: float
    t: np.ndarray
    residual_inf: float
    energy: complex
    sgn_det: int
    step: float


@dataclass
class Path:
    points: List[PathPoint] = field(default_factory=list)
    completed: bool = False
    breakdown: Optional[dict] = None
    sign_changes: list = field(default_factory=list)

    @property
    def end(self) -> PathPoint:
        return self.points[-1]


def _correct(h, t, lam, opts: TraceOptions):
    """Newton in ``t`` at fixed ``lam``; returns ``(t, residual_inf, ok)``."""
    start = t
    r = h.residual(t, lam)
    rn = float(np.max(np.abs(r)))
    for _ in range(opts.max_newton):
        if rn <= opts.tol:
            break
        J = h.jacobian(t, lam)
        try:
            dt = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            return t, rn, False
        t = t + dt
        if not np.all(np.isfinite(t)) or np.linalg.norm(t - start) > opts.max_correction:
            return t, math.inf, False
        r = h.residual(t, lam)
        rn = float(np.max(np.abs(r)))
    return t, rn, rn <= opts.tol


def _point(h, t, lam, rn, step) -> PathPoint:
    J = h.jacobian(t, lam)
    sd = sign_det(J.real) if not np.iscomplexobj(J) else 1
    return PathPoint(lam=float(lam), t=np.array(t), residual_inf=rn, energy=h.energy(t, lam),
                     sgn_det=sd, step=float(step))


def trace_path(h, t_start, lam_start: float = 1.0, lam_end: float = 0.0,
               opts: Optional[TraceOptions] = None) -> Path:
    """Follow a zero of ``h`` from ``lam_start`` to ``lam_end``.

    Secant predictor through the last two accepted points (constant
    predictor for the first step), Newton corrector at fixed ``lam``. The
    step is halved on corrector failure and doubled after ``grow_after``
    consecutive successes, within ``[min_step, max_step]``. A failure at
    the minimum step ends the path with breakdown diagnostics.
    """
    opts = opts or TraceOptions()
    if isinstance(t_start, CCSolution):
        t_start = t_start.t
    t = np.array(t_start)
    t, rn, ok = _correct(h, t, lam_start, opts)
    if not ok:
        raise ValueError(f"start point is not a zero at lam={lam_start} (residual {rn:.3e})")
    path = Path(points=[_point(h, t, lam_start, rn, 0.0)])
    direction = math.copysign(1.0, lam_end - lam_start)
    step = min(max(opts.step, opts.min_step), opts.max_step)
    lam = lam_start
    prev = None
    successes = 0
    while direction * (lam_end - lam) > 1e-15:
        dl = min(step, abs(lam_end - lam))
        lam_new = lam_end if dl == abs(lam_end - lam) else lam + direction * dl
        if prev is None:
            pred = t
        else:
            pred = t + (t - prev[0]) * (abs(lam_new - lam) / abs(lam - prev[1]))
        t_new, rn, ok = _correct(h, pred, lam_new, opts)
        if not ok:
            if step <= opts.min_step * (1 + 1e-12):
                J = h.jacobian(t, lam)
                path.breakdown = {"lambda": float(lam), "attempted_lambda": float(lam_new),
                                  "residual": float(rn), "condition": float(np.linalg.cond(J))}
                return path
            step = max(step / 2, opts.min_step)
            successes = 0
            continue
        point = _point(h, t_new, lam_new, rn, dl)
        last = path.points[-1]
        if point.sgn_det != last.sgn_det:
            path.sign_changes.append((last.lam, point.lam))
        path.points.append(point)
        prev = (t, lam)
        t, lam = t_new, lam_new
        successes += 1
        if successes >= opts.grow_after:
            step = min(step * 2, opts.max_step)
            successes = 0
    path.completed = True
    return path


def trace_ensemble(h, starts: Sequence, opts: Optional[TraceOptions] = None,
                   workers: Optional[int] = None, **kw) -> list:
    """Trace several paths concurrently over the same read-only homotopy."""
    n = min(worker_count(workers), max(1, len(starts)))
    if n > 1:
        with ThreadPoolExecutor(max_workers=n) as pool:
            return list(pool.map(lambda s: trace_path(h, s, opts=opts, **kw), starts))
    return [trace_path(h, s, opts=opts, **kw) for s in starts]


def write_path_csv(path: Path, fh) -> None:
    """Columns ``lambda, residual_inf, E_KP, sgn_det, step`` then amplitudes."""
    w = csv.writer(fh, lineterminator="\n")
    if not path.points:
        w.writerow(["lambda", "residual_inf", "E_KP", "sgn_det", "step"])
        return
    d = len(path.points[0].t)
    cplx = np.iscomplexobj(path.points[0].t)
    head = ["lambda", "residual_inf", "E_KP", "sgn_det", "step"]
    if cplx:
        head += [f"t{k}_{part}" for k in range(d) for part in ("re", "im")]
    else:
        head += [f"t{k}" for k in range(d)]
    w.writerow(head)
    for pt in path.points:
        row = [repr(float(pt.lam)), repr(float(pt.residual_inf)),
               repr(float(np.real(pt.energy))), pt.sgn_det, repr(float(pt.step))]
        if cplx:
            for z in pt.t:
                row += [repr(float(z.real)), repr(float(z.imag))]
        else:
            row += [repr(float(x)) for x in pt.t]
        w.writerow(row)
