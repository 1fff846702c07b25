"""Coupled-cluster residual map, energy, Jacobians and Newton solvers.

All quantities are evaluated with dense sector matrices. Complex amplitudes
are treated holomorphically: no quantity involves the complex conjugate of
``t``.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .cluster import AmplitudeSpace, TruncationScheme, field_of
from .fockspace import Integrals, OrbitalBasis, check_hermitian, hamiltonian_matrix
from .models import FockData, MeanFieldResult, fock_data, scf_solve, to_mo_basis

FIELDS = ("real", "complex")
DEDUP_TOL = 1e-6


class FieldMismatchError(TypeError):
    """Amplitudes of one scalar field were passed to a problem of the other."""


class CCProblem:
    """A coupled-cluster problem on the N-particle sector.

    Parameters
    ----------
    H : ndarray
        Hamiltonian matrix on the full determinant space (reference first).
    space : AmplitudeSpace
        Truncated amplitude space.
    fock : FockData, optional
        Canonical orbital-energy data; needed for Fock-splitting quantities.
    field : {"real", "complex"}
        Scalar field of the amplitudes.
    """

    def __init__(self, H: np.ndarray, space: AmplitudeSpace, fock: Optional[FockData] = None,
                 field: str = "real", ints: Optional[Integrals] = None):
        if field not in FIELDS:
            raise ValueError(f"field must be one of {FIELDS}")
        H = np.asarray(H)
        if H.shape != (space.sector_dim, space.sector_dim):
            raise ValueError("Hamiltonian does not match the determinant space")
        check_hermitian(H)
        if np.iscomplexobj(H) and field == "real":
            raise ValueError("complex Hamiltonian requires the complex field")
        self.H = H
        self.space = space
        self.fock = fock
        self.field = field
        self.ints = ints
        self._full = None

    @property
    def basis(self) -> OrbitalBasis:
        return self.space.basis

    @property
    def N(self) -> int:
        return self.space.basis.N

    @property
    def d(self) -> int:
        return self.space.dim

    @property
    def full_space(self) -> AmplitudeSpace:
        if self._full is None:
            self._full = self.space if self.space.is_full else AmplitudeSpace(
                self.basis, TruncationScheme("full"))
        return self._full

    @property
    def dtype(self):
        return complex if self.field == "complex" else float

    @property
    def eps(self) -> np.ndarray:
        """Excitation energies of the kept excitations."""
        if self.fock is None:
            raise ValueError("problem carries no orbital-energy data")
        return self.fock.eps[self.space.full_positions]

    @property
    def Wf(self) -> np.ndarray:
        if self.fock is None:
            raise ValueError("problem carries no orbital-energy data")
        return self.fock.Wf

    def with_scheme(self, scheme) -> "CCProblem":
        if isinstance(scheme, str):
            scheme = TruncationScheme.parse(scheme)
        p = CCProblem(self.H, AmplitudeSpace(self.basis, scheme), self.fock, self.field, self.ints)
        p._full = self._full
        return p

    def with_field(self, field: str) -> "CCProblem":
        p = CCProblem(self.H, self.space, self.fock, field, self.ints)
        p._full = self._full
        return p

    def check_amplitudes(self, t) -> np.ndarray:
        t = np.asarray(t)
        self.space.check(t)
        if field_of(t) != self.field:
            raise FieldMismatchError(
                f"{field_of(t)} amplitudes passed to a {self.field} problem")
        return t

    def zeros(self) -> np.ndarray:
        return np.zeros(self.d, dtype=self.dtype)


def build_problem(ints: Integrals, N: int, scheme="full", field: str = "real",
                  scf_opts: Optional[dict] = None, mean_field: Optional[MeanFieldResult] = None):
    """Run SCF, move to canonical orbitals and assemble the CC problem.

    Returns
    -------
    problem : CCProblem
    mean_field : MeanFieldResult
    """
    mf = mean_field if mean_field is not None else scf_solve(ints, N, **(scf_opts or {}))
    mo = to_mo_basis(ints, mf.C)
    basis = OrbitalBasis(ints.K, N)
    if isinstance(scheme, str):
        scheme = TruncationScheme.parse(scheme)
    space = AmplitudeSpace(basis, scheme)
    H = hamiltonian_matrix(mo, space.sector)
    fock = fock_data(mf.lambdas, N, space.sector, space.algebra.excitations, H)
    return CCProblem(H, space, fock, field, mo), mf


# ----------------------------------------------------------- transformations

def commutator(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return A @ B - B @ A


def bch_series(H: np.ndarray, T: np.ndarray, order: int) -> np.ndarray:
    """``sum_{j=0}^{order} [H, T]_(j) / j!`` with nested commutators."""
    out = H.astype(np.result_type(H, T)).copy()
    C = out
    for j in range(1, order + 1):
        C = commutator(C, T) / j
        out = out + C
    return out


def sim_hamiltonian(p: CCProblem, t, method: str = "direct", op: Optional[np.ndarray] = None):
    """Similarity transform ``exp(-T) H exp(T)``.

    ``method="direct"`` multiplies the terminating exponentials; ``"bch"``
    sums the nested commutators up to fourth order. ``op`` replaces ``H``.
    """
    t = np.asarray(t)
    H = p.H if op is None else op
    if method == "direct":
        return p.space.exp_matrix(-t) @ H @ p.space.exp_matrix(t)
    if method == "bch":
        return bch_series(H, p.space.cluster_matrix(t), 4)
    raise ValueError(f"unknown method {method!r}")


def _transformed_reference(p: CCProblem, t, op=None) -> np.ndarray:
    """``exp(-T) H exp(T) Phi_0`` as a sector vector."""
    sp = p.space
    H = p.H if op is None else op
    v = sp.exp_apply(t, sp.reference(np.result_type(t, float)))
    return sp.exp_apply(-t, H @ v)


def cc_residual(p: CCProblem, t) -> np.ndarray:
    """Residual ``<exp(-T) H exp(T) Phi_0, Phi_k>`` over the kept excitations."""
    t = p.check_amplitudes(t)
    return p.space.project(_transformed_reference(p, t))


def cc_energy(p: CCProblem, t):
    """``<H exp(T) Phi_0, Phi_0>``."""
    t = p.check_amplitudes(t)
    sp = p.space
    v = sp.exp_apply(t, sp.reference(t.dtype if np.iscomplexobj(t) else float))
    e = (p.H @ v)[0]
    return float(e.real) if p.field == "real" else complex(e)


def modified_hamiltonian(p: CCProblem, t, Hs: Optional[np.ndarray] = None,
                         space: Optional[AmplitudeSpace] = None) -> np.ndarray:
    """``H(t) - sum_{k excluded} <H(t) Phi_0, Phi_k> X_k``.

    The excluded excitations are those not in ``space`` (default: the
    problem's amplitude space).
    """
    space = p.space if space is None else space
    if Hs is None:
        Hs = sim_hamiltonian(p, t)
    comp = space.complement_positions
    if len(comp) == 0:
        return Hs.copy()
    full = p.full_space
    c = np.zeros(full.dim, dtype=Hs.dtype)
    c[comp] = full.project(Hs[:, 0])[comp]
    return Hs - full.cluster_matrix(c)


def jacobian(p: CCProblem, t, at_zero: bool = False) -> np.ndarray:
    """Derivative of the residual.

    General form: ``J[b, a] = <[H(t), X_a] Phi_0, Phi_b>``. At a zero the
    equivalent form ``<(Hmod(t) - E(t)) X_a Phi_0, Phi_b>`` is used when
    ``at_zero`` is set.
    """
    t = p.check_amplitudes(t)
    sp = p.space
    Hs = sim_hamiltonian(p, t)
    if at_zero:
        Hm = modified_hamiltonian(p, t, Hs)
        E = cc_energy(p, t)
        return sp.block(Hm) - E * np.eye(sp.dim)
    return _commutator_jacobian(sp, Hs)


def _commutator_jacobian(sp: AmplitudeSpace, Hs: np.ndarray) -> np.ndarray:
    first = sp.project(Hs[:, sp.det_index] * sp.signs[None, :])
    second = sp.project(sp.excitation_columns(Hs[:, 0]))
    return first - second


def fd_jacobian(p: CCProblem, t, step: float = 1e-5) -> np.ndarray:
    """Central finite-difference Jacobian of :func:`cc_residual`."""
    t = p.check_amplitudes(t)
    J = np.zeros((p.d, p.d), dtype=np.result_type(t, p.H))
    for k in range(p.d):
        e = np.zeros(p.d, dtype=t.dtype)
        e[k] = step
        J[:, k] = (cc_residual(p, t + e) - cc_residual(p, t - e)) / (2 * step)
    return J


def hessian_apply(p: CCProblem, t, u, v, op: Optional[np.ndarray] = None) -> np.ndarray:
    """Second derivative ``<[[H(t), U], V] Phi_0, Phi_b>``.

    ``op`` replaces the Hamiltonian (e.g. the fluctuation operator).
    """
    sp = p.space
    t = np.asarray(t)
    H = p.H if op is None else op
    dtype = np.result_type(t, u, v, H)
    Et, Emt = sp.exp_matrix(t), sp.exp_matrix(-t)
    Hs = Emt @ H @ Et
    U = sp.cluster_matrix(np.asarray(u, dtype=dtype))
    V = sp.cluster_matrix(np.asarray(v, dtype=dtype))
    u0, v0 = sp.embed(np.asarray(u, dtype=dtype)), sp.embed(np.asarray(v, dtype=dtype))
    h0 = Hs[:, 0]
    w = Hs @ (U @ v0) - U @ (Hs @ v0) - V @ (Hs @ u0) + V @ (U @ h0)
    return sp.project(w)


def hessian_tensor(p: CCProblem, t, op: Optional[np.ndarray] = None) -> np.ndarray:
    """Full second-derivative tensor ``D[b, a, c] = <[[H(t), X_a], X_c] Phi_0, Phi_b>``."""
    sp = p.space
    t = np.asarray(t)
    H = p.H if op is None else op
    Hs = sp.exp_matrix(-t) @ H @ sp.exp_matrix(t)
    E = np.zeros((sp.sector_dim, sp.dim), dtype=Hs.dtype)
    E[sp.det_index, np.arange(sp.dim)] = sp.signs
    XE = sp.excitation_columns(E)                    # [:, a, c] = X_a Phi_c
    term1 = np.einsum("ij,jac->iac", Hs, XE)
    HE = Hs @ E
    term2 = sp.excitation_columns(HE)                # [:, a, c] = X_a H Phi_c
    term3 = term2.transpose(0, 2, 1)                 # X_c H Phi_a
    Z = sp.excitation_columns(Hs[:, 0])              # [:, a] = X_a H Phi_0
    term4 = sp.excitation_columns(Z).transpose(0, 2, 1)  # [:, a, c] = X_c X_a H Phi_0
    D = term1 - term2 - term3 + term4
    return sp.signs[:, None, None] * D[sp.det_index]


# ----------------------------------------------------------------- solvers

@dataclass
class NewtonOptions:
    tol: float = 1e-10
    max_iter: int = 100
    damping: tuple = (1.0, 0.5, 0.25, 0.125)
    jacobian: str = "analytic"
    step_tol: float = 1e-12

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.jacobian not in ("analytic", "fd"):
            raise ValueError("jacobian must be 'analytic' or 'fd'")


@dataclass
class CCSolution:
    """Result of a Newton solve.

    ``converged`` implies ``residual_inf <= tol``.
    """

    t: np.ndarray
    energy: complex
    residual_inf: float
    converged: bool
    iterations: int
    field: str = "real"
    singular_steps: int = 0
    message: str = ""

    def distance(self, other: "CCSolution") -> float:
        return float(np.linalg.norm(np.asarray(self.t) - np.asarray(other.t)))


def make_solution(p: CCProblem, t, tol: float = 1e-10, iterations: int = 0) -> CCSolution:
    """Wrap a known amplitude vector as a solution record."""
    t = p.check_amplitudes(t)
    r = float(np.max(np.abs(cc_residual(p, t)), initial=0.0))
    return CCSolution(t=t, energy=cc_energy(p, t), residual_inf=r, converged=r <= tol,
                      iterations=iterations, field=p.field)


def newton_solve(p: CCProblem, t0, opts: Optional[NewtonOptions] = None,
                 rhs: Optional[np.ndarray] = None) -> CCSolution:
    """Damped Newton iteration on the residual.

    A step is scaled by the first damping factor that lowers the residual
    l2 norm, or by the smallest factor if none does. A singular Jacobian is
    handled with a least-squares step and counted in ``singular_steps``.
    With ``rhs`` the perturbed equation ``residual(t) = rhs`` is solved.
    """
    opts = opts or NewtonOptions()
    t = p.check_amplitudes(t0).astype(p.dtype, copy=True)
    jac = (lambda s: jacobian(p, s)) if opts.jacobian == "analytic" else (lambda s: fd_jacobian(p, s))
    shift = 0 if rhs is None else np.asarray(rhs)

    def F(s):
        return cc_residual(p, s) - shift

    r = F(t)
    rn = float(np.max(np.abs(r), initial=0.0))
    singular = 0
    it = 0
    message = ""
    while rn > opts.tol and it < opts.max_iter:
        if not np.all(np.isfinite(t)) or not math.isfinite(rn):
            message = "diverged"
            break
        J = jac(t)
        try:
            step = np.linalg.solve(J, -r)
            if not np.all(np.isfinite(step)):
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            singular += 1
            step = np.linalg.lstsq(J, -r, rcond=None)[0]
        r_norm = np.linalg.norm(r)
        for f in opts.damping:
            t_try = t + f * step
            r_try = F(t_try)
            if np.linalg.norm(r_try) < r_norm:
                break
        it += 1
        moved = np.linalg.norm(t_try - t)
        t, r = t_try, r_try
        rn = float(np.max(np.abs(r), initial=0.0))
        if moved <= opts.step_tol:
            message = "step below tolerance"
            break
    converged = bool(rn <= opts.tol and np.all(np.isfinite(t)))
    if not converged and not message:
        message = "maximum iterations reached"
    energy = cc_energy(p, t) if np.all(np.isfinite(t)) else complex("nan")
    return CCSolution(t=t, energy=energy, residual_inf=rn, converged=converged,
                      iterations=it, field=p.field, singular_steps=singular, message=message)


@dataclass
class Sampler:
    """Random starting points ``center + radius * u`` with ``u`` uniform in
    ``[-1, 1]`` per component (real and imaginary parts in complex mode)."""

    seed: int = 0
    radius: float = 1.0
    count: int = 20
    center: Optional[np.ndarray] = None

    def starts(self, p: CCProblem) -> list:
        if self.count < 1:
            raise ValueError("count must be >= 1")
        rng = np.random.default_rng(self.seed)
        center = p.zeros() if self.center is None else np.asarray(self.center, dtype=p.dtype)
        out = []
        for _ in range(self.count):
            u = rng.uniform(-1, 1, p.d)
            if p.field == "complex":
                u = u + 1j * rng.uniform(-1, 1, p.d)
            out.append(center + self.radius * u)
        return out


def worker_count(requested: Optional[int] = None) -> int:
    cap = os.environ.get("CC_DEGREE_THREADS")
    n = requested or os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            pass
    return max(1, n)


def deduplicate(sols: Sequence[CCSolution], tol: float = DEDUP_TOL) -> list:
    out = []
    for s in sols:
        if all(s.distance(o) > tol for o in out):
            out.append(s)
    return out


def multistart_solve(p: CCProblem, sampler: Sampler, opts: Optional[NewtonOptions] = None,
                     workers: Optional[int] = None, rhs: Optional[np.ndarray] = None) -> list:
    """Newton from many random starts; converged zeros deduplicated in l2.

    The result is sorted by energy (real part, then imaginary part) and does
    not depend on the number of workers. ``rhs`` shifts the equation as in
    :func:`newton_solve`.
    """
    opts = opts or NewtonOptions()
    starts = sampler.starts(p)
    n = min(worker_count(workers), len(starts))
    if n > 1:
        with ThreadPoolExecutor(max_workers=n) as pool:
            results = list(pool.map(lambda s: newton_solve(p, s, opts, rhs), starts))
    else:
        results = [newton_solve(p, s, opts, rhs) for s in starts]
    good = [s for s in results if s.converged and s.residual_inf <= opts.tol]
    distinct = deduplicate(good)
    if len(distinct) > 4 ** p.d:
        raise RuntimeError("more distinct zeros than the Bezout bound; deduplication failed")
    distinct.sort(key=lambda s: (np.real(s.energy), np.imag(s.energy), tuple(np.real(s.t))))
    return distinct
