"""Local indices of CC zeros, EOM spectra and degree bookkeeping.

The index of a non-degenerate real zero is ``(-1)**nu`` where ``nu`` counts
real eigenvalues of the modified similarity-transformed Hamiltonian (on the
excited block) lying below the CC energy; this must agree with the sign of
the Jacobian determinant. Non-degenerate complex zeros have index 1.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .cccore import (CCProblem, CCSolution, NewtonOptions, Sampler, cc_energy, cc_residual,
                     deduplicate, hessian_apply, jacobian, modified_hamiltonian,
                     multistart_solve, newton_solve, sim_hamiltonian)

REALITY_RTOL = 1e-9
DEGENERACY_TOL = 1e-8
RANK_TOL = 1e-8
SPHERE_TOL = 1e-6
UNRESOLVED = "unresolved"


class IndexInvariantError(RuntimeError):
    """``(-1)**nu`` disagrees with the sign of the Jacobian determinant."""


def is_real(lam, rtol: float = REALITY_RTOL) -> np.ndarray:
    lam = np.asarray(lam)
    return np.abs(lam.imag) <= rtol * np.maximum(1.0, np.abs(lam))


def _amplitudes(p: CCProblem, sol) -> np.ndarray:
    t = sol.t if isinstance(sol, CCSolution) else sol
    return p.check_amplitudes(t)


@dataclass
class IndexReport:
    degenerate: bool
    nu: Optional[int]
    index: object
    eigvals: np.ndarray
    sgn_det: int
    field: str
    energy: complex

    def to_json(self) -> dict:
        return {"nu": self.nu, "index": self.index, "degenerate": self.degenerate,
                "eigvals": [{"re": float(z.real), "im": float(z.imag)} for z in self.eigvals],
                "sgn_det": self.sgn_det, "field": self.field}


def sign_det(J: np.ndarray) -> int:
    """Sign of ``det J`` for real ``J``; 0 if numerically singular."""
    s, logdet = np.linalg.slogdet(J)
    if s == 0 or not np.isfinite(logdet):
        return 0
    return int(np.sign(s.real))


def index_nondegenerate(p: CCProblem, sol, tol: float = DEGENERACY_TOL) -> IndexReport:
    """Index of a zero from the spectrum of the modified Hamiltonian.

    Raises
    ------
    IndexInvariantError
        If the real-case eigenvalue count disagrees with ``sgn det J``.
    """
    t = _amplitudes(p, sol)
    E = cc_energy(p, t)
    Hm = modified_hamiltonian(p, t)
    lam = np.linalg.eigvals(p.space.block(Hm)).astype(complex)
    order = np.lexsort((lam.imag, lam.real))
    lam = lam[order]
    degenerate = bool(np.any(np.abs(lam - E) <= tol))
    J = jacobian(p, t)
    if p.field == "real":
        real = is_real(lam)
        nu = int(np.sum(real & (lam.real < E)))
        sgn = sign_det(J)
        index = UNRESOLVED if degenerate else (-1) ** nu
        if not degenerate and sgn != index:
            raise IndexInvariantError(
                f"(-1)^nu = {index} but sgn det J = {sgn} at energy {E!r}")
        return IndexReport(degenerate, None if degenerate else nu, index, lam, sgn, "real", E)
    # complex Jacobians always have det of realification = |det J|^2 >= 0
    sgn = 0 if degenerate else 1
    return IndexReport(degenerate, None, UNRESOLVED if degenerate else 1, lam, sgn, "complex", E)


@dataclass
class EOMReport:
    excitation_energies: np.ndarray
    nu: Optional[int]
    index: object


def eom_spectrum(p: CCProblem, sol) -> EOMReport:
    """Eigenvalues of the at-zero Jacobian (excitation-energy shifts)."""
    t = _amplitudes(p, sol)
    J = jacobian(p, t, at_zero=True)
    lam = np.linalg.eigvals(J).astype(complex)
    lam = lam[np.lexsort((lam.imag, lam.real))]
    if p.field == "complex" or np.any(np.abs(lam) <= DEGENERACY_TOL):
        return EOMReport(lam, None, 1 if p.field == "complex" and np.all(np.abs(lam) > DEGENERACY_TOL)
                         else UNRESOLVED)
    nu = int(np.sum(is_real(lam) & (lam.real < 0)))
    return EOMReport(lam, nu, (-1) ** nu)


@dataclass
class FockSplitReport:
    omega0: complex
    Q: np.ndarray
    spectrum: np.ndarray
    nondegenerate: bool
    energy_identity_error: float


def fock_splitting_test(p: CCProblem, sol, tol: float = DEGENERACY_TOL) -> FockSplitReport:
    """Non-degeneracy test through the Fock/fluctuation splitting.

    With ``Q = diag(eps) + (sum_k t_k eps_k X_k)`` on the excited block and
    ``omega0 = <W(t) Phi_0, Phi_0>``, the zero is non-degenerate iff
    ``omega0`` is not an eigenvalue of ``Q + W(t)``.
    """
    if not p.space.rank_regular:
        raise ValueError("Fock splitting test requires a rank-regular truncation")
    t = _amplitudes(p, sol)
    sp = p.space
    eps = p.eps
    Q = np.diag(eps).astype(np.result_type(t, float)) + sp.block(sp.cluster_matrix(t * eps))
    Ws = sim_hamiltonian(p, t, op=p.Wf)
    omega0 = Ws[0, 0]
    spec = np.linalg.eigvals(Q + sp.block(Ws)).astype(complex)
    spec = spec[np.lexsort((spec.imag, spec.real))]
    nondeg = bool(np.all(np.abs(spec - omega0) > tol))
    err = abs(cc_energy(p, t) - (p.fock.Lambda0 + omega0))
    if p.field == "real":
        omega0 = float(np.real(omega0))
    return FockSplitReport(omega0, Q, spec, nondeg, float(err))


# ---------------------------------------------------------- degenerate zeros

@dataclass
class DegenerateData:
    """Kernel data and index of a degenerate zero.

    ``index`` is 0 or 2 for resolved one-dimensional kernels, an integer from
    the perturbed root count otherwise, or ``"unresolved"``. For real
    kernels of dimension >= 2 only ``parity`` is reported.
    """

    mu: int
    singular_values: np.ndarray
    W_R: np.ndarray
    W_L: np.ndarray
    Q: np.ndarray
    B: Callable
    index: object
    sphere_min: float
    sphere_scale: float
    witness: Optional[np.ndarray] = None
    parity: Optional[int] = None
    auxiliary_sign: Optional[int] = None
    message: str = ""

    @property
    def resolved(self) -> bool:
        return self.index != UNRESOLVED


def _sphere_directions(mu: int, complex_field: bool, rng, n_random: int) -> list:
    dirs = []
    for k in range(mu):
        e = np.zeros(mu, dtype=complex if complex_field else float)
        e[k] = 1
        dirs.append(e)
    for _ in range(n_random):
        c = rng.standard_normal(mu)
        if complex_field:
            c = c + 1j * rng.standard_normal(mu)
        dirs.append(c / np.linalg.norm(c))
    return dirs


def kernel_data(J: np.ndarray, rank_tol: float = RANK_TOL):
    """Right and left kernel bases of ``J`` from its SVD."""
    U, s, Vh = np.linalg.svd(J)
    smax = s[0] if s.size else 0.0
    mu = int(np.sum(s <= rank_tol * smax))
    W_R = Vh[len(s) - mu:].conj().T
    W_L = U[:, len(s) - mu:]
    return mu, s, W_R, W_L


def degenerate_index(p: CCProblem, sol, rank_tol: float = RANK_TOL, seed: int = 0,
                     sphere_tol: float = SPHERE_TOL, count_opts: Optional[dict] = None
                     ) -> DegenerateData:
    """Index of a degenerate zero from the quadratic part on the kernel.

    ``B(c) = 1/2 Q A''(W_R c, W_R c)`` is evaluated with the fluctuation
    operator when orbital-energy data are available. The sphere condition
    ``B != 0`` on the unit sphere of the kernel is checked on
    ``64 * mu`` random plus coordinate directions, relative to the size of the
    unprojected second derivative on the same directions.

    Raises
    ------
    ValueError
        If the zero is non-degenerate at the given rank tolerance.
    """
    t = _amplitudes(p, sol)
    J = jacobian(p, t, at_zero=True)
    mu, s, W_R, W_L = kernel_data(J, rank_tol)
    if mu == 0:
        raise ValueError("zero is non-degenerate; use index_nondegenerate")
    op = p.Wf if p.fock is not None else None
    complex_field = p.field == "complex"
    dtype = complex if complex_field or np.iscomplexobj(W_R) else float

    def second(c):
        w = (W_R @ np.asarray(c)).astype(dtype)
        if not complex_field:
            w = w.real
        return hessian_apply(p, t, w, w, op=op)

    def B(c):
        return 0.5 * (W_L.conj().T @ second(c))

    rng = np.random.default_rng(seed)
    dirs = _sphere_directions(mu, complex_field, rng, 64 * mu)
    norms, scale = [], 0.0
    for c in dirs:
        norms.append(np.linalg.norm(B(c)))
        scale = max(scale, 0.5 * np.linalg.norm(second(c)))
    k = int(np.argmin(norms))
    smin = float(norms[k])
    Q = W_L @ W_L.conj().T
    data = DegenerateData(mu=mu, singular_values=s, W_R=W_R, W_L=W_L, Q=Q, B=B,
                          index=UNRESOLVED, sphere_min=smin, sphere_scale=scale)
    if not complex_field:
        data.auxiliary_sign = sign_det((J + Q).real)
    if smin <= sphere_tol * max(1.0, scale):
        data.witness = W_R @ dirs[k]
        data.message = "quadratic part vanishes on the kernel sphere (witness direction attached)"
        return data
    if mu == 1:
        data.index = 2 if complex_field else 0
        data.parity = 0
        return data
    if not complex_field and data.auxiliary_sign == 0:
        data.message = "J + Q is singular; index unresolved"
        return data
    count = perturbed_root_count(p, t, data, **(count_opts or {}))
    if complex_field:
        data.index = count.count
    else:
        data.parity = count.count % 2
        data.message = "real kernel of dimension >= 2: only the parity of the index is determined"
    return data


@dataclass
class PerturbedCount:
    count: int
    roots: list
    rhs: np.ndarray
    ball_radius: float


def perturbed_root_count(p: CCProblem, t_star, data: DegenerateData, eta: float = 1e-6,
                         direction: Optional[np.ndarray] = None, seed: int = 1,
                         starts: int = 64, ball: Optional[float] = None,
                         opts: Optional[NewtonOptions] = None) -> PerturbedCount:
    """Count solutions of ``A(t) = z'`` near a degenerate zero.

    ``z' = eta * W_L @ direction`` (a random unit direction by default). The
    expected root distance is ``sqrt(eta / |B|)``; Newton starts are placed on
    the kernel within a few times that distance and roots are counted inside a
    ball of radius ``ball`` (default 20 times the expected distance).
    """
    rng = np.random.default_rng(seed)
    complex_field = p.field == "complex"
    mu = data.mu
    if direction is None:
        direction = rng.standard_normal(mu)
        if complex_field:
            direction = direction + 1j * rng.standard_normal(mu)
        direction = direction / np.linalg.norm(direction)
    rhs = eta * (data.W_L @ np.asarray(direction))
    if not complex_field:
        rhs = rhs.real
    scale = np.sqrt(eta / max(data.sphere_min, 1e-300))
    radius = 20 * scale if ball is None else ball
    opts = opts or NewtonOptions(tol=1e-13 * max(1.0, np.max(np.abs(p.H))), max_iter=60)
    roots = []
    t_star = np.asarray(t_star)
    for _ in range(starts):
        c = rng.standard_normal(mu)
        if complex_field:
            c = c + 1j * rng.standard_normal(mu)
        c = 3 * scale * c / np.linalg.norm(c) * rng.uniform(0.2, 1.0)
        w = data.W_R @ c
        t0 = (t_star + w).astype(p.dtype) if complex_field else (t_star + w.real)
        sol = newton_solve(p, t0, opts, rhs=rhs)
        if sol.converged and np.linalg.norm(sol.t - t_star) <= radius:
            roots.append(sol)
    roots = deduplicate(roots, tol=1e-3 * scale)
    return PerturbedCount(len(roots), roots, rhs, radius)


def adverse_direction(data: DegenerateData) -> np.ndarray:
    """Direction in the left kernel (``mu = 1``, real) for which the perturbed
    equation has no real solutions near the zero."""
    if data.mu != 1:
        raise ValueError("adverse direction is defined for one-dimensional kernels")
    b = complex(data.B(np.ones(1))[0]).real
    return np.array([-np.sign(b)])


# -------------------------------------------------------------- degree

@dataclass
class DegreeReport:
    degree: int
    indices: list
    perturbed_count: int
    parity_consistent: bool
    boundary_min_residual: float


def degree_over_box(p: CCProblem, center, radius: float, sols: Sequence, seed: int = 0,
                    boundary_samples: int = 256, eta: float = 1e-6, starts: int = 200,
                    tol: float = 1e-10, indices: Optional[Sequence[int]] = None) -> DegreeReport:
    """Degree over the box ``|t - center|_inf < radius`` as a sum of indices.

    ``indices`` may be supplied for zeros whose index is known (e.g. from
    :func:`degenerate_index`); otherwise :func:`index_nondegenerate` is used.
    A random right-hand side of size ``eta`` is then solved from many starts
    inside the box and the parity of the number of solutions is compared
    with the degree.

    Raises
    ------
    ValueError
        If a zero is not strictly inside or the residual nearly vanishes on
        a boundary sample.
    """
    center = np.asarray(center)
    rng = np.random.default_rng(seed)
    for s in sols:
        if np.max(np.abs(np.asarray(s.t) - center)) >= radius:
            raise ValueError("listed zero is not strictly inside the box")
    bmin = np.inf
    complex_field = p.field == "complex"
    for _ in range(boundary_samples):
        u = rng.uniform(-1, 1, p.d)
        if complex_field:
            u = u + 1j * rng.uniform(-1, 1, p.d)
        k = rng.integers(p.d)
        u[k] = u[k] / abs(u[k])
        bmin = min(bmin, float(np.max(np.abs(cc_residual(p, (center + radius * u).astype(p.dtype))))))
    if bmin < tol:
        raise ValueError("residual nearly vanishes on the box boundary")
    if indices is None:
        indices = [index_nondegenerate(p, s).index for s in sols]
    if any(not isinstance(i, (int, np.integer)) for i in indices):
        raise ValueError("degree needs resolved indices for all listed zeros")
    deg = int(sum(indices))
    z = rng.standard_normal(p.d)
    if complex_field:
        z = z + 1j * rng.standard_normal(p.d)
    z = eta * z / np.linalg.norm(z)
    found = multistart_solve(p, Sampler(seed=seed + 1, radius=radius, count=starts, center=center),
                             rhs=z)
    inside = [s for s in found if np.max(np.abs(s.t - center)) < radius]
    m = len(inside)
    ok = (m - deg) % 2 == 0 and abs(deg) <= m
    return DegreeReport(deg, list(indices), m, bool(ok), bmin)


def realification_check(M) -> dict:
    """Compare ``det [[B, -C], [C, B]]`` with ``|det(B + iC)|^2``."""
    M = np.asarray(M, dtype=complex)
    B, C = M.real, M.imag
    R = np.block([[B, -C], [C, B]])
    dr = float(np.linalg.det(R))
    dc = float(abs(np.linalg.det(M)) ** 2)
    rel = abs(dr - dc) / max(abs(dc), 1e-300)
    return {"det_real_of_realification": dr, "abs_det_complex_sq": dc, "rel_err": rel}


# -------------------------------------------------- locating degenerate zeros

def bisect_sign_change(f: Callable[[float], float], lo: float, hi: float,
                       xtol: float = 1e-14, ftol: float = 0.0, max_iter: int = 200) -> float:
    """Plain bisection for a sign change of ``f`` on ``[lo, hi]``."""
    flo, fhi = f(lo), f(hi)
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    if np.sign(flo) == np.sign(fhi):
        raise ValueError("no sign change on the bracket")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0 or hi - lo <= xtol or abs(fm) <= ftol:
            return mid
        if np.sign(fm) == np.sign(flo):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def symmetry_blocks(S: np.ndarray, values: Sequence[float], tol: float = 1e-8) -> dict:
    """Orthonormal bases of the eigenspaces of the Hermitian operator ``S``."""
    w, V = np.linalg.eigh(S)
    return {v: V[:, np.abs(w - v) <= tol] for v in values}


def block_levels(H: np.ndarray, basis: np.ndarray) -> np.ndarray:
    Hb = basis.conj().T @ H @ basis
    return np.linalg.eigvalsh(0.5 * (Hb + Hb.conj().T))


def locate_level_crossing(H_of: Callable[[float], np.ndarray], block_a: np.ndarray, a: int,
                          block_b: np.ndarray, b: int, lo: float, hi: float,
                          gap_tol: float = 1e-8) -> float:
    """Parameter at which level ``a`` of symmetry block A meets level ``b`` of
    block B, found by bisection on their energy difference."""
    def diff(x):
        H = H_of(x)
        return block_levels(H, block_a)[a] - block_levels(H, block_b)[b]

    x = bisect_sign_change(diff, lo, hi)
    if abs(diff(x)) > gap_tol:
        raise RuntimeError(f"crossing not resolved to {gap_tol}: gap {diff(x):.3e}")
    return x


@dataclass
class FoldPoint:
    parameter: float
    t: np.ndarray
    smallest_singular_value: float
    residual_inf: float


def locate_fold(problem_of: Callable[[float], CCProblem], s0: float, t0, s_end: float,
                ds: float = 0.05, tol: float = 1e-12, max_steps: int = 4000) -> FoldPoint:
    """Follow a real zero branch from ``(t0, s0)`` towards ``s_end`` by
    pseudo-arclength continuation and return the first limit point, where the
    Jacobian in ``t`` is singular and the branch turns back in ``s``.

    The limit point is bracketed by a sign change of ``det J`` along the
    branch and refined by bisection in arclength.
    """
    direction = np.sign(s_end - s0)

    def F(x):
        return cc_residual(problem_of(x[-1]), x[:-1])

    def DF(x, h=1e-7):
        p = problem_of(x[-1])
        Jt = jacobian(p, x[:-1])
        Js = (F(np.append(x[:-1], x[-1] + h)) - F(np.append(x[:-1], x[-1] - h))) / (2 * h)
        return np.column_stack([Jt, Js])

    def tangent(x, prev=None):
        A = DF(x)
        _, _, Vh = np.linalg.svd(A)
        v = Vh[-1]
        if prev is None:
            return v * np.sign(v[-1]) * direction
        return v * np.sign(v @ prev)

    def correct(x_pred, x_base, tau, h):
        x = x_pred.copy()
        for _ in range(30):
            r = np.append(F(x), tau @ (x - x_base) - h)
            if np.max(np.abs(r)) <= tol:
                return x, True
            A = np.vstack([DF(x), tau])
            x = x - np.linalg.solve(A, r)
        r = np.append(F(x), tau @ (x - x_base) - h)
        return x, bool(np.max(np.abs(r)) <= 1e3 * tol)

    def detJ(x):
        return sign_det(jacobian(problem_of(x[-1]), x[:-1]))

    x = np.append(np.asarray(t0, dtype=float), s0)
    tau = tangent(x)
    sgn = detJ(x)
    h = ds
    for _ in range(max_steps):
        x_new, ok = correct(x + h * tau, x, tau, h)
        if not ok:
            h *= 0.5
            if h < 1e-10:
                raise RuntimeError("continuation failed before reaching a limit point")
            continue
        if (x_new[-1] - s_end) * direction > 0:
            raise RuntimeError("no limit point before the end of the parameter range")
        if detJ(x_new) != sgn:
            lo, hi = 0.0, h
            base, tau_base = x, tau
            xm = x_new
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                xm, ok = correct(base + mid * tau_base, base, tau_base, mid)
                if not ok:
                    break
                if detJ(xm) == sgn:
                    lo = mid
                else:
                    hi = mid
                if hi - lo < 1e-15:
                    break
            p = problem_of(xm[-1])
            s = np.linalg.svd(jacobian(p, xm[:-1]), compute_uv=False)
            r = float(np.max(np.abs(cc_residual(p, xm[:-1]))))
            return FoldPoint(float(xm[-1]), xm[:-1], float(s[-1]), r)
        tau = tangent(x_new, tau)
        x = x_new
        h = min(2 * h, ds)
    raise RuntimeError("maximum continuation steps reached")
