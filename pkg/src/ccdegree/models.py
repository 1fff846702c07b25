"""Model Hamiltonians, integral files, discrete Hartree-Fock and Fock splitting.

Spin-orbitals of lattice and pairing models are interleaved: spatial site or
level ``i`` carries spin-up orbital ``2*i`` and spin-down orbital ``2*i + 1``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .fockspace import (DeterminantSpace, Excitation, Integrals, hermitize,
                        occupied)

UNITARY_TOL = 1e-10
MODEL_KINDS = ("hubbard", "pairing", "random")


@dataclass(frozen=True)
class ModelSpec:
    """Parameters of a model Hamiltonian.

    ``kind`` selects the variant: ``"hubbard"`` (chain of ``L`` sites with
    hopping ``t_hop``, on-site repulsion ``U`` and optional periodic bond),
    ``"pairing"`` (``levels`` doubly degenerate levels spaced by ``gap`` with
    pair coupling ``coupling``) or ``"random"`` (dense random integrals on
    ``K`` orbitals drawn from ``seed`` with magnitude ``scale``).
    """

    kind: str = "hubbard"
    N: int = 2
    L: int = 2
    t_hop: float = 1.0
    U: float = 4.0
    periodic: bool = False
    levels: int = 4
    gap: float = 1.0
    coupling: float = 0.5
    seed: int = 0
    scale: float = 1.0
    K: int = 6

    @property
    def n_orbitals(self) -> int:
        if self.kind == "hubbard":
            return 2 * self.L
        if self.kind == "pairing":
            return 2 * self.levels
        return self.K

    def validate(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        for name in ("t_hop", "U", "gap", "coupling", "scale"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"parameter {name} must be finite")
        if self.kind == "hubbard" and self.L < 1:
            raise ValueError("hubbard chain needs L >= 1")
        if self.kind == "pairing" and self.levels < 1:
            raise ValueError("pairing model needs levels >= 1")
        if self.kind == "random" and self.K < 1:
            raise ValueError("random model needs K >= 1")
        if not 1 <= self.N <= self.n_orbitals:
            raise ValueError(f"N={self.N} incompatible with K={self.n_orbitals}")


def _set_pair(W, p, q, r, s, value):
    """Store ``value`` at W[p,q,r,s] together with its antisymmetric images."""
    W[p, q, r, s] = value
    W[q, p, r, s] = -value
    W[p, q, s, r] = -value
    W[q, p, s, r] = value


def hubbard_integrals(L: int, t_hop: float, U: float, periodic: bool = False) -> Integrals:
    K = 2 * L
    h = np.zeros((K, K))
    W = np.zeros((K, K, K, K))
    bonds = [(i, i + 1) for i in range(L - 1)]
    if periodic and L > 2:  # for L = 2 the wrap-around bond is the same bond
        bonds.append((L - 1, 0))
    for i, j in bonds:
        for s in (0, 1):
            h[2 * i + s, 2 * j + s] -= t_hop
            h[2 * j + s, 2 * i + s] -= t_hop
    for i in range(L):
        # U n_up n_down = U a+_up a+_dn a_dn a_up
        _set_pair(W, 2 * i, 2 * i + 1, 2 * i, 2 * i + 1, U)
    return Integrals(h, W, meta={"model": "hubbard"})


def pairing_integrals(levels: int, gap: float, coupling: float) -> Integrals:
    K = 2 * levels
    h = np.zeros((K, K))
    W = np.zeros((K, K, K, K))
    for p in range(levels):
        h[2 * p, 2 * p] = h[2 * p + 1, 2 * p + 1] = p * gap
    for p in range(levels):
        for q in range(levels):
            # -g P+_p P_q with P+_p = a+_{p up} a+_{p dn}
            _set_pair(W, 2 * p, 2 * p + 1, 2 * q, 2 * q + 1, -coupling)
    return Integrals(h, W, meta={"model": "pairing"})


def random_integrals(K: int, seed: int, scale: float = 1.0) -> Integrals:
    rng = np.random.default_rng(seed)
    h = rng.standard_normal((K, K))
    h = 0.5 * (h + h.T)
    W = 0.5 * rng.standard_normal((K, K, K, K))
    ints = hermitize(Integrals(scale * h, scale * W))
    return Integrals(ints.h, ints.W, meta={"model": "random"})


def build_model(spec: ModelSpec) -> Integrals:
    """Integrals of the model described by ``spec`` in its site/level basis."""
    spec.validate()
    if spec.kind == "hubbard":
        return hubbard_integrals(spec.L, spec.t_hop, spec.U, spec.periodic)
    if spec.kind == "pairing":
        return pairing_integrals(spec.levels, spec.gap, spec.coupling)
    return random_integrals(spec.K, spec.seed, spec.scale)


# ---------------------------------------------------------------- file format

class IntegralFileError(ValueError):
    pass


def load_integrals(path, K: Optional[int] = None) -> Integrals:
    """Read integrals from a text file.

    Each non-comment line holds ``p q r s value`` (optionally followed by an
    imaginary part) with 1-based orbital indices. ``r = s = 0`` marks a one-body
    coefficient ``h_pq``; other lines give antisymmetrized two-body elements
    ``W_pq,rs``. Entries not listed are filled from Hermiticity and
    antisymmetry; a line with all four indices zero sets the constant shift.
    ``K`` defaults to the largest index present.
    """
    path = Path(path)
    text = path.read_text()
    records = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace("−", "-").split()
        if len(parts) not in (5, 6):
            raise IntegralFileError(f"{path}:{lineno}: expected 'p q r s value', got {raw!r}")
        try:
            idx = [int(x) for x in parts[:4]]
            value = float(parts[4])
            if len(parts) == 6:
                value = complex(value, float(parts[5]))
        except ValueError:
            raise IntegralFileError(f"{path}:{lineno}: cannot parse {raw!r}") from None
        if any(i < 0 for i in idx):
            raise IntegralFileError(f"{path}:{lineno}: negative orbital index")
        p, q, r, s = idx
        one_body = r == 0 and s == 0
        if one_body and (p == 0) != (q == 0):
            raise IntegralFileError(f"{path}:{lineno}: one-body record needs p, q >= 1")
        if not one_body and 0 in idx:
            raise IntegralFileError(f"{path}:{lineno}: two-body record needs indices >= 1")
        if not one_body and (p == q or r == s):
            raise IntegralFileError(f"{path}:{lineno}: two-body record needs p != q and r != s")
        records.append((lineno, idx, value))
    kmax = max([max(idx) for _, idx, _ in records], default=0)
    if K is None:
        K = kmax
    elif kmax > K:
        bad = next(ln for ln, idx, _ in records if max(idx) > K)
        raise IntegralFileError(f"{path}:{bad}: orbital index exceeds K={K}")
    if K < 1:
        raise IntegralFileError(f"{path}: no orbitals defined")
    is_complex = any(isinstance(v, complex) for _, _, v in records)
    dtype = complex if is_complex else float
    h = np.zeros((K, K), dtype=dtype)
    W = np.zeros((K, K, K, K), dtype=dtype)
    constant = 0.0
    h_given, w_given = {}, {}
    for _, (p, q, r, s), v in records:
        if p == q == r == s == 0:
            constant += v.real if isinstance(v, complex) else v
        elif r == 0 and s == 0:
            h_given[(p - 1, q - 1)] = v
        else:
            sign = 1
            p, q, r, s = p - 1, q - 1, r - 1, s - 1
            if p > q:
                p, q, sign = q, p, -sign
            if r > s:
                r, s, sign = s, r, -sign
            w_given[(p, q, r, s)] = sign * v
    for (p, q), v in h_given.items():
        h[p, q] = v
        if (q, p) not in h_given:
            h[q, p] = np.conj(v)
    for (p, q, r, s), v in w_given.items():
        _set_pair(W, p, q, r, s, v)
        if (r, s, p, q) not in w_given:
            _set_pair(W, r, s, p, q, np.conj(v))
    ints = hermitize(Integrals(h, W, constant))
    return Integrals(ints.h, ints.W, ints.constant, {"source": str(path)})


def _fmt(v) -> str:
    if np.iscomplexobj(v) and np.imag(v) != 0:
        return f"{np.real(v):.17g} {np.imag(v):.17g}"
    return f"{np.real(v):.17g}"


def save_integrals(ints: Integrals, path, header: str = ""):
    """Write integrals in the text format read by :func:`load_integrals`."""
    K = ints.K
    lines = []
    if header:
        lines.extend(f"# {ln}" for ln in header.splitlines())
    lines.append(f"# K = {K}")
    if ints.constant:
        lines.append(f"0 0 0 0 {_fmt(ints.constant)}")
    for p in range(K):
        for q in range(p, K):
            if ints.h[p, q] != 0:
                lines.append(f"{p + 1} {q + 1} 0 0 {_fmt(ints.h[p, q])}")
    pairs = [(p, q) for p in range(K) for q in range(p + 1, K)]
    for a, (p, q) in enumerate(pairs):
        for r, s in pairs[a:]:
            if ints.W[p, q, r, s] != 0:
                lines.append(f"{p + 1} {q + 1} {r + 1} {s + 1} {_fmt(ints.W[p, q, r, s])}")
    # trailing zero-valued diagonal record keeps K recoverable from the file
    if ints.h[K - 1, K - 1] == 0:
        lines.append(f"{K} {K} 0 0 0")
    Path(path).write_text("\n".join(lines) + "\n")


# ------------------------------------------------------------- mean field

@dataclass
class MeanFieldResult:
    """Outcome of the self-consistent field iteration.

    Attributes
    ----------
    lambdas : ndarray
        Orbital energies in ascending order.
    C : ndarray
        MO coefficients, column ``i`` is orbital ``i`` in the input basis.
    Lambda0 : float
        Sum of the ``N`` lowest orbital energies.
    eps_min : float
        HOMO-LUMO gap ``lambdas[N] - lambdas[N-1]`` (``inf`` if ``N = K``).
    """

    lambdas: np.ndarray
    C: np.ndarray
    N: int
    Lambda0: float
    eps_min: float
    scf_energy: float
    converged: bool
    iterations: int
    density_change: float
    degenerate_aufbau: bool = False

    def to_json(self) -> dict:
        C = np.asarray(self.C)
        out = {
            "lambdas": [float(x) for x in self.lambdas],
            "C": [[float(x) for x in row] for row in C.real],
            "Lambda0": float(self.Lambda0),
            "eps_min": float(self.eps_min),
            "scf_energy": float(self.scf_energy),
            "converged": bool(self.converged),
        }
        if np.iscomplexobj(C) and np.any(C.imag):
            out["C_imag"] = [[float(x) for x in row] for row in C.imag]
        return out


def density(C: np.ndarray, N: int) -> np.ndarray:
    """One-particle density ``D[q, p] = <a+_p a_q>`` of the aufbau determinant."""
    Co = C[:, :N]
    return Co @ Co.conj().T


def fock_matrix(ints: Integrals, D: np.ndarray) -> np.ndarray:
    """Mean-field matrix ``F[p,r] = h[p,r] + sum_{q,s} W[p,q,r,s] D[s,q]``."""
    return ints.h + np.einsum("pqrs,sq->pr", ints.W, D)


def mean_field_energy(ints: Integrals, D: np.ndarray) -> float:
    e1 = np.einsum("pq,qp->", ints.h, D)
    e2 = 0.5 * np.einsum("pqrs,rp,sq->", ints.W, D, D)
    return float(np.real(e1 + e2)) + ints.constant


def random_density(K: int, N: int, rng) -> np.ndarray:
    """Idempotent density of ``N`` random orthonormal orbitals."""
    Q, _ = np.linalg.qr(rng.standard_normal((K, K)))
    return density(Q, N)


def scf_solve(ints: Integrals, N: int, max_iter: int = 200, mixing: float = 0.5,
              tol: float = 1e-10, guess: Optional[np.ndarray] = None) -> MeanFieldResult:
    """Roothaan-type self-consistent field iteration in the spin-orbital basis.

    The initial density is the aufbau density of ``h`` unless ``guess`` is
    given. Each iteration diagonalizes the mean-field matrix, occupies the
    ``N`` lowest orbitals and mixes the new density linearly into the old one.
    On non-convergence the iterate with the smallest density change is
    returned with ``converged=False``.
    """
    K = ints.K
    if not 1 <= N <= K:
        raise ValueError(f"need 1 <= N <= K, got N={N}, K={K}")
    if not 0 < mixing <= 1:
        raise ValueError("mixing must lie in (0, 1]")
    if guess is None:
        _, C0 = np.linalg.eigh(ints.h)
        D = density(C0, N)
    else:
        D = np.asarray(guess)
    best = None
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        F = fock_matrix(ints, D)
        F = 0.5 * (F + F.conj().T)
        lam, C = np.linalg.eigh(F)
        D_new = density(C, N)
        change = float(np.linalg.norm(D_new - D))
        if best is None or change < best[0]:
            best = (change, lam, C, D_new, it)
        if change <= tol:
            converged = True
            break
        D = (1 - mixing) * D + mixing * D_new
    change, lam, C, D, it_best = best if not converged else (change, lam, C, D_new, it)
    scale = max(1.0, float(np.max(np.abs(lam))))
    degenerate = N < K and abs(lam[N] - lam[N - 1]) <= 1e-10 * scale
    if degenerate:
        warnings.warn("aufbau occupation is ambiguous: lambda_N == lambda_{N+1}; "
                      "occupying the lowest indices", RuntimeWarning)
    return MeanFieldResult(
        lambdas=lam, C=C, N=N,
        Lambda0=float(np.sum(lam[:N])),
        eps_min=float(lam[N] - lam[N - 1]) if N < K else math.inf,
        scf_energy=mean_field_energy(ints, D),
        converged=converged, iterations=it if converged else it_best,
        density_change=change, degenerate_aufbau=degenerate)


def to_mo_basis(ints: Integrals, C: np.ndarray) -> Integrals:
    """Transform integrals to the orbitals given by the columns of ``C``."""
    C = np.asarray(C)
    K = ints.K
    if C.shape != (K, K):
        raise ValueError(f"C must be {K}x{K}")
    if np.max(np.abs(C.conj().T @ C - np.eye(K))) > UNITARY_TOL:
        raise ValueError("orbital coefficient matrix is not unitary")
    Cc = C.conj()
    h = Cc.T @ ints.h @ C
    W = np.einsum("pi,pqrs->iqrs", Cc, ints.W, optimize=True)
    W = np.einsum("qj,iqrs->ijrs", Cc, W, optimize=True)
    W = np.einsum("rk,ijrs->ijks", C, W, optimize=True)
    W = np.einsum("sl,ijks->ijkl", C, W, optimize=True)
    if not np.iscomplexobj(ints.h) and not np.iscomplexobj(ints.W) and not np.iscomplexobj(C):
        h, W = h.real, W.real
    return Integrals(h, W, ints.constant, dict(ints.meta))


# ------------------------------------------------------------- Fock splitting

@dataclass
class FockData:
    """Orbital-energy data of a canonical MO basis.

    ``eps[k]`` is the excitation energy of ``excitations[k]``; ``F`` is the
    diagonal Fock operator on the full determinant space and ``Wf`` the
    fluctuation ``H - F``.
    """

    lambdas: np.ndarray
    N: int
    excitations: tuple
    eps: np.ndarray
    F: np.ndarray
    Wf: np.ndarray

    @property
    def Lambda0(self) -> float:
        return float(np.sum(self.lambdas[:self.N]))

    @property
    def eps_min(self) -> float:
        if self.N >= len(self.lambdas):
            return math.inf
        return float(self.lambdas[self.N] - self.lambdas[self.N - 1])


def excitation_energy(lambdas: Sequence[float], x: Excitation) -> float:
    return float(sum(lambdas[a] - lambdas[i] for i, a in zip(x.I, x.A)))


def fock_data(lambdas, N: int, space: DeterminantSpace, excitations,
              H: np.ndarray) -> FockData:
    """Per-excitation energies, diagonal Fock operator and fluctuation operator.

    ``lambdas`` are the canonical orbital energies (a :class:`MeanFieldResult`
    is accepted as well); ``H`` is the Hamiltonian matrix on ``space``.
    """
    if isinstance(lambdas, MeanFieldResult):
        lambdas = lambdas.lambdas
    lambdas = np.asarray(lambdas, dtype=float)
    diag = np.array([sum(lambdas[p] for p in occupied(d)) for d in space.dets])
    F = np.diag(diag)
    eps = np.array([excitation_energy(lambdas, x) for x in excitations])
    return FockData(lambdas=lambdas, N=N, excitations=tuple(excitations), eps=eps,
                    F=F, Wf=np.asarray(H) - F)
