"""Slater determinants as bitmasks, ladder operators, and dense operator assembly.

Orbitals are indexed ``0 .. K-1`` and orbital ``p`` corresponds to bit ``p``
of the occupation mask. The fermionic phase of a ladder operator acting on
orbital ``p`` is ``(-1)**n`` where ``n`` counts occupied orbitals strictly
below ``p``.

Functions
---------
apply_ladder
    Apply a single creation or annihilation operator to a determinant.
apply_excitation
    Apply an excitation string ``a+_{A1} a_{I1} ... a+_{Ar} a_{Ir}``.
hamiltonian_matrix
    Assemble the N-sector Hamiltonian from ladder strings.
fci_solve
    Dense diagonalization of a Hermitian sector operator.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

CREATE = "create"
ANNIHILATE = "annihilate"

MAX_ORBITALS = 24
HERMITIAN_RTOL = 1e-12


@dataclass(frozen=True)
class OrbitalBasis:
    """Number of spin-orbitals ``K`` and particles ``N``."""

    K: int
    N: int
    max_orbitals: int = MAX_ORBITALS

    def __post_init__(self):
        if not 1 <= self.N <= self.K:
            raise ValueError(f"need 1 <= N <= K, got N={self.N}, K={self.K}")
        if self.K > self.max_orbitals:
            raise ValueError(f"K={self.K} exceeds dense bound {self.max_orbitals}")

    @property
    def reference(self) -> int:
        """Mask of the reference determinant (lowest N orbitals occupied)."""
        return (1 << self.N) - 1


def occupied(mask: int) -> list:
    """Ascending list of occupied orbital indices of ``mask``."""
    out = []
    p = 0
    while mask:
        if mask & 1:
            out.append(p)
        mask >>= 1
        p += 1
    return out


def apply_ladder(p: int, kind: str, det: int) -> Optional[Tuple[int, int]]:
    """Apply ``a+_p`` (``kind='create'``) or ``a_p`` to the determinant ``det``.

    Returns ``(sign, new_mask)`` or ``None`` if the result vanishes.
    """
    bit = 1 << p
    sign = -1 if bin(det & (bit - 1)).count("1") % 2 else 1
    if kind == CREATE:
        if det & bit:
            return None
        return sign, det | bit
    if kind == ANNIHILATE:
        if not det & bit:
            return None
        return sign, det ^ bit
    raise ValueError(f"unknown ladder kind {kind!r}")


def apply_string(ops: Sequence[Tuple[int, str]], det: int) -> Optional[Tuple[int, int]]:
    """Apply a product of ladder operators, written left to right, to ``det``.

    The rightmost operator acts first.
    """
    sign = 1
    for p, kind in reversed(ops):
        res = apply_ladder(p, kind, det)
        if res is None:
            return None
        s, det = res
        sign *= s
    return sign, det


@dataclass(frozen=True, order=True)
class Excitation:
    """Excitation operator replacing occupied orbitals ``I`` by virtuals ``A``.

    The operator is ``a+_{A[0]} a_{I[0]} a+_{A[1]} a_{I[1]} ...``; the empty
    excitation is the identity.
    """

    I: Tuple[int, ...] = ()
    A: Tuple[int, ...] = ()

    def __post_init__(self):
        I, A = tuple(self.I), tuple(self.A)
        object.__setattr__(self, "I", I)
        object.__setattr__(self, "A", A)
        if len(I) != len(A):
            raise ValueError("I and A must have equal length")
        if list(I) != sorted(set(I)) or list(A) != sorted(set(A)):
            raise ValueError("I and A must be strictly ascending")
        if set(I) & set(A):
            raise ValueError("I and A must be disjoint")

    @property
    def rank(self) -> int:
        return len(self.I)

    def ladder_string(self) -> list:
        ops = []
        for i, a in zip(self.I, self.A):
            ops.append((a, CREATE))
            ops.append((i, ANNIHILATE))
        return ops

    def target(self, ref: int) -> int:
        """Mask obtained from ``ref`` by removing ``I`` and adding ``A``."""
        for i in self.I:
            ref &= ~(1 << i)
        for a in self.A:
            ref |= 1 << a
        return ref

    def is_valid_for(self, basis: OrbitalBasis) -> bool:
        N, K = basis.N, basis.K
        return all(0 <= i < N for i in self.I) and all(N <= a < K for a in self.A)


def apply_excitation(x: Excitation, det: int) -> Optional[Tuple[int, int]]:
    """Apply the excitation string of ``x`` to ``det``; ``None`` if it vanishes."""
    return apply_string(x.ladder_string(), det)


class DeterminantSpace:
    """All N-particle determinants over K orbitals, ordered by mask value.

    The reference determinant is always at index 0.
    """

    def __init__(self, basis: OrbitalBasis):
        self.basis = basis
        masks = [sum(1 << p for p in c) for c in combinations(range(basis.K), basis.N)]
        self.dets = tuple(sorted(masks))
        self.index = {m: i for i, m in enumerate(self.dets)}

    def __len__(self):
        return len(self.dets)

    def __iter__(self):
        return iter(self.dets)

    @property
    def dim(self) -> int:
        return len(self.dets)


@dataclass(frozen=True)
class Integrals:
    """One- and two-body coefficients.

    ``h[p, q]`` multiplies ``a+_p a_q``. ``W[p, q, r, s]`` is the antisymmetrized
    two-body element, antisymmetric in ``(p, q)`` and in ``(r, s)``; the
    Hamiltonian contains ``sum_{p<q, r<s} W[p,q,r,s] a+_p a+_q a_s a_r`` so that
    ``W[p,q,r,s]`` is the matrix element between the two-particle determinants
    ``a+_p a+_q |0>`` and ``a+_r a+_s |0>``.
    """

    h: np.ndarray
    W: np.ndarray
    constant: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        h = np.asarray(self.h)
        W = np.asarray(self.W)
        K = h.shape[0]
        if h.shape != (K, K):
            raise ValueError(f"h must be square, got {h.shape}")
        if W.shape != (K, K, K, K):
            raise ValueError(f"W must have shape {(K,) * 4}, got {W.shape}")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "W", W)

    @property
    def K(self) -> int:
        return self.h.shape[0]

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.h) or np.iscomplexobj(self.W)


def antisymmetrize(W: np.ndarray) -> np.ndarray:
    """Project a 4-index array onto the part antisymmetric in (p,q) and (r,s)."""
    W = np.asarray(W)
    return 0.25 * (W - W.transpose(1, 0, 2, 3) - W.transpose(0, 1, 3, 2)
                   + W.transpose(1, 0, 3, 2))


def hermitize(ints: Integrals) -> Integrals:
    """Symmetrize ``h`` and ``W`` so that the Hamiltonian is Hermitian."""
    h = 0.5 * (ints.h + ints.h.conj().T)
    W = antisymmetrize(ints.W)
    W = 0.5 * (W + W.transpose(2, 3, 0, 1).conj())
    if not (np.iscomplexobj(ints.h) or np.iscomplexobj(ints.W)):
        h, W = h.real, W.real
    return Integrals(h, W, ints.constant, dict(ints.meta))


def hamiltonian_matrix(ints: Integrals, space: DeterminantSpace) -> np.ndarray:
    """Matrix of the Hamiltonian on the determinant space.

    Every matrix element is accumulated from explicit ladder strings: the
    one-body terms ``a+_p a_q`` and the two-body terms ``a+_p a+_q a_s a_r``
    with ``p < q`` and ``r < s``. Only strings that do not annihilate the
    column determinant are enumerated.
    """
    K = space.basis.K
    if ints.K != K:
        raise ValueError(f"integrals have K={ints.K}, space has K={K}")
    dtype = complex if ints.is_complex else float
    dim = space.dim
    H = np.zeros((dim, dim), dtype=dtype)
    h, W = ints.h, ints.W
    index = space.index
    for col, det in enumerate(space.dets):
        occ = occupied(det)
        H[col, col] += ints.constant
        for q in occ:
            s1, d1 = apply_ladder(q, ANNIHILATE, det)
            for p in range(K):
                if h[p, q] == 0:
                    continue
                res = apply_ladder(p, CREATE, d1)
                if res is None:
                    continue
                s2, d2 = res
                H[index[d2], col] += s1 * s2 * h[p, q]
        for r, s in combinations(occ, 2):
            s1, d1 = apply_ladder(r, ANNIHILATE, det)
            s2, d2 = apply_ladder(s, ANNIHILATE, d1)
            empty = [p for p in range(K) if not d2 & (1 << p)]
            for p, q in combinations(empty, 2):
                w = W[p, q, r, s]
                if w == 0:
                    continue
                s3, d3 = apply_ladder(q, CREATE, d2)
                s4, d4 = apply_ladder(p, CREATE, d3)
                H[index[d4], col] += s1 * s2 * s3 * s4 * w
    return H


def operator_matrix(terms: Iterable[Tuple[complex, Sequence[Tuple[int, str]]]],
                    space: DeterminantSpace) -> np.ndarray:
    """Matrix of ``sum coeff * string`` for number-conserving ladder strings."""
    dim = space.dim
    M = np.zeros((dim, dim), dtype=complex)
    for coeff, ops in terms:
        for col, det in enumerate(space.dets):
            res = apply_string(ops, det)
            if res is None:
                continue
            sign, new = res
            if new not in space.index:
                raise ValueError("ladder string leaves the N-particle sector")
            M[space.index[new], col] += sign * coeff
    if not np.any(M.imag):
        M = M.real
    return M


def check_hermitian(H: np.ndarray, rtol: float = HERMITIAN_RTOL) -> float:
    """Return the relative Hermiticity defect; raise if it exceeds ``rtol``."""
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError("operator must be a square matrix")
    scale = np.max(np.abs(H)) if H.size else 0.0
    if scale == 0:
        return 0.0
    defect = np.max(np.abs(H - H.conj().T)) / scale
    if defect > rtol:
        raise ValueError(f"operator is not Hermitian (relative defect {defect:.3e})")
    return defect


def fci_solve(H: np.ndarray):
    """Full diagonalization of a Hermitian sector Hamiltonian.

    Returns
    -------
    energies : ndarray
        Eigenvalues in ascending order.
    vectors : ndarray
        Orthonormal eigenvectors as columns.
    """
    check_hermitian(H)
    H = 0.5 * (H + H.conj().T)
    return np.linalg.eigh(H)
