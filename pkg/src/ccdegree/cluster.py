"""Truncated amplitude spaces and cluster operators on the determinant space.

An amplitude vector ``t`` is a plain numpy array aligned with the excitation
list of an :class:`AmplitudeSpace`. Its cluster operator is
``T = sum_k t[k] X_k`` with ``X_k`` the excitation operator of excitation
``k``. The basis vector of excitation ``k`` is ``Phi_k = X_k Phi_0``, which
equals ``signs[k]`` times the corresponding determinant of the sector.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from typing import Optional

import numpy as np

from .fockspace import DeterminantSpace, Excitation, OrbitalBasis, apply_excitation

ELL2 = "ell2"
FOCK = "fock"


@dataclass(frozen=True)
class TruncationScheme:
    """Excitation ranks kept in the amplitude space.

    ``kind`` is ``"full"``, ``"doubles"`` or ``"ranks"``; for ``"ranks"``
    the kept ranks are listed in ``ranks``.
    """

    kind: str = "full"
    ranks: tuple = ()

    def __post_init__(self):
        if self.kind not in ("full", "doubles", "ranks"):
            raise ValueError(f"unknown truncation kind {self.kind!r}")
        if self.kind == "ranks":
            r = tuple(sorted(set(int(x) for x in self.ranks)))
            if not r or r[0] < 1:
                raise ValueError("rank set must be a non-empty subset of {1, 2, ...}")
            object.__setattr__(self, "ranks", r)

    def rank_set(self, N: int) -> tuple:
        if self.kind == "full":
            return tuple(range(1, N + 1))
        if self.kind == "doubles":
            return (2,)
        bad = [r for r in self.ranks if r > N]
        if bad:
            raise ValueError(f"ranks {bad} exceed N={N}")
        return self.ranks

    def label(self) -> str:
        if self.kind == "ranks":
            return "ranks{" + ",".join(str(r) for r in self.ranks) + "}"
        return "doubles-only" if self.kind == "doubles" else "full"

    @classmethod
    def parse(cls, text: str) -> "TruncationScheme":
        """Parse ``full``, ``doubles``/``doubles-only``/``ccd``, ``ccsd``,
        ``ranks{1,2}`` or a bare comma list such as ``1,2``."""
        s = text.strip().lower()
        if s in ("full", "fcc"):
            return cls("full")
        if s in ("doubles", "doubles-only", "d", "ccd"):
            return cls("doubles")
        named = {"ccs": (1,), "ccsd": (1, 2), "ccsdt": (1, 2, 3), "ccsdtq": (1, 2, 3, 4)}
        if s in named:
            return cls("ranks", named[s])
        m = re.fullmatch(r"(?:ranks)?\s*[{(\[]?\s*([\d\s,]+?)\s*[})\]]?", s)
        if not m:
            raise ValueError(f"cannot parse truncation scheme {text!r}")
        return cls("ranks", tuple(int(x) for x in m.group(1).replace(" ", "").split(",") if x))


def all_excitations(basis: OrbitalBasis) -> list:
    """Every excitation of rank ``1..N`` ordered by rank, then by ``(I, A)``."""
    occ = range(basis.N)
    vir = range(basis.N, basis.K)
    out = []
    for r in range(1, basis.N + 1):
        for I in combinations(occ, r):
            for A in combinations(vir, r):
                out.append(Excitation(I, A))
    return out


class ExcitationAlgebra:
    """Action of every excitation operator on the full determinant space.

    Stored as transition lists: excitation ``alpha[k]`` maps determinant
    ``cols[k]`` to ``sign[k]`` times determinant ``rows[k]``.
    """

    def __init__(self, basis: OrbitalBasis):
        self.basis = basis
        self.space = DeterminantSpace(basis)
        self.excitations = tuple(all_excitations(basis))
        self.position = {x: k for k, x in enumerate(self.excitations)}
        ref = basis.reference
        index = self.space.index
        det_index, signs = [], []
        rows, cols, alpha, sgn = [], [], [], []
        for k, x in enumerate(self.excitations):
            s, d = apply_excitation(x, ref)
            det_index.append(index[d])
            signs.append(s)
            for c, det in enumerate(self.space.dets):
                res = apply_excitation(x, det)
                if res is None:
                    continue
                rows.append(index[res[1]])
                cols.append(c)
                alpha.append(k)
                sgn.append(res[0])
        self.det_index = np.array(det_index, dtype=int)
        self.signs = np.array(signs, dtype=float)
        self.rows = np.array(rows, dtype=int)
        self.cols = np.array(cols, dtype=int)
        self.alpha = np.array(alpha, dtype=int)
        self.sign = np.array(sgn, dtype=float)
        self.ranks = np.array([x.rank for x in self.excitations], dtype=int)

    @property
    def dim(self) -> int:
        return self.space.dim


@lru_cache(maxsize=32)
def excitation_algebra(K: int, N: int) -> ExcitationAlgebra:
    return ExcitationAlgebra(OrbitalBasis(K, N))


class AmplitudeSpace:
    """Amplitude space of a truncation scheme.

    Attributes
    ----------
    excitations : tuple of Excitation
        The kept excitations in canonical order.
    dim : int
        Number of amplitudes ``d``.
    det_index : ndarray
        Sector index of the determinant reached by each kept excitation.
    signs : ndarray
        ``X_k Phi_0 = signs[k] * |det_index[k]>``.
    rank_regular, excitation_complete : bool
        Structural flags of the truncation.
    """

    def __init__(self, basis: OrbitalBasis, scheme: TruncationScheme):
        self.basis = basis
        self.scheme = scheme
        self.algebra = excitation_algebra(basis.K, basis.N)
        self.sector = self.algebra.space
        ranks = set(scheme.rank_set(basis.N))
        full = self.algebra.excitations
        self.full_positions = np.array([k for k, x in enumerate(full) if x.rank in ranks], dtype=int)
        self.complement_positions = np.array(
            [k for k, x in enumerate(full) if x.rank not in ranks], dtype=int)
        self.excitations = tuple(full[k] for k in self.full_positions)
        self.index = {x: k for k, x in enumerate(self.excitations)}
        self.det_index = self.algebra.det_index[self.full_positions]
        self.signs = self.algebra.signs[self.full_positions]
        self.ranks = self.algebra.ranks[self.full_positions]
        # local position of each full-list excitation, -1 if not kept
        self._local = -np.ones(len(full), dtype=int)
        self._local[self.full_positions] = np.arange(len(self.full_positions))
        keep = self._local[self.algebra.alpha] >= 0
        self._rows = self.algebra.rows[keep]
        self._cols = self.algebra.cols[keep]
        self._sign = self.algebra.sign[keep]
        self._alpha = self._local[self.algebra.alpha[keep]]
        self.excitation_complete = ranks == set(range(1, max(ranks) + 1))
        self.rank_regular = self._rank_regular()

    def __len__(self):
        return self.dim

    @property
    def dim(self) -> int:
        return len(self.excitations)

    @property
    def sector_dim(self) -> int:
        return self.sector.dim

    @property
    def is_full(self) -> bool:
        return len(self.complement_positions) == 0

    def _rank_regular(self) -> bool:
        """True if no excluded excitation maps a kept basis vector onto another."""
        alg = self.algebra
        kept_dets = np.zeros(alg.dim, dtype=bool)
        kept_dets[self.det_index] = True
        excluded = self._local[alg.alpha] < 0
        hits = excluded & kept_dets[alg.rows] & kept_dets[alg.cols]
        return not bool(np.any(hits))

    def subspace(self, scheme: TruncationScheme) -> "AmplitudeSpace":
        return AmplitudeSpace(self.basis, scheme)

    # -- coordinates ---------------------------------------------------------

    def project(self, v: np.ndarray) -> np.ndarray:
        """Amplitude coordinates ``<v, Phi_k>`` of a sector vector (or matrix rows)."""
        v = np.asarray(v)
        if v.ndim == 1:
            return self.signs * v[self.det_index]
        return self.signs[:, None] * v[self.det_index]

    def embed(self, t: np.ndarray) -> np.ndarray:
        """Sector vector ``T Phi_0`` of an amplitude vector."""
        t = np.asarray(t)
        self.check(t)
        v = np.zeros(self.sector_dim, dtype=t.dtype)
        v[self.det_index] = self.signs * t
        return v

    def block(self, M: np.ndarray) -> np.ndarray:
        """Matrix of a sector operator in the basis ``Phi_k`` of the space."""
        S = self.signs
        return S[:, None] * M[np.ix_(self.det_index, self.det_index)] * S[None, :]

    def check(self, t):
        if np.shape(t) != (self.dim,):
            raise ValueError(f"amplitude vector must have length {self.dim}, got {np.shape(t)}")

    # -- cluster operators ---------------------------------------------------

    def cluster_matrix(self, t: np.ndarray) -> np.ndarray:
        """Dense sector matrix of ``T = sum_k t[k] X_k``."""
        t = np.asarray(t)
        self.check(t)
        dtype = complex if np.iscomplexobj(t) else float
        T = np.zeros((self.sector_dim, self.sector_dim), dtype=dtype)
        T[self._rows, self._cols] = t[self._alpha] * self._sign
        return T

    def cluster_apply(self, t: np.ndarray, v: np.ndarray) -> np.ndarray:
        return self.cluster_matrix(t) @ v

    def exp_matrix(self, t: np.ndarray) -> np.ndarray:
        """``exp(T) = sum_{k=0}^{N} T^k / k!`` (T is nilpotent of order N+1)."""
        T = self.cluster_matrix(t)
        E = np.eye(self.sector_dim, dtype=T.dtype)
        term = np.eye(self.sector_dim, dtype=T.dtype)
        for k in range(1, self.basis.N + 1):
            term = term @ T / k
            E = E + term
        return E

    def exp_apply(self, t: np.ndarray, v: np.ndarray) -> np.ndarray:
        T = self.cluster_matrix(t)
        v = np.asarray(v, dtype=np.result_type(T, v))
        out = v.copy()
        term = v
        for k in range(1, self.basis.N + 1):
            term = T @ term / k
            out = out + term
        return out

    def excitation_columns(self, v: np.ndarray) -> np.ndarray:
        """Matrix whose column ``k`` is ``X_k v``; for a matrix ``v`` the result
        has shape ``(sector_dim, d, v.shape[1])``."""
        v = np.asarray(v)
        out = np.zeros((self.sector_dim, self.dim) + v.shape[1:], dtype=v.dtype)
        if v.ndim == 1:
            out[self._rows, self._alpha] = self._sign * v[self._cols]
        else:
            out[self._rows, self._alpha] = self._sign[:, None] * v[self._cols]
        return out

    def excitation_matrix(self, k: int) -> np.ndarray:
        """Sector matrix of the single excitation operator ``X_k``."""
        e = np.zeros(self.dim)
        e[k] = 1.0
        return self.cluster_matrix(e)

    def reference(self, dtype=float) -> np.ndarray:
        v = np.zeros(self.sector_dim, dtype=dtype)
        v[0] = 1
        return v

    def random_amplitudes(self, rng, scale: float = 1.0, complex_field: bool = False):
        t = scale * rng.standard_normal(self.dim)
        if complex_field:
            t = t + 1j * scale * rng.standard_normal(self.dim)
        return t


def amplitude_space(basis: OrbitalBasis, scheme) -> AmplitudeSpace:
    if isinstance(scheme, str):
        scheme = TruncationScheme.parse(scheme)
    return AmplitudeSpace(basis, scheme)


def field_of(t) -> str:
    return "complex" if np.iscomplexobj(t) else "real"


def cluster_log(space: AmplitudeSpace, c: np.ndarray) -> np.ndarray:
    """Amplitudes of ``log(I + C)`` for ``C`` given by coordinates ``c``.

    ``space`` must be the full amplitude space. Uses the terminating series
    ``sum_{k=1}^{N} (-1)^(k+1) C^k / k``.
    """
    if not space.is_full:
        raise ValueError("cluster_log requires the full amplitude space")
    C = space.cluster_matrix(np.asarray(c))
    L = np.zeros_like(C)
    P = np.eye(space.sector_dim, dtype=C.dtype)
    for k in range(1, space.basis.N + 1):
        P = P @ C
        L = L + ((-1) ** (k + 1) / k) * P
    return space.project(L[:, 0])


def intermediate_normalize(space: AmplitudeSpace, psi: np.ndarray) -> np.ndarray:
    """Coordinates ``c`` of ``psi / <psi, Phi_0> - Phi_0`` on the full space."""
    psi = np.asarray(psi)
    c0 = psi[0]
    if abs(c0) <= 1e-14 * max(1.0, np.linalg.norm(psi)):
        raise ValueError("vector has no reference component")
    return space.project(psi / c0)


def amp_norm(t: np.ndarray, kind: str = ELL2, eps: Optional[np.ndarray] = None) -> float:
    """l2 norm, or Fock-weighted norm ``sqrt(sum eps_k |t_k|^2)``."""
    t = np.asarray(t)
    if kind == ELL2:
        return float(np.linalg.norm(t))
    if kind == FOCK:
        if eps is None:
            raise ValueError("Fock-weighted norm needs excitation energies")
        eps = np.asarray(eps, dtype=float)
        if np.any(eps <= 0):
            raise ValueError("Fock-weighted norm requires all excitation energies > 0")
        return float(math.sqrt(np.sum(eps * np.abs(t) ** 2)))
    raise ValueError(f"unknown norm kind {kind!r}")


def norm_gram(kind: str, eps: Optional[np.ndarray], d: int) -> np.ndarray:
    """Diagonal of the Gram matrix of the chosen amplitude norm."""
    if kind == ELL2:
        return np.ones(d)
    amp_norm(np.zeros(d), kind, eps)  # validates eps
    return np.asarray(eps, dtype=float)


def norm_equivalence_constant(eps: np.ndarray) -> float:
    """``max(sqrt(eps_max), 1/sqrt(eps_min))``: bounds both norm ratios."""
    eps = np.asarray(eps, dtype=float)
    if np.any(eps <= 0):
        raise ValueError("norm equivalence needs positive excitation energies")
    return float(max(math.sqrt(eps.max()), 1.0 / math.sqrt(eps.min())))


def amplitudes_to_json(space: AmplitudeSpace, t: np.ndarray) -> dict:
    """``{scheme, entries: [{I, A, re, im}]}`` with 1-based orbital indices."""
    t = np.asarray(t)
    entries = []
    for x, v in zip(space.excitations, t):
        entries.append({"I": [i + 1 for i in x.I], "A": [a + 1 for a in x.A],
                        "re": float(np.real(v)), "im": float(np.imag(v))})
    return {"scheme": space.scheme.label(), "field": field_of(t), "entries": entries}


def amplitudes_from_json(space: AmplitudeSpace, data: dict) -> np.ndarray:
    complex_field = data.get("field") == "complex" or any(e.get("im", 0) for e in data["entries"])
    t = np.zeros(space.dim, dtype=complex if complex_field else float)
    for e in data["entries"]:
        x = Excitation(tuple(i - 1 for i in e["I"]), tuple(a - 1 for a in e["A"]))
        if x not in space.index:
            raise ValueError(f"excitation {e['I']}->{e['A']} not in the amplitude space")
        v = complex(e["re"], e.get("im", 0.0))
        t[space.index[x]] = v if complex_field else v.real
    return t
