"""Mode algebras and superoperator matrices.

A superoperator is stored as a plain ``D^2 x D^2`` complex array acting on
column-stacked ``D x D`` operators, i.e. ``lmul(a) @ vec(X) == vec(a @ X)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce

import numpy as np

from .linalg import DimensionError, as_matrix, is_hermitian

__all__ = [
    "ModeAlgebra",
    "bosonic_algebra",
    "fermionic_algebra",
    "lmul",
    "rmul",
    "sandwich",
    "identity_superop",
    "hamiltonian_liouv",
    "lindblad_dissipator",
    "quadratic_hamiltonian",
    "boson_superops",
    "fermion_superops",
    "system_fermion_superops",
    "extend_fermion_ops",
    "super_kron",
    "pauli",
    "site_operator",
]

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
# |0> is the empty / spin-up state, so sigma^- = |0><1| lowers the occupation.
SIGMA_MINUS = np.array([[0, 1], [0, 0]], dtype=complex)


def pauli(which: str) -> np.ndarray:
    return {"x": SIGMA_X, "y": SIGMA_Y, "z": SIGMA_Z, "i": np.eye(2, dtype=complex)}[which].copy()


def site_operator(op, site: int, n_sites: int, local_dim: int = 2, string=None) -> np.ndarray:
    """Embed ``op`` at ``site`` of a chain; ``string`` fills the sites to its left."""
    left = np.eye(local_dim, dtype=complex) if string is None else string
    factors = [left] * site + [np.asarray(op, dtype=complex)]
    factors += [np.eye(local_dim, dtype=complex)] * (n_sites - site - 1)
    return reduce(np.kron, factors, np.eye(1, dtype=complex))


@dataclass(frozen=True)
class ModeAlgebra:
    """Annihilation/creation matrices of ``n_modes`` bosonic or fermionic modes."""

    kind: str
    n_modes: int
    fock_cutoff: int | None
    annihilators: tuple
    creators: tuple
    parity: np.ndarray | None = None

    @property
    def dim(self) -> int:
        if self.n_modes == 0:
            return 1
        return self.annihilators[0].shape[0]

    def number_operator(self) -> np.ndarray:
        out = np.zeros((self.dim, self.dim), dtype=complex)
        for a, ad in zip(self.annihilators, self.creators):
            out += ad @ a
        return out


def bosonic_algebra(n_modes: int, cutoff: int) -> ModeAlgebra:
    """Truncated bosons, ``b = sum_{m < d-1} sqrt(m+1) |m><m+1|`` on each mode."""
    if cutoff < 2:
        raise ValueError("Fock cutoff must be at least 2")
    b1 = np.diag(np.sqrt(np.arange(1, cutoff)), k=1).astype(complex)
    ann = tuple(site_operator(b1, k, n_modes, cutoff) for k in range(n_modes))
    return ModeAlgebra("bosonic", n_modes, cutoff, ann, tuple(a.conj().T for a in ann))


def fermionic_algebra(n_modes: int) -> ModeAlgebra:
    """Jordan–Wigner fermions with a diagonal parity operator."""
    ann = tuple(site_operator(SIGMA_MINUS, k, n_modes, 2, string=SIGMA_Z) for k in range(n_modes))
    parity = reduce(np.kron, [SIGMA_Z] * n_modes, np.eye(1, dtype=complex))
    return ModeAlgebra("fermionic", n_modes, None, ann, tuple(a.conj().T for a in ann), parity)


def lmul(a) -> np.ndarray:
    """Superoperator ``X -> a X``."""
    a = as_matrix(a, square=True)
    return np.kron(np.eye(a.shape[0], dtype=complex), a)


def rmul(b) -> np.ndarray:
    """Superoperator ``X -> X b``."""
    b = as_matrix(b, square=True)
    return np.kron(b.T, np.eye(b.shape[0], dtype=complex))


def sandwich(a, b) -> np.ndarray:
    """Superoperator ``X -> a X b``."""
    a = as_matrix(a, square=True)
    b = as_matrix(b, square=True)
    return np.kron(b.T, a)


def identity_superop(dim: int) -> np.ndarray:
    return np.eye(dim * dim, dtype=complex)


def hamiltonian_liouv(h, tol: float = 1e-10) -> np.ndarray:
    """``-i [h, .]``; rejects non-Hermitian ``h``."""
    h = as_matrix(h, square=True, name="Hamiltonian")
    if not is_hermitian(h, tol):
        raise ValueError("Hamiltonian must be Hermitian")
    return -1j * (lmul(h) - rmul(h))


def lindblad_dissipator(rate, jumps, *, check_psd: bool = True, tol: float = 1e-10) -> np.ndarray:
    r"""``X -> sum_kl R_kl (2 L_l X L_k^\dagger - L_k^\dagger L_l X - X L_k^\dagger L_l)``.

    Note the factor 2 on the sandwich term: a single jump with ``R = 1/2``
    gives the textbook ``L X L^\dagger - {L^\dagger L, X}/2``.
    """
    jumps = [as_matrix(j, square=True, name="jump operator") for j in jumps]
    rate = as_matrix(rate, square=True, name="rate matrix")
    if rate.shape[0] != len(jumps):
        raise DimensionError(f"rate matrix is {rate.shape[0]}x{rate.shape[0]} but {len(jumps)} jumps given")
    if not jumps:
        raise DimensionError("at least one jump operator is required")
    dim = jumps[0].shape[0]
    if any(j.shape[0] != dim for j in jumps):
        raise DimensionError("jump operators have different dimensions")
    if check_psd:
        if not is_hermitian(rate, tol):
            raise ValueError("rate matrix must be Hermitian")
        if np.linalg.eigvalsh(0.5 * (rate + rate.conj().T)).min() < -tol:
            raise ValueError("rate matrix must be positive semidefinite")
    out = np.zeros((dim * dim, dim * dim), dtype=complex)
    for k, lk in enumerate(jumps):
        lkd = lk.conj().T
        for l, ll in enumerate(jumps):
            r = rate[k, l]
            if r == 0:
                continue
            prod = lkd @ ll
            out += r * (2 * sandwich(ll, lkd) - lmul(prod) - rmul(prod))
    return out


def quadratic_hamiltonian(alg: ModeAlgebra, h) -> np.ndarray:
    r"""``sum_kl h_kl a_k^\dagger a_l`` in the algebra's representation."""
    h = as_matrix(h, square=True)
    if h.shape[0] != alg.n_modes:
        raise DimensionError(f"coefficient matrix is {h.shape[0]}x{h.shape[0]} for {alg.n_modes} modes")
    out = np.zeros((alg.dim, alg.dim), dtype=complex)
    for k in range(alg.n_modes):
        for l in range(alg.n_modes):
            if h[k, l] != 0:
                out += h[k, l] * alg.creators[k] @ alg.annihilators[l]
    return out


def boson_superops(alg: ModeAlgebra) -> dict:
    r"""The families ``b``, ``b^\dagger`` (left products) and their tilde partners.

    Keys: ``"b"`` (X -> b X), ``"bd"`` (X -> b^\dagger X), ``"bt"`` (X -> X b^\dagger),
    ``"btd"`` (X -> X b).
    """
    if alg.kind != "bosonic":
        raise ValueError("bosonic algebra required")
    return {
        "b": [lmul(b) for b in alg.annihilators],
        "bd": [lmul(bd) for bd in alg.creators],
        "bt": [rmul(bd) for bd in alg.creators],
        "btd": [rmul(b) for b in alg.annihilators],
    }


def fermion_superops(alg: ModeAlgebra) -> dict:
    r"""Parity-weaved environment families.

    ``"c"``: X -> P c X, ``"cd"``: X -> -P c^\dagger X, ``"ct"``: X -> P X c^\dagger,
    ``"ctd"``: X -> P X c.  These satisfy canonical anticommutation relations
    among all four families.
    """
    if alg.kind != "fermionic":
        raise ValueError("fermionic algebra required")
    p = alg.parity
    return {
        "c": [lmul(p @ c) for c in alg.annihilators],
        "cd": [lmul(-p @ cd) for cd in alg.creators],
        "ct": [sandwich(p, cd) for cd in alg.creators],
        "ctd": [sandwich(p, c) for c in alg.annihilators],
    }


def system_fermion_superops(alg: ModeAlgebra) -> dict:
    r"""System-side impurity families.

    ``"a"``: X -> a X, ``"ad"``: X -> a^\dagger X, ``"at"``: X -> -P X a^\dagger P,
    ``"atd"``: X -> P X a P.
    """
    if alg.kind != "fermionic":
        raise ValueError("fermionic algebra required")
    p = alg.parity
    return {
        "a": [lmul(a) for a in alg.annihilators],
        "ad": [lmul(ad) for ad in alg.creators],
        "at": [-sandwich(p, ad @ p) for ad in alg.creators],
        "atd": [sandwich(p, a @ p) for a in alg.annihilators],
    }


def extend_fermion_ops(env_alg: ModeAlgebra, sys_alg: ModeAlgebra) -> dict:
    """Lift both algebras to ``H_E (x) H_S`` respecting the graded structure.

    System operators pick up the environment parity (``a -> P_e (x) a``),
    environment operators act trivially on the system (``c -> c (x) I``).
    """
    if env_alg.kind != "fermionic" or sys_alg.kind != "fermionic":
        raise ValueError("both algebras must be fermionic")
    i_s = np.eye(sys_alg.dim, dtype=complex)
    return {
        "a": [np.kron(env_alg.parity, a) for a in sys_alg.annihilators],
        "ad": [np.kron(env_alg.parity, ad) for ad in sys_alg.creators],
        "c": [np.kron(c, i_s) for c in env_alg.annihilators],
        "cd": [np.kron(cd, i_s) for cd in env_alg.creators],
        "parity": np.kron(env_alg.parity, sys_alg.parity),
    }


_PERM_CACHE: dict = {}


def _kron_to_vec_perm(de: int, ds: int) -> np.ndarray:
    """Index map ``p`` with ``vec(X_E (x) X_S)[p] == kron(vec X_E, vec X_S)``."""
    key = (de, ds)
    if key not in _PERM_CACHE:
        er, ec, sr, sc = np.meshgrid(np.arange(de), np.arange(de), np.arange(ds), np.arange(ds),
                                     indexing="ij")
        # kron order: (er + de*ec) * ds^2 + (sr + ds*sc); enumerate in that order.
        order = np.argsort(((er + de * ec) * ds * ds + sr + ds * sc).ravel())
        d = de * ds
        vec_index = ((er * ds + sr) + d * (ec * ds + sc)).ravel()
        _PERM_CACHE[key] = vec_index[order]
    return _PERM_CACHE[key]


def super_kron(e, s) -> np.ndarray:
    """Tensor product of an environment and a system superoperator, on ``vec`` of ``H``.

    Acts on product operators as ``X_E (x) X_S -> e(X_E) (x) s(X_S)``.
    """
    e = as_matrix(e, square=True)
    s = as_matrix(s, square=True)
    de = int(round(np.sqrt(e.shape[0])))
    ds = int(round(np.sqrt(s.shape[0])))
    if de * de != e.shape[0] or ds * ds != s.shape[0]:
        raise DimensionError("superoperators must act on square operators")
    p = _kron_to_vec_perm(de, ds)
    out = np.empty((e.shape[0] * s.shape[0],) * 2, dtype=complex)
    out[np.ix_(p, p)] = np.kron(e, s)
    return out
