"""Spin-boson and fermionic impurity models: specs, Liouvillians, initial states.

Every assembled model carries two independent constructions of the
system–environment coupling: the operator form (commutators and
dissipators written with full-space operators) and the decomposition
``sum_alpha E_alpha (x) S_alpha``.  The operator form drives the dynamics;
the decomposition feeds the correlation-function machinery, and the two are
compared in the test-suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .linalg import as_matrix, expm, is_hermitian, validate_density, vec
from .superop import (
    ModeAlgebra,
    boson_superops,
    bosonic_algebra,
    extend_fermion_ops,
    fermion_superops,
    fermionic_algebra,
    hamiltonian_liouv,
    identity_superop,
    lindblad_dissipator,
    lmul,
    pauli,
    quadratic_hamiltonian,
    rmul,
    sandwich,
    site_operator,
    super_kron,
    system_fermion_superops,
)

__all__ = [
    "DYNAMICS",
    "SpecError",
    "FockLeakageError",
    "SpinBosonSpec",
    "FermionImpuritySpec",
    "AssembledModel",
    "spin_hamiltonian",
    "assemble",
    "assemble_spin_boson",
    "assemble_fermion",
    "gibbs_state",
    "vacuum_state",
    "filled_split_state",
    "top_level_population",
    "check_stationarity",
    "random_parity_even_density",
]

DYNAMICS = ("unitary", "lindblad", "quasi_lindblad")
LEAKAGE_TOL = 1e-6


class SpecError(ValueError):
    """A model specification violates its invariants."""


class FockLeakageError(RuntimeError):
    """Population at the bosonic Fock cutoff is too large to trust the truncation."""


def spin_hamiltonian(delta, h) -> np.ndarray:
    r"""``sum_j -Delta_j/2 sigma_x^{(j)} + h_j/2 sigma_z^{(j)}``."""
    delta = np.atleast_1d(np.asarray(delta, dtype=float))
    h = np.atleast_1d(np.asarray(h, dtype=float))
    if delta.shape != h.shape:
        raise SpecError("delta and h must have the same length")
    n = delta.size
    out = np.zeros((2**n, 2**n), dtype=complex)
    for j in range(n):
        out += -0.5 * delta[j] * site_operator(pauli("x"), j, n)
        out += 0.5 * h[j] * site_operator(pauli("z"), j, n)
    return out


def _check_kind(dynamics, beta):
    if dynamics not in DYNAMICS:
        raise SpecError(f"dynamics must be one of {DYNAMICS}, got {dynamics!r}")
    if dynamics == "unitary" and (beta is None or not beta > 0):
        raise SpecError("unitary dynamics needs an inverse temperature beta > 0")


def _check_psd(mat, name):
    if not is_hermitian(mat, 1e-10):
        raise SpecError(f"{name} must be Hermitian")
    if mat.size and np.linalg.eigvalsh(0.5 * (mat + mat.conj().T)).min() < -1e-10:
        raise SpecError(f"{name} must be positive semidefinite")


@dataclass(frozen=True)
class SpinBosonSpec:
    """``n`` spins coupled through ``sigma_z`` to ``N_e`` (pseudo)modes.

    ``H`` and ``Gamma`` are ``N_e x N_e``; ``g`` and ``M`` are ``n x N_e``.
    """

    H: np.ndarray
    g: np.ndarray
    dynamics: str = "lindblad"
    Gamma: np.ndarray | None = None
    M: np.ndarray | None = None
    beta: float | None = None
    sys_hamiltonian: np.ndarray | None = None
    sys_jumps: tuple = ()
    fock_cutoff: int = 4

    def __post_init__(self):
        H = as_matrix(self.H, square=True, name="H")
        g = as_matrix(self.g, name="g")
        ne = H.shape[0]
        if g.shape[1] != ne:
            raise SpecError(f"g has {g.shape[1]} columns but H has {ne} modes")
        n = g.shape[0]
        Gamma = np.zeros((ne, ne), complex) if self.Gamma is None else as_matrix(self.Gamma, name="Gamma")
        M = np.zeros((n, ne), complex) if self.M is None else as_matrix(self.M, name="M")
        hs = spin_hamiltonian(np.ones(n), np.zeros(n)) if self.sys_hamiltonian is None \
            else as_matrix(self.sys_hamiltonian, square=True, name="sys_hamiltonian")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "Gamma", Gamma)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "sys_hamiltonian", hs)
        object.__setattr__(self, "sys_jumps", tuple(as_matrix(l, square=True, name="sys_jumps")
                                                   for l in self.sys_jumps))
        self.validate()

    @property
    def n(self) -> int:
        return self.g.shape[0]

    @property
    def n_env(self) -> int:
        return self.H.shape[0]

    def validate(self):
        _check_kind(self.dynamics, self.beta)
        if not is_hermitian(self.H, 1e-10):
            raise SpecError("H must be Hermitian")
        if self.Gamma.shape != self.H.shape:
            raise SpecError("Gamma must have the same shape as H")
        _check_psd(self.Gamma, "Gamma")
        if self.M.shape != self.g.shape:
            raise SpecError("M must have the same shape as g")
        if self.sys_hamiltonian.shape != (2**self.n, 2**self.n):
            raise SpecError(f"sys_hamiltonian must be {2**self.n}x{2**self.n}")
        if not is_hermitian(self.sys_hamiltonian, 1e-10):
            raise SpecError("sys_hamiltonian must be Hermitian")
        if any(l.shape != self.sys_hamiltonian.shape for l in self.sys_jumps):
            raise SpecError("sys_jumps must match the system dimension")
        if self.fock_cutoff < 2:
            raise SpecError("fock_cutoff must be at least 2")
        if self.dynamics == "unitary":
            if np.any(self.Gamma != 0) or np.any(self.M != 0):
                raise SpecError("unitary dynamics requires Gamma = 0 and M = 0")
            if np.linalg.eigvalsh(self.H).min() <= 0:
                raise SpecError("unitary bosonic environment needs positive-definite H")
        if self.dynamics == "lindblad" and np.any(self.M != 0):
            raise SpecError("Lindblad dynamics requires M = 0 (use quasi_lindblad)")

    def with_cutoff(self, d: int) -> "SpinBosonSpec":
        return replace(self, fock_cutoff=d)


@dataclass(frozen=True)
class FermionImpuritySpec:
    """``n`` impurity orbitals hybridized with ``N_e`` environment modes.

    The environment modes ``[0, n_minus)`` are initially empty and may only
    lose particles (``Gamma_minus``); the rest are initially filled and may
    only gain holes (``Gamma_plus``).
    """

    h: np.ndarray
    H: np.ndarray
    nu: np.ndarray
    dynamics: str = "lindblad"
    n_minus: int | None = None
    Gamma_minus: np.ndarray | None = None
    Gamma_plus: np.ndarray | None = None
    M: np.ndarray | None = None
    V: np.ndarray | None = None
    beta: float | None = None
    sys_jumps: tuple = ()

    def __post_init__(self):
        h = as_matrix(self.h, square=True, name="h")
        H = as_matrix(self.H, square=True, name="H")
        nu = as_matrix(self.nu, name="nu")
        n, ne = h.shape[0], H.shape[0]
        n1 = ne if self.n_minus is None else int(self.n_minus)
        gm = np.zeros((n1, n1), complex) if self.Gamma_minus is None else as_matrix(self.Gamma_minus, name="Gamma_minus")
        gp = np.zeros((ne - n1, ne - n1), complex) if self.Gamma_plus is None else as_matrix(self.Gamma_plus, name="Gamma_plus")
        M = np.zeros((n, ne), complex) if self.M is None else as_matrix(self.M, name="M")
        V = np.zeros((n,) * 4, complex) if self.V is None else np.asarray(self.V, dtype=complex)
        for name, val in (("h", h), ("H", H), ("nu", nu), ("Gamma_minus", gm),
                          ("Gamma_plus", gp), ("M", M), ("V", V)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "n_minus", n1)
        object.__setattr__(self, "sys_jumps", tuple(as_matrix(l, square=True, name="sys_jumps")
                                                   for l in self.sys_jumps))
        self.validate()

    @property
    def n(self) -> int:
        return self.h.shape[0]

    @property
    def n_env(self) -> int:
        return self.H.shape[0]

    @property
    def Gamma(self) -> np.ndarray:
        """Block-diagonal ``diag(Gamma_minus, Gamma_plus)``."""
        ne, n1 = self.n_env, self.n_minus
        out = np.zeros((ne, ne), complex)
        out[:n1, :n1] = self.Gamma_minus
        out[n1:, n1:] = self.Gamma_plus
        return out

    def validate(self):
        _check_kind(self.dynamics, self.beta)
        n, ne, n1 = self.n, self.n_env, self.n_minus
        if not is_hermitian(self.h, 1e-10):
            raise SpecError("h must be Hermitian")
        if not is_hermitian(self.H, 1e-10):
            raise SpecError("H must be Hermitian")
        if self.nu.shape != (n, ne):
            raise SpecError(f"nu must be {n}x{ne}")
        if self.M.shape != (n, ne):
            raise SpecError(f"M must be {n}x{ne}")
        if not 0 <= n1 <= ne:
            raise SpecError("n_minus must lie in [0, N_e]")
        if self.Gamma_minus.shape != (n1, n1) or self.Gamma_plus.shape != (ne - n1, ne - n1):
            raise SpecError("Gamma_minus / Gamma_plus do not match the n_minus split")
        _check_psd(self.Gamma_minus, "Gamma_minus")
        _check_psd(self.Gamma_plus, "Gamma_plus")
        if self.V.shape != (n,) * 4:
            raise SpecError(f"V must have shape {(n,) * 4}")
        if any(l.shape != (2**n, 2**n) for l in self.sys_jumps):
            raise SpecError("sys_jumps must match the impurity dimension")
        parity = fermionic_algebra(n).parity
        for l in self.sys_jumps:
            if np.max(np.abs(parity @ l @ parity - l)) > 1e-12:
                raise SpecError("system jump operators must be parity-even")
        if self.dynamics == "unitary":
            if np.any(self.Gamma_minus != 0) or np.any(self.Gamma_plus != 0) or np.any(self.M != 0):
                raise SpecError("unitary dynamics requires Gamma = 0 and M = 0")
        else:
            if np.max(np.abs(self.H[:n1, n1:]), initial=0.0) > 1e-12:
                raise SpecError("H must be block-diagonal across the n_minus split")
        if self.dynamics == "lindblad" and np.any(self.M != 0):
            raise SpecError("Lindblad dynamics requires M = 0 (use quasi_lindblad)")

    def impurity_hamiltonian(self) -> np.ndarray:
        alg = fermionic_algebra(self.n)
        out = quadratic_hamiltonian(alg, self.h)
        a, ad = alg.annihilators, alg.creators
        for idx in zip(*np.nonzero(self.V)):
            i, i2, j2, j = idx
            out = out + self.V[idx] * ad[i] @ ad[i2] @ a[j] @ a[j2]
        if not is_hermitian(out, 1e-10):
            raise SpecError("interaction tensor V yields a non-Hermitian impurity Hamiltonian")
        return out


# --------------------------------------------------------------------------- states


def gibbs_state(alg: ModeAlgebra, H, beta: float, *, leakage_tol: float = LEAKAGE_TOL) -> np.ndarray:
    """``exp(-beta H_hat) / Z`` for the quadratic Hamiltonian built from ``H``."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    H = as_matrix(H, square=True)
    if alg.kind == "bosonic" and np.linalg.eigvalsh(H).min() <= 0:
        raise SpecError("bosonic Gibbs state needs positive-definite H")
    hh = quadratic_hamiltonian(alg, H)
    evals, vecs = np.linalg.eigh(0.5 * (hh + hh.conj().T))
    weights = np.exp(-beta * (evals - evals.min()))
    rho = (vecs * (weights / weights.sum())) @ vecs.conj().T
    rho = 0.5 * (rho + rho.conj().T)
    if alg.kind == "bosonic":
        leak = top_level_population(rho, alg)
        if leak > leakage_tol:
            raise FockLeakageError(
                f"Gibbs population {leak:.2e} at the Fock cutoff d={alg.fock_cutoff}; increase the cutoff"
            )
    return rho


def vacuum_state(alg: ModeAlgebra) -> np.ndarray:
    rho = np.zeros((alg.dim, alg.dim), dtype=complex)
    rho[0, 0] = 1.0
    return rho


def filled_split_state(alg: ModeAlgebra, n_minus: int) -> np.ndarray:
    """Modes ``< n_minus`` empty, the rest fully occupied."""
    if alg.kind != "fermionic":
        raise ValueError("filled_split_state needs a fermionic algebra")
    bits = [0] * n_minus + [1] * (alg.n_modes - n_minus)
    index = int("".join(map(str, bits)), 2) if bits else 0
    rho = np.zeros((alg.dim, alg.dim), dtype=complex)
    rho[index, index] = 1.0
    return rho


def top_level_population(rho_env, alg: ModeAlgebra) -> float:
    """Largest single-mode population of the top Fock level."""
    if alg.kind != "bosonic" or alg.n_modes == 0:
        return 0.0
    d = alg.fock_cutoff
    diag = np.real(np.diag(rho_env)).reshape((d,) * alg.n_modes)
    worst = 0.0
    for k in range(alg.n_modes):
        worst = max(worst, abs(float(np.take(diag, d - 1, axis=k).sum())))
    return worst


def check_stationarity(L_e, rhoE0) -> float:
    """Relative residual ``||L_e vec(rho)|| / ||vec(rho)||``."""
    v = vec(rhoE0)
    return float(np.linalg.norm(L_e @ v) / np.linalg.norm(v))


def random_parity_even_density(parity, rng) -> np.ndarray:
    """Random density matrix commuting with a diagonal parity operator."""
    p = np.real(np.diag(parity))
    d = p.size
    x = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    x = x * (np.equal.outer(p, p))
    rho = x @ x.conj().T
    return rho / np.trace(rho)


# --------------------------------------------------------------------------- assembly


@dataclass(eq=False)
class AssembledModel:
    """Everything needed to propagate one model and to evaluate its correlation functions.

    Full-space superoperators (``L_total`` and the two coupling forms) are
    built on first access, since they are the only objects whose size grows
    like ``(dim_env * dim_sys)^4``.
    """

    spec: object
    family: str
    kind: str
    env_alg: ModeAlgebra
    dim_env: int
    dim_sys: int
    L_e: np.ndarray
    L_s: np.ndarray
    E_alphas: list
    S_alphas: list
    env_families: dict
    rhoE0: np.ndarray
    rhoS0: np.ndarray
    H_total: np.ndarray
    H_se: np.ndarray
    H_env: np.ndarray
    dissipators: list = field(default_factory=list)
    _quasi_builder: object = None

    @property
    def N(self) -> int:
        return len(self.E_alphas)

    @property
    def sign(self) -> int:
        """+1 for bosonic environments, -1 for fermionic ones."""
        return 1 if self.family == "spin_boson" else -1

    @property
    def contractive(self) -> bool:
        return self.kind in ("unitary", "lindblad")

    @property
    def dim(self) -> int:
        return self.dim_env * self.dim_sys

    @cached_property
    def _L_e_sparse(self):
        return scipy.sparse.csr_matrix(self.L_e)

    @cached_property
    def rho0(self) -> np.ndarray:
        return np.kron(self.rhoE0, self.rhoS0)

    @cached_property
    def parity(self) -> np.ndarray | None:
        if self.family != "fermion":
            return None
        return np.kron(self.env_alg.parity, fermionic_algebra(self.spec.n).parity)

    @cached_property
    def D_se(self) -> np.ndarray:
        """Operator-form system–environment dissipator (zero unless quasi-Lindblad)."""
        if self._quasi_builder is None:
            return np.zeros((self.dim**2,) * 2, dtype=complex)
        return self._quasi_builder()

    @cached_property
    def L_se_operator(self) -> np.ndarray:
        return hamiltonian_liouv(self.H_se) + self.D_se

    @cached_property
    def L_se_superop(self) -> np.ndarray:
        out = np.zeros((self.dim**2,) * 2, dtype=complex)
        for e, s in zip(self.E_alphas, self.S_alphas):
            out += super_kron(e, s)
        return out

    @cached_property
    def L_total(self) -> np.ndarray:
        out = hamiltonian_liouv(self.H_total)
        for rate, jumps in self.dissipators:
            out += lindblad_dissipator(rate, jumps, check_psd=False)
        if self._quasi_builder is not None:
            out += self.D_se
        return out

    def env_evolve(self, t: float, V: np.ndarray) -> np.ndarray:
        """``exp(L_e t)`` applied to the columns of ``V`` (vectorized environment operators).

        Hamiltonian environments use ``X -> U X U^dag``, which equals the
        superoperator exponential without forming it.
        """
        if self.kind != "unitary":
            return scipy.sparse.linalg.expm_multiply(self._L_e_sparse * t, V)
        de = self.dim_env
        U = expm(-1j * self.H_env * t)
        X = V.T.reshape(-1, de, de).transpose(0, 2, 1)
        Y = U @ X @ U.conj().T
        return Y.transpose(0, 2, 1).reshape(-1, de * de).T

    def lifted_parts(self) -> np.ndarray:
        """``L_e (x) 1 + 1 (x) L_s``, the decoupled generator on the joint space."""
        return (super_kron(self.L_e, identity_superop(self.dim_sys))
                + super_kron(identity_superop(self.dim_env), self.L_s))


def _system_liouvillian(hs, jumps):
    L_s = hamiltonian_liouv(hs)
    if jumps:
        L_s = L_s + lindblad_dissipator(0.5 * np.eye(len(jumps)), list(jumps), check_psd=False)
    return L_s


def _default_rho_s(dim):
    rho = np.zeros((dim, dim), dtype=complex)
    rho[0, 0] = 1.0
    return rho


def assemble(spec, rhoS0=None) -> AssembledModel:
    if isinstance(spec, SpinBosonSpec):
        return assemble_spin_boson(spec, rhoS0)
    if isinstance(spec, FermionImpuritySpec):
        return assemble_fermion(spec, rhoS0)
    raise TypeError(f"unknown model spec {type(spec).__name__}")


def assemble_spin_boson(spec: SpinBosonSpec, rhoS0=None) -> AssembledModel:
    n, ne, d = spec.n, spec.n_env, spec.fock_cutoff
    ds = 2**n
    rhoS0 = _default_rho_s(ds) if rhoS0 is None else validate_density(rhoS0, name="rho_S(0)")
    if rhoS0.shape != (ds, ds):
        raise SpecError(f"rho_S(0) must be {ds}x{ds}")

    alg = bosonic_algebra(ne, d)
    de = alg.dim
    i_e, i_s = np.eye(de, dtype=complex), np.eye(ds, dtype=complex)
    b = alg.annihilators
    he = quadratic_hamiltonian(alg, spec.H)
    hs = spec.sys_hamiltonian
    sz = [site_operator(pauli("z"), j, n) for j in range(n)]

    L_e = hamiltonian_liouv(he)
    dissipators = []
    if np.any(spec.Gamma != 0):
        L_e = L_e + lindblad_dissipator(spec.Gamma, b)
        dissipators.append((spec.Gamma, [np.kron(bk, i_s) for bk in b]))
    if spec.sys_jumps:
        dissipators.append((0.5 * np.eye(len(spec.sys_jumps)), [np.kron(i_e, l) for l in spec.sys_jumps]))
    L_s = _system_liouvillian(hs, spec.sys_jumps)

    rhoE0 = gibbs_state(alg, spec.H, spec.beta) if spec.dynamics == "unitary" else vacuum_state(alg)

    g, M = spec.g, spec.M
    h_se = np.zeros((de * ds,) * 2, dtype=complex)
    for j in range(n):
        bj = sum((g[j, k] * b[k] + np.conj(g[j, k]) * b[k].conj().T for k in range(ne)),
                 np.zeros((de, de), complex))
        h_se += np.kron(bj, sz[j])
    h_total = np.kron(he, i_s) + np.kron(i_e, hs) + h_se

    fam = boson_superops(alg)
    E, S = [], []
    zero = np.zeros((de * de,) * 2, dtype=complex)
    for j in range(n):
        e_left = -1j * sum((g[j, k] * fam["b"][k] + np.conj(g[j, k]) * fam["bd"][k] for k in range(ne)), zero)
        e_right = 1j * sum((np.conj(g[j, k]) * fam["bt"][k] + g[j, k] * fam["btd"][k] for k in range(ne)), zero)
        if spec.dynamics == "quasi_lindblad":
            e_left = e_left + sum((2 * np.conj(M[j, k]) * fam["bt"][k] - M[j, k] * fam["b"][k]
                                   - np.conj(M[j, k]) * fam["bd"][k] for k in range(ne)), zero)
            e_right = e_right + sum((2 * M[j, k] * fam["b"][k] - np.conj(M[j, k]) * fam["bt"][k]
                                     - M[j, k] * fam["btd"][k] for k in range(ne)), zero)
        E += [e_left, e_right]
        S += [lmul(sz[j]), rmul(sz[j])]

    quasi = None
    if spec.dynamics == "quasi_lindblad":
        def quasi():
            out = np.zeros(((de * ds) ** 2,) * 2, dtype=complex)
            for j in range(n):
                mhat = np.kron(sum((2 * M[j, k] * b[k] for k in range(ne)), np.zeros((de, de), complex)), i_s)
                sj = np.kron(i_e, sz[j])
                x = sj @ mhat + mhat.conj().T @ sj
                out += sandwich(mhat, sj) + sandwich(sj, mhat.conj().T) - 0.5 * (lmul(x) + rmul(x))
            return out

    return AssembledModel(
        spec=spec, family="spin_boson", kind=spec.dynamics, env_alg=alg, dim_env=de, dim_sys=ds,
        L_e=L_e, L_s=L_s, E_alphas=E, S_alphas=S, env_families=fam, rhoE0=rhoE0, rhoS0=rhoS0,
        H_total=h_total, H_se=h_se, H_env=he, dissipators=dissipators, _quasi_builder=quasi,
    )


def assemble_fermion(spec: FermionImpuritySpec, rhoS0=None) -> AssembledModel:
    n, ne, n1 = spec.n, spec.n_env, spec.n_minus
    ds = 2**n
    rhoS0 = _default_rho_s(ds) if rhoS0 is None else validate_density(rhoS0, name="rho_S(0)")
    if rhoS0.shape != (ds, ds):
        raise SpecError(f"rho_S(0) must be {ds}x{ds}")

    env = fermionic_algebra(ne)
    sys = fermionic_algebra(n)
    de = env.dim
    i_e, i_s = np.eye(de, dtype=complex), np.eye(ds, dtype=complex)
    c, cd = env.annihilators, env.creators
    he = quadratic_hamiltonian(env, spec.H)
    hs = spec.impurity_hamiltonian()

    L_e = hamiltonian_liouv(he)
    dissipators = []
    if n1 and np.any(spec.Gamma_minus != 0):
        L_e = L_e + lindblad_dissipator(spec.Gamma_minus, c[:n1])
        dissipators.append((spec.Gamma_minus, [np.kron(ck, i_s) for ck in c[:n1]]))
    if ne - n1 and np.any(spec.Gamma_plus != 0):
        # gain term 2 G+_{ll'} (c_l^dag X c_l' - ...) is the dissipator with jumps c^dag and rates G+^T
        L_e = L_e + lindblad_dissipator(spec.Gamma_plus.T, cd[n1:])
        dissipators.append((spec.Gamma_plus.T, [np.kron(x, i_s) for x in cd[n1:]]))
    if spec.sys_jumps:
        dissipators.append((0.5 * np.eye(len(spec.sys_jumps)), [np.kron(i_e, l) for l in spec.sys_jumps]))
    L_s = _system_liouvillian(hs, spec.sys_jumps)

    if spec.dynamics == "unitary":
        rhoE0 = gibbs_state(env, spec.H, spec.beta)
    else:
        rhoE0 = filled_split_state(env, n1)

    ext = extend_fermion_ops(env, sys)
    nu, M = spec.nu, spec.M
    h_se = np.zeros((de * ds,) * 2, dtype=complex)
    for i in range(n):
        for k in range(ne):
            h_se += nu[i, k] * ext["ad"][i] @ ext["c"][k] + np.conj(nu[i, k]) * ext["cd"][k] @ ext["a"][i]
    h_total = np.kron(he, i_s) + np.kron(i_e, hs) + h_se

    fam = fermion_superops(env)
    sfam = system_fermion_superops(sys)
    zero = np.zeros((de * de,) * 2, dtype=complex)
    E, S = [], []
    for j in range(n):
        e = [
            -1j * sum((nu[j, k] * fam["c"][k] for k in range(ne)), zero),
            -1j * sum((np.conj(nu[j, k]) * fam["cd"][k] for k in range(ne)), zero),
            1j * sum((np.conj(nu[j, k]) * fam["ct"][k] for k in range(ne)), zero),
            1j * sum((nu[j, k] * fam["ctd"][k] for k in range(ne)), zero),
        ]
        if spec.dynamics == "quasi_lindblad":
            for k in range(n1):
                m, mc = M[j, k], np.conj(M[j, k])
                e[0] = e[0] - m * fam["c"][k]
                e[1] = e[1] - mc * fam["cd"][k] + 2 * mc * fam["ct"][k]
                e[2] = e[2] - mc * fam["ct"][k]
                e[3] = e[3] - m * fam["ctd"][k] - 2 * m * fam["c"][k]
            for l in range(n1, ne):
                m, mc = M[j, l], np.conj(M[j, l])
                e[0] = e[0] + m * fam["c"][l] + 2 * m * fam["ctd"][l]
                e[1] = e[1] + mc * fam["cd"][l]
                e[2] = e[2] + mc * fam["ct"][l] - 2 * mc * fam["cd"][l]
                e[3] = e[3] + m * fam["ctd"][l]
        E += e
        S += [sfam["ad"][j], sfam["a"][j], sfam["atd"][j], sfam["at"][j]]

    quasi = None
    if spec.dynamics == "quasi_lindblad":
        def quasi():
            a, ad, cc, ccd = ext["a"], ext["ad"], ext["c"], ext["cd"]
            out = np.zeros(((de * ds) ** 2,) * 2, dtype=complex)

            def term(coef, x, y):
                # coef * (2 x X y - {y x, X})
                yx = y @ x
                return coef * (2 * sandwich(x, y) - lmul(yx) - rmul(yx))

            for i in range(n):
                for k in range(n1):
                    out += term(np.conj(M[i, k]), a[i], ccd[k]) + term(M[i, k], cc[k], ad[i])
                for l in range(n1, ne):
                    out += term(M[i, l], ad[i], cc[l]) + term(np.conj(M[i, l]), ccd[l], a[i])
            return out

    return AssembledModel(
        spec=spec, family="fermion", kind=spec.dynamics, env_alg=env, dim_env=de, dim_sys=ds,
        L_e=L_e, L_s=L_s, E_alphas=E, S_alphas=S, env_families=fam, rhoE0=rhoE0, rhoS0=rhoS0,
        H_total=h_total, H_se=h_se, H_env=he, dissipators=dissipators, _quasi_builder=quasi,
    )
