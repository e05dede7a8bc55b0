"""Bath correlation functions: closed forms, superoperator assembly, numerical traces, Wick checks."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .linalg import expm, vec
from .models import (
    AssembledModel,
    FermionImpuritySpec,
    SpecError,
    SpinBosonSpec,
    check_stationarity,
)

__all__ = [
    "BcfTerm",
    "BcfClosedForm",
    "HybridizationPair",
    "SuperBcf",
    "SampledBcf",
    "StationarityError",
    "bcf_spin_boson",
    "hyb_fermion",
    "model_bcf",
    "super_bcf",
    "bcf_numeric",
    "pair_corr_table",
    "npoint_bcf",
    "pairings",
    "permutation_sign",
    "wick_check",
    "sample",
]

STATIONARITY_TOL = 1e-8


class StationarityError(ValueError):
    """The environment initial state is not stationary under ``L_e``."""


@dataclass(frozen=True)
class BcfTerm:
    """One ``A exp(Z t) B`` contribution, optionally entered as its elementwise conjugate."""

    A: np.ndarray
    Z: np.ndarray
    B: np.ndarray
    conjugated: bool = False

    def __call__(self, t: np.ndarray) -> np.ndarray:
        Z = self.Z
        if np.count_nonzero(Z - np.diag(np.diag(Z))) == 0:
            phase = np.exp(np.multiply.outer(t, np.diag(Z)))  # (..., q)
            out = np.einsum("pq,...q,qr->...pr", self.A, phase, self.B)
        else:
            out = np.stack([self.A @ expm(Z * float(s)) @ self.B for s in np.ravel(t)])
            out = out.reshape(np.shape(t) + out.shape[-2:])
        return out.conj() if self.conjugated else out


@dataclass(frozen=True)
class BcfClosedForm:
    """``c(t) = sum_j A_j exp(Z_j t) B_j`` (conjugated terms enter as ``(.)^*``), for ``t >= 0``."""

    terms: tuple

    @property
    def shape(self) -> tuple:
        if not self.terms:
            return (0, 0)
        return (self.terms[0].A.shape[0], self.terms[0].B.shape[1])

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise ValueError("closed-form correlation functions are evaluated for t >= 0 only")
        out = np.zeros(t.shape + self.shape, dtype=complex)
        for term in self.terms:
            out = out + term(t)
        return out

    def scaled(self, s: float) -> "BcfClosedForm":
        return BcfClosedForm(tuple(BcfTerm(s * x.A, x.Z, x.B, x.conjugated) for x in self.terms))


@dataclass(frozen=True)
class HybridizationPair:
    greater: BcfClosedForm
    lesser: BcfClosedForm

    @property
    def shape(self):
        return self.greater.shape


class SuperBcf:
    """Index-space correlation matrix ``C_{alpha alpha'}(t)`` of size ``N x N``."""

    def __init__(self, func, N: int, source=None):
        self._func = func
        self.N = N
        self.source = source

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = self._func(t)
        return out

    def entry(self, a: int, b: int, t):
        return self(t)[..., a, b]


@dataclass
class SampledBcf:
    """Uniform-grid samples ``c(t_k)``, ``t_k = k T / G``."""

    t: np.ndarray
    samples: np.ndarray  # (G+1, p, q)
    labels: tuple = field(default=("c",))

    @property
    def T(self) -> float:
        return float(self.t[-1])

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    def scalar(self) -> np.ndarray:
        if self.samples.shape[1:] != (1, 1):
            raise ValueError("samples are not scalar")
        return self.samples[:, 0, 0]


# --------------------------------------------------------------------------- closed forms


def bcf_spin_boson(spec: SpinBosonSpec) -> BcfClosedForm:
    """The ``n x n`` spin-boson correlation function ``c(t)``."""
    g = spec.g
    if spec.dynamics == "unitary":
        evals, V = np.linalg.eigh(spec.H)
        if evals.min() <= 0:
            raise SpecError("unitary bosonic correlation needs positive-definite H")
        occ = 1.0 / np.expm1(spec.beta * evals)
        Z = np.diag(-1j * evals)
        A = g @ V
        Vh_gh = V.conj().T @ g.conj().T
        return BcfClosedForm((
            BcfTerm(A, Z, np.diag(occ + 1.0) @ Vh_gh),
            BcfTerm(A, Z, np.diag(occ) @ Vh_gh, conjugated=True),
        ))
    Z = -1j * spec.H - spec.Gamma
    left = g - 1j * spec.M
    right = g.conj().T - 1j * spec.M.conj().T
    return BcfClosedForm((BcfTerm(left, Z, right),))


def hyb_fermion(spec: FermionImpuritySpec) -> HybridizationPair:
    """Greater and lesser hybridization functions ``Delta^>(t)``, ``Delta^<(t)``."""
    nu = spec.nu
    if spec.dynamics == "unitary":
        evals, V = np.linalg.eigh(spec.H)
        Z = np.diag(-1j * evals)
        A = nu @ V
        Vh = V.conj().T @ nu.conj().T
        empty = expit(spec.beta * evals)
        filled = expit(-spec.beta * evals)
        return HybridizationPair(
            BcfClosedForm((BcfTerm(A, Z, np.diag(empty) @ Vh),)),
            BcfClosedForm((BcfTerm(A, Z, np.diag(filled) @ Vh),)),
        )
    n1 = spec.n_minus
    left = nu - 1j * spec.M
    right = nu.conj().T - 1j * spec.M.conj().T
    H, n = spec.H, spec.n

    def block(sl: slice, gamma):
        if sl.start == sl.stop:
            zero = np.zeros((n, 1), complex)
            return BcfClosedForm((BcfTerm(zero, np.zeros((1, 1), complex), zero.T),))
        return BcfClosedForm((BcfTerm(left[:, sl], -1j * H[sl, sl] - gamma, right[sl, :]),))

    return HybridizationPair(block(slice(0, n1), spec.Gamma_minus),
                             block(slice(n1, spec.n_env), spec.Gamma_plus))


def model_bcf(spec):
    if isinstance(spec, SpinBosonSpec):
        return bcf_spin_boson(spec)
    if isinstance(spec, FermionImpuritySpec):
        return hyb_fermion(spec)
    raise TypeError(f"unknown model spec {type(spec).__name__}")


def super_bcf(model_bcf) -> SuperBcf:
    """Index-space correlation matrix from ``c(t)`` (spin-boson) or ``Delta^{>,<}`` (fermion).

    Spin-boson, with ``(2i, 2i+1)`` the left/right ``sigma_z`` slots of spin ``i``::

        C[2i, 2j] = -c_ij   C[2i, 2j+1] = c_ij^*   C[2i+1, 2j] = c_ij   C[2i+1, 2j+1] = -c_ij^*

    Fermion, with slots ``4i .. 4i+3`` paired with ``a^dag, a, a~^dag, a~``::

        C[4i, 4j+1] = C[4i+3, 4j+1] = -G_ij      C[4i, 4j+2] = C[4i+3, 4j+2] = -L_ij
        C[4i+1, 4j+3] = -C[4i+2, 4j+3] = G_ij^*  C[4i+2, 4j] = -C[4i+1, 4j] = L_ij^*

    where ``G = Delta^>`` and ``L = Delta^<``.
    """
    if isinstance(model_bcf, BcfClosedForm):
        n = model_bcf.shape[0]

        def func(t):
            c = model_bcf(t)
            out = np.zeros(np.shape(t) + (2 * n, 2 * n), dtype=complex)
            out[..., 0::2, 0::2] = -c
            out[..., 0::2, 1::2] = c.conj()
            out[..., 1::2, 0::2] = c
            out[..., 1::2, 1::2] = -c.conj()
            return out

        return SuperBcf(func, 2 * n, model_bcf)

    if isinstance(model_bcf, HybridizationPair):
        n = model_bcf.shape[0]

        def func(t):
            G = model_bcf.greater(t)
            L = model_bcf.lesser(t)
            out = np.zeros(np.shape(t) + (4 * n, 4 * n), dtype=complex)
            out[..., 0::4, 1::4] = -G
            out[..., 3::4, 1::4] = -G
            out[..., 0::4, 2::4] = -L
            out[..., 3::4, 2::4] = -L
            out[..., 1::4, 3::4] = G.conj()
            out[..., 2::4, 3::4] = -G.conj()
            out[..., 2::4, 0::4] = L.conj()
            out[..., 1::4, 0::4] = -L.conj()
            return out

        return SuperBcf(func, 4 * n, model_bcf)
    raise TypeError("expected a BcfClosedForm or HybridizationPair")


# --------------------------------------------------------------------------- numerical traces


def _require_stationary(model: AssembledModel, tol: float = STATIONARITY_TOL):
    res = check_stationarity(model.L_e, model.rhoE0)
    if res > tol:
        raise StationarityError(f"environment initial state is not stationary (residual {res:.2e})")


def _trace_row(dim: int) -> np.ndarray:
    return vec(np.eye(dim)).conj()


def bcf_numeric(model: AssembledModel, t) -> np.ndarray:
    """``tr(E_a exp(L_e t) E_b rho_E)`` for all index pairs; vectorized over ``t``."""
    _require_stationary(model)
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t_arr < 0):
        raise ValueError("t must be nonnegative")
    row = _trace_row(model.dim_env)
    R = np.stack([row @ e for e in model.E_alphas])  # (N, D^2)
    V = np.stack([e @ vec(model.rhoE0) for e in model.E_alphas], axis=1)  # (D^2, N)
    out = np.empty((t_arr.size, len(R), len(R)), dtype=complex)
    for k, w in _propagated(model, V, t_arr):
        out[k] = R @ w
    return out[0] if np.ndim(t) == 0 else out


def _propagated(model, V, t_arr):
    """Yield ``(k, exp(L_e t_k) V)``, stepping through the times in increasing order."""
    order = np.argsort(t_arr, kind="stable")
    current, w = 0.0, V
    for k in order:
        step = float(t_arr[k]) - current
        if step > 0:
            w = model.env_evolve(step, w)
            current = float(t_arr[k])
        yield k, w


def pair_corr_table(model: AssembledModel, kinds: tuple, t: float) -> np.ndarray:
    """``tr(O_k exp(L_e t) O'_l rho_E)`` for two superoperator families (e.g. ``("b", "bd")``)."""
    _require_stationary(model)
    first, second = (model.env_families[k] for k in kinds)
    row = _trace_row(model.dim_env)
    right = np.stack([o @ vec(model.rhoE0) for o in second], axis=1)
    left = np.stack([row @ o for o in first])
    return left @ model.env_evolve(float(t), right)


def npoint_bcf(model: AssembledModel, alphas, times) -> complex:
    """``tr(E_a1 exp(L_e (t1-t2)) E_a2 ... E_an rho_E)`` for strictly descending times."""
    times = [float(s) for s in times]
    if len(times) != len(alphas):
        raise ValueError("alphas and times must have the same length")
    if any(b >= a for a, b in zip(times, times[1:])) or (times and times[-1] < 0):
        raise ValueError("times must be strictly descending and nonnegative")
    _require_stationary(model)
    v = vec(model.rhoE0)
    for k in range(len(alphas) - 1, -1, -1):
        v = model.E_alphas[alphas[k]] @ v
        if k:
            v = model.env_evolve(times[k - 1] - times[k], v[:, None])[:, 0]
    return complex(_trace_row(model.dim_env) @ v)


def pairings(items):
    """All perfect pairings of ``items`` (first element paired recursively)."""
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for i, partner in enumerate(rest):
        for tail in pairings(rest[:i] + rest[i + 1:]):
            yield [(first, partner)] + tail


def permutation_sign(perm) -> int:
    perm = list(perm)
    inversions = sum(1 for i, j in itertools.combinations(range(len(perm)), 2) if perm[i] > perm[j])
    return -1 if inversions % 2 else 1


def wick_check(model: AssembledModel, alphas, times, sign: int | None = None, two_point=None):
    """Compare an n-point correlation with its pairing expansion.

    Returns ``(lhs, rhs, |lhs - rhs|)``.  Unordered times are handled by
    sorting (ties broken by slot index) with the statistics sign for the
    permutation; two-point factors with ``t_p < t_q`` use
    ``C_ab(t_p, t_q) = sign * C_ba(t_q, t_p)``.
    """
    sign = model.sign if sign is None else sign
    alphas = list(alphas)
    times = np.asarray(times, dtype=float)
    n = len(alphas)
    order = sorted(range(n), key=lambda k: (-times[k], k))
    perm_sign = permutation_sign(order) if sign < 0 else 1
    if n % 2:
        lhs = perm_sign * npoint_bcf(model, [alphas[k] for k in order], times[order])
        return lhs, 0.0, abs(lhs)
    lhs = perm_sign * npoint_bcf(model, [alphas[k] for k in order], times[order])

    cache = {}

    def c2(p, q):
        a, b, tp, tq = alphas[p], alphas[q], times[p], times[q]
        if tp >= tq:
            key = round(tp - tq, 15)
            if key not in cache:
                cache[key] = bcf_numeric(model, tp - tq) if two_point is None else two_point(tp - tq)
            return cache[key][a, b]
        key = round(tq - tp, 15)
        if key not in cache:
            cache[key] = bcf_numeric(model, tq - tp) if two_point is None else two_point(tq - tp)
        return sign * cache[key][b, a]

    rhs = 0.0 + 0.0j
    for pairing in pairings(range(n)):
        flat = [k for pair in pairing for k in pair]
        s = permutation_sign(flat) if sign < 0 else 1
        prod = 1.0 + 0.0j
        for p, q in pairing:
            prod *= c2(p, q)
        rhs += s * prod
    return lhs, rhs, abs(lhs - rhs)


def sample(source, T: float, G: int) -> SampledBcf:
    """Evaluate a closed form (or any callable of ``t``) on ``G+1`` equispaced points of ``[0, T]``."""
    if not T > 0:
        raise ValueError("T must be positive")
    if G < 2:
        raise ValueError("G must be at least 2")
    t = np.linspace(0.0, T, G + 1)
    if isinstance(source, HybridizationPair):
        g, l = source.greater(t), source.lesser(t)
        return SampledBcf(t, np.concatenate([g, l], axis=2), labels=("greater", "lesser"))
    vals = np.asarray(source(t), dtype=complex)
    if vals.ndim == 1:
        vals = vals[:, None, None]
    return SampledBcf(t, vals)
