"""Exact joint propagation, reduced dynamics, and the truncated resummed Dyson series."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import DimensionError, expm, partial_trace_env, trace_norm, unvec, vec
from .models import (
    AssembledModel,
    FockLeakageError,
    SpinBosonSpec,
    assemble,
    top_level_population,
)

__all__ = [
    "Trajectory",
    "InstabilityError",
    "DysonResult",
    "MAX_LIOUVILLE_DIM",
    "propagate",
    "propagate_adaptive",
    "expect",
    "gap_curve",
    "truncation_error",
    "dyson_propagate",
    "dyson_for_model",
]

# Superoperator matrices are dense; beyond this side length the budget is refused.
MAX_LIOUVILLE_DIM = 4096
MAX_FOCK_CUTOFF = 12
INSTABILITY_LIMIT = 1e6


class InstabilityError(RuntimeError):
    """A non-contractive trajectory blew up."""


@dataclass
class Trajectory:
    times: np.ndarray
    rho_s: np.ndarray  # (steps+1, ds, ds)
    observables: dict = field(default_factory=dict)
    rho_final: np.ndarray | None = None
    trace_full: np.ndarray | None = None
    kind: str = "lindblad"

    def __len__(self):
        return len(self.times)


def _env_marginal(rho, dim_env, dim_sys):
    return np.einsum("aibi->ab", rho.reshape(dim_env, dim_sys, dim_env, dim_sys))


def propagate(model: AssembledModel, T: float, steps: int, observables: dict | None = None) -> Trajectory:
    """Sample ``rho_S(t)`` on ``steps + 1`` equispaced times of ``[0, T]``.

    One exact step propagator is built and reused, so the grid only sets the
    output resolution.  Models without any dissipator step with
    ``U rho U^dag``, all others with ``expm(L dt)`` on the vectorized state.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    if T < 0:
        raise ValueError("T must be nonnegative")
    D = model.dim
    dt = T / steps
    times = np.linspace(0.0, T, steps + 1)
    rho = model.rho0.copy()
    # without dissipators (and without a D_SE term) the generator is -i[H_total, .]
    hamiltonian_only = model.kind != "quasi_lindblad" and not model.dissipators
    if hamiltonian_only:
        U = expm(-1j * model.H_total * dt)
        Ud = U.conj().T
        step = lambda r: U @ r @ Ud  # noqa: E731
    else:
        if D * D > MAX_LIOUVILLE_DIM:
            raise DimensionError(f"Liouvillian side {D * D} exceeds the dense budget {MAX_LIOUVILLE_DIM}")
        K = expm(model.L_total * dt)
        step = lambda r: unvec(K @ vec(r), D)  # noqa: E731

    rho_s = np.empty((steps + 1, model.dim_sys, model.dim_sys), dtype=complex)
    trace_full = np.empty(steps + 1)
    rho_s[0] = partial_trace_env(rho, model.dim_env, model.dim_sys)
    trace_full[0] = np.trace(rho).real
    for k in range(1, steps + 1):
        rho = step(rho)
        if not model.contractive and np.linalg.norm(rho) > INSTABILITY_LIMIT:
            raise InstabilityError(f"state norm exceeded {INSTABILITY_LIMIT:g} at t={times[k]:.4g}")
        rho_s[k] = partial_trace_env(rho, model.dim_env, model.dim_sys)
        trace_full[k] = np.trace(rho).real
    traj = Trajectory(times, rho_s, rho_final=rho, trace_full=trace_full, kind=model.kind)
    for name, op in (observables or {}).items():
        traj.observables[name] = expect(op, traj)
    return traj


def propagate_adaptive(spec, T: float, steps: int, rhoS0=None, observables=None,
                       max_cutoff: int = MAX_FOCK_CUTOFF, tol: float = 1e-6):
    """Propagate, raising the Fock cutoff by 2 until the top level stays below ``tol``.

    The top-level population is checked for ``rho_E(0)`` and for the
    environment marginal of ``rho(T)``.  Returns ``(trajectory, model)``.
    """
    if not isinstance(spec, SpinBosonSpec):
        model = assemble(spec, rhoS0)
        return propagate(model, T, steps, observables), model
    d = spec.fock_cutoff
    while True:
        trial = spec.with_cutoff(d)
        try:
            model = assemble(trial, rhoS0)
            traj = propagate(model, T, steps, observables)
            leak = top_level_population(_env_marginal(traj.rho_final, model.dim_env, model.dim_sys),
                                        model.env_alg)
            if leak < tol:
                return traj, model
            reason = f"final-state population {leak:.2e}"
        except FockLeakageError as exc:
            reason = str(exc)
        if d + 2 > max_cutoff:
            raise FockLeakageError(f"Fock cutoff {d} insufficient ({reason}) and the maximum is {max_cutoff}")
        d += 2


def truncation_error(model: AssembledModel, T: float, steps: int, traj: Trajectory | None = None):
    """``max_t ||rho_S^(d)(t) - rho_S^(d+2)(t)||_tr``: the measured effect of the Fock cutoff.

    Returns 0 for models without bosons and ``None`` when the finer
    cutoff does not fit the dense budget.
    """
    if not isinstance(model.spec, SpinBosonSpec):
        return 0.0
    traj = propagate(model, T, steps) if traj is None else traj
    try:
        finer = assemble(model.spec.with_cutoff(model.spec.fock_cutoff + 2), model.rhoS0)
        fine = propagate(finer, T, steps)
    except DimensionError:
        return None
    return float(gap_curve(traj, fine).max())


def expect(o_s, traj: Trajectory) -> np.ndarray:
    o_s = np.asarray(o_s, dtype=complex)
    if o_s.shape != traj.rho_s.shape[1:]:
        raise DimensionError("observable does not match the system dimension")
    return np.einsum("ij,tji->t", o_s, traj.rho_s)


def gap_curve(traj_a: Trajectory, traj_b: Trajectory) -> np.ndarray:
    """Trace-norm distance of the reduced states along a shared grid."""
    if traj_a.rho_s.shape != traj_b.rho_s.shape or not np.allclose(traj_a.times, traj_b.times, rtol=0, atol=1e-12):
        raise ValueError("trajectories live on different grids or system dimensions")
    return np.array([trace_norm(a - b) for a, b in zip(traj_a.rho_s, traj_b.rho_s)])


# --------------------------------------------------------------------------- Dyson series


class _Semigroup:
    """Batched ``exp(L t)`` for many times, via an eigendecomposition when it is well conditioned."""

    def __init__(self, L):
        self.L = np.asarray(L, dtype=complex)
        lam, V = np.linalg.eig(self.L)
        self.diagonal = np.linalg.cond(V) < 1e8
        if self.diagonal:
            self.lam, self.V, self.Vinv = lam, V, np.linalg.inv(V)

    def apply(self, t, X):
        """``X[m, ..., :] -> exp(L t_m) X[m, ..., :]``."""
        t = np.asarray(t, dtype=float)
        if self.diagonal:
            Y = X @ self.Vinv.T
            Y = Y * np.exp(np.multiply.outer(t, self.lam)).reshape(t.shape + (1,) * (X.ndim - 2) + self.lam.shape)
            return Y @ self.V.T
        out = np.empty_like(X)
        for m, s in enumerate(t):
            out[m] = X[m] @ expm(self.L * s).T
        return out


@dataclass
class DysonResult:
    rho: np.ndarray
    order: int
    terms: list
    quad_error: float
    grids: tuple


def _triangle_nodes(T, G):
    """Trapezoid nodes for ``0 <= t_lo <= t_hi <= T`` via ``t_lo = u t_hi``."""
    t = np.linspace(0.0, T, G + 1)
    u = np.linspace(0.0, 1.0, G + 1)
    wt = np.full(G + 1, T / G)
    wt[[0, -1]] *= 0.5
    wu = np.full(G + 1, 1.0 / G)
    wu[[0, -1]] *= 0.5
    hi, uu = np.meshgrid(t, u, indexing="ij")
    w = np.outer(wt, wu) * hi
    return hi.ravel(), (uu * hi).ravel(), w.ravel()


_LETTERS = "abcdefgh"


def _order_term(semi, S, C, v0, T, m, G, chunk=200_000):
    """``(1/m!) int_{Omega_m} prod C * exp(L_s T) T+(prod S(t_j)) rho_S(0)``, trapezoid on ``G``."""
    N, d2 = len(S), v0.size
    if m == 0:
        return semi.apply(np.array([T]), v0[None, :])[0]
    hi, lo, w = _triangle_nodes(T, G)
    c_pair = C(hi - lo)  # (P, N, N)
    P = hi.size
    idx = np.array(np.meshgrid(*[np.arange(P)] * m, indexing="ij")).reshape(m, -1)
    total = np.zeros(d2, dtype=complex)
    S = np.asarray(S)
    per_chunk = max(1, chunk // (N ** (2 * m) * d2))
    for start in range(0, idx.shape[1], per_chunk):
        sel = idx[:, start:start + per_chunk]
        times = np.empty((sel.shape[1], 2 * m))
        weight = np.ones(sel.shape[1])
        for i in range(m):
            times[:, 2 * i], times[:, 2 * i + 1] = hi[sel[i]], lo[sel[i]]
            weight = weight * w[sel[i]]
        # descending time order; the stable sort breaks ties by slot index
        orders = np.argsort(-times, axis=1, kind="stable")
        for pattern in np.unique(orders, axis=0):
            mask = np.all(orders == pattern, axis=1)
            tm = times[mask]
            X = np.broadcast_to(v0, (tm.shape[0], d2)).copy()
            applied = []
            prev = np.zeros(tm.shape[0])
            for slot in pattern[::-1]:
                X = semi.apply(tm[:, slot] - prev, X)
                X = np.einsum("aij,m...j->m...ai", S, X)
                applied.append(slot)
                prev = tm[:, slot]
            X = semi.apply(T - prev, X)
            operands = [X]
            subs = ["m" + "".join(_LETTERS[s] for s in applied) + "z"]
            for i in range(m):
                operands.append(c_pair[sel[i][mask]])
                subs.append("m" + _LETTERS[2 * i] + _LETTERS[2 * i + 1])
            operands.append(weight[mask])
            subs.append("m")
            total += np.einsum(",".join(subs) + "->z", *operands)
    return total / math.factorial(m)


def dyson_propagate(L_s, S_alphas, C, rhoS0, T: float, order: int, grid=None,
                    statistics: str = "bosonic") -> DysonResult:
    """Truncated resummed Dyson series for ``rho_S(T)`` up to ``order`` correlation pairs.

    Each order-``m`` integral uses the composite trapezoid rule on the pair
    triangles (``G = 48`` points per axis at ``m = 1``, ``16`` at ``m = 2`` by
    default) followed by one Richardson step against ``G / 2``.
    """
    if statistics != "bosonic":
        raise NotImplementedError("the Dyson propagator is implemented for bosonic environments only")
    if not 0 <= order <= 2:
        raise ValueError("order must be 0, 1 or 2")
    if T < 0:
        raise ValueError("T must be nonnegative")
    rhoS0 = np.asarray(rhoS0, dtype=complex)
    v0 = vec(rhoS0)
    semi = _Semigroup(L_s)
    defaults = {1: 48, 2: 16}
    grids, terms, err = [], [], 0.0
    rho = np.zeros_like(v0)
    for m in range(order + 1):
        if m == 0:
            term = _order_term(semi, S_alphas, C, v0, T, 0, 0)
            grids.append(0)
        else:
            G = (grid if isinstance(grid, int) else (grid or {}).get(m, defaults[m])) if grid else defaults[m]
            G -= G % 2
            fine = _order_term(semi, S_alphas, C, v0, T, m, G)
            coarse = _order_term(semi, S_alphas, C, v0, T, m, G // 2)
            term = fine + (fine - coarse) / 3.0
            err += trace_norm(unvec((fine - coarse) / 3.0))
            grids.append(G)
        terms.append(unvec(term))
        rho = rho + term
    return DysonResult(unvec(rho), order, terms, err, tuple(grids))


def dyson_for_model(model: AssembledModel, C, T: float, order: int, grid=None) -> DysonResult:
    if model.family != "spin_boson":
        raise NotImplementedError("the Dyson propagator is implemented for spin-boson models only")
    return dyson_propagate(model.L_s, model.S_alphas, C, model.rhoS0, T, order, grid)
