"""Correlation-function distances and the resulting trace-norm error bounds.

Every bound here controls ``||rho_S(t) - rho_S'(t)||_tr`` for two open systems
whose environments are summarized by stationary correlation matrices
``C(t)`` and ``C'(t)``.  Norms of matrix-valued functions are taken pointwise
in the matrix 2-norm and then in ``L^1`` or ``L^inf`` over ``[0, T]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bcf import BcfClosedForm, HybridizationPair, SuperBcf, model_bcf, super_bcf
from .dynamics import gap_curve, propagate, truncation_error
from .linalg import DimensionError
from .models import AssembledModel
from .serialize import write_csv, write_json

__all__ = [
    "EpsilonSet",
    "BoundReport",
    "UncertifiablePairingError",
    "compute_eps",
    "two_variable_eps",
    "shortcut_eps_spin_boson",
    "shortcut_eps_fermion",
    "gronwall_bound",
    "improved_bound",
    "observable_bound",
    "quasi_triangle_bound",
    "quadrature_margin",
    "certify",
    "MIN_GRID",
    "ROUNDOFF_FLOOR",
]

MIN_GRID = 64
# floating-point noise tolerated in a measured trace-norm gap
ROUNDOFF_FLOOR = 1e-12


class UncertifiablePairingError(ValueError):
    """Neither model is contractive and no contractive reference was supplied."""


def _trapezoid(y, dx):
    return float(dx * (np.sum(y) - 0.5 * (y[0] + y[-1])))


def _pointwise_norm(vals: np.ndarray) -> np.ndarray:
    """Matrix 2-norm of each ``vals[k]``."""
    if vals.shape[-1] == 0:
        return np.zeros(vals.shape[0])
    return np.linalg.norm(vals, ord=2, axis=(-2, -1))


@dataclass(frozen=True)
class EpsilonSet:
    """``eps`` (L-inf) and ``eps1`` (L1) of the difference, ``M``/``M1`` of the larger function.

    ``eps1_coarse`` is the L1 distance on the half-resolution grid; its gap to
    ``eps1`` is what the quadrature margin is built from.
    """

    eps: float
    eps1: float
    M: float
    M1: float
    N: int
    T: float
    G: int
    eps1_coarse: float

    @property
    def quadrature_delta(self) -> float:
        return abs(self.eps1 - self.eps1_coarse)


def _norm_samples(c_a, c_b, T, G):
    t = np.linspace(0.0, T, G + 1)
    A, B = np.asarray(c_a(t)), np.asarray(c_b(t))
    return t, _pointwise_norm(A - B), _pointwise_norm(A), _pointwise_norm(B)


def compute_eps(c_a: SuperBcf, c_b: SuperBcf, T: float, G: int = 256) -> EpsilonSet:
    """The four constants of the single-variable bounds from two correlation matrices.

    ``G`` is the number of trapezoid panels; the coarse companion uses ``G/2``
    panels on the same points.
    """
    if c_a.N != c_b.N:
        raise DimensionError(f"correlation matrices have N = {c_a.N} and {c_b.N}")
    if G < MIN_GRID:
        raise ValueError(f"grid must have at least {MIN_GRID} panels")
    if not T > 0:
        raise ValueError("T must be positive")
    G += G % 2
    N = c_a.N
    _, d, na, nb = _norm_samples(c_a, c_b, T, G)
    dt = T / G
    return EpsilonSet(
        eps=N * float(d.max()),
        eps1=N * _trapezoid(d, dt),
        M=N * float(max(na.max(), nb.max())),
        M1=N * max(_trapezoid(na, dt), _trapezoid(nb, dt)),
        N=N, T=float(T), G=G,
        eps1_coarse=N * _trapezoid(d[::2], 2 * dt),
    )


def _cumulative(y, dt):
    out = np.zeros_like(y)
    out[1:] = np.cumsum(0.5 * dt * (y[1:] + y[:-1]))
    return out


def two_variable_eps(c_a: SuperBcf, c_b: SuperBcf, T: float, G: int = 256) -> tuple[float, float]:
    """``(eps1, M1)`` in the two-variable convention, ``N sup_s int_0^T ||C(t, s)|| dt``.

    For a stationary correlation the swapped argument only transposes (and
    possibly negates) the matrix, so ``int_0^T ||C(t, s)|| dt`` is
    ``F(s) + F(T - s)`` with ``F`` the running integral of ``||C||``.
    """
    if c_a.N != c_b.N:
        raise DimensionError(f"correlation matrices have N = {c_a.N} and {c_b.N}")
    G += G % 2
    _, d, na, nb = _norm_samples(c_a, c_b, T, G)
    dt = T / G

    def sup_sym(y):
        F = _cumulative(y, dt)
        return float(np.max(F + F[::-1]))

    N = c_a.N
    return N * sup_sym(d), N * max(sup_sym(na), sup_sym(nb))


def shortcut_eps_spin_boson(c_a: BcfClosedForm, c_b: BcfClosedForm, n: int, T: float,
                            G: int = 256) -> tuple[float, float]:
    """``(4n ||c - c'||_inf, 4n ||c - c'||_1)`` directly from the ``n x n`` model correlation."""
    if c_a.shape != c_b.shape:
        raise DimensionError(f"correlation shapes {c_a.shape} and {c_b.shape} differ")
    t = np.linspace(0.0, T, G + 1)
    d = _pointwise_norm(c_a(t) - c_b(t))
    return 4 * n * float(d.max()), 4 * n * _trapezoid(d, T / G)


def shortcut_eps_fermion(pair_a: HybridizationPair, pair_b: HybridizationPair, n: int, T: float,
                         G: int = 256) -> tuple[float, float]:
    """Greater and lesser distances added, times ``4n``."""
    if pair_a.shape != pair_b.shape:
        raise DimensionError(f"hybridization shapes {pair_a.shape} and {pair_b.shape} differ")
    t = np.linspace(0.0, T, G + 1)
    dg = _pointwise_norm(pair_a.greater(t) - pair_b.greater(t))
    dl = _pointwise_norm(pair_a.lesser(t) - pair_b.lesser(t))
    dt = T / G
    return (4 * n * float(dg.max() + dl.max()),
            4 * n * (_trapezoid(dg, dt) + _trapezoid(dl, dt)))


# --------------------------------------------------------------------------- bound formulas


def gronwall_bound(t, eps, m, variant: str = "l1"):
    """Grönwall-type growth estimate.

    ``"l1"``: ``eps1 t exp(M1 t)``; ``"linf"``: ``eps t^2/2 exp(M t^2/2)``;
    ``"l1_two_variable"``: ``eps1 (t/2) exp(M1 t/2)`` for the two-variable constants.
    """
    t = np.asarray(t, dtype=float)
    if eps < 0 or m < 0:
        raise ValueError("constants must be nonnegative")
    if variant == "l1":
        return eps * t * np.exp(m * t)
    if variant == "linf":
        return eps * t**2 / 2 * np.exp(m * t**2 / 2)
    if variant == "l1_two_variable":
        return eps * t / 2 * np.exp(m * t / 2)
    raise ValueError(f"unknown variant {variant!r}")


def improved_bound(t, eps, variant: str = "l1"):
    """``exp(eps1 t) - 1`` (L1) or ``exp(eps t^2/2) - 1`` (L-inf)."""
    t = np.asarray(t, dtype=float)
    if eps < 0:
        raise ValueError("epsilon must be nonnegative")
    if variant == "l1":
        return np.expm1(eps * t)
    if variant == "linf":
        return np.expm1(eps * t**2 / 2)
    raise ValueError(f"unknown variant {variant!r}")


def observable_bound(bound_series, o_norm: float):
    if o_norm < 0:
        raise ValueError("operator norm must be nonnegative")
    return o_norm * np.asarray(bound_series, dtype=float)


def quasi_triangle_bound(eps_to_ref_a: float, eps_to_ref_b: float, t, variant: str = "l1"):
    """Improved bound with the two distances to a shared contractive reference added."""
    return improved_bound(t, eps_to_ref_a + eps_to_ref_b, variant)


def quadrature_margin(delta_eps1: float, eps1: float, T: float) -> float:
    """Slack that absorbs the error of the ``eps1`` quadrature in the certified inequality."""
    return float(delta_eps1 * T * np.exp(eps1 * T))


# --------------------------------------------------------------------------- certification


@dataclass
class BoundReport:
    T: float
    grid: np.ndarray
    eps_linf: float
    eps_l1: float
    m_linf: float
    m_l1: float
    N: int
    bound_improved_l1: np.ndarray
    bound_improved_linf: np.ndarray
    bound_gronwall_l1: np.ndarray
    bound_gronwall_linf: np.ndarray
    bound_gronwall_l1_two_variable: np.ndarray
    quadrature_margin: float
    empirical_gap: np.ndarray | None = None
    truncation_allowance: float = 0.0
    roundoff_floor: float = ROUNDOFF_FLOOR
    certified: bool = False
    route: str = "direct"
    shortcut: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def bound_min(self) -> np.ndarray:
        return np.minimum.reduce([self.bound_improved_l1, self.bound_improved_linf,
                                  self.bound_gronwall_l1, self.bound_gronwall_linf])

    @property
    def allowance(self) -> float:
        """Quadrature margin plus the discretization slack of the measured gap."""
        return self.quadrature_margin + self.truncation_allowance + self.roundoff_floor

    def violations(self, strict: bool = False) -> np.ndarray:
        """Grid indices where the gap exceeds the improved L1 bound plus slack.

        ``strict`` admits only the quadrature margin.
        """
        if self.empirical_gap is None:
            return np.array([], dtype=int)
        slack = self.quadrature_margin if strict else self.allowance
        return np.flatnonzero(self.empirical_gap > self.bound_improved_l1 + slack)

    def summary(self) -> dict:
        return {
            "eps": self.eps_linf, "eps1": self.eps_l1, "M": self.m_linf, "M1": self.m_l1,
            "N": self.N, "T": self.T, "certified": bool(self.certified),
            "quadrature_margin": self.quadrature_margin, "route": self.route,
            "truncation_allowance": self.truncation_allowance, "roundoff_floor": self.roundoff_floor,
            "shortcut": self.shortcut, "notes": list(self.notes),
        }

    def to_csv(self, path):
        gap = self.empirical_gap if self.empirical_gap is not None else np.full(self.grid.shape, np.nan)
        return write_csv(path,
                         ["t", "gap", "improved_l1", "gronwall_l1", "improved_linf", "gronwall_linf"],
                         [self.grid, gap, self.bound_improved_l1, self.bound_gronwall_l1,
                          self.bound_improved_linf, self.bound_gronwall_linf])

    def to_json(self, path):
        return write_json(path, self.summary())


def _shared_initial_state(a: AssembledModel, b: AssembledModel):
    if a.dim_sys != b.dim_sys:
        raise DimensionError(f"system dimensions differ ({a.dim_sys} vs {b.dim_sys})")
    if not np.allclose(a.rhoS0, b.rhoS0, atol=1e-12):
        raise ValueError("models must start from the same system state")
    if a.N != b.N:
        raise DimensionError(f"coupling counts differ ({a.N} vs {b.N})")


def _shortcut(a: AssembledModel, b: AssembledModel, T, G) -> dict:
    ba, bb = model_bcf(a.spec), model_bcf(b.spec)
    n = a.spec.n
    if isinstance(ba, HybridizationPair):
        e, e1 = shortcut_eps_fermion(ba, bb, n, T, G)
    else:
        e, e1 = shortcut_eps_spin_boson(ba, bb, n, T, G)
    return {"eps": e, "eps1": e1}


def certify(model_a: AssembledModel, model_b: AssembledModel, T: float, steps: int = 100,
            G: int = 256, reference: AssembledModel | None = None, *,
            trajectories=None, check_truncation: bool = True) -> BoundReport:
    """Propagate two models, measure their reduced-state gap, and test it against the bounds.

    At least one model must be contractive.  Two non-contractive models
    are only compared through ``reference``: each is measured against it
    and the summed distance enters the improved bound.  ``trajectories``
    may carry precomputed ``(traj_a, traj_b)`` on the ``steps`` grid.

    The bounds concern untruncated environments.  With ``check_truncation``
    each bosonic model is re-run at cutoff ``d + 2`` and the observed change
    of ``rho_S`` is admitted as extra slack (skipped, with a note, when
    the finer run exceeds the dense budget).
    """
    _shared_initial_state(model_a, model_b)
    ca, cb = super_bcf(model_bcf(model_a.spec)), super_bcf(model_bcf(model_b.spec))
    direct = compute_eps(ca, cb, T, G)
    eps2_1, m2_1 = two_variable_eps(ca, cb, T, G)
    grid = np.linspace(0.0, T, steps + 1)
    notes = []

    if model_a.contractive or model_b.contractive:
        route = "direct"
        eps_l1, eps_linf, delta = direct.eps1, direct.eps, direct.quadrature_delta
    else:
        if reference is None:
            raise UncertifiablePairingError(
                "both models are non-contractive; supply a contractive reference "
                "(the bound then uses the sum of both distances to it)")
        if not reference.contractive:
            raise UncertifiablePairingError("the reference model must be contractive")
        _shared_initial_state(model_a, reference)
        cr = super_bcf(model_bcf(reference.spec))
        ea, eb = compute_eps(ca, cr, T, G), compute_eps(cb, cr, T, G)
        route = "triangle"
        eps_l1, eps_linf = ea.eps1 + eb.eps1, ea.eps + eb.eps
        delta = ea.quadrature_delta + eb.quadrature_delta
        notes.append(f"distances to reference: eps1 = {ea.eps1:.6g} and {eb.eps1:.6g}")

    margin = quadrature_margin(delta, eps_l1, T)
    if trajectories is None:
        traj_a, traj_b = propagate(model_a, T, steps), propagate(model_b, T, steps)
    else:
        traj_a, traj_b = trajectories
    gap = gap_curve(traj_a, traj_b)
    trunc = 0.0
    if check_truncation:
        for label, model, traj in (("a", model_a, traj_a), ("b", model_b, traj_b)):
            err = truncation_error(model, T, steps, traj)
            if err is None:
                notes.append(f"Fock truncation of model {label} not assessed (finer cutoff exceeds budget)")
            else:
                trunc += err

    report = BoundReport(
        T=float(T), grid=grid,
        eps_linf=eps_linf, eps_l1=eps_l1, m_linf=direct.M, m_l1=direct.M1, N=direct.N,
        bound_improved_l1=improved_bound(grid, eps_l1, "l1"),
        bound_improved_linf=improved_bound(grid, eps_linf, "linf"),
        bound_gronwall_l1=gronwall_bound(grid, direct.eps1, direct.M1, "l1"),
        bound_gronwall_linf=gronwall_bound(grid, direct.eps, direct.M, "linf"),
        bound_gronwall_l1_two_variable=gronwall_bound(grid, eps2_1, m2_1, "l1_two_variable"),
        quadrature_margin=margin, empirical_gap=gap, route=route, truncation_allowance=trunc,
        shortcut=_shortcut(model_a, model_b, T, G), notes=notes,
    )
    report.certified = bool(report.violations().size == 0)
    return report
