import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_matrix(rng, n, m=None):
    m = n if m is None else m
    return rng.normal(size=(n, m)) + 1j * rng.normal(size=(n, m))


def random_density(rng, n):
    x = random_matrix(rng, n)
    rho = x @ x.conj().T
    return rho / np.trace(rho)


# --- small reference models shared across modules -------------------------

from liouville_cert.models import FermionImpuritySpec, SpinBosonSpec  # noqa: E402


def sb_spec(dynamics="lindblad", **kw):
    """One spin, one or two modes; small enough for dense superoperators."""
    base = dict(H=[[1.0]], g=[[0.4]], fock_cutoff=4)
    if dynamics == "lindblad":
        base.update(Gamma=[[1.0]])
    elif dynamics == "quasi_lindblad":
        base.update(Gamma=[[1.0]], M=[[0.05]])
    elif dynamics == "unitary":
        base.update(H=[[2.5]], g=[[0.2]], beta=2.0, fock_cutoff=6)
    base.update(kw)
    return SpinBosonSpec(dynamics=dynamics, **base)


def fermion_spec(dynamics="lindblad", **kw):
    """One impurity orbital, two environment modes (one empty channel, one filled)."""
    base = dict(h=[[0.2]], H=np.diag([0.5, -0.7]), nu=[[0.4, 0.3]], n_minus=1)
    if dynamics in ("lindblad", "quasi_lindblad"):
        base.update(Gamma_minus=[[0.6]], Gamma_plus=[[0.4]])
    if dynamics == "quasi_lindblad":
        base.update(M=[[0.05, -0.04]])
    if dynamics == "unitary":
        base.update(beta=1.5, n_minus=None)
    base.update(kw)
    return FermionImpuritySpec(dynamics=dynamics, **base)


DYNAMICS = ("unitary", "lindblad", "quasi_lindblad")


# --- acceptance reporting: one PASS/FAIL line per criterion ----------------

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed):
        return
    n, title = marker.args
    entry = _CRITERIA.setdefault(n, {"title": title, "ok": True, "count": 0})
    entry["count"] += 1
    entry["ok"] &= rep.passed


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        status = "PASS" if e["ok"] else "FAIL"
        terminalreporter.write_line(f"criterion {n:>2}: {status}  {e['title']} ({e['count']} checks)")
