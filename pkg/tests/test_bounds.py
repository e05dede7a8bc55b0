import json

import numpy as np
import pytest
from conftest import fermion_spec, sb_spec
from hypothesis import given
from hypothesis import strategies as st

from liouville_cert.bcf import (
    BcfClosedForm,
    BcfTerm,
    bcf_spin_boson,
    hyb_fermion,
    super_bcf,
)
from liouville_cert.bounds import (
    UncertifiablePairingError,
    certify,
    compute_eps,
    gronwall_bound,
    improved_bound,
    observable_bound,
    quadrature_margin,
    quasi_triangle_bound,
    shortcut_eps_fermion,
    shortcut_eps_spin_boson,
    two_variable_eps,
)
from liouville_cert.linalg import DimensionError
from liouville_cert.models import SpinBosonSpec, assemble
from liouville_cert.serialize import read_csv


def _lindblad(gamma, omega=1.0, g=1.0):
    return bcf_spin_boson(SpinBosonSpec(H=[[omega]], g=[[g]], Gamma=[[gamma]]))


def _analytic_l1(ga, gb, T):
    # integral of |exp(-ga t) - exp(-gb t)| on [0, T] for ga < gb
    return (1 - np.exp(-ga * T)) / ga - (1 - np.exp(-gb * T)) / gb


class TestComputeEps:
    def test_identical(self):
        C = super_bcf(_lindblad(1.0))
        e = compute_eps(C, C, 5.0)
        assert e.eps == 0 and e.eps1 == 0
        # ||C(0)||_2 = 2|g|^2 for the 2x2 spin-boson pattern, times N = 2
        assert e.M == pytest.approx(4.0) and e.M1 > 0 and e.N == 2

    def test_scalar_lindblad_pair(self):
        T = 6.0
        e = compute_eps(super_bcf(_lindblad(1.0)), super_bcf(_lindblad(1.2)), T, G=4096)
        assert e.eps1 == pytest.approx(4 * _analytic_l1(1.0, 1.2, T), rel=1e-6)

    def test_matches_spin_boson_shortcut_for_one_spin(self):
        a, b = _lindblad(1.0, g=0.4), _lindblad(1.05, g=0.4)
        e = compute_eps(super_bcf(a), super_bcf(b), 10.0, 512)
        s_eps, s_eps1 = shortcut_eps_spin_boson(a, b, 1, 10.0, 512)
        assert e.eps1 == pytest.approx(s_eps1, rel=1e-12)
        assert e.eps == pytest.approx(s_eps, rel=1e-12)

    @pytest.mark.parametrize("s", [0.5, 3.0])
    def test_homogeneous(self, s):
        a, b = _lindblad(1.0), _lindblad(1.3, omega=1.2)
        e = compute_eps(super_bcf(a), super_bcf(b), 4.0)
        es = compute_eps(super_bcf(a.scaled(s)), super_bcf(b.scaled(s)), 4.0)
        assert es.eps == pytest.approx(s * e.eps) and es.eps1 == pytest.approx(s * e.eps1)

    def test_quadrature_delta_shrinks(self):
        a, b = super_bcf(_lindblad(1.0, omega=3.0)), super_bcf(_lindblad(1.5, omega=2.0))
        deltas = [compute_eps(a, b, 5.0, G).quadrature_delta for G in (64, 128, 256)]
        assert deltas[0] > deltas[1] > deltas[2]

    def test_errors(self):
        sb, f = super_bcf(_lindblad(1.0)), super_bcf(hyb_fermion(fermion_spec()))
        with pytest.raises(DimensionError):
            compute_eps(sb, f, 1.0)
        with pytest.raises(ValueError, match="grid"):
            compute_eps(sb, sb, 1.0, G=32)

    def test_two_variable_sandwich(self):
        # sup_s [F(s) + F(T - s)] lies between the single-variable L1 norm and twice it
        a, b = super_bcf(_lindblad(1.0)), super_bcf(_lindblad(1.4, omega=0.7))
        e = compute_eps(a, b, 5.0)
        eps1_2, M1_2 = two_variable_eps(a, b, 5.0)
        assert e.eps1 - 1e-12 <= eps1_2 <= 2 * e.eps1 + 1e-12
        assert e.M1 - 1e-12 <= M1_2 <= 2 * e.M1 + 1e-12


class TestShortcuts:
    def test_identical(self):
        c = _lindblad(1.0)
        assert shortcut_eps_spin_boson(c, c, 1, 3.0) == (0.0, 0.0)
        p = hyb_fermion(fermion_spec())
        assert shortcut_eps_fermion(p, p, 1, 3.0) == (0.0, 0.0)

    def test_exponential_difference(self):
        delta, T = 0.2, 7.0

        def expo(w):
            return BcfClosedForm((BcfTerm(np.array([[w]]), np.array([[-1.0 + 0j]]), np.array([[1.0]])),))

        _, eps1 = shortcut_eps_spin_boson(expo(1.0 + delta), expo(1.0), 1, T, G=2048)
        assert eps1 == pytest.approx(4 * delta * (1 - np.exp(-T)), rel=1e-6)

    def test_fermion_greater_only(self):
        a = hyb_fermion(fermion_spec(Gamma_minus=[[0.6]]))
        b = hyb_fermion(fermion_spec(Gamma_minus=[[0.9]]))
        np.testing.assert_array_equal(a.lesser(np.linspace(0, 1, 5)), b.lesser(np.linspace(0, 1, 5)))
        T = 5.0
        _, eps1 = shortcut_eps_fermion(a, b, 1, T, G=4096)
        assert eps1 == pytest.approx(4 * 0.16 * _analytic_l1(0.6, 0.9, T), rel=1e-6)

    def test_fermion_shortcut_below_generic(self):
        a, b = fermion_spec(), fermion_spec(nu=[[0.45, 0.3]])
        pa, pb = hyb_fermion(a), hyb_fermion(b)
        generic = compute_eps(super_bcf(pa), super_bcf(pb), 10.0)
        _, eps1 = shortcut_eps_fermion(pa, pb, 1, 10.0)
        assert 0 < eps1 <= generic.eps1

    def test_shape_mismatch(self):
        two = bcf_spin_boson(SpinBosonSpec(H=np.eye(2), g=np.eye(2), Gamma=np.eye(2)))
        with pytest.raises(DimensionError):
            shortcut_eps_spin_boson(_lindblad(1.0), two, 1, 1.0)


class TestFormulas:
    T = np.linspace(0, 5, 21)

    @pytest.mark.parametrize("variant", ["l1", "linf", "l1_two_variable"])
    def test_zero_epsilon(self, variant):
        np.testing.assert_array_equal(gronwall_bound(self.T, 0.0, 1.0, variant), 0)

    @pytest.mark.parametrize("variant", ["l1", "linf"])
    def test_improved_zero(self, variant):
        np.testing.assert_array_equal(improved_bound(self.T, 0.0, variant), 0)

    def test_closed_forms(self):
        assert gronwall_bound(2.0, 0.1, 0.5) == pytest.approx(0.2 * np.e)
        assert gronwall_bound(2.0, 0.1, 0.5, "linf") == pytest.approx(0.2 * np.e)
        assert gronwall_bound(2.0, 0.1, 0.5, "l1_two_variable") == pytest.approx(0.1 * np.exp(0.5))
        assert improved_bound(2.0, 0.1) == pytest.approx(np.expm1(0.2))
        assert improved_bound(2.0, 0.1, "linf") == pytest.approx(np.expm1(0.2))

    def test_small_time(self):
        t = 1e-6
        assert improved_bound(t, 0.3) == pytest.approx(0.3 * t, rel=1e-5)

    def test_rejections(self):
        with pytest.raises(ValueError):
            improved_bound(1.0, -0.1)
        with pytest.raises(ValueError):
            gronwall_bound(1.0, 0.1, 1.0, "l2")
        with pytest.raises(ValueError):
            observable_bound([0.1], -1.0)

    def test_observable_bound(self):
        series = improved_bound(self.T, 0.2)
        np.testing.assert_array_equal(observable_bound(series, 0.0), 0)
        np.testing.assert_array_equal(observable_bound(series, 1.0), series)

    def test_triangle(self):
        t = self.T
        np.testing.assert_array_equal(quasi_triangle_bound(0.1, 0.0, t), improved_bound(t, 0.1))
        np.testing.assert_array_equal(quasi_triangle_bound(0.1, 0.3, t), quasi_triangle_bound(0.3, 0.1, t))
        # e^x - 1 + e^y - 1 <= e^(x+y) - 1
        assert np.all(improved_bound(t, 0.1) + improved_bound(t, 0.3) <= quasi_triangle_bound(0.1, 0.3, t) + 1e-15)

    def test_margin(self):
        assert quadrature_margin(0.0, 1.0, 3.0) == 0.0
        assert quadrature_margin(1e-4, 0.1, 2.0) == pytest.approx(2e-4 * np.exp(0.2))


@given(st.floats(1e-4, 2.0), st.floats(0.0, 3.0), st.floats(1e-3, 6.0), st.floats(1e-3, 6.0))
def test_bounds_increase_in_time(eps, extra, t1, dt):
    t2 = t1 + dt
    m = eps + extra
    for variant in ("l1", "linf", "l1_two_variable"):
        assert gronwall_bound(t2, eps, m, variant) > gronwall_bound(t1, eps, m, variant)
    for variant in ("l1", "linf"):
        assert improved_bound(t2, eps, variant) > improved_bound(t1, eps, variant)


@given(st.floats(1e-4, 2.0), st.floats(0.0, 3.0), st.floats(0.0, 8.0))
def test_improved_below_gronwall(eps1, extra, t):
    assert improved_bound(t, eps1) <= gronwall_bound(t, eps1, eps1 + extra) * (1 + 1e-12) + 1e-300


class TestCertify:
    def test_identical_models(self):
        m = assemble(sb_spec())
        r = certify(m, m, 3.0, steps=12, check_truncation=False)
        assert r.certified and not r.empirical_gap.any()
        assert r.eps_l1 == 0 and r.route == "direct"

    def test_lindblad_pair(self):
        a = assemble(sb_spec(fock_cutoff=6))
        b = assemble(sb_spec(Gamma=[[1.05]], fock_cutoff=6))
        r = certify(a, b, 5.0, steps=25)
        assert r.certified
        assert r.violations(strict=True).size == 0
        assert np.all(r.empirical_gap <= r.bound_min() + r.quadrature_margin)
        assert 0 < r.truncation_allowance < 1e-3 * r.empirical_gap.max()
        for series in (r.bound_improved_l1, r.bound_gronwall_l1, r.bound_improved_linf, r.bound_gronwall_linf):
            assert series[0] == 0 and np.all(np.diff(series) >= 0)

    def test_quasi_against_lindblad_is_direct(self):
        a = assemble(sb_spec("quasi_lindblad", fock_cutoff=6))
        b = assemble(sb_spec(fock_cutoff=6))
        r = certify(a, b, 4.0, steps=20)
        assert r.route == "direct" and r.certified

    def test_two_quasi_need_reference(self):
        a = assemble(sb_spec("quasi_lindblad", M=[[0.02]]))
        b = assemble(sb_spec("quasi_lindblad", M=[[-0.03]]))
        with pytest.raises(UncertifiablePairingError, match="reference"):
            certify(a, b, 2.0, steps=4)
        with pytest.raises(UncertifiablePairingError):
            certify(a, b, 2.0, steps=4, reference=a)
        r = certify(a, b, 2.0, steps=8, reference=assemble(sb_spec()))
        assert r.route == "triangle" and r.certified and r.notes

    def test_state_mismatch(self):
        a = assemble(sb_spec())
        b = assemble(sb_spec(), np.diag([0.0, 1.0]))
        with pytest.raises(ValueError, match="same system state"):
            certify(a, b, 1.0, steps=2)
        with pytest.raises(DimensionError):
            certify(a, assemble(fermion_spec()), 1.0, steps=2)

    def test_shortcut_reported(self):
        a, b = assemble(fermion_spec()), assemble(fermion_spec(nu=[[0.45, 0.3]]))
        r = certify(a, b, 4.0, steps=8)
        assert 0 < r.shortcut["eps1"] <= r.eps_l1
        assert r.truncation_allowance == 0.0

    def test_serialization(self, tmp_path):
        a, b = assemble(sb_spec()), assemble(sb_spec(Gamma=[[1.1]]))
        r = certify(a, b, 2.0, steps=4, check_truncation=False)
        header, data = read_csv(r.to_csv(tmp_path / "b.csv"))
        assert header == ["t", "gap", "improved_l1", "gronwall_l1", "improved_linf", "gronwall_linf"]
        np.testing.assert_array_equal(data[:, 1], r.empirical_gap)
        payload = json.loads(r.to_json(tmp_path / "b.json").read_text())
        assert {"eps", "eps1", "M", "M1", "N", "T", "certified", "quadrature_margin"} <= set(payload)
        assert payload["eps1"] == r.eps_l1
