import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.exceptions import NotFittedError

from liouville_cert.bcf import bcf_spin_boson, sample
from liouville_cert.fit import (
    ExpModes,
    PseudomodeFitter,
    PseudomodeParams,
    RankError,
    fit_and_certify,
    modes_to_pseudomode,
    pencil_fit,
    refine_ls,
    trapezoid_weights,
    varpro_jacobian,
    varpro_residual,
)
from liouville_cert.models import SpinBosonSpec

POLES3 = np.array([-0.3 - 1j, -0.8 + 0.5j, -1.5 - 2j])
RES3 = np.array([0.5, 0.2 - 0.1j, 0.3j])
T3, G3 = 10.0, 400


def three_term():
    t = np.linspace(0, T3, G3 + 1)
    return t, ExpModes(POLES3, RES3)(t)


def _theta(poles):
    return np.concatenate([poles.real, poles.imag])


class TestExpModes:
    def test_evaluation(self):
        m = ExpModes([-1.0, -2j], [2.0, 1.0])
        assert m(0.5) == pytest.approx(2 * np.exp(-0.5) + np.exp(-1j))
        assert m.K == 2 and m.is_stable()

    def test_instability_detected(self):
        assert not ExpModes([0.1], [1.0]).is_stable()

    def test_shape_check(self):
        with pytest.raises(ValueError):
            ExpModes([-1.0, -2.0], [1.0])


class TestPencil:
    def test_single_exponential_exact(self):
        spec = SpinBosonSpec(H=[[1.3]], g=[[0.6]], Gamma=[[0.4]])
        m = pencil_fit(sample(bcf_spin_boson(spec), 8.0, 200), 1)
        assert m.poles[0] == pytest.approx(-0.4 - 1.3j, abs=1e-10)
        assert m.residues[0] == pytest.approx(0.36, abs=1e-10)

    def test_three_terms(self):
        t, y = three_term()
        m = pencil_fit((t, y), 3)
        assert np.abs(m(t) - y).max() < 1e-8
        np.testing.assert_allclose(np.sort_complex(m.poles), np.sort_complex(POLES3), atol=1e-8)

    def test_zero_target(self):
        t = np.linspace(0, 1, 21)
        m = pencil_fit((t, np.zeros_like(t)), 2)
        assert not m.residues.any() and "zero_target" in m.flags

    def test_rank_error_reports_achievable(self):
        t = np.linspace(0, 5, 101)
        with pytest.raises(RankError) as info:
            pencil_fit((t, np.exp(-t)), 3)
        assert info.value.achievable == 1 and info.value.requested == 3

    def test_growing_mode_reflected(self):
        t = np.linspace(0, 2, 81)
        m = pencil_fit((t, np.exp((0.3 - 1j) * t)), 1)
        assert m.is_stable() and "reflected_unstable_pole" in m.flags

    def test_needs_enough_samples(self):
        t = np.linspace(0, 1, 8)
        with pytest.raises(ValueError, match="panels"):
            pencil_fit((t, np.exp(-t)), 2)

    def test_non_uniform_rejected(self):
        t = np.array([0.0, 0.1, 0.3, 0.35, 0.5, 0.6, 0.9, 1.0, 1.2])
        with pytest.raises(ValueError, match="uniform"):
            pencil_fit((t, np.exp(-t)), 1)


class TestVarPro:
    def test_jacobian_matches_finite_differences(self):
        t, y = three_term()
        theta = _theta(POLES3 + np.array([0.02, -0.03 + 0.01j, 0.05j]))
        w = trapezoid_weights(G3, t[1] - t[0])
        J = varpro_jacobian(theta, t, y, w)
        h = 1e-6
        fd = np.stack([(varpro_residual(theta + h * e, t, y, w) - varpro_residual(theta - h * e, t, y, w)) / (2 * h)
                       for e in np.eye(theta.size)], axis=1)
        assert np.linalg.norm(J - fd) / np.linalg.norm(fd) < 1e-6

    def test_exact_modes_fixed_point(self):
        t, y = three_term()
        m = refine_ls(ExpModes(POLES3, RES3), (t, y))
        np.testing.assert_allclose(m.poles, POLES3, atol=1e-12)
        assert np.abs(m(t) - y).max() < 1e-12

    def test_recovers_from_perturbation(self):
        t, y = three_term()
        rng = np.random.default_rng(5)
        start = POLES3 + 1e-3 * (rng.normal(size=3) + 1j * rng.normal(size=3))
        m = refine_ls(ExpModes(start, RES3), (t, y))
        assert np.abs(m(t) - y).max() < 1e-9

    def test_never_increases_residual(self):
        t, y = three_term()
        w = trapezoid_weights(G3, t[1] - t[0])
        start = POLES3 + np.array([0.2, 0.1j, -0.1])
        m = refine_ls(ExpModes(start, RES3), (t, y))
        before = np.linalg.norm(varpro_residual(_theta(start), t, y, w))
        after = np.linalg.norm(varpro_residual(_theta(m.poles), t, y, w))
        assert after <= before

    def test_stability_enforced(self):
        t = np.linspace(0, 4, 161)
        y = np.exp(-2j * t)  # undamped target pulls the pole onto the imaginary axis
        m = refine_ls(ExpModes([-0.3 - 1.5j], [1.0]), (t, y))
        assert m.is_stable() and abs(m.poles[0].real) < 1e-8

    def test_trapezoid_weights(self):
        w = trapezoid_weights(4, 0.5)
        np.testing.assert_allclose(w, [0.25, 0.5, 0.5, 0.5, 0.25])


class TestParameterMap:
    def test_plain_lindblad(self):
        p = modes_to_pseudomode(ExpModes([-1.0], [1.0]))
        assert (p.omega[0], p.gamma[0], p.g[0], p.M[0]) == (0.0, 1.0, 1.0, 0.0)
        assert p.is_lindblad

    def test_negative_residue(self):
        p = modes_to_pseudomode(ExpModes([-1.0 - 2j], [-1.0]))
        assert p.g[0] == pytest.approx(0.0, abs=1e-16) and abs(p.M[0]) == pytest.approx(1.0)
        assert not p.is_lindblad
        assert p.omega[0] == 2.0

    def test_round_trip_through_model(self):
        modes = ExpModes(POLES3, RES3)
        spec = modes_to_pseudomode(modes).to_spec()
        assert spec.dynamics == "quasi_lindblad"
        t = np.linspace(0, 5, 11)
        np.testing.assert_allclose(bcf_spin_boson(spec)(t)[:, 0, 0], modes(t), atol=1e-12)

    def test_unstable_rejected(self):
        with pytest.raises(ValueError):
            modes_to_pseudomode(ExpModes([0.5], [1.0]))

    def test_empty_spec_rejected(self):
        with pytest.raises(ValueError):
            PseudomodeParams(*(np.zeros(0),) * 4).to_spec()


@given(st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False),
       st.floats(0, 5), st.floats(-5, 5))
def test_residue_parameter_round_trip(w, gamma, omega):
    p = modes_to_pseudomode(ExpModes([-gamma - 1j * omega], [w]))
    assert abs((p.g[0] - 1j * p.M[0]) ** 2 - w) <= 1e-12 * max(1.0, abs(w))
    assert -1j * p.omega[0] - p.gamma[0] == pytest.approx(-gamma - 1j * omega, abs=1e-12)
    s = p.g[0] - 1j * p.M[0]
    assert s.real >= 0


class TestFitAndCertify:
    def test_self_fit(self):
        c = bcf_spin_boson(SpinBosonSpec(H=[[1.0]], g=[[0.4]], Gamma=[[1.0]]))
        r = fit_and_certify(c, 1, T=10.0)
        assert r.residual_linf < 1e-10 and r.eps1 < 1e-8
        assert r.params.is_lindblad
        np.testing.assert_allclose(r.bound, np.expm1(r.eps1 * r.grid))
        assert r.eps1 == pytest.approx(4 * r.residual_l1)

    def test_three_term_target(self):
        t, y = three_term()
        target = ExpModes(POLES3, RES3)
        spec = modes_to_pseudomode(target).to_spec()
        r = fit_and_certify(bcf_spin_boson(spec), 3, T=T3, G=G3)
        assert r.residual_linf < 1e-6
        assert any("contractive" in n for n in r.notes)

    def test_empty_fit(self):
        c = bcf_spin_boson(SpinBosonSpec(H=[[1.0]], g=[[0.4]], Gamma=[[1.0]]))
        r = fit_and_certify(c, 0, T=6.0, G=600)
        exact = 0.16 * (1 - np.exp(-6.0))
        assert r.eps1 == pytest.approx(4 * exact, rel=1e-5)
        assert r.modes.K == 0 and r.notes

    def test_unitary_sweep_monotone(self):
        spec = SpinBosonSpec(H=np.diag([1.0, 2.0]), g=[[0.3, 0.2]], dynamics="unitary", beta=2.0)
        eps = [fit_and_certify(bcf_spin_boson(spec), K, T=10.0).eps1 for K in (1, 2, 3, 4)]
        assert all(b < a for a, b in zip(eps, eps[1:]))
        assert all(e >= 0 for e in eps)

    def test_sampled_target(self):
        c = bcf_spin_boson(SpinBosonSpec(H=[[0.5]], g=[[0.3]], Gamma=[[0.2]]))
        r = fit_and_certify(sample(c, 5.0, 100), 1)
        assert r.horizon == 5.0 and r.residual_linf < 1e-10

    def test_validations(self):
        two = bcf_spin_boson(SpinBosonSpec(H=np.eye(2), g=np.eye(2), Gamma=np.eye(2)))
        with pytest.raises(ValueError, match="scalar"):
            fit_and_certify(two, 1, T=1.0)
        with pytest.raises(ValueError, match="horizon"):
            fit_and_certify(bcf_spin_boson(SpinBosonSpec(H=[[1.0]], g=[[1.0]], Gamma=[[1.0]])), 1)
        with pytest.raises(TypeError):
            fit_and_certify(np.ones(5), 1)

    def test_json(self, tmp_path):
        c = bcf_spin_boson(SpinBosonSpec(H=[[1.0]], g=[[0.4]], Gamma=[[1.0]]))
        payload = json.loads(fit_and_certify(c, 1, T=4.0).to_json(tmp_path / "f.json").read_text())
        keys = {"K", "poles", "residues", "omega", "gamma", "g", "M", "residual_l1", "residual_linf", "eps1", "horizon"}
        assert keys <= set(payload)
        assert payload["poles"][0] == pytest.approx([-1.0, -1.0], abs=1e-10)


class TestEstimator:
    def test_fit_predict_score(self):
        t, y = three_term()
        est = PseudomodeFitter(n_modes=3).fit(t, y)
        assert est.score(t, y) > 1 - 1e-12
        np.testing.assert_allclose(est.predict(t), y, atol=1e-8)
        assert est.params_.K == 3

    def test_params_interface(self):
        est = PseudomodeFitter(n_modes=4)
        assert est.get_params() == {"n_modes": 4, "max_iter": 200}
        assert est.set_params(n_modes=1).n_modes == 1

    def test_unfitted(self):
        with pytest.raises(NotFittedError):
            PseudomodeFitter().predict([0.0, 1.0])


def test_forced_lindblad_projection():
    p = modes_to_pseudomode(ExpModes([-0.1 - 1j, -0.2 - 2j], [0.3 + 0.01j, -0.2]), force_lindblad=True)
    assert p.is_lindblad
    np.testing.assert_allclose(p.g, [np.sqrt(0.3), 0.0])
