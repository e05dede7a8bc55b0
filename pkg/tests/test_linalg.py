import numpy as np
import pytest
from conftest import random_density, random_matrix
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from liouville_cert.linalg import (
    DimensionError,
    as_matrix,
    expm,
    is_hermitian,
    kron,
    op_norm,
    partial_trace_env,
    trace_norm,
    unvec,
    validate_density,
    vec,
)

finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


def complex_arrays(shape):
    return st.builds(lambda re, im: re + 1j * im, arrays(float, shape, elements=finite),
                     arrays(float, shape, elements=finite))


class TestKron:
    def test_identity_factor_gives_block_diagonal(self, rng):
        A = random_matrix(rng, 3)
        out = kron(np.eye(2), A)
        np.testing.assert_array_equal(out[:3, :3], A)
        np.testing.assert_array_equal(out[3:, 3:], A)
        np.testing.assert_array_equal(out[:3, 3:], 0)

    def test_scalar_identity(self, rng):
        A = random_matrix(rng, 3, 2)
        np.testing.assert_array_equal(kron(A, np.eye(1)), A)

    def test_mixed_product(self, rng):
        A, B, C, D = (random_matrix(rng, 2) for _ in range(4))
        np.testing.assert_allclose(kron(A, B) @ kron(C, D), kron(A @ C, B @ D), atol=1e-12)

    def test_block_structure(self, rng):
        a, b = random_matrix(rng, 2, 3), random_matrix(rng, 2)
        out = kron(a, b)
        assert out.shape == (4, 6)
        np.testing.assert_allclose(out[2:4, 4:6], a[1, 2] * b)


class TestExpm:
    def test_zero(self):
        np.testing.assert_array_equal(expm(np.zeros((3, 3))), np.eye(3))

    def test_diagonal_phase(self):
        np.testing.assert_allclose(expm(np.diag([1j * np.pi, -1j * np.pi])), -np.eye(2), atol=1e-14)

    def test_nilpotent(self):
        np.testing.assert_allclose(expm([[0, 1], [0, 0]]), [[1, 1], [0, 1]], atol=1e-15)

    def test_rejects_rectangular(self):
        with pytest.raises(DimensionError):
            expm(np.zeros((2, 3)))

    def test_matches_eigen_route_for_normal_input(self, rng):
        x = random_matrix(rng, 5)
        h = 3 * (x + x.conj().T) / np.linalg.norm(x)
        w, v = np.linalg.eigh(h)
        ref = (v * np.exp(1j * w)) @ v.conj().T
        np.testing.assert_allclose(expm(1j * h), ref, rtol=1e-12, atol=1e-12)

    @given(complex_arrays((4, 4)))
    def test_inverse_property(self, a):
        a = a * min(1.0, 5.0 / max(op_norm(a), 1e-300))
        np.testing.assert_allclose(expm(a) @ expm(-a), np.eye(4), atol=1e-10)


class TestNorms:
    @pytest.mark.parametrize("mat, expected", [
        (np.eye(3), 3.0),
        (np.diag([1.0, -1.0]), 2.0),
        (np.array([[0, 1], [0, 0]]), 1.0),
    ])
    def test_trace_norm_values(self, mat, expected):
        assert trace_norm(mat) == pytest.approx(expected, abs=1e-14)

    @pytest.mark.parametrize("mat, expected", [
        (np.diag([1.0, -1.0]), 1.0),
        (np.diag([3, -5j]), 5.0),
    ])
    def test_op_norm_values(self, mat, expected):
        assert op_norm(mat) == pytest.approx(expected, abs=1e-14)

    def test_op_norm_below_trace_norm(self, rng):
        for _ in range(10):
            A = random_matrix(rng, 4)
            assert op_norm(A) <= trace_norm(A) + 1e-12

    @given(complex_arrays((3, 3)), complex_arrays((3, 3)), st.floats(-4, 4))
    def test_trace_norm_is_a_norm(self, a, b, s):
        assert trace_norm(a + b) <= trace_norm(a) + trace_norm(b) + 1e-9
        assert trace_norm(s * a) == pytest.approx(abs(s) * trace_norm(a), rel=1e-9, abs=1e-9)


class TestPartialTrace:
    def test_product_state(self, rng):
        re, rs = random_density(rng, 3), random_density(rng, 2)
        np.testing.assert_allclose(partial_trace_env(2.5 * np.kron(re, rs), 3, 2), 2.5 * rs, atol=1e-14)

    def test_bell_state(self):
        phi = np.array([1, 0, 0, 1]) / np.sqrt(2)
        np.testing.assert_allclose(partial_trace_env(np.outer(phi, phi), 2, 2), np.eye(2) / 2, atol=1e-15)

    def test_trace_preserved(self, rng):
        x = random_matrix(rng, 12)
        # elementwise oracle: sum over the system-diagonal entries
        ref = sum(x[i, i] for i in range(12))
        assert np.trace(partial_trace_env(x, 4, 3)) == pytest.approx(ref, abs=1e-12)

    def test_explicit_sum_oracle(self, rng):
        x = random_matrix(rng, 6)
        ref = sum(np.kron(np.eye(3)[e:e + 1], np.eye(2)) @ x @ np.kron(np.eye(3)[e:e + 1], np.eye(2)).T
                  for e in range(3))
        np.testing.assert_allclose(partial_trace_env(x, 3, 2), ref, atol=1e-13)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            partial_trace_env(np.eye(5), 2, 2)

    @given(complex_arrays((6, 6)))
    def test_hermitian_in_hermitian_out(self, x):
        h = x + x.conj().T
        assert is_hermitian(partial_trace_env(h, 2, 3), 1e-12)


class TestVectorization:
    def test_column_stacking(self):
        np.testing.assert_array_equal(vec([[1, 2], [3, 4]]), [1, 3, 2, 4])

    def test_roundtrip(self, rng):
        x = random_matrix(rng, 4)
        np.testing.assert_array_equal(unvec(vec(x)), x)

    def test_sandwich_identity(self, rng):
        for _ in range(5):
            A, X, B = (random_matrix(rng, 3) for _ in range(3))
            np.testing.assert_allclose(np.kron(B.T, A) @ vec(X), vec(A @ X @ B), atol=1e-12)

    def test_size_mismatch(self):
        with pytest.raises(DimensionError):
            unvec(np.ones(5))

    @given(complex_arrays((3, 3)))
    def test_bijection(self, x):
        np.testing.assert_array_equal(unvec(vec(x)), x)
        np.testing.assert_array_equal(vec(unvec(vec(x))), vec(x))


class TestValidation:
    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            as_matrix([[np.nan]])

    @pytest.mark.parametrize("bad", [
        np.array([[0.5, 0.1], [0.0, 0.5]]),   # not Hermitian
        np.diag([0.7, 0.7]),                       # trace 1.4
        np.diag([1.2, -0.2]),                      # negative eigenvalue
    ])
    def test_density_rejections(self, bad):
        with pytest.raises(ValueError):
            validate_density(bad)

    def test_density_accepts(self, rng):
        validate_density(random_density(rng, 4))
