import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mbloc.errors import SingularSpectrumError
from mbloc.oscillator import OscillatorLattice, build_lattice_operator, thermal_phi
from mbloc.single_particle import (
    KINDS,
    EffectiveOperator,
    EnergyWindow,
    chebyshev_coefficients,
    chebyshev_matrix,
    correlator_matrix,
    decompose,
    eigenfunction_correlator,
    full_propagator,
    function_matrix,
    matrix_function,
    propagator_block,
    sup_t_dynamical,
)
from mbloc.xy_model import XYParams, build_effective


def random_symmetric(n, seed):
    a = np.random.default_rng(seed).standard_normal((n, n))
    return (a + a.T) / 2


def random_operators(count, seed=0):
    rng = np.random.default_rng(seed)
    ops = []
    for i in range(count):
        if i % 2:
            ops.append(build_effective(XYParams.random(int(rng.integers(2, 7)), rng)))
        else:
            L = int(rng.integers(1, 4))
            ops.append(build_lattice_operator(OscillatorLattice(1, L, rng.uniform(0.5, 3, 2 * L + 1))))
    return ops


class TestOperator:
    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError, match="symmetric"):
            EffectiveOperator(np.array([[0.0, 1.0], [0.0, 0.0]]))

    def test_site_index(self):
        h = build_effective(XYParams.constant(3))
        assert h.site_index[1] == slice(2, 4)
        assert h.distance(0, 2) == 2


class TestDecompose:
    def test_diag(self):
        s = decompose(np.diag([3.0, -3.0]))
        np.testing.assert_array_equal(s.eigenvalues, [-3, 3])
        np.testing.assert_allclose(np.abs(s.eigenvectors), [[0, 1], [1, 0]])

    def test_two_by_two(self):
        np.testing.assert_allclose(decompose(np.array([[0.0, -1], [-1, 0]])).eigenvalues, [-1, 1])

    def test_invariants(self):
        h = random_symmetric(50, 1)
        s = decompose(h)
        v, w = s.eigenvectors, s.eigenvalues
        assert np.linalg.norm(h @ v - v * w) <= 1e-9 * (1 + np.linalg.norm(h))
        assert np.linalg.norm(v.T @ v - np.eye(50)) <= 1e-10
        assert np.all(np.diff(w) >= 0)


class TestMatrixFunction:
    def test_identity_recovers_h(self):
        h = random_symmetric(8, 2)
        s = decompose(h)
        got = np.array([[matrix_function(s, lambda t: t, x, y) for y in range(8)] for x in range(8)])
        np.testing.assert_allclose(got, h, atol=1e-10)

    def test_scalar_cases(self):
        assert matrix_function(decompose(np.array([[1.0]])), lambda t: t ** -0.5, 0, 0, singular=True) == 1.0
        val = matrix_function(decompose(np.array([[4.0]])), thermal_phi(1.0), 0, 0, singular=True)
        assert val == pytest.approx(0.5 * np.tanh(2), abs=1e-12)

    def test_singular_names_eigenvalue(self):
        s = decompose(np.diag([0.0, 1.0]))
        with pytest.raises(SingularSpectrumError) as e:
            matrix_function(s, lambda t: t ** -0.5, 0, 0, singular=True)
        assert e.value.eigenvalue == 0.0

    def test_sqrt_squared(self):
        h = build_lattice_operator(OscillatorLattice(1, 4, np.linspace(.5, 2, 9))).entries
        r = function_matrix(decompose(h), np.sqrt)
        assert np.linalg.norm(r @ r - h) / np.linalg.norm(h) < 1e-8

    def test_blocks_rejected(self):
        s = decompose(build_effective(XYParams.constant(2)))
        with pytest.raises(ValueError):
            matrix_function(s, np.exp, 0, 0)

    def test_chebyshev_matches_eigen(self):
        h = build_lattice_operator(OscillatorLattice(1, 5, np.linspace(.2, 2, 11))).entries
        import mpmath
        c = chebyshev_coefficients(lambda t: mpmath.exp(-t), 0.0, 6.0, 60)
        np.testing.assert_allclose(chebyshev_matrix(h, c, 0.0, 6.0),
                                   function_matrix(decompose(h), lambda t: np.exp(-t)), atol=1e-14)


class TestPropagator:
    def test_t0(self):
        s = decompose(build_effective(XYParams.random(4, np.random.default_rng(3))))
        np.testing.assert_allclose(propagator_block(s, 0.0, 1, 2), np.zeros((2, 2)), atol=1e-12)
        np.testing.assert_allclose(propagator_block(s, 0.0, 1, 1), np.eye(2), atol=1e-12)

    def test_empty_window(self):
        s = decompose(build_effective(XYParams.random(4, np.random.default_rng(4))))
        w = EnergyWindow(100.0, 101.0)
        for t in (0.0, 1.0, 5.0):
            assert not np.any(propagator_block(s, t, 0, 0, w))

    def test_block_row_unitary(self):
        s = decompose(build_effective(XYParams.random(5, np.random.default_rng(5))))
        total = sum(np.linalg.norm(propagator_block(s, 1.7, 2, k)) ** 2 for k in range(5))
        assert total == pytest.approx(2.0, abs=1e-10)

    def test_group_law(self):
        s = decompose(build_effective(XYParams.random(5, np.random.default_rng(6))))
        np.testing.assert_allclose(full_propagator(s, 1.3) @ full_propagator(s, 0.4),
                                   full_propagator(s, 1.7), atol=1e-9)

    def test_scalar_sites(self):
        s = decompose(np.array([[0.0, -1.0], [-1.0, 0.0]]))
        assert propagator_block(s, np.pi / 2, 0, 1) == pytest.approx(1j)


class TestCorrelators:
    def test_scalar_diagonal_is_one(self):
        s = decompose(random_symmetric(10, 7))
        for x in range(10):
            assert eigenfunction_correlator(s, 0.0, x, x) == pytest.approx(1.0, abs=1e-12)
        assert correlator_matrix(s, 0.0).max() <= 1 + 1e-12

    def test_block_diagonal_is_two(self):
        # block amplitudes are Euclidean norms of 2-vectors, so the diagonal sums to 2
        s = decompose(build_effective(XYParams.random(4, np.random.default_rng(8))))
        assert eigenfunction_correlator(s, 0.0, 2, 2) == pytest.approx(2.0)

    def test_negative_power(self):
        assert eigenfunction_correlator(decompose(np.array([[0.25]])), -0.5, 0, 0) == pytest.approx(2.0)
        with pytest.raises(SingularSpectrumError):
            eigenfunction_correlator(decompose(np.diag([0.0, 1.0])), -0.5, 0, 1)
        with pytest.raises(ValueError):
            eigenfunction_correlator(decompose(np.eye(2)), -1.0, 0, 1)

    def test_window_additivity(self):
        s = decompose(build_effective(XYParams.random(6, np.random.default_rng(9))))
        a, b, both = EnergyWindow(-10, 0.3), EnergyWindow(0.3 + 1e-9, 10), EnergyWindow(-10, 10)
        for x, y in [(0, 0), (1, 4), (5, 2)]:
            lhs = eigenfunction_correlator(s, 0, x, y, a) + eigenfunction_correlator(s, 0, x, y, b)
            assert lhs == pytest.approx(eigenfunction_correlator(s, 0, x, y, both), abs=1e-10)


class TestSupT:
    def test_scalar_examples(self):
        s = decompose(np.array([[1.0]]))
        bound, samp = sup_t_dynamical(s, 0, 0, "evolution")
        assert bound == pytest.approx(1) and samp == pytest.approx(1)
        s2 = decompose(np.array([[0.0, -1.0], [-1.0, 0.0]]))
        bound, samp = sup_t_dynamical(s2, 0, 1, "evolution", t_grid=np.array([0.0]))
        assert samp == pytest.approx(0, abs=1e-14) and bound >= 0
        _, samp = sup_t_dynamical(s2, 0, 1, "evolution")
        assert samp == pytest.approx(1, abs=1e-4)

    def test_majorant_property(self):
        grid = np.linspace(0, 20, 401)
        for op in random_operators(50, seed=10):
            s = decompose(op)
            kinds = KINDS if op.block_size == 1 else ("evolution",)
            for kind in kinds:
                for x in range(s.n_sites):
                    for y in range(s.n_sites):
                        b, m = sup_t_dynamical(s, x, y, kind, t_grid=grid)
                        assert m <= b + 1e-10

    def test_sqrt_kinds_need_psd(self):
        s = decompose(np.diag([-1.0, 1.0]))
        with pytest.raises(ValueError, match="semidefinite"):
            sup_t_dynamical(s, 0, 1, "cos_sqrt")


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 12), st.integers(0, 2 ** 32 - 1))
def test_correlator_symmetric(n, seed):
    q = correlator_matrix(decompose(random_symmetric(n, seed)), 0.0)
    np.testing.assert_allclose(q, q.T, atol=1e-12)
