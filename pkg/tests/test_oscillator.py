import math

import numpy as np
import pytest

from mbloc.errors import SingularSpectrumError
from mbloc.oscillator import (
    GaussianState,
    OscillatorLattice,
    Region,
    build_lattice_operator,
    entanglement_entropy,
    gaussian_oracle,
    ground_correlation_bound,
    log_negativity_bound,
    log_negativity_exact,
    sqrt_matrices,
    thermal_phi_bound,
    thermal_phi_matrix,
    weyl_commutator_bound,
    weyl_commutator_exact,
    weyl_ground_correlation_exact,
)
from mbloc.single_particle import decompose


def spec_of(h):
    return decompose(np.asarray(h, dtype=float))


def chain(L, springs, coupling=1.0, d=1):
    lat = OscillatorLattice(d, L, springs, coupling)
    return lat, decompose(build_lattice_operator(lat))


class TestLattice:
    def test_single_site(self):
        h = build_lattice_operator(OscillatorLattice(1, 0, [2.0]))
        np.testing.assert_array_equal(h.entries, [[1.0]])

    def test_path_laplacian(self):
        h = build_lattice_operator(OscillatorLattice(1, 1, np.zeros(3)))
        np.testing.assert_allclose(np.linalg.eigvalsh(h.entries), [0, 1, 3], atol=1e-12)

    def test_positive_definite(self):
        lat = OscillatorLattice(2, 2, np.random.default_rng(0).uniform(0.1, 1, 25))
        assert np.linalg.eigvalsh(build_lattice_operator(lat).entries).min() > 0

    def test_negative_spring_rejected(self):
        with pytest.raises(ValueError):
            OscillatorLattice(1, 1, [1.0, -1.0, 1.0])

    def test_distance_is_one_norm(self):
        h = build_lattice_operator(OscillatorLattice(2, 1, np.ones(9)))
        assert h.distance(h.index_of((-1, -1)), h.index_of((1, 0))) == 3


class TestRegion:
    def test_boundary(self):
        lat = OscillatorLattice(1, 5, np.ones(11))
        assert Region.centered_interval(lat, 5).boundary_size == 2
        lat2 = OscillatorLattice(2, 3, np.ones(49))
        assert Region.box(lat2, 1).boundary_size == 8

    def test_invalid(self):
        lat = OscillatorLattice(1, 2, np.ones(5))
        with pytest.raises(ValueError):
            Region(lat, ())
        with pytest.raises(ValueError):
            Region.centered_interval(lat, 4)


class TestWeyl:
    def test_t0_offdiagonal_zero(self):
        _, s = chain(3, np.linspace(1, 2, 7))
        assert weyl_commutator_bound(s, 1, 4, t=0.0) == pytest.approx(0, abs=1e-12)

    def test_scalar_sup(self):
        assert weyl_commutator_bound(spec_of([[1.0]]), 0, 0) == pytest.approx(4.0)

    def test_exact_below_bounds(self):
        rng = np.random.default_rng(1)
        lat, s = chain(3, rng.uniform(0.5, 5, 7))
        h = build_lattice_operator(lat)
        for t in (0.3, 1.0, 4.0):
            for x, y in [(0, 3), (2, 5), (1, 1)]:
                z, zp = complex(*rng.standard_normal(2)), complex(*rng.standard_normal(2))
                exact = weyl_commutator_exact(h, x, y, z, zp, t)
                fixed = weyl_commutator_bound(s, x, y, z, zp, t=t)
                assert exact <= fixed + 1e-10
                assert fixed <= weyl_commutator_bound(s, x, y, z, zp) + 1e-10

    def test_singular_rejected(self):
        _, s = chain(2, np.zeros(5))
        with pytest.raises(SingularSpectrumError):
            weyl_commutator_bound(s, 0, 1)

    def test_disorder_average_decreases(self):
        rng = np.random.default_rng(2)
        near, far = [], []
        for _ in range(40):
            _, s = chain(2, 10 * rng.uniform(0, 1, 5))
            near.append(weyl_commutator_bound(s, 0, 1))
            far.append(weyl_commutator_bound(s, 0, 4))
        assert np.mean(far) < np.mean(near)


class TestGroundCorrelation:
    def test_scalar(self):
        assert ground_correlation_bound(spec_of([[1.0]]), 0, 0) == pytest.approx(1.0)

    def test_uncoupled_zero(self):
        s = spec_of(np.diag([1.0, 2.0, 3.0]))
        assert ground_correlation_bound(s, 0, 2) == pytest.approx(0, abs=1e-15)

    def test_two_site_hand_computation(self):
        s = spec_of([[2.0, -1.0], [-1.0, 2.0]])
        # eigenvectors (1, +-1)/sqrt2 with eigenvalues 1 and 3
        hm12 = 0.5 * (1 - 3 ** -0.5)
        hp12 = 0.5 * (1 - 3 ** 0.5)
        assert ground_correlation_bound(s, 0, 1) == pytest.approx(0.5 * (abs(hm12) + abs(hp12)))

    def test_exact_below_bound(self):
        rng = np.random.default_rng(3)
        _, s = chain(3, rng.uniform(0.2, 2, 7))
        for z, zp in [(1, 1), (1j, 0.5 + 0.5j), (0.3, 2j)]:
            assert weyl_ground_correlation_exact(s, 1, 4, z, zp) <= ground_correlation_bound(s, 1, 4, z, zp) + 1e-12


class TestThermalPhi:
    def test_scalar(self):
        assert thermal_phi_bound(spec_of([[1.0]]), 1.0, 0, 0) == pytest.approx(math.tanh(1.0))

    def test_large_beta_limit(self):
        rng = np.random.default_rng(4)
        _, s = chain(3, 1.0 + rng.uniform(0, 1, 7))
        assert s.eigenvalues.min() >= 0.5
        _, hm = sqrt_matrices(s)
        np.testing.assert_allclose(thermal_phi_matrix(s, 50.0), hm, atol=1e-8)

    def test_uncoupled(self):
        assert thermal_phi_bound(spec_of(np.diag([1.0, 2.0])), 2.0, 0, 1) == pytest.approx(0, abs=1e-15)

    def test_monotone_in_beta(self):
        _, s = chain(3, np.random.default_rng(5).uniform(0.1, 1, 7))
        diag = [np.diag(thermal_phi_matrix(s, b)) for b in np.linspace(0.1, 10, 25)]
        assert np.all(np.diff(np.array(diag), axis=0) >= -1e-12)

    def test_methods_agree(self):
        _, s = chain(4, np.random.default_rng(6).uniform(0, 1, 9))
        for b in (0.5, 2.0):
            np.testing.assert_allclose(thermal_phi_matrix(s, b), thermal_phi_matrix(s, b, "spectral"), atol=1e-14)

    def test_tail_accuracy(self):
        # far entries of phi(h) at high temperature sit below 1e-16; the expansion still resolves them
        import mpmath

        lat, s = chain(8, np.linspace(0.1, 0.9, 17))
        h = build_lattice_operator(lat).entries
        with mpmath.workdps(40):
            w, v = mpmath.eigsy(mpmath.matrix(h.tolist()))
            ref = mpmath.fsum(v[0, k] * v[16, k] * mpmath.tanh(0.5 * mpmath.sqrt(w[k])) / mpmath.sqrt(w[k])
                              for k in range(17))
        got = thermal_phi_matrix(s, 0.5)[0, 16]
        assert abs(float(ref)) < 1e-16
        assert got == pytest.approx(float(ref), rel=1e-8)

    def test_beta_positive(self):
        with pytest.raises(ValueError):
            thermal_phi_matrix(spec_of([[1.0]]), 0.0)


class TestNegativityBound:
    def test_full_region_zero(self):
        lat, s = chain(2, np.ones(5))
        assert log_negativity_bound(s, Region(lat, tuple(range(5)))) == 0.0

    def test_uncoupled_zero(self):
        lat, s = chain(2, np.ones(5), coupling=1e-300)
        assert log_negativity_bound(s, Region.centered_interval(lat, 3)) == pytest.approx(0, abs=1e-12)

    def test_as_written_dominates(self):
        lat, s = chain(4, np.linspace(0.5, 1, 9))
        g = Region.centered_interval(lat, 3)
        assert log_negativity_bound(s, g, "as_written") >= log_negativity_bound(s, g)


class TestGaussian:
    def test_scalar_ground(self):
        st = gaussian_oracle(spec_of([[1.0]]))
        assert st.q_cov[0, 0] == pytest.approx(0.5) and st.p_cov[0, 0] == pytest.approx(0.5)
        assert st.symplectic_eigenvalues() == pytest.approx([0.5])

    def test_scalar_thermal(self):
        nu = gaussian_oracle(spec_of([[1.0]]), beta=1.0).symplectic_eigenvalues()
        assert nu == pytest.approx([0.5 / math.tanh(1.0)])
        assert nu[0] == pytest.approx(0.656518, abs=1e-6)

    def test_uncertainty_enforced(self):
        with pytest.raises(ValueError):
            GaussianState(0.1 * np.eye(2), 0.1 * np.eye(2))

    def test_product_state(self):
        lat = OscillatorLattice(1, 2, np.ones(5), coupling=1e-300)
        st = gaussian_oracle(decompose(build_lattice_operator(lat)))
        g = Region.centered_interval(lat, 3)
        assert entanglement_entropy(st, g) == pytest.approx(0, abs=1e-12)
        assert log_negativity_exact(st, g) == pytest.approx(0, abs=1e-12)

    def test_two_site_entropy(self):
        # h = [[2, -1], [-1, 2]] is not a lattice box, so the single-site entropy is read off directly
        from mbloc.oscillator import _entropy_terms

        st = gaussian_oracle(spec_of([[2.0, -1.0], [-1.0, 2.0]]))
        q11, p11 = 0.25 * (1 + 3 ** -0.5), 0.25 * (1 + 3 ** 0.5)
        np.testing.assert_allclose([st.q_cov[0, 0], st.p_cov[0, 0]], [q11, p11])
        nu = math.sqrt(q11 * p11)
        expected = (nu + .5) * math.log(nu + .5) - (nu - .5) * math.log(nu - .5)
        assert _entropy_terms(st.symplectic_eigenvalues(np.array([0]))).sum() == pytest.approx(expected)

    def test_schmidt_symmetry_and_entropy_below_negativity(self):
        rng = np.random.default_rng(7)
        for d, L in [(1, 3), (2, 2)]:
            n = (2 * L + 1) ** d
            lat = OscillatorLattice(d, L, rng.uniform(0, 1, n))
            st = gaussian_oracle(decompose(build_lattice_operator(lat)))
            for _ in range(5):
                sites = tuple(rng.choice(n, int(rng.integers(1, n)), replace=False))
                g = Region(lat, sites)
                comp = Region(lat, tuple(int(i) for i in g.complement))
                assert entanglement_entropy(st, g) == pytest.approx(entanglement_entropy(st, comp), abs=1e-8)
                assert entanglement_entropy(st, g) <= log_negativity_exact(st, g) + 1e-9
