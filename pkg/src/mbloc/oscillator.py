"""
Disordered harmonic oscillator lattices on ``[-L, L]^d``.

    H_L = sum_x (p_x^2 / (2 m_x) + k_x q_x^2 / 2) + sum_<x,y> lambda (q_x - q_y)^2

With ``m_x = 1/2`` this is ``H_L = p^T p + q^T h_L q`` where ``h_L`` is the
weighted open-boundary graph Laplacian plus ``diag(k_x / 2)``.  Every
locality diagnostic below is a matrix element of a function of ``h_L``.

Position covariances follow the same convention: in the ground state
``<q q^T> = h^{-1/2} / 2`` and ``<p p^T> = h^{1/2} / 2``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.linalg

from mbloc.errors import SingularSpectrumError
from mbloc.single_particle import (
    ZERO_TOL,
    EffectiveOperator,
    SpectralData,
    chebyshev_coefficients,
    chebyshev_matrix,
    correlator_matrix,
    eigenfunction_correlator,
    function_matrix,
)

SYMPLECTIC_TOL = 1e-9
CHEB_DIGITS = 45
MAX_CHEB_DEGREE = 600


@dataclass(frozen=True, eq=False)
class OscillatorLattice:
    """Lattice geometry and coefficients.

    Parameters
    ----------
    d, L : int
        Dimension and half-width; sites are ``[-L, L]^d``, in lexicographic order.
    springs : array
        One spring constant ``k_x >= 0`` per site.
    coupling : float
        Nearest-neighbour coupling ``lambda`` (default 1).
    mass : float or array
        Masses ``m_x`` (default 1/2, which makes the momentum matrix the identity).
    """

    d: int
    L: int
    springs: np.ndarray
    coupling: float = 1.0
    mass: float | np.ndarray = 0.5

    def __post_init__(self):
        if self.d < 1 or self.L < 0:
            raise ValueError("need d >= 1 and L >= 0")
        k = np.asarray(self.springs, dtype=float).ravel()
        if k.size != self.n_sites:
            raise ValueError(f"expected {self.n_sites} springs, got {k.size}")
        if np.any(k < 0):
            raise ValueError("spring constants must be non-negative")
        k.setflags(write=False)
        object.__setattr__(self, "springs", k)
        m = np.broadcast_to(np.asarray(self.mass, dtype=float), (self.n_sites,))
        if np.any(m <= 0):
            raise ValueError("masses must be positive")

    @property
    def side(self) -> int:
        return 2 * self.L + 1

    @property
    def n_sites(self) -> int:
        return self.side ** self.d

    @cached_property
    def coords(self) -> np.ndarray:
        rng = range(-self.L, self.L + 1)
        return np.array(list(itertools.product(rng, repeat=self.d)), dtype=int)

    @cached_property
    def _index(self) -> dict:
        return {tuple(c): i for i, c in enumerate(self.coords)}

    def index_of(self, coord: Sequence[int] | int) -> int:
        key = (coord,) if np.isscalar(coord) else tuple(int(c) for c in coord)
        return self._index[key]

    def bonds(self) -> list[tuple[int, int]]:
        out = []
        for i, c in enumerate(self.coords):
            for axis in range(self.d):
                if c[axis] < self.L:
                    nb = c.copy()
                    nb[axis] += 1
                    out.append((i, self._index[tuple(nb)]))
        return out

    def masses(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.mass, dtype=float), (self.n_sites,)).copy()


def build_lattice_operator(lat: OscillatorLattice) -> EffectiveOperator:
    """Position coefficient matrix ``h_L``: coupling-weighted Laplacian plus ``diag(k/2)``."""
    h = np.diag(lat.springs / 2.0)
    lam = lat.coupling
    for i, j in lat.bonds():
        h[i, i] += lam
        h[j, j] += lam
        h[i, j] -= lam
        h[j, i] -= lam
    labels = tuple(tuple(c) for c in lat.coords)
    return EffectiveOperator(h, block_size=1, site_labels=labels, coords=lat.coords, kind="oscillator")


def effective_hamiltonian(lat: OscillatorLattice) -> EffectiveOperator:
    """Mass-rescaled operator ``M^{1/2} h_L M^{1/2}`` with ``M = diag(1/(2 m_x))``.

    Equals :func:`build_lattice_operator` for the default masses ``m_x = 1/2``.
    """
    base = build_lattice_operator(lat)
    r = np.sqrt(1.0 / (2.0 * lat.masses()))
    h = r[:, None] * base.entries * r[None, :]
    return EffectiveOperator((h + h.T) / 2, block_size=1, site_labels=base.site_labels,
                             coords=base.coords, kind="oscillator")


@dataclass(frozen=True, eq=False)
class Region:
    """A nonempty subset of lattice sites, stored as sorted site indices."""

    lattice: OscillatorLattice
    sites: tuple

    def __post_init__(self):
        idx = tuple(sorted(set(int(i) for i in self.sites)))
        if not idx:
            raise ValueError("region must be nonempty")
        if idx[0] < 0 or idx[-1] >= self.lattice.n_sites:
            raise ValueError("region sites outside the lattice")
        object.__setattr__(self, "sites", idx)

    @classmethod
    def from_coords(cls, lat: OscillatorLattice, coords: Iterable[Sequence[int]]) -> "Region":
        try:
            return cls(lat, tuple(lat.index_of(c) for c in coords))
        except KeyError as exc:
            raise ValueError(f"coordinate {exc.args[0]} not in the lattice") from None

    @classmethod
    def box(cls, lat: OscillatorLattice, half_width: int | Sequence[int]) -> "Region":
        """Centered box ``prod_a [-w_a, w_a]``; in d=1 an interval of length ``2w+1``."""
        w = [half_width] * lat.d if np.isscalar(half_width) else list(half_width)
        ranges = [range(-a, a + 1) for a in w]
        return cls.from_coords(lat, itertools.product(*ranges))

    @classmethod
    def centered_interval(cls, lat: OscillatorLattice, length: int) -> "Region":
        """Centered interval of odd ``length`` along the first axis (other coordinates 0)."""
        if length < 1 or length % 2 == 0:
            raise ValueError("centered intervals need odd positive length")
        half = (length - 1) // 2
        pts = [(a,) + (0,) * (lat.d - 1) for a in range(-half, half + 1)]
        return cls.from_coords(lat, pts)

    @property
    def size(self) -> int:
        return len(self.sites)

    @cached_property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.lattice.n_sites, dtype=bool)
        m[list(self.sites)] = True
        return m

    @property
    def complement(self) -> np.ndarray:
        return np.flatnonzero(~self.mask)

    @cached_property
    def boundary_size(self) -> int:
        """Number of sites in the region with a nearest neighbour in ``Z^d`` outside it."""
        inside = {tuple(self.lattice.coords[i]) for i in self.sites}
        d = self.lattice.d
        steps = [tuple(sg if a == ax else 0 for a in range(d)) for ax in range(d) for sg in (-1, 1)]
        count = 0
        for c in inside:
            if any(tuple(ci + si for ci, si in zip(c, st)) not in inside for st in steps):
                count += 1
        return count


def _require_positive(s: SpectralData, what: str, zero_tol: float = ZERO_TOL):
    lo = s.eigenvalues[0]
    if lo <= zero_tol:
        raise SingularSpectrumError(lo, zero_tol, what)


def _root(s: SpectralData) -> np.ndarray:
    return np.sqrt(np.clip(s.eigenvalues, 0.0, None))


def sqrt_matrices(s: SpectralData) -> tuple[np.ndarray, np.ndarray]:
    """``(h^{1/2}, h^{-1/2})``."""
    _require_positive(s, "h^{-1/2}")
    r = _root(s)
    v = s.eigenvectors
    return (v * r) @ v.T, (v / r) @ v.T


def weyl_matrices(s: SpectralData, t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``cos(2t h^{1/2})``, ``h^{1/2} sin(2t h^{1/2})``, ``h^{-1/2} sin(2t h^{1/2})``."""
    _require_positive(s, "h^{-1/2} sin(2t h^{1/2})")
    r = _root(s)
    v = s.eigenvectors
    c = np.cos(2 * t * r)
    sn = np.sin(2 * t * r)
    return (v * c) @ v.T, (v * (r * sn)) @ v.T, (v * (sn / r)) @ v.T


def weyl_commutator_bound(s: SpectralData, x: int, y: int, z: complex = 1.0, zp: complex = 1.0,
                          t: Optional[float] = None) -> float:
    """Bound on ``||[tau_t(W_x(z)), W_y(z')]||``.

    At fixed ``t``: ``|z||z'| (2|cos_xy| + |(h^{1/2} sin)_xy| + |(h^{-1/2} sin)_xy|)``.
    With ``t=None`` the time supremum is majorized by
    ``|z||z'| (2 Q_0 + Q_{1/2} + Q_{-1/2})`` (eigenfunction correlators of ``h``).
    """
    scale = abs(z) * abs(zp)
    if t is None:
        _require_positive(s, "weyl_commutator_bound")
        q0 = eigenfunction_correlator(s, 0.0, x, y)
        qp = eigenfunction_correlator(s, 0.5, x, y)
        qm = eigenfunction_correlator(s, -0.5, x, y)
        return scale * (2 * q0 + qp + qm)
    c, sp, sm = weyl_matrices(s, t)
    return scale * (2 * abs(c[x, y]) + abs(sp[x, y]) + abs(sm[x, y]))


def weyl_bound_matrix(s: SpectralData) -> np.ndarray:
    """Time-supremum majorant ``2 Q_0 + Q_{1/2} + Q_{-1/2}`` for all site pairs (unit amplitudes)."""
    _require_positive(s, "weyl_commutator_bound")
    return 2 * correlator_matrix(s, 0.0) + correlator_matrix(s, 0.5) + correlator_matrix(s, -0.5)


def weyl_commutator_exact(h: np.ndarray | EffectiveOperator, x: int, y: int, z: complex,
                          zp: complex, t: float) -> float:
    """Exact ``||[tau_t(W_x(z)), W_y(z')]||`` from the linear Heisenberg flow.

    ``d/dt (q, p) = (2p, -2hq)`` is integrated with a matrix exponential, so
    this does not share code with the spectral route.  Two Weyl operators with
    c-number commutator ``[A, B] = i c`` satisfy ``||[e^{iA}, e^{iB}]|| = 2|sin(c/2)|``.
    """
    hm = h.entries if isinstance(h, EffectiveOperator) else np.asarray(h, dtype=float)
    n = hm.shape[0]
    gen = np.block([[np.zeros((n, n)), 2 * np.eye(n)], [-2 * hm, np.zeros((n, n))]])
    flow = scipy.linalg.expm(t * gen)
    # (q(t), p(t)) = flow @ (q, p); evolved generator a q_x(t) + b p_x(t)
    z, zp = complex(z), complex(zp)
    coef = z.real * flow[x] + z.imag * flow[n + x]
    alpha, beta = coef[:n], coef[n:]
    ap, bp = zp.real, zp.imag
    c = alpha[y] * bp - beta[y] * ap
    return float(abs(2 * np.sin(c / 2)))


def ground_correlation_bound(s: SpectralData, x: int, y: int, z: complex = 1.0,
                             zp: complex = 1.0) -> float:
    """``|z||z'| (|(h^{-1/2})_xy| + |(h^{1/2})_xy|) / 2``."""
    hp, hm = sqrt_matrices(s)
    return 0.5 * abs(z) * abs(zp) * (abs(hm[x, y]) + abs(hp[x, y]))


def ground_bound_matrix(s: SpectralData) -> np.ndarray:
    hp, hm = sqrt_matrices(s)
    return 0.5 * (np.abs(hm) + np.abs(hp))


def weyl_ground_correlation_exact(s: SpectralData, x: int, y: int, z: complex, zp: complex) -> float:
    """Exact ``|<W_x W_y> - <W_x><W_y>|`` in the Gaussian ground state, ``x != y``."""
    if x == y:
        raise ValueError("exact ground correlation implemented for distinct sites")
    st = gaussian_oracle(s)
    a, b = complex(z).real, complex(z).imag
    ap, bp = complex(zp).real, complex(zp).imag
    Q, P = st.q_cov, st.p_cov
    var_a = a * a * Q[x, x] + b * b * P[x, x]
    var_b = ap * ap * Q[y, y] + bp * bp * P[y, y]
    cov = a * ap * Q[x, y] + b * bp * P[x, y]
    # <e^{iA}> = e^{-<A^2>/2} for centered Gaussian A; A, B commute for x != y
    wa, wb = np.exp(-var_a / 2), np.exp(-var_b / 2)
    return float(abs(wa * wb * (np.exp(-cov) - 1.0)))


def thermal_phi(beta: float):
    """``phi(t) = t^{-1/2} tanh(beta t^{1/2})``."""
    def phi(t):
        r = np.sqrt(t)
        return np.tanh(beta * r) / r
    return phi


def thermal_phi_bound(s: SpectralData, beta: float, x: int, y: int) -> float:
    """``|<delta_x, phi(h) delta_y>|`` with ``phi(t) = t^{-1/2} tanh(beta t^{1/2})``.

    ``phi`` extends continuously to ``phi(0+) = beta`` but strict positivity of
    ``h`` is still required here.
    """
    return float(abs(thermal_phi_matrix(s, beta)[x, y]))


def thermal_phi_matrix(s: SpectralData, beta: float, method: str = "chebyshev") -> np.ndarray:
    """``phi_beta(h)`` as a matrix.

    ``chebyshev`` (default) expands ``phi`` on ``[0, ||h||_inf]``; its deep
    off-diagonal entries keep relative accuracy far below 1e-16, where the
    eigenvector sum of ``spectral`` only returns roundoff.  At low temperature
    (where the expansion would need more than ``MAX_CHEB_DEGREE`` terms) the
    entries stay far above roundoff and the spectral sum is used instead.
    """
    if not beta > 0:
        raise ValueError("beta must be positive")
    _require_positive(s, "thermal phi")
    if method == "spectral":
        return function_matrix(s, thermal_phi(beta), singular=True)
    if method != "chebyshev":
        raise ValueError("method must be 'chebyshev' or 'spectral'")
    h = s.operator.entries if s.operator is not None else (s.eigenvectors * s.eigenvalues) @ s.eigenvectors.T
    hi = np.ceil(2 * np.abs(h).sum(axis=1).max() + 1e-9) / 2
    if _thermal_degree(float(beta), float(hi)) > MAX_CHEB_DEGREE:
        return function_matrix(s, thermal_phi(beta), singular=True)
    coeffs = _thermal_coeffs(float(beta), float(hi))
    return chebyshev_matrix(h, coeffs, 0.0, hi)


def _thermal_degree(beta: float, hi: float, digits: int = CHEB_DIGITS) -> int:
    # nearest singularity of phi: tanh pole at t = -(pi / 2 beta)^2
    x0 = 1 + 2 * (math.pi / (2 * beta)) ** 2 / hi
    rho = x0 + math.sqrt(x0 * x0 - 1)
    return int(math.ceil(digits / math.log10(rho))) + 10


@lru_cache(maxsize=64)
def _thermal_coeffs(beta: float, hi: float, digits: int = CHEB_DIGITS) -> np.ndarray:
    import mpmath

    degree = _thermal_degree(beta, hi, digits)

    def phi(t):
        if t == 0:
            return mpmath.mpf(beta)
        r = mpmath.sqrt(t)
        return mpmath.tanh(beta * r) / r

    return chebyshev_coefficients(phi, 0.0, hi, degree, dps=digits + 15)


def log_negativity_bound(s: SpectralData, region: Region, sum_convention: str = "interior") -> float:
    """Double sum ``sum_x sum_{y not in Gamma} |(h^{-1/2})_xy|`` (prefactor C = 1).

    ``interior`` sums ``x`` over the region, ``as_written`` over the whole lattice.
    """
    if sum_convention not in ("interior", "as_written"):
        raise ValueError("sum_convention must be 'interior' or 'as_written'")
    _, hm = sqrt_matrices(s)
    out = region.complement
    if out.size == 0:
        return 0.0
    rows = np.array(region.sites) if sum_convention == "interior" else np.arange(s.source_dim)
    return float(np.abs(hm[np.ix_(rows, out)]).sum())


@dataclass(frozen=True, eq=False)
class GaussianState:
    """Centered Gaussian state with uncorrelated q and p blocks."""

    q_cov: np.ndarray
    p_cov: np.ndarray
    beta: Optional[float] = None

    def __post_init__(self):
        for name in ("q_cov", "p_cov"):
            m = np.asarray(getattr(self, name), dtype=float)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ValueError(f"{name} must be square")
            if np.max(np.abs(m - m.T)) > 1e-10:
                raise ValueError(f"{name} not symmetric")
            m = (m + m.T) / 2
            m.setflags(write=False)
            object.__setattr__(self, name, m)
        nu = self.symplectic_eigenvalues()
        if nu.size and nu.min() < 0.5 - SYMPLECTIC_TOL:
            raise ValueError(f"uncertainty principle violated: symplectic eigenvalue {nu.min():.6g} < 1/2")

    @property
    def n_modes(self) -> int:
        return self.q_cov.shape[0]

    def symplectic_eigenvalues(self, idx: Optional[np.ndarray] = None,
                               flip: Optional[np.ndarray] = None) -> np.ndarray:
        """Square roots of the eigenvalues of ``Q P`` on the index set ``idx``.

        ``flip`` marks momenta whose sign is reversed (partial transpose).
        """
        idx = np.arange(self.n_modes) if idx is None else np.asarray(idx)
        Q = self.q_cov[np.ix_(idx, idx)]
        P = self.p_cov[np.ix_(idx, idx)]
        if flip is not None:
            sgn = np.where(np.asarray(flip)[idx], -1.0, 1.0)
            P = sgn[:, None] * P * sgn[None, :]
        wq, vq = np.linalg.eigh(Q)
        if wq.min() <= 0:
            raise ValueError("position covariance restriction is not positive definite")
        qh = (vq * np.sqrt(wq)) @ vq.T
        m = qh @ P @ qh
        ev = np.linalg.eigvalsh((m + m.T) / 2)
        if ev.min() <= 0:
            raise ValueError("covariance restriction is not positive definite")
        return np.sqrt(ev)


def gaussian_oracle(s: SpectralData, beta: Optional[float] = None) -> GaussianState:
    """Ground (``beta=None``) or thermal state of ``H = p^T p + q^T h q``.

    Mode ``k`` has frequency ``2 lambda_k^{1/2}``; thermal occupation multiplies
    both covariances by ``coth(beta lambda_k^{1/2})``.
    """
    _require_positive(s, "gaussian_oracle")
    r = _root(s)
    occ = np.ones_like(r) if beta is None else 1.0 / np.tanh(beta * r)
    v = s.eigenvectors
    q = (v * (0.5 * occ / r)) @ v.T
    p = (v * (0.5 * occ * r)) @ v.T
    return GaussianState(q, p, beta)


def _entropy_terms(nu: np.ndarray) -> np.ndarray:
    nu = np.maximum(nu, 0.5)
    plus = (nu + 0.5) * np.log(nu + 0.5)
    d = nu - 0.5
    minus = np.where(d > 0, d * np.log(np.where(d > 0, d, 1.0)), 0.0)
    return plus - minus


def entanglement_entropy(state: GaussianState, region: Region) -> float:
    """Von Neumann entropy of the reduced state on the region (natural log)."""
    nu = state.symplectic_eigenvalues(np.array(region.sites))
    return float(max(_entropy_terms(nu).sum(), 0.0))


def log_negativity_exact(state: GaussianState, region: Region) -> float:
    """``log ||rho^{T_1}||_1`` for the bipartition (region, complement), natural log.

    The partial transpose on the region reverses the region's momenta; then
    ``N = sum_j max(0, -log(2 nu_j))`` over the transposed symplectic spectrum.
    """
    nu = state.symplectic_eigenvalues(flip=region.mask)
    return float(np.sum(np.maximum(0.0, -np.log(2.0 * nu))))
