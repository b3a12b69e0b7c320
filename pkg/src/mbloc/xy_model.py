"""
Disordered XY chain in a transversal field, open boundary conditions.

    H_n = sum_j mu_j [(1 + gamma_j) X_j X_{j+1} + (1 - gamma_j) Y_j Y_{j+1}] + sum_j nu_j Z_j

The free-fermion reduction gives a ``2n x 2n`` block Jacobi matrix ``h_n``
with diagonal blocks ``nu_j J`` and off-diagonal blocks ``-mu_j S(gamma_j)``
(above the diagonal) and ``-mu_j S(gamma_j)^T`` (below), where
``J = diag(1, -1)`` and ``S(g) = [[1, g], [-g, -1]]``.  Rows ``2j, 2j+1``
belong to spin ``j`` (zero-based).

For small chains :func:`build_dense_oracle` assembles ``H_n`` and the
Jordan-Wigner fermions as dense ``2^n`` matrices; the oracle checks the
single-particle formulas by brute force.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg

from mbloc.errors import OracleCapError
from mbloc.single_particle import EffectiveOperator

DEFAULT_ORACLE_CAP = 8
HARD_ORACLE_CAP = 14

PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)
LOWERING = (PAULI_X - 1j * PAULI_Y) / 2          # a = (X - iY)/2
J_BLOCK = np.diag([1.0, -1.0])


def S_block(gamma: float) -> np.ndarray:
    return np.array([[1.0, gamma], [-gamma, -1.0]])


@dataclass(frozen=True, eq=False)
class XYParams:
    """Coefficients of a finite XY chain.

    ``mu`` and ``gamma`` have ``n - 1`` entries (one per bond), ``nu`` has ``n``.
    """

    mu: np.ndarray
    gamma: np.ndarray
    nu: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        nu = np.atleast_1d(np.asarray(self.nu, dtype=float))
        n = nu.size
        if n < 1:
            raise ValueError("chain needs at least one site")
        if mu.size != n - 1 or gamma.size != n - 1:
            raise ValueError(
                f"expected {n - 1} couplings and anisotropies for n={n}, "
                f"got mu={mu.size}, gamma={gamma.size}"
            )
        if np.any(mu == 0):
            raise ValueError(f"mu_j = 0 at bond {int(np.argmax(mu == 0))}: the chain decomposes")
        for name, arr in (("mu", mu), ("gamma", gamma), ("nu", nu)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.nu.size

    @property
    def isotropic(self) -> bool:
        return bool(np.all(self.gamma == 0))

    @classmethod
    def constant(cls, n: int, mu: float = 1.0, gamma: float = 0.0, nu: float = 0.0) -> "XYParams":
        return cls(np.full(n - 1, mu), np.full(n - 1, gamma), np.full(n, nu))

    @classmethod
    def random(cls, n: int, rng: np.random.Generator, isotropic: bool = False,
               nu_scale: float = 3.0) -> "XYParams":
        """Random test chain: ``|mu| in [0.5, 1.5]`` with random sign, ``gamma`` in
        ``[-1.5, 1.5]`` (or 0), ``nu`` in ``[-nu_scale, nu_scale]``."""
        mu = rng.uniform(0.5, 1.5, n - 1) * rng.choice([-1.0, 1.0], n - 1)
        gamma = np.zeros(n - 1) if isotropic else rng.uniform(-1.5, 1.5, n - 1)
        nu = rng.uniform(-nu_scale, nu_scale, n)
        return cls(mu, gamma, nu)


def build_effective(params: XYParams) -> EffectiveOperator:
    """Block Jacobi matrix ``h_n`` in the interleaved basis e_1, e_{n+1}, ..., e_n, e_{2n}."""
    n = params.n
    h = np.zeros((2 * n, 2 * n))
    for j in range(n):
        h[2 * j:2 * j + 2, 2 * j:2 * j + 2] = params.nu[j] * J_BLOCK
    for j in range(n - 1):
        off = -params.mu[j] * S_block(params.gamma[j])
        h[2 * j:2 * j + 2, 2 * j + 2:2 * j + 4] = off
        h[2 * j + 2:2 * j + 4, 2 * j:2 * j + 2] = off.T
    return EffectiveOperator(h, block_size=2, kind="xy")


def anderson_matrix(params: XYParams) -> np.ndarray:
    """``A_n``: diagonal ``nu``, off-diagonal ``-mu``."""
    return np.diag(params.nu) - np.diag(params.mu, 1) - np.diag(params.mu, -1)


def block_matrix_unordered(params: XYParams) -> np.ndarray:
    """``[[A, B], [-B, -A]]`` in the original basis e_1..e_2n."""
    a = anderson_matrix(params)
    mg = params.mu * params.gamma
    b = -np.diag(mg, 1) + np.diag(mg, -1)
    return np.block([[a, b], [-b, -a]])


def interleave_permutation(n: int) -> np.ndarray:
    """Index array ``p`` with ``h_n = h_tilde[p][:, p]``."""
    p = np.empty(2 * n, dtype=int)
    p[0::2] = np.arange(n)
    p[1::2] = np.arange(n, 2 * n)
    return p


def local_operator(n: int, j: int, a: np.ndarray) -> np.ndarray:
    """Embed the single-site matrix ``a`` at site ``j`` of an ``n``-site chain."""
    if not 0 <= j < n:
        raise IndexError(f"site {j} outside chain of {n} sites")
    left = np.eye(2 ** j)
    right = np.eye(2 ** (n - j - 1))
    return np.kron(np.kron(left, np.asarray(a, dtype=complex)), right)


def _check_cap(n: int, cap: int):
    if cap > HARD_ORACLE_CAP:
        raise OracleCapError(f"oracle cap {cap} exceeds the hard limit {HARD_ORACLE_CAP}")
    if n > cap:
        raise OracleCapError(f"dense oracle infeasible for n={n} (cap {cap}, dim 2^{n})")


@dataclass(frozen=True, eq=False)
class DenseManyBody:
    """Dense ``2^n`` many-body Hamiltonian with Jordan-Wigner fermions."""

    n: int
    hamiltonian: np.ndarray
    c_ops: tuple
    c_dag_ops: tuple
    params: XYParams | None = None

    @cached_property
    def eig(self) -> tuple[np.ndarray, np.ndarray]:
        return np.linalg.eigh(self.hamiltonian)

    @property
    def dim(self) -> int:
        return 2 ** self.n

    def propagator(self, t: float) -> np.ndarray:
        """``exp(-i t H)``."""
        w, v = self.eig
        return (v * np.exp(-1j * t * w)) @ v.conj().T


def build_dense_oracle(params: XYParams, cap: int = DEFAULT_ORACLE_CAP) -> DenseManyBody:
    n = params.n
    _check_cap(n, cap)
    dim = 2 ** n
    H = np.zeros((dim, dim), dtype=complex)
    for j in range(n):
        H += params.nu[j] * local_operator(n, j, PAULI_Z)
    for j in range(n - 1):
        xx = local_operator(n, j, PAULI_X) @ local_operator(n, j + 1, PAULI_X)
        yy = local_operator(n, j, PAULI_Y) @ local_operator(n, j + 1, PAULI_Y)
        g = params.gamma[j]
        H += params.mu[j] * ((1 + g) * xx + (1 - g) * yy)

    c_ops = []
    string = np.eye(dim, dtype=complex)
    for j in range(n):
        c = string @ local_operator(n, j, LOWERING)
        c_ops.append(c)
        string = string @ local_operator(n, j, PAULI_Z)
    c_dag = tuple(c.conj().T for c in c_ops)
    return DenseManyBody(n, H, tuple(c_ops), c_dag, params)


def heisenberg_evolve(oracle: DenseManyBody, A: np.ndarray, t: float) -> np.ndarray:
    """``tau_t(A) = exp(itH) A exp(-itH)`` via the oracle's eigendecomposition."""
    A = np.asarray(A)
    if A.shape != (oracle.dim, oracle.dim):
        raise ValueError(f"operator shape {A.shape} does not match 2^n = {oracle.dim}")
    if t == 0:
        return A.copy()
    U = oracle.propagator(t)
    return U.conj().T @ A @ U


def single_particle_propagator(params: XYParams, t: float) -> np.ndarray:
    """``exp(-2 i t h_n)`` computed with ``scipy.linalg.expm`` (independent of the eigensolver)."""
    h = build_effective(params).entries
    return scipy.linalg.expm(-2j * t * h)


def verify_c_evolution(params: XYParams, t: float, cap: int = DEFAULT_ORACLE_CAP,
                       oracle: DenseManyBody | None = None) -> float:
    """Max operator-norm residual of the fermion evolution identity.

    Compares ``(tau_t(c_j), tau_t(c_j^*))`` from the dense oracle with
    ``sum_k <j| exp(-2ith_n) |k> (c_k, c_k^*)`` for every ``j``.
    """
    if oracle is None:
        oracle = build_dense_oracle(params, cap)
    n = params.n
    G = single_particle_propagator(params, t)
    residual = 0.0
    for j in range(n):
        lhs = (heisenberg_evolve(oracle, oracle.c_ops[j], t),
               heisenberg_evolve(oracle, oracle.c_dag_ops[j], t))
        for row in range(2):
            rhs = np.zeros_like(lhs[row])
            for k in range(n):
                blk = G[2 * j:2 * j + 2, 2 * k:2 * k + 2]
                rhs += blk[row, 0] * oracle.c_ops[k] + blk[row, 1] * oracle.c_dag_ops[k]
            residual = max(residual, np.linalg.norm(lhs[row] - rhs, 2))
    return float(residual)


@dataclass(frozen=True)
class GapResult:
    single_particle: float
    oracle: float | None

    @property
    def discrepancy(self) -> float | None:
        return None if self.oracle is None else abs(self.oracle - self.single_particle)


def ground_state_gap_isotropic(params: XYParams, cap: int = DEFAULT_ORACLE_CAP,
                               oracle: bool = True) -> GapResult:
    """Ground state gap of the isotropic chain, ``E_1 - E_0 = 2 dist(0, sigma(A_n))``.

    The dense value is included when ``oracle`` is true and ``n <= cap``.
    """
    if not params.isotropic:
        raise ValueError("gap identity holds for the isotropic chain only (all gamma_j = 0)")
    eigs = np.linalg.eigvalsh(anderson_matrix(params))
    sp = 2.0 * float(np.min(np.abs(eigs)))
    dense = None
    if oracle and params.n <= cap:
        E = np.linalg.eigvalsh(build_dense_oracle(params, cap).hamiltonian)
        dense = float(E[1] - E[0])
    return GapResult(sp, dense)


def _local_part(op: np.ndarray, n: int, j: int) -> np.ndarray:
    """Single-site factor of ``op`` if it acts only on site ``j``; else ValueError."""
    op = np.asarray(op, dtype=complex)
    if op.shape == (2, 2):
        return op
    if op.shape != (2 ** n, 2 ** n):
        raise ValueError(f"operator shape {op.shape} is neither 2x2 nor 2^n")
    t = op.reshape([2] * (2 * n))
    # partial trace over every site except j
    ins = list(range(n))
    outs = [n + j if k == j else k for k in range(n)]
    local = np.einsum(t, ins + outs, [j, n + j]) / 2 ** (n - 1)
    if not np.allclose(local_operator(n, j, local), op, atol=1e-12):
        raise ValueError(f"operator is not local to site {j}")
    return local


def commutator_norm_oracle(oracle: DenseManyBody, A: np.ndarray, j: int, B: np.ndarray,
                           k: int, t: float) -> float:
    """Exact ``||[tau_t(A), B]||`` for ``A`` local at site ``j`` and ``B`` local at site ``k``.

    ``A`` and ``B`` may be given as 2x2 single-site matrices or as full ``2^n``
    operators; full operators that are not local to the stated site are rejected.
    """
    n = oracle.n
    a = local_operator(n, j, _local_part(A, n, j))
    b = local_operator(n, k, _local_part(B, n, k))
    at = heisenberg_evolve(oracle, a, t)
    return float(np.linalg.norm(at @ b - b @ at, 2))


def ground_state_correlation(oracle: DenseManyBody, A: np.ndarray, j: int, B: np.ndarray,
                             k: int) -> float:
    """``|<AB> - <A><B>|`` in the (lowest) ground state of the dense Hamiltonian."""
    n = oracle.n
    a = local_operator(n, j, _local_part(A, n, j))
    b = local_operator(n, k, _local_part(B, n, k))
    psi = oracle.eig[1][:, 0]
    ev = lambda M: np.vdot(psi, M @ psi)
    return float(abs(ev(a @ b) - ev(a) * ev(b)))
