"""
Spectral engine for effective single-particle operators.

Every quantity in the package is a function of one real symmetric matrix
``h``: an XY block Jacobi matrix (2x2 blocks, one block per spin) or an
oscillator lattice operator (1x1 blocks, one per lattice site).  This module
diagonalizes ``h`` once and evaluates matrix elements of functions of ``h``,
propagator blocks, spectral projections and (singular) eigenfunction
correlators from the eigenpairs.

Sites are zero-based block indices.  A site ``x`` addresses the rows
``x*block_size : (x+1)*block_size`` of ``h``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Hashable, Optional, Sequence

import numpy as np

from mbloc.errors import SingularSpectrumError

ZERO_TOL = 1e-12
SYMMETRY_TOL = 1e-12
DEFAULT_T_GRID = np.linspace(0.0, 100.0, 10001)

KINDS = ("evolution", "cos_sqrt", "sqrt_sin", "inv_sqrt_sin")
# correlator order used by each kind; powers act on eigenvalues of h
KIND_ALPHA = {"evolution": 0.0, "cos_sqrt": 0.0, "sqrt_sin": 0.5, "inv_sqrt_sin": -0.5}


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class EffectiveOperator:
    """Real symmetric matrix plus the site bookkeeping needed to read its blocks.

    Parameters
    ----------
    entries : ndarray
        ``(dim, dim)`` real symmetric matrix.
    block_size : int
        2 for the XY block Jacobi operator, 1 for oscillator lattices.
    site_labels : sequence, optional
        One hashable label per site (``dim // block_size`` of them).
        Defaults to ``0..n_sites-1``.
    coords : ndarray, optional
        ``(n_sites, d)`` integer lattice coordinates, used for 1-norm distances.
    """

    entries: np.ndarray
    block_size: int = 1
    site_labels: tuple = ()
    coords: Optional[np.ndarray] = None
    kind: str = "generic"

    def __post_init__(self):
        h = np.asarray(self.entries, dtype=float)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise ValueError(f"entries must be a square matrix, got shape {h.shape}")
        if self.block_size not in (1, 2):
            raise ValueError("block_size must be 1 or 2")
        if h.shape[0] % self.block_size:
            raise ValueError("dimension is not a multiple of block_size")
        asym = np.max(np.abs(h - h.T)) if h.size else 0.0
        if asym > SYMMETRY_TOL:
            raise ValueError(f"entries not symmetric (max |h - h^T| = {asym:.3e})")
        object.__setattr__(self, "entries", _readonly(h))
        n_sites = h.shape[0] // self.block_size
        labels = tuple(self.site_labels) if self.site_labels else tuple(range(n_sites))
        if len(labels) != n_sites:
            raise ValueError(f"expected {n_sites} site labels, got {len(labels)}")
        object.__setattr__(self, "site_labels", labels)
        if self.coords is not None:
            c = np.asarray(self.coords, dtype=int)
            if c.shape[0] != n_sites:
                raise ValueError("coords must have one row per site")
            c = c.copy()
            c.setflags(write=False)
            object.__setattr__(self, "coords", c)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def n_sites(self) -> int:
        return self.dim // self.block_size

    @cached_property
    def site_index(self) -> dict:
        """Map site label -> ``slice`` of rows."""
        b = self.block_size
        return {lab: slice(i * b, (i + 1) * b) for i, lab in enumerate(self.site_labels)}

    @cached_property
    def _label_to_int(self) -> dict:
        return {lab: i for i, lab in enumerate(self.site_labels)}

    def index_of(self, label: Hashable) -> int:
        return self._label_to_int[label]

    def distance(self, x: int, y: int) -> int:
        """1-norm lattice distance between sites ``x`` and ``y`` (block indices)."""
        if self.coords is None:
            return abs(int(x) - int(y))
        return int(np.abs(self.coords[x] - self.coords[y]).sum())


@dataclass(frozen=True)
class EnergyWindow:
    """Closed energy interval ``[lo, hi]`` for spectral projections."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValueError(f"EnergyWindow requires lo <= hi, got [{self.lo}, {self.hi}]")

    def mask(self, eigenvalues: np.ndarray) -> np.ndarray:
        return (eigenvalues >= self.lo) & (eigenvalues <= self.hi)


@dataclass(frozen=True, eq=False)
class SpectralData:
    """Ascending eigenvalues and orthonormal eigenvectors (columns) of an operator."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    block_size: int = 1
    operator: Optional[EffectiveOperator] = field(default=None, repr=False)

    @property
    def source_dim(self) -> int:
        return self.eigenvectors.shape[0]

    @property
    def n_sites(self) -> int:
        return self.source_dim // self.block_size

    @cached_property
    def site_amplitudes(self) -> np.ndarray:
        """``(n_sites, dim)`` array of ``|psi_k(x)|`` (Euclidean norm over the block)."""
        b = self.block_size
        v = self.eigenvectors.reshape(self.n_sites, b, -1)
        return np.sqrt(np.einsum("xbk,xbk->xk", v, v))

    def block(self, x: int, k: Optional[int] = None) -> np.ndarray:
        """Rows of the eigenvector matrix belonging to site ``x`` (all columns or column k)."""
        b = self.block_size
        rows = self.eigenvectors[x * b:(x + 1) * b]
        return rows if k is None else rows[:, k]


def decompose(h: EffectiveOperator | np.ndarray) -> SpectralData:
    """Dense symmetric eigendecomposition.

    Raises ``ValueError`` for non-symmetric input.
    """
    if not isinstance(h, EffectiveOperator):
        h = EffectiveOperator(np.asarray(h, dtype=float))
    w, v = np.linalg.eigh(h.entries)
    w = _readonly(w)
    v = _readonly(v)
    return SpectralData(w, v, block_size=h.block_size, operator=h)


def _weights(s: SpectralData, window: Optional[EnergyWindow]) -> np.ndarray:
    if window is None:
        return np.ones_like(s.eigenvalues)
    return window.mask(s.eigenvalues).astype(float)


def _check_nonsingular(eigs: np.ndarray, zero_tol: float, what: str):
    if eigs.size == 0:
        return
    i = int(np.argmin(np.abs(eigs)))
    if abs(eigs[i]) <= zero_tol:
        raise SingularSpectrumError(eigs[i], zero_tol, what)


def _check_psd(s: SpectralData, zero_tol: float, what: str):
    lo = s.eigenvalues[0]
    if lo < -zero_tol:
        raise ValueError(f"{what} requires a positive semidefinite operator (min eigenvalue {lo:.6e})")


def _apply(s: SpectralData, phi: Callable, singular: bool, zero_tol: float, what: str) -> np.ndarray:
    eigs = s.eigenvalues
    if singular:
        _check_nonsingular(eigs, zero_tol, what)
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = np.asarray(phi(eigs))
    if not np.iscomplexobj(vals):
        vals = vals.astype(float)
    bad = ~np.isfinite(vals)
    if bad.any():
        raise SingularSpectrumError(eigs[np.argmax(bad)], zero_tol, what)
    return vals


def matrix_function(
    s: SpectralData,
    phi: Callable[[np.ndarray], np.ndarray],
    x: int,
    y: int,
    *,
    singular: bool = False,
    zero_tol: float = ZERO_TOL,
) -> float:
    """Matrix element ``<delta_x, phi(h) delta_y> = sum_k phi(lambda_k) psi_k(x) psi_k(y)``.

    ``phi`` is vectorized over eigenvalues.  Pass ``singular=True`` for
    functions with a negative power at the origin; any eigenvalue with
    ``|lambda| <= zero_tol`` then raises :class:`SingularSpectrumError`.
    Non-finite values of ``phi`` raise the same error.

    Only defined for ``block_size == 1``; use :func:`function_matrix` for blocks.
    """
    if s.block_size != 1:
        raise ValueError("matrix_function addresses scalar sites; use function_matrix for blocks")
    vals = _apply(s, phi, singular, zero_tol, "matrix_function")
    v = s.eigenvectors
    return (vals * v[x] * v[y]).sum()


def function_matrix(
    s: SpectralData,
    phi: Callable[[np.ndarray], np.ndarray],
    *,
    singular: bool = False,
    zero_tol: float = ZERO_TOL,
) -> np.ndarray:
    """Full matrix ``phi(h) = V diag(phi(Lambda)) V^T``."""
    vals = _apply(s, phi, singular, zero_tol, "function_matrix")
    v = s.eigenvectors
    return (v * vals) @ v.T


def chebyshev_coefficients(f: Callable, lo: float, hi: float, degree: int,
                           dps: int = 50) -> np.ndarray:
    """Chebyshev interpolation coefficients of ``f`` on ``[lo, hi]``.

    ``f`` is evaluated in mpmath at ``dps`` digits so coefficients far below
    double-precision epsilon are still accurate.
    """
    import mpmath

    with mpmath.workdps(dps):
        K = int(degree) + 1
        a, b = mpmath.mpf(lo), mpmath.mpf(hi)
        # cos(m (j + 1/2) pi / K) only takes the 4K values cos(i pi / 2K)
        table = [mpmath.cos(mpmath.pi * i / (2 * K)) for i in range(4 * K)]
        fv = [f((b - a) / 2 * table[2 * j + 1] + (a + b) / 2) for j in range(K)]
        c = [2 * mpmath.fsum(fv[j] * table[(m * (2 * j + 1)) % (4 * K)] for j in range(K)) / K
             for m in range(K)]
        c[0] /= 2
        return np.array([float(x) for x in c])


def chebyshev_matrix(h: np.ndarray, coeffs: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """``sum_m c_m T_m(h~)`` by Clenshaw, ``h~`` the affine image of ``[lo, hi]`` on ``[-1, 1]``.

    For banded ``h`` the far off-diagonal entries are accurate relative to
    their own size rather than to the largest entry, unlike an eigenvector sum.
    """
    n = len(h)
    eye = np.eye(n)
    ht = (2 * h - (lo + hi) * eye) / (hi - lo)
    b1 = np.zeros((n, n))
    b2 = np.zeros((n, n))
    for c in coeffs[:0:-1]:
        b1, b2 = c * eye + 2 * ht @ b1 - b2, b1
    return coeffs[0] * eye + ht @ b1 - b2


def full_propagator(s: SpectralData, t: float, window: Optional[EnergyWindow] = None) -> np.ndarray:
    """``exp(-i t h) chi_J(h)`` as a dense matrix."""
    ph = np.exp(-1j * t * s.eigenvalues) * _weights(s, window)
    v = s.eigenvectors
    return (v * ph) @ v.T


def propagator_block(
    s: SpectralData, t: float, j: int, k: int, window: Optional[EnergyWindow] = None
):
    """``<j| exp(-i t h) chi_J(h) |k>``: a ``b x b`` complex block, or a scalar when ``b == 1``."""
    ph = np.exp(-1j * t * s.eigenvalues) * _weights(s, window)
    bj = s.block(j)
    bk = s.block(k)
    out = (bj * ph) @ bk.T
    return out[0, 0] if s.block_size == 1 else out


def _correlator_weights(
    s: SpectralData, alpha: float, window: Optional[EnergyWindow], zero_tol: float
) -> np.ndarray:
    if not alpha > -1:
        raise ValueError(f"correlator order must satisfy alpha > -1, got {alpha}")
    w = _weights(s, window)
    eigs = np.abs(s.eigenvalues)
    if alpha == 0:
        return w
    if alpha < 0:
        _check_nonsingular(s.eigenvalues[w > 0], zero_tol, f"correlator of order {alpha}")
    with np.errstate(divide="ignore"):
        powered = np.where(w > 0, eigs ** alpha, 0.0)
    return powered * w


def eigenfunction_correlator(
    s: SpectralData,
    alpha: float,
    x: int,
    y: int,
    window: Optional[EnergyWindow] = None,
    *,
    zero_tol: float = ZERO_TOL,
) -> float:
    """``Q_alpha(x, y) = sum_k |lambda_k|^alpha |psi_k(x)| |psi_k(y)|`` over the window.

    For 2x2 blocks ``|psi_k(x)|`` is the Euclidean norm of the block, so the
    value majorizes the spectral norm of ``<x| h^alpha g(h) |y>`` for any
    ``|g| <= 1``.  On the diagonal with ``alpha = 0`` it equals the block size.
    """
    w = _correlator_weights(s, alpha, window, zero_tol)
    amp = s.site_amplitudes
    return float((w * amp[x] * amp[y]).sum())


def correlator_matrix(
    s: SpectralData,
    alpha: float,
    window: Optional[EnergyWindow] = None,
    *,
    zero_tol: float = ZERO_TOL,
) -> np.ndarray:
    """All site pairs of :func:`eigenfunction_correlator` at once, ``(n_sites, n_sites)``."""
    w = _correlator_weights(s, alpha, window, zero_tol)
    amp = s.site_amplitudes
    return (amp * w) @ amp.T


def _time_factors(kind: str, eigs: np.ndarray, t: np.ndarray) -> np.ndarray:
    tt = t[:, None]
    if kind == "evolution":
        return np.exp(-1j * tt * eigs)
    root = np.sqrt(np.clip(eigs, 0.0, None))
    if kind == "cos_sqrt":
        return np.cos(2 * tt * root)
    if kind == "sqrt_sin":
        return root * np.sin(2 * tt * root)
    if kind == "inv_sqrt_sin":
        return np.sin(2 * tt * root) / root
    raise ValueError(f"unknown kind {kind!r}; expected one of {KINDS}")


def sampled_dynamical(
    s: SpectralData,
    x: int,
    y: int,
    kind: str = "evolution",
    window: Optional[EnergyWindow] = None,
    t_grid: Optional[Sequence[float]] = None,
) -> np.ndarray:
    """Norm of the time-dependent matrix element of ``kind`` on each grid point."""
    t = DEFAULT_T_GRID if t_grid is None else np.asarray(t_grid, dtype=float)
    w = _weights(s, window)
    if kind == "inv_sqrt_sin":
        _check_nonsingular(s.eigenvalues[w > 0], ZERO_TOL, kind)
    f = _time_factors(kind, s.eigenvalues, t) * w
    bx, by = s.block(x), s.block(y)
    if s.block_size == 1:
        return np.abs(f @ (bx[0] * by[0]))
    # (T, K) x (K, b, b) -> (T, b, b)
    outer = np.einsum("ak,bk->kab", bx, by)
    blocks = np.tensordot(f, outer, axes=(1, 0))
    return np.linalg.svd(blocks, compute_uv=False)[:, 0]


def sup_t_dynamical(
    s: SpectralData,
    x: int,
    y: int,
    kind: str = "evolution",
    window: Optional[EnergyWindow] = None,
    t_grid: Optional[Sequence[float]] = None,
    *,
    zero_tol: float = ZERO_TOL,
) -> tuple[float, float]:
    """Return ``(upper_bound, sampled_sup)`` for ``sup_t`` of a dynamical matrix element.

    ``kind`` selects the time-dependent function of ``h``:

    - ``evolution``: ``exp(-i t h)``
    - ``cos_sqrt``: ``cos(2 t h^{1/2})``
    - ``sqrt_sin``: ``h^{1/2} sin(2 t h^{1/2})``
    - ``inv_sqrt_sin``: ``h^{-1/2} sin(2 t h^{1/2})``

    The upper bound is the eigenfunction correlator of order 0, 0, 1/2, -1/2
    respectively and holds for every real ``t``.  The sampled supremum is the
    maximum over ``t_grid`` (default ``[0, 100]`` step 0.01) and is a
    diagnostic only.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown kind {kind!r}; expected one of {KINDS}")
    if kind != "evolution":
        _check_psd(s, zero_tol, kind)
    alpha = KIND_ALPHA[kind]
    bound = eigenfunction_correlator(s, alpha, x, y, window, zero_tol=zero_tol)
    sampled = float(np.max(sampled_dynamical(s, x, y, kind, window, t_grid)))
    return bound, sampled
