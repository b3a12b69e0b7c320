"""
Transfer matrices and QR-based Lyapunov exponents.

Two chains are covered:

* the *Ising* Jacobi matrix, zero diagonal with hoppings alternating
  ``nu_j`` and ``-2``; its three-term recurrence gives 2x2 one-site matrices;
* the anisotropic XY block Jacobi matrix (2x2 blocks ``nu_j J`` on the
  diagonal, ``-mu_j S(gamma_j)`` above), which gives 4x4 one-site matrices.

All exponents are per lattice site.  Products are accumulated in chunks of
``interval`` sites and re-orthogonalized by QR between chunks; the standard
error comes from splitting the run into consecutive blocks.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from mbloc.ensemble import Distribution, family_rng
from mbloc.errors import InvalidSampleError
from mbloc.xy_model import J_BLOCK, S_block

log = logging.getLogger(__name__)

MIN_STEPS = 10_000
DEFAULT_INTERVAL = 10
DEFAULT_BLOCKS = 50


@dataclass
class TransferProduct:
    """Running QR factorization of a product of transfer matrices.

    ``log_norms[i]`` is the accumulated ``log|R_ii|``; ``steps`` counts sites.
    ``blocks`` keeps per-block (log increments, steps) for error estimates.
    """

    size: int
    frame: np.ndarray
    log_norms: np.ndarray = None
    steps: int = 0
    blocks: list = field(default_factory=list)

    def __post_init__(self):
        if self.size not in (2, 4):
            raise ValueError("transfer products are 2x2 or 4x4")
        if self.log_norms is None:
            self.log_norms = np.zeros(self.size)

    @classmethod
    def random_frame(cls, size: int, rng: np.random.Generator) -> "TransferProduct":
        q, r = np.linalg.qr(rng.standard_normal((size, size)))
        return cls(size, q * np.sign(np.diag(r)))

    def feed(self, products: np.ndarray, steps_per_product: int) -> None:
        """Absorb a batch of chunk products (applied in order) as one block."""
        q = self.frame
        acc = np.zeros(self.size)
        for p in products:
            q, r = np.linalg.qr(p @ q)
            d = np.abs(np.diag(r))
            if not np.all(np.isfinite(d)) or np.any(d == 0):
                raise FloatingPointError("transfer product overflowed or collapsed; lower interval")
            acc += np.log(d)
        self.frame = q
        n = len(products) * steps_per_product
        self.log_norms = self.log_norms + acc
        self.steps += n
        self.blocks.append((acc, n))

    @property
    def exponents(self) -> np.ndarray:
        return self.log_norms / self.steps

    def block_stderr(self) -> np.ndarray:
        est = np.array([acc / n for acc, n in self.blocks])
        if len(est) < 2:
            return np.full(self.size, np.nan)
        return est.std(axis=0, ddof=1) / math.sqrt(len(est))


def chunk_products(mats: np.ndarray, interval: int) -> np.ndarray:
    """Ordered products of consecutive groups of ``interval`` matrices (later ones on the left)."""
    n = len(mats) // interval * interval
    grouped = mats[:n].reshape(-1, interval, *mats.shape[1:])
    prod = grouped[:, 0]
    for i in range(1, interval):
        prod = grouped[:, i] @ prod
    return prod


def _run(mats_for_block, n_chunks: int, interval: int, size: int,
         n_blocks: int, rng: np.random.Generator) -> TransferProduct:
    tp = TransferProduct.random_frame(size, rng)
    bounds = np.linspace(0, n_chunks, min(n_blocks, n_chunks) + 1).astype(int)
    for a, b in zip(bounds[:-1], bounds[1:]):
        if b > a:
            tp.feed(chunk_products(mats_for_block(a * interval, b * interval), interval), interval)
    return tp


# ---------------------------------------------------------------------------
# Ising chain
# ---------------------------------------------------------------------------

def ising_transfer_step(E: float, nu: float) -> tuple[np.ndarray, np.ndarray]:
    """One-site matrices across a period: the site reached over the ``nu`` bond, then over ``-2``.

    With ``u`` a solution of ``nu u[m+1] - 2 u[m-1] = E u[m]`` followed by
    ``-2 u[m+2] + nu u[m] = E u[m+1]``, ``(u[m+1], u[m]) = T_nu (u[m], u[m-1])``
    and ``(u[m+2], u[m+1]) = T_two (u[m+1], u[m])``.  The period product
    ``T_two @ T_nu`` has determinant 1.
    """
    if nu == 0:
        raise ValueError("nu = 0 hopping makes the recurrence singular")
    t_nu = np.array([[E / nu, 2.0 / nu], [1.0, 0.0]])
    t_two = np.array([[-E / 2.0, nu / 2.0], [1.0, 0.0]])
    return t_nu, t_two


def _ising_mats(E: float, nu: np.ndarray) -> np.ndarray:
    m = np.zeros((2 * len(nu), 2, 2))
    m[0::2, 0, 0] = E / nu
    m[0::2, 0, 1] = 2.0 / nu
    m[1::2, 0, 0] = -E / 2.0
    m[1::2, 0, 1] = nu / 2.0
    m[:, 1, 0] = 1.0
    return m


@dataclass(frozen=True)
class LyapunovResult:
    gamma: float
    stderr: float
    n_steps: int
    n_invalid: int = 0

    def __iter__(self):
        return iter((self.gamma, self.stderr))


def lyapunov_ising(E: float, dist: Distribution, n_steps: int, seed: int,
                   interval: int = DEFAULT_INTERVAL, n_blocks: int = DEFAULT_BLOCKS) -> LyapunovResult:
    """Leading per-site Lyapunov exponent of the Ising Jacobi matrix at energy ``E``.

    ``n_steps`` sites are consumed (rounded down to whole periods).  Draws
    with ``nu == 0`` are skipped and counted in ``n_invalid``.
    """
    if n_steps < MIN_STEPS:
        raise ValueError(f"n_steps must be >= {MIN_STEPS}")
    if interval < 1:
        raise ValueError("interval must be >= 1")
    if dist.atom_at_zero:
        log.warning("distribution %s puts mass on nu = 0; such periods are skipped", dist)
    nu = dist.sample(family_rng(seed, 0, "nu"), n_steps // 2)
    bad = nu == 0
    nu = nu[~bad]
    if len(nu) * 2 < interval:
        raise InvalidSampleError("no usable nu draws")
    mats = _ising_mats(float(E), nu)
    frame_rng = family_rng(seed, 0, "frame")
    tp = _run(lambda a, b: mats[a:b], len(mats) // interval, interval, 2, n_blocks, frame_rng)
    g = float(tp.exponents[0])
    se = float(tp.block_stderr()[0])
    if E == 0 and not se < 0.25 * abs(g):
        log.warning("slow convergence at E=0: gamma=%.4g stderr=%.3g", g, se)
    return LyapunovResult(g, se, tp.steps, int(bad.sum()))


def gamma_zero(dist: Distribution) -> float:
    """Closed-form comparison value ``|E log(|nu|/2)| / 2`` at zero energy."""
    if dist.kind == "point":
        return 0.5 * abs(math.log(abs(dist.params[0]) / 2))
    if dist.kind == "twopoint":
        v1, v2, p = dist.params
        return 0.5 * abs(p * math.log(abs(v1) / 2) + (1 - p) * math.log(abs(v2) / 2))
    lo, hi = dist.support

    def antider(x):          # integral of log(|x|/2)
        return 0.0 if x == 0 else x * math.log(abs(x) / 2) - x

    return 0.5 * abs((antider(hi) - antider(lo)) / (hi - lo))


# ---------------------------------------------------------------------------
# anisotropic XY chain
# ---------------------------------------------------------------------------

def block_transfer_step(E: float, mu: float, gamma: float, nu: float,
                        mu_prev: Optional[float] = None,
                        gamma_prev: Optional[float] = None) -> np.ndarray:
    """4x4 matrix with ``(u[j+1], u[j]) = T (u[j], u[j-1])``.

    Row ``j`` of the block recurrence reads
    ``-mu_{j-1} S_{j-1}^T u[j-1] + nu_j J u[j] - mu_j S_j u[j+1] = E u[j]``.
    The previous bond defaults to the current one.
    """
    mu_prev = mu if mu_prev is None else mu_prev
    gamma_prev = gamma if gamma_prev is None else gamma_prev
    if abs(abs(gamma) - 1) < 1e-12 or mu == 0:
        raise ValueError("|gamma| = 1 makes S(gamma) singular; use lyapunov_ising for the Ising chain")
    inv = np.linalg.inv(mu * S_block(gamma))
    t = np.zeros((4, 4))
    t[:2, :2] = inv @ (nu * J_BLOCK - E * np.eye(2))
    t[:2, 2:] = -inv @ (mu_prev * S_block(gamma_prev).T)
    t[2:, :2] = np.eye(2)
    return t


def _block_mats(E: float, mu: np.ndarray, g: np.ndarray, nu: np.ndarray,
                mu_prev: np.ndarray, g_prev: np.ndarray) -> np.ndarray:
    # S(g)^2 = (1 - g^2) I
    det = 1 - g ** 2
    inv = np.empty((len(mu), 2, 2))
    inv[:, 0, 0] = 1 / (mu * det)
    inv[:, 0, 1] = g / (mu * det)
    inv[:, 1, 0] = -g / (mu * det)
    inv[:, 1, 1] = -1 / (mu * det)
    diag = np.zeros((len(mu), 2, 2))
    diag[:, 0, 0] = nu - E
    diag[:, 1, 1] = -nu - E
    back = np.empty((len(mu), 2, 2))        # mu_prev S(g_prev)^T
    back[:, 0, 0] = mu_prev
    back[:, 0, 1] = -mu_prev * g_prev
    back[:, 1, 0] = mu_prev * g_prev
    back[:, 1, 1] = -mu_prev
    t = np.zeros((len(mu), 4, 4))
    t[:, :2, :2] = inv @ diag
    t[:, :2, 2:] = -inv @ back
    t[:, 2, 0] = t[:, 3, 1] = 1.0
    return t


@dataclass(frozen=True)
class LyapunovSpectrum:
    exponents: np.ndarray
    stderr: np.ndarray
    n_steps: int

    def __iter__(self):
        return iter((self.exponents, self.stderr))

    def pair_sums(self) -> tuple[tuple[float, float], tuple[float, float]]:
        """``(l1 + l4, se)`` and ``(l2 + l3, se)``; errors added in quadrature."""
        e, s = self.exponents, self.stderr
        return ((float(e[0] + e[3]), float(math.hypot(s[0], s[3]))),
                (float(e[1] + e[2]), float(math.hypot(s[1], s[2]))))


def lyapunov_block(E: float, dists: Mapping[str, Distribution], n_steps: int, seed: int,
                   interval: int = DEFAULT_INTERVAL, n_blocks: int = DEFAULT_BLOCKS) -> LyapunovSpectrum:
    """All four per-site exponents of the XY block operator, sorted descending.

    ``dists`` maps ``mu``, ``gamma`` and ``nu`` to distributions.
    """
    if n_steps < MIN_STEPS:
        raise ValueError(f"n_steps must be >= {MIN_STEPS}")
    for name in ("mu", "gamma", "nu"):
        if name not in dists:
            raise KeyError(f"missing distribution for {name!r}")
    lo, hi = dists["gamma"].support
    if (lo <= 1 <= hi or lo <= -1 <= hi) and not dists["gamma"].absolutely_continuous:
        raise ValueError("gamma distribution reaches |gamma| = 1; use lyapunov_ising for the Ising chain")
    draws = {k: dists[k].sample(family_rng(seed, 0, k), n_steps + 1) for k in ("mu", "gamma", "nu")}
    mu, g, nu = draws["mu"], draws["gamma"], draws["nu"]
    if np.any(mu == 0) or np.any(np.abs(np.abs(g) - 1) < 1e-12):
        raise InvalidSampleError("drawn hopping block is singular")

    def mats(a, b):
        s = slice(a + 1, b + 1)
        p = slice(a, b)
        return _block_mats(float(E), mu[s], g[s], nu[s], mu[p], g[p])

    tp = _run(mats, n_steps // interval, interval, 4, n_blocks, family_rng(seed, 0, "frame"))
    exps = tp.exponents
    se = tp.block_stderr()
    order = np.argsort(-exps, kind="stable")
    return LyapunovSpectrum(exps[order], se[order], tp.steps)
