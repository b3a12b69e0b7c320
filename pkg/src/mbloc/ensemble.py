"""
Disorder ensembles: distributions, reproducible sampling, Monte Carlo
averages and exponential / stretched-exponential decay fits.

Every draw is a pure function of ``(master seed, sample index, coefficient
family)``: a sub-seed is derived through :class:`numpy.random.SeedSequence`
with a fixed hash of the family name in the spawn key.  Results are therefore
independent of how samples are spread over workers.
"""

from __future__ import annotations

import hashlib
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
import scipy.stats

from mbloc.errors import InvalidSampleError, SingularSpectrumError
from mbloc.single_particle import EffectiveOperator, SpectralData, decompose

log = logging.getLogger(__name__)

FLOOR = 1e-14
ZETA_GRID = tuple(round(0.1 * k, 10) for k in range(1, 11))


# ---------------------------------------------------------------------------
# distributions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Distribution:
    """Disorder law of one coefficient family.

    kinds: ``point`` (v), ``uniform`` (a, b), ``twopoint`` (v1, v2, p = P(v1)),
    ``scaled`` (mu, a, b: mu times Uniform(a, b)).
    """

    kind: str
    params: tuple

    def __post_init__(self):
        p = tuple(float(x) for x in self.params)
        object.__setattr__(self, "params", p)
        need = {"point": 1, "uniform": 2, "twopoint": 3, "scaled": 3}
        if self.kind not in need:
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if len(p) != need[self.kind]:
            raise ValueError(f"{self.kind} takes {need[self.kind]} parameters, got {len(p)}")
        if self.kind == "uniform" and not p[0] < p[1]:
            raise ValueError("uniform requires a < b")
        if self.kind == "scaled" and not p[1] < p[2]:
            raise ValueError("scaled uniform requires a < b")
        if self.kind == "twopoint" and not 0 <= p[2] <= 1:
            raise ValueError("twopoint probability must lie in [0, 1]")

    @classmethod
    def point(cls, v: float) -> "Distribution":
        return cls("point", (v,))

    @classmethod
    def uniform(cls, a: float, b: float) -> "Distribution":
        return cls("uniform", (a, b))

    @classmethod
    def twopoint(cls, v1: float, v2: float, p: float = 0.5) -> "Distribution":
        return cls("twopoint", (v1, v2, p))

    @classmethod
    def scaled(cls, mu: float, a: float = 0.0, b: float = 1.0) -> "Distribution":
        return cls("scaled", (mu, a, b))

    @classmethod
    def parse(cls, text: str | float | Mapping) -> "Distribution":
        """Parse ``"uniform:0:4"``, ``"point:2"``, ``"twopoint:1:3:0.5"``,
        ``"scaled:10:0:1"``, a bare number (point mass) or a mapping
        ``{kind: ..., params: [...]}``."""
        if isinstance(text, Mapping):
            return cls(str(text["kind"]), tuple(text["params"]))
        if isinstance(text, (int, float)):
            return cls.point(float(text))
        parts = str(text).strip().split(":")
        if len(parts) == 1:
            return cls.point(float(parts[0]))
        return cls(parts[0].lower(), tuple(float(x) for x in parts[1:]))

    def __str__(self) -> str:
        return ":".join([self.kind] + [repr(x) for x in self.params])

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        p = self.params
        if self.kind == "point":
            return np.full(size, p[0])
        if self.kind == "uniform":
            return rng.uniform(p[0], p[1], size)
        if self.kind == "twopoint":
            return np.where(rng.random(size) < p[2], p[0], p[1])
        return p[0] * rng.uniform(p[1], p[2], size)

    @property
    def mean(self) -> float:
        p = self.params
        if self.kind == "point":
            return p[0]
        if self.kind == "uniform":
            return 0.5 * (p[0] + p[1])
        if self.kind == "twopoint":
            return p[2] * p[0] + (1 - p[2]) * p[1]
        return p[0] * 0.5 * (p[1] + p[2])

    @property
    def support(self) -> tuple[float, float]:
        p = self.params
        if self.kind == "point":
            return p[0], p[0]
        if self.kind == "uniform":
            return p[0], p[1]
        if self.kind == "twopoint":
            return min(p[0], p[1]), max(p[0], p[1])
        lo, hi = p[0] * p[1], p[0] * p[2]
        return min(lo, hi), max(lo, hi)

    @property
    def absolutely_continuous(self) -> bool:
        return self.kind in ("uniform", "scaled") and (self.kind != "scaled" or self.params[0] != 0)

    @property
    def bounded_nonnegative(self) -> bool:
        """Bounded density with compact support in ``[0, inf)``."""
        return self.absolutely_continuous and self.support[0] >= 0

    @property
    def atom_at_zero(self) -> bool:
        """Positive probability of drawing exactly 0."""
        p = self.params
        if self.kind == "point":
            return p[0] == 0
        if self.kind == "twopoint":
            return (p[0] == 0 and p[2] > 0) or (p[1] == 0 and p[2] < 1)
        return self.kind == "scaled" and p[0] == 0


# ---------------------------------------------------------------------------
# seeding and sampling
# ---------------------------------------------------------------------------

def family_tag(name: str) -> int:
    """Stable 32-bit tag of a coefficient family name."""
    return int.from_bytes(hashlib.sha256(name.encode()).digest()[:4], "little")


def family_rng(seed: int, index: int, family: str) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index), family_tag(family)))
    return np.random.default_rng(ss)


@dataclass(frozen=True)
class EnsembleSpec:
    """Distributions per coefficient family, sample count and master seed."""

    dists: Mapping[str, Distribution]
    n_samples: int
    seed: int
    quantity: str = ""
    params: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")


def sample_coefficients(spec: EnsembleSpec, sample_index: int,
                        sizes: Mapping[str, int]) -> dict[str, np.ndarray]:
    """Draw every family in ``sizes`` for one disorder sample.

    Site ``j`` of family ``f`` is the ``j``-th draw of the stream keyed by
    ``(seed, sample_index, f)``, so it does not depend on the other families
    or on the number of workers.
    """
    out = {}
    for name in sorted(sizes):
        if name not in spec.dists:
            raise KeyError(f"no distribution given for coefficient family {name!r}")
        rng = family_rng(spec.seed, sample_index, name)
        out[name] = spec.dists[name].sample(rng, int(sizes[name]))
    return out


@dataclass
class EnsembleResult:
    """Per-slot mean and standard error over valid samples (``nan`` stderr if fewer than 2)."""

    mean: np.ndarray
    stderr: np.ndarray
    n_valid: int
    n_invalid: int
    invalid: list = field(default_factory=list)
    values: Optional[np.ndarray] = field(default=None, repr=False)


def default_workers() -> int:
    return os.cpu_count() or 1


def _evaluate(diagnostic, spec, sizes, i):
    coeffs = sample_coefficients(spec, i, sizes)
    try:
        return np.atleast_1d(np.asarray(diagnostic(coeffs), dtype=float)), None
    except (InvalidSampleError, SingularSpectrumError) as exc:
        return None, f"sample {i}: {exc}"


def expectation(spec: EnsembleSpec, diagnostic: Callable[[dict], np.ndarray],
                sizes: Mapping[str, int], workers: int = 1,
                keep_values: bool = False) -> EnsembleResult:
    """Monte Carlo mean and standard error of ``diagnostic(coefficients)``.

    Samples that raise :class:`InvalidSampleError` or :class:`SingularSpectrumError`
    are counted as invalid and listed; if every sample is invalid the last
    error is re-raised as :class:`InvalidSampleError`.  Reduction is in sample
    order regardless of ``workers``.
    """
    idx = range(spec.n_samples)
    if workers <= 1:
        results = [_evaluate(diagnostic, spec, sizes, i) for i in idx]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda i: _evaluate(diagnostic, spec, sizes, i), idx))
    good = [v for v, err in results if err is None]
    bad = [err for v, err in results if err is not None]
    for msg in bad:
        log.warning("invalid %s", msg)
    if not good:
        raise InvalidSampleError(f"all {spec.n_samples} samples invalid; last: {bad[-1]}")
    vals = np.stack(good)
    mean = vals.mean(axis=0)
    if len(good) > 1:
        stderr = vals.std(axis=0, ddof=1) / math.sqrt(len(good))
    else:
        stderr = np.full_like(mean, np.nan)
    return EnsembleResult(mean, stderr, len(good), len(bad), bad, vals if keep_values else None)


# ---------------------------------------------------------------------------
# decay fits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DecayFit:
    """``q ~ C exp(-eta r^zeta)`` from least squares on ``(r^zeta, log q)``."""

    C: float
    eta: float
    zeta: float
    residual: float
    r_range: tuple
    eta_stderr: float
    n_points: int
    n_floored: int = 0

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError("DecayFit prefactor must be positive")
        if self.residual < 0:
            raise ValueError("residual must be non-negative")

    def predict(self, r) -> np.ndarray:
        return self.C * np.exp(-self.eta * np.asarray(r, dtype=float) ** self.zeta)

    def as_dict(self) -> dict:
        return {
            "C": self.C, "eta": self.eta, "zeta": self.zeta, "residual": self.residual,
            "r_range": list(self.r_range), "eta_stderr": self.eta_stderr,
            "n_points": self.n_points, "n_floored": self.n_floored,
        }


def _fit_fixed(r: np.ndarray, logq: np.ndarray, zeta: float):
    x = r ** zeta
    res = scipy.stats.linregress(x, logq)
    pred = res.intercept + res.slope * x
    rms = float(np.sqrt(np.mean((logq - pred) ** 2)))
    return res, rms


def fit_decay(points: Sequence[tuple[float, float]], zeta: float | str = 1.0,
              r_range: Optional[tuple[float, float]] = None,
              floor: Optional[float] = None) -> DecayFit:
    """Fit ``log q = log C - eta r^zeta``.

    ``zeta="free"`` scans ``0.1, 0.2, ..., 1.0`` and keeps the smallest RMS
    residual.  Points outside ``r_range`` (inclusive) are dropped.  Without a
    ``floor`` a non-positive value raises ``ValueError``; with one, values
    below it are raised to it and counted in ``n_floored``.
    """
    pts = sorted((float(r), float(q)) for r, q in points)
    if r_range is not None:
        pts = [(r, q) for r, q in pts if r_range[0] <= r <= r_range[1]]
    if len(pts) < 3:
        raise ValueError(f"need at least 3 points to fit, got {len(pts)}")
    r = np.array([p[0] for p in pts])
    q = np.array([p[1] for p in pts])
    if len(np.unique(r)) != len(r):
        raise ValueError("distances must be distinct")
    n_floored = 0
    if floor is not None:
        low = q < floor
        n_floored = int(low.sum())
        q = np.where(low, floor, q)
    elif np.any(q <= 0):
        raise ValueError("non-positive values cannot be log-fitted; pass floor= or exclude them")
    logq = np.log(q)
    grid = ZETA_GRID if zeta == "free" else (float(zeta),)
    best = None
    for z in grid:
        res, rms = _fit_fixed(r, logq, z)
        if best is None or rms < best[2] - 1e-15:
            best = (z, res, rms)
    z, res, rms = best
    return DecayFit(
        C=float(np.exp(res.intercept)), eta=float(-res.slope), zeta=z, residual=rms,
        r_range=(float(r[0]), float(r[-1])), eta_stderr=float(res.stderr),
        n_points=len(r), n_floored=n_floored,
    )


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    stderr: float
    intercept: float

    @property
    def consistent_with_zero(self) -> bool:
        """``|slope| <= 2 stderr``."""
        return abs(self.slope) <= 2 * self.stderr


def fit_slope(x: Sequence[float], y: Sequence[float]) -> SlopeFit:
    """Ordinary least-squares line; ``stderr`` is the usual slope standard error."""
    res = scipy.stats.linregress(np.asarray(x, float), np.asarray(y, float))
    return SlopeFit(float(res.slope), float(res.stderr), float(res.intercept))


# ---------------------------------------------------------------------------
# models and experiments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Model:
    """A disordered single-particle operator: family sizes plus a builder."""

    name: str
    sizes: Mapping[str, int]
    build: Callable[[dict], EffectiveOperator]
    linear_size: int
    meta: Mapping = field(default_factory=dict)


def xy_model(n: int) -> Model:
    """XY chain of ``n`` spins; families ``mu``, ``gamma`` (n-1) and ``nu`` (n)."""
    from mbloc.xy_model import XYParams, build_effective

    def build(c):
        return build_effective(XYParams(c["mu"], c["gamma"], c["nu"]))

    return Model("xy", {"mu": n - 1, "gamma": n - 1, "nu": n}, build, n, {"n": n})


def oscillator_model(d: int, L: int, coupling: float = 1.0) -> Model:
    """Oscillator lattice ``[-L, L]^d``; family ``k`` holds the spring constants."""
    from mbloc.oscillator import OscillatorLattice, build_lattice_operator

    n_sites = (2 * L + 1) ** d

    def build(c):
        return build_lattice_operator(OscillatorLattice(d, L, c["k"], coupling))

    return Model("oscillator", {"k": n_sites}, build, 2 * L + 1, {"d": d, "L": L, "coupling": coupling})


def default_pairs(model: Model) -> list[tuple[int, int]]:
    """Reference site a quarter of the way along the first axis, partners at r = 0..N/2."""
    N = model.linear_size
    if model.name == "xy":
        x0 = N // 4
        return [(x0, x0 + r) for r in range(N // 2 + 1) if x0 + r < N]
    d, L = model.meta["d"], model.meta["L"]
    stride = (2 * L + 1) ** (d - 1)
    centre = (N ** d) // 2 - (N // 2) * stride     # first coordinate -L, others 0
    x0 = N // 4
    return [(centre + x0 * stride, centre + (x0 + r) * stride) for r in range(N // 2 + 1) if x0 + r < N]


PairDiagnostic = Callable[[SpectralData], np.ndarray]


def pair_diagnostic(kind: str, **kw) -> PairDiagnostic:
    """Named diagnostics returning a full ``(n_sites, n_sites)`` matrix of values.

    ``dynloc``: block eigenfunction correlator (XY) or Weyl commutator
    majorant (oscillator); ``correlator``: ``Q_alpha`` with optional window;
    ``gs-corr``: ground state Weyl correlation bound; ``thermal-corr``:
    ``|phi_beta(h)_xy|``.
    """
    from mbloc import oscillator as osc
    from mbloc.single_particle import correlator_matrix

    window = kw.get("window")
    if kind == "dynloc":
        def f(s):
            if s.block_size == 2:
                return correlator_matrix(s, 0.0, window)
            return osc.weyl_bound_matrix(s)
    elif kind == "correlator":
        alpha = float(kw.get("alpha", 0.0))
        def f(s):
            return correlator_matrix(s, alpha, window)
    elif kind == "gs-corr":
        def f(s):
            return osc.ground_bound_matrix(s)
    elif kind == "thermal-corr":
        beta = float(kw["beta"])
        def f(s):
            return np.abs(osc.thermal_phi_matrix(s, beta))
    else:
        raise ValueError(f"unknown pair diagnostic {kind!r}")
    return f


@dataclass
class Row:
    diagnostic: str
    mean: float
    stderr: float
    n_valid: int
    n_invalid: int
    r: Optional[int] = None
    x: Optional[str] = None
    y: Optional[str] = None
    region: Optional[str] = None
    t: Optional[float] = None
    E: Optional[float] = None
    k: Optional[int] = None


@dataclass
class ExperimentResult:
    rows: list
    fit: Optional[DecayFit] = None
    n_valid: int = 0
    n_invalid: int = 0
    invalid: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)


def _label(op_labels, i):
    lab = op_labels[i]
    if isinstance(lab, tuple):
        return str(lab[0]) if len(lab) == 1 else "(" + ",".join(str(c) for c in lab) + ")"
    return str(lab)


def dynloc_experiment(model: Model, spec: EnsembleSpec, kind: str = "dynloc",
                      site_pairs: Optional[Sequence[tuple[int, int]]] = None,
                      workers: int = 1, fit: bool = True,
                      r_range: Optional[tuple[float, float]] = None,
                      zeta: float | str = 1.0, **kw) -> ExperimentResult:
    """Sample, build, decompose, evaluate a pair diagnostic, average per distance, fit.

    Pairs sharing a 1-norm distance are averaged within each sample before the
    ensemble average.  The default fit window is ``2 <= r <= N/2`` with ``N``
    the linear size; values are floored at ``1e-14`` before the log fit.
    """
    pairs = list(site_pairs) if site_pairs is not None else default_pairs(model)
    diag = pair_diagnostic(kind, **kw)
    probe = model.build(sample_coefficients(spec, 0, model.sizes))
    dist = np.array([probe.distance(x, y) for x, y in pairs])
    rs = sorted(set(int(r) for r in dist))
    groups = [np.flatnonzero(dist == r) for r in rs]
    xi = np.array([p[0] for p in pairs])
    yi = np.array([p[1] for p in pairs])

    def per_sample(coeffs):
        s = decompose(model.build(coeffs))
        m = diag(s)
        vals = m[xi, yi]
        return np.array([vals[g].mean() for g in groups])

    res = expectation(spec, per_sample, model.sizes, workers)
    rows = []
    for r, g, mu, se in zip(rs, groups, res.mean, res.stderr):
        single = len(g) == 1
        rows.append(Row(
            spec.quantity or kind, float(mu), float(se), res.n_valid, res.n_invalid, r=r,
            x=_label(probe.site_labels, pairs[g[0]][0]) if single else None,
            y=_label(probe.site_labels, pairs[g[0]][1]) if single else None,
        ))
    out = ExperimentResult(rows, None, res.n_valid, res.n_invalid, res.invalid)
    if fit:
        window = r_range if r_range is not None else (2, model.linear_size / 2)
        pts = [(r, m) for r, m in zip(rs, res.mean) if window[0] <= r <= window[1]]
        if len(pts) >= 3:
            out.fit = fit_decay(pts, zeta=zeta, floor=FLOOR)
        else:
            log.warning("only %d distances in fit window %s; no decay fit", len(pts), window)
    return out


def region_experiment(model: Model, spec: EnsembleSpec, regions: Sequence,
                      quantity: str, workers: int = 1, beta: Optional[float] = None,
                      sum_convention: str = "interior") -> ExperimentResult:
    """Ensemble averages of a region diagnostic for each region in ``regions``.

    ``quantity``: ``negativity-bound``, ``negativity`` (exact Gaussian),
    ``entropy`` (exact Gaussian).  ``regions`` is a list of callables
    ``lattice -> Region`` so each sample rebuilds them on its own lattice.
    """
    from mbloc import oscillator as osc

    if model.name != "oscillator":
        raise ValueError("region diagnostics are defined for oscillator lattices")
    d, L, lam = model.meta["d"], model.meta["L"], model.meta["coupling"]

    def per_sample(coeffs):
        lat = osc.OscillatorLattice(d, L, coeffs["k"], lam)
        s = decompose(osc.build_lattice_operator(lat))
        regs = [mk(lat) for mk in regions]
        if quantity == "negativity-bound":
            return np.array([osc.log_negativity_bound(s, g, sum_convention) for g in regs])
        state = osc.gaussian_oracle(s, beta)
        if quantity == "entropy":
            return np.array([osc.entanglement_entropy(state, g) for g in regs])
        if quantity == "negativity":
            return np.array([osc.log_negativity_exact(state, g) for g in regs])
        raise ValueError(f"unknown region quantity {quantity!r}")

    res = expectation(spec, per_sample, model.sizes, workers)
    probe_lat = osc.OscillatorLattice(d, L, np.zeros(model.sizes["k"]), lam)
    rows = []
    for mk, mu, se in zip(regions, res.mean, res.stderr):
        g = mk(probe_lat)
        rows.append(Row(quantity, float(mu), float(se), res.n_valid, res.n_invalid,
                        r=g.size, region=f"size={g.size};boundary={g.boundary_size}"))
    return ExperimentResult(rows, None, res.n_valid, res.n_invalid, res.invalid)


def random_region_survey(n_pairs: int, seed: int, dims: Sequence[int] = (1, 2),
                         max_L: int = 3, mu: float = 1.0,
                         workers: int = 1) -> list[Row]:
    """Exact ground-state entropy and log-negativity on random (lattice, region) pairs.

    Pair ``i`` draws its dimension, size, spring constants and region from
    streams keyed by ``(seed, i)``.  Two rows per pair: ``entropy`` then
    ``negativity``; ``k`` holds the pair index.
    """
    from mbloc import oscillator as osc

    def one(i):
        g = family_rng(seed, i, "geometry")
        d = int(g.choice(list(dims)))
        L = int(g.integers(1, max_L + 1))
        lat0 = osc.OscillatorLattice(d, L, np.zeros((2 * L + 1) ** d))
        n = lat0.n_sites
        size = int(g.integers(1, n))
        sites = np.sort(g.choice(n, size, replace=False))
        k = Distribution.scaled(mu).sample(family_rng(seed, i, "k"), n)
        lat = osc.OscillatorLattice(d, L, k)
        region = osc.Region(lat, tuple(int(x) for x in sites))
        state = osc.gaussian_oracle(decompose(osc.build_lattice_operator(lat)))
        tag = f"d={d};L={L};size={size}"
        return [Row("entropy", osc.entanglement_entropy(state, region), float("nan"), 1, 0, region=tag, k=i),
                Row("negativity", osc.log_negativity_exact(state, region), float("nan"), 1, 0, region=tag, k=i)]

    if workers <= 1:
        out = [one(i) for i in range(n_pairs)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(one, range(n_pairs)))
    return [row for pair in out for row in pair]
