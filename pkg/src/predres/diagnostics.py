"""Distances and Monte Carlo harnesses for checking the convergence theory.

Everything here is a pure function of its arguments and an explicit seed.
Path ``i`` of any multi-path experiment draws from ``rng_substream(seed, i,
step)`` with an experiment-specific ``step`` key, so paths can be computed in
any grouping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, stats

from . import copula as cp
from . import meanvar as mv
from .copula import CopulaFamily, CopulaPredictiveState, GriddedDensity
from .kernels import GaussianKernel, KernelSpec
from .meanvar import MeanVarFamily, SufficientStats
from .streams import rng_substream

__all__ = [
    "l1_distance",
    "tv_from_grid",
    "tv_gaussian_1d",
    "default_checkpoints",
    "convergence_path",
    "convergence_paths",
    "stabilization_index",
    "rate_distances",
    "rate_experiment",
    "MartingaleReport",
    "martingale_report",
    "copula_jump_series",
    "CopulaMartingaleReport",
    "copula_martingale_check",
    "pit_uniformity",
    "reach_copula_state",
]

PATH_STEP = 2
RATE_STEP = 3
MARTINGALE_STEP = 4
JUMP_STEP = 5


def _check_same_grid(f: GriddedDensity, g: GriddedDensity):
    if not f.same_grid(g):
        raise ValueError("densities live on different grids")


def l1_distance(f: GriddedDensity, g: GriddedDensity) -> float:
    """Trapezoid integral of ``|f - g|``."""
    _check_same_grid(f, g)
    return float(np.abs(f.density - g.density) @ cp._trap_weights(f.grid))


def tv_from_grid(f: GriddedDensity, g: GriddedDensity) -> float:
    """Total variation from tabulated densities: the mass of ``f - g`` on ``{f > g}``."""
    _check_same_grid(f, g)
    return float(np.maximum(f.density - g.density, 0.0) @ cp._trap_weights(f.grid))


def _crossings(m1, v1, m2, v2):
    # roots of log phi_1 = log phi_2, a quadratic when v1 != v2
    a = 0.5 / v2 - 0.5 / v1
    b = m1 / v1 - m2 / v2
    c = 0.5 * m2 * m2 / v2 - 0.5 * m1 * m1 / v1 + 0.5 * math.log(v2 / v1)
    disc = b * b - 4 * a * c
    if disc < 0:
        return []
    r = math.sqrt(disc)
    return sorted([(-b - r) / (2 * a), (-b + r) / (2 * a)])


def tv_gaussian_1d(m1: float, v1: float, m2: float, v2: float) -> float:
    """Total variation distance between ``N(m1, v1)`` and ``N(m2, v2)``.

    Closed form for equal variances; otherwise adaptive quadrature of
    ``|phi_1 - phi_2| / 2`` split at the density crossings.
    """
    if not (v1 > 0 and v2 > 0):
        raise ValueError("variances must be positive")
    if v1 == v2:
        return float(2.0 * stats.norm.cdf(abs(m1 - m2) / (2.0 * math.sqrt(v1))) - 1.0)
    s1, s2 = math.sqrt(v1), math.sqrt(v2)
    lo = min(m1 - 40 * s1, m2 - 40 * s2)
    hi = max(m1 + 40 * s1, m2 + 40 * s2)
    pts = [x for x in _crossings(m1, v1, m2, v2) if lo < x < hi]
    pts += [m1, m2]
    pts = sorted(set(pts))

    def integrand(x):
        return abs(math.exp(-0.5 * (x - m1) ** 2 / v1) / s1 - math.exp(-0.5 * (x - m2) ** 2 / v2) / s2)

    edges = [lo] + pts + [hi]
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        val, _ = integrate.quad(integrand, a, b, epsabs=1e-12, epsrel=1e-10, limit=200)
        total += val
    return float(min(1.0, 0.5 * total / math.sqrt(2 * math.pi)))


# --------------------------------------------------------------------------
# convergence paths


def default_checkpoints(n_max: int, per_decade: int = 100) -> np.ndarray:
    """``0, 1, ..., 100`` followed by roughly geometric spacing up to ``n_max``."""
    if n_max < 0:
        raise ValueError("n_max must be nonnegative")
    head = np.arange(0, min(n_max, 100) + 1)
    if n_max <= 100:
        return head
    k = int(math.ceil(per_decade * math.log10(n_max / 100.0)))
    tail = np.unique(np.round(np.geomspace(100, n_max, k + 1)).astype(int))
    return np.unique(np.concatenate([head, tail, [n_max]]))


def _checkpoint_array(checkpoints, n_max):
    cps = np.asarray(checkpoints, dtype=int).reshape(-1)
    if cps.size == 0 or np.any(np.diff(cps) <= 0) or cps[0] < 0 or cps[-1] > n_max:
        raise ValueError("checkpoints must be increasing integers in [0, n_max]")
    return cps


def _meanvar_paths(family: MeanVarFamily, n_max, cps, seed, reps, grid):
    kernel = family.kernel
    if kernel.dim != 1:
        raise ValueError("convergence paths are univariate")
    f0 = kernel.pdf(grid[:, None])
    wts = cp._trap_weights(grid)
    out = np.zeros((len(reps), cps.size))
    z = np.stack([kernel.sample(rng_substream(seed, i, PATH_STEP), n_max)[:, 0] for i in reps]) \
        if n_max else np.zeros((len(reps), 0))
    _, M, Q = mv.forward_1d(0, 0.0, 1.0, family.mode, z)
    for k, n in enumerate(cps):
        if n == 0:
            continue
        if n == 1:
            loc, scale = M[:, 0], np.ones(len(reps))
        else:
            loc, scale = M[:, n - 1], np.sqrt(Q[:, n - 1])
        for i in range(len(reps)):
            if scale[i] > 0:
                fn = kernel.pdf(((grid - loc[i]) / scale[i])[:, None]) / scale[i]
                out[i, k] = np.abs(fn - f0) @ wts
            else:
                out[i, k] = 2.0
    return out


def _copula_paths(family: CopulaFamily, n_max, cps, seed, reps, grid, rho):
    base = GriddedDensity.standard_normal(grid)
    wts = cp._trap_weights(grid)
    P = len(reps)
    u = np.stack([rng_substream(seed, i, PATH_STEP).random(n_max) for i in reps]) \
        if n_max else np.zeros((P, 0))
    f = np.tile(base.density, (P, 1))
    F = np.tile(base.cdf, (P, 1))
    out = np.zeros((P, cps.size))
    r = cp.weight(family.schedule, np.arange(n_max)) if n_max else []
    k = 0
    for n in range(n_max + 1):
        if k < cps.size and cps[k] == n:
            out[:, k] = np.abs(f - base.density) @ wts
            k += 1
        if n == n_max:
            break
        x = cp._inverse_rows(F, grid, u[:, n])
        f, F = cp._update_rows(f, F, grid, wts, rho, r[n], x)
    return out


def convergence_paths(family, n_max: int, checkpoints=None, reps: int = 1, seed: int = 0,
                      grid=None, first: int = 0, block: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """L1 distance to ``f_0`` along ``reps`` self-generated paths started from ``f_0``.

    Returns ``(checkpoints, distances)`` with ``distances`` of shape
    ``(reps, len(checkpoints))``.  Path ``i`` uses replicate index
    ``first + i``.  The copula family needs a fixed ``rho``.
    """
    cps = default_checkpoints(n_max) if checkpoints is None else _checkpoint_array(checkpoints, n_max)
    if isinstance(family, CopulaFamily):
        if family.rho is None:
            raise ValueError("convergence paths need a fixed rho")
        g = family.grid() if grid is None else np.asarray(grid, dtype=float)
    elif isinstance(family, MeanVarFamily):
        g = cp.make_grid() if grid is None else np.asarray(grid, dtype=float)
    else:
        raise TypeError("family must be a MeanVarFamily or a CopulaFamily")
    ids = list(range(first, first + reps))
    parts = []
    for a in range(0, reps, block):
        chunk = ids[a:a + block]
        if isinstance(family, CopulaFamily):
            parts.append(_copula_paths(family, n_max, cps, seed, chunk, g, family.rho))
        else:
            parts.append(_meanvar_paths(family, n_max, cps, seed, chunk, g))
    return cps, np.vstack(parts)


def convergence_path(family, n_max: int, checkpoints=None, seed: int = 0, grid=None):
    """Single-path version of :func:`convergence_paths`; returns ``(n, value)`` pairs."""
    cps, d = convergence_paths(family, n_max, checkpoints, 1, seed, grid)
    return list(zip(cps.tolist(), d[0].tolist()))


def stabilization_index(ns, values, delta: float = 0.05) -> int:
    """First checkpoint after which the path stays within ``delta`` of its final value."""
    ns = np.asarray(ns)
    v = np.asarray(values, dtype=float)
    far = np.abs(v - v[-1]) > delta
    if not far.any():
        return int(ns[0])
    last = int(np.flatnonzero(far)[-1])
    return int(ns[min(last + 1, ns.size - 1)])


# --------------------------------------------------------------------------
# rate of convergence


def rate_distances(n_list, reps: int = 200, seed: int = 0, kernel: KernelSpec | None = None,
                   limit_factor: int = 100, mode: str = "empirical", chunk: int = 20000) -> np.ndarray:
    """TV between ``alpha_n`` and a far-out proxy of the limit, per path and ``n``.

    Each Gaussian path starts from ``alpha_0`` and is run to
    ``limit_factor * max(n_list)`` steps; the proxy limit is the predictive at
    that point.  Returns an array of shape ``(reps, len(n_list))``.
    """
    kernel = GaussianKernel() if kernel is None else kernel
    if not isinstance(kernel, GaussianKernel) or kernel.dim != 1:
        raise ValueError("the rate experiment uses the univariate Gaussian kernel")
    ns = np.asarray(n_list, dtype=int)
    if ns.size == 0 or np.any(np.diff(ns) <= 0) or ns[0] < 2:
        raise ValueError("n_list must be increasing integers >= 2")
    n_lim = int(limit_factor * ns[-1])
    gens = [rng_substream(seed, i, RATE_STEP) for i in range(reps)]
    mean = np.zeros(reps)
    var = np.ones(reps)
    n = 0
    at = {}
    while n < n_lim:
        T = min(chunk, n_lim - n)
        z = np.stack([g.standard_normal(T) for g in gens])
        _, M, Q = mv.forward_1d(n, mean, var, mode, z)
        for target in ns:
            if n < target <= n + T:
                at[int(target)] = (M[:, target - n - 1].copy(), Q[:, target - n - 1].copy())
        mean, var = M[:, -1].copy(), Q[:, -1].copy()
        n += T
    out = np.empty((reps, ns.size))
    for j, target in enumerate(ns):
        Mn, Qn = at[int(target)]
        for i in range(reps):
            out[i, j] = tv_gaussian_1d(Mn[i], Qn[i], mean[i], var[i])
    return out


def rate_experiment(n_list, gamma: float, reps: int = 200, seed: int = 0, kernel=None,
                    distances: np.ndarray | None = None, **kw) -> list[tuple[int, float]]:
    """Median over paths of ``n^gamma * TV(alpha_n, alpha_limit)`` for each ``n``.

    Pass ``distances`` from :func:`rate_distances` to reuse paths across
    several ``gamma`` values.
    """
    ns = np.asarray(n_list, dtype=int)
    d = rate_distances(ns, reps, seed, kernel, **kw) if distances is None else np.asarray(distances)
    med = np.median(ns[None, :].astype(float) ** gamma * d, axis=0)
    return list(zip(ns.tolist(), med.tolist()))


# --------------------------------------------------------------------------
# martingale checks


@dataclass
class MartingaleReport:
    n: int
    draws: int
    mean_estimate: np.ndarray
    mean_target: np.ndarray
    mean_z: np.ndarray
    cov_estimate: np.ndarray
    cov_target: np.ndarray
    cov_z: np.ndarray
    threshold: float = 4.0

    @property
    def max_abs_z(self) -> float:
        iu = np.triu_indices(self.cov_z.shape[0])
        return float(max(np.max(np.abs(self.mean_z)), np.max(np.abs(self.cov_z[iu]))))

    @property
    def passed(self) -> bool:
        return self.max_abs_z < self.threshold


def martingale_report(kernel: KernelSpec, history: SufficientStats, draws: int = 100_000,
                      seed: int = 0, threshold: float = 4.0) -> MartingaleReport:
    """Monte Carlo check of ``E(M_{n+1}) = M_n`` and ``E(Q_{n+1}) = Q_n (1 - 1/(n+1)^2)``.

    Only the first two moments of the kernel enter the targets, so any
    standardized kernel may be used.
    """
    if history.n < 1 or history.singular:
        raise ValueError("history must have n >= 1 and a nonsingular covariance")
    if kernel.dim != history.p:
        raise ValueError("kernel and history dimensions differ")
    n = history.n
    rng = rng_substream(seed, 0, MARTINGALE_STEP)
    z = kernel.sample(rng, draws).reshape(draws, -1)
    dev = z @ history.chol.T
    M1 = history.mean + dev / (n + 1.0)
    Q1 = (n / (n + 1.0)) * history.cov[None] + (n / (n + 1.0) ** 2) * dev[:, :, None] * dev[:, None, :]
    se = lambda a: a.std(axis=0, ddof=1) / math.sqrt(draws)  # noqa: E731
    m_est = M1.mean(axis=0)
    m_tar = history.mean.copy()
    q_est = Q1.mean(axis=0)
    q_tar = history.cov * (1.0 - 1.0 / (n + 1.0) ** 2)
    return MartingaleReport(n, draws, m_est, m_tar, (m_est - m_tar) / se(M1), q_est, q_tar,
                            (q_est - q_tar) / se(Q1), threshold)


def reach_copula_state(rho: float, schedule, steps: int, seed: int = 0, grid=None) -> CopulaPredictiveState:
    """State after ``steps`` self-generated updates from the standard-normal start."""
    st = cp.initial_state(rho, schedule, grid)
    rng = rng_substream(seed, 0, JUMP_STEP)
    for _ in range(steps):
        st = cp.copula_update(st, cp.sample_inverse(st, rng))
    return st


def copula_jump_series(rho: float, schedule, n_max: int, reps: int = 1, seed: int = 0,
                       grid=None, n_start: int = 0) -> np.ndarray:
    """``D_n`` along ``reps`` self-generated copula paths, shape ``(reps, n_max - n_start)``.

    Column ``k`` holds ``D_{n_start + k}``, the L1 distance between the
    predictives before and after absorbing observation ``n_start + k + 1``.
    """
    g = cp.make_grid() if grid is None else np.asarray(grid, dtype=float)
    base = GriddedDensity.standard_normal(g)
    wts = cp._trap_weights(g)
    gens = [rng_substream(seed, i, JUMP_STEP) for i in range(reps)]
    u = np.stack([gen.random(n_max) for gen in gens])
    f = np.tile(base.density, (reps, 1))
    F = np.tile(base.cdf, (reps, 1))
    r = cp.weight(schedule, np.arange(n_max))
    out = np.zeros((reps, max(0, n_max - n_start)))
    for n in range(n_max):
        x = cp._inverse_rows(F, g, u[:, n])
        f_new, F = cp._update_rows(f, F, g, wts, rho, r[n], x)
        if n >= n_start:
            out[:, n - n_start] = np.abs(f_new - f) @ wts
        f = f_new
    return out


@dataclass
class CopulaMartingaleReport:
    nodes: np.ndarray
    before: np.ndarray
    average: np.ndarray
    se: np.ndarray
    draws: int
    threshold: float = 3.0
    z: np.ndarray = field(init=False)

    def __post_init__(self):
        self.z = (self.average - self.before) / self.se

    @property
    def passed(self) -> bool:
        return bool(np.all(np.abs(self.z) < self.threshold))


def copula_martingale_check(state: CopulaPredictiveState, nodes, draws: int = 10_000, seed: int = 0,
                            threshold: float = 3.0, block: int = 500) -> CopulaMartingaleReport:
    """Average of the one-step-updated density at ``nodes`` over fresh draws from the state.

    The conditional expectation of ``f_{n+1}`` equals ``f_n``; the report
    holds the Monte Carlo average, its standard error and the z-scores.
    """
    d = state.density
    g = d.grid
    idx = np.array([int(np.argmin(np.abs(g - x))) for x in np.atleast_1d(nodes)])
    wts = cp._trap_weights(g)
    r = cp.weight(state.weights, state.step)
    gen = rng_substream(seed, 0, MARTINGALE_STEP)
    u = gen.random(draws)
    vals = np.empty((draws, idx.size))
    for a in range(0, draws, block):
        ub = u[a:a + block]
        P = ub.shape[0]
        F = np.broadcast_to(d.cdf, (P, g.size))
        x = cp._inverse_rows(F, g, ub)
        f_new, _ = cp._update_rows(np.broadcast_to(d.density, (P, g.size)), F, g, wts, state.rho, r, x)
        vals[a:a + P] = f_new[:, idx]
    avg = vals.mean(axis=0)
    se = vals.std(axis=0, ddof=1) / math.sqrt(draws)
    return CopulaMartingaleReport(g[idx], d.density[idx], avg, se, draws, threshold)


def pit_uniformity(state: CopulaPredictiveState, draws: int = 10_000, seed: int = 0) -> float:
    """KS p-value of ``F_n(X)`` against Uniform(0, 1) for ``X`` drawn from the state."""
    gen = rng_substream(seed, 1, MARTINGALE_STEP)
    x = cp.sample_inverse(state, gen, draws)
    pit = state.density.cdf_at(x)
    return float(stats.kstest(pit, "uniform").pvalue)
