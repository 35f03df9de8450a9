"""Predictive resampling.

Each replicate conditions on the observed data in file order, draws ``N``
future points one at a time from the current predictive (absorbing each
draw before the next), and evaluates the estimand on the ``s + N`` points.
The ``B`` estimates form the posterior sample.

Replicate ``b`` takes all of its randomness from ``rng_substream(seed, b,
FORWARD_STEP)``, and replicates are advanced in fixed blocks of
:data:`BLOCK` rows.  Output is therefore bit-identical for any number of
worker threads.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import copula as cp
from . import meanvar as mv
from .copula import CopulaFamily, GriddedDensity
from .meanvar import MeanVarFamily
from .streams import _check_seed, rng_substream

__all__ = [
    "BLOCK",
    "ESTIMANDS",
    "ResamplingPlan",
    "PosteriorSample",
    "run_pr",
    "evaluate_estimand",
    "kde",
    "silverman_bandwidth",
    "summarize",
]

BLOCK = 256
FORWARD_STEP = 1
ESTIMANDS = ("mean", "variance")


@dataclass(frozen=True)
class ResamplingPlan:
    """Configuration of one predictive-resampling run.

    ``coordinate`` picks the component the estimand is applied to when the
    data have more than one column.
    """

    s: int
    N: int
    B: int = 1000
    estimand: str = "mean"
    family: MeanVarFamily | CopulaFamily = field(default_factory=MeanVarFamily)
    seed: int = 0
    coordinate: int = 0
    allow_degenerate: bool = False

    def __post_init__(self):
        if self.s < 1:
            raise ValueError("s must be at least 1")
        if self.N < 0:
            raise ValueError("N must be nonnegative")
        if self.B < 1:
            raise ValueError("B must be at least 1")
        if self.estimand not in ESTIMANDS:
            raise ValueError(f"estimand must be one of {ESTIMANDS}")
        if not isinstance(self.family, (MeanVarFamily, CopulaFamily)):
            raise TypeError("family must be a MeanVarFamily or a CopulaFamily")
        if self.coordinate < 0:
            raise ValueError("coordinate must be nonnegative")
        _check_seed(self.seed)

    def describe(self) -> dict:
        return {
            "s": self.s,
            "N": self.N,
            "B": self.B,
            "estimand": self.estimand,
            "seed": self.seed,
            "coordinate": self.coordinate,
            "allow_degenerate": self.allow_degenerate,
            **self.family.describe(),
        }


@dataclass
class PosteriorSample:
    thetas: np.ndarray
    summary: dict
    meta: dict = field(default_factory=dict)
    density: GriddedDensity | None = None


def evaluate_estimand(kind: str, points) -> float | np.ndarray:
    """Estimand of the last axis of ``points``: the mean, or the 1/n variance."""
    x = np.asarray(points, dtype=float)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise ValueError("estimand needs at least one point")
    m = x.mean(axis=-1, keepdims=True)
    if kind == "mean":
        out = m[..., 0]
    elif kind == "variance":
        out = np.mean((x - m) ** 2, axis=-1)
    else:
        raise ValueError(f"unknown estimand {kind!r}")
    return float(out) if np.ndim(out) == 0 else out


def summarize(ps_or_thetas) -> dict:
    """Mean, unbiased variance and linear-interpolation quantiles of the draws."""
    thetas = ps_or_thetas.thetas if isinstance(ps_or_thetas, PosteriorSample) else ps_or_thetas
    t = np.asarray(thetas, dtype=float).reshape(-1)
    if t.size == 0:
        raise ValueError("no draws to summarize")
    q = np.quantile(t, [0.05, 0.5, 0.95], method="linear")
    constant = bool(np.all(t == t[0]))
    return {
        "B": int(t.size),
        "mean": float(t[0]) if constant else float(np.mean(t)),
        "variance": 0.0 if constant else float(np.var(t, ddof=1)),
        "q05": float(q[0]),
        "q50": float(q[1]),
        "q95": float(q[2]),
    }


def silverman_bandwidth(thetas) -> float:
    t = np.asarray(thetas, dtype=float).reshape(-1)
    if t.size < 2:
        raise ValueError("automatic bandwidth needs at least two draws")
    sd = float(np.std(t, ddof=1))
    q75, q25 = np.percentile(t, [75, 25])
    spread = [v for v in (sd, (q75 - q25) / 1.34) if v > 0]
    if not spread:
        raise ValueError("all draws are equal; pass an explicit bandwidth")
    return 0.9 * min(spread) * t.size ** (-0.2)


def kde(thetas, bandwidth: float | None = None, grid=None, size: int = 1001) -> GriddedDensity:
    """Gaussian kernel density estimate on ``grid``.

    The default grid spans ``min - 5h`` to ``max + 5h``.  The density is not
    renormalized, so its grid integral measures discretization error.
    """
    t = np.asarray(thetas, dtype=float).reshape(-1)
    if t.size == 0:
        raise ValueError("no draws")
    h = silverman_bandwidth(t) if bandwidth is None else float(bandwidth)
    if not h > 0:
        raise ValueError("bandwidth must be positive")
    if grid is None:
        grid = np.linspace(t.min() - 5 * h, t.max() + 5 * h, size)
    grid = np.asarray(grid, dtype=float)
    dens = np.zeros_like(grid)
    norm = 1.0 / (t.size * h * np.sqrt(2 * np.pi))
    for start in range(0, t.size, 2048):
        u = (grid[None, :] - t[start:start + 2048, None]) / h
        dens += np.exp(-0.5 * u * u).sum(axis=0)
    return GriddedDensity.from_density(grid, dens * norm, normalize=False)


# --------------------------------------------------------------------------
# forward simulation, one block of replicates at a time


def _meanvar_block_1d(plan, family, stats, data_col, reps):
    z = np.stack([family.kernel.sample(rng_substream(plan.seed, b, FORWARD_STEP), plan.N)[:, 0]
                  for b in reps])
    x, _, _ = mv.forward_1d(stats.n, stats.mean[0], stats.cov[0, 0], stats.mode, z)
    pts = np.concatenate([np.broadcast_to(data_col, (len(reps), data_col.shape[0])), x], axis=1)
    return evaluate_estimand(plan.estimand, pts)


def _meanvar_block_nd(plan, family, stats, data_col, reps):
    out = np.empty(len(reps))
    for i, b in enumerate(reps):
        st = stats.copy()
        z = family.kernel.sample(rng_substream(plan.seed, b, FORWARD_STEP), plan.N).reshape(plan.N, -1)
        xs = np.empty(plan.N)
        for j in range(plan.N):
            d = mv.predictive_at(st, family.kernel)
            x = d.loc + d.scale_chol @ z[j]
            xs[j] = x[plan.coordinate]
            st.update(x)
        out[i] = evaluate_estimand(plan.estimand, np.concatenate([data_col, xs]))
    return out


def _copula_block(plan, state, data_col, reps):
    d = state.density
    g = d.grid
    wts = cp._trap_weights(g)
    P = len(reps)
    u = np.stack([rng_substream(plan.seed, b, FORWARD_STEP).random(plan.N) for b in reps]) \
        if plan.N else np.zeros((P, 0))
    f = np.tile(d.density, (P, 1))
    F = np.tile(d.cdf, (P, 1))
    r = cp.weight(state.weights, state.step + np.arange(plan.N)) if plan.N else []
    x = np.empty((P, plan.N))
    for j in range(plan.N):
        x[:, j] = cp._inverse_rows(F, g, u[:, j])
        f, F = cp._update_rows(f, F, g, wts, state.rho, r[j], x[:, j])
    pts = np.concatenate([np.broadcast_to(data_col, (P, data_col.shape[0])), x], axis=1)
    return evaluate_estimand(plan.estimand, pts)


def _validate(plan: ResamplingPlan, data) -> np.ndarray:
    x = np.asarray(data, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError("data must be a vector or an s x p matrix")
    if x.shape[0] != plan.s:
        raise ValueError(f"plan expects s={plan.s} observations, data has {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("data must be finite")
    p = x.shape[1]
    if plan.coordinate >= p:
        raise ValueError(f"coordinate {plan.coordinate} out of range for p={p}")
    fam = plan.family
    if isinstance(fam, CopulaFamily):
        if p != 1:
            raise ValueError("the copula family is univariate; data must have one column")
    else:
        if fam.kernel.dim != p:
            raise ValueError(f"kernel dimension {fam.kernel.dim} does not match data dimension {p}")
        if p >= 2 and fam.mode == "empirical" and not plan.allow_degenerate:
            raise ValueError(
                "empirical mode with p >= 2 produces singular covariances; "
                "use mode='regularized' or allow_degenerate=True"
            )
    return x


def run_pr(plan: ResamplingPlan, data, workers: int = 1, density: bool = False) -> PosteriorSample:
    """Run predictive resampling and return the posterior sample.

    ``workers > 1`` spreads replicate blocks over a thread pool; results do
    not depend on it.  ``density=True`` attaches a KDE of the draws.
    """
    x = _validate(plan, data)
    t0 = time.perf_counter()
    fam = plan.family
    data_col = x[:, plan.coordinate].copy()
    meta: dict = {"plan": plan.describe()}

    if isinstance(fam, MeanVarFamily):
        stats = mv.absorb(mv.init_stats(x.shape[1], fam.mode), x)
        block = _meanvar_block_1d if x.shape[1] == 1 else _meanvar_block_nd

        def job(reps):
            return block(plan, fam, stats, data_col, reps)
    else:
        rho = fam.rho
        if rho is None:
            rho, scores = cp.select_rho(data_col, fam.rho_grid, fam.schedule, fam.grid())
            meta["rho_scores"] = [float(v) for v in scores]
        meta["rho"] = float(rho)
        state = cp.absorb(cp.initial_state(rho, fam.schedule, fam.grid()), data_col)

        def job(reps):
            return _copula_block(plan, state, data_col, reps)

    blocks = [range(a, min(a + BLOCK, plan.B)) for a in range(0, plan.B, BLOCK)]
    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(job, blocks))
    else:
        parts = [job(r) for r in blocks]
    thetas = np.concatenate([np.atleast_1d(p_) for p_ in parts])
    meta["seconds"] = time.perf_counter() - t0
    ps = PosteriorSample(thetas, summarize(thetas), meta)
    if density:
        ps.density = kde(thetas) if np.ptp(thetas) > 0 else None
    return ps
