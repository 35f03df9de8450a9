"""Copula-based predictive densities on a fixed one-dimensional grid.

Starting from a density ``f_0``, each observation ``x`` updates

    f_{n+1}(y) = (1 - r_n) f_n(y) + r_n f_n(y) c_rho(F_n(y), F_n(x))

with ``c_rho`` the bivariate Gaussian copula density.  Densities live at grid
nodes; distribution functions are the cumulative trapezoid integral, and
values between nodes are obtained by linear interpolation.

All heavy lifting happens in the ``_rows`` helpers, which advance a stack of
densities (one per row) in lockstep.  The stack can hold one state per
candidate ``rho`` (prequential selection), per replicate (resampling) or per
Monte Carlo draw (martingale checks).
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import special

from .streams import as_generator

__all__ = [
    "EPS",
    "DEFAULT_RHO_GRID",
    "GriddedDensity",
    "WeightSchedule",
    "CopulaPredictiveState",
    "CopulaFamily",
    "TVVerdict",
    "make_grid",
    "gaussian_copula_density",
    "weight",
    "initial_state",
    "copula_update",
    "absorb",
    "sample_inverse",
    "d_n_statistic",
    "d_n_expected_factor",
    "select_rho",
    "prequential_scores",
    "check_tv_conditions",
]

EPS = 1e-10
DEFAULT_RHO_GRID = tuple(round(0.05 * k, 2) for k in range(1, 20))


def make_grid(lo: float = -10.0, hi: float = 10.0, size: int = 2001) -> np.ndarray:
    if not (hi > lo) or size < 3:
        raise ValueError("grid needs hi > lo and at least 3 nodes")
    return np.linspace(lo, hi, int(size))


# --------------------------------------------------------------------------
# grid integration helpers


def _trap_weights(grid: np.ndarray) -> np.ndarray:
    d = np.diff(grid)
    w = np.zeros_like(grid)
    w[:-1] += 0.5 * d
    w[1:] += 0.5 * d
    return w


def _cumtrapz_rows(f: np.ndarray, grid: np.ndarray) -> np.ndarray:
    F = np.zeros_like(f)
    F[..., 1:] = np.cumsum(0.5 * (f[..., 1:] + f[..., :-1]) * np.diff(grid), axis=-1)
    return F


def _interp_rows(vals: np.ndarray, grid: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Row ``i`` of ``vals`` interpolated at ``x[i]``; clamped to the end nodes."""
    G = grid.shape[0]
    xc = np.clip(x, grid[0], grid[-1])
    k = np.clip(np.searchsorted(grid, xc, side="right") - 1, 0, G - 2)
    t = (xc - grid[k]) / (grid[k + 1] - grid[k])
    rows = np.arange(vals.shape[0])
    return vals[rows, k] * (1.0 - t) + vals[rows, k + 1] * t


def _inverse_rows(F: np.ndarray, grid: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Linear-interpolation inverse of each row's tabulated CDF at ``u[i]``."""
    G = grid.shape[0]
    k = np.clip(np.count_nonzero(F <= u[:, None], axis=1) - 1, 0, G - 2)
    rows = np.arange(F.shape[0])
    lo, hi = F[rows, k], F[rows, k + 1]
    span = hi - lo
    t = np.where(span > 0, (u - lo) / np.where(span > 0, span, 1.0), 0.5)
    t = np.clip(t, 0.0, 1.0)
    return grid[k] + t * (grid[k + 1] - grid[k])


def _log_copula_scores(rho, zu, zv):
    rho = np.asarray(rho, dtype=float)
    one_m = 1.0 - rho * rho
    return -0.5 * np.log(one_m) - (rho * rho * (zu * zu + zv * zv) - 2.0 * rho * zu * zv) / (2.0 * one_m)


def _update_rows(f, F, grid, wts, rho, r, x):
    """One recursion step for every row; returns the renormalized ``(f, F)``.

    ``rho`` and ``r`` are scalars or arrays broadcastable to ``(rows, 1)``.
    """
    v = np.clip(_interp_rows(F, grid, x), EPS, 1.0 - EPS)
    zu = special.ndtri(np.clip(F, EPS, 1.0 - EPS))
    zv = special.ndtri(v)[:, None]
    c = np.exp(_log_copula_scores(rho, zu, zv))
    g = f * ((1.0 - r) + r * c)
    g /= (g @ wts)[:, None]
    return g, _cumtrapz_rows(g, grid)


# --------------------------------------------------------------------------
# public types


@dataclass(frozen=True)
class GriddedDensity:
    """A density tabulated at grid nodes with its trapezoid CDF."""

    grid: np.ndarray
    density: np.ndarray
    cdf: np.ndarray

    @classmethod
    def from_density(cls, grid, density, normalize: bool = True) -> "GriddedDensity":
        grid = np.asarray(grid, dtype=float)
        density = np.asarray(density, dtype=float)
        if grid.ndim != 1 or density.shape != grid.shape:
            raise ValueError("grid and density must be 1-D arrays of equal length")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if np.any(density < 0) or not np.all(np.isfinite(density)):
            raise ValueError("density must be finite and nonnegative")
        if normalize:
            density = density / (density @ _trap_weights(grid))
        return cls(grid, density, _cumtrapz_rows(density, grid))

    @classmethod
    def standard_normal(cls, grid=None) -> "GriddedDensity":
        grid = make_grid() if grid is None else np.asarray(grid, dtype=float)
        return cls.from_density(grid, np.exp(-0.5 * grid**2) / math.sqrt(2 * math.pi))

    @property
    def size(self) -> int:
        return self.grid.shape[0]

    def mass(self) -> float:
        return float(self.density @ _trap_weights(self.grid))

    def pdf(self, x):
        return np.interp(x, self.grid, self.density)

    def cdf_at(self, x):
        return np.interp(x, self.grid, self.cdf)

    def same_grid(self, other: "GriddedDensity") -> bool:
        return self.grid.shape == other.grid.shape and np.array_equal(self.grid, other.grid)

    def to_csv(self, path) -> None:
        from .io import write_columns

        write_columns(path, ["y", "f", "F"], [self.grid, self.density, self.cdf])


@dataclass(frozen=True)
class WeightSchedule:
    """Mixing weights ``r_n`` of the recursion.

    ``kind`` is ``"a"`` (``(2 - 1/(n+1)) / (n+2)``, not summable),
    ``"b"`` (``(2 - 1/(n+2)) / ((n+3) log(n+3)^2)``, summable),
    ``"constant"`` or ``"custom"``.  Custom schedules declare whether their
    sums and sums of squares converge, since only finitely many values are
    known.
    """

    kind: str = "a"
    r: float | None = None
    values: tuple | None = None
    summable: bool | None = None
    square_summable: bool | None = None

    def __post_init__(self):
        if self.kind not in ("a", "b", "constant", "custom"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "constant":
            if self.r is None or not (0 < self.r <= 1):
                raise ValueError("constant schedule needs 0 < r <= 1")
        if self.kind == "custom":
            if not self.values:
                raise ValueError("custom schedule needs values")
            vals = np.asarray(self.values, dtype=float)
            if np.any(vals <= 0) or np.any(vals > 1):
                raise ValueError("every weight must lie in (0, 1]")

    @classmethod
    def a(cls):
        return cls("a")

    @classmethod
    def b(cls):
        return cls("b")

    @classmethod
    def constant(cls, r: float):
        return cls("constant", r=float(r))

    @classmethod
    def custom(cls, values, summable=None, square_summable=None):
        return cls("custom", values=tuple(float(v) for v in values), summable=summable,
                   square_summable=square_summable)

    @property
    def is_summable(self) -> bool | None:
        return {"a": False, "b": True, "constant": False}.get(self.kind, self.summable)

    @property
    def is_square_summable(self) -> bool | None:
        return {"a": True, "b": True, "constant": False}.get(self.kind, self.square_summable)

    def __call__(self, n):
        return weight(self, n)

    def describe(self) -> str:
        if self.kind == "constant":
            return f"const:{self.r!r}"
        if self.kind == "custom":
            return f"custom[{len(self.values)}]"
        return self.kind


def weight(schedule: WeightSchedule, n):
    """``r_n`` for scalar or array ``n >= 0``."""
    n_arr = np.asarray(n)
    if np.any(n_arr < 0):
        raise ValueError("n must be nonnegative")
    nf = n_arr.astype(float)
    if schedule.kind == "a":
        out = (2.0 - 1.0 / (nf + 1.0)) / (nf + 2.0)
    elif schedule.kind == "b":
        out = (2.0 - 1.0 / (nf + 2.0)) / ((nf + 3.0) * np.log(nf + 3.0) ** 2)
    elif schedule.kind == "constant":
        out = np.full(nf.shape, schedule.r)
    else:
        vals = np.asarray(schedule.values, dtype=float)
        if np.any(n_arr >= vals.shape[0]):
            raise ValueError(f"custom schedule only defines {vals.shape[0]} weights")
        out = vals[n_arr.astype(int)]
    return float(out) if out.ndim == 0 else out


def gaussian_copula_density(rho: float, u, v):
    """Bivariate Gaussian copula density with correlation ``rho``."""
    if not (0 <= rho < 1):
        raise ValueError("rho must lie in [0, 1)")
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if np.any((u <= 0) | (u >= 1)) or np.any((v <= 0) | (v >= 1)):
        raise ValueError("copula arguments must lie strictly inside (0, 1); clamp to [EPS, 1-EPS]")
    out = np.exp(_log_copula_scores(rho, special.ndtri(u), special.ndtri(v)))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class CopulaPredictiveState:
    """The predictive after ``step`` observations."""

    density: GriddedDensity
    step: int
    rho: float
    weights: WeightSchedule = field(default_factory=WeightSchedule)


def initial_state(rho: float, weights: WeightSchedule | None = None, grid=None) -> CopulaPredictiveState:
    """Standard-normal ``f_0`` on ``grid`` (default ``[-10, 10]``, 2001 nodes)."""
    if not (0 <= rho < 1):
        raise ValueError("rho must lie in [0, 1)")
    return CopulaPredictiveState(GriddedDensity.standard_normal(grid), 0, float(rho),
                                 WeightSchedule() if weights is None else weights)


def copula_update(state: CopulaPredictiveState, x_new: float) -> CopulaPredictiveState:
    """Absorb one observation and return the next state."""
    x_new = float(x_new)
    if not math.isfinite(x_new):
        raise ValueError("observation must be finite")
    d = state.density
    r = weight(state.weights, state.step)
    f, F = _update_rows(d.density[None, :], d.cdf[None, :], d.grid, _trap_weights(d.grid),
                        state.rho, r, np.array([x_new]))
    return replace(state, density=GriddedDensity(d.grid, f[0], F[0]), step=state.step + 1)


def absorb(state: CopulaPredictiveState, data) -> CopulaPredictiveState:
    """Absorb ``data`` in order."""
    data = np.asarray(data, dtype=float).reshape(-1)
    if not np.all(np.isfinite(data)):
        raise ValueError("data must be finite")
    d = state.density
    wts = _trap_weights(d.grid)
    f, F = d.density[None, :].copy(), d.cdf[None, :].copy()
    r = weight(state.weights, state.step + np.arange(data.shape[0])) if data.size else []
    for j, x in enumerate(data):
        f, F = _update_rows(f, F, d.grid, wts, state.rho, r[j], np.array([x]))
    return replace(state, density=GriddedDensity(d.grid, f[0], F[0]), step=state.step + data.shape[0])


def sample_inverse(state: CopulaPredictiveState, rng, size=None):
    """Inverse-transform draw(s) from the tabulated CDF."""
    rng = as_generator(rng)
    d = state.density
    n = 1 if size is None else int(size)
    u = rng.random(n)
    F = np.broadcast_to(d.cdf, (n, d.size))
    x = _inverse_rows(F, d.grid, u)
    return float(x[0]) if size is None else x


def d_n_statistic(before, after) -> float:
    """``integral |f_after - f_before|`` by the trapezoid rule."""
    fb = before.density if isinstance(before, CopulaPredictiveState) else before
    fa = after.density if isinstance(after, CopulaPredictiveState) else after
    if not fb.same_grid(fa):
        raise ValueError("states live on different grids")
    return float(np.abs(fa.density - fb.density) @ _trap_weights(fa.grid))


def d_n_expected_factor(rho: float, nodes: int = 400) -> float:
    """``E integral_0^1 |c_rho(u, V) - 1| du`` for uniform ``V``, by midpoint quadrature.

    The expected jump ``E D_n`` of an update with weight ``r`` is ``r`` times this.
    """
    t = (np.arange(nodes) + 0.5) / nodes
    z = special.ndtri(t)
    c = np.exp(_log_copula_scores(rho, z[:, None], z[None, :]))
    return float(np.mean(np.abs(c - 1.0)))


def prequential_scores(data, rho_grid=DEFAULT_RHO_GRID, schedule: WeightSchedule | None = None,
                       grid=None) -> np.ndarray:
    """Sum of ``log f_{i-1}(x_i)`` over the data for each candidate ``rho``."""
    data = np.asarray(data, dtype=float).reshape(-1)
    if data.size < 1:
        raise ValueError("need at least one observation")
    if not np.all(np.isfinite(data)):
        raise ValueError("data must be finite")
    rhos = np.asarray(rho_grid, dtype=float).reshape(-1)
    if rhos.size == 0 or np.any((rhos <= 0) | (rhos >= 1)):
        raise ValueError("candidate rho values must lie in (0, 1)")
    schedule = WeightSchedule() if schedule is None else schedule
    if isinstance(grid, GriddedDensity):
        base = grid
    else:
        base = GriddedDensity.standard_normal(grid)
    g = base.grid
    outside = int(np.count_nonzero((data < g[0]) | (data > g[-1])))
    if outside:
        warnings.warn(f"{outside} observation(s) fall outside the grid [{g[0]}, {g[-1]}] and are clamped "
                      "to its end nodes; widen the grid", RuntimeWarning, stacklevel=2)
    wts = _trap_weights(g)
    P = rhos.shape[0]
    f = np.tile(base.density, (P, 1))
    F = np.tile(base.cdf, (P, 1))
    rcol = rhos[:, None]
    r = weight(schedule, np.arange(data.shape[0]))
    scores = np.zeros(P)
    for i, x in enumerate(data):
        xs = np.full(P, x)
        dens = _interp_rows(f, g, xs)
        scores += np.log(np.maximum(dens, np.finfo(float).tiny))
        f, F = _update_rows(f, F, g, wts, rcol, r[i], xs)
    return scores


def select_rho(data, rho_grid=DEFAULT_RHO_GRID, schedule: WeightSchedule | None = None,
               grid=None) -> tuple[float, np.ndarray]:
    """Candidate ``rho`` with the largest prequential log-likelihood (ties go to the smallest)."""
    rhos = np.asarray(rho_grid, dtype=float).reshape(-1)
    scores = prequential_scores(data, rhos, schedule, grid)
    best = np.flatnonzero(scores == scores.max())
    return float(rhos[best].min()), scores


class TVVerdict(enum.Enum):
    """What is known about total-variation convergence of the copula predictives."""

    CONVERGES_SUMMABLE_WEIGHTS = "converges: summable weights"
    CONVERGES_BOUNDED_COPULA = "converges: square-summable weights and bounded copula density"
    FAILS_NONVANISHING_WEIGHTS = "fails: weights do not vanish and the copula is not the independence copula"
    UNKNOWN = "unknown"


def check_tv_conditions(schedule: WeightSchedule, copula_bound: float | None = None,
                        rho: float | None = None) -> TVVerdict:
    """Classify a (schedule, copula) pair by the known sufficient and necessary conditions.

    ``copula_bound`` is a finite bound on the copula density (``None`` when
    unbounded, as for the Gaussian copula with ``rho > 0``).  ``rho`` is only
    consulted to recognise the independence copula.
    """
    independence = (rho is not None and rho == 0) or (copula_bound is not None and copula_bound <= 1)
    if schedule.is_summable:
        return TVVerdict.CONVERGES_SUMMABLE_WEIGHTS
    nonvanishing = schedule.kind == "constant"
    if nonvanishing:
        return TVVerdict.UNKNOWN if independence else TVVerdict.FAILS_NONVANISHING_WEIGHTS
    if schedule.is_square_summable and copula_bound is not None and math.isfinite(copula_bound):
        return TVVerdict.CONVERGES_BOUNDED_COPULA
    return TVVerdict.UNKNOWN


@dataclass(frozen=True)
class CopulaFamily:
    """Configuration of the copula predictive family.

    ``rho=None`` selects ``rho`` from ``rho_grid`` by prequential likelihood
    on the observed data before resampling.
    """

    rho: float | None = None
    rho_grid: tuple = DEFAULT_RHO_GRID
    schedule: WeightSchedule = field(default_factory=WeightSchedule)
    grid_min: float = -10.0
    grid_max: float = 10.0
    grid_size: int = 2001

    def __post_init__(self):
        if self.rho is not None and not (0 <= self.rho < 1):
            raise ValueError("rho must lie in [0, 1)")
        make_grid(self.grid_min, self.grid_max, self.grid_size)

    def grid(self) -> np.ndarray:
        return make_grid(self.grid_min, self.grid_max, self.grid_size)

    def describe(self) -> dict:
        return {
            "family": "copula",
            "rho": self.rho,
            "rho_grid": list(self.rho_grid),
            "weights": self.schedule.describe(),
            "grid": [self.grid_min, self.grid_max, self.grid_size],
        }
