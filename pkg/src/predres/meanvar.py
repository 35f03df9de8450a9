"""Predictives driven by the running sample mean and covariance.

The sequence is ``L(0, I)`` before any data, ``L(X_1, I)`` after one point,
and ``L(M_n, Q_n)`` afterwards, where ``M_n`` is the sample mean and ``Q_n``
the 1/n sample covariance.  ``Q_n`` is maintained by the rank-one recursion

    Q_{n+1} = n/(n+1) Q_n + n/(n+1)^2 L_n L_n^t,    L_n = X_{n+1} - M_n,

together with its Cholesky factor.

In ``empirical`` mode the statistics are the exact sample moments.  For
p >= 2 the self-generated sequence then has a rank-one ``Q_2`` and stays
singular forever, so ``regularized`` mode seeds the recursion with
``Q_1 = I`` instead, which keeps ``Q_n = (S_n + I)/n`` positive definite.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .kernels import GaussianKernel, KernelSpec
from .streams import as_generator

__all__ = [
    "MODES",
    "SufficientStats",
    "LocationScaleDistribution",
    "MeanVarFamily",
    "init_stats",
    "update_stats",
    "absorb",
    "predictive_at",
    "sample_next",
    "det_step_factor",
    "chol_rank_one_update",
    "posterior_mean_moments",
    "posterior_variance_moments",
    "simulate_path_1d",
    "forward_1d",
    "running_moments",
]

MODES = ("empirical", "regularized")

_CHOL_FLOOR = 1e-12
_RANK_TOL = 1e-12


def _check_mode(mode: str) -> str:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    return mode


def chol_rank_one_update(L: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Return the lower factor of ``L L^t + x x^t`` (``L`` is overwritten)."""
    x = np.array(x, dtype=float)
    p = L.shape[0]
    for k in range(p):
        lkk = L[k, k]
        r = math.hypot(lkk, x[k])
        c = r / lkk
        s = x[k] / lkk
        L[k, k] = r
        if k + 1 < p:
            L[k + 1 :, k] = (L[k + 1 :, k] + s * x[k + 1 :]) / c
            x[k + 1 :] = c * x[k + 1 :] - s * L[k + 1 :, k]
    return L


def _try_cholesky(cov: np.ndarray):
    """Cholesky factor of ``cov`` or ``None`` when it is numerically singular."""
    lam = np.linalg.eigvalsh(cov)
    if lam[-1] <= 0 or lam[0] <= _RANK_TOL * lam[-1]:
        return None
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        return None
    if np.min(np.diag(L)) < _CHOL_FLOOR:
        return None
    return L


def _psd_root(cov: np.ndarray) -> np.ndarray:
    lam, V = np.linalg.eigh(cov)
    return V * np.sqrt(np.clip(lam, 0.0, None))


@dataclass
class SufficientStats:
    """Running ``(n, M_n, Q_n)`` with a Cholesky factor of ``Q_n`` when it is nonsingular.

    Mutable and single-owner: :meth:`update` works in place.
    """

    n: int
    mean: np.ndarray
    cov: np.ndarray
    mode: str = "empirical"
    chol: np.ndarray | None = None
    log_det: float = 0.0

    @property
    def p(self) -> int:
        return self.mean.shape[0]

    @property
    def singular(self) -> bool:
        return self.chol is None

    def copy(self) -> "SufficientStats":
        return SufficientStats(
            self.n,
            self.mean.copy(),
            self.cov.copy(),
            self.mode,
            None if self.chol is None else self.chol.copy(),
            self.log_det,
        )

    def _set_factor(self, L):
        self.chol = L
        self.log_det = -math.inf if L is None else 2.0 * float(np.sum(np.log(np.diag(L))))

    def update(self, x) -> "SufficientStats":
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape[0] != self.p:
            raise ValueError(f"observation has dimension {x.shape[0]}, expected {self.p}")
        if not np.all(np.isfinite(x)):
            raise ValueError("observation must be finite")
        p = self.p
        if self.n == 0:
            self.mean = x.copy()
            if self.mode == "regularized":
                self.cov = np.eye(p)
                self._set_factor(np.eye(p))
            else:
                self.cov = np.zeros((p, p))
                self._set_factor(None)
            self.n = 1
            return self

        n = self.n
        dev = x - self.mean
        a = n / (n + 1.0)
        b = n / (n + 1.0) ** 2
        self.mean = self.mean + dev / (n + 1.0)
        cov = a * self.cov + b * np.outer(dev, dev)
        self.cov = 0.5 * (cov + cov.T)
        if self.chol is not None:
            L = chol_rank_one_update(math.sqrt(a) * self.chol, math.sqrt(b) * dev)
            if np.min(np.diag(L)) < _CHOL_FLOOR:
                L = _try_cholesky(self.cov)
        else:
            L = _try_cholesky(self.cov)
        self._set_factor(L)
        self.n = n + 1
        return self

    def scale_factor(self) -> np.ndarray:
        """Square factor ``A`` with ``A A^t = Q_n`` (lower triangular when nonsingular)."""
        if self.chol is not None:
            return self.chol
        return _psd_root(self.cov)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "mean": self.mean.tolist(),
            "cov": self.cov.reshape(-1).tolist(),
            "mode": self.mode,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "SufficientStats":
        mean = np.asarray(d["mean"], dtype=float).reshape(-1)
        p = mean.shape[0]
        cov = np.asarray(d["cov"], dtype=float).reshape(p, p)
        st = cls(int(d["n"]), mean, cov, _check_mode(d.get("mode", "empirical")))
        st._set_factor(_try_cholesky(cov))
        return st

    @classmethod
    def from_json(cls, text: str) -> "SufficientStats":
        return cls.from_dict(json.loads(text))


def init_stats(p: int, mode: str = "empirical") -> SufficientStats:
    """Statistics before any observation: ``n = 0``, ``M_0 = 0``, ``Q_0 = I``."""
    if int(p) < 1:
        raise ValueError("dimension p must be >= 1")
    p = int(p)
    return SufficientStats(0, np.zeros(p), np.eye(p), _check_mode(mode), np.eye(p), 0.0)


def update_stats(stats: SufficientStats, x) -> SufficientStats:
    """Absorb one observation in place and return ``stats``."""
    return stats.update(x)


def absorb(stats: SufficientStats, data) -> SufficientStats:
    """Absorb the rows of ``data`` in order."""
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        data = data.reshape(-1, stats.p) if stats.p > 1 else data.reshape(-1, 1)
    for row in data:
        stats.update(row)
    return stats


@dataclass(frozen=True)
class LocationScaleDistribution:
    """Law of ``loc + scale_chol @ Z`` for ``Z`` drawn from ``kernel``."""

    loc: np.ndarray
    scale_chol: np.ndarray
    kernel: KernelSpec
    has_density: bool = True

    @property
    def cov(self) -> np.ndarray:
        return self.scale_chol @ self.scale_chol.T

    def sample(self, rng, size=None) -> np.ndarray:
        z = self.kernel.sample(as_generator(rng), size)
        return self.loc + z @ self.scale_chol.T

    def logpdf(self, x) -> np.ndarray:
        if not self.has_density:
            raise ValueError("singular scale: the predictive has no Lebesgue density")
        x = np.asarray(x, dtype=float)
        p = self.loc.shape[0]
        if p == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            x = x[..., None]
        dev = (x - self.loc).reshape(-1, p)
        z = sla.solve_triangular(self.scale_chol, dev.T, lower=True).T
        z = z.reshape(x.shape[:-1] + (p,))
        return self.kernel.logpdf(z) - float(np.sum(np.log(np.diag(self.scale_chol))))

    def pdf(self, x) -> np.ndarray:
        return np.exp(self.logpdf(x))

    def cdf(self, x) -> np.ndarray:
        if self.loc.shape[0] != 1:
            raise ValueError("cdf is only defined for p = 1")
        s = float(self.scale_chol[0, 0])
        x = np.asarray(x, dtype=float)
        if s == 0:
            return (x >= self.loc[0]).astype(float)
        return self.kernel.cdf((x - self.loc[0]) / s)


def predictive_at(stats: SufficientStats, kernel: KernelSpec | None = None) -> LocationScaleDistribution:
    """The predictive for the next observation given ``stats``."""
    kernel = GaussianKernel(stats.p) if kernel is None else kernel
    if kernel.dim != stats.p:
        raise ValueError("kernel dimension does not match the statistics")
    p = stats.p
    if stats.n == 0:
        return LocationScaleDistribution(np.zeros(p), np.eye(p), kernel)
    if stats.n == 1:
        return LocationScaleDistribution(stats.mean.copy(), np.eye(p), kernel)
    return LocationScaleDistribution(
        stats.mean.copy(), stats.scale_factor().copy(), kernel, has_density=not stats.singular
    )


def sample_next(stats: SufficientStats, kernel: KernelSpec | None, rng) -> np.ndarray:
    return predictive_at(stats, kernel).sample(rng)


def det_step_factor(stats: SufficientStats, z) -> float:
    """Ratio ``det(Q_{n+1}) / det(Q_n)`` when the next point is ``M_n + chol(Q_n) z``.

    Equals ``(1 - 1/(n+1))^p (1 + z^t z / (n+1))`` by the matrix determinant lemma.
    """
    if stats.singular:
        raise ValueError("det_step_factor needs a nonsingular covariance")
    if stats.n < 1:
        raise ValueError("det_step_factor needs at least one absorbed observation")
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.shape[0] != stats.p:
        raise ValueError("innovation has the wrong dimension")
    n1 = stats.n + 1.0
    return (1.0 - 1.0 / n1) ** stats.p * (1.0 + float(z @ z) / n1)


def _check_s(s: int):
    if int(s) < 2:
        raise ValueError("observed sample size s must be >= 2")


def posterior_mean_moments(s: int, xbar: float, sigma2: float, N: int) -> tuple[float, float]:
    """Exact mean and variance of the resampled sample mean after ``N`` forward draws.

    ``sigma2`` is the 1/s variance of the observed data.
    """
    _check_s(s)
    if sigma2 < 0 or N < 0:
        raise ValueError("sigma2 and N must be nonnegative")
    k = np.arange(s + 1, s + N + 1, dtype=float)
    total = float(np.sum(k / ((k - 1.0) * k * k)))
    return float(xbar), float(sigma2) * s / (s + 1.0) * total


def posterior_variance_moments(s: int, sigma2: float, N: int) -> tuple[float, float]:
    """Mean and variance of the resampled 1/n sample variance (Gaussian kernel)."""
    _check_s(s)
    if sigma2 < 0 or N < 0:
        raise ValueError("sigma2 and N must be nonnegative")
    ratio = s / (s + 1.0) * (s + N + 1.0) / (s + N)
    k = np.arange(s + 1, s + N + 1, dtype=float)
    prod = float(np.prod(1.0 + 3.0 / k**4 - 4.0 / k**3))
    return float(sigma2) * ratio, float(sigma2) ** 2 * (prod - ratio**2)


def simulate_path_1d(mean, var, n0: int, z) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Advance many univariate paths at once.

    ``mean``, ``var`` have shape ``(P,)`` and hold ``(M_n0, Q_n0)``; row ``i``
    of ``z`` (shape ``(P, T)``) holds the standardized innovations of path
    ``i``.  The predictive at every step is ``L(M_n, Q_n)``, which requires
    ``n0 >= 1`` in regularized mode and ``n0 >= 2`` in empirical mode.

    Returns ``(x, M, Q)``, each ``(P, T)``: the drawn points and the
    statistics after absorbing each of them.  Uses
    ``Q_{n+1} = Q_n n/(n+1) (1 + z^2/(n+1))``.
    """
    z = np.asarray(z, dtype=float)
    mean = np.asarray(mean, dtype=float).reshape(-1, 1)
    var = np.asarray(var, dtype=float).reshape(-1, 1)
    T = z.shape[1]
    n = n0 + np.arange(T, dtype=float)
    fac = (n / (n + 1.0)) * (1.0 + z * z / (n + 1.0))
    Q = var * np.cumprod(fac, axis=1)
    Q_prev = np.concatenate([var, Q[:, :-1]], axis=1)
    dev = np.sqrt(Q_prev) * z  # X_{n+1} - M_n
    M = mean + np.cumsum(dev / (n + 1.0), axis=1)
    M_prev = np.concatenate([mean, M[:, :-1]], axis=1)
    return M_prev + dev, M, Q


def forward_1d(n0: int, mean, var, mode: str, z) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Like :func:`simulate_path_1d` but valid from any starting count ``n0 >= 0``.

    The first one or two steps, where the predictive scale is fixed at 1
    rather than ``Q_n``, are taken explicitly; the rest use the fast
    recursion.  ``mean`` and ``var`` are ignored for the slots where
    ``n0 = 0``.
    """
    _check_mode(mode)
    z = np.asarray(z, dtype=float)
    P, T = z.shape
    mean = np.broadcast_to(np.asarray(mean, dtype=float), (P,)).copy()
    var = np.broadcast_to(np.asarray(var, dtype=float), (P,)).copy()
    fast_from = 2 if mode == "empirical" else 1
    xs, Ms, Qs = [], [], []
    n, j = int(n0), 0
    while n < fast_from and j < T:
        if n == 0:
            x = z[:, j].copy()
            mean = x.copy()
            var = np.zeros(P) if mode == "empirical" else np.ones(P)
        else:
            x = mean + z[:, j]
            dev = x - mean
            mean = mean + dev / 2.0
            var = 0.5 * var + 0.25 * dev * dev
        xs.append(x[:, None])
        Ms.append(mean[:, None].copy())
        Qs.append(var[:, None].copy())
        n += 1
        j += 1
    if j < T:
        x, M, Q = simulate_path_1d(mean, var, n, z[:, j:])
        xs.append(x)
        Ms.append(M)
        Qs.append(Q)
    if not xs:
        empty = np.zeros((P, 0))
        return empty, empty.copy(), empty.copy()
    return np.hstack(xs), np.hstack(Ms), np.hstack(Qs)


def running_moments(x, mode: str = "empirical") -> tuple[np.ndarray, np.ndarray]:
    """Recursive ``(M_n, Q_n)`` for every prefix of many fixed sequences at once.

    ``x`` has shape ``(P, T, p)``.  Returns ``M`` of shape ``(P, T, p)`` and
    ``Q`` of shape ``(P, T, p, p)``; index ``k`` along the second axis holds
    the statistics after ``k + 1`` observations, computed with the same
    rank-one recursion as :meth:`SufficientStats.update` (without the
    Cholesky factor).
    """
    _check_mode(mode)
    x = np.asarray(x, dtype=float)
    if x.ndim != 3 or x.shape[1] == 0:
        raise ValueError("x must have shape (P, T, p) with T >= 1")
    P, T, p = x.shape
    M = np.empty_like(x)
    Q = np.empty((P, T, p, p))
    m = x[:, 0].copy()
    q = np.broadcast_to(np.eye(p) if mode == "regularized" else np.zeros((p, p)), (P, p, p)).copy()
    M[:, 0], Q[:, 0] = m, q
    for k in range(1, T):
        dev = x[:, k] - m
        m = m + dev / (k + 1.0)
        q = (k / (k + 1.0)) * q + (k / (k + 1.0) ** 2) * dev[:, :, None] * dev[:, None, :]
        M[:, k], Q[:, k] = m, q
    return M, Q


@dataclass(frozen=True)
class MeanVarFamily:
    """Configuration of the mean/variance predictive family."""

    kernel: KernelSpec = field(default_factory=GaussianKernel)
    mode: str = "empirical"

    def __post_init__(self):
        _check_mode(self.mode)

    def describe(self) -> dict:
        return {"family": "meanvar", "kernel": repr(self.kernel), "mode": self.mode}
