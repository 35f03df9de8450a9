"""Standardized base laws for location-scale predictives.

A kernel is the law of a random vector ``Z`` in R^p with ``E(Z) = 0``,
``E(Z Z^t) = I``, a Lebesgue density and a finite absolute moment of some
order ``u > 2``.  The predictive ``L(a, B)`` is then the law of ``a + A Z``
where ``A A^t = B``.

Three families are provided: Gaussian, spherical Student-t rescaled to unit
covariance, and finite Gaussian mixtures whitened at construction.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import special, stats

from .streams import as_generator

__all__ = [
    "KernelSpec",
    "GaussianKernel",
    "StudentTKernel",
    "MixtureKernel",
    "KernelReport",
    "standard_density",
    "sample_standard",
    "standard_cdf_1d",
    "validate_kernel",
    "parse_kernel",
    "load_mixture_csv",
]


def _as_points(z, dim: int) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if dim == 1 and z.ndim == 0:
        z = z.reshape(1)
    if z.shape[-1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {z.shape}")
    return z


class KernelSpec:
    """Base class; subclasses set ``dim`` and implement the four primitives."""

    dim: int

    def logpdf(self, z) -> np.ndarray:
        raise NotImplementedError

    def pdf(self, z) -> np.ndarray:
        return np.exp(self.logpdf(z))

    def sample(self, rng, size=None) -> np.ndarray:
        raise NotImplementedError

    def cdf(self, z) -> np.ndarray:
        raise NotImplementedError

    @property
    def moment_exponent(self) -> float:
        """Order ``u`` of an absolute moment known to be finite (``inf`` if all are)."""
        return math.inf

    @property
    def spherical(self) -> bool:
        """Whether ``U Z`` has the law of ``Z`` for every orthogonal ``U``."""
        return False

    def _require_1d(self):
        if self.dim != 1:
            raise ValueError("the distribution function is only defined for p = 1")


@dataclass(frozen=True)
class GaussianKernel(KernelSpec):
    dim: int = 1

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")

    def logpdf(self, z):
        z = _as_points(z, self.dim)
        return -0.5 * np.sum(z * z, axis=-1) - 0.5 * self.dim * math.log(2 * math.pi)

    def sample(self, rng, size=None):
        rng = as_generator(rng)
        shape = (self.dim,) if size is None else tuple(np.atleast_1d(size)) + (self.dim,)
        return rng.standard_normal(shape)

    def cdf(self, z):
        self._require_1d()
        return special.ndtr(np.asarray(z, dtype=float))

    @property
    def spherical(self):
        return True


@dataclass(frozen=True)
class StudentTKernel(KernelSpec):
    """Spherical multivariate t with ``df`` degrees of freedom, scaled to unit covariance.

    ``Z = sqrt((df - 2) / df) * T`` where ``T`` is standard multivariate t.
    """

    df: float
    dim: int = 1

    def __post_init__(self):
        if not (self.df > 2):
            raise ValueError(f"Student-t kernel needs df > 2 for a finite variance, got {self.df}")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")

    @property
    def scale(self) -> float:
        return math.sqrt((self.df - 2.0) / self.df)

    def logpdf(self, z):
        z = _as_points(z, self.dim)
        nu, p = self.df, self.dim
        r2 = np.sum(z * z, axis=-1)
        const = (
            special.gammaln(0.5 * (nu + p))
            - special.gammaln(0.5 * nu)
            - 0.5 * p * math.log(math.pi * (nu - 2.0))
        )
        return const - 0.5 * (nu + p) * np.log1p(r2 / (nu - 2.0))

    def sample(self, rng, size=None):
        rng = as_generator(rng)
        lead = () if size is None else tuple(np.atleast_1d(size))
        g = rng.standard_normal(lead + (self.dim,))
        w = rng.chisquare(self.df, size=lead + (1,))
        return self.scale * g / np.sqrt(w / self.df)

    def cdf(self, z):
        self._require_1d()
        return stats.t.cdf(np.asarray(z, dtype=float) / self.scale, self.df)

    @property
    def moment_exponent(self):
        # moments exist for every u < df; record the midpoint of (2, df)
        return 0.5 * (2.0 + self.df)

    @property
    def spherical(self):
        return True


@dataclass(frozen=True)
class MixtureKernel(KernelSpec):
    """Whitened finite Gaussian mixture.

    ``components`` are ``(weight, mean, covariance)`` triples of the raw
    mixture; the stored components are those of ``A^{-1}(Y - mu)`` where
    ``mu`` and ``A A^t`` are the mean and covariance of the raw mixture.
    """

    components: tuple
    weights: np.ndarray = field(init=False, repr=False, compare=False)
    means: np.ndarray = field(init=False, repr=False, compare=False)
    covs: np.ndarray = field(init=False, repr=False, compare=False)
    dim: int = field(init=False)

    def __post_init__(self):
        if len(self.components) == 0:
            raise ValueError("a mixture needs at least one component")
        w = np.array([float(c[0]) for c in self.components])
        m = np.array([np.atleast_1d(np.asarray(c[1], dtype=float)) for c in self.components])
        p = m.shape[1]
        S = np.array([np.asarray(c[2], dtype=float).reshape(p, p) for c in self.components])
        if np.any(w <= 0):
            raise ValueError("mixture weights must be positive")
        w = w / w.sum()
        for Sk in S:
            if not np.allclose(Sk, Sk.T) or np.linalg.eigvalsh(Sk).min() <= 0:
                raise ValueError("component covariances must be symmetric positive definite")
        mu = w @ m
        dev = m - mu
        cov = np.einsum("k,kij->ij", w, S) + np.einsum("k,ki,kj->ij", w, dev, dev)
        A = np.linalg.cholesky(cov)
        Ainv = np.linalg.inv(A)
        object.__setattr__(self, "dim", p)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", dev @ Ainv.T)
        object.__setattr__(self, "covs", np.einsum("ij,kjl,ml->kim", Ainv, S, Ainv))

    def analytic_mean(self) -> np.ndarray:
        return self.weights @ self.means

    def analytic_cov(self) -> np.ndarray:
        m = self.means
        return np.einsum("k,kij->ij", self.weights, self.covs) + np.einsum(
            "k,ki,kj->ij", self.weights, m, m
        )

    def logpdf(self, z):
        z = _as_points(z, self.dim)
        parts = [
            math.log(wk) + stats.multivariate_normal.logpdf(z, mean=mk, cov=Sk)
            for wk, mk, Sk in zip(self.weights, self.means, self.covs)
        ]
        # multivariate_normal squeezes a single point to a scalar
        parts = [np.reshape(q, z.shape[:-1]) for q in parts]
        return special.logsumexp(np.stack(parts, axis=0), axis=0)

    def sample(self, rng, size=None):
        rng = as_generator(rng)
        n = 1 if size is None else int(np.prod(size))
        k = rng.choice(len(self.weights), size=n, p=self.weights)
        g = rng.standard_normal((n, self.dim))
        chols = np.linalg.cholesky(self.covs)
        out = self.means[k] + np.einsum("nij,nj->ni", chols[k], g)
        if size is None:
            return out[0]
        return out.reshape(tuple(np.atleast_1d(size)) + (self.dim,))

    def cdf(self, z):
        self._require_1d()
        z = np.asarray(z, dtype=float)
        sd = np.sqrt(self.covs[:, 0, 0])
        u = (z[..., None] - self.means[:, 0]) / sd
        return special.ndtr(u) @ self.weights


def standard_density(kernel: KernelSpec, z) -> np.ndarray | float:
    """Density of the standardized law at ``z`` (shape ``(..., p)``)."""
    out = kernel.pdf(z)
    return float(out) if np.ndim(out) == 0 else out


def sample_standard(kernel: KernelSpec, rng, size=None) -> np.ndarray:
    """Draw from the standardized law; returns shape ``(p,)`` or ``size + (p,)``."""
    return kernel.sample(rng, size)


def standard_cdf_1d(kernel: KernelSpec, z):
    out = kernel.cdf(z)
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class KernelReport:
    """Monte Carlo check of the standardization conditions."""

    draws: int
    mean: np.ndarray
    mean_se: np.ndarray
    second_moment: np.ndarray
    second_moment_se: np.ndarray
    admissible_u: float
    u: float
    u_moment: float
    checks: dict

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def validate_kernel(kernel: KernelSpec, draws: int = 100_000, rng=None, u: float = 2.5) -> KernelReport:
    """Estimate ``E(Z)``, ``E(Z Z^t)`` and an absolute moment above 2 by simulation.

    Each check passes when the estimate is within 3 standard errors of its
    target.  The moment check uses ``min(u, kernel.moment_exponent)`` so that
    it never estimates a moment the law does not have.
    """
    if draws < 10_000:
        raise ValueError("validation needs at least 10^4 draws")
    rng = as_generator(0 if rng is None else rng)
    z = kernel.sample(rng, size=draws)
    p = kernel.dim
    mean = z.mean(axis=0)
    mean_se = z.std(axis=0, ddof=1) / math.sqrt(draws)
    prods = z[:, :, None] * z[:, None, :]
    second = prods.mean(axis=0)
    second_se = prods.std(axis=0, ddof=1) / math.sqrt(draws)
    u_used = min(u, kernel.moment_exponent)
    norms = np.sum(z * z, axis=1) ** (0.5 * u_used)
    u_moment = float(norms.mean())
    eye = np.eye(p)
    checks = {
        "mean_zero": bool(np.all(np.abs(mean) <= 3 * mean_se)),
        "unit_covariance": bool(np.all(np.abs(second - eye) <= 3 * second_se + 1e-15)),
        "moment_above_two": bool(u_used > 2 and math.isfinite(u_moment)),
    }
    return KernelReport(
        draws=draws,
        mean=mean,
        mean_se=mean_se,
        second_moment=second,
        second_moment_se=second_se,
        admissible_u=kernel.moment_exponent,
        u=u_used,
        u_moment=u_moment,
        checks=checks,
    )


def load_mixture_csv(path) -> MixtureKernel:
    """Read mixture components from CSV rows ``weight, mean..., covariance...``.

    The covariance is row-major, so a row has ``1 + p + p*p`` entries.  A
    non-numeric first row is treated as a header.
    """
    path = Path(path)
    rows = []
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                if lineno == 1:
                    continue
                raise ValueError(f"{path}:{lineno}: non-numeric mixture entry") from None
    if not rows:
        raise ValueError(f"{path}: no mixture components")
    ncol = len(rows[0])
    p = int(round((-1 + math.sqrt(1 + 4 * (ncol - 1))) / 2))
    if 1 + p + p * p != ncol or any(len(r) != ncol for r in rows):
        raise ValueError(f"{path}: rows must have 1 + p + p^2 columns")
    comps = tuple((r[0], r[1 : 1 + p], np.reshape(r[1 + p :], (p, p))) for r in rows)
    return MixtureKernel(comps)


def parse_kernel(text: str, dim: int | None = 1) -> KernelSpec:
    """Parse ``gaussian``, ``student:<df>`` or ``mixture:<path>``.

    ``dim=None`` skips the dimension check for mixtures (and means 1 for the
    other kernels).
    """
    name, _, arg = text.strip().partition(":")
    name = name.lower()
    if name == "gaussian" and not arg:
        return GaussianKernel(1 if dim is None else dim)
    if name in ("student", "t") and arg:
        return StudentTKernel(float(arg), 1 if dim is None else dim)
    if name == "mixture" and arg:
        kern = load_mixture_csv(arg)
        if dim is not None and kern.dim != dim:
            raise ValueError(f"mixture has dimension {kern.dim}, data has {dim}")
        return kern
    raise ValueError(f"unrecognised kernel {text!r}; use gaussian, student:<df> or mixture:<path>")
