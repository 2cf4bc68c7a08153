"""Distribution primitives and reproducible random streams."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy import special

__all__ = [
    "Uniform",
    "Gaussian",
    "TruncatedGaussian",
    "LinearGaussian",
    "DistributionSpec",
    "DegenerateDensity",
    "InvalidSpec",
    "spec_problems",
    "mean_of",
    "RngStream",
    "sample",
    "log_pdf",
    "truncnorm_rvs",
]

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class DegenerateDensity(ValueError):
    pass


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float


@dataclass(frozen=True)
class Gaussian:
    mu: float
    sigma: float


@dataclass(frozen=True)
class TruncatedGaussian:
    mu: float
    sigma: float
    lo: float = -math.inf
    hi: float = math.inf


@dataclass(frozen=True)
class LinearGaussian:
    """Gaussian whose mean is the value of a parent node.

    ``mu`` is the value used when no parent value is supplied (e.g. the
    initial slice); ``given`` gives the conditional at a use site.
    """

    mu: float
    sigma: float
    parent: str | None = None

    def given(self, parent_value: float) -> Gaussian:
        return Gaussian(parent_value, self.sigma)


DistributionSpec = Union[Uniform, Gaussian, TruncatedGaussian, LinearGaussian]


def spec_problems(d: DistributionSpec) -> list[str]:
    """Invariant violations of ``d`` (empty when valid)."""
    out = []
    if isinstance(d, Uniform):
        if not d.lo < d.hi:
            out.append(f"uniform requires lo < hi, got ({d.lo}, {d.hi})")
        return out
    if not isinstance(d, (Gaussian, TruncatedGaussian, LinearGaussian)):
        return [f"not a distribution spec: {d!r}"]
    if not d.sigma >= 0:
        out.append(f"sigma must be >= 0, got {d.sigma}")
    if isinstance(d, TruncatedGaussian):
        if not d.lo < d.hi:
            out.append(f"truncation requires lo < hi, got ({d.lo}, {d.hi})")
        elif d.sigma == 0 and not d.lo <= d.mu <= d.hi:
            out.append("point mass lies outside the truncation interval")
    return out


def mean_of(d: DistributionSpec) -> float:
    """Mean of ``d`` (used for smoke checks and summaries of priors)."""
    if isinstance(d, Uniform):
        return 0.5 * (d.lo + d.hi)
    if isinstance(d, TruncatedGaussian) and d.sigma > 0:
        a = (d.lo - d.mu) / d.sigma
        b = (d.hi - d.mu) / d.sigma
        # mean shift phi(a)-phi(b) over the retained mass
        log_z = _log_tail_mass(a, b)
        shift = math.exp(-0.5 * a * a - _LOG_SQRT_2PI - log_z) if math.isfinite(a) else 0.0
        shift -= math.exp(-0.5 * b * b - _LOG_SQRT_2PI - log_z) if math.isfinite(b) else 0.0
        return d.mu + d.sigma * shift
    return d.mu


class InvalidSpec(ValueError):
    pass


def _check(d: DistributionSpec) -> None:
    problems = spec_problems(d)
    if problems:
        raise InvalidSpec("; ".join(problems))


@dataclass(frozen=True)
class RngStream:
    """A named, reproducible random stream.

    The draw sequence depends only on ``seed`` and the ``stream_id`` path,
    so sub-streams for particles, blocks or steps can be derived without
    any shared state.
    """

    seed: int
    stream_id: tuple[int, ...] = field(default=(0,))

    def __post_init__(self):
        if isinstance(self.stream_id, int):
            object.__setattr__(self, "stream_id", (self.stream_id,))

    def derive(self, *keys: int) -> "RngStream":
        return RngStream(self.seed, self.stream_id + tuple(int(k) for k in keys))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed & (2**64 - 1), spawn_key=self.stream_id)
        return np.random.Generator(np.random.PCG64(ss))


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    return rng


def truncnorm_rvs(mu, sigma, lo, hi, gen: np.random.Generator, size=None) -> np.ndarray:
    """Inverse-CDF draws from Normal(mu, sigma) restricted to [lo, hi].

    ``mu`` may be an array (one mean per draw).  Intervals lying in the upper
    tail are mirrored so the CDF is always evaluated where it is small.
    """
    mu = np.asarray(mu, dtype=float)
    shape = mu.shape if size is None else size
    mu = np.broadcast_to(mu, shape)
    if sigma == 0:
        return np.clip(mu, lo, hi).astype(float)
    a = (lo - mu) / sigma
    b = (hi - mu) / sigma
    flip = a > 0
    a2 = np.where(flip, -b, a)
    b2 = np.where(flip, -a, b)
    pa = special.ndtr(a2)
    pb = special.ndtr(b2)
    u = gen.random(shape)
    z = special.ndtri(pa + u * (pb - pa))
    z = np.where(flip, -z, z)
    return np.clip(mu + sigma * z, lo, hi)


def sample(d: DistributionSpec, rng, size=None):
    """Draw from ``d``.  ``rng`` is an RngStream or a numpy Generator.

    A fresh Generator is built from an RngStream, so repeated calls with the
    same stream return the same draws.
    """
    _check(d)
    gen = _as_generator(rng)
    if isinstance(d, Uniform):
        out = d.lo + (d.hi - d.lo) * gen.random(size)
        out = np.clip(out, d.lo, d.hi)
    elif isinstance(d, (Gaussian, LinearGaussian)):
        if d.sigma == 0:
            out = np.full(size if size is not None else (), d.mu, dtype=float)
        else:
            out = d.mu + d.sigma * gen.standard_normal(size)
    elif isinstance(d, TruncatedGaussian):
        if d.sigma == 0:
            out = np.full(size if size is not None else (), d.mu, dtype=float)
        else:
            out = truncnorm_rvs(d.mu, d.sigma, d.lo, d.hi, gen, size=() if size is None else size)
    else:
        raise TypeError(f"not a distribution spec: {d!r}")
    return float(out) if size is None else np.asarray(out)


def _log_tail_mass(a, b):
    """log(Phi(b) - Phi(a)) for standardised bounds, stable in both tails."""
    if a > 0:
        a, b = -b, -a
    la = special.log_ndtr(a)
    lb = special.log_ndtr(b)
    # log(exp(lb) - exp(la))
    return lb + np.log1p(-np.exp(la - lb))


def log_pdf(d: DistributionSpec, x):
    """Exact log-density of ``d`` at ``x`` (scalar or array)."""
    _check(d)
    xa = np.asarray(x, dtype=float)
    if isinstance(d, Uniform):
        inside = (xa >= d.lo) & (xa <= d.hi)
        out = np.where(inside, -math.log(d.hi - d.lo), -np.inf)
    elif isinstance(d, (Gaussian, LinearGaussian, TruncatedGaussian)):
        if d.sigma == 0:
            raise DegenerateDensity("density undefined for sigma = 0")
        z = (xa - d.mu) / d.sigma
        out = -0.5 * z * z - _LOG_SQRT_2PI - math.log(d.sigma)
        if isinstance(d, TruncatedGaussian):
            a = (d.lo - d.mu) / d.sigma
            b = (d.hi - d.mu) / d.sigma
            out = out - _log_tail_mass(a, b)
            out = np.where((xa >= d.lo) & (xa <= d.hi), out, -np.inf)
    else:
        raise TypeError(f"not a distribution spec: {d!r}")
    return float(out) if np.ndim(out) == 0 else out
