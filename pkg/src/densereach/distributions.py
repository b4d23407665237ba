"""Bounded-support initial-state distributions.

Two families: uniform density on an axis-aligned box, and a diagonal
Gaussian truncated to a box and renormalized.  Both are evaluable
pointwise, boundable over sub-boxes, integrable over sub-boxes, and
sampleable with an explicit generator, which is everything the
reachability layers need from an initial density.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import PathologicalTruncationError
from .geometry import HyperRectangle

# Rejection sampling below this acceptance rate is treated as pathological.
MIN_ACCEPT_RATE = 1e-4
# Minimum number of proposals drawn before the acceptance rate is judged.
_MIN_PROBE_DRAWS = 100_000

_SQRT_2PI = float(np.sqrt(2.0 * np.pi))


@dataclass(frozen=True)
class InitialDistribution:
    """Initial-state density rho0 with bounded support.

    kind is "uniform" or "gaussian".  For the Gaussian case mu/sigma are
    per-coordinate mean and standard deviation and ``normalizer`` is the
    Gaussian mass inside the support box, so that the truncated density
    integrates to one.  For the uniform case ``normalizer`` is the support
    volume.
    """

    kind: str
    support: HyperRectangle
    mu: np.ndarray | None = None
    sigma: np.ndarray | None = None
    normalizer: float = 1.0

    @classmethod
    def uniform(cls, support: HyperRectangle) -> "InitialDistribution":
        vol = support.volume()
        if vol <= 0.0:
            raise ValueError("uniform support must have positive volume")
        return cls(kind="uniform", support=support, normalizer=vol)

    @classmethod
    def gaussian(cls, support: HyperRectangle, mu, sigma) -> "InitialDistribution":
        mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
        sigma = np.asarray(sigma, dtype=np.float64)
        if sigma.ndim == 0:
            sigma = np.full(support.d, float(sigma))
        if mu.shape[0] != support.d or sigma.shape[0] != support.d:
            raise ValueError("mu/sigma dimension must match the support box")
        if np.any(sigma <= 0.0):
            raise ValueError("sigma must be positive")
        z = cls._coordinate_masses(support, mu, sigma)
        normalizer = float(np.prod(z))
        if normalizer <= 0.0:
            raise PathologicalTruncationError(
                "support box carries no Gaussian mass")
        return cls(kind="gaussian", support=support, mu=mu, sigma=sigma,
                   normalizer=normalizer)

    @staticmethod
    def _coordinate_masses(support: HyperRectangle, mu, sigma) -> np.ndarray:
        """Per-coordinate Gaussian mass of [lo_i, hi_i]."""
        hi = ndtr((support.hi - mu) / sigma)
        lo = ndtr((support.lo - mu) / sigma)
        return np.asarray(hi - lo, dtype=np.float64)

    @property
    def d(self) -> int:
        return self.support.d

    # -- pointwise density ---------------------------------------------------

    def pdf(self, x):
        """Density at x; zero outside the support.  Accepts (d,) or (n, d)."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        if pts.shape[1] != self.d:
            raise ValueError(
                f"points have dimension {pts.shape[1]}, support has {self.d}")
        inside = self.support.contains(pts, tol=0.0)
        if self.kind == "uniform":
            vals = np.where(inside, 1.0 / self.normalizer, 0.0)
        else:
            u = (pts - self.mu) / self.sigma
            dens = np.exp(-0.5 * np.sum(u * u, axis=1))
            dens /= np.prod(self.sigma) * _SQRT_2PI ** self.d
            vals = np.where(inside, dens / self.normalizer, 0.0)
        return float(vals[0]) if single else vals

    # -- bounds and mass over boxes ------------------------------------------

    def _clip_to_support(self, lo, hi):
        lo = np.maximum(np.asarray(lo, dtype=np.float64), self.support.lo)
        hi = np.minimum(np.asarray(hi, dtype=np.float64), self.support.hi)
        if np.any(lo > hi):
            return None
        return lo, hi

    def bounds_over_box(self, lo, hi) -> tuple[float, float]:
        """(min, max) of the density over box [lo, hi] ∩ support.

        Returns (0, 0) when the intersection is empty.  Exact for both
        families: the Gaussian factorizes per coordinate, and on an interval
        each factor peaks at the clamped mean and bottoms out at the endpoint
        farther from the mean.
        """
        clipped = self._clip_to_support(lo, hi)
        if clipped is None:
            return 0.0, 0.0
        lo, hi = clipped
        if self.kind == "uniform":
            return 1.0 / self.normalizer, 1.0 / self.normalizer
        scale = self.normalizer * np.prod(self.sigma) * _SQRT_2PI ** self.d
        at_peak = np.clip(self.mu, lo, hi)
        far_end = np.where(np.abs(lo - self.mu) > np.abs(hi - self.mu), lo, hi)
        log_max = -0.5 * np.sum(((at_peak - self.mu) / self.sigma) ** 2)
        log_min = -0.5 * np.sum(((far_end - self.mu) / self.sigma) ** 2)
        return float(np.exp(log_min) / scale), float(np.exp(log_max) / scale)

    def box_mass(self, lo, hi) -> float:
        """Exact probability mass of box [lo, hi] ∩ support."""
        clipped = self._clip_to_support(lo, hi)
        if clipped is None:
            return 0.0
        lo, hi = clipped
        if self.kind == "uniform":
            return float(np.prod(hi - lo)) / self.normalizer
        per_coord = ndtr((hi - self.mu) / self.sigma) - ndtr((lo - self.mu) / self.sigma)
        return float(np.prod(per_coord)) / self.normalizer

    # -- sampling -------------------------------------------------------------

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """n i.i.d. samples, shape (n, d).

        Uniform sampling is direct; the truncated Gaussian rejects proposals
        outside the support box and fails once the running acceptance rate
        is pathologically small.
        """
        if n < 1:
            raise ValueError("n must be >= 1")
        if self.kind == "uniform":
            return rng.uniform(self.support.lo, self.support.hi,
                               size=(n, self.d))
        out = np.empty((n, self.d))
        got = 0
        drawn = 0
        batch = max(4 * n, 4096)
        while got < n:
            proposals = rng.normal(self.mu, self.sigma, size=(batch, self.d))
            drawn += batch
            keep = proposals[self.support.contains(proposals, tol=0.0)]
            take = min(n - got, keep.shape[0])
            out[got:got + take] = keep[:take]
            got += take
            if drawn >= _MIN_PROBE_DRAWS and got / drawn < MIN_ACCEPT_RATE:
                raise PathologicalTruncationError(
                    f"acceptance rate {got / drawn:.2e} after {drawn} draws; "
                    "support box carries almost no Gaussian mass")
        return out

    # -- serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        payload = {
            "kind": self.kind,
            "lo": self.support.lo.tolist(),
            "hi": self.support.hi.tolist(),
        }
        if self.kind == "gaussian":
            payload["mu"] = self.mu.tolist()
            payload["sigma"] = self.sigma.tolist()
        return payload

    @classmethod
    def from_dict(cls, payload: dict) -> "InitialDistribution":
        support = HyperRectangle(np.asarray(payload["lo"]),
                                 np.asarray(payload["hi"]))
        if payload["kind"] == "uniform":
            return cls.uniform(support)
        if payload["kind"] == "gaussian":
            return cls.gaussian(support, payload["mu"], payload["sigma"])
        raise ValueError(f"unknown distribution kind {payload['kind']!r}")
