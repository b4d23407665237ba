"""Baseline density estimators, KL scoring, and volume-vs-mass summaries.

Three interchangeable estimators answer "how dense are states near x":
equal-width histograms, Epanechnikov kernel density estimates, and the
learned transport model (initial density times the network's gain).  A
Monte-Carlo KL divergence scores any of them against exact transported
densities, and `volume_at_probability` condenses a reachable-cell list
into the volume needed to capture a given probability mass.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionalityError, InfeasibleError, UnboundedError
from .geometry import volume
from .nets import density_estimate

HISTOGRAM_MAX_DIM = 4
KL_FLOOR_DEFAULT = 1e-12
_KDE_QUERY_CHUNK = 256


@dataclass(frozen=True)
class DensityEstimator:
    """A nonnegative density model queryable at arbitrary points.

    kind is one of "histogram", "kde", or "learned"; payload holds the
    kind-specific state (bin grid and normalized counts, sample matrix
    and bandwidths, or a network with its initial density).
    """

    kind: str
    payload: dict


def _as_samples(samples) -> np.ndarray:
    S = np.asarray(samples, dtype=np.float64)
    if S.ndim == 1:
        S = S[:, None]
    if S.ndim != 2 or S.shape[0] == 0:
        raise ValueError("samples must be a nonempty (n, d) array")
    return S


def histogram_density(samples, bins_per_dim: int) -> DensityEstimator:
    """Equal-width histogram over the samples' bounding box.

    Bin values are count / (n * bin volume), so the estimate integrates
    to one over the box.  Binning is limited to four dimensions; beyond
    that the bin count explodes faster than any affordable sample size
    and the estimate is vacuously zero almost everywhere, so the failure
    is reported instead of silently returned.
    """
    S = _as_samples(samples)
    n, d = S.shape
    if d > HISTOGRAM_MAX_DIM:
        raise DimensionalityError(
            f"histogram binning supports at most {HISTOGRAM_MAX_DIM} "
            f"dimensions, got {d}")
    if bins_per_dim < 1:
        raise ValueError("bins_per_dim must be at least 1")
    counts, edges = np.histogramdd(S, bins=bins_per_dim)
    widths = [e[1] - e[0] for e in edges]
    bin_volume = float(np.prod(widths))
    return DensityEstimator(kind="histogram", payload={
        "edges": [np.asarray(e) for e in edges],
        "density": counts / (n * bin_volume),
        "n": n,
    })


def _silverman_bandwidth(S: np.ndarray) -> np.ndarray:
    n, d = S.shape
    if n < 2:
        raise ValueError("bandwidth must be given for fewer than two samples")
    sigma = S.std(axis=0, ddof=1)
    h = 1.06 * sigma * n ** (-1.0 / (d + 4))
    return np.maximum(h, 1e-12)


def kde_density(samples, bandwidth=None) -> DensityEstimator:
    """Product-form Epanechnikov kernel density estimate.

    Each coordinate contributes 0.75 * (1 - u^2) / h on |u| <= 1 with
    u = (x - sample) / h.  bandwidth may be a scalar or per-coordinate
    vector; when omitted it defaults to 1.06 * sigma * n^(-1/(d+4))
    per coordinate.
    """
    S = _as_samples(samples)
    if bandwidth is None:
        h = _silverman_bandwidth(S)
    else:
        h = np.broadcast_to(np.asarray(bandwidth, dtype=np.float64),
                            (S.shape[1],)).copy()
        if np.any(h <= 0.0):
            raise ValueError("bandwidth must be positive")
    return DensityEstimator(kind="kde", payload={"samples": S,
                                                 "bandwidth": h})


def learned_density(net, rho0, t: float) -> DensityEstimator:
    """Transported-density model: rho0(x0) times the network gain at t.

    Unlike the sample-based estimators, this one is evaluated at initial
    states; the model itself carries those points to time t.
    """
    return DensityEstimator(kind="learned", payload={
        "net": net, "rho0": rho0, "t": float(t)})


def _evaluate_histogram(payload, P: np.ndarray) -> np.ndarray:
    edges = payload["edges"]
    dens = payload["density"]
    m = P.shape[0]
    idx = np.empty((m, len(edges)), dtype=np.intp)
    inside = np.ones(m, dtype=bool)
    for j, e in enumerate(edges):
        k = np.searchsorted(e, P[:, j], side="right") - 1
        k = np.where(P[:, j] == e[-1], len(e) - 2, k)
        inside &= (k >= 0) & (k <= len(e) - 2)
        idx[:, j] = np.clip(k, 0, len(e) - 2)
    return np.where(inside, dens[tuple(idx.T)], 0.0)


def _evaluate_kde(payload, P: np.ndarray) -> np.ndarray:
    S = payload["samples"]
    h = payload["bandwidth"]
    out = np.empty(P.shape[0])
    for start in range(0, P.shape[0], _KDE_QUERY_CHUNK):
        block = P[start:start + _KDE_QUERY_CHUNK]
        U = (block[:, None, :] - S[None, :, :]) / h
        K = np.where(np.abs(U) <= 1.0, 0.75 * (1.0 - U * U) / h, 0.0)
        out[start:start + block.shape[0]] = K.prod(axis=2).mean(axis=1)
    return out


def estimator_dim(est: DensityEstimator) -> int:
    """Point dimension the estimator expects."""
    if est.kind == "histogram":
        return len(est.payload["edges"])
    if est.kind == "kde":
        return est.payload["samples"].shape[1]
    if est.kind == "learned":
        return est.payload["net"].state_dim
    raise ValueError(f"unknown estimator kind {est.kind!r}")


def evaluate_density(est: DensityEstimator, points) -> np.ndarray:
    """Estimator values at the given points (always >= 0).

    For histogram/kde estimators the points live in state space; for the
    learned estimator they are initial states (the model evaluates the
    density it transports to its stored time).  A single point yields a
    float, a batch an array; for one-dimensional estimators a flat array
    is a batch of scalar points.
    """
    if est.kind == "learned":
        pl = est.payload
        return density_estimate(pl["net"], points, pl["t"], pl["rho0"])
    d = estimator_dim(est)
    P = np.asarray(points, dtype=np.float64)
    single = False
    if P.ndim == 0:
        P = P.reshape(1, 1)
        single = True
    elif P.ndim == 1:
        if d == 1:
            P = P[:, None]
        else:
            P = P[None, :]
            single = True
    if P.ndim != 2 or P.shape[1] != d:
        raise ValueError(
            f"points have dimension {P.shape[-1]}, estimator expects {d}")
    if est.kind == "histogram":
        vals = _evaluate_histogram(est.payload, P)
    else:
        vals = _evaluate_kde(est.payload, P)
    return float(vals[0]) if single else vals


def kl_divergence(truth_samples, est: DensityEstimator,
                  floor: float = KL_FLOOR_DEFAULT) -> float:
    """Monte-Carlo KL divergence of an estimator from exact densities.

    truth_samples is a sequence of (point, true_density) pairs; the
    result is the mean of log(true / max(estimate, floor)) over them.
    The floor keeps points where a baseline assigns zero mass finite.
    """
    if floor <= 0.0:
        raise ValueError("floor must be positive")
    pairs = list(truth_samples)
    if not pairs:
        raise ValueError("truth_samples must be nonempty")
    pts = np.array([np.atleast_1d(np.asarray(p, dtype=np.float64))
                    for p, _ in pairs])
    rho = np.array([float(r) for _, r in pairs])
    est_vals = np.atleast_1d(evaluate_density(est, pts))
    return float(np.mean(np.log(rho / np.maximum(est_vals, floor))))


def volume_at_probability(reach_cells, threshold: float):
    """(volume, achieved mass) of the densest cells reaching a threshold.

    Cells are taken in order of decreasing density upper bound and
    accumulated until their guaranteed mass (sum of p_lo) reaches the
    threshold or the list is exhausted.  Returns the total state-space
    volume of the taken cells and the mass they are known to hold.
    Flat images (measure-zero state sets) count as volume zero.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must lie in (0, 1]")
    order = sorted(range(len(reach_cells)),
                   key=lambda k: -reach_cells[k].rho_hi)
    total_volume = 0.0
    achieved = 0.0
    for k in order:
        cell = reach_cells[k]
        try:
            total_volume += volume(cell.state_set)
        except (UnboundedError, InfeasibleError):
            pass
        achieved += cell.p_lo
        if achieved >= threshold:
            break
    return total_volume, achieved


def convex_hull_area_2d(points) -> float:
    """Area of the convex hull of 2-D points (monotone chain + shoelace).

    Collinear inputs hull to a segment and report area zero.
    """
    P = np.asarray(points, dtype=np.float64)
    if P.ndim != 2 or P.shape[1] != 2:
        raise ValueError("points must be an (n, 2) array")
    if P.shape[0] < 3:
        raise ValueError("need at least three points")
    pts = sorted(map(tuple, P))

    def half_chain(seq):
        chain = []
        for p in seq:
            while len(chain) >= 2:
                (ox, oy), (ax, ay) = chain[-2], chain[-1]
                if (ax - ox) * (p[1] - oy) - (ay - oy) * (p[0] - ox) > 0.0:
                    break
                chain.pop()
            chain.append(p)
        return chain

    lower = half_chain(pts)
    upper = half_chain(reversed(pts))
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:
        return 0.0
    V = np.asarray(hull)
    nxt = np.roll(V, -1, axis=0)
    return 0.5 * abs(np.dot(V[:, 0], nxt[:, 1]) - np.dot(V[:, 1], nxt[:, 0]))
