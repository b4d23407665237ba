"""Exact polyhedral decomposition of the density net at a fixed time.

At fixed t the ReLU net is piecewise affine in the state: each activation
pattern (one on/off bit per hidden neuron) carves out an input cell on
which the whole net collapses to a single affine map x -> (z, x_hat).
This module slices the net at t (folding the time column and the input
normalization into the first layer), walks the cell complex inside a
bounded domain by breadth-first neighbor probing, and attaches to every
nonempty cell its exact affine map, its output polytope in (z, x) space,
and bounds on the density exponent z.  Partitions serialize to JSON for
reuse across reach/verify runs.
"""

from __future__ import annotations

import json
import multiprocessing as mp
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import QhullError

from .errors import (
    CellBudgetError,
    CheckpointFormatError,
    InfeasibleError,
    UnboundedError,
    UnsupportedVersionError,
)
from .geometry import (
    FEAS_TOL,
    HyperRectangle,
    Polyhedron,
    affine_image,
    bounding_box,
    chebyshev_center,
    hull_halfspaces,
    is_feasible,
    lp_solve,
    remove_redundant,
    vertices,
)
from .nets import DensityNet

PARTITION_VERSION = 1
# Default ceiling on the number of cells in one slice.
CELL_BUDGET_DEFAULT = 200_000
# How far past a facet a neighbor probe steps.
PROBE_OFFSET = 1e-7
# Cells whose inscribed ball is smaller than this are flat and carry no
# volume; enumeration drops them (their closures are covered by neighbors).
# Kept above the LP feasibility/redundancy tolerances so tolerance-based
# row simplification can never mangle a cell that survives this cut.
DEGENERATE_RADIUS = 1e-8
# Probe batch used to patch holes the facet walk might have skipped over.
_REPAIR_PROBES = 4096
_REPAIR_SEED = 0x7C311


@dataclass
class SlicedNet:
    """The density net restricted to one time slice.

    weights/biases are the original layers, with the time column's
    contribution at the slice folded into bias1 so evaluation reproduces
    the full net bit for bit.  raw_weights/raw_biases are the same stack
    rewritten over un-normalized states (normalization folded into layer
    1); they define the half-space algebra of the cells.
    """

    weights: list
    biases: list
    bias1: np.ndarray
    norm_shift: np.ndarray
    norm_scale: np.ndarray
    t: float
    raw_weights: list = field(default_factory=list)
    raw_biases: list = field(default_factory=list)

    @property
    def state_dim(self) -> int:
        return self.weights[0].shape[1] - 1

    @property
    def hidden_dims(self) -> tuple:
        return tuple(w.shape[0] for w in self.weights[:-1])

    @property
    def n_neurons(self) -> int:
        return sum(self.hidden_dims)


@dataclass
class AffineCell:
    """One activation-pattern cell of a sliced net.

    H is the input cell (pattern half-spaces intersected with the domain,
    irredundant), (C, d) the affine map x -> (z, x_hat) valid on H, M the
    image of H under that map in (z, x) coordinates, [z_lo, z_hi] the
    exact range of z over H, and center a point inside H (Chebyshev).
    volume is filled when enumeration computes it as a byproduct (2-D);
    cells loaded from a serialized partition have pattern None.
    """

    pattern: np.ndarray | None
    H: Polyhedron
    C: np.ndarray
    d: np.ndarray
    M: Polyhedron
    z_lo: float
    z_hi: float
    t: float
    center: np.ndarray | None = None
    volume: float | None = None


@dataclass
class Partition:
    """A cached slice decomposition plus its provenance."""

    cells: list
    domain: Polyhedron
    system: str | None
    t: float


def slice_net(net: DensityNet, t: float) -> SlicedNet:
    """Restrict the net to time t; exact over states, affine over raw x.

    The normalized time input contributes W1[:, -1] * t_n to every
    first-layer pre-activation, so a slice only changes the layer-1 bias.
    """
    t = float(t)
    W1, b1 = net.weights[0], net.biases[0]
    tn = (t - net.norm_shift[-1]) / net.norm_scale[-1]
    bias1 = tn * W1[:, -1] + b1
    shift = net.norm_shift[:-1]
    scale = net.norm_scale[:-1]
    raw_w1 = W1[:, :-1] / scale
    raw_weights = [raw_w1] + [w.copy() for w in net.weights[1:]]
    raw_biases = [bias1 - raw_w1 @ shift] + [b.copy() for b in net.biases[1:]]
    return SlicedNet(weights=[w.copy() for w in net.weights],
                     biases=[b.copy() for b in net.biases],
                     bias1=bias1, norm_shift=shift.copy(),
                     norm_scale=scale.copy(), t=t,
                     raw_weights=raw_weights, raw_biases=raw_biases)


def sliced_forward(sn: SlicedNet, x):
    """(z, x_hat) of the slice; mirrors the full net's arithmetic exactly."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != sn.state_dim:
        raise ValueError(
            f"x has dimension {X.shape[1]}, slice expects {sn.state_dim}")
    Xn = (X - sn.norm_shift) / sn.norm_scale
    a = Xn @ sn.weights[0][:, :-1].T + sn.bias1
    last = len(sn.weights) - 1
    for l in range(1, last + 1):
        a = np.maximum(a, 0.0)
        a = a @ sn.weights[l].T + sn.biases[l]
    z, x_hat = a[:, 0], a[:, 1:]
    if single:
        return float(z[0]), x_hat[0]
    return z, x_hat


def activation_pattern(sn: SlicedNet, x) -> np.ndarray:
    """On/off bits of every hidden neuron at x; ties count as off.

    Returns shape (n_neurons,) for a single state, (n, n_neurons) for a
    batch, in layer order.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != sn.state_dim:
        raise ValueError(
            f"x has dimension {X.shape[1]}, slice expects {sn.state_dim}")
    bits = []
    a = X
    for W, b in zip(sn.raw_weights[:-1], sn.raw_biases[:-1]):
        pre = a @ W.T + b
        bits.append(pre > 0.0)
        a = np.maximum(pre, 0.0)
    out = (np.hstack(bits) if bits
           else np.zeros((X.shape[0], 0), dtype=bool)).astype(np.uint8)
    return out[0] if single else out


def _pattern_algebra(sn: SlicedNet, pattern: np.ndarray):
    """Per-neuron effective rows and the cell's affine map for a pattern.

    Propagating x -> W x + b through layers with the pattern's neurons
    fixed on/off keeps everything affine: returns (rows_w, rows_b) with
    one pre-activation row per hidden neuron, and (C, d) mapping x to the
    full (z, x_hat) output on the cell.
    """
    dim = sn.state_dim
    R = np.eye(dim)
    r = np.zeros(dim)
    rows_w, rows_b = [], []
    offset = 0
    for W, b in zip(sn.raw_weights[:-1], sn.raw_biases[:-1]):
        We = W @ R
        be = W @ r + b
        rows_w.append(We)
        rows_b.append(be)
        mask = pattern[offset:offset + W.shape[0]].astype(np.float64)
        offset += W.shape[0]
        R = We * mask[:, None]
        r = be * mask
    C = sn.raw_weights[-1] @ R
    d_vec = sn.raw_weights[-1] @ r + sn.raw_biases[-1]
    if rows_w:
        return np.vstack(rows_w), np.concatenate(rows_b), C, d_vec
    return np.zeros((0, dim)), np.zeros(0), C, d_vec


def image_polytope(H: Polyhedron, C, d_vec) -> Polyhedron:
    """Exact image of H under x -> C x + d_vec, for any (k, d) map.

    Invertible square maps substitute directly.  Everything else is split
    by SVD: the left null space pins the affine subspace the image fills
    (equality row pairs), and inside it either the map has full column
    rank (substitution) or it collapses dimensions, in which case the
    image is the hull of H's vertex images — exact for bounded H — with
    lift-and-eliminate as a fallback for cells too thin to enumerate.
    """
    C = np.asarray(C, dtype=np.float64)
    d_vec = np.asarray(d_vec, dtype=np.float64)
    k, dim = C.shape
    if k == dim and abs(np.linalg.det(C)) > 1e-10:
        return affine_image(H, C, d_vec)
    U, S, _ = np.linalg.svd(C)
    rank = int((S > 1e-12 * S[0]).sum()) if S.size and S[0] > 0.0 else 0
    if rank == 0:
        # constant map: the image is the single point d_vec
        return Polyhedron(np.vstack([np.eye(k), -np.eye(k)]),
                          np.concatenate([d_vec, -d_vec]))
    basis = U[:, :rank]
    null = U[:, rank:]
    eq_A = np.vstack([null.T, -null.T])
    eq_b = np.concatenate([null.T @ d_vec, -(null.T @ d_vec)])
    Tu = basis.T @ C
    if rank == dim:
        rows = H.A @ np.linalg.inv(Tu) @ basis.T
        rhs = H.b + rows @ d_vec
        return Polyhedron(np.vstack([rows, eq_A]),
                          np.concatenate([rhs, eq_b]))
    # the map collapses dimensions: project H's vertices into the rank-r
    # coordinates and take their hull (exact for a bounded polytope)
    try:
        Su = hull_halfspaces(vertices(H) @ Tu.T)
    except (UnboundedError, QhullError):
        # H too thin for vertex enumeration: project by elimination
        Su = affine_image(H, Tu, np.zeros(rank))
    rows = Su.A @ basis.T
    rhs = Su.b + rows @ d_vec
    return Polyhedron(np.vstack([rows, eq_A]), np.concatenate([rhs, eq_b]))


def _image_polytope(H: Polyhedron, C: np.ndarray, d_vec: np.ndarray):
    """Image of H under x -> (z, x_hat) = C x + d_vec, in (z, x) coords.

    When the flow block is invertible the image is the state image plus
    the induced equality z = c . x_hat + e written as two inequalities;
    otherwise the general construction applies.
    """
    Cx, dx = C[1:], d_vec[1:]
    if abs(np.linalg.det(Cx)) > 1e-10:
        Sx = affine_image(H, Cx, dx)
        cvec = np.linalg.solve(Cx.T, C[0])
        e0 = d_vec[0] - cvec @ dx
        A = np.vstack([
            np.concatenate([[1.0], -cvec])[None, :],
            np.concatenate([[-1.0], cvec])[None, :],
            np.column_stack([np.zeros(Sx.m), Sx.A]),
        ])
        b = np.concatenate([[e0, -e0], Sx.b])
        return Polyhedron(A, b)
    return image_polytope(H, C, d_vec)


def _as_polyhedron(domain) -> Polyhedron:
    if isinstance(domain, HyperRectangle):
        return domain.to_polyhedron()
    if isinstance(domain, Polyhedron):
        return domain
    raise TypeError(f"domain must be a Polyhedron or HyperRectangle, "
                    f"got {type(domain).__name__}")


def _clip_polygon(V: np.ndarray, tags: list, a: np.ndarray, b: float,
                  tag: int):
    """One Sutherland-Hodgman cut of a tagged convex polygon.

    tags[i] identifies the constraint row the edge V[i] -> V[i+1] lies on.
    Returns (V', tags') or (None, None) when nothing remains.
    """
    s = V @ a - b
    if s.max() <= 0.0:
        return V, tags
    if s.min() > 0.0:
        return None, None
    k = V.shape[0]
    out_v, out_t = [], []
    for i in range(k):
        j = (i + 1) % k
        inside_i, inside_j = s[i] <= 0.0, s[j] <= 0.0
        if inside_i:
            out_v.append(V[i])
            out_t.append(tags[i])
        if inside_i != inside_j:
            frac = s[i] / (s[i] - s[j])
            w = V[i] + frac * (V[j] - V[i])
            out_v.append(w)
            # leaving the half-plane: the new edge runs along the cut;
            # entering: the rest of the original edge continues
            out_t.append(tag if inside_i else tags[i])
    if len(out_v) < 3:
        return None, None
    # merge float-coincident consecutive vertices (cuts through a vertex);
    # the merged vertex keeps the LATEST tag, which labels its outgoing edge
    scale = max(1.0, max(abs(v[0]) + abs(v[1]) for v in out_v))
    tol = 1e-13 * scale
    merged_v, merged_t = [], []
    for v, t in zip(out_v, out_t):
        if merged_v and np.abs(v - merged_v[-1]).max() <= tol:
            merged_t[-1] = t
        else:
            merged_v.append(v)
            merged_t.append(t)
    if len(merged_v) > 1 and \
            np.abs(merged_v[-1] - merged_v[0]).max() <= tol:
        merged_v.pop()
        merged_t.pop()
    if len(merged_v) < 3:
        return None, None
    return np.asarray(merged_v), merged_t


def _polygon_seed(dom: Polyhedron, dom_box: HyperRectangle, n_neurons: int):
    """Start polygon for 2-D clipping: the domain's bounding box.

    Returns (vertices, edge tags, extra rows) where tags >= n_neurons +
    dom.m index into the extra (box) rows.  Domain rows are clipped in
    afterwards; for box domains they coincide with the seed edges and cut
    nothing, which is fine because the box rows carry the same geometry.
    """
    (lx, ly), (hx, hy) = dom_box.lo, dom_box.hi
    V = np.array([[lx, ly], [hx, ly], [hx, hy], [lx, hy]])
    base = n_neurons + dom.m
    tags = [base, base + 1, base + 2, base + 3]
    rows_A = np.array([[0.0, -1.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
    rows_b = np.array([-ly, hx, hy, -lx])
    return V, tags, rows_A, rows_b


def _build_cell_2d(sn: SlicedNet, pattern: np.ndarray, dom: Polyhedron,
                   dom_box: HyperRectangle, A_n: np.ndarray, b_n: np.ndarray,
                   live: np.ndarray, C: np.ndarray, d_vec: np.ndarray):
    """Polygon-clipping construction of a 2-D cell (no redundancy LPs).

    Clips the domain box by the domain rows and the live neuron rows,
    tracking which row each edge lies on; the surviving tags are exactly
    the irredundant constraints.  Returns (cell, kept ids, radius) like
    _build_cell.
    """
    n = pattern.size
    V, tags, box_A, box_b = _polygon_seed(dom, dom_box, n)
    rows_A = np.vstack([A_n, dom.A, box_A])
    rows_b = np.concatenate([b_n, dom.b, box_b])
    for rid in range(n, n + dom.m):
        V, tags = _clip_polygon(V, tags, rows_A[rid], rows_b[rid], rid)
        if V is None:
            return None, None, None
    for rid in np.flatnonzero(live):
        V, tags = _clip_polygon(V, tags, rows_A[rid], rows_b[rid], int(rid))
        if V is None:
            return None, None, None
    kept = np.unique(np.asarray(tags, dtype=np.int64))
    A = rows_A[kept]
    b = rows_b[kept]
    norms = np.linalg.norm(A, axis=1)
    H = Polyhedron(A / norms[:, None], b / norms)
    try:
        center, radius = chebyshev_center(H)
    except InfeasibleError:
        return None, None, None
    z_min, _ = lp_solve(C[0], H, "min")
    z_max, _ = lp_solve(C[0], H, "max")
    nxt = np.roll(V, -1, axis=0)
    area = 0.5 * abs(np.dot(V[:, 0], nxt[:, 1]) - np.dot(V[:, 1], nxt[:, 0]))
    cell = AffineCell(pattern=pattern.copy(), H=H, C=C, d=d_vec,
                      M=_image_polytope(H, C, d_vec),
                      z_lo=float(z_min + d_vec[0]),
                      z_hi=float(z_max + d_vec[0]),
                      t=sn.t, center=center, volume=float(area))
    return cell, kept, radius


def _build_cell(sn: SlicedNet, pattern: np.ndarray, dom: Polyhedron,
                dom_box: HyperRectangle | None = None):
    """(AffineCell, kept row ids, radius) for a pattern; Nones if empty.

    Row ids index the stacked system [neuron rows; domain rows], so an id
    below n_neurons identifies which neuron's hyperplane a facet lies on.
    The radius is that of the cell's inscribed ball (0 for flat cells).

    Neuron rows already satisfied everywhere on the domain's bounding box
    are implied by the domain and are dropped up front by interval
    arithmetic, which keeps the LP work proportional to the rows that can
    actually touch the cell.
    """
    rows_w, rows_b, C, d_vec = _pattern_algebra(sn, pattern)
    sgn = np.where(pattern > 0, -1.0, 1.0)
    A_n = sgn[:, None] * rows_w
    b_n = -sgn * rows_b
    if dom_box is None:
        dom_box = bounding_box(dom)
    zero = np.abs(A_n).sum(axis=1) == 0.0
    if np.any(zero & (b_n < -FEAS_TOL)):
        return None, None, None
    upper = np.where(A_n > 0, A_n * dom_box.hi, A_n * dom_box.lo).sum(axis=1)
    live = (upper > b_n) & ~zero
    if sn.state_dim == 2:
        return _build_cell_2d(sn, pattern, dom, dom_box, A_n, b_n, live,
                              C, d_vec)
    ids = np.concatenate([np.flatnonzero(live),
                          np.arange(pattern.size, pattern.size + dom.m)])
    A = np.vstack([A_n[live], dom.A])
    b = np.concatenate([b_n[live], dom.b])
    P = Polyhedron(A, b)
    try:
        if not is_feasible(P):
            return None, None, None
        H, kept_local = remove_redundant(P, return_index=True)
        kept = ids[kept_local]
        center, radius = chebyshev_center(H)
    except InfeasibleError:
        return None, None, None
    z_min, _ = lp_solve(C[0], H, "min")
    z_max, _ = lp_solve(C[0], H, "max")
    cell = AffineCell(pattern=pattern.copy(), H=H, C=C, d=d_vec,
                      M=_image_polytope(H, C, d_vec),
                      z_lo=float(z_min + d_vec[0]),
                      z_hi=float(z_max + d_vec[0]),
                      t=sn.t, center=center)
    return cell, kept, radius


def cell_of(sn: SlicedNet, pattern, domain) -> AffineCell | None:
    """The cell of one activation pattern inside the domain, or None.

    None means no point of the domain realizes the pattern (the
    half-space system is empty).
    """
    pattern = np.asarray(pattern).astype(np.uint8).ravel()
    if pattern.size != sn.n_neurons:
        raise ValueError(
            f"pattern has {pattern.size} bits, slice has {sn.n_neurons} "
            f"neurons")
    dom = _as_polyhedron(domain)
    if dom.d != sn.state_dim:
        raise ValueError(
            f"domain dimension {dom.d} does not match state dimension "
            f"{sn.state_dim}")
    cell, _, _ = _build_cell(sn, pattern, dom)
    return cell


def _neighbor_candidates(sn: SlicedNet, dom: Polyhedron, cell: AffineCell,
                         kept: np.ndarray) -> list:
    """Pattern candidates adjacent to a cell, as hashable bytes.

    Probes a point just past each facet (witnessing whichever cell lives
    there) and, for facets on neuron hyperplanes, also the single-bit
    flip of this cell's pattern.
    """
    out = []
    c = cell.center
    n_neurons = sn.n_neurons
    probes = c + (cell.H.b - cell.H.A @ c + PROBE_OFFSET)[:, None] * cell.H.A
    inside = dom.contains(probes, tol=FEAS_TOL)
    if inside.any():
        for row in activation_pattern(sn, probes[inside]):
            out.append(row.tobytes())
    for j in kept:
        if j < n_neurons:
            flipped = cell.pattern.copy()
            flipped[int(j)] ^= 1
            out.append(flipped.tobytes())
    return out


_WORKER_STATE: dict = {}


def _init_worker(sn: SlicedNet, dom: Polyhedron):
    _WORKER_STATE["sn"] = sn
    _WORKER_STATE["dom"] = dom
    _WORKER_STATE["dom_box"] = bounding_box(dom)


def _process_pattern(pattern_bytes):
    """Worker body: build one cell and list its neighbor candidates.

    A neuron whose effective row vanishes on the cell constrains nothing,
    so two patterns differing only in such dead bits describe the same
    region.  Relabeling each cell with the pattern observed at its own
    interior point (dead bits fall to "off") gives one canonical key per
    region, which the caller uses to emit every region exactly once.
    """
    sn, dom = _WORKER_STATE["sn"], _WORKER_STATE["dom"]
    pattern = np.frombuffer(pattern_bytes, dtype=np.uint8).copy()
    cell, kept, radius = _build_cell(sn, pattern, dom, _WORKER_STATE["dom_box"])
    if cell is None:
        return None, False, b"", []
    degenerate = radius < DEGENERATE_RADIUS
    candidates = _neighbor_candidates(sn, dom, cell, kept)
    if not degenerate:
        cell.pattern = activation_pattern(sn, cell.center)
    return cell, degenerate, cell.pattern.tobytes(), candidates


def _domain_probe_points(dom: Polyhedron, n: int) -> np.ndarray:
    """Deterministic scatter of interior points for the repair sweep."""
    rng = np.random.default_rng(_REPAIR_SEED)
    box = bounding_box(dom)
    pts = []
    have = 0
    for _ in range(64):
        cand = rng.uniform(box.lo, box.hi, size=(4 * n, dom.d))
        hit = cand[dom.contains(cand)]
        pts.append(hit)
        have += hit.shape[0]
        if have >= n:
            break
    if not have:
        return np.zeros((0, dom.d))
    return np.vstack(pts)[:n]


def enumerate_cells(sn: SlicedNet, domain, budget: int = CELL_BUDGET_DEFAULT,
                    jobs: int = 1) -> list:
    """All nonempty full-dimensional cells of the slice inside the domain.

    Breadth-first walk over activation patterns: start from the domain's
    Chebyshev center, probe past every facet of each discovered cell (and
    flip the facet's neuron bit) to reach neighbors, then patch any holes
    with a fixed scatter of interior points.  Flat cells propagate
    neighbors but are not returned.  Output is sorted by pattern bits, so
    it is independent of discovery order and of `jobs`.

    Raises CellBudgetError when the slice has more than `budget` cells.
    """
    dom = _as_polyhedron(domain)
    if dom.d != sn.state_dim:
        raise ValueError(
            f"domain dimension {dom.d} does not match state dimension "
            f"{sn.state_dim}")
    if budget < 1:
        raise ValueError("budget must be at least 1")
    if jobs < 1:
        raise ValueError("jobs must be at least 1")

    seed_pt, _ = chebyshev_center(dom)
    first = activation_pattern(sn, seed_pt)
    visited = {first.tobytes()}
    emitted = set()
    queue = deque([first.tobytes()])
    cells = []

    pool = None
    if jobs > 1:
        ctx = mp.get_context("fork")
        pool = ctx.Pool(jobs, initializer=_init_worker, initargs=(sn, dom))
    _init_worker(sn, dom)
    try:
        def drain():
            while queue:
                wave = [queue.popleft() for _ in range(len(queue))]
                if pool is not None:
                    results = pool.map(_process_pattern, wave)
                else:
                    results = [_process_pattern(p) for p in wave]
                for cell, degenerate, key, candidates in results:
                    if cell is not None and not degenerate \
                            and key not in emitted:
                        emitted.add(key)
                        visited.add(key)
                        cells.append(cell)
                        if len(cells) > budget:
                            raise CellBudgetError(
                                f"slice has more than {budget} cells")
                    for cand in candidates:
                        if cand not in visited:
                            visited.add(cand)
                            queue.append(cand)

        drain()
        probes = _domain_probe_points(dom, _REPAIR_PROBES)
        for _ in range(64):
            if probes.shape[0] == 0:
                break
            pats = activation_pattern(sn, probes)
            missing = []
            for row in pats:
                key = row.tobytes()
                if key not in visited and key not in missing:
                    missing.append(key)
            if not missing:
                break
            for key in sorted(missing):
                visited.add(key)
                queue.append(key)
            drain()
    finally:
        if pool is not None:
            pool.close()
            pool.join()

    cells.sort(key=lambda c: c.pattern.tobytes())
    return cells


# ---------------------------------------------------------------------------
# Partition cache.
# ---------------------------------------------------------------------------

def save_partition(cells: list, domain, system: str | None = None,
                   t: float | None = None) -> bytes:
    """Serialize a slice decomposition to JSON bytes (exact floats)."""
    dom = _as_polyhedron(domain)
    if t is None:
        if not cells:
            raise ValueError("t must be given when saving an empty partition")
        t = cells[0].t
    payload = {
        "version": PARTITION_VERSION,
        "system": system,
        "t": float(t),
        "domain": {"A": dom.A.tolist(), "b": dom.b.tolist()},
        "cells": [
            {
                "A": c.H.A.tolist(),
                "b": c.H.b.tolist(),
                "C": c.C.tolist(),
                "d": c.d.tolist(),
                "E": c.M.A.tolist(),
                "f": c.M.b.tolist(),
                "z_lo": c.z_lo,
                "z_hi": c.z_hi,
            }
            for c in cells
        ],
    }
    return json.dumps(payload).encode("utf-8")


def load_partition(blob) -> Partition:
    """Parse partition bytes; malformed input raises with a position."""
    if isinstance(blob, bytes):
        blob = blob.decode("utf-8", errors="replace")
    try:
        payload = json.loads(blob)
    except json.JSONDecodeError as exc:
        raise CheckpointFormatError(
            f"malformed partition JSON at offset {exc.pos}") from exc
    if not isinstance(payload, dict) or "version" not in payload:
        raise CheckpointFormatError("partition lacks a version field")
    if payload["version"] != PARTITION_VERSION:
        raise UnsupportedVersionError(
            f"partition version {payload['version']!r}; this build reads "
            f"version {PARTITION_VERSION}")
    try:
        t = float(payload["t"])
        dom = Polyhedron(np.asarray(payload["domain"]["A"], dtype=np.float64),
                         np.asarray(payload["domain"]["b"], dtype=np.float64))
        dim = dom.d
        cells = []
        for i, rec in enumerate(payload["cells"]):
            H = Polyhedron(np.asarray(rec["A"], dtype=np.float64),
                           np.asarray(rec["b"], dtype=np.float64))
            C = np.asarray(rec["C"], dtype=np.float64)
            d_vec = np.asarray(rec["d"], dtype=np.float64)
            M = Polyhedron(np.asarray(rec["E"], dtype=np.float64),
                           np.asarray(rec["f"], dtype=np.float64))
            z_lo, z_hi = float(rec["z_lo"]), float(rec["z_hi"])
            if H.d != dim or C.shape != (dim + 1, dim) or \
                    d_vec.shape != (dim + 1,) or M.d != dim + 1:
                raise CheckpointFormatError(
                    f"cell {i} has inconsistent shapes for dimension {dim}")
            if not (np.isfinite(z_lo) and np.isfinite(z_hi)
                    and z_lo <= z_hi):
                raise CheckpointFormatError(
                    f"cell {i} has an invalid z range [{z_lo}, {z_hi}]")
            center, _ = chebyshev_center(H)
            cells.append(AffineCell(pattern=None, H=H, C=C, d=d_vec, M=M,
                                    z_lo=z_lo, z_hi=z_hi, t=t,
                                    center=center))
    except CheckpointFormatError:
        raise
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise CheckpointFormatError(f"invalid partition payload: {exc}") \
            from exc
    return Partition(cells=cells, domain=dom, system=payload.get("system"),
                     t=t)


def split_cell(cell: AffineCell, axis: int | None = None) -> list:
    """Halve a cell along a bounding-box axis (the longest by default).

    The affine map is inherited; the image polytope, z bounds, and center
    are recomputed per half, so refining a partition this way can only
    tighten interval-based bounds built on it.  Halves thinner than the
    degeneracy threshold are dropped, so the result has 1 or 2 cells.
    """
    bb = bounding_box(cell.H)
    if axis is None:
        axis = int(np.argmax(bb.hi - bb.lo))
    mid = 0.5 * (bb.lo[axis] + bb.hi[axis])
    row = np.zeros(cell.H.d)
    row[axis] = 1.0
    halves = []
    for sign in (1.0, -1.0):
        half = Polyhedron(np.vstack([cell.H.A, sign * row[None, :]]),
                          np.concatenate([cell.H.b, [sign * mid]]))
        try:
            center, radius = chebyshev_center(half)
        except InfeasibleError:
            continue
        if radius < DEGENERATE_RADIUS:
            continue
        z_min, _ = lp_solve(cell.C[0], half, "min")
        z_max, _ = lp_solve(cell.C[0], half, "max")
        halves.append(AffineCell(
            pattern=None if cell.pattern is None else cell.pattern.copy(),
            H=half, C=cell.C, d=cell.d,
            M=_image_polytope(half, cell.C, cell.d),
            z_lo=float(z_min + cell.d[0]), z_hi=float(z_max + cell.d[0]),
            t=cell.t, center=center))
    return halves
