"""Reachability with density and probability bounds over affine cells.

Every cell of a sliced net carries an exact affine map, so reachability
questions reduce to polyhedral algebra on the input side: the reachable
state set is the cell image, density bounds scale the initial density at
the cell's deepest point by the exponential of its z range, and
probability brackets come from exact volumes of pre-images weighed by
initial-density bounds.  Safety verification intersects every cell image
with the unsafe set — exactly via one feasibility LP per cell, optionally
pre-screened by an LP-free interval bounding-box test that can only skip
cells whose intersection is provably empty, leaving the verdict and the
probability bracket unchanged.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .cells import AffineCell, _as_polyhedron, image_polytope
from .distributions import InitialDistribution
from .errors import InfeasibleError, UnboundedError
from .geometry import (
    HyperRectangle,
    Polyhedron,
    bounding_box,
    boxes_intersect,
    chebyshev_center,
    intersect,
    is_feasible,
    lp_call_count,
    lp_solve,
    remove_redundant,
    volume,
)
from .nets import g_of


@dataclass
class ReachCell:
    """Forward-reachability record for one cell.

    state_set is the exact image of the cell in state space; rho_lo/rho_hi
    bound the flowed density on it; p_lo/p_hi bracket the initial-state
    mass the cell carries; source indexes the originating cell.
    """

    state_set: Polyhedron
    rho_lo: float
    rho_hi: float
    p_lo: float
    p_hi: float
    source: int
    t: float


@dataclass
class QueryCell:
    """Per-cell contribution to a query-set probability.

    region is the exact initial-state pre-image of the query within the
    cell; rho_lo/rho_hi bound the flowed density on the intersection
    (initial density at the region's deepest point times the gain range);
    p_lo/p_hi bracket the region's initial mass.
    """

    region: Polyhedron
    rho_lo: float
    rho_hi: float
    p_lo: float
    p_hi: float
    z_lo: float
    z_hi: float
    source: int
    t: float


@dataclass
class BackwardRegion:
    """One cell's pre-image of a target set, with its mass bracket."""

    region: Polyhedron
    p_lo: float
    p_hi: float
    source: int
    t: float


@dataclass
class Verdict:
    """Safety answer with per-slice probability brackets and work counts.

    safe means no cell image intersects the unsafe set (within the gain
    band); p_lo/p_hi is the worst slice's bracket on the unsafe mass.
    stats counts lp_calls (simplex solves during the check),
    box_rejections (cells skipped by the interval test), poly_checks
    (feasibility LPs run), and elapsed seconds.
    """

    safe: bool
    p_lo: float
    p_hi: float
    stats: dict
    per_slice: dict


# ---------------------------------------------------------------------------
# Mass and density brackets.
# ---------------------------------------------------------------------------

def _mass_bracket(region: Polyhedron, rho0: InitialDistribution):
    """Bracket the rho0-mass of a bounded polyhedral region.

    Exact volume of region ∩ support times the density bounds over that
    intersection's bounding box; both families make the density bounds
    exact per coordinate, so the bracket always contains the true mass.
    """
    clipped = intersect(region, rho0.support.to_polyhedron())
    try:
        box = bounding_box(clipped)
    except InfeasibleError:
        return 0.0, 0.0
    try:
        vol = volume(clipped)
    except UnboundedError:
        # a sliver thinner than the LP tolerance: carries no mass
        vol = 0.0
    if vol <= 0.0:
        return 0.0, 0.0
    d_lo, d_hi = rho0.bounds_over_box(box.lo, box.hi)
    return vol * d_lo, vol * d_hi


def cell_probability(cell: AffineCell, rho0: InitialDistribution):
    """(p_lo, p_hi) bracket on the initial mass carried by a cell."""
    return _mass_bracket(cell.H, rho0)


def _gain_range(rho_at_center: float, z_lo: float, z_hi: float, t: float):
    """Density bounds rho0(center) * exp(t z) over a z interval."""
    lo = rho_at_center * g_of(z_lo, t)
    hi = rho_at_center * g_of(z_hi, t)
    return (lo, hi) if lo <= hi else (hi, lo)


# ---------------------------------------------------------------------------
# Forward reachability.
# ---------------------------------------------------------------------------

def state_projection(cell: AffineCell) -> Polyhedron:
    """The cell's reachable states: exact image of H under the state rows."""
    return image_polytope(cell.H, cell.C[1:], cell.d[1:])


def forward_reach(cells, rho0: InitialDistribution) -> list:
    """Reachable state sets with density bounds and mass brackets.

    Per cell: the density anywhere on the image lies between the initial
    density at the cell's deepest interior point scaled by the extreme
    gains exp(t z_lo) and exp(t z_hi); the mass bracket is the cell's
    share of the initial distribution.
    """
    out = []
    for k, cell in enumerate(cells):
        center = (cell.center if cell.center is not None
                  else chebyshev_center(cell.H)[0])
        rho_lo, rho_hi = _gain_range(rho0.pdf(center), cell.z_lo, cell.z_hi,
                                     cell.t)
        p_lo, p_hi = cell_probability(cell, rho0)
        out.append(ReachCell(state_set=state_projection(cell),
                             rho_lo=rho_lo, rho_hi=rho_hi,
                             p_lo=p_lo, p_hi=p_hi, source=k, t=cell.t))
    return out


# ---------------------------------------------------------------------------
# Query probability and backward reachability.
# ---------------------------------------------------------------------------

def _pullback(cell: AffineCell, query: Polyhedron | None,
              z_range=None) -> Polyhedron:
    """Input-side system for {x in H : C_x x + d_x in query, z in range}."""
    Cx, dx = cell.C[1:], cell.d[1:]
    rows_A = [cell.H.A]
    rows_b = [cell.H.b]
    if query is not None:
        rows_A.append(query.A @ Cx)
        rows_b.append(query.b - query.A @ dx)
    if z_range is not None:
        c0, d0 = cell.C[0], cell.d[0]
        z_lo, z_hi = z_range
        if np.isfinite(z_hi):
            rows_A.append(c0[None, :])
            rows_b.append([z_hi - d0])
        if np.isfinite(z_lo):
            rows_A.append(-c0[None, :])
            rows_b.append([d0 - z_lo])
    return Polyhedron(np.vstack(rows_A), np.concatenate(rows_b))


def _check_query(cells, query) -> Polyhedron:
    query = _as_polyhedron(query)
    if cells and query.d != cells[0].H.d:
        raise ValueError(f"query dimension {query.d} does not match state "
                         f"dimension {cells[0].H.d}")
    try:
        bounding_box(query)
    except UnboundedError:
        raise ValueError("query set is unbounded; intersect it with a "
                         "bounding box of the reachable set first") from None
    except InfeasibleError:
        pass  # empty query is legal and yields (0, 0)
    return query


def query_cells(cells, query, rho0: InitialDistribution,
                z_range=None) -> list:
    """Per-cell pre-images of a query with density and mass brackets."""
    query = _check_query(cells, query)
    out = []
    for k, cell in enumerate(cells):
        region = _pullback(cell, query, z_range)
        if not is_feasible(region):
            continue
        p_lo, p_hi = _mass_bracket(region, rho0)
        z_min, _ = lp_solve(cell.C[0], region, "min")
        z_max, _ = lp_solve(cell.C[0], region, "max")
        z_min += cell.d[0]
        z_max += cell.d[0]
        center, _ = chebyshev_center(region)
        rho_lo, rho_hi = _gain_range(rho0.pdf(center), z_min, z_max, cell.t)
        out.append(QueryCell(region=region, rho_lo=rho_lo, rho_hi=rho_hi,
                             p_lo=p_lo, p_hi=p_hi, z_lo=float(z_min),
                             z_hi=float(z_max), source=k, t=cell.t))
    return out


def query_probability(cells, query, rho0: InitialDistribution,
                      z_range=None):
    """(p_lo, p_hi) bracket on the mass flowing into the query set.

    The event {initial state flows into the query, with z in z_range} is
    partitioned exactly by the cells' pre-images, so the bracket contains
    the true probability; z_range defaults to unconstrained.
    """
    recs = query_cells(cells, query, rho0, z_range)
    return (float(sum(r.p_lo for r in recs)),
            float(sum(r.p_hi for r in recs)))


def backward_reach(cells, query, rho0: InitialDistribution,
                   z_range=None) -> list:
    """Initial-state regions flowing into the query set, with mass.

    One region per cell whose image meets the query: the exact pre-image
    intersected with the cell, simplified to irredundant rows.
    """
    query = _check_query(cells, query)
    out = []
    for k, cell in enumerate(cells):
        region = _pullback(cell, query, z_range)
        if not is_feasible(region):
            continue
        region, _ = remove_redundant(region, return_index=True)
        p_lo, p_hi = _mass_bracket(region, rho0)
        out.append(BackwardRegion(region=region, p_lo=p_lo, p_hi=p_hi,
                                  source=k, t=cell.t))
    return out


# ---------------------------------------------------------------------------
# Safety verification.
# ---------------------------------------------------------------------------

def _axis_bounds(H: Polyhedron):
    """(lo, hi) per coordinate read off H's axis-aligned rows, no LPs.

    A row with a single nonzero coefficient bounds one coordinate;
    coordinates without such rows stay infinite.
    """
    lo = np.full(H.d, -np.inf)
    hi = np.full(H.d, np.inf)
    for row, rhs in zip(H.A, H.b):
        nz = np.flatnonzero(row)
        if nz.size != 1:
            continue
        j = nz[0]
        if row[j] > 0:
            hi[j] = min(hi[j], rhs / row[j])
        else:
            lo[j] = max(lo[j], rhs / row[j])
    return lo, hi


def _axis_box(P: Polyhedron) -> HyperRectangle | None:
    """Outer box of P from its axis-aligned rows; None when open."""
    lo, hi = _axis_bounds(P)
    if np.isfinite(lo).all() and np.isfinite(hi).all() and np.all(lo <= hi):
        return HyperRectangle(lo, hi)
    return None


def _outer_boxes(cells) -> list:
    """LP-free outer boxes of the cells' H polytopes.

    Interior cells lose the domain's axis rows to redundancy removal, so
    their open coordinates fall back to the slice envelope — the extreme
    axis bounds seen across all cells, which recovers the domain box for
    partitions of a box.  Entries stay None when even the envelope is
    open in some coordinate (non-box domains); those cells are then
    never box-rejected, which is sound.
    """
    bounds = [_axis_bounds(c.H) for c in cells]
    if not bounds:
        return []
    lo_all = np.vstack([lo for lo, _ in bounds])
    hi_all = np.vstack([hi for _, hi in bounds])
    env_lo = np.where(np.isfinite(lo_all), lo_all, np.inf).min(axis=0)
    env_hi = np.where(np.isfinite(hi_all), hi_all, -np.inf).max(axis=0)
    out = []
    for lo, hi in bounds:
        lo = np.where(np.isfinite(lo), lo, env_lo)
        hi = np.where(np.isfinite(hi), hi, env_hi)
        if np.isfinite(lo).all() and np.isfinite(hi).all():
            out.append(HyperRectangle(lo, np.maximum(lo, hi)))
        else:
            out.append(None)
    return out


def _interval_image(box: HyperRectangle, C: np.ndarray, d_vec: np.ndarray):
    """Interval-arithmetic outer box of {C x + d : x in box}."""
    lo = np.where(C > 0, C * box.lo, C * box.hi).sum(axis=1) + d_vec
    hi = np.where(C > 0, C * box.hi, C * box.lo).sum(axis=1) + d_vec
    return HyperRectangle(lo, hi)


def _box_rejects(cell: AffineCell, hbox: HyperRectangle | None,
                 unsafe_box: HyperRectangle, z_range=None) -> bool:
    """LP-free disjointness certificate for cell image vs unsafe box.

    True only when the cell provably cannot intersect the unsafe set:
    its exact z range misses the z window, or the interval image of an
    outer box of H misses the unsafe set's bounding box.
    """
    if z_range is not None and (cell.z_hi < z_range[0]
                                or cell.z_lo > z_range[1]):
        return True
    if hbox is None:
        return False
    img = _interval_image(hbox, cell.C[1:], cell.d[1:])
    return not boxes_intersect(img, unsafe_box)


def _slice_z_range(z_range, t: float):
    """Per-slice z window from a log-gain band; None disables the slice.

    The band constrains the density gain exponent t*z, so at slice t > 0
    it becomes z in [lo/t, hi/t]; at t == 0 the gain is 1 everywhere and
    the slice participates only when the band contains 0.
    """
    if z_range is None:
        return None, True
    lo, hi = float(z_range[0]), float(z_range[1])
    if t > 0.0:
        return (lo / t, hi / t), True
    return None, lo <= 0.0 <= hi


def verify_safety(cells_by_time: dict, unsafe, rho0: InitialDistribution,
                  z_range=None, use_heuristic: bool = True) -> Verdict:
    """Check whether any reachable state (within the gain band) is unsafe.

    cells_by_time maps slice times to their cell lists.  z_range, when
    given, bounds the density gain exponent t*z.  Per cell the exact
    check is one feasibility LP on the input-side intersection system;
    with use_heuristic those LPs are skipped for cells the interval box
    test proves disjoint.  The heuristic never changes the verdict or
    the probability bracket, only the work counted in stats.
    """
    if not cells_by_time:
        raise ValueError("cells_by_time must contain at least one slice")
    unsafe = _as_polyhedron(unsafe)
    start = time.perf_counter()
    lp_before = lp_call_count()
    ub = _axis_box(unsafe)
    unsafe_box = ub if ub is not None else bounding_box(unsafe)
    per_slice = {}
    box_rejections = 0
    poly_checks = 0
    safe = True
    for t in sorted(cells_by_time):
        cells = cells_by_time[t]
        slice_z, active = _slice_z_range(z_range, float(t))
        if not active:
            per_slice[t] = (0.0, 0.0)
            continue
        hboxes = _outer_boxes(cells) if use_heuristic else [None] * len(cells)
        p_lo = 0.0
        p_hi = 0.0
        for cell, hbox in zip(cells, hboxes):
            if use_heuristic and _box_rejects(cell, hbox, unsafe_box,
                                              slice_z):
                box_rejections += 1
                continue
            region = _pullback(cell, unsafe, slice_z)
            poly_checks += 1
            if not is_feasible(region):
                continue
            safe = False
            lo, hi = _mass_bracket(region, rho0)
            p_lo += lo
            p_hi += hi
        per_slice[t] = (p_lo, p_hi)
    worst_lo = max(p for p, _ in per_slice.values())
    worst_hi = max(p for _, p in per_slice.values())
    stats = {
        "lp_calls": lp_call_count() - lp_before,
        "box_rejections": box_rejections,
        "poly_checks": poly_checks,
        "elapsed": time.perf_counter() - start,
    }
    return Verdict(safe=safe, p_lo=worst_lo, p_hi=worst_hi, stats=stats,
                   per_slice=per_slice)
