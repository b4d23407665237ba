"""Polyhedral computation kernel.

Half-space systems {x | A x <= b}, linear programming, feasibility,
redundancy removal, vertex enumeration, exact volume, variable elimination,
affine images and bounding boxes.  Everything downstream (cell enumeration,
reachability, verification) runs on these primitives, so tolerances are
centralized here.

All operations are pure; thousands may run concurrently.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.spatial import ConvexHull, QhullError

from .errors import InfeasibleError, UnboundedError

FEAS_TOL = 1e-9       # constraint satisfaction slack
REDUNDANCY_TOL = 1e-8  # a row is redundant if it cannot be violated by > this
VERTEX_TOL = 1e-9      # vertex dedupe radius
_PHASE1_TOL = 1e-7     # residual infeasibility accepted by phase-1 simplex
_RADIUS_CAP = 1e9      # Chebyshev radius cap so unbounded sets do not stall the LP

_OPTIMAL = 0
_INFEASIBLE = 1
_UNBOUNDED = 2
_STALLED = 3


@dataclass
class Polyhedron:
    """Half-space system {x in R^d | A x <= b}.

    A has shape (m, d), b has shape (m,).  m == 0 denotes the whole space
    and is only meaningful as an intermediate value.
    """

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
        self.b = np.atleast_1d(np.asarray(self.b, dtype=np.float64))
        if self.A.size == 0:
            self.A = self.A.reshape(0, self.A.shape[-1] if self.A.ndim == 2 else 0)
        if self.A.shape[0] != self.b.shape[0]:
            raise ValueError(
                f"row mismatch: A has {self.A.shape[0]} rows, b has {self.b.shape[0]}"
            )
        if not (np.isfinite(self.A).all() and np.isfinite(self.b).all()):
            raise ValueError("polyhedron entries must be finite")

    @property
    def d(self) -> int:
        return self.A.shape[1]

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @classmethod
    def from_box(cls, lo, hi) -> "Polyhedron":
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        d = lo.shape[0]
        eye = np.eye(d)
        return cls(np.vstack([eye, -eye]), np.concatenate([hi, -lo]))

    def contains(self, x, tol: float = FEAS_TOL):
        """Membership test for one point (d,) or a batch (n, d)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            return bool(np.all(self.A @ x <= self.b + tol))
        return np.all(x @ self.A.T <= self.b + tol, axis=1)

    def to_dict(self) -> dict:
        return {"A": self.A.tolist(), "b": self.b.tolist()}

    @classmethod
    def from_dict(cls, payload: dict) -> "Polyhedron":
        return cls(np.array(payload["A"], dtype=np.float64),
                   np.array(payload["b"], dtype=np.float64))


@dataclass
class HyperRectangle:
    """Axis-aligned box [lo, hi], lo <= hi componentwise."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.atleast_1d(np.asarray(self.lo, dtype=np.float64))
        self.hi = np.atleast_1d(np.asarray(self.hi, dtype=np.float64))
        if self.lo.shape != self.hi.shape:
            raise ValueError("lo/hi shape mismatch")
        if np.any(self.lo > self.hi + 1e-12):
            raise ValueError("lo must not exceed hi")

    @property
    def d(self) -> int:
        return self.lo.shape[0]

    def to_polyhedron(self) -> Polyhedron:
        return Polyhedron.from_box(self.lo, self.hi)

    def contains(self, x, tol: float = FEAS_TOL):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))
        return np.all((x >= self.lo - tol) & (x <= self.hi + tol), axis=1)

    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))


def boxes_intersect(r1: HyperRectangle, r2: HyperRectangle, tol: float = FEAS_TOL) -> bool:
    """Closed-interval overlap test in every coordinate.

    Closed convention: boxes sharing only a face still intersect.  The small
    slack keeps the test sound as a pruning filter under roundoff.
    """
    return bool(np.all(r1.lo <= r2.hi + tol) and np.all(r2.lo <= r1.hi + tol))


# ---------------------------------------------------------------------------
# Simplex core.
#
# Dense two-phase tableau simplex with Bland's rule (smallest-index entering
# column; ties in the ratio test broken by smallest basic index).  Free
# variables are split x = u - v.  Compiled with numba: the partition and
# verification stages issue millions of small LPs.
# ---------------------------------------------------------------------------

@njit(cache=True)
def _simplex_core(A, b, c):  # pragma: no cover - exercised via wrappers
    m, d = A.shape
    K = 2 * d + 2 * m          # u, v, slacks, artificials (worst case m)
    T = np.zeros((m + 1, K + 1))
    basis = np.empty(m, dtype=np.int64)

    nart = 0
    for i in range(m):
        s = 1.0 if b[i] >= 0.0 else -1.0
        for j in range(d):
            T[i, j] = s * A[i, j]
            T[i, d + j] = -s * A[i, j]
        T[i, 2 * d + i] = s
        T[i, K] = s * b[i]
        if s > 0.0:
            basis[i] = 2 * d + i
        else:
            col = 2 * d + m + nart
            T[i, col] = 1.0
            basis[i] = col
            nart += 1

    width1 = 2 * d + m + nart
    width2 = 2 * d + m
    tol = 1e-9
    max_iter = 1000 + 50 * (m + d)

    # phase 1: minimize sum of artificials
    if nart > 0:
        for j in range(width2, width1):
            T[m, j] = 1.0
        for i in range(m):
            if basis[i] >= width2:
                for j in range(K + 1):
                    T[m, j] -= T[i, j]

        status = _simplex_iterate(T, basis, m, K, width1, tol, max_iter)
        if status != _OPTIMAL:
            return _STALLED, np.zeros(d), 0.0
        if -T[m, K] > _PHASE1_TOL:
            return _INFEASIBLE, np.zeros(d), 0.0

        # drive surviving artificials out of the basis where possible
        for i in range(m):
            if basis[i] >= width2:
                pivoted = False
                for j in range(width2):
                    if abs(T[i, j]) > tol:
                        _pivot(T, basis, m, K, i, j)
                        pivoted = True
                        break
                if not pivoted:
                    for j in range(K + 1):
                        T[i, j] = 0.0  # redundant row: 0 == 0

    # phase 2 objective
    for j in range(K + 1):
        T[m, j] = 0.0
    for j in range(d):
        T[m, j] = c[j]
        T[m, d + j] = -c[j]
    for i in range(m):
        bj = basis[i]
        if bj < 2 * d:
            cb = c[bj] if bj < d else -c[bj - d]
            if cb != 0.0:
                for j in range(K + 1):
                    T[m, j] -= cb * T[i, j]

    status = _simplex_iterate(T, basis, m, K, width2, tol, max_iter)
    x = np.zeros(d)
    if status == _OPTIMAL:
        for i in range(m):
            bj = basis[i]
            if bj < d:
                x[bj] += T[i, K]
            elif bj < 2 * d:
                x[bj - d] -= T[i, K]
        val = 0.0
        for j in range(d):
            val += c[j] * x[j]
        return _OPTIMAL, x, val
    return status, x, 0.0


@njit(cache=True)
def _simplex_iterate(T, basis, m, K, width, tol, max_iter):  # pragma: no cover
    for _ in range(max_iter):
        enter = -1
        for j in range(width):
            if T[m, j] < -tol:
                enter = j
                break
        if enter < 0:
            return _OPTIMAL

        leave = -1
        best = 0.0
        for i in range(m):
            aij = T[i, enter]
            if aij > tol:
                ratio = T[i, K] / aij
                if leave < 0 or ratio < best - 1e-12 or (
                    ratio < best + 1e-12 and basis[i] < basis[leave]
                ):
                    leave = i
                    best = ratio
        if leave < 0:
            return _UNBOUNDED
        _pivot(T, basis, m, K, leave, enter)
    return _STALLED


@njit(cache=True)
def _pivot(T, basis, m, K, r, j):  # pragma: no cover
    piv = T[r, j]
    for q in range(K + 1):
        T[r, q] /= piv
    for i in range(m + 1):
        if i != r:
            f = T[i, j]
            if f != 0.0:
                for q in range(K + 1):
                    T[i, q] -= f * T[r, q]
    for i in range(m + 1):
        T[i, j] = 0.0
    T[r, j] = 1.0
    basis[r] = j


def _normalized_rows(P: Polyhedron):
    """Row-normalized copies of (A, b); zero rows are kept verbatim.

    A zero row 0 <= b is vacuous for b >= 0 and renders the system infeasible
    for b < 0; the simplex handles both without special casing.
    """
    A = P.A.copy()
    b = P.b.copy()
    norms = np.linalg.norm(A, axis=1)
    nz = norms > 0
    A[nz] /= norms[nz, None]
    b[nz] /= norms[nz]
    return A, b


_LP_CALLS = 0


def lp_call_count() -> int:
    """Simplex solves since import (monotone counter, for work accounting)."""
    return _LP_CALLS


def _lp_arrays(c, A, b, sense: str):
    global _LP_CALLS
    c = np.asarray(c, dtype=np.float64)
    if A.shape[0] == 0:
        if np.allclose(c, 0.0):
            return 0.0, np.zeros(A.shape[1])
        raise UnboundedError("LP over the whole space")
    _LP_CALLS += 1
    obj = -c if sense == "max" else c
    status, x, _ = _simplex_core(np.ascontiguousarray(A), np.ascontiguousarray(b), obj)
    if status == _INFEASIBLE:
        raise InfeasibleError("LP infeasible")
    if status == _UNBOUNDED:
        raise UnboundedError("LP unbounded")
    if status == _STALLED:
        raise ArithmeticError("simplex stalled (iteration cap)")
    return float(c @ x), x


def lp_solve(c, P: Polyhedron, sense: str = "max"):
    """Optimize c.x over P.

    Returns (value, argpoint).  Raises InfeasibleError / UnboundedError.
    """
    if sense not in ("max", "min"):
        raise ValueError(f"sense must be 'max' or 'min', got {sense!r}")
    c = np.asarray(c, dtype=np.float64)
    if c.shape != (P.d,):
        raise ValueError(f"objective has dimension {c.shape}, polyhedron is {P.d}-D")
    A, b = _normalized_rows(P)
    return _lp_arrays(c, A, b, sense)


def is_feasible(P: Polyhedron) -> bool:
    """True iff P contains at least one point (phase-1 simplex)."""
    if P.m == 0:
        return True
    A, b = _normalized_rows(P)
    try:
        _lp_arrays(np.zeros(P.d), A, b, "min")
        return True
    except InfeasibleError:
        return False


def intersect(P: Polyhedron, Q: Polyhedron) -> Polyhedron:
    """Row-stacked constraint system; no simplification."""
    if P.d != Q.d:
        raise ValueError(f"dimension mismatch: {P.d} vs {Q.d}")
    return Polyhedron(np.vstack([P.A, Q.A]), np.concatenate([P.b, Q.b]))


def chebyshev_center(P: Polyhedron):
    """Deepest interior point of P and its inradius.

    Solves max r s.t. a_i.x + |a_i| r <= b_i over (x, r); r is capped so
    unbounded sets return a finite witness point.  Raises InfeasibleError
    for empty P.
    """
    A, b = _normalized_rows(P)
    norms = np.linalg.norm(A, axis=1)  # 1 for nonzero rows, 0 for zero rows
    Aug = np.hstack([A, norms[:, None]])
    cap = np.zeros(P.d + 1)
    cap[-1] = 1.0
    Aug = np.vstack([Aug, cap])
    baug = np.concatenate([b, [_RADIUS_CAP]])
    obj = np.zeros(P.d + 1)
    obj[-1] = 1.0
    _, pt = _lp_arrays(obj, Aug, baug, "max")
    r = float(pt[-1])
    # negative depth means no point satisfies all constraints
    if r < -FEAS_TOL:
        raise InfeasibleError("polyhedron is empty")
    return pt[:-1], r


def _box_via_lps(A, b, d):
    """(lo, hi) per coordinate by 2d LPs; entries +-inf when unbounded."""
    lo = np.empty(d)
    hi = np.empty(d)
    for j in range(d):
        c = np.zeros(d)
        c[j] = 1.0
        try:
            hi[j] = _lp_arrays(c, A, b, "max")[0]
        except UnboundedError:
            hi[j] = np.inf
        try:
            lo[j] = _lp_arrays(c, A, b, "min")[0]
        except UnboundedError:
            lo[j] = -np.inf
    return lo, hi


def bounding_box(P: Polyhedron) -> HyperRectangle:
    """Tight axis-aligned bounding box (2d LPs).

    Raises UnboundedError if P is unbounded, InfeasibleError if empty.
    """
    A, b = _normalized_rows(P)
    lo, hi = _box_via_lps(A, b, P.d)
    if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
        raise UnboundedError("polyhedron is unbounded")
    return HyperRectangle(lo, hi)


def remove_redundant(P: Polyhedron, tol: float = REDUNDANCY_TOL,
                     box: HyperRectangle | None = None,
                     return_index: bool = False):
    """Drop constraints that cannot be active anywhere on P.

    Interval prescreen first (rows slack over a bounding box of P are slack
    on P), then one LP per surviving row: maximize the row over the system
    with its own bound relaxed; the row is redundant iff the optimum stays
    within tol of the original bound.  P must be feasible.

    `box` may supply any enclosing box (e.g. the domain) to skip the 2d
    bounding-box LPs; correctness only needs box >= P.

    With `return_index`, also returns the indices of the surviving rows in
    P's original row order (one representative per duplicate group).
    """
    A, b = _normalized_rows(P)
    idx = np.arange(P.m)
    nz = np.linalg.norm(A, axis=1) > 0
    # vacuous zero rows (0 <= b, b >= 0) carry no geometry
    if not nz.all():
        if np.any(b[~nz] < -FEAS_TOL):
            raise InfeasibleError("contradictory constant row")
        A, b, idx = A[nz], b[nz], idx[nz]
    if A.shape[0] == 0:
        out = Polyhedron(A.reshape(0, P.d), b)
        return (out, idx) if return_index else out

    # exact duplicates (same normalized row): keep the tightest bound
    order = np.lexsort(np.round(np.column_stack([A, b]), 12).T)
    A, b, idx = A[order], b[order], idx[order]
    keep_mask = np.ones(A.shape[0], dtype=bool)
    for i in range(1, A.shape[0]):
        if np.all(np.abs(A[i] - A[i - 1]) <= 1e-12) and abs(b[i] - b[i - 1]) <= 1e-12:
            keep_mask[i] = False
    A, b, idx = A[keep_mask], b[keep_mask], idx[keep_mask]

    if box is None:
        lo, hi = _box_via_lps(A, b, P.d)
    else:
        lo, hi = box.lo, box.hi
    if np.isfinite(lo).all() and np.isfinite(hi).all():
        # max of a.x over the box, coordinatewise
        upper = np.where(A > 0, A * hi, A * lo).sum(axis=1)
        active = upper > b - tol
        A, b, idx = A[active], b[active], idx[active]

    keep = list(range(A.shape[0]))
    i = 0
    while i < len(keep):
        sub_A = A[keep]
        sub_b = b[keep].copy()
        sub_b[i] += 1.0  # relax the tested row so the LP stays bounded
        try:
            val, _ = _lp_arrays(A[keep[i]], sub_A, sub_b, "max")
        except UnboundedError:
            i += 1
            continue
        if val <= b[keep[i]] + tol:
            keep.pop(i)
        else:
            i += 1
    out = Polyhedron(A[keep], b[keep])
    return (out, idx[keep]) if return_index else out


def vertices(P: Polyhedron, dedupe_tol: float = VERTEX_TOL) -> np.ndarray:
    """All vertices of a bounded polyhedron, d <= 6.

    Enumerates d-subsets of the (irredundant) constraints, solves each for
    the candidate basic point, keeps feasible ones, dedupes.  Returns an
    array of shape (n_vertices, d).
    """
    d = P.d
    if d > 6:
        raise ValueError(f"vertex enumeration limited to d <= 6, got d={d}")
    Q = remove_redundant(P)
    A, b = Q.A, Q.b
    lo, hi = _box_via_lps(A, b, d)
    if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
        raise UnboundedError("polyhedron is unbounded")
    m = A.shape[0]
    if d == 1:
        ups = b[A[:, 0] > 0] / A[A[:, 0] > 0, 0]
        downs = b[A[:, 0] < 0] / A[A[:, 0] < 0, 0]
        pts = np.array([[downs.max()], [ups.min()]])
        return pts[:1] if abs(pts[0, 0] - pts[1, 0]) <= dedupe_tol else pts

    found = {}
    combos = itertools.combinations(range(m), d)
    chunk = 100_000
    while True:
        idx = np.array(list(itertools.islice(combos, chunk)), dtype=np.int64)
        if idx.size == 0:
            break
        sub = A[idx]                       # (k, d, d)
        dets = np.abs(np.linalg.det(sub))
        ok = dets > 1e-10
        if not ok.any():
            continue
        sols = np.linalg.solve(sub[ok], b[idx[ok]][..., None])[..., 0]
        feas = np.all(sols @ A.T <= b + FEAS_TOL, axis=1)
        for v in sols[feas]:
            key = tuple(np.round(v / max(dedupe_tol, 1e-12)).astype(np.int64))
            if key not in found:
                found[key] = v
    if not found:
        return np.zeros((0, d))
    return np.array(list(found.values()))


def _polygon_order(V: np.ndarray) -> np.ndarray:
    ctr = V.mean(axis=0)
    ang = np.arctan2(V[:, 1] - ctr[1], V[:, 0] - ctr[0])
    return V[np.argsort(ang)]


def polygon_area(V: np.ndarray) -> float:
    """Shoelace area of a convex polygon given in boundary order."""
    if V.shape[0] < 3:
        return 0.0
    x, y = V[:, 0], V[:, 1]
    return float(abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))) / 2.0)


def volume(P: Polyhedron) -> float:
    """Exact volume of a bounded polyhedron, d <= 6.

    Vertex enumeration, then a simplicial fan around the vertex centroid:
    volume = sum |det(simplex edge matrix)| / d!.  Degenerate
    (lower-dimensional) sets return 0.
    """
    d = P.d
    V = vertices(P)
    if V.shape[0] < d + 1:
        return 0.0
    if d == 1:
        return float(V.max() - V.min())
    if d == 2:
        return polygon_area(_polygon_order(V))
    ctr = V.mean(axis=0)
    spread = np.abs(V - ctr).max()
    if np.linalg.matrix_rank(V - ctr, tol=1e-9 * max(spread, 1.0)) < d:
        return 0.0
    try:
        hull = ConvexHull(V, qhull_options="Qt")
    except QhullError:
        return 0.0
    total = 0.0
    fact = float(np.prod(np.arange(1, d + 1)))
    for simplex in hull.simplices:
        edges = V[simplex] - ctr
        total += abs(np.linalg.det(edges)) / fact
    return float(total)


def hull_halfspaces(points: np.ndarray) -> Polyhedron:
    """H-representation of the convex hull of a point cloud.

    1-D inputs become interval rows; higher dimensions return the hull's
    facet inequalities.  The points must affinely span their space.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("points must be a nonempty (n, d) array")
    if pts.shape[1] == 1:
        return Polyhedron(np.array([[1.0], [-1.0]]),
                          np.array([pts.max(), -pts.min()]))
    hull = ConvexHull(pts, qhull_options="Qt")
    eq = hull.equations
    return Polyhedron(eq[:, :-1], -eq[:, -1])


def eliminate(P: Polyhedron, idx: int) -> Polyhedron:
    """Project out coordinate `idx` by Fourier-Motzkin elimination.

    Output constraints are over the remaining d-1 coordinates, simplified
    by remove_redundant when the result is feasible.
    """
    if P.d < 2:
        raise ValueError("eliminate requires d >= 2")
    if not (0 <= idx < P.d):
        raise ValueError(f"coordinate {idx} out of range for d={P.d}")
    A, b = _normalized_rows(P)
    col = A[:, idx]
    zero = np.abs(col) <= 1e-12
    pos = col > 1e-12
    neg = col < -1e-12

    rows = [np.column_stack([np.delete(A[zero], idx, axis=1).reshape(zero.sum(), P.d - 1),
                             b[zero]])]
    if pos.any() and neg.any():
        Ap, bp, cp = A[pos], b[pos], col[pos]
        An, bn, cn = A[neg], b[neg], col[neg]
        # scale so the idx coefficients cancel: (-cn_j) * row_i + cp_i * row_j
        comb_A = (-cn)[None, :, None] * Ap[:, None, :] + cp[:, None, None] * An[None, :, :]
        comb_b = (-cn)[None, :] * bp[:, None] + cp[:, None] * bn[None, :]
        comb_A = np.delete(comb_A.reshape(-1, P.d), idx, axis=1)
        rows.append(np.column_stack([comb_A, comb_b.reshape(-1)]))
    stacked = np.vstack(rows)
    out = Polyhedron(stacked[:, :-1], stacked[:, -1])
    norms = np.linalg.norm(out.A, axis=1)
    nz = norms > 0
    out.A[nz] /= norms[nz, None]
    out.b[nz] /= norms[nz]
    # vacuous rows produced when only the eliminated coordinate was constrained
    vac = ~nz & (out.b >= -FEAS_TOL)
    if vac.any():
        out = Polyhedron(out.A[~vac], out.b[~vac])
    if out.m == 0:
        return out
    if is_feasible(out):
        out = remove_redundant(out)
    return out


def affine_image(P: Polyhedron, C: np.ndarray, d_vec: np.ndarray) -> Polyhedron:
    """Image {C x + d_vec | x in P} as a half-space system.

    For square invertible C this is the direct substitution
    A C^-1 y <= b + A C^-1 d.  Singular or rectangular (k x d) maps take
    the lift-and-eliminate route: constraints over (x, y) with
    y = C x + d_vec as inequality pairs, then Fourier-Motzkin out the x
    coordinates.  Rectangular images are lower-dimensional sets written
    with paired inequalities.
    """
    C = np.asarray(C, dtype=np.float64)
    d_vec = np.asarray(d_vec, dtype=np.float64)
    n = P.d
    if C.ndim != 2 or C.shape[1] != n:
        raise ValueError(f"C must have {n} columns, got {C.shape}")
    k = C.shape[0]
    if d_vec.shape != (k,):
        raise ValueError(f"d_vec must have length {k}, got {d_vec.shape}")
    if k == n and abs(np.linalg.det(C)) > 1e-10:
        ACinv = P.A @ np.linalg.inv(C)
        return Polyhedron(ACinv, P.b + ACinv @ d_vec)
    # lift to (x, y): A x <= b ; C x - y <= -d ; -C x + y <= d
    top = np.hstack([P.A, np.zeros((P.m, k))])
    eq1 = np.hstack([C, -np.eye(k)])
    eq2 = -eq1
    A = np.vstack([top, eq1, eq2])
    b = np.concatenate([P.b, -d_vec, d_vec])
    lifted = Polyhedron(A, b)
    for _ in range(n):
        lifted = eliminate(lifted, 0)
    return lifted
