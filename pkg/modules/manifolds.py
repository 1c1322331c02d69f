# modules/manifolds.py
"""
Local stable / unstable manifolds, their growth under iteration, and the
transverse-intersection search behind the homoclinic-relation test.

Curves are polylines in the lift R^2 (wrapping is tracked, not reduced).
Each grown curve remembers its preimage vertices, so any point between two
vertices can be evaluated exactly as the image of the interpolated preimage.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import List, NamedTuple, Optional

import numpy as np
import pandas as pd
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from modules.cocycle import oseledets_frame
from modules.errors import InvalidInputError
from modules.map_core import (
    Params,
    TorusPoint,
    apply_inverse_lift,
    apply_lift,
    inverse_jacobian_at,
    jacobian_at,
    wrap,
)

logger = logging.getLogger(__name__)

H_MAX = 1e-3
SEED_FLOOR = 1e-9
VERTEX_CAP = 10 ** 7
MAX_REFINE_ROUNDS = 12
BISECT_TOL = 1e-10
WITNESS_RESIDUAL = 1e-9
WITNESS_DEDUP = 1e-8


# ---------------------------------------------------
# Curves
# ---------------------------------------------------
@dataclass
class Curve:
    vertices: np.ndarray                      # (N, 2) lift coordinates
    tangents: np.ndarray                      # (N, 2) unit tangents
    arc_params: np.ndarray                    # (N,) seed parameter of each vertex
    map_params: Optional[Params] = None
    direction: str = "forward"
    iterate: int = 0
    preimage: Optional[np.ndarray] = None     # (N, 2) vertices one iterate back
    offset: np.ndarray = field(default_factory=lambda: np.zeros(2))
    total_length: float = field(init=False)

    def __post_init__(self):
        self.total_length = float(np.sum(self.segment_lengths()))

    def segment_lengths(self) -> np.ndarray:
        return np.hypot(*np.diff(self.vertices, axis=0).T)

    def reduced(self) -> np.ndarray:
        return wrap(self.vertices)

    def to_frame(self) -> pd.DataFrame:
        red = self.reduced()
        return pd.DataFrame({
            "index": np.arange(len(self.vertices)),
            "x": red[:, 0],
            "y": red[:, 1],
            "tx": self.tangents[:, 0],
            "ty": self.tangents[:, 1],
        })

    def slice(self, lo: int, hi: int) -> "Curve":
        return Curve(
            vertices=self.vertices[lo:hi],
            tangents=self.tangents[lo:hi],
            arc_params=self.arc_params[lo:hi],
            map_params=self.map_params,
            direction=self.direction,
            iterate=self.iterate,
            preimage=None if self.preimage is None else self.preimage[lo:hi],
            offset=self.offset,
        )

    def evaluate(self, seg: np.ndarray, t: np.ndarray) -> np.ndarray:
        """Points at local parameter ``t`` in [0, 1] of segments ``seg``."""
        t = t[:, None]
        if self.preimage is None:
            v = self.vertices
            return v[seg] + t * (v[seg + 1] - v[seg])
        pre = self.preimage
        q = pre[seg] + t * (pre[seg + 1] - pre[seg])
        mapper = apply_lift if self.direction == "forward" else apply_inverse_lift
        x, y = mapper(self.map_params, q[:, 0], q[:, 1])
        return np.column_stack([x, y]) - self.offset


@dataclass
class GrowthReport:
    lengths_per_iterate: List[float]
    first_iterate_length_gt4: Optional[int]
    cone_violations: int
    truncated: bool
    violations_per_iterate: List[int]
    fold_count: int

    def to_dict(self) -> dict:
        return asdict(self)


class IntersectionWitness(NamedTuple):
    point: TorusPoint
    angle: float
    param_a: float
    param_b: float


class HomoclinicResult(NamedTuple):
    related: Optional[bool]   # None when growth was inconclusive
    witnesses: List[IntersectionWitness]
    reports: List[dict]


def straight_curve(center, direction, length: float, h_max: float = H_MAX,
                   map_params: Params = None) -> Curve:
    """Segment of ``length`` centred on ``center`` along ``direction``; odd vertex count."""
    d = np.asarray(direction, dtype=float)
    nrm = np.hypot(*d)
    if nrm == 0:
        raise InvalidInputError("curve direction must be non-zero")
    d = d / nrm
    m = max(3, int(math.ceil(length / h_max)) + 1)
    m += 1 - m % 2
    s = np.linspace(-length / 2.0, length / 2.0, m)
    c = np.asarray(center, dtype=float)
    return Curve(
        vertices=c[None, :] + s[:, None] * d[None, :],
        tangents=np.tile(d, (m, 1)),
        arc_params=s,
        map_params=map_params,
    )


def seed_local_manifold(params: Params, p: TorusPoint, side: str, h_max: float = H_MAX) -> Curve:
    """Straight seed of length max(2 r0, SEED_FLOOR) along E+ (unstable) or E- (stable)."""
    if side not in ("stable", "unstable"):
        raise InvalidInputError(f"side must be 'stable' or 'unstable', got {side!r}")
    frame = oseledets_frame(params, p)
    e = frame.e_plus if side == "unstable" else frame.e_minus
    length = max(2.0 * params.r0, SEED_FLOOR)
    curve = straight_curve((float(p.x), float(p.y)), (e.u, e.v), length, h_max, map_params=params)
    curve.direction = "forward" if side == "unstable" else "backward"
    return curve


# ---------------------------------------------------
# Growth
# ---------------------------------------------------
def _insert(pts, tans, s, need):
    """Insert need[i] evenly spaced points into segment i of every array."""
    seg = np.repeat(np.arange(len(need)), need)
    starts = np.cumsum(need) - need
    j = np.arange(need.sum()) - np.repeat(starts, need) + 1
    t = j / (np.repeat(need, need) + 1.0)

    new_pts = pts[seg] + t[:, None] * (pts[seg + 1] - pts[seg])
    new_tan = tans[seg] + t[:, None] * (tans[seg + 1] - tans[seg])
    nrm = np.hypot(new_tan[:, 0], new_tan[:, 1])
    chord = pts[seg + 1] - pts[seg]
    chord = chord / np.hypot(chord[:, 0], chord[:, 1])[:, None]
    new_tan = np.where(nrm[:, None] > 1e-12, new_tan / np.maximum(nrm, 1e-300)[:, None], chord)
    new_s = s[seg] + t * (s[seg + 1] - s[seg])

    at = seg + 1
    return (np.insert(pts, at, new_pts, axis=0),
            np.insert(tans, at, new_tan, axis=0),
            np.insert(s, at, new_s))


def _count_folds(tangents: np.ndarray, axis: int) -> int:
    sign = np.sign(tangents[:, axis])
    sign = sign[sign != 0]
    return int(np.count_nonzero(sign[1:] != sign[:-1]))


def grow_curve(params: Params, c: Curve, direction: str = "forward", max_iter: int = 40,
               target_length: float = 4.0, h_max: float = H_MAX, vertex_cap: int = VERTEX_CAP):
    """
    Iterate a curve under f (forward) or f^-1 (backward).

    Each iterate maps all vertices, then inserts points on the preimage until
    adjacent image vertices are at most ``h_max`` apart. Growth stops once the
    length exceeds ``target_length``, after ``max_iter`` iterates, or when the
    vertex cap would be exceeded (reported as truncated).

    Returns
    -------
    (Curve, GrowthReport)
    """
    if max_iter < 1:
        raise InvalidInputError(f"max_iter must be >= 1, got {max_iter}")
    if direction not in ("forward", "backward"):
        raise InvalidInputError(f"direction must be 'forward' or 'backward', got {direction!r}")

    forward = direction == "forward"
    mapper = apply_lift if forward else apply_inverse_lift
    axis = 0 if forward else 1
    theta = params.theta2

    def image(pre, tan):
        x, y = mapper(params, pre[:, 0], pre[:, 1])
        J = jacobian_at(params, pre[:, 0]) if forward else inverse_jacobian_at(params, pre[:, 1])
        u = J.a11 * tan[:, 0] + J.a12 * tan[:, 1]
        v = J.a21 * tan[:, 0] + J.a22 * tan[:, 1]
        n = np.hypot(u, v)
        return np.column_stack([x, y]), np.column_stack([u / n, v / n])

    lengths, violations = [], []
    first_gt4 = None
    truncated = False
    curve = c

    for it in range(1, max_iter + 1):
        pre, tan, s = curve.vertices, curve.tangents, curve.arc_params
        img, new_tan = image(pre, tan)
        for _ in range(MAX_REFINE_ROUNDS):
            gaps = np.hypot(*np.diff(img, axis=0).T)
            need = np.maximum(np.ceil(gaps / h_max).astype(np.int64) - 1, 0)
            if not need.any():
                break
            if len(pre) + int(need.sum()) > vertex_cap:
                truncated = True
                break
            pre, tan, s = _insert(pre, tan, s, need)
            img, new_tan = image(pre, tan)
        else:
            logger.warning(f"Refinement at iterate {it} left gaps above h_max")
        if truncated:
            logger.warning(f"Vertex cap {vertex_cap} reached at iterate {it}; growth truncated")
            break

        offset = np.floor(img[0])
        curve = Curve(vertices=img - offset, tangents=new_tan, arc_params=s, map_params=params,
                      direction=direction, iterate=curve.iterate + 1, preimage=pre, offset=offset)
        along = np.abs(new_tan[:, axis])
        across = np.abs(new_tan[:, 1 - axis])
        violations.append(int(np.count_nonzero(theta * along < across - 1e-12)))
        lengths.append(curve.total_length)
        logger.debug(f"Iterate {it}: length {curve.total_length:.6g}, {len(img)} vertices")

        if first_gt4 is None and curve.total_length > 4.0:
            first_gt4 = it
        if curve.total_length > target_length:
            break

    report = GrowthReport(
        lengths_per_iterate=lengths,
        first_iterate_length_gt4=first_gt4,
        cone_violations=int(sum(violations[1:])),
        truncated=truncated,
        violations_per_iterate=violations,
        fold_count=_count_folds(curve.tangents, axis),
    )
    return curve, report


def central_arc(curve: Curve, length: float) -> Curve:
    """Sub-curve of arclength about ``length`` centred on the seed point."""
    if curve.total_length <= length:
        return curve
    cum = np.concatenate([[0.0], np.cumsum(curve.segment_lengths())])
    i0 = int(np.argmin(np.abs(curve.arc_params)))
    keep = np.flatnonzero(np.abs(cum - cum[i0]) <= length / 2.0)
    lo, hi = max(int(keep[0]) - 1, 0), min(int(keep[-1]) + 2, len(cum))
    return curve.slice(lo, hi)


# ---------------------------------------------------
# Intersections
# ---------------------------------------------------
def _cross(a, b):
    return a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]


def _dedup_witnesses(points, order_keys):
    if len(points) <= 1:
        return np.arange(len(points))
    tree = cKDTree(wrap(points), boxsize=1.0)
    pairs = tree.query_pairs(WITNESS_DEDUP, output_type="ndarray")
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(len(points),) * 2)
    _, labels = connected_components(graph, directed=False)
    by_label = np.lexsort((order_keys, labels))
    _, first = np.unique(labels[by_label], return_index=True)
    return np.sort(by_label[first])


def find_transverse_intersections(a: Curve, b: Curve, angle_min: float = 0.0) -> List[IntersectionWitness]:
    """
    All crossings between segments of ``a`` and ``b`` on the torus.

    Candidate segment pairs come from a periodic k-d tree on midpoints; each
    crossing is refined by shrinking both sub-chords around the current
    estimate until they are shorter than 1e-10, then re-checked.
    """
    if len(a.vertices) < 2 or len(b.vertices) < 2:
        raise InvalidInputError("curves need at least two vertices")

    mid_a = 0.5 * (a.vertices[:-1] + a.vertices[1:])
    mid_b = 0.5 * (b.vertices[:-1] + b.vertices[1:])
    radius = 0.5 * (a.segment_lengths().max() + b.segment_lengths().max()) + 1e-12
    tree_a = cKDTree(wrap(mid_a), boxsize=1.0)
    tree_b = cKDTree(wrap(mid_b), boxsize=1.0)
    cand = tree_a.sparse_distance_matrix(tree_b, radius, output_type="ndarray")
    if len(cand) == 0:
        return []
    i = cand["i"].astype(np.int64)
    j = cand["j"].astype(np.int64)
    shift = np.round(mid_b[j] - mid_a[i])

    # chord test on the raw segments
    p0, d1 = a.vertices[i], a.vertices[i + 1] - a.vertices[i]
    q0, d2 = b.vertices[j] - shift, b.vertices[j + 1] - b.vertices[j]
    den = _cross(d1, d2)
    ok = np.abs(den) > 1e-15 * np.hypot(*d1.T) * np.hypot(*d2.T)
    den = np.where(ok, den, 1.0)
    w = q0 - p0
    t = _cross(w, d2) / den
    u = _cross(w, d1) / den
    eps = 1e-12
    ok &= (t >= -eps) & (t <= 1 + eps) & (u >= -eps) & (u <= 1 + eps)
    if not ok.any():
        return []
    i, j, shift = i[ok], j[ok], shift[ok]
    ta0, ta1 = np.zeros(len(i)), np.ones(len(i))
    tb0, tb1 = np.zeros(len(i)), np.ones(len(i))
    ta, tb = np.clip(t[ok], 0, 1), np.clip(u[ok], 0, 1)

    for _ in range(80):
        A0, A1 = a.evaluate(i, ta0), a.evaluate(i, ta1)
        B0, B1 = b.evaluate(j, tb0) - shift, b.evaluate(j, tb1) - shift
        da, db = A1 - A0, B1 - B0
        den = _cross(da, db)
        den = np.where(np.abs(den) > 0, den, 1.0)
        w = B0 - A0
        ta = ta0 + np.clip(_cross(w, db) / den, 0, 1) * (ta1 - ta0)
        tb = tb0 + np.clip(_cross(w, da) / den, 0, 1) * (tb1 - tb0)
        if np.all((np.hypot(*da.T) < BISECT_TOL) & (np.hypot(*db.T) < BISECT_TOL)):
            break
        wa, wb = (ta1 - ta0) / 4.0, (tb1 - tb0) / 4.0
        ta0, ta1 = np.maximum(ta0, ta - wa), np.minimum(ta1, ta + wa)
        tb0, tb1 = np.maximum(tb0, tb - wb), np.minimum(tb1, tb + wb)

    pa = a.evaluate(i, ta)
    pb = b.evaluate(j, tb) - shift
    residual = np.hypot(*(pa - pb).T)
    # angle from the whole segments, not the refined sub-chords
    ca = a.vertices[i + 1] - a.vertices[i]
    cb = b.vertices[j + 1] - b.vertices[j]
    angle = np.arctan2(np.abs(_cross(ca, cb)), np.abs(np.sum(ca * cb, axis=1)))
    good = (residual <= WITNESS_RESIDUAL) & (angle >= angle_min) & (angle > 0)
    if not good.any():
        return []
    pa, angle, i, j, ta, tb = pa[good], angle[good], i[good], j[good], ta[good], tb[good]

    sa = a.arc_params[i] + ta * (a.arc_params[i + 1] - a.arc_params[i])
    sb = b.arc_params[j] + tb * (b.arc_params[j + 1] - b.arc_params[j])
    keep = _dedup_witnesses(pa, sa)
    keep = keep[np.lexsort((sb[keep], sa[keep]))]
    red = wrap(pa)
    return [
        IntersectionWitness(TorusPoint(float(red[n, 0]), float(red[n, 1])), float(angle[n]),
                            float(sa[n]), float(sb[n]))
        for n in keep
    ]


def default_angle_min(params: Params) -> float:
    return math.pi / 2.0 - 2.0 * math.atan(params.theta2) - 0.05


def homoclinically_related(params: Params, p: TorusPoint, q: TorusPoint, max_iter: int = 40,
                           target_length: float = 4.0, angle_min: float = None,
                           h_max: float = H_MAX, vertex_cap: int = VERTEX_CAP) -> HomoclinicResult:
    """
    Transverse intersections W+(p) with W-(q) and W+(q) with W-(p).

    ``related`` is True when both directions give a witness above
    ``angle_min``, False when grown curves miss each other in either
    direction, and None when growth stopped short of ``target_length``.
    """
    angle_min = default_angle_min(params) if angle_min is None else angle_min
    witnesses, reports = [], []
    verdict = True

    for src, dst in ((p, q), (q, p)):
        unstable, rep_u = grow_curve(params, seed_local_manifold(params, src, "unstable", h_max), "forward",
                                     max_iter, target_length, h_max, vertex_cap)
        stable, rep_s = grow_curve(params, seed_local_manifold(params, dst, "stable", h_max), "backward",
                                   max_iter, target_length, h_max, vertex_cap)
        reports.extend([rep_u.to_dict(), rep_s.to_dict()])
        if unstable.total_length <= target_length or stable.total_length <= target_length:
            logger.info(f"Growth stopped short of length {target_length:g}; verdict inconclusive")
            return HomoclinicResult(None, witnesses, reports)

        found = find_transverse_intersections(central_arc(unstable, target_length),
                                              central_arc(stable, target_length), angle_min)
        logger.info(f"W+({float(src.x):.6g}, {float(src.y):.6g}) x W-({float(dst.x):.6g}, "
                    f"{float(dst.y):.6g}): {len(found)} witnesses")
        witnesses.extend(found)
        if not found:
            verdict = False
    return HomoclinicResult(verdict, witnesses, reports)
