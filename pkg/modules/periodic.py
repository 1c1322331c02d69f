# modules/periodic.py
"""
Periodic-point census: grid-seeded damped Newton for fixed points of f^n,
stability classification, rho-hyperbolic filtering, database audits and the
JSON cache.

"Period n" means fixed points of f^n (divisor periods included) unless
``least_period`` is requested. Points are counted, not orbits.
"""

import json
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from modules import scheduler
from modules.errors import CacheError, InvalidInputError, NotPeriodicError
from modules.map_core import (
    Jacobian2,
    Params,
    TorusPoint,
    apply,
    derive_params,
    involution,
    jacobian_at,
    nearest_lift,
    torus_dist,
    wrap,
)

logger = logging.getLogger(__name__)

NEWTON_TOL = 1e-11
DEDUP_TOL = 1e-6
VERIFY_TOL = 1e-9
MAX_NEWTON_STEPS = 30
MAX_HALVINGS = 10
SINGULAR_DET = 1e-14
PARABOLIC_TOL = 1e-5
GRID_CAP = 4096
GRID_FLOOR = 128
DIAGONAL_CAP = 16 * GRID_CAP
ROWS_PER_TASK = 64


# ---------------------------------------------------
# Types
# ---------------------------------------------------
class StabilityKind(str, Enum):
    HYPERBOLIC = "hyperbolic"
    ELLIPTIC = "elliptic"
    PARABOLIC = "parabolic"


@dataclass
class PeriodicPoint:
    point: TorusPoint
    n: int
    trace: float
    lambda_: float
    stability_kind: StabilityKind


@dataclass
class PeriodicDatabase:
    k: float
    n: int
    rho: float
    points: List[PeriodicPoint]
    seeds_used: int
    newton_tol: float = NEWTON_TOL
    dedup_tol: float = DEDUP_TOL
    grid_res: int = 0
    eps: float = 0.0
    harmonic: int = 2
    least_period: bool = False
    discarded: Dict[str, int] = field(default_factory=dict)

    def params(self) -> Params:
        return derive_params(self.k, eps=self.eps, harmonic=self.harmonic, allow_small=True)

    def coords(self) -> np.ndarray:
        return np.array([[p.point.x, p.point.y] for p in self.points], dtype=float).reshape(-1, 2)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([{
            "x": p.point.x,
            "y": p.point.y,
            "n": p.n,
            "trace": p.trace,
            "lambda": p.lambda_,
            "stability_kind": p.stability_kind.value,
        } for p in self.points], columns=["x", "y", "n", "trace", "lambda", "stability_kind"])


def default_grid_res(k: float, n: int) -> int:
    return int(min(max(math.ceil(3.0 * (4.0 * k) ** (n / 2.0)), GRID_FLOOR), GRID_CAP))


def diagonal_seed_count(k: float, grid_res: int) -> int:
    """Extra seeds on the diagonal x = y; even, so 0 and 1/2 are among them."""
    return int(min(2 * max(grid_res, math.ceil(16.0 * k)), DIAGONAL_CAP))


# ---------------------------------------------------
# Orbit products
# ---------------------------------------------------
def _power(params: Params, x, y, n: int):
    """f^n(x, y) (reduced) and the Jacobian product Df^n along the orbit."""
    one, zero = np.ones_like(x), np.zeros_like(x)
    J = Jacobian2(one, zero, zero, one)
    p = TorusPoint(x, y)
    for _ in range(n):
        J = jacobian_at(params, p.x).compose(J)
        p = apply(params, p)
    return p, J


def _displacement(params: Params, x, y, n: int):
    q, J = _power(params, x, y, n)
    return nearest_lift(q.x - x), nearest_lift(q.y - y), J


def _newton_chunk(task):
    """Damped Newton from a block of seeds; returns converged points and discard counts."""
    params, n, xs, ys, tol = task
    x, y = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    dx, dy, J = _displacement(params, x, y, n)
    res = np.hypot(dx, dy)
    active = np.ones(x.shape, dtype=bool)
    singular = np.zeros(x.shape, dtype=bool)

    for _ in range(MAX_NEWTON_STEPS):
        if not active.any():
            break
        a11, a12, a21, a22 = J.a11 - 1.0, J.a12, J.a21, J.a22 - 1.0
        det = a11 * a22 - a12 * a21
        sing = active & (np.abs(det) < SINGULAR_DET)
        # converged points stop polishing instead of being discarded
        singular |= sing & (res > tol)
        active &= ~sing
        safe = np.where(active, det, 1.0)
        sx = -(a22 * dx - a12 * dy) / safe
        sy = -(-a21 * dx + a11 * dy) / safe

        lam = np.ones(x.shape)
        pending = active.copy()
        nx, ny = x.copy(), y.copy()
        ndx, ndy, nres = dx.copy(), dy.copy(), res.copy()
        nJ = J
        for _ in range(MAX_HALVINGS):
            tx = wrap(x + lam * sx)
            ty = wrap(y + lam * sy)
            tdx, tdy, tJ = _displacement(params, tx, ty, n)
            tres = np.hypot(tdx, tdy)
            better = pending & (tres < res)
            nx, ny = np.where(better, tx, nx), np.where(better, ty, ny)
            ndx, ndy, nres = np.where(better, tdx, ndx), np.where(better, tdy, ndy), np.where(better, tres, nres)
            nJ = Jacobian2(*(np.where(better, t, o) for t, o in zip(tJ, nJ)))
            pending &= ~better
            if not pending.any():
                break
            lam = np.where(pending, lam / 2.0, lam)

        # no decrease: converged points are done, the rest have failed
        active &= ~pending
        x, y, dx, dy, res, J = nx, ny, ndx, ndy, nres, nJ

    ok = (res <= tol) & ~singular
    return {
        "x": x[ok],
        "y": y[ok],
        "res": res[ok],
        "singular": int(singular.sum()),
        "unconverged": int((~ok & ~singular).sum()),
    }


# ---------------------------------------------------
# Classification
# ---------------------------------------------------
def _classify_trace(t: float, n: int, parabolic_tol: float):
    if abs(abs(t) - 2.0) <= parabolic_tol:
        return StabilityKind.PARABOLIC, 0.0
    if abs(t) > 2.0:
        return StabilityKind.HYPERBOLIC, math.log((abs(t) + math.sqrt(t * t - 4.0)) / 2.0) / n
    return StabilityKind.ELLIPTIC, 0.0


def classify(params: Params, p: TorusPoint, n: int, parabolic_tol: float = PARABOLIC_TOL) -> PeriodicPoint:
    """
    Trace and exponent of Df^n along the orbit of a period-n point.

    Since det Df^n = 1 the trace decides the type: |t| > 2 hyperbolic,
    |t| < 2 elliptic, |t| = 2 (within ``parabolic_tol``) parabolic.
    """
    if n < 1:
        raise InvalidInputError(f"n must be >= 1, got {n}")
    q, J = _power(params, np.float64(p.x), np.float64(p.y), n)
    dist = float(torus_dist(q, p))
    if dist > VERIFY_TOL:
        raise NotPeriodicError(f"torus_dist(f^{n}(p), p) = {dist:.3e} exceeds {VERIFY_TOL:g}")
    t = float(J.trace())
    kind, lam = _classify_trace(t, n, parabolic_tol)
    return PeriodicPoint(point=TorusPoint(float(p.x), float(p.y)), n=n, trace=t, lambda_=lam, stability_kind=kind)


# ---------------------------------------------------
# Census
# ---------------------------------------------------
def _clusters(pts: np.ndarray, tol: float) -> np.ndarray:
    tree = cKDTree(pts, boxsize=1.0)
    pairs = tree.query_pairs(tol, output_type="ndarray")
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(len(pts),) * 2)
    return connected_components(graph, directed=False)[1]


def _dedup(pts: np.ndarray, res: np.ndarray, tol: float):
    """Keep the lowest-residual representative of every cluster, in coordinate order."""
    if len(pts) == 0:
        return pts, res
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts, res = pts[order], res[order]
    labels = _clusters(pts, tol)
    by_label = np.lexsort((res, labels))
    _, first = np.unique(labels[by_label], return_index=True)
    keep = np.sort(by_label[first])
    return pts[keep], res[keep]


def _missing(pts: np.ndarray, images: np.ndarray, tol: float) -> np.ndarray:
    if len(pts) == 0:
        return np.zeros(len(images), dtype=bool)
    dist, _ = cKDTree(pts, boxsize=1.0).query(images)
    return dist > tol


def _reduce(pts: np.ndarray) -> np.ndarray:
    return np.column_stack([wrap(pts[:, 0]), wrap(pts[:, 1])]) if len(pts) else pts


def _images(params: Params, pts: np.ndarray) -> np.ndarray:
    """f-images followed by involution images, reduced to [0, 1)^2."""
    img = apply(params, TorusPoint(pts[:, 0], pts[:, 1]))
    return _reduce(np.vstack([np.column_stack([img.x, img.y]), pts[:, ::-1]]))


def _polish(params: Params, n: int, pts: np.ndarray, tol: float) -> np.ndarray:
    """Newton-polish inserted points and keep those that pass verification."""
    if len(pts) == 0:
        return pts
    out = _newton_chunk((params, n, pts[:, 0], pts[:, 1], tol))
    pol = _reduce(np.column_stack([out["x"], out["y"]]))
    q, _ = _power(params, pol[:, 0], pol[:, 1], n)
    return pol[torus_dist(q, TorusPoint(pol[:, 0], pol[:, 1])) <= VERIFY_TOL]


def _close_set(params: Params, n: int, pts: np.ndarray, newton_tol: float, tol: float):
    """
    Insert polished images under f and the involution until nothing new
    appears, then drop points whose images are still missing until the set
    is closed under both. Returns ``(pts, inserted, dropped)``.
    """
    inserted = 0
    for _ in range(64):
        if len(pts) == 0:
            break
        images = _images(params, pts)
        new = images[_missing(pts, images, tol)]
        if len(new) == 0:
            break
        new = _polish(params, n, new, newton_tol)
        new = new[_missing(pts, new, tol)]
        new, _ = _dedup(new, np.zeros(len(new)), tol)
        if len(new) == 0:
            break
        inserted += len(new)
        pts = np.vstack([pts, new])

    dropped = 0
    while len(pts):
        orphan = _missing(pts, _images(params, pts), tol).reshape(2, -1).any(axis=0)
        if not orphan.any():
            break
        dropped += int(orphan.sum())
        pts = pts[~orphan]
    return pts, inserted, dropped


def _classify_verified(params: Params, pts: np.ndarray, n: int) -> List[PeriodicPoint]:
    """Vectorized classification of points that already passed verification."""
    if len(pts) == 0:
        return []
    _, J = _power(params, pts[:, 0], pts[:, 1], n)
    out = []
    for (x, y), t in zip(pts, J.trace()):
        kind, lam = _classify_trace(float(t), n, PARABOLIC_TOL)
        out.append(PeriodicPoint(TorusPoint(float(x), float(y)), n, float(t), lam, kind))
    return out


def _is_least_period(params: Params, x: float, y: float, n: int) -> bool:
    for d in range(1, n):
        if n % d == 0:
            q, _ = _power(params, np.float64(x), np.float64(y), d)
            if torus_dist(q, TorusPoint(x, y)) <= VERIFY_TOL * 10:
                return False
    return True


def find_periodic(params: Params, n: int, grid_res: int = None, newton_tol: float = NEWTON_TOL,
                  dedup_tol: float = DEDUP_TOL, least_period: bool = False, threads: int = 1,
                  progress: bool = False) -> PeriodicDatabase:
    """
    Fixed points of f^n from a grid_res x grid_res lattice of seeds.

    Parameters
    ----------
    params : Params
        Map parameters.
    n : int
        Power of the map, n >= 1.
    grid_res : int, optional
        Seeds per axis (>= 2); seeds sit at cell centres (i + 1/2) / grid_res.
        Defaults to ceil(3 (4k)^(n/2)), at least 128 and at most 4096.
        A further ``diagonal_seed_count`` seeds on x = y, including (0, 0)
        and (1/2, 1/2), are always added.
    least_period : bool
        Keep only points whose least period is exactly n.

    Returns
    -------
    PeriodicDatabase
        Deduplicated, re-verified set closed under f and the involution.
    """
    if int(n) != n or n < 1:
        raise InvalidInputError(f"n must be an integer >= 1, got {n}")
    grid_res = default_grid_res(params.k, n) if grid_res is None else int(grid_res)
    if grid_res < 2:
        raise InvalidInputError(f"grid_res must be >= 2, got {grid_res}")

    axis = (np.arange(grid_res) + 0.5) / grid_res
    tasks = []
    for lo in range(0, grid_res, ROWS_PER_TASK):
        xs, ys = np.meshgrid(axis, axis[lo:lo + ROWS_PER_TASK], indexing="xy")
        tasks.append((params, n, xs.ravel(), ys.ravel(), newton_tol))
    n_diag = diagonal_seed_count(params.k, grid_res)
    diag = np.arange(n_diag) / n_diag
    tasks.append((params, n, diag, diag.copy(), newton_tol))
    seeds = grid_res ** 2 + len(diag)
    logger.info(f"Periodic census k={params.k:g} n={n}: {seeds} seeds in {len(tasks)} tasks")
    parts = scheduler.run_tasks(_newton_chunk, tasks, threads, progress=progress, desc=f"Newton n={n}")

    pts = np.column_stack([np.concatenate([p["x"] for p in parts]), np.concatenate([p["y"] for p in parts])])
    res = np.concatenate([p["res"] for p in parts])
    discarded = {
        "singular": sum(p["singular"] for p in parts),
        "unconverged": sum(p["unconverged"] for p in parts),
    }
    pts = _reduce(pts)
    pts, res = _dedup(pts, res, dedup_tol)

    # independent re-verification
    q, _ = _power(params, pts[:, 0], pts[:, 1], n)
    ok = torus_dist(q, TorusPoint(pts[:, 0], pts[:, 1])) <= VERIFY_TOL
    discarded["failed_verification"] = int((~ok).sum())
    pts = pts[ok]

    pts, inserted, dropped = _close_set(params, n, pts, newton_tol, dedup_tol)
    discarded["repaired_inserted"] = inserted
    discarded["unclosed_dropped"] = dropped
    if inserted or dropped:
        logger.info(f"Closure/involution repair inserted {inserted} points and dropped {dropped}")

    if least_period and n > 1:
        lp = np.array([_is_least_period(params, x, y, n) for x, y in pts], dtype=bool)
        discarded["lower_period"] = int((~lp).sum())
        pts = pts[lp]

    points = _classify_verified(params, pts[np.lexsort((pts[:, 1], pts[:, 0]))], n)

    logger.info(f"Census k={params.k:g} n={n}: {len(points)} points, discarded {discarded}")
    return PeriodicDatabase(
        k=params.k, n=n, rho=0.0, points=points, seeds_used=seeds,
        newton_tol=newton_tol, dedup_tol=dedup_tol, grid_res=grid_res,
        eps=params.eps, harmonic=params.harmonic, least_period=least_period, discarded=discarded,
    )


def filter_rho_hyperbolic(db: PeriodicDatabase, rho: float) -> PeriodicDatabase:
    """Points with exponent lambda >= rho; det 1 makes the negative exponent -lambda."""
    if not rho > 0:
        raise InvalidInputError(f"rho must be positive, got {rho}")
    keep = [p for p in db.points if p.stability_kind == StabilityKind.HYPERBOLIC and p.lambda_ >= rho]
    return replace(db, rho=float(rho), points=keep)


def audit_database(db: PeriodicDatabase) -> dict:
    """Closure and involution violations, completeness heuristic and discard statistics."""
    params = db.params()
    pts = db.coords()
    closure = involution_viol = 0
    if len(pts):
        img = apply(params, TorusPoint(pts[:, 0], pts[:, 1]))
        closure = int(_missing(pts, _reduce(np.column_stack([img.x, img.y])), db.dedup_tol).sum())
        inv = involution(TorusPoint(pts[:, 0], pts[:, 1]))
        involution_viol = int(_missing(pts, np.column_stack([inv.x, inv.y]), db.dedup_tol).sum())
    kinds = {kind.value: 0 for kind in StabilityKind}
    for p in db.points:
        kinds[p.stability_kind.value] += 1
    return {
        "k": db.k,
        "n": db.n,
        "rho": db.rho,
        "count": len(db.points),
        "closure_violations": closure,
        "involution_violations": involution_viol,
        "heuristic_ratio": len(db.points) / (4.0 * db.k) ** db.n,
        "seeds_used": db.seeds_used,
        "discarded": dict(db.discarded),
        "kinds": kinds,
    }


# ---------------------------------------------------
# Persistence
# ---------------------------------------------------
class PeriodicPointRecord(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    x: float
    y: float
    n: int
    trace: float
    lambda_: float = Field(alias="lambda")
    stability_kind: StabilityKind = Field(alias="kind")


class DatabaseFile(BaseModel):
    k: float
    n: int
    rho: float = 0.0
    eps: float = 0.0
    harmonic: int = 2
    least_period: bool = False
    grid_res: int
    seeds_used: int
    newton_tol: float
    dedup_tol: float
    discarded: Dict[str, int] = {}
    points: List[PeriodicPointRecord]


def to_record(db: PeriodicDatabase) -> DatabaseFile:
    return DatabaseFile(
        k=db.k, n=db.n, rho=db.rho, eps=db.eps, harmonic=db.harmonic, least_period=db.least_period,
        grid_res=db.grid_res, seeds_used=db.seeds_used, newton_tol=db.newton_tol,
        dedup_tol=db.dedup_tol, discarded=db.discarded,
        points=[PeriodicPointRecord(x=p.point.x, y=p.point.y, n=p.n, trace=p.trace, lambda_=p.lambda_,
                                    stability_kind=p.stability_kind) for p in db.points],
    )


def from_record(rec: DatabaseFile) -> PeriodicDatabase:
    points = [PeriodicPoint(TorusPoint(r.x, r.y), r.n, r.trace, r.lambda_, r.stability_kind) for r in rec.points]
    return PeriodicDatabase(
        k=rec.k, n=rec.n, rho=rec.rho, points=points, seeds_used=rec.seeds_used,
        newton_tol=rec.newton_tol, dedup_tol=rec.dedup_tol, grid_res=rec.grid_res,
        eps=rec.eps, harmonic=rec.harmonic, least_period=rec.least_period, discarded=dict(rec.discarded),
    )


def save_database(db: PeriodicDatabase, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(to_record(db).model_dump_json(by_alias=True, indent=2))
    return path


def load_database(path) -> PeriodicDatabase:
    path = Path(path)
    try:
        return from_record(DatabaseFile.model_validate(json.loads(path.read_text())))
    except (OSError, json.JSONDecodeError, ValidationError) as e:
        raise CacheError(f"cannot read periodic database {path}: {e}")


def cache_path(cache_dir, params: Params, n: int, least_period: bool = False) -> Path:
    name = f"periodic_k{params.k:g}_n{n}"
    if params.eps:
        name += f"_eps{params.eps:g}_m{params.harmonic}"
    if least_period:
        name += "_least"
    return Path(cache_dir) / f"{name}.json"


def cached_census(params: Params, n: int, cache_dir, grid_res: int = None, newton_tol: float = NEWTON_TOL,
                  dedup_tol: float = DEDUP_TOL, least_period: bool = False, threads: int = 1,
                  progress: bool = False) -> PeriodicDatabase:
    """
    Load the census from ``cache_dir`` when a file with exactly the same k, n,
    tolerances and grid exists; otherwise compute it and store it there.
    """
    grid_res = default_grid_res(params.k, n) if grid_res is None else int(grid_res)
    path = cache_path(cache_dir, params, n, least_period)
    if path.exists():
        db = load_database(path)
        key = (db.k, db.n, db.newton_tol, db.dedup_tol, db.grid_res, db.eps, db.harmonic)
        if key == (params.k, n, newton_tol, dedup_tol, grid_res, params.eps, params.harmonic):
            logger.info(f"Loaded cached census {path}")
            return db
        logger.info(f"Cached census {path} was built with other settings; recomputing")
    db = find_periodic(params, n, grid_res=grid_res, newton_tol=newton_tol, dedup_tol=dedup_tol,
                       least_period=least_period, threads=threads, progress=progress)
    save_database(db, path)
    return db
