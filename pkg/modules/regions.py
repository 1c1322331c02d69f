# modules/regions.py
"""
Cones, the critical strips Crit1 / Crit2, the good regions G1 / G2, and Monte
Carlo audits of the cone-preservation and expansion estimates.
"""

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
import pandas as pd

from modules import scheduler
from modules.cocycle import z_mask
from modules.errors import ConeDegenerateError, InvalidInputError
from modules.map_core import (
    Jacobian2,
    Params,
    TangentVec,
    TorusPoint,
    derive_params,
    inverse_jacobian,
    jacobian,
    norm_bounds,
)

logger = logging.getLogger(__name__)

CONE_TOL = 1e-12
# strips are open intervals; the slack keeps exact boundary points outside
STRIP_SLACK = 1e-12
AUDIT_CHUNK = 50_000


# ---------------------------------------------------
# Cones
# ---------------------------------------------------
@dataclass(frozen=True)
class Cone:
    """{w : aperture * |w along axis| >= |w across axis|}; ``axis`` is a unit vector."""
    axis: TangentVec
    aperture: float

    @property
    def half_angle(self) -> float:
        return math.atan(self.aperture)


def horizontal_cone(aperture: float) -> Cone:
    return Cone(TangentVec(1.0, 0.0), float(aperture))


def vertical_cone(aperture: float) -> Cone:
    return Cone(TangentVec(0.0, 1.0), float(aperture))


def _split(c: Cone, u, v):
    along = u * c.axis.u + v * c.axis.v
    across = -u * c.axis.v + v * c.axis.u
    return along, across


def cone_contains(c: Cone, v: TangentVec) -> bool:
    """Non-strict membership: boundary rays count as inside."""
    nrm = math.hypot(v.u, v.v)
    if nrm == 0.0:
        raise InvalidInputError("cone membership is undefined for the zero vector")
    along, across = _split(c, v.u, v.v)
    return bool(c.aperture * abs(along) >= abs(across) - CONE_TOL * nrm)


def _wrap_angle(a):
    """Into (-pi, pi]."""
    return np.pi - np.mod(np.pi - a, 2.0 * np.pi)


def image_angles(J: Jacobian2, c: Cone):
    """
    Axis angle and half-angle of the image of ``c`` under ``J``.

    The image is spanned by the images of the two boundary rays; the side
    holding the image of the axis is the inside. Works on arrays of Jacobians.
    """
    pu, pv = -c.axis.v, c.axis.u
    a = J.apply(c.axis)
    hi = J.apply(TangentVec(c.axis.u + c.aperture * pu, c.axis.v + c.aperture * pv))
    lo = J.apply(TangentVec(c.axis.u - c.aperture * pu, c.axis.v - c.aperture * pv))
    phi = np.arctan2(a.v, a.u)
    d_hi = _wrap_angle(np.arctan2(hi.v, hi.u) - phi)
    d_lo = _wrap_angle(np.arctan2(lo.v, lo.u) - phi)
    half = np.abs(d_hi - d_lo) / 2.0
    centre = phi + (d_hi + d_lo) / 2.0
    return centre, half


def cone_image(params: Params, p: TorusPoint, c: Cone, inverse: bool = False) -> Cone:
    """Smallest cone holding Df(p) c (or Df^-1(p) c with ``inverse``)."""
    J = inverse_jacobian(params, p) if inverse else jacobian(params, p)
    centre, half = image_angles(J, c)
    centre, half = float(centre), float(half)
    if half >= math.pi / 2.0:
        raise ConeDegenerateError(f"image cone spread {2 * half:.6f} rad exceeds pi")
    return Cone(TangentVec(math.cos(centre), math.sin(centre)), math.tan(half))


def _line_offset(a_u, a_v, b_u, b_v):
    """Angle between two lines, in [0, pi/2]."""
    return np.arctan2(np.abs(a_u * b_v - a_v * b_u), np.abs(a_u * b_u + a_v * b_v))


def cone_subset(inner: Cone, outer: Cone, tol: float = CONE_TOL) -> bool:
    d = _line_offset(inner.axis.u, inner.axis.v, outer.axis.u, outer.axis.v)
    return bool(d + inner.half_angle <= outer.half_angle + tol)


def min_expansion_in_cone(params: Params, p: TorusPoint, c: Cone, J: Jacobian2 = None):
    """
    min ||Df(p) v|| over unit v in ``c``.

    The quadratic form v^T (J^T J) v, written in the angle phi from the cone
    axis, is evaluated at both boundary rays and at its critical directions
    lying inside the cone. ``J`` overrides Df(p) when given.
    """
    J = jacobian(params, p) if J is None else J
    q11 = J.a11 ** 2 + J.a21 ** 2
    q12 = J.a11 * J.a12 + J.a21 * J.a22
    q22 = J.a12 ** 2 + J.a22 ** 2

    au, av = c.axis.u, c.axis.v
    pu, pv = -av, au
    A = q11 * au * au + 2 * q12 * au * av + q22 * av * av
    B = q11 * au * pu + q12 * (au * pv + av * pu) + q22 * av * pv
    C = q11 * pu * pu + 2 * q12 * pu * pv + q22 * pv * pv

    def form(phi):
        cs, sn = np.cos(phi), np.sin(phi)
        return A * cs * cs + 2 * B * cs * sn + C * sn * sn

    alpha = c.half_angle
    best = np.minimum(form(alpha), form(-alpha))
    crit = 0.5 * np.arctan2(2 * B, A - C)
    for phi in (crit, crit + np.pi / 2.0):
        # fold into (-pi/2, pi/2]; v and -v give the same value
        phi = phi - np.pi * np.round(phi / np.pi)
        inside = np.abs(phi) <= alpha
        best = np.where(inside, np.minimum(best, form(phi)), best)
    out = np.sqrt(np.maximum(best, 0.0))
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------
# Critical strips and good regions
# ---------------------------------------------------
@dataclass
class RegionLabel:
    in_crit1: bool
    in_crit2: bool
    g1_component: Optional[int]
    g2_component: Optional[int]


def _strip_dist(x):
    return np.minimum(np.abs(x - 0.25), np.abs(x - 0.75))


def region_masks(params: Params, x, y):
    """Vectorized ``(in_crit1, in_crit2, component)`` with components 1..4."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    dx, dy = _strip_dist(x), _strip_dist(y)
    outer = params.crit_halfwidth_outer - STRIP_SLACK
    inner = params.crit_halfwidth_inner - STRIP_SLACK
    crit1 = (dx < outer) | (dy < outer)
    crit2 = (dx < inner) | (dy < inner)
    xb = ((x > 0.25) & (x < 0.75)).astype(int)
    yb = ((y > 0.25) & (y < 0.75)).astype(int)
    return crit1, crit2, 1 + 2 * xb + yb


def classify_region(params: Params, p: TorusPoint) -> RegionLabel:
    crit1, crit2, comp = region_masks(params, p.x, p.y)
    crit1, crit2, comp = bool(crit1), bool(crit2), int(comp)
    return RegionLabel(
        in_crit1=crit1,
        in_crit2=crit2,
        g1_component=None if crit1 else comp,
        g2_component=None if crit2 else comp,
    )


def g2_is_empty(params: Params) -> bool:
    return params.crit_halfwidth_inner >= 0.25


def sample_g2(params: Params, count: int, rng: np.random.Generator):
    """
    Uniform points of G2, drawn directly from the allowed x and y intervals
    (centred on 0 and 1/2, half-length 1/4 - inner half-width).
    """
    if g2_is_empty(params):
        raise InvalidInputError(f"G2 is empty at k={params.k:g}")
    half = 0.25 - params.crit_halfwidth_inner

    def coord():
        centre = 0.5 * rng.integers(0, 2, count)
        return np.mod(centre + (rng.random(count) - 0.5) * 2.0 * half, 1.0)

    return coord(), coord()


# ---------------------------------------------------
# Lemma audits
# ---------------------------------------------------
LEMMAS = (
    "cone-image-horizontal",
    "cone-image-vertical",
    "expansion",
    "norm-bound",
    "boundary-gap",
    "z-in-g1",
)


def _tally(ok, margin):
    ok = np.asarray(ok)
    margin = np.asarray(margin, dtype=float)
    return int(ok.sum()), int(ok.size), float(margin.min()) if margin.size else math.inf


def _audit_chunk(task):
    params, count, rng = task
    out = {}
    hor_out = math.atan(params.theta2)

    if not g2_is_empty(params):
        x, y = sample_g2(params, count, rng)
        p = TorusPoint(x, y)
        J = jacobian(params, p)
        Jinv = inverse_jacobian(params, p)
        wide = 4.0 / params.theta1

        centre, half = image_angles(J, horizontal_cone(wide))
        margin = hor_out - (_line_offset(np.cos(centre), np.sin(centre), 1.0, 0.0) + half)
        out["cone-image-horizontal"] = _tally(margin >= 0, margin)

        centre, half = image_angles(Jinv, vertical_cone(wide))
        margin = hor_out - (_line_offset(np.cos(centre), np.sin(centre), 0.0, 1.0) + half)
        out["cone-image-vertical"] = _tally(margin >= 0, margin)

        expansion = min_expansion_in_cone(params, p, horizontal_cone(params.theta2), J=J)
        margin = expansion - math.sqrt(params.k)
        out["expansion"] = _tally(margin > 0, margin)

    x, y = rng.random(count), rng.random(count)
    nb = norm_bounds(params, TorusPoint(x, y))
    bound1 = 4.0 * math.pi * params.k
    bound2 = 5.0 * math.pi ** 2 * params.k ** 2
    margin = np.minimum.reduce([bound1 - nb["norm"], bound1 - nb["inverse_norm"], bound2 - nb["norm2"]])
    out["norm-bound"] = _tally(margin > 0, margin)
    return out


def _z_in_g1_chunk(task):
    params, count, rng = task
    x, y = rng.random(count), rng.random(count)
    member, _ = z_mask(params, x, y)
    crit1, _, _ = region_masks(params, x[member], y[member])
    inside = ~crit1
    margin = np.where(inside, 0.0, -1.0)
    return _tally(inside, margin)


def _merge(parts):
    passed = sum(p[0] for p in parts)
    total = sum(p[1] for p in parts)
    worst = min((p[2] for p in parts), default=math.inf)
    return passed, total, worst


def _record(params, lemma, passed, total, worst, note=None):
    rec = {
        "k": params.k,
        "samples": total,
        "lemma": lemma,
        "pass_rate": passed / total if total else None,
        "worst_margin": worst if total and math.isfinite(worst) else None,
    }
    if note:
        rec["note"] = note
    return rec


def audit_cone_lemmas(params: Params, samples: int = 10 ** 6, seed: int = 0, threads: int = 1,
                      z_samples: int = 2000, lemmas: Iterable[str] = LEMMAS,
                      progress: bool = False) -> list:
    """
    Monte Carlo audit of the cone lemmas at ``params.k``.

    Returns one record ``{k, samples, lemma, pass_rate, worst_margin}`` per
    requested lemma. Chunking depends only on ``samples`` so results do not
    change with ``threads``.
    """
    lemmas = list(lemmas)
    unknown = set(lemmas) - set(LEMMAS)
    if unknown:
        raise InvalidInputError(f"unknown lemma(s): {sorted(unknown)}")

    sizes = scheduler.chunk_sizes(samples, AUDIT_CHUNK)
    streams = scheduler.rng_streams(seed, len(sizes))
    tasks = [(params, n, g) for n, g in zip(sizes, streams)]
    logger.info(f"Cone audit at k={params.k:g}: {samples} samples in {len(tasks)} chunks")
    parts = scheduler.run_tasks(_audit_chunk, tasks, threads, progress=progress, desc="cone audit")

    records = []
    for lemma in lemmas:
        if lemma == "boundary-gap":
            gap = params.crit_halfwidth_outer - params.crit_halfwidth_inner
            target = params.k ** (-3.0 / 10.0)
            err = abs(gap - target)
            records.append(_record(params, lemma, int(err <= 1e-12), 1, target - err))
        elif lemma == "z-in-g1":
            zs = scheduler.chunk_sizes(z_samples, 500)
            zstreams = scheduler.rng_streams(seed + 1, len(zs))
            zparts = scheduler.run_tasks(_z_in_g1_chunk, [(params, n, g) for n, g in zip(zs, zstreams)], threads)
            passed, total, worst = _merge(zparts)
            note = "G1 is empty at this k" if params.crit_halfwidth_outer >= 0.25 else None
            records.append(_record(params, lemma, passed, total, worst, note))
        elif lemma in parts[0]:
            passed, total, worst = _merge([p[lemma] for p in parts])
            records.append(_record(params, lemma, passed, total, worst))
        else:
            records.append(_record(params, lemma, 0, 0, math.inf, "G2 is empty at this k"))
    return records


def audit_frame(records: list) -> pd.DataFrame:
    return pd.DataFrame(records, columns=["k", "lemma", "samples", "pass_rate", "worst_margin"])


def smallest_passing_k(k_values: Iterable[float], samples: int = 10 ** 5, seed: int = 0, threads: int = 1,
                       lemmas: Iterable[str] = ("cone-image-horizontal", "cone-image-vertical", "expansion"),
                       eps: float = 0.0, harmonic: int = 2) -> dict:
    """First k (in increasing order) at which every listed lemma passes on all samples."""
    lemmas = list(lemmas)
    all_records = []
    found = None
    for k in sorted(k_values):
        params = derive_params(k, eps=eps, harmonic=harmonic)
        records = audit_cone_lemmas(params, samples=samples, seed=seed, threads=threads, lemmas=lemmas)
        all_records.extend(records)
        if all(r["pass_rate"] == 1.0 for r in records):
            found = params.k
            break
    return {"lemmas": lemmas, "samples": samples, "smallest_k": found, "records": all_records}
