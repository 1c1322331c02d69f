# modules/cocycle.py
"""
Derivative cocycle along orbits: orbit windows, Lyapunov exponents,
finite-horizon Oseledets directions, Pliss times and the Z / X good-set tests.
"""

import logging
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
import pandas as pd

from modules import scheduler
from modules.errors import FrameUnresolvedError, InvalidInputError, NumericOverflowError
from modules.map_core import (
    Jacobian2,
    Params,
    TangentVec,
    TorusPoint,
    apply,
    apply_inverse,
    inverse_jacobian,
    jacobian,
)

logger = logging.getLogger(__name__)

FRAME_HORIZON = 30
FRAME_TOL = 1e-10
# generic start vector for power iteration
_W = (0.8, 0.6)


# ---------------------------------------------------
# Types
# ---------------------------------------------------
@dataclass
class OrbitWindow:
    base: TorusPoint
    points: List[TorusPoint]
    jacobians: List[Jacobian2]
    n_back: int
    n_fwd: int

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "j": np.arange(-self.n_back, self.n_fwd + 1),
            "x": [float(p.x) for p in self.points],
            "y": [float(p.y) for p in self.points],
            "a11": [float(J.a11) for J in self.jacobians],
        })


@dataclass
class OseledetsFrame:
    e_minus: TangentVec
    e_plus: TangentVec
    horizon: int


@dataclass
class LyapunovEstimate:
    lambda_plus: float
    lambda_minus: float
    horizon: int


@dataclass
class PlissOutput:
    times: List[int]
    density_lower_bound: float
    achieved_density: float = 0.0


# ---------------------------------------------------
# Orbits and exponents
# ---------------------------------------------------
def iterate_orbit(params: Params, p: TorusPoint, n_back: int, n_fwd: int) -> OrbitWindow:
    if n_back < 0 or n_fwd < 0:
        raise InvalidInputError("window sizes must be non-negative")
    back = []
    q = p
    for _ in range(n_back):
        q = apply_inverse(params, q)
        back.append(q)
    points = back[::-1] + [p]
    q = p
    for _ in range(n_fwd):
        q = apply(params, q)
        points.append(q)
    jacobians = [jacobian(params, q) for q in points]
    return OrbitWindow(base=p, points=points, jacobians=jacobians, n_back=n_back, n_fwd=n_fwd)


def lyapunov(params: Params, p: TorusPoint, horizon: int, backward: bool = False) -> LyapunovEstimate:
    """
    Largest exponent by renormalized power iteration of a generic vector.

    The coordinates of ``p`` may be arrays, in which case the exponents are
    arrays too. With ``backward`` the orbit of f^-1 is used.
    """
    if horizon < 100:
        raise InvalidInputError(f"horizon must be >= 100, got {horizon}")
    step = apply_inverse if backward else apply
    jac = inverse_jacobian if backward else jacobian

    q = TorusPoint(np.asarray(p.x, dtype=float), np.asarray(p.y, dtype=float))
    w = TangentVec(np.full(q.x.shape, _W[0]), np.full(q.x.shape, _W[1]))
    acc = np.zeros(q.x.shape)
    for _ in range(horizon):
        w = jac(params, q).apply(w)
        n = w.norm()
        acc += np.log(n)
        w = TangentVec(w.u / n, w.v / n)
        q = step(params, q)

    if not np.all(np.isfinite(acc)):
        raise NumericOverflowError("non-finite log-norm accumulation")
    lam = acc / horizon
    if lam.ndim == 0:
        lam = float(lam)
    return LyapunovEstimate(lambda_plus=lam, lambda_minus=-lam, horizon=horizon)


def _orient(u, v):
    """Fix the sign of a line direction: u > 0, or u == 0 and v > 0."""
    flip = (u < 0) | ((u == 0) & (v < 0))
    s = np.where(flip, -1.0, 1.0)
    return u * s, v * s


def _push(jacs: Sequence[Jacobian2], u, v):
    for J in jacs:
        u, v = J.a11 * u + J.a12 * v, J.a21 * u + J.a22 * v
        n = np.hypot(u, v)
        u, v = u / n, v / n
    return u, v


def _line_angle(u1, v1, u2, v2):
    return np.arctan2(np.abs(u1 * v2 - v1 * u2), np.abs(u1 * u2 + v1 * v2))


def frame_arrays(params: Params, x, y, horizon: int = FRAME_HORIZON, tol: float = FRAME_TOL):
    """
    Vectorized finite-horizon Oseledets directions.

    Returns ``(e_plus, e_minus, resolved)`` where the directions are
    ``TangentVec`` of arrays and ``resolved`` flags points whose directions at
    horizons ``horizon - 1`` and ``horizon`` agree to ``tol`` radians.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    p = TorusPoint(x, y)

    back = []
    q = p
    for _ in range(horizon):
        q = apply_inverse(params, q)
        back.append(q)
    fwd = [p]
    q = p
    for _ in range(horizon - 1):
        q = apply(params, q)
        fwd.append(q)

    # E+: push w from f^-h(p) forward to p
    push = [jacobian(params, q) for q in back[::-1]]
    w0 = (np.full(x.shape, _W[0]), np.full(x.shape, _W[1]))
    up, vp = _push(push, *w0)
    up1, vp1 = _push(push[1:], *w0)
    # E-: pull w from f^(h-1)(p) back to p
    pull = [jacobian(params, q).inverse() for q in fwd[::-1]]
    um, vm = _push(pull, *w0)
    um1, vm1 = _push(pull[1:], *w0)

    resolved = (_line_angle(up, vp, up1, vp1) <= tol) & (_line_angle(um, vm, um1, vm1) <= tol)
    resolved &= np.isfinite(up) & np.isfinite(um)
    return TangentVec(*_orient(up, vp)), TangentVec(*_orient(um, vm)), resolved


def oseledets_frame(params: Params, p: TorusPoint, horizon: int = FRAME_HORIZON,
                    tol: float = FRAME_TOL) -> OseledetsFrame:
    if horizon < 20:
        raise InvalidInputError(f"frame horizon must be >= 20, got {horizon}")
    e_plus, e_minus, resolved = frame_arrays(params, p.x, p.y, horizon, tol)
    if not np.all(resolved):
        raise FrameUnresolvedError(f"Oseledets directions did not converge at ({p.x}, {p.y})")
    e_plus = TangentVec(float(e_plus.u), float(e_plus.v))
    e_minus = TangentVec(float(e_minus.u), float(e_minus.v))
    return OseledetsFrame(e_minus=e_minus, e_plus=e_plus, horizon=horizon)


# ---------------------------------------------------
# Pliss times
# ---------------------------------------------------
def pliss_times(seq: Sequence[float], alpha1: float, alpha2: float, eps: float) -> PlissOutput:
    """
    Indices m from which every forward average of ``seq`` stays <= alpha2 + eps.

    m is a Pliss time iff S(n) - c n <= S(m) - c m for every n > m, with S the
    partial sums and c = alpha2 + eps; a suffix maximum decides all m at once.
    """
    a = np.asarray(seq, dtype=float)
    if a.ndim != 1 or a.size == 0:
        raise InvalidInputError("sequence must be a non-empty 1-D list")
    if not eps > 0:
        raise InvalidInputError(f"eps must be positive, got {eps}")
    if not alpha1 < alpha2:
        raise InvalidInputError(f"need alpha1 < alpha2, got {alpha1} >= {alpha2}")
    if np.any(a <= alpha1):
        raise InvalidInputError("every sequence element must exceed alpha1")

    c = alpha2 + eps
    b = np.concatenate([[0.0], np.cumsum(a - c)])
    # best value reachable strictly after m
    suffix_max = np.maximum.accumulate(b[::-1])[::-1][1:]
    scale = 1e-12 * max(1.0, float(np.max(np.abs(b))))
    times = np.flatnonzero(b[:-1] >= suffix_max - scale)

    bound = eps / (alpha2 + eps - alpha1)
    return PlissOutput(times=[int(t) for t in times], density_lower_bound=bound,
                       achieved_density=len(times) / a.size)


# ---------------------------------------------------
# Good sets Z and X
# ---------------------------------------------------
def _contraction_ok(params: Params, q: TorusPoint, horizon: int, forward: bool,
                    frame_horizon: int = FRAME_HORIZON):
    """
    log ||Df^(+-n)(q)|E|| < -n (4/5) log k for n = 1..horizon, E the contracted line.

    E along the orbit q_0..q_horizon comes from pulling a generic vector back
    from frame_horizon steps past the window; the normalizations of that pass
    are the one-step stretches ||Df(q_m) e(q_m)||.
    """
    step = apply if forward else apply_inverse
    # derivative that carries tangents from q_(m+1) back to q_m
    back_jac = inverse_jacobian if forward else jacobian
    pts = [TorusPoint(np.asarray(q.x, dtype=float), np.asarray(q.y, dtype=float))]
    for _ in range(horizon + frame_horizon):
        pts.append(step(params, pts[-1]))

    shape = np.shape(pts[0].x)
    u, v = np.full(shape, _W[0]), np.full(shape, _W[1])
    logs = [None] * horizon
    for m in range(len(pts) - 2, -1, -1):
        J = back_jac(params, pts[m + 1])
        u, v = J.a11 * u + J.a12 * v, J.a21 * u + J.a22 * v
        nrm = np.hypot(u, v)
        u, v = u / nrm, v / nrm
        if m < horizon:
            logs[m] = -np.log(nrm)

    acc = np.cumsum(np.stack(logs), axis=0)
    limits = np.arange(1, horizon + 1) * np.log(params.contraction_rate)
    return np.all(acc < limits.reshape((-1,) + (1,) * len(shape)), axis=0)


def z_mask(params: Params, x, y, horizon: int = None, frame_horizon: int = FRAME_HORIZON):
    """Vectorized Z test; returns ``(member, resolved)``."""
    horizon = params.T if horizon is None else horizon
    p = TorusPoint(np.asarray(x, dtype=float), np.asarray(y, dtype=float))

    q = apply_inverse(params, p)
    _, _, res_q = frame_arrays(params, q.x, q.y, frame_horizon)
    stable_ok = _contraction_ok(params, q, horizon, True, frame_horizon)

    r = apply(params, p)
    _, _, res_r = frame_arrays(params, r.x, r.y, frame_horizon)
    unstable_ok = _contraction_ok(params, r, horizon, False, frame_horizon)

    resolved = res_q & res_r
    return stable_ok & unstable_ok & resolved, resolved


def z_membership(params: Params, p: TorusPoint, horizon: int = None) -> bool:
    horizon = params.T if horizon is None else horizon
    if horizon < params.T:
        raise InvalidInputError(f"horizon must be >= T = {params.T}, got {horizon}")
    member, resolved = z_mask(params, p.x, p.y, horizon)
    if not np.all(resolved):
        raise FrameUnresolvedError(f"Oseledets directions did not converge near ({p.x}, {p.y})")
    return bool(np.all(member))


def _window_points(params: Params, x, y, reach: int):
    """Stack f^j(p) for |j| <= reach along a leading axis (row reach is p)."""
    p = TorusPoint(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    back, q = [], p
    for _ in range(reach):
        q = apply_inverse(params, q)
        back.append(q)
    fwd, q = [], p
    for _ in range(reach):
        q = apply(params, q)
        fwd.append(q)
    pts = back[::-1] + [p] + fwd
    return np.stack([q.x for q in pts]), np.stack([q.y for q in pts])


def x_mask(params: Params, x, y):
    """Vectorized X test; returns ``(member, resolved)`` per input point."""
    xs, ys = _window_points(params, x, y, params.T - 1)
    member, resolved = z_mask(params, xs, ys)
    return np.all(member, axis=0), np.all(resolved, axis=0)


def x_membership(params: Params, p: TorusPoint) -> bool:
    member, resolved = x_mask(params, p.x, p.y)
    if not np.all(resolved):
        raise FrameUnresolvedError(f"Oseledets directions did not converge along the orbit of ({p.x}, {p.y})")
    return bool(np.all(member))


def _rates_task(task):
    params, count, rng = task
    x = rng.random(count)
    y = rng.random(count)
    z, z_res = z_mask(params, x, y)
    xm, x_res = x_mask(params, x, y)
    return int(z.sum()), int((~z_res).sum()), int(xm.sum()), int((~x_res).sum())


def membership_rates(params: Params, samples: int = 2000, seed: int = 0,
                     threads: int = 1, chunk: int = 500) -> dict:
    """Monte Carlo frequencies of Z and X membership over uniform points."""
    sizes = scheduler.chunk_sizes(samples, chunk)
    streams = scheduler.rng_streams(seed, len(sizes))
    results = scheduler.run_tasks(_rates_task, [(params, n, g) for n, g in zip(sizes, streams)], threads)
    z, z_un, xm, x_un = (sum(r[i] for r in results) for i in range(4))
    delta = params.delta
    logger.info(f"Membership rates at k={params.k:g}: Z {z}/{samples}, X {xm}/{samples}")
    return {
        "k": params.k,
        "samples": samples,
        "z_rate": z / samples,
        "x_rate": xm / samples,
        "z_unresolved": z_un,
        "x_unresolved": x_un,
        "reference_z_bound": (1 - 7 * delta) / (1 + 7 * delta),
    }
