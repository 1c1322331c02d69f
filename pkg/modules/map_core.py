# modules/map_core.py
"""
Exact evaluation of the standard map family on the 2-torus.

    f_k(x, y) = (2x - y + k sin(2 pi x) + eps sin(2 pi m x), x)   (mod 1)

with closed-form inverse, Jacobian, the reversing involution I(x, y) = (y, x)
and torus geometry. ``eps = 0`` is the plain standard map; the trigonometric
term is the C^2-small perturbation used for robustness runs.

Every function accepts scalars or numpy arrays in the coordinate fields of
``TorusPoint`` / ``TangentVec`` and broadcasts.
"""

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np

from modules.errors import InvalidParameterError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

TWOPI = 2.0 * np.pi
DELTA = 1.0 / 600.0


# ---------------------------------------------------
# Types
# ---------------------------------------------------
class TorusPoint(NamedTuple):
    x: ArrayLike
    y: ArrayLike


class TangentVec(NamedTuple):
    u: ArrayLike
    v: ArrayLike

    def norm(self) -> ArrayLike:
        return np.hypot(self.u, self.v)

    def normalized(self) -> "TangentVec":
        n = self.norm()
        return TangentVec(self.u / n, self.v / n)


class Jacobian2(NamedTuple):
    a11: ArrayLike
    a12: ArrayLike
    a21: ArrayLike
    a22: ArrayLike

    def det(self) -> ArrayLike:
        return self.a11 * self.a22 - self.a12 * self.a21

    def trace(self) -> ArrayLike:
        return self.a11 + self.a22

    def apply(self, w: TangentVec) -> TangentVec:
        return TangentVec(self.a11 * w.u + self.a12 * w.v,
                          self.a21 * w.u + self.a22 * w.v)

    def inverse(self) -> "Jacobian2":
        d = self.det()
        return Jacobian2(self.a22 / d, -self.a12 / d, -self.a21 / d, self.a11 / d)

    def compose(self, other: "Jacobian2") -> "Jacobian2":
        """Matrix product ``self @ other`` (apply ``other`` first)."""
        return Jacobian2(
            self.a11 * other.a11 + self.a12 * other.a21,
            self.a11 * other.a12 + self.a12 * other.a22,
            self.a21 * other.a11 + self.a22 * other.a21,
            self.a21 * other.a12 + self.a22 * other.a22,
        )


@dataclass(frozen=True)
class Params:
    """Coupling k and the constants derived from it."""
    k: float
    delta: float
    theta1: float
    theta2: float
    r0: float
    T: int
    crit_halfwidth_outer: float
    crit_halfwidth_inner: float
    contraction_rate: float
    eps: float = 0.0
    harmonic: int = 2

    @property
    def log_k(self) -> float:
        return math.log(self.k)


def derive_params(k: float, eps: float = 0.0, harmonic: int = 2,
                  allow_small: bool = False) -> Params:
    """
    Build ``Params`` for coupling ``k``.

    Parameters
    ----------
    k : float
        Coupling. Must be finite and > 1 unless ``allow_small`` is set, in
        which case any finite k > 0 is accepted (the cone constants are then
        computed but carry no meaning).
    eps : float
        Amplitude of the trigonometric perturbation term.
    harmonic : int
        Frequency m of the perturbation term, m >= 1.
    """
    try:
        k = float(k)
        eps = float(eps)
    except (TypeError, ValueError):
        raise InvalidParameterError(f"coupling must be a real number, got {k!r}")
    if not math.isfinite(k):
        raise InvalidParameterError(f"coupling must be finite, got {k}")
    if k <= 0 or (k <= 1 and not allow_small):
        raise InvalidParameterError(f"coupling must satisfy k > 1, got {k}")
    if not math.isfinite(eps):
        raise InvalidParameterError(f"perturbation amplitude must be finite, got {eps}")
    if int(harmonic) != harmonic or harmonic < 1:
        raise InvalidParameterError(f"perturbation harmonic must be an integer >= 1, got {harmonic}")

    delta = DELTA
    outer = 2.0 * k ** (-3.0 / 10.0)
    return Params(
        k=k,
        delta=delta,
        theta1=k ** (-2.0 / 5.0),
        theta2=k ** (-3.0 / 5.0),
        r0=k ** (-7.0),
        T=int(math.floor((1.0 + 7.0 * delta) / (28.0 * delta))),
        crit_halfwidth_outer=outer,
        crit_halfwidth_inner=outer / 2.0,
        contraction_rate=k ** (-4.0 / 5.0),
        eps=eps,
        harmonic=int(harmonic),
    )


# ---------------------------------------------------
# Torus helpers
# ---------------------------------------------------
def wrap(v: ArrayLike) -> ArrayLike:
    """Reduce mod 1 into [0, 1) with a floor-based remainder."""
    r = v - np.floor(v)
    # tiny negatives round up to exactly 1.0
    return np.where(r >= 1.0, 0.0, r) if isinstance(r, np.ndarray) else (0.0 if r >= 1.0 else float(r))


def nearest_lift(d: ArrayLike) -> ArrayLike:
    """Representative of a displacement in [-1/2, 1/2]."""
    return d - np.round(d)


def torus_dist(p: TorusPoint, q: TorusPoint) -> ArrayLike:
    return np.hypot(nearest_lift(np.subtract(p.x, q.x)), nearest_lift(np.subtract(p.y, q.y)))


def involution(p: TorusPoint) -> TorusPoint:
    return TorusPoint(p.y, p.x)


# ---------------------------------------------------
# The map
# ---------------------------------------------------
def _kick(params: Params, x: ArrayLike) -> ArrayLike:
    out = params.k * np.sin(TWOPI * x)
    if params.eps:
        out = out + params.eps * np.sin(TWOPI * params.harmonic * x)
    return out


def _kick_slope(params: Params, x: ArrayLike) -> ArrayLike:
    out = TWOPI * params.k * np.cos(TWOPI * x)
    if params.eps:
        out = out + TWOPI * params.harmonic * params.eps * np.cos(TWOPI * params.harmonic * x)
    return out


def apply_lift(params: Params, x: ArrayLike, y: ArrayLike):
    """The map on R^2 (no reduction); a lift of f_k since the kick is 1-periodic."""
    return 2.0 * x - y + _kick(params, x), x


def apply_inverse_lift(params: Params, x: ArrayLike, y: ArrayLike):
    return y, 2.0 * y - x + _kick(params, y)


def apply(params: Params, p: TorusPoint) -> TorusPoint:
    x, y = apply_lift(params, p.x, p.y)
    return TorusPoint(wrap(x), wrap(y))


def apply_inverse(params: Params, p: TorusPoint) -> TorusPoint:
    x, y = apply_inverse_lift(params, p.x, p.y)
    return TorusPoint(wrap(x), wrap(y))


def _ones_like(a: ArrayLike, c: float) -> ArrayLike:
    return np.full(np.shape(a), c) if isinstance(a, np.ndarray) else c


def jacobian_at(params: Params, x: ArrayLike) -> Jacobian2:
    """Df at any point with first coordinate ``x`` (Df does not depend on y)."""
    a = 2.0 + _kick_slope(params, x)
    return Jacobian2(a, _ones_like(a, -1.0), _ones_like(a, 1.0), _ones_like(a, 0.0))


def jacobian(params: Params, p: TorusPoint) -> Jacobian2:
    return jacobian_at(params, p.x)


def inverse_jacobian_at(params: Params, y: ArrayLike) -> Jacobian2:
    """D(f^-1) at any point with second coordinate ``y``."""
    a = 2.0 + _kick_slope(params, y)
    return Jacobian2(_ones_like(a, 0.0), _ones_like(a, 1.0), _ones_like(a, -1.0), a)


def inverse_jacobian(params: Params, p: TorusPoint) -> Jacobian2:
    return inverse_jacobian_at(params, p.y)


# ---------------------------------------------------
# Norms
# ---------------------------------------------------
def singular_values(J: Jacobian2):
    """Closed-form (largest, smallest) singular values of a 2x2 matrix."""
    s = np.hypot(J.a11 + J.a22, J.a12 - J.a21)
    d = np.hypot(J.a11 - J.a22, J.a12 + J.a21)
    return (s + d) / 2.0, np.abs(s - d) / 2.0


def operator_norm(J: Jacobian2) -> ArrayLike:
    return singular_values(J)[0]


def norm_bounds(params: Params, p: TorusPoint) -> dict:
    """||Df(p)||, ||Df^-1(p)|| and ||Df^2(p)|| at ``p``."""
    J = jacobian(params, p)
    J2 = jacobian(params, apply(params, p)).compose(J)
    return {
        "norm": operator_norm(J),
        "inverse_norm": operator_norm(inverse_jacobian(params, p)),
        "norm2": operator_norm(J2),
    }
