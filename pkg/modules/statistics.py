# modules/statistics.py
"""
Statistics over periodic-point censuses: entropy growth fits, empirical
measures and their Fourier distances, the involution defect, covering radius,
Young's dimension formula and a coarse box-counting dimension.
"""

import logging
import math
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from modules.errors import (
    FrequencyMismatchError,
    InconsistentInputsError,
    InsufficientDataError,
    InvalidInputError,
)
from modules.map_core import Params, wrap

logger = logging.getLogger(__name__)

MAX_FREQ = 3
HIST_GRID = 256
PROBE_GRID = 512


# ---------------------------------------------------
# Types
# ---------------------------------------------------
@dataclass
class EntropyFit:
    ns: List[int]
    counts: List[int]
    slope: float
    intercept: float
    residual: float
    crude_rate: float


@dataclass
class EmpiricalMeasure:
    grid: np.ndarray        # (G, G) masses, grid[ix, iy]
    fourier: np.ndarray     # (2A+1, 2A+1), fourier[a + A, b + A] = m^(a, b)
    max_freq: int
    atom_count: int

    def coefficient(self, a: int, b: int) -> complex:
        return complex(self.fourier[a + self.max_freq, b + self.max_freq])


@dataclass
class DimensionEstimate:
    h: float
    lambda_plus: float
    lambda_minus: float
    dim: float


def _as_array(points) -> np.ndarray:
    """Accept an (N, 2) array or a sequence of points with x / y."""
    if isinstance(points, np.ndarray):
        arr = points.astype(float).reshape(-1, 2)
    else:
        arr = np.array([[float(p[0]), float(p[1])] for p in points], dtype=float).reshape(-1, 2)
    return np.column_stack([wrap(arr[:, 0]), wrap(arr[:, 1])]) if len(arr) else arr


# ---------------------------------------------------
# Entropy
# ---------------------------------------------------
def entropy_fit(counts: Iterable[Tuple[int, int]]) -> EntropyFit:
    """
    Least-squares slope of log count against n.

    Entries with count < 1 are ignored; at least two distinct n must remain.
    """
    pairs = sorted((int(n), int(c)) for n, c in counts if c >= 1)
    ns = np.array([n for n, _ in pairs], dtype=float)
    cs = np.array([c for _, c in pairs], dtype=float)
    if len(np.unique(ns)) < 2:
        raise InsufficientDataError("entropy fit needs counts for at least two distinct n")
    logs = np.log(cs)
    slope, intercept = np.polyfit(ns, logs, 1)
    residual = float(np.sqrt(np.mean((logs - (slope * ns + intercept)) ** 2)))
    top = int(np.argmax(ns))
    return EntropyFit(
        ns=[int(n) for n in ns],
        counts=[int(c) for c in cs],
        slope=float(slope),
        intercept=float(intercept),
        residual=residual,
        crude_rate=float(logs[top] / ns[top]),
    )


def entropy_references(params: Params) -> dict:
    """Reference rates: the (1 - delta) log k lower bound and the log 4k heuristic."""
    return {
        "lower_bound": (1.0 - params.delta) * math.log(params.k),
        "log_4k": math.log(4.0 * params.k),
    }


# ---------------------------------------------------
# Empirical measures
# ---------------------------------------------------
def empirical_measure(points, grid: int = HIST_GRID, max_freq: int = MAX_FREQ) -> EmpiricalMeasure:
    """
    Equal-weight atoms on the given points.

    Fourier coefficients m^(a, b) = mean exp(-2 pi i (a x + b y)) are computed
    from the atoms, not from the histogram.
    """
    pts = _as_array(points)
    if len(pts) == 0:
        raise InsufficientDataError("empirical measure needs at least one point")
    if grid < 1 or max_freq < 0:
        raise InvalidInputError("grid must be >= 1 and max_freq >= 0")

    freqs = np.arange(-max_freq, max_freq + 1)
    ex = np.exp(-2j * np.pi * np.outer(pts[:, 0], freqs))
    ey = np.exp(-2j * np.pi * np.outer(pts[:, 1], freqs))
    coef = ex.T @ ey / len(pts)
    # m^(-a, -b) = conj m^(a, b) exactly
    coef = (coef + np.conj(coef[::-1, ::-1])) / 2.0

    hist, _, _ = np.histogram2d(pts[:, 0], pts[:, 1], bins=grid, range=[[0.0, 1.0], [0.0, 1.0]])
    return EmpiricalMeasure(grid=hist / len(pts), fourier=coef, max_freq=max_freq, atom_count=len(pts))


def measure_distance(m1: EmpiricalMeasure, m2: EmpiricalMeasure) -> float:
    """max |m1^(a, b) - m2^(a, b)| over the shared frequency box."""
    if m1.max_freq != m2.max_freq:
        raise FrequencyMismatchError(f"frequency boxes differ: {m1.max_freq} vs {m2.max_freq}")
    return float(np.max(np.abs(m1.fourier - m2.fourier)))


def involution_defect(m: EmpiricalMeasure) -> float:
    # the push-forward under (x, y) -> (y, x) swaps the frequency indices
    return float(np.max(np.abs(m.fourier - m.fourier.T)))


def fourier_frame(m: EmpiricalMeasure) -> pd.DataFrame:
    freqs = np.arange(-m.max_freq, m.max_freq + 1)
    a, b = np.meshgrid(freqs, freqs, indexing="ij")
    return pd.DataFrame({
        "a": a.ravel(),
        "b": b.ravel(),
        "re": m.fourier.real.ravel(),
        "im": m.fourier.imag.ravel(),
    })


def grid_frame(m: EmpiricalMeasure) -> pd.DataFrame:
    ix, iy = np.nonzero(m.grid)
    return pd.DataFrame({"ix": ix, "iy": iy, "mass": m.grid[ix, iy]})


# ---------------------------------------------------
# Support density and dimensions
# ---------------------------------------------------
def covering_radius(points, probe: int = PROBE_GRID) -> float:
    pts = _as_array(points)
    if len(pts) == 0:
        raise InsufficientDataError("covering radius needs at least one point")
    axis = np.arange(probe) / probe
    gx, gy = np.meshgrid(axis, axis, indexing="ij")
    dist, _ = cKDTree(pts, boxsize=1.0).query(np.column_stack([gx.ravel(), gy.ravel()]))
    return float(dist.max())


def density_check(points, epsilon: float, probe: int = PROBE_GRID) -> Tuple[bool, float]:
    """Covering radius over a probe x probe grid and whether it is <= epsilon."""
    if not epsilon > 0:
        raise InvalidInputError(f"epsilon must be positive, got {epsilon}")
    radius = covering_radius(points, probe)
    return radius <= epsilon, radius


def density_radii(k: float) -> dict:
    return {
        "perturbation_radius": 8.0 * k ** (-1.0 / 3.0),
        "basic_set_radius": 4.0 * k ** (-1.0 / 3.0),
    }


def young_dimension(h: float, lambda_plus: float, lambda_minus: float) -> DimensionEstimate:
    """
    dim = h (1 / lambda_plus - 1 / lambda_minus).

    Raises InconsistentInputsError when h exceeds min(lambda_plus, -lambda_minus),
    which no invariant measure can do.
    """
    if not (lambda_plus > 0 > lambda_minus):
        raise InvalidInputError(f"need lambda_plus > 0 > lambda_minus, got {lambda_plus}, {lambda_minus}")
    if not h > 0:
        raise InvalidInputError(f"entropy must be positive, got {h}")
    cap = min(lambda_plus, -lambda_minus)
    if h > cap * (1.0 + 1e-12):
        raise InconsistentInputsError(f"entropy {h:.6g} exceeds min exponent {cap:.6g}")
    dim = h * (1.0 / lambda_plus - 1.0 / lambda_minus)
    return DimensionEstimate(h=float(h), lambda_plus=float(lambda_plus), lambda_minus=float(lambda_minus),
                             dim=float(dim))


def box_counting(points, scales: Sequence[float]) -> float:
    """Slope of log N(eps) against log(1 / eps), N counting occupied boxes of side eps."""
    scales = [float(s) for s in scales]
    if len(set(scales)) < 2:
        raise InsufficientDataError("box counting needs at least two distinct scales")
    if any(not 0 < s <= 1 for s in scales):
        raise InvalidInputError("scales must lie in (0, 1]")
    pts = _as_array(points)
    if len(pts) == 0:
        raise InsufficientDataError("box counting needs at least one point")

    counts = []
    for s in scales:
        boxes = max(int(round(1.0 / s)), 1)
        idx = np.minimum(np.floor(pts * boxes).astype(np.int64), boxes - 1)
        counts.append(len(np.unique(idx[:, 0] * boxes + idx[:, 1])))
    slope, _ = np.polyfit(np.log(1.0 / np.array(scales)), np.log(counts), 1)
    logger.debug(f"Box counts {dict(zip(scales, counts))}")
    return float(slope)
