"""
Tests for orbit windows, Lyapunov exponents, Oseledets frames, Pliss times
and the Z / X good-set tests.
"""

import math

import numpy as np
import pytest

from modules.cocycle import (
    frame_arrays,
    iterate_orbit,
    lyapunov,
    membership_rates,
    oseledets_frame,
    pliss_times,
    x_membership,
    z_mask,
    z_membership,
)
from modules.errors import InvalidInputError
from modules.map_core import (
    TorusPoint,
    apply,
    apply_inverse,
    derive_params,
    involution,
    jacobian,
    torus_dist,
)


def _leading(t):
    return (t + math.sqrt(t * t - 4)) / 2


def _angle(a, b):
    return math.atan2(abs(a[0] * b[1] - a[1] * b[0]), abs(a[0] * b[0] + a[1] * b[1]))


# Orbit windows
def test_fixed_point_window():
    w = iterate_orbit(derive_params(5), TorusPoint(0.0, 0.0), 3, 4)
    assert len(w.points) == 8
    assert all(p == (0.0, 0.0) for p in w.points)


def test_quarter_window_at_k_one():
    w = iterate_orbit(derive_params(1, allow_small=True), TorusPoint(0.25, 0.25), 0, 1)
    for p in w.points:
        assert torus_dist(p, TorusPoint(0.25, 0.25)) < 1e-12


def test_window_consistency():
    params = derive_params(5)
    w = iterate_orbit(params, TorusPoint(0.123, 0.456), 5, 5)
    for a, b in zip(w.points, w.points[1:]):
        assert torus_dist(apply(params, a), b) < 1e-9
        assert torus_dist(apply_inverse(params, b), a) < 1e-9
    for p, J in zip(w.points, w.jacobians):
        assert J == jacobian(params, p)
    assert w.points[5] == (0.123, 0.456)


def test_negative_window_rejected():
    with pytest.raises(InvalidInputError):
        iterate_orbit(derive_params(5), TorusPoint(0.1, 0.1), -1, 2)


# Lyapunov exponents
def test_lyapunov_fixed_point_closed_form():
    est = lyapunov(derive_params(5), TorusPoint(0.0, 0.0), 2000)
    assert est.lambda_plus == pytest.approx(math.log(_leading(2 * math.pi * 5 + 2)), rel=1e-3)
    assert est.lambda_plus == pytest.approx(3.508, abs=1e-3)
    assert est.lambda_plus + est.lambda_minus == pytest.approx(0.0, abs=1e-6)


def test_lyapunov_short_horizon_rejected():
    with pytest.raises(InvalidInputError):
        lyapunov(derive_params(5), TorusPoint(0.1, 0.2), 99)


def test_lyapunov_matches_log_pi_k():
    rng = np.random.default_rng(7)
    params = derive_params(100)
    est = lyapunov(params, TorusPoint(rng.random(100), rng.random(100)), 10 ** 4)
    assert abs(np.median(est.lambda_plus) - math.log(100 * math.pi)) < 0.1 * math.log(100 * math.pi)


def test_lyapunov_reversibility():
    rng = np.random.default_rng(8)
    params = derive_params(100)
    p = TorusPoint(rng.random(20), rng.random(20))
    fwd = lyapunov(params, p, 10 ** 4)
    bwd = lyapunov(params, involution(p), 10 ** 4, backward=True)
    assert np.median(fwd.lambda_plus) == pytest.approx(np.median(bwd.lambda_plus), rel=0.01)


# Oseledets frames
def test_frame_at_fixed_point_is_eigenbasis():
    lam = _leading(2 * math.pi * 5 + 2)
    frame = oseledets_frame(derive_params(5), TorusPoint(0.0, 0.0))
    assert _angle(frame.e_plus, (lam, 1.0)) < 1e-6
    assert _angle(frame.e_minus, (1.0 / lam, 1.0)) < 1e-6
    assert math.hypot(*frame.e_plus) == pytest.approx(1.0)
    assert frame.e_plus.u >= 0 and frame.e_minus.u >= 0


def test_frame_equivariance():
    rng = np.random.default_rng(9)
    params = derive_params(100)
    x, y = rng.random(200), rng.random(200)
    e_plus, _, resolved = frame_arrays(params, x, y)
    img = apply(params, TorusPoint(x, y))
    e_next, _, resolved_next = frame_arrays(params, img.x, img.y)
    J = jacobian(params, TorusPoint(x, y))
    pushed = J.apply(e_plus)
    ok = resolved & resolved_next
    assert ok.sum() > 150
    ang = np.arctan2(np.abs(pushed.u * e_next.v - pushed.v * e_next.u),
                     np.abs(pushed.u * e_next.u + pushed.v * e_next.v))
    assert np.all(ang[ok] < 1e-3)


def test_frame_short_horizon_rejected():
    with pytest.raises(InvalidInputError):
        oseledets_frame(derive_params(5), TorusPoint(0.0, 0.0), horizon=19)


# Pliss times
def _pliss_oracle(seq, c):
    out = []
    for m in range(len(seq)):
        total = 0.0
        good = True
        for n in range(m + 1, len(seq) + 1):
            total += seq[n - 1]
            if total / (n - m) > c:
                good = False
                break
        if good:
            out.append(m)
    return out


def test_constant_sequence_all_times():
    out = pliss_times([2.0] * 50, alpha1=0.0, alpha2=2.0, eps=0.5)
    assert out.times == list(range(50))
    assert out.density_lower_bound == pytest.approx(0.5 / 2.5)


def test_alternating_sequence_matches_oracle():
    seq = [0.0, 10.0] * 20
    out = pliss_times(seq, alpha1=-1.0, alpha2=5.0, eps=1.0)
    assert out.times == _pliss_oracle(seq, 6.0)
    assert out.times == list(range(0, 40, 2))


def test_pliss_randomized_against_oracle():
    rng = np.random.default_rng(10)
    for _ in range(300):
        length = int(rng.integers(1, 201))
        seq = list(rng.uniform(0.1, 3.0, length))
        out = pliss_times(seq, alpha1=0.0, alpha2=1.2, eps=0.3)
        assert out.times == _pliss_oracle(seq, 1.5)


@pytest.mark.slow
def test_pliss_oracle_large_sample():
    rng = np.random.default_rng(11)
    for _ in range(10 ** 4):
        length = int(rng.integers(1, 201))
        seq = list(rng.uniform(-0.9, 4.0, length))
        assert pliss_times(seq, -1.0, 1.0, 0.25).times == _pliss_oracle(seq, 1.25)


def test_pliss_density_bound():
    rng = np.random.default_rng(12)
    alpha1, alpha2, eps = 0.0, 1.0, 0.2
    for _ in range(200):
        seq = rng.uniform(0.01, 2.0, int(rng.integers(10, 200)))
        if seq.mean() > alpha2:
            continue
        out = pliss_times(seq, alpha1, alpha2, eps)
        assert out.achieved_density >= out.density_lower_bound - 1e-12


@pytest.mark.parametrize("seq,a1,a2,eps", [
    ([1.0, 2.0], 0.0, 1.0, 0.0),
    ([1.0, 2.0], 2.0, 1.0, 0.1),
    ([0.0, 2.0], 0.0, 1.0, 0.1),
    ([], 0.0, 1.0, 0.1),
])
def test_pliss_preconditions(seq, a1, a2, eps):
    with pytest.raises(InvalidInputError):
        pliss_times(seq, a1, a2, eps)


# Z and X
def test_origin_in_z_and_x_at_k_1000():
    params = derive_params(1000)
    assert z_membership(params, TorusPoint(0.0, 0.0), horizon=21)
    assert x_membership(params, TorusPoint(0.0, 0.0))


def test_origin_in_z_over_long_horizon():
    assert z_membership(derive_params(1000), TorusPoint(0.0, 0.0), horizon=80)


def test_z_membership_survives_longer_horizons():
    params = derive_params(1000)
    rng = np.random.default_rng(13)
    x, y = rng.random(400), rng.random(400)
    short, resolved = z_mask(params, x, y, horizon=21)
    long_, _ = z_mask(params, x, y, horizon=60)
    assert resolved.mean() > 0.9
    assert short.mean() > 0.5
    assert long_.mean() > 0.5


def test_z_horizon_below_t_rejected():
    with pytest.raises(InvalidInputError):
        z_membership(derive_params(1000), TorusPoint(0.0, 0.0), horizon=20)


def test_z_fails_deep_in_critical_strip():
    params = derive_params(1000)
    # a point whose preimage sits on x = 1/4 has no stable contraction there
    p = apply(params, TorusPoint(0.25, 0.3))
    assert not z_membership(params, p)


def test_membership_rates_positive():
    rates = membership_rates(derive_params(1000), samples=500, seed=1)
    assert 0 < rates["x_rate"] <= rates["z_rate"] <= 1
    assert rates["reference_z_bound"] == pytest.approx((1 - 7 / 600) / (1 + 7 / 600))
