"""
Tests for the periodic-point census, classification, filtering, audits and cache.
"""

import json
import math

import numpy as np
import pytest

from modules import periodic
from modules.errors import CacheError, InvalidInputError, NotPeriodicError
from modules.map_core import TorusPoint, apply, derive_params, torus_dist
from modules.periodic import (
    PeriodicDatabase,
    StabilityKind,
    audit_database,
    cached_census,
    classify,
    default_grid_res,
    filter_rho_hyperbolic,
    find_periodic,
    load_database,
    save_database,
)


def _fixed_point_traces(k: int):
    """Traces at the fixed points (x, x) with k sin(2 pi x) = j, j = -k..k."""
    traces = []
    for j in range(-k, k + 1):
        c = math.sqrt(max(0.0, 1.0 - (j / k) ** 2))
        if c == 0.0:
            traces.append(2.0)
        else:
            traces.extend([2.0 + 2 * math.pi * k * c, 2.0 - 2 * math.pi * k * c])
    return traces


@pytest.fixture(scope="module")
def census_k5():
    return find_periodic(derive_params(5), 1, grid_res=128)


def _two_cycle_db():
    params = derive_params(5)
    points = [classify(params, TorusPoint(0.0, 0.5), 2), classify(params, TorusPoint(0.5, 0.0), 2)]
    return PeriodicDatabase(k=5.0, n=2, rho=0.0, points=points, seeds_used=0)


# Census
def test_fixed_point_count_k5(census_k5):
    assert len(census_k5.points) == 20 == len(_fixed_point_traces(5))
    for p in census_k5.points:
        assert abs(p.point.x - p.point.y) < 1e-9


@pytest.mark.parametrize("k,grid", [(2, 128), (10, 128), (20, 256)])
def test_fixed_point_count_matches_one_dimensional_roots(k, grid):
    db = find_periodic(derive_params(k), 1, grid_res=grid)
    assert len(db.points) == len(_fixed_point_traces(k)) == 4 * k
    traces = sorted(p.trace for p in db.points)
    np.testing.assert_allclose(traces, sorted(_fixed_point_traces(k)), atol=1e-3)


def test_census_contains_known_points(census_k5):
    pts = [p.point for p in census_k5.points]
    for target in (TorusPoint(0.0, 0.0), TorusPoint(0.5, 0.5)):
        assert min(torus_dist(p, target) for p in pts) < 1e-9


def test_census_points_verify(census_k5):
    params = census_k5.params()
    for p in census_k5.points:
        assert torus_dist(apply(params, p.point), p.point) <= 1e-9
    assert census_k5.seeds_used == 128 ** 2 + periodic.diagonal_seed_count(5, 128)


def test_census_rejects_bad_arguments():
    with pytest.raises(InvalidInputError):
        find_periodic(derive_params(5), 0)
    with pytest.raises(InvalidInputError):
        find_periodic(derive_params(5), 1, grid_res=1)


def test_default_grid_resolution():
    assert default_grid_res(5, 1) == 128
    assert default_grid_res(100, 2) == 1200
    assert default_grid_res(1000, 4) == 4096


@pytest.mark.parametrize("k", [5, 10])
def test_default_grid_finds_every_fixed_point(k):
    db = find_periodic(derive_params(k), 1)
    assert len(db.points) == 4 * k
    pts = [p.point for p in db.points]
    for target in (TorusPoint(0.0, 0.0), TorusPoint(0.5, 0.5)):
        assert min(torus_dist(p, target) for p in pts) < 1e-9


def test_diagonal_seeds_include_symmetric_points():
    count = periodic.diagonal_seed_count(5, 128)
    assert count % 2 == 0
    assert count >= 2 * 128
    assert periodic.diagonal_seed_count(1e6, 4096) == periodic.DIAGONAL_CAP


def test_two_cycle_found_at_period_two():
    db = find_periodic(derive_params(5), 2, grid_res=96)
    pts = [p.point for p in db.points]
    assert min(torus_dist(p, TorusPoint(0.5, 0.0)) for p in pts) < 1e-9
    assert min(torus_dist(p, TorusPoint(0.0, 0.0)) for p in pts) < 1e-9
    audit = audit_database(db)
    assert audit["closure_violations"] == 0
    assert audit["involution_violations"] == 0


def test_least_period_drops_fixed_points():
    params = derive_params(5)
    db = find_periodic(params, 2, grid_res=96, least_period=True)
    assert db.points
    assert len(db.points) % 2 == 0
    for p in db.points:
        assert torus_dist(apply(params, p.point), p.point) > 1e-6


def test_period_four_census_is_closed():
    db = find_periodic(derive_params(2), 4)
    assert db.points
    audit = audit_database(db)
    assert audit["closure_violations"] == 0
    assert audit["involution_violations"] == 0
    params = db.params()
    for p in db.points[::50]:
        q = p.point
        for _ in range(4):
            q = apply(params, q)
        assert torus_dist(q, p.point) <= 1e-9


@pytest.mark.slow
def test_dense_period_four_census_is_closed():
    db = find_periodic(derive_params(5), 4, grid_res=700)
    audit = audit_database(db)
    assert audit["closure_violations"] == 0
    assert audit["involution_violations"] == 0
    assert audit["heuristic_ratio"] > 0.5


# Classification
def test_classify_origin():
    p = classify(derive_params(5), TorusPoint(0.0, 0.0), 1)
    assert p.stability_kind == StabilityKind.HYPERBOLIC
    assert p.trace == pytest.approx(2 + 10 * math.pi)
    assert p.lambda_ == pytest.approx(3.508, abs=1e-3)


def test_classify_elliptic_at_small_coupling():
    p = classify(derive_params(0.1, allow_small=True), TorusPoint(0.5, 0.5), 1)
    assert p.stability_kind == StabilityKind.ELLIPTIC
    assert p.trace == pytest.approx(2 - 0.2 * math.pi, abs=1e-12)
    assert p.trace == pytest.approx(1.3717, abs=1e-4)
    assert p.lambda_ == 0.0


def test_classify_parabolic():
    p = classify(derive_params(1, allow_small=True), TorusPoint(0.25, 0.25), 1)
    assert p.stability_kind == StabilityKind.PARABOLIC


def test_classify_two_cycle():
    p = classify(derive_params(5), TorusPoint(0.5, 0.0), 2)
    assert p.stability_kind == StabilityKind.HYPERBOLIC
    assert p.lambda_ > 0


def test_classify_rejects_non_periodic_point():
    with pytest.raises(NotPeriodicError):
        classify(derive_params(5), TorusPoint(0.1, 0.2), 1)


# Filtering
def test_filter_above_largest_exponent_is_empty(census_k5):
    assert filter_rho_hyperbolic(census_k5, 10.0).points == []


def test_filter_tiny_rho_keeps_hyperbolic_points(census_k5):
    kept = filter_rho_hyperbolic(census_k5, 1e-6)
    hyperbolic = [p for p in census_k5.points if p.stability_kind == StabilityKind.HYPERBOLIC]
    assert len(kept.points) == len(hyperbolic) == 18
    assert kept.rho == 1e-6


def test_filter_rho_one_matches_trace_count(census_k5):
    expected = sum(1 for t in _fixed_point_traces(5) if abs(t) >= 2 * math.cosh(1.0))
    assert len(filter_rho_hyperbolic(census_k5, 1.0).points) == expected


def test_filter_is_monotone(census_k5):
    counts = [len(filter_rho_hyperbolic(census_k5, r).points) for r in (0.1, 0.5, 1.0, 2.0, 3.0, 3.6)]
    assert counts == sorted(counts, reverse=True)
    assert counts[-1] == 0


@pytest.mark.parametrize("rho", [0.0, -1.0])
def test_filter_rejects_non_positive_rho(census_k5, rho):
    with pytest.raises(InvalidInputError):
        filter_rho_hyperbolic(census_k5, rho)


# Audits
def test_audit_clean_census(census_k5):
    audit = audit_database(census_k5)
    assert audit["closure_violations"] == 0
    assert audit["involution_violations"] == 0
    assert audit["heuristic_ratio"] == pytest.approx(1.0)
    assert audit["kinds"] == {"hyperbolic": 18, "elliptic": 0, "parabolic": 2}


def test_audit_detects_missing_orbit_point():
    db = _two_cycle_db()
    assert audit_database(db)["closure_violations"] == 0
    db.points = db.points[:1]
    audit = audit_database(db)
    assert audit["closure_violations"] == 1
    assert audit["involution_violations"] == 1


# Persistence
def test_save_and_load(tmp_path, census_k5):
    path = save_database(census_k5, tmp_path / "db.json")
    raw = json.loads(path.read_text())
    assert {"x", "y", "n", "trace", "lambda", "kind"} <= set(raw["points"][0])
    back = load_database(path)
    assert back.to_frame().equals(census_k5.to_frame())
    assert back.grid_res == 128


def test_corrupt_cache_raises(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(CacheError):
        load_database(bad)
    with pytest.raises(CacheError):
        load_database(tmp_path / "missing.json")


def test_cached_census_reuses_file(tmp_path, monkeypatch):
    params = derive_params(5)
    first = cached_census(params, 1, tmp_path, grid_res=32)
    assert periodic.cache_path(tmp_path, params, 1).exists()

    calls = []

    def fake_find(*args, **kwargs):
        calls.append(kwargs)
        return first

    monkeypatch.setattr(periodic, "find_periodic", fake_find)
    again = cached_census(params, 1, tmp_path, grid_res=32)
    assert calls == []
    assert again.to_frame().equals(first.to_frame())

    cached_census(params, 1, tmp_path, grid_res=48)
    assert len(calls) == 1
    assert calls[0]["grid_res"] == 48


def test_cache_path_names():
    assert periodic.cache_path("c", derive_params(5), 2).name == "periodic_k5_n2.json"
    named = periodic.cache_path("c", derive_params(5, eps=0.01, harmonic=3), 1, least_period=True)
    assert named.name == "periodic_k5_n1_eps0.01_m3_least.json"
