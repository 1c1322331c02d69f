"""
Tests for cones, critical strips, good regions and the cone-lemma audit.
"""

import math

import numpy as np
import pytest

from modules.errors import InvalidInputError
from modules.map_core import TangentVec, TorusPoint, derive_params, jacobian, singular_values
from modules.regions import (
    Cone,
    audit_cone_lemmas,
    classify_region,
    cone_contains,
    cone_image,
    cone_subset,
    horizontal_cone,
    min_expansion_in_cone,
    region_masks,
    sample_g2,
    smallest_passing_k,
    vertical_cone,
)


def _rays(c: Cone, count: int):
    """Unit vectors spread over the cone, boundary included."""
    phis = np.linspace(-c.half_angle, c.half_angle, count)
    pu, pv = -c.axis.v, c.axis.u
    return [TangentVec(math.cos(f) * c.axis.u + math.sin(f) * pu, math.cos(f) * c.axis.v + math.sin(f) * pv)
            for f in phis]


# Cone membership
def test_cone_contains_examples():
    assert cone_contains(horizontal_cone(0.01), TangentVec(1.0, 0.0))
    assert cone_contains(horizontal_cone(1.0), TangentVec(1.0, 1.0))
    assert not cone_contains(horizontal_cone(0.5), TangentVec(1.0, 1.0))
    assert cone_contains(vertical_cone(0.5), TangentVec(0.2, -1.0))


def test_zero_vector_rejected():
    with pytest.raises(InvalidInputError):
        cone_contains(horizontal_cone(1.0), TangentVec(0.0, 0.0))


def test_cone_nesting():
    for small, large in [(0.1, 0.2), (0.5, 0.5), (1.0, 40.0)]:
        assert cone_subset(horizontal_cone(small), horizontal_cone(large))
        for r in _rays(horizontal_cone(small), 101):
            assert cone_contains(horizontal_cone(large), r)
    assert not cone_subset(horizontal_cone(0.3), horizontal_cone(0.2))
    assert not cone_subset(horizontal_cone(0.1), vertical_cone(0.1))


# Regions
def test_strip_centre_is_critical():
    params = derive_params(1000)
    for y in (0.0, 0.3, 0.9):
        label = classify_region(params, TorusPoint(0.25, y))
        assert label.in_crit1 and label.in_crit2
        assert label.g1_component is None and label.g2_component is None


def test_origin_outside_crit1_at_k_1024():
    label = classify_region(derive_params(1024), TorusPoint(0.0, 0.0))
    assert not label.in_crit1
    assert label.g1_component == label.g2_component == 1


def test_region_invariants_on_random_points():
    rng = np.random.default_rng(1)
    x, y = rng.random(10 ** 5), rng.random(10 ** 5)
    for k in (1000, 5000, 10 ** 5):
        crit1, crit2, comp = region_masks(derive_params(k), x, y)
        assert np.all(~crit2 | crit1)
        assert set(np.unique(comp)) <= {1, 2, 3, 4}


def test_components_nest():
    params = derive_params(10 ** 5)
    rng = np.random.default_rng(2)
    for x, y in rng.random((2000, 2)):
        label = classify_region(params, TorusPoint(x, y))
        if label.g1_component is not None:
            assert label.g2_component == label.g1_component


def test_g1_empty_at_k_1000():
    crit1, _, _ = region_masks(derive_params(1000), *np.random.default_rng(3).random((2, 10 ** 4)))
    assert crit1.all()


def test_sample_g2_stays_outside_crit2():
    params = derive_params(1000)
    x, y = sample_g2(params, 10 ** 4, np.random.default_rng(4))
    _, crit2, _ = region_masks(params, x, y)
    assert not crit2.any()
    with pytest.raises(InvalidInputError):
        sample_g2(derive_params(50), 10, np.random.default_rng(0))


# Cone images
def test_cone_image_contains_sampled_rays():
    params = derive_params(7)
    p = TorusPoint(0.25, 0.6)
    c = horizontal_cone(0.1)
    img = cone_image(params, p, c)
    J = jacobian(params, p)
    for r in _rays(c, 100):
        w = J.apply(r)
        assert cone_contains(Cone(img.axis, img.aperture * (1 + 1e-9)), w)


def test_eigen_axis_maps_to_itself():
    params = derive_params(5)
    t = 2 * math.pi * 5 + 2
    lam = (t + math.sqrt(t * t - 4)) / 2
    n = math.hypot(lam, 1.0)
    c = Cone(TangentVec(lam / n, 1.0 / n), 1e-9)
    img = cone_image(params, TorusPoint(0.0, 0.0), c)
    cross = img.axis.u * c.axis.v - img.axis.v * c.axis.u
    assert abs(cross) < 1e-9


def test_horizontal_cone_lemma_at_k_1000():
    params = derive_params(1000)
    x, y = sample_g2(params, 2000, np.random.default_rng(5))
    for px, py in zip(x, y):
        img = cone_image(params, TorusPoint(px, py), horizontal_cone(4 / params.theta1))
        assert cone_subset(img, horizontal_cone(params.theta2))


def test_vertical_cone_lemma_at_k_1000():
    params = derive_params(1000)
    x, y = sample_g2(params, 2000, np.random.default_rng(6))
    for px, py in zip(x, y):
        img = cone_image(params, TorusPoint(px, py), vertical_cone(4 / params.theta1), inverse=True)
        assert cone_subset(img, vertical_cone(params.theta2))


# Expansion
def test_min_expansion_vertical_axis_at_quarter():
    value = min_expansion_in_cone(derive_params(9), TorusPoint(0.25, 0.0), vertical_cone(1e-12))
    assert value == pytest.approx(1.0, abs=1e-9)


def test_min_expansion_against_ray_sampling():
    params = derive_params(20)
    rng = np.random.default_rng(7)
    for _ in range(50):
        p = TorusPoint(*rng.random(2))
        c = Cone(TangentVec(*(lambda a: (math.cos(a), math.sin(a)))(rng.uniform(0, math.pi))),
                 float(rng.uniform(0.05, 5.0)))
        exact = min_expansion_in_cone(params, p, c)
        J = jacobian(params, p)
        sampled = min(J.apply(r).norm() for r in _rays(c, 4001))
        smallest = singular_values(J)[1]
        assert exact >= smallest - 1e-9
        assert exact <= sampled + 1e-9


def test_min_expansion_wide_cone_reaches_smallest_singular_value():
    params = derive_params(20)
    rng = np.random.default_rng(8)
    for _ in range(50):
        p = TorusPoint(*rng.random(2))
        exact = min_expansion_in_cone(params, p, horizontal_cone(1e6))
        assert exact == pytest.approx(singular_values(jacobian(params, p))[1], rel=1e-6)


# Audits
def test_audit_at_k_1000():
    records = audit_cone_lemmas(derive_params(1000), samples=20000, seed=3, z_samples=200)
    by_name = {r["lemma"]: r for r in records}
    for lemma in ("cone-image-horizontal", "cone-image-vertical", "expansion", "norm-bound", "boundary-gap"):
        assert by_name[lemma]["pass_rate"] == 1.0
        assert by_name[lemma]["worst_margin"] > 0 or lemma == "boundary-gap"
        assert by_name[lemma]["k"] == 1000
    assert by_name["z-in-g1"]["note"] == "G1 is empty at this k"


def test_audit_reports_empty_g2():
    records = audit_cone_lemmas(derive_params(50), samples=1000, lemmas=["expansion", "norm-bound"])
    assert records[0]["pass_rate"] is None
    assert records[1]["pass_rate"] == 1.0


def test_audit_is_seed_deterministic():
    params = derive_params(2000)
    a = audit_cone_lemmas(params, samples=5000, seed=11, lemmas=["expansion"])
    b = audit_cone_lemmas(params, samples=5000, seed=11, lemmas=["expansion"])
    assert a == b


def test_unknown_lemma_rejected():
    with pytest.raises(InvalidInputError):
        audit_cone_lemmas(derive_params(1000), samples=10, lemmas=["no-such-lemma"])


def test_smallest_passing_k_scan():
    result = smallest_passing_k([50, 1000], samples=2000, seed=1)
    assert result["smallest_k"] == 1000


@pytest.mark.slow
def test_full_audit_threads_do_not_change_results():
    params = derive_params(1000)
    serial = audit_cone_lemmas(params, samples=10 ** 6, seed=0, threads=1, z_samples=500)
    parallel = audit_cone_lemmas(params, samples=10 ** 6, seed=0, threads=2, z_samples=500)
    assert serial == parallel
    for rec in serial[:4]:
        assert rec["pass_rate"] == 1.0
