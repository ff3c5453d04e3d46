"""Core data model: probability algebra, class keys, parametrizations, file IO."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from demcal import (
    ClassKey,
    DEM,
    DataError,
    Detector,
    Hyperedge,
    MeasCoord,
    build_parametrization,
    canonical_key,
    class_kind,
    cosine_similarity,
    instantiate,
    merge_prob,
    read_dem,
    repetition_dem,
    RepCodeSpec,
    write_dem,
)
from demcal.model import dem_from_text, dem_to_text

probs = st.floats(min_value=0.0, max_value=0.5, allow_nan=False)


def test_merge_prob_is_xor_convolution():
    # Probability that exactly one of two independent events occurs.
    for p1, p2 in [(0.1, 0.2), (0.0, 0.3), (0.5, 0.12), (1e-4, 1e-4)]:
        assert_allclose(merge_prob(p1, p2), p1 * (1 - p2) + p2 * (1 - p1), rtol=1e-12)


@given(probs, probs, probs)
def test_merge_prob_algebra(p1, p2, p3):
    assert merge_prob(p1, p2) == pytest.approx(merge_prob(p2, p1))
    assert merge_prob(p1, 0.0) == pytest.approx(p1)
    assert merge_prob(p1, 0.5) == pytest.approx(0.5)
    lhs = merge_prob(merge_prob(p1, p2), p3)
    rhs = merge_prob(p1, merge_prob(p2, p3))
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_detector_validation():
    Detector(0, frozenset({MeasCoord(1, 0, 0)}))
    with pytest.raises(ValueError):
        Detector(-1, frozenset({MeasCoord(1, 0, 0)}))
    with pytest.raises(ValueError):
        Detector(0, frozenset())


def test_hyperedge_validation():
    e = Hyperedge((0, 1, 2), observables=1, probability=0.1)
    assert e.degree == 3
    with pytest.raises(ValueError):
        Hyperedge((2, 0, 1))  # must arrive sorted
    Hyperedge((0,), probability=0.0)  # an edge that never fires is allowed
    with pytest.raises(ValueError):
        Hyperedge((0,), probability=-0.1)
    with pytest.raises(ValueError):
        Hyperedge((0,), probability=0.6)
    with pytest.raises(ValueError):
        Hyperedge((0, 0), probability=0.1)


def _two_det_dem(edges):
    dets = (
        Detector(0, frozenset({MeasCoord(1, 0, 0)})),
        Detector(1, frozenset({MeasCoord(3, 0, 0)})),
    )
    return DEM(detectors=dets, hyperedges=tuple(edges), num_observables=1)


def test_duplicate_edges_merge():
    dem = _two_det_dem(
        [
            Hyperedge((0, 1), 0, 0.1),
            Hyperedge((0,), 1, 0.01),
            Hyperedge((0, 1), 0, 0.2),
        ]
    )
    assert len(dem.hyperedges) == 2
    assert dem.hyperedges[0].detectors == (0, 1)
    assert_allclose(dem.hyperedges[0].probability, merge_prob(0.1, 0.2))
    # Same detectors but a different observable mask stays separate.
    dem2 = _two_det_dem([Hyperedge((0,), 0, 0.1), Hyperedge((0,), 1, 0.1)])
    assert len(dem2.hyperedges) == 2


def test_dense_id_check():
    dets = (Detector(0, frozenset({MeasCoord(1, 0, 0)})), Detector(2, frozenset({MeasCoord(3, 0, 0)})))
    with pytest.raises(ValueError):
        DEM(detectors=dets, hyperedges=(), num_observables=0)


def test_class_key_roundtrip():
    key = ClassKey((((1, 0, 0),), ((3, 0, 1), (5, 0, 1))), "bulk")
    assert ClassKey.deserialize(key.serialize()) == key
    with pytest.raises(DataError):
        ClassKey.deserialize("bulk|not-a-coord")


def test_canonical_key_time_shift():
    """Bulk classes are invariant under time translation; boundary rows tagged."""
    spec = RepCodeSpec(5, 6)
    dem = repetition_dem(spec)
    keys_by_edge = [canonical_key(e, dem.detectors, dem.max_t) for e in dem.hyperedges]
    # Time edges of one column: rows (1,2) and (3,4) give the same bulk key.
    time_keys = [
        k
        for e, k in zip(dem.hyperedges, keys_by_edge)
        if e.degree == 2 and k.tag == "bulk"
    ]
    assert len(set(time_keys)) < len(time_keys)
    tags = {k.tag for k in keys_by_edge}
    assert tags == {"bulk", "time-start", "time-end"}


def test_class_kind_partitions_repetition_classes():
    spec = RepCodeSpec(11, 11)
    dem = repetition_dem(spec)
    par = build_parametrization([dem])
    kinds = [class_kind(k) for k in par.classes]
    # 9(d-1) classes split into vertical measurement pairs, everything with a
    # space component, and the single-detector chain ends.
    assert len(kinds) == 9 * 10
    assert kinds.count("time") == 30
    assert kinds.count("space") == 54
    assert kinds.count("boundary") == 6
    one_det = ClassKey((((0, 0, 0),),), "bulk")
    assert class_kind(one_det) == "boundary"
    vertical = ClassKey((((2, 0, 0),), ((2, 0, 1),)), "bulk")
    assert class_kind(vertical) == "time"
    slanted = ClassKey((((2, 0, 0),), ((3, 0, 1),)), "bulk")
    assert class_kind(slanted) == "space"


def test_parametrization_binding_and_instantiate():
    spec = RepCodeSpec(5, 4)
    dem = repetition_dem(spec)
    par = build_parametrization([dem])
    binding = par.binding_for(dem)
    assert binding.shape == (len(dem.hyperedges),)
    theta = np.linspace(-3.0, -2.0, par.num_params)
    concrete = instantiate(dem, par, theta)
    assert_allclose(concrete.probabilities(), 10.0 ** theta[binding])
    with pytest.raises(DataError):
        instantiate(dem, par, theta[:-1])


def test_binding_reports_missing_classes():
    small = repetition_dem(RepCodeSpec(5, 4))
    big = repetition_dem(RepCodeSpec(9, 4))
    par = build_parametrization([small])
    with pytest.raises(DataError, match="not covered"):
        par.binding_for(big)


def test_cosine_similarity():
    a = np.array([1.0, 0.0, 1.0])
    assert_allclose(cosine_similarity(a, a), 1.0)
    assert_allclose(cosine_similarity(a, -a), -1.0)
    assert_allclose(cosine_similarity(np.array([1.0, 0.0]), np.array([0.0, 2.0])), 0.0)
    with pytest.raises(ValueError):
        cosine_similarity(a, np.zeros(3))


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_dem_text_roundtrip(seed):
    rng = np.random.Generator(np.random.Philox(key=seed))
    spec = RepCodeSpec(5, 3)
    template = repetition_dem(spec)
    par = build_parametrization([template])
    theta = rng.uniform(-4.0, -1.0, par.num_params)
    dem = instantiate(template, par, theta)
    text = dem_to_text(dem)
    back = dem_from_text(text)
    assert back.num_observables == dem.num_observables
    assert back.num_detectors == dem.num_detectors
    assert [d.coords for d in back.detectors] == [d.coords for d in dem.detectors]
    for e1, e2 in zip(dem.hyperedges, back.hyperedges):
        assert e1.detectors == e2.detectors
        assert e1.observables == e2.observables
        assert e1.probability == e2.probability  # bit-exact through '.17g'
    # Idempotent: a second pass produces identical text.
    assert dem_to_text(back) == text


def test_dem_file_roundtrip(tmp_path):
    dem = repetition_dem(RepCodeSpec(5, 3))
    par = build_parametrization([dem])
    concrete = instantiate(dem, par, np.full(par.num_params, -2.5))
    path = tmp_path / "model.dem"
    write_dem(path, concrete)
    back = read_dem(path)
    assert dem_to_text(back) == dem_to_text(concrete)


def test_dem_from_text_rejects_garbage():
    with pytest.raises(DataError):
        dem_from_text("num_observables 1\nerror 0.1 D0 L0\n")  # undeclared detector
    with pytest.raises(DataError):  # probability out of range
        dem_from_text("num_observables 1\ndetector D0 1 0 0\nerror 1.5 D0\n")
    with pytest.raises(DataError):  # unknown line kind
        dem_from_text("frobnicate 3\n")
    with pytest.raises(DataError):  # sparse detector ids
        dem_from_text("num_observables 0\ndetector D1 1 0 0\n")
