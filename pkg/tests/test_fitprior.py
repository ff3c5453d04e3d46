"""Correlation fitting against analytic forward statistics and planted truth."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from demcal import (
    DEM,
    DataError,
    Detector,
    DetectorStats,
    Hyperedge,
    MeasCoord,
    RepCodeSpec,
    ShotSet,
    build_parametrization,
    build_sensors,
    detector_stats,
    fit_edge_probs,
    fit_pairwise,
    fit_suite,
    instantiate,
    planted_model,
    repetition_dem,
    sample_shots,
    subsample_sensor_shots,
    uninformative_prior,
)
from demcal.fitprior import FLOOR_DEGREE1, FLOOR_DEGREE2


def analytic_stats(dem: DEM) -> DetectorStats:
    """Exact infinite-sample statistics of a graph-like DEM.

    Independent forward model used as an oracle: XOR-group probabilities via
    the product identity, and pair means by conditioning on the shared edge.
    """
    n_det = dem.num_detectors
    probs = dem.probabilities()
    incidence = [set(e.detectors) for e in dem.hyperedges]

    def xor_prob(idxs):
        prod = 1.0
        for i in idxs:
            prod *= 1.0 - 2.0 * probs[i]
        return 0.5 * (1.0 - prod)

    mean = np.array(
        [xor_prob([k for k, s in enumerate(incidence) if i in s]) for i in range(n_det)]
    )
    pair_mean = {}
    for e in dem.hyperedges:
        if e.degree != 2:
            continue
        i, j = e.detectors
        shared = [k for k, s in enumerate(incidence) if i in s and j in s]
        only_i = [k for k, s in enumerate(incidence) if i in s and j not in s]
        only_j = [k for k, s in enumerate(incidence) if j in s and i not in s]
        ps, pa, pb = xor_prob(shared), xor_prob(only_i), xor_prob(only_j)
        pair_mean[(i, j)] = (1 - ps) * pa * pb + ps * (1 - pa) * (1 - pb)
    return DetectorStats(10**12, mean, pair_mean)


def _line_dem(edge_specs, n_det):
    dets = tuple(Detector(i, frozenset({MeasCoord(2 * i + 1, 0, 0)})) for i in range(n_det))
    return DEM(dets, tuple(Hyperedge(d, 0, p) for d, p in edge_specs), 0)


def _above_floor_rep(spec, seed):
    """A concrete repetition DEM whose truths all clear the fit floors."""
    template = repetition_dem(spec)
    par = build_parametrization([template])
    rng = np.random.default_rng(seed)
    binding = par.binding_for(template)
    probs = 10.0 ** rng.uniform(np.log10(2e-3), np.log10(2e-2), par.num_params)[binding]
    deg1 = np.array([e.degree == 1 for e in template.hyperedges])
    probs[deg1] = np.maximum(probs[deg1], 1.5e-2)
    edges = tuple(
        Hyperedge(e.detectors, e.observables, float(p))
        for e, p in zip(template.hyperedges, probs)
    )
    return DEM(
        template.detectors,
        edges,
        1,
        data_flips=template.data_flips,
        num_data=template.num_data,
    )


def test_stats_trivial_cases():
    spec = RepCodeSpec(5, 2)
    template = repetition_dem(spec)
    n_det = template.num_detectors
    zeros = ShotSet(
        np.zeros((50, n_det), dtype=np.uint8), np.zeros((50, 1), dtype=np.uint8)
    )
    stats = detector_stats(zeros, template)
    assert stats.mean.max() == 0.0
    assert all(v == 0.0 for v in stats.pair_mean.values())
    ones = ShotSet(
        np.ones((50, n_det), dtype=np.uint8), np.zeros((50, 1), dtype=np.uint8)
    )
    assert detector_stats(ones, template).mean.min() == 1.0


def test_stats_single_edge_sampled():
    dem = _line_dem([((0, 1), 0.2)], n_det=2)
    n = 100_000
    shots = sample_shots(dem, n, seed=40)
    stats = detector_stats(shots, dem)
    sigma = np.sqrt(0.2 * 0.8 / n)
    assert abs(stats.pair_mean[(0, 1)] - 0.2) < 3 * sigma
    assert stats.n_shots == n


def test_stats_shot_order_invariance():
    spec = RepCodeSpec(5, 3)
    template = repetition_dem(spec)
    dem = _above_floor_rep(spec, seed=1)
    shots = sample_shots(dem, 5000, seed=8)
    perm = np.random.default_rng(0).permutation(5000)
    shuffled = ShotSet(
        shots.detector_bits[perm].copy(), shots.observable_bits[perm].copy()
    )
    a = detector_stats(shots, template)
    b = detector_stats(shuffled, template)
    assert_allclose(a.mean, b.mean, rtol=0, atol=0)
    assert a.pair_mean == b.pair_mean


def test_stats_pair_mean_bounded_by_marginals():
    dem = _above_floor_rep(RepCodeSpec(5, 4), seed=2)
    shots = sample_shots(dem, 20_000, seed=3)
    stats = detector_stats(shots, repetition_dem(RepCodeSpec(5, 4)))
    for (i, j), v in stats.pair_mean.items():
        assert v <= min(stats.mean[i], stats.mean[j]) + 1e-12


def test_two_edge_chain_exact_recovery():
    dem = _line_dem([((0, 1), 0.05), ((1,), 0.02)], n_det=2)
    probs, diags = fit_edge_probs(analytic_stats(dem), dem)
    assert_allclose(probs, [0.05, 0.02], atol=1e-9)
    assert diags == []


def test_analytic_fixed_point_on_repetition_code():
    """Infinite-sample stats reproduce the generating model exactly."""
    dem = _above_floor_rep(RepCodeSpec(5, 5), seed=17)
    probs, diags = fit_edge_probs(analytic_stats(dem), dem)
    assert diags == []
    assert_allclose(probs, dem.probabilities(), rtol=1e-9)


def test_planted_bulk_recovery_within_25_percent():
    spec = RepCodeSpec(5, 5)
    template = repetition_dem(spec)
    par = build_parametrization([template])
    pm = planted_model(spec, np.full(par.num_params, np.log10(5e-3)), 0.35, 0, 1.0, seed=9)
    shots = sample_shots(pm.dem, 100_000, seed=50)
    probs, _ = fit_edge_probs(detector_stats(shots, template), template)
    truth = pm.dem.probabilities()
    bulk = np.array([e.degree == 2 for e in template.hyperedges])
    sel = bulk & (truth >= 1e-3) & (truth <= 3e-2)
    assert sel.sum() > 30
    rel = np.abs(probs[sel] - truth[sel]) / truth[sel]
    assert rel.max() < 0.25


def test_negative_covariance_floors_the_edge():
    dem = _line_dem([((0, 1), 0.1)], n_det=2)
    stats = DetectorStats(
        1000, np.array([0.3, 0.3]), {(0, 1): 0.05}  # below 0.09 = independent
    )
    probs, diags = fit_edge_probs(stats, dem)
    assert probs[0] == FLOOR_DEGREE2
    assert len(diags) == 1 and diags[0].edge == 0


def test_below_floor_values_get_floored_with_diagnostics():
    dem = _line_dem([((0, 1), 1e-6), ((0,), 1e-4), ((1,), 1e-4)], n_det=2)
    probs, diags = fit_edge_probs(analytic_stats(dem), dem)
    assert probs[0] == FLOOR_DEGREE2
    assert probs[1] == probs[2] == FLOOR_DEGREE1
    assert {d.edge for d in diags} == {0, 1, 2}
    assert all(d.reason in {"below-floor", "undefined"} for d in diags)


@settings(max_examples=15, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_outputs_always_respect_floors(seed):
    spec = RepCodeSpec(5, 3)
    template = repetition_dem(spec)
    par = build_parametrization([template])
    rng = np.random.default_rng(seed)
    dem = instantiate(template, par, rng.uniform(-4.5, -1.5, par.num_params))
    shots = sample_shots(dem, 2000, seed=seed)
    probs, _ = fit_edge_probs(detector_stats(shots, template), template)
    for e, p in zip(template.hyperedges, probs):
        floor = FLOOR_DEGREE1 if e.degree == 1 else FLOOR_DEGREE2
        assert floor <= p <= 0.49


def test_rejects_hypergraph_templates():
    dets = tuple(Detector(i, frozenset({MeasCoord(2 * i + 1, 0, 0)})) for i in range(3))
    dem = DEM(dets, (Hyperedge((0, 1, 2), 0, 0.01),), 0)
    shots = ShotSet(np.zeros((10, 3), dtype=np.uint8), np.zeros((10, 0), dtype=np.uint8))
    with pytest.raises(DataError):
        detector_stats(shots, dem)


def test_stats_template_mismatch():
    spec = RepCodeSpec(5, 3)
    shots = sample_shots(_above_floor_rep(spec, 0), 100, seed=1)
    with pytest.raises(DataError):
        detector_stats(shots, repetition_dem(RepCodeSpec(7, 3)))


def test_class_aggregation_is_log_mean():
    spec = RepCodeSpec(5, 4)
    template = repetition_dem(spec)
    dem = _above_floor_rep(spec, seed=22)
    res = fit_pairwise(analytic_stats(dem), template)
    par = build_parametrization([template])
    binding = par.binding_for(template)
    for k in range(par.num_params):
        members = np.flatnonzero(binding == k)
        expect = np.log10(res.edge_probs[0][members]).mean()
        assert_allclose(res.theta[k], expect, rtol=1e-12)


def test_fit_suite_tags_diagnostics_with_sensor():
    spec = RepCodeSpec(9, 4)
    template = repetition_dem(spec)
    par = build_parametrization([template])
    pm = planted_model(spec, uninformative_prior([template]), 0.2, 0, 1.0, seed=5)
    suite = build_sensors(template, spec, 5, stride=2)
    target_shots = sample_shots(pm.dem, 30_000, seed=12)
    sensor_shots = [subsample_sensor_shots(target_shots, w, spec) for w in suite.windows]
    res = fit_suite(suite, sensor_shots)
    assert res.theta.shape == (suite.parametrization.num_params,)
    assert len(res.edge_probs) == suite.num_sensors
    # Merged boundary mechanisms sit below the degree-1 floor here, so some
    # diagnostics must appear, each tagged with its sensor.
    assert res.diagnostics
    assert all(d.sensor in range(suite.num_sensors) for d in res.diagnostics)
    with pytest.raises(DataError):
        fit_suite(suite, sensor_shots[:-1])
