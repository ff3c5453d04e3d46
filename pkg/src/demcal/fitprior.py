"""Edge-probability fitting from detector correlation statistics.

The two-point inversion: for a pair of detectors (i, j) joined by exactly one
edge of probability p, with independent mechanisms elsewhere,

    c = <x_i x_j> - <x_i><x_j>
    p = 1/2 - 1/2 * sqrt(1 - 4c / (1 - 2<x_i> - 2<x_j> + 4<x_i x_j>))

recovers p exactly. Boundary (degree-1) edges are then solved from the
residual marginal: the full product identity 1 - 2<x_i> = prod_e (1 - 2 p_e)
over all edges incident to detector i, divided through by the already-fitted
degree-2 contributions. Values that come out non-physical (negative
covariance, vanishing denominator, ratio of the wrong sign) fall back to the
edge's floor and are reported in the diagnostics rather than raised.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codegen import SensorSuite
from .errors import DataError
from .model import DEM, Parametrization, build_parametrization
from .sampler import ShotSet

FLOOR_DEGREE1 = 1e-2
FLOOR_DEGREE2 = 1e-5
_CEILING = 0.49


@dataclass(frozen=True)
class DetectorStats:
    """Empirical detector means and pair means over one shot set.

    ``pair_mean`` holds <x_i x_j> keyed by (i, j) with i < j, restricted to
    detector pairs joined by a degree-2 edge of the template.
    """

    n_shots: int
    mean: np.ndarray
    pair_mean: dict[tuple[int, int], float]


def _degree2_pairs(template: DEM) -> list[tuple[int, int]]:
    pairs = []
    for e in template.hyperedges:
        if e.degree > 2:
            raise DataError(
                f"template hyperedge {e.detectors} has degree {e.degree}; "
                "correlation fitting supports graph-like models only"
            )
        if e.degree == 2:
            pairs.append(e.detectors)
    return pairs


def detector_stats(shots: ShotSet, template: DEM) -> DetectorStats:
    """Exact empirical means, with pair means for the template's edges."""
    if shots.num_detectors != template.num_detectors:
        raise DataError(
            f"shots have {shots.num_detectors} detectors, template {template.num_detectors}"
        )
    bits = shots.detector_bits
    mean = bits.mean(axis=0)
    pair_mean: dict[tuple[int, int], float] = {}
    pairs = sorted(set(_degree2_pairs(template)))
    if pairs:
        ii = np.array([p[0] for p in pairs])
        jj = np.array([p[1] for p in pairs])
        joint = (bits[:, ii] & bits[:, jj]).mean(axis=0)
        pair_mean = {p: float(v) for p, v in zip(pairs, joint)}
    return DetectorStats(shots.n_shots, mean.astype(np.float64), pair_mean)


@dataclass(frozen=True)
class FitDiagnostic:
    """One floored edge: which edge, why, and the raw pre-floor value."""

    sensor: int | None
    edge: int
    reason: str
    raw_value: float


@dataclass(frozen=True)
class FitResult:
    theta: np.ndarray
    edge_probs: tuple[np.ndarray, ...]
    diagnostics: tuple[FitDiagnostic, ...]


def _floor_for(degree: int) -> float:
    return FLOOR_DEGREE1 if degree == 1 else FLOOR_DEGREE2


def fit_edge_probs(
    stats: DetectorStats, template: DEM
) -> tuple[np.ndarray, list[FitDiagnostic]]:
    """Per-edge fitted probabilities for one model, floored, with diagnostics."""
    mean = stats.mean
    edges = template.hyperedges
    probs = np.empty(len(edges))
    diags: list[FitDiagnostic] = []

    def settle(idx: int, raw: float, degree: int, broken: bool) -> None:
        floor = _floor_for(degree)
        if broken:
            probs[idx] = floor
            diags.append(FitDiagnostic(None, idx, "undefined", raw))
        elif raw < floor:
            probs[idx] = floor
            diags.append(FitDiagnostic(None, idx, "below-floor", raw))
        else:
            probs[idx] = min(raw, _CEILING)

    # Bulk (degree-2) edges first.
    for idx, e in enumerate(edges):
        if e.degree != 2:
            continue
        i, j = e.detectors
        mij = stats.pair_mean[(i, j)]
        c = mij - mean[i] * mean[j]
        denom = 1.0 - 2.0 * mean[i] - 2.0 * mean[j] + 4.0 * mij
        if denom <= 0.0:
            settle(idx, np.nan, 2, broken=True)
            continue
        inner = 1.0 - 4.0 * c / denom
        if inner < 0.0:
            settle(idx, np.nan, 2, broken=True)
            continue
        settle(idx, 0.5 - 0.5 * np.sqrt(inner), 2, broken=False)

    # Boundary (degree-1) edges from residual marginals, detector id order.
    incident_bulk: dict[int, list[int]] = {}
    boundary_edges: dict[int, list[int]] = {}
    for idx, e in enumerate(edges):
        for det in e.detectors:
            if e.degree == 2:
                incident_bulk.setdefault(det, []).append(idx)
            else:
                boundary_edges.setdefault(det, []).append(idx)
    for det in sorted(boundary_edges):
        members = sorted(boundary_edges[det])
        fid = 1.0 - 2.0 * mean[det]
        for b_idx in sorted(incident_bulk.get(det, [])):
            fid /= 1.0 - 2.0 * probs[b_idx]
        if fid <= 0.0:
            for b in members:
                settle(b, np.nan, 1, broken=True)
            continue
        # Several boundary mechanisms on one detector share the residual
        # evenly in fidelity: (1 - 2p)^k = residual.
        ratio = fid ** (1.0 / len(members))
        raw = 0.5 * (1.0 - ratio)
        for b in members:
            settle(b, raw, 1, broken=False)
    return probs, diags


def _aggregate(
    parametrization: Parametrization,
    bindings: list[np.ndarray],
    per_sensor_probs: list[np.ndarray],
) -> np.ndarray:
    sums = np.zeros(parametrization.num_params)
    counts = np.zeros(parametrization.num_params, dtype=np.int64)
    for binding, probs in zip(bindings, per_sensor_probs):
        np.add.at(sums, binding, np.log10(probs))
        np.add.at(counts, binding, 1)
    if (counts == 0).any():
        missing = int((counts == 0).sum())
        raise DataError(f"{missing} parameter class(es) have no fitted member edge")
    return sums / counts


def fit_pairwise(
    stats: DetectorStats,
    template: DEM,
    parametrization: Parametrization | None = None,
) -> FitResult:
    """Fit one model's edges and aggregate to per-class log10 values.

    Classes aggregate by the mean of member log10 probabilities (geometric
    mean in probability), matching the log-space parametrization the trainer
    uses downstream.
    """
    if parametrization is None:
        parametrization = build_parametrization([template])
    probs, diags = fit_edge_probs(stats, template)
    theta = _aggregate(parametrization, [parametrization.binding_for(template)], [probs])
    return FitResult(theta, (probs,), tuple(diags))


def fit_suite(suite: SensorSuite, sensor_shots: list[ShotSet]) -> FitResult:
    """Fit every sensor and aggregate into the suite's shared parameters."""
    if len(sensor_shots) != suite.num_sensors:
        raise DataError(
            f"got {len(sensor_shots)} shot sets for {suite.num_sensors} sensors"
        )
    all_probs: list[np.ndarray] = []
    all_diags: list[FitDiagnostic] = []
    for s_idx, (dem, shots) in enumerate(zip(suite.sensors, sensor_shots)):
        stats = detector_stats(shots, dem)
        probs, diags = fit_edge_probs(stats, dem)
        all_probs.append(probs)
        all_diags.extend(
            FitDiagnostic(s_idx, d.edge, d.reason, d.raw_value) for d in diags
        )
    theta = _aggregate(suite.parametrization, list(suite.bindings), all_probs)
    return FitResult(theta, tuple(all_probs), tuple(all_diags))
