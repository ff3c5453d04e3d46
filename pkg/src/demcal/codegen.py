"""Repetition-code model generation and sensor-window construction.

Layout conventions for a distance-d, r-round repetition code:

* data qubits q = 0..d-1 sit at x = 2q on a line (y = 0 throughout);
* measure qubits m = 0..d-2 sit at x = 2m+1 between data qubits m and m+1;
* measurement rounds happen at t = 0..r-1 and the final transversal data
  readout at t = r;
* detector (m, row) for row = 0..r compares consecutive parity values of
  measure qubit m (row 0 against the known initial state, row r against the
  final data readout). Its id is row*(d-1) + m and it carries the single
  representative coordinate (2m+1, 0, row).

Error mechanisms come in three structural families:

* "space": a data-qubit flip entering before round s (s = 0..r). It fires the
  detectors adjacent to qubit q in row s, flips qubit q's final readout, and
  flips the logical observable (the parity of all data qubits; d is odd, so
  this is a valid logical representative).
* "time": a measurement error at round t (t = 0..r-1), firing detector rows
  t and t+1 of the same column.
* "diag": a mid-round data error, firing detector (m, t) and (m+1, t+1).

Totals: (r+1)d space + r(d-1) time + r(d-2) diag = 3r(d-1) + d hyperedges and
(d-1)(r+1) detectors.

A sensor is the restriction of the target model to a spatial window of d_s
data qubits: detectors whose measure qubit lies inside the window are kept,
edges crossing the window boundary collapse onto their surviving detector and
merge into per-detector boundary mechanisms, and the sensor observable is the
parity of the window's data qubits.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataError
from .model import (
    ClassKey,
    DEM,
    Detector,
    Hyperedge,
    MeasCoord,
    Parametrization,
    build_parametrization,
    merge_prob,
)

FAMILY_SPACE = "space"
FAMILY_TIME = "time"
FAMILY_DIAG = "diag"

#: Structural prior: data-type mechanisms are taken twice as likely as
#: measurement-type ones, with no attempt at per-class detail.
UNINFORMATIVE_PROBS = {FAMILY_SPACE: 2e-3, FAMILY_TIME: 1e-3, FAMILY_DIAG: 1e-3}


@dataclass(frozen=True)
class RepCodeSpec:
    """Distance and round count of a repetition-code memory experiment."""

    distance: int
    rounds: int

    def __post_init__(self) -> None:
        if self.distance < 3 or self.distance % 2 == 0:
            raise ValueError(f"distance must be odd and >= 3, got {self.distance}")
        if self.rounds < 1:
            raise ValueError(f"rounds must be >= 1, got {self.rounds}")

    @property
    def num_detectors(self) -> int:
        return (self.distance - 1) * (self.rounds + 1)

    @property
    def num_edges(self) -> int:
        return 3 * self.rounds * (self.distance - 1) + self.distance


@dataclass(frozen=True)
class SensorWindow:
    """A contiguous block of ``size`` data qubits starting at ``start``."""

    start: int
    size: int

    def __post_init__(self) -> None:
        if self.start < 0:
            raise ValueError("window start must be >= 0")
        if self.size < 3 or self.size % 2 == 0:
            raise ValueError(f"window size must be odd and >= 3, got {self.size}")

    @property
    def stop(self) -> int:
        """One past the last data qubit in the window."""
        return self.start + self.size

    def measure_cols(self) -> range:
        """Measure-qubit columns whose both neighbours lie inside the window."""
        return range(self.start, self.stop - 1)


def _detector_id(spec: RepCodeSpec, m: int, row: int) -> int:
    return row * (spec.distance - 1) + m


def repetition_dem(spec: RepCodeSpec) -> DEM:
    """Structural template of the repetition-code detector error model.

    Probabilities are left unset; use ``instantiate`` or ``planted_dem`` to
    assign them. The single logical observable (bit 0) is flipped by every
    space-family mechanism.
    """
    d, r = spec.distance, spec.rounds
    detectors = tuple(
        Detector(_detector_id(spec, m, row), frozenset({MeasCoord(2 * m + 1, 0, row)}))
        for row in range(r + 1)
        for m in range(d - 1)
    )
    edges: list[Hyperedge] = []
    families: list[str] = []
    flips: list[tuple[int, ...]] = []
    for s in range(r + 1):
        for q in range(d):
            dets = [
                _detector_id(spec, m, s) for m in (q - 1, q) if 0 <= m <= d - 2
            ]
            edges.append(Hyperedge(tuple(sorted(dets)), observables=1))
            families.append(FAMILY_SPACE)
            flips.append((q,))
    for t in range(r):
        for m in range(d - 1):
            dets = (_detector_id(spec, m, t), _detector_id(spec, m, t + 1))
            edges.append(Hyperedge(tuple(sorted(dets))))
            families.append(FAMILY_TIME)
            flips.append(())
    for t in range(r):
        for m in range(d - 2):
            dets = (_detector_id(spec, m, t), _detector_id(spec, m + 1, t + 1))
            edges.append(Hyperedge(tuple(sorted(dets))))
            families.append(FAMILY_DIAG)
            flips.append(())
    return DEM(
        detectors=detectors,
        hyperedges=tuple(edges),
        num_observables=1,
        edge_families=tuple(families),
        data_flips=tuple(flips),
        num_data=d,
    )


def uninformative_prior(
    templates: DEM | Sequence[DEM], parametrization: Parametrization | None = None
) -> np.ndarray:
    """Per-class log10 probabilities from structural families alone.

    Every class inherits the base value of its family (boundary mechanisms
    included), so the output takes only a few distinct values. Requires the
    templates to carry family metadata from the generator.
    """
    if isinstance(templates, DEM):
        templates = [templates]
    if parametrization is None:
        parametrization = build_parametrization(list(templates))
    theta = np.full(parametrization.num_params, np.nan)
    for dem in templates:
        if dem.edge_families is None:
            raise ValueError("template lacks family metadata; was it built by repetition_dem?")
        binding = parametrization.binding_for(dem)
        for e_idx, p_idx in enumerate(binding):
            value = np.log10(UNINFORMATIVE_PROBS[dem.edge_families[e_idx]])
            if np.isnan(theta[p_idx]):
                theta[p_idx] = value
            elif theta[p_idx] != value:
                raise ValueError(
                    f"conflicting family values for parameter {p_idx}: "
                    f"{theta[p_idx]} vs {value}"
                )
    if np.isnan(theta).any():
        missing = int(np.isnan(theta).sum())
        raise ValueError(f"{missing} parameter(s) not covered by the given templates")
    return theta


@dataclass(frozen=True)
class PlantedModel:
    """A ground-truth model drawn around a base prior.

    ``class_theta`` holds the per-class log10 probabilities before outlier
    injection; ``outlier_edges`` the indices of edges boosted by the outlier
    factor.
    """

    dem: DEM
    parametrization: Parametrization
    class_theta: np.ndarray
    outlier_edges: tuple[int, ...]


def planted_model(
    spec: RepCodeSpec,
    base_theta: np.ndarray,
    spread_sigma: float,
    n_outliers: int,
    outlier_factor: float,
    seed: int,
) -> PlantedModel:
    """Draw a concrete error model around ``base_theta``.

    Each class gets one Gaussian offset of ``spread_sigma`` (in log10 units),
    so the planted truth is itself time-translation invariant; ``n_outliers``
    randomly chosen edges are then multiplied by ``outlier_factor``, breaking
    that invariance for just those edges. All probabilities are clamped into
    (0, 0.49].

    Class offsets are drawn in canonical class order, which is independent of
    the round count, so the same seed yields the same per-class truth at any
    r >= 3: the planted device behaves like one physical device run for more
    rounds (as long as n_outliers = 0).
    """
    template = repetition_dem(spec)
    parametrization = build_parametrization([template])
    base_theta = np.asarray(base_theta, dtype=np.float64)
    if base_theta.shape != (parametrization.num_params,):
        raise ValueError(
            f"base_theta length {base_theta.shape} != parameter count {parametrization.num_params}"
        )
    rng = np.random.Generator(np.random.Philox(key=seed))
    class_theta = base_theta + rng.normal(0.0, spread_sigma, parametrization.num_params)
    binding = parametrization.binding_for(template)
    probs = np.clip(10.0 ** class_theta[binding], 1e-12, 0.49)
    n_edges = len(template.hyperedges)
    if not 0 <= n_outliers <= n_edges:
        raise ValueError(f"n_outliers must lie in [0, {n_edges}]")
    outliers = tuple(sorted(rng.choice(n_edges, size=n_outliers, replace=False).tolist()))
    probs[list(outliers)] = np.clip(probs[list(outliers)] * outlier_factor, 1e-12, 0.49)
    edges = tuple(
        Hyperedge(e.detectors, e.observables, float(p))
        for e, p in zip(template.hyperedges, probs)
    )
    dem = DEM(
        detectors=template.detectors,
        hyperedges=edges,
        num_observables=template.num_observables,
        edge_families=template.edge_families,
        data_flips=template.data_flips,
        num_data=template.num_data,
    )
    return PlantedModel(dem, parametrization, class_theta, outliers)


def planted_dem(
    spec: RepCodeSpec,
    base_theta: np.ndarray,
    spread_sigma: float,
    n_outliers: int,
    outlier_factor: float,
    seed: int,
) -> DEM:
    """Like :func:`planted_model`, returning only the concrete DEM."""
    return planted_model(spec, base_theta, spread_sigma, n_outliers, outlier_factor, seed).dem


def restrict_to_window(target: DEM, window: SensorWindow) -> DEM:
    """Restrict a repetition-shaped model to a spatial window.

    Detectors whose measure qubit lies inside the window are kept with their
    absolute coordinates (so hyperedge classes shared with the target keep
    identical keys). Edges fully inside are kept; edges crossing the spatial
    boundary collapse onto their surviving detectors, and crossing edges that
    land on the same surviving detector set merge into one boundary mechanism
    (probabilities XOR-merged, observable masks OR-ed, which for repetition
    windows means "the boundary mechanism flips the window parity iff some
    member was a data-type error"). Edges entirely outside are dropped.

    The observable (bit 0) of the restricted model is the parity of the
    window's data qubits; final-readout metadata is reindexed to the window.
    """
    keep: dict[int, int] = {}
    kept_dets: list[Detector] = []
    for det in target.detectors:
        xs = {c.x for c in det.coords}
        if len(xs) != 1:
            raise ValueError("window restriction expects single-column detectors")
        x = xs.pop()
        if x % 2 != 1:
            raise ValueError(f"detector {det.id} does not sit on a measure-qubit column")
        m = (x - 1) // 2
        if m in window.measure_cols():
            keep[det.id] = len(kept_dets)
            kept_dets.append(Detector(len(kept_dets), det.coords))

    has_fams = target.edge_families is not None
    has_flips = target.data_flips is not None

    def window_flips(e_idx: int) -> tuple[int, ...]:
        if not has_flips:
            return ()
        return tuple(
            q - window.start
            for q in target.data_flips[e_idx]  # type: ignore[index]
            if window.start <= q < window.stop
        )

    # Group crossing edges by their surviving detector set.
    groups: dict[tuple[int, ...], list[int]] = {}
    for i, e in enumerate(target.hyperedges):
        inside = tuple(keep[d] for d in e.detectors if d in keep)
        if 0 < len(inside) < len(e.detectors):
            groups.setdefault(inside, []).append(i)

    edges: list[Hyperedge] = []
    fams: list[str] = []
    flips: list[tuple[int, ...]] = []
    emitted: set[tuple[int, ...]] = set()
    for i, e in enumerate(target.hyperedges):
        inside = tuple(keep[d] for d in e.detectors if d in keep)
        if not inside:
            continue
        if len(inside) == len(e.detectors):
            edges.append(Hyperedge(inside, e.observables, e.probability))
            if has_fams:
                fams.append(target.edge_families[i])  # type: ignore[index]
            if has_flips:
                flips.append(window_flips(i))
            continue
        if inside in emitted:
            continue
        emitted.add(inside)
        members = groups[inside]
        probs = [target.hyperedges[j].probability for j in members]
        if any(p is None for p in probs):
            if not all(p is None for p in probs):
                raise ValueError("cannot merge crossing edges with mixed set/unset probabilities")
            merged_p: float | None = None
        else:
            merged_p = probs[0]
            for p in probs[1:]:
                merged_p = merge_prob(merged_p, p)  # type: ignore[arg-type]
        mask = 0
        for j in members:
            mask |= target.hyperedges[j].observables
        edges.append(Hyperedge(inside, mask, merged_p))
        if has_fams:
            member_fams = [target.edge_families[j] for j in members]  # type: ignore[index]
            fams.append(FAMILY_SPACE if FAMILY_SPACE in member_fams else member_fams[0])
        if has_flips:
            merged_flips: set[int] = set()
            for j in members:
                merged_flips.symmetric_difference_update(window_flips(j))
            flips.append(tuple(sorted(merged_flips)))
    return DEM(
        detectors=tuple(kept_dets),
        hyperedges=tuple(edges),
        num_observables=target.num_observables,
        edge_families=tuple(fams) if has_fams else None,
        data_flips=tuple(flips) if has_flips else None,
        num_data=window.size if target.num_data is not None else None,
    )


@dataclass
class SensorSuite:
    """A set of sensor windows over one target code plus their shared parameters."""

    spec: RepCodeSpec
    windows: tuple[SensorWindow, ...]
    sensors: tuple[DEM, ...]
    parametrization: Parametrization
    bindings: tuple[np.ndarray, ...] = field(init=False)

    def __post_init__(self) -> None:
        self.bindings = tuple(
            self.parametrization.binding_for(dem) for dem in self.sensors
        )

    @property
    def num_sensors(self) -> int:
        return len(self.sensors)

    def param_degrees(self) -> np.ndarray:
        """How many sensors bind each parameter (support-matrix column sums)."""
        return self.parametrization.sensor_support.sum(axis=0)


def project_onto_suite(dem: DEM, suite: SensorSuite) -> np.ndarray:
    """Express a concrete target-code DEM in the suite's parameter space.

    Restricts ``dem`` to every window and takes the per-class mean of the
    log10 member probabilities, including the merged window-boundary classes
    that have no counterpart in the target template. Useful for scoring the
    generating model itself as a candidate.
    """
    n_params = suite.parametrization.num_params
    sums = np.zeros(n_params)
    counts = np.zeros(n_params, dtype=np.int64)
    for window, binding in zip(suite.windows, suite.bindings):
        restricted = restrict_to_window(dem, window)
        np.add.at(sums, binding, np.log10(restricted.probabilities()))
        np.add.at(counts, binding, 1)
    if (counts == 0).any():
        raise DataError("suite has parameters bound by no sensor")
    return sums / counts


def _window_starts_stride(d: int, d_s: int, stride: int) -> list[int]:
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if stride >= d_s:
        raise ValueError(
            f"stride {stride} >= window size {d_s}: adjacent windows would not overlap"
        )
    starts = []
    k = 0
    while True:
        start = k * stride
        if start + d_s >= d:
            starts.append(d - d_s)
            break
        starts.append(start)
        k += 1
    return starts


def _window_starts_count(d: int, d_s: int, count: int) -> list[int]:
    if count < 1:
        raise ValueError("sensor count must be >= 1")
    if count == 1:
        if d_s != d:
            raise ValueError("a single sensor must span the whole chain")
        return [0]
    span = d - d_s
    starts = [round(i * span / (count - 1)) for i in range(count)]
    if sorted(set(starts)) != starts:
        raise ValueError(f"cannot place {count} distinct windows of size {d_s} on distance {d}")
    for a, b in zip(starts, starts[1:]):
        if b - a >= d_s:
            raise ValueError("window layout leaves adjacent windows without overlap")
    return starts


def build_sensors(
    target: DEM,
    spec: RepCodeSpec,
    d_s: int,
    stride: int | None = None,
    count: int | None = None,
) -> SensorSuite:
    """Build the sensor windows, restricted models, and shared parametrization.

    Exactly one of ``stride`` (windows at 0, stride, 2*stride, ... with the
    final window clamped to end at d) or ``count`` (evenly spaced rounded
    starts) must be given. Adjacent windows always overlap by at least one
    data qubit.
    """
    d = spec.distance
    if d_s > d:
        raise ValueError(f"window size {d_s} exceeds distance {d}")
    if (stride is None) == (count is None):
        raise ValueError("give exactly one of stride or count")
    if stride is not None:
        starts = _window_starts_stride(d, d_s, stride)
    else:
        starts = _window_starts_count(d, d_s, count)  # type: ignore[arg-type]
    windows = tuple(SensorWindow(s, d_s) for s in starts)
    sensors = tuple(restrict_to_window(target, w) for w in windows)
    parametrization = build_parametrization(list(sensors))
    return SensorSuite(spec, windows, sensors, parametrization)


def window_detector_ids(spec: RepCodeSpec, window: SensorWindow) -> np.ndarray:
    """Target detector ids kept by ``window``, in restricted-model id order."""
    cols = list(window.measure_cols())
    return np.array(
        [row * (spec.distance - 1) + m for row in range(spec.rounds + 1) for m in cols],
        dtype=np.int64,
    )


def check_coverage(target: DEM, parametrization: Parametrization) -> list[ClassKey]:
    """Target hyperedge classes missing from the parametrization, sorted."""
    covered = set(parametrization.classes)
    uncovered = {k for k in target.class_keys() if k not in covered}
    return sorted(uncovered, key=lambda k: k.serialize())
