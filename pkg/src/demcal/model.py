"""Core data model: detector error models and their time-invariant parametrization.

A detector error model (DEM) is a probabilistic hypergraph: binary detectors
(parity checks between measurements) plus independent error mechanisms
(hyperedges), each flipping a set of detectors and possibly some logical
observables. Each detector carries space-time measurement coordinates
(x, y, t).

Hyperedges are grouped into equivalence classes under time translation of
their coordinate bundles, with edges adjacent to the first or last round kept
separate from the bulk. One scalar parameter (a log10 probability) is attached
to each class; a ``Parametrization`` maps class keys to parameter indices and
records which sensor DEMs contain which classes. Instantiating a template DEM
from a parameter vector assigns every hyperedge the probability of its class.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DataError

PROB_CLAMP_LO = 1e-12
PROB_CLAMP_HI = 0.49

TAG_BULK = "bulk"
TAG_START = "time-start"
TAG_END = "time-end"


def merge_prob(p1: float, p2: float) -> float:
    """Combine two independent flip probabilities acting on the same targets.

    The targets flip iff exactly one of the two mechanisms fires, so the
    merged probability is p1 (1 - p2) + p2 (1 - p1) = (1 - (1-2 p1)(1-2 p2)) / 2.
    """
    return 0.5 * (1.0 - (1.0 - 2.0 * p1) * (1.0 - 2.0 * p2))


class MeasCoord(NamedTuple):
    """Space-time coordinate of one measurement: column x, row y, round t."""

    x: int
    y: int
    t: int


@dataclass(frozen=True)
class Detector:
    """A parity check with a dense integer id and its measurement coordinates."""

    id: int
    coords: frozenset[MeasCoord]

    def __post_init__(self) -> None:
        if self.id < 0:
            raise ValueError(f"detector id must be >= 0, got {self.id}")
        if not self.coords:
            raise ValueError(f"detector {self.id} has no coordinates")
        for c in self.coords:
            if c.x < 0 or c.y < 0 or c.t < 0:
                raise ValueError(f"detector {self.id} has negative coordinate {c}")


@dataclass(frozen=True)
class Hyperedge:
    """An independent error mechanism.

    ``detectors`` is the sorted tuple of detector ids it flips, ``observables``
    a bitmask of logical observables it flips, and ``probability`` its firing
    probability, or None for a structural template whose probabilities are
    assigned later.
    """

    detectors: tuple[int, ...]
    observables: int = 0
    probability: float | None = None

    def __post_init__(self) -> None:
        if not self.detectors:
            raise ValueError("hyperedge must touch at least one detector")
        if list(self.detectors) != sorted(set(self.detectors)):
            raise ValueError(f"hyperedge detectors must be sorted and unique: {self.detectors}")
        if self.observables < 0:
            raise ValueError("observables bitmask must be >= 0")
        if self.probability is not None and not (0.0 <= self.probability <= 0.5):
            raise ValueError(f"hyperedge probability must lie in [0, 0.5], got {self.probability}")

    @property
    def degree(self) -> int:
        return len(self.detectors)


@dataclass
class DetectorErrorModel:
    """A set of detectors plus independent hyperedge error mechanisms.

    Construction validates ids and masks and merges duplicate hyperedges
    (same detectors and observables) via :func:`merge_prob`, keeping the
    position of the first occurrence.

    Optional metadata produced by code generators (and not serialized):

    * ``edge_families``: per-edge structural family name (e.g. "space").
    * ``data_flips``: per-edge tuple of data-qubit indices whose final
      readout the edge flips.
    * ``num_data``: number of data qubits read out at the end.
    """

    detectors: tuple[Detector, ...]
    hyperedges: tuple[Hyperedge, ...]
    num_observables: int
    edge_families: tuple[str, ...] | None = None
    data_flips: tuple[tuple[int, ...], ...] | None = None
    num_data: int | None = None

    def __post_init__(self) -> None:
        self.detectors = tuple(self.detectors)
        for i, det in enumerate(self.detectors):
            if det.id != i:
                raise ValueError(f"detector ids must be dense 0..D-1; index {i} holds id {det.id}")
        if self.num_observables < 0:
            raise ValueError("num_observables must be >= 0")
        if self.edge_families is not None and len(self.edge_families) != len(self.hyperedges):
            raise ValueError("edge_families length must match hyperedges")
        if self.data_flips is not None and len(self.data_flips) != len(self.hyperedges):
            raise ValueError("data_flips length must match hyperedges")
        self._merge_duplicates()
        nd = len(self.detectors)
        for e in self.hyperedges:
            if e.detectors[-1] >= nd:
                raise ValueError(f"hyperedge {e.detectors} references unknown detector (D={nd})")
            if e.observables >> self.num_observables:
                raise ValueError(
                    f"hyperedge observables {e.observables:#x} exceed num_observables={self.num_observables}"
                )

    def _merge_duplicates(self) -> None:
        seen: dict[tuple[tuple[int, ...], int], int] = {}
        edges: list[Hyperedge] = []
        fams: list[str] | None = [] if self.edge_families is not None else None
        flips: list[tuple[int, ...]] | None = [] if self.data_flips is not None else None
        for i, e in enumerate(self.hyperedges):
            key = (e.detectors, e.observables)
            if key in seen:
                j = seen[key]
                old = edges[j]
                if old.probability is None or e.probability is None:
                    raise ValueError(
                        f"duplicate hyperedge {e.detectors} with unset probability cannot be merged"
                    )
                edges[j] = Hyperedge(e.detectors, e.observables, merge_prob(old.probability, e.probability))
            else:
                seen[key] = len(edges)
                edges.append(e)
                if fams is not None:
                    fams.append(self.edge_families[i])  # type: ignore[index]
                if flips is not None:
                    flips.append(tuple(self.data_flips[i]))  # type: ignore[index]
        self.hyperedges = tuple(edges)
        self.edge_families = tuple(fams) if fams is not None else None
        self.data_flips = tuple(flips) if flips is not None else None

    @property
    def num_detectors(self) -> int:
        return len(self.detectors)

    @property
    def max_t(self) -> int:
        """Largest measurement round appearing in any detector coordinate."""
        return max(c.t for det in self.detectors for c in det.coords)

    def probabilities(self) -> np.ndarray:
        """Edge probabilities as a float array; raises if any are unset."""
        ps = [e.probability for e in self.hyperedges]
        if any(p is None for p in ps):
            raise ValueError("template DEM has unset probabilities; instantiate it first")
        return np.asarray(ps, dtype=np.float64)

    def class_keys(self, r_max: int | None = None) -> list[ClassKey]:
        """Canonical class key of every hyperedge, in edge order."""
        r = self.max_t if r_max is None else r_max
        return [canonical_key(e, self.detectors, r) for e in self.hyperedges]


# Backwards-friendly short alias used throughout the package.
DEM = DetectorErrorModel


@dataclass(frozen=True)
class ClassKey:
    """Canonical key of a hyperedge's time-translation equivalence class.

    ``bundle`` is the sorted tuple of per-detector coordinate groups, each
    group a sorted tuple of (x, y, t) triples, with the whole bundle shifted
    so its minimum t is zero. ``tag`` records whether the un-shifted bundle
    touched the first round (t = 0) or the last one (t = r_max); edges in the
    interior are tagged "bulk". If an edge touches both boundaries (possible
    only for very short circuits) "time-start" wins.
    """

    bundle: tuple[tuple[tuple[int, int, int], ...], ...]
    tag: str

    def serialize(self) -> str:
        groups = [
            "+".join(f"{x},{y},{t}" for (x, y, t) in group) for group in self.bundle
        ]
        return f"{self.tag}|" + ";".join(groups)

    @staticmethod
    def deserialize(text: str) -> "ClassKey":
        try:
            tag, rest = text.split("|", 1)
        except ValueError as exc:
            raise DataError(f"malformed class key {text!r}") from exc
        if tag not in (TAG_BULK, TAG_START, TAG_END):
            raise DataError(f"unknown boundary tag {tag!r} in class key {text!r}")
        bundle = []
        for group in rest.split(";"):
            coords = []
            for triple in group.split("+"):
                parts = triple.split(",")
                if len(parts) != 3:
                    raise DataError(f"malformed coordinate {triple!r} in class key {text!r}")
                try:
                    coords.append(tuple(int(p) for p in parts))
                except ValueError as exc:
                    raise DataError(f"non-integer coordinate in class key {text!r}") from exc
            bundle.append(tuple(coords))
        return ClassKey(tuple(bundle), tag)


def canonical_key(edge: Hyperedge, detectors: Sequence[Detector], r_max: int) -> ClassKey:
    """Canonical time-translation class key of ``edge``.

    The coordinate groups of the edge's detectors are shifted in time so the
    earliest coordinate sits at t = 0; two hyperedges related by a pure time
    translation therefore share a bundle. Edges whose un-shifted coordinates
    touch t = 0 or t = r_max get a boundary tag so first-round and final-round
    mechanisms stay distinct from their bulk counterparts.
    """
    groups = []
    tmin = None
    touches_start = False
    touches_end = False
    for det_id in edge.detectors:
        det = detectors[det_id]
        coords = sorted((c.x, c.y, c.t) for c in det.coords)
        for _, _, t in coords:
            tmin = t if tmin is None else min(tmin, t)
            touches_start = touches_start or t == 0
            touches_end = touches_end or t == r_max
        groups.append(coords)
    shifted = tuple(
        sorted(tuple((x, y, t - tmin) for (x, y, t) in group) for group in groups)
    )
    if touches_start:
        tag = TAG_START
    elif touches_end:
        tag = TAG_END
    else:
        tag = TAG_BULK
    return ClassKey(tuple(tuple(g) for g in shifted), tag)


def class_kind(key: ClassKey) -> str:
    """Coarse geometric kind of a hyperedge class.

    Returns "boundary" for single-detector classes, "time" for two-detector
    classes whose detectors share a space coordinate on consecutive rounds
    (measurement-type mechanisms), and "space" for everything else.
    """
    if len(key.bundle) == 1:
        return "boundary"
    xs = [g[0][0] for g in key.bundle]
    ts = [g[0][2] for g in key.bundle]
    if len(key.bundle) == 2 and xs[0] == xs[1] and abs(ts[0] - ts[1]) == 1:
        return "time"
    return "space"


@dataclass
class Parametrization:
    """Mapping from hyperedge classes to a shared parameter vector.

    ``classes`` lists the class keys in their canonical (lexicographic by
    serialization) order; ``sensor_support`` is an (A, P) 0/1 matrix whose
    row a marks the parameters present in sensor a.
    """

    classes: tuple[ClassKey, ...]
    sensor_support: np.ndarray

    def __post_init__(self) -> None:
        self.index: dict[ClassKey, int] = {k: i for i, k in enumerate(self.classes)}
        if len(self.index) != len(self.classes):
            raise ValueError("duplicate class keys in parametrization")
        self.sensor_support = np.asarray(self.sensor_support, dtype=np.uint8)
        if self.sensor_support.ndim != 2 or self.sensor_support.shape[1] != len(self.classes):
            raise ValueError("sensor_support must have shape (A, P)")

    @property
    def num_params(self) -> int:
        return len(self.classes)

    @property
    def num_sensors(self) -> int:
        return int(self.sensor_support.shape[0])

    def binding_for(self, dem: DetectorErrorModel, r_max: int | None = None) -> np.ndarray:
        """Per-hyperedge parameter indices for ``dem``.

        Raises :class:`DataError` if any hyperedge's class is absent from the
        parametrization (an unbound template).
        """
        keys = dem.class_keys(r_max)
        missing = sorted({k.serialize() for k in keys if k not in self.index})
        if missing:
            raise DataError(
                "template has %d hyperedge class(es) not covered by the parametrization, "
                "e.g. %s" % (len(missing), missing[0])
            )
        return np.asarray([self.index[k] for k in keys], dtype=np.int64)


def build_parametrization(sensor_dems: Sequence[DetectorErrorModel]) -> Parametrization:
    """Build the shared parametrization over the classes of ``sensor_dems``.

    Parameter order is lexicographic in the serialized class key, which makes
    the layout reproducible across runs and machines.
    """
    if not sensor_dems:
        raise ValueError("need at least one sensor DEM")
    per_sensor: list[set[ClassKey]] = []
    for dem in sensor_dems:
        per_sensor.append(set(dem.class_keys()))
    all_keys = sorted(set().union(*per_sensor), key=lambda k: k.serialize())
    support = np.zeros((len(sensor_dems), len(all_keys)), dtype=np.uint8)
    index = {k: j for j, k in enumerate(all_keys)}
    for a, keys in enumerate(per_sensor):
        for k in keys:
            support[a, index[k]] = 1
    return Parametrization(tuple(all_keys), support)


def instantiate(
    template: DetectorErrorModel,
    parametrization: Parametrization,
    theta: np.ndarray,
    r_max: int | None = None,
) -> DetectorErrorModel:
    """Assign probabilities 10**theta[class] to every hyperedge of ``template``.

    Probabilities are clamped into [1e-12, 0.49] so downstream decoding
    weights stay finite. Structure and metadata are preserved.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (parametrization.num_params,):
        raise DataError(
            f"parameter vector has length {theta.shape}, expected ({parametrization.num_params},)"
        )
    binding = parametrization.binding_for(template, r_max)
    probs = np.clip(10.0 ** theta[binding], PROB_CLAMP_LO, PROB_CLAMP_HI)
    edges = tuple(
        Hyperedge(e.detectors, e.observables, float(p))
        for e, p in zip(template.hyperedges, probs)
    )
    return DetectorErrorModel(
        detectors=template.detectors,
        hyperedges=edges,
        num_observables=template.num_observables,
        edge_families=template.edge_families,
        data_flips=template.data_flips,
        num_data=template.num_data,
    )


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the angle between two parameter vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity undefined for zero-norm vector")
    return float(np.dot(a, b) / (na * nb))


# ---------------------------------------------------------------------------
# Text serialization
#
#   num_observables <n>
#   detector D<id> <x> <y> <t> [<x> <y> <t> ...]
#   error <p> D<id> [D<id> ...] [L<k> ...]
#
# '#' starts a comment line; probabilities use 17 significant digits so the
# round trip is bit-exact.
# ---------------------------------------------------------------------------

_DET_TOKEN = re.compile(r"^D(\d+)$")
_OBS_TOKEN = re.compile(r"^L(\d+)$")


def format_g17(x: float) -> str:
    """Format a float with 17 significant digits (lossless for float64)."""
    return format(float(x), ".17g")


def dem_to_text(dem: DetectorErrorModel) -> str:
    lines = [f"num_observables {dem.num_observables}"]
    for det in dem.detectors:
        coords = sorted((c.x, c.y, c.t) for c in det.coords)
        flat = " ".join(f"{x} {y} {t}" for (x, y, t) in coords)
        lines.append(f"detector D{det.id} {flat}")
    for e in dem.hyperedges:
        if e.probability is None:
            raise ValueError("cannot serialize a template with unset probabilities")
        dets = " ".join(f"D{i}" for i in e.detectors)
        obs = " ".join(f"L{k}" for k in range(dem.num_observables) if (e.observables >> k) & 1)
        parts = ["error", format_g17(e.probability), dets]
        if obs:
            parts.append(obs)
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def dem_from_text(text: str) -> DetectorErrorModel:
    num_observables: int | None = None
    detectors: dict[int, frozenset[MeasCoord]] = {}
    edges: list[Hyperedge] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        kind = tokens[0]
        try:
            if kind == "num_observables":
                if len(tokens) != 2:
                    raise DataError("expected 'num_observables <n>'")
                num_observables = int(tokens[1])
            elif kind == "detector":
                m = _DET_TOKEN.match(tokens[1])
                if m is None:
                    raise DataError(f"bad detector token {tokens[1]!r}")
                det_id = int(m.group(1))
                nums = [int(tok) for tok in tokens[2:]]
                if not nums or len(nums) % 3 != 0:
                    raise DataError("detector coordinates must come in (x, y, t) triples")
                coords = frozenset(
                    MeasCoord(nums[i], nums[i + 1], nums[i + 2]) for i in range(0, len(nums), 3)
                )
                if det_id in detectors:
                    raise DataError(f"duplicate detector id D{det_id}")
                detectors[det_id] = coords
            elif kind == "error":
                p = float(tokens[1])
                det_ids: list[int] = []
                obs_mask = 0
                seen_obs = False
                for tok in tokens[2:]:
                    dm = _DET_TOKEN.match(tok)
                    om = _OBS_TOKEN.match(tok)
                    if dm is not None:
                        if seen_obs:
                            raise DataError("detector tokens must precede observable tokens")
                        det_ids.append(int(dm.group(1)))
                    elif om is not None:
                        seen_obs = True
                        obs_mask |= 1 << int(om.group(1))
                    else:
                        raise DataError(f"unrecognized token {tok!r}")
                if not det_ids:
                    raise DataError("error line names no detectors")
                edges.append(Hyperedge(tuple(sorted(set(det_ids))), obs_mask, p))
            else:
                raise DataError(f"unrecognized line kind {kind!r}")
        except DataError as exc:
            raise DataError(f"line {lineno}: {exc}") from None
        except (ValueError, IndexError) as exc:
            raise DataError(f"line {lineno}: {exc}") from None
    if num_observables is None:
        raise DataError("missing 'num_observables' line")
    if sorted(detectors) != list(range(len(detectors))):
        raise DataError("detector ids must be dense 0..D-1")
    dets = tuple(Detector(i, detectors[i]) for i in range(len(detectors)))
    try:
        return DetectorErrorModel(dets, tuple(edges), num_observables)
    except ValueError as exc:
        raise DataError(str(exc)) from None


def write_dem(path, dem: DetectorErrorModel) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(dem_to_text(dem))


def read_dem(path) -> DetectorErrorModel:
    with open(path, "r", encoding="ascii") as fh:
        return dem_from_text(fh.read())
