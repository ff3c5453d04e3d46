"""Monte Carlo syndrome sampling and sensor-shot derivation.

Shots are generated in fixed-size blocks of ``_CHUNK`` shots, each block from
its own counter-based RNG stream (Philox keyed by the user seed, counter
pinned to the block index). The uniform variate consumed by (shot, edge) is
therefore a pure function of (seed, shot index, edge index): results are
bitwise identical whatever the thread count, and the first n rows of an
n'-shot sample (n' > n) equal the n-shot sample.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .codegen import RepCodeSpec, SensorWindow, window_detector_ids
from .errors import DataError
from .model import DEM

_CHUNK = 1 << 12


@dataclass(frozen=True)
class ShotSet:
    """Bit matrices for a batch of shots.

    ``detector_bits`` is (n, D), ``observable_bits`` (n, K), and the optional
    ``final_data_bits`` (n, d) holds the transversal data readout of
    repetition-style experiments (needed to recompute sensor observables).
    Arrays are frozen on construction.
    """

    detector_bits: np.ndarray
    observable_bits: np.ndarray
    final_data_bits: np.ndarray | None = None

    def __post_init__(self) -> None:
        for name in ("detector_bits", "observable_bits", "final_data_bits"):
            arr = getattr(self, name)
            if arr is None:
                continue
            if arr.ndim != 2 or arr.dtype != np.uint8:
                raise ValueError(f"{name} must be a 2-D uint8 array")
            if arr.shape[0] != self.detector_bits.shape[0]:
                raise ValueError("shot counts differ between bit matrices")
            arr.setflags(write=False)

    @property
    def n_shots(self) -> int:
        return self.detector_bits.shape[0]

    @property
    def num_detectors(self) -> int:
        return self.detector_bits.shape[1]

    @property
    def num_observables(self) -> int:
        return self.observable_bits.shape[1]

    @property
    def num_data(self) -> int:
        return 0 if self.final_data_bits is None else self.final_data_bits.shape[1]

    def take(self, rows) -> "ShotSet":
        """A new ShotSet containing the given rows (indices or slice)."""
        data = None if self.final_data_bits is None else self.final_data_bits[rows].copy()
        return ShotSet(
            self.detector_bits[rows].copy(),
            self.observable_bits[rows].copy(),
            data,
        )


def _incidence(dem: DEM) -> np.ndarray:
    """Edge-to-bit incidence as one float32 matrix: detector columns, then
    observable columns, then (if the model carries readout metadata) data
    columns. float32 keeps the per-bit counts exact (they never exceed the
    edge count) while letting one BLAS call produce every bit plane."""
    n_e = len(dem.hyperedges)
    has_data = dem.data_flips is not None and dem.num_data is not None
    n_d, n_k = dem.num_detectors, dem.num_observables
    width = n_d + n_k + (dem.num_data if has_data else 0)
    mat = np.zeros((n_e, width), dtype=np.float32)
    for i, e in enumerate(dem.hyperedges):
        mat[i, list(e.detectors)] = 1.0
        for k in range(n_k):
            if (e.observables >> k) & 1:
                mat[i, n_d + k] = 1.0
    if has_data:
        for i, flips in enumerate(dem.data_flips):
            for q in flips:
                mat[i, n_d + n_k + q] = 1.0
    return mat


def sample_shots(dem: DEM, n: int, seed: int, threads: int = 1) -> ShotSet:
    """Sample ``n`` independent shots from a concrete DEM.

    Each hyperedge fires independently with its probability; a detector bit is
    the XOR of its incident firings, an observable bit the XOR of the firing
    edges' masks, and (when the model carries readout metadata) a final data
    bit the XOR of the firing edges that flip that qubit.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    probs = dem.probabilities().astype(np.float32)
    inc = _incidence(dem)
    has_data = inc.shape[1] > dem.num_detectors + dem.num_observables
    bits = np.empty((n, inc.shape[1]), dtype=np.uint8)
    n_edges = len(dem.hyperedges)

    def fill(chunk: int) -> None:
        lo = chunk * _CHUNK
        hi = min(lo + _CHUNK, n)
        rng = np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, 0, chunk]))
        u = rng.random((hi - lo, n_edges), dtype=np.float32)
        flips = (u < probs).astype(np.float32)
        np.remainder(flips @ inc, 2.0, out=bits[lo:hi], casting="unsafe")

    chunks = range((n + _CHUNK - 1) // _CHUNK)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fill, chunks))
    else:
        for c in chunks:
            fill(c)
    n_d, n_k = dem.num_detectors, dem.num_observables
    det_bits = np.ascontiguousarray(bits[:, :n_d])
    obs_bits = np.ascontiguousarray(bits[:, n_d : n_d + n_k])
    data_bits = np.ascontiguousarray(bits[:, n_d + n_k :]) if has_data else None
    return ShotSet(det_bits, obs_bits, data_bits)


def subsample_sensor_shots(
    target_shots: ShotSet, window: SensorWindow, target_spec: RepCodeSpec
) -> ShotSet:
    """Derive a sensor's shots from target-code shots.

    Keeps the detector columns of measure qubits strictly inside the window
    and recomputes the observable as the parity of the window's final data
    readout (initial data bits are all-zero by convention).
    """
    if target_shots.final_data_bits is None:
        raise DataError("target shots carry no final data readout; cannot subsample sensors")
    d, r = target_spec.distance, target_spec.rounds
    if target_shots.num_detectors != (d - 1) * (r + 1):
        raise DataError(
            f"shot set has {target_shots.num_detectors} detector columns, "
            f"expected {(d - 1) * (r + 1)} for distance {d} rounds {r}"
        )
    if target_shots.num_data != d:
        raise DataError(
            f"shot set has {target_shots.num_data} data columns, expected {d}"
        )
    ids = window_detector_ids(target_spec, window)
    data = target_shots.final_data_bits[:, window.start : window.stop]
    obs = (data.sum(axis=1, dtype=np.int64) % 2).astype(np.uint8)[:, None]
    return ShotSet(target_shots.detector_bits[:, ids].copy(), obs, data.copy())


def _parse_header(line: bytes) -> tuple[int, int, int, int]:
    tokens = line.decode("ascii", errors="replace").split()
    if (
        len(tokens) != 8
        or tokens[0] != "shots"
        or tokens[2] != "dets"
        or tokens[4] != "obs"
        or tokens[6] != "data"
    ):
        raise DataError(f"bad shot-file header: {line!r}")
    try:
        n, d_cols, k_cols, q_cols = (int(tokens[i]) for i in (1, 3, 5, 7))
    except ValueError:
        raise DataError(f"bad shot-file header: {line!r}") from None
    if min(n, d_cols, k_cols, q_cols) < 0:
        raise DataError("negative field in shot-file header")
    return n, d_cols, k_cols, q_cols


def write_shots(path, shots: ShotSet, packed: bool = False) -> None:
    """Write a shot file.

    Header line ``shots <n> dets <D> obs <K> data <d|0>``, then one row per
    shot: D detector bits, K observable bits, and d final-data bits with no
    separators. Text rows use '0'/'1' characters; packed rows hold the same
    bits little-endian within bytes, each row padded to a byte boundary.
    """
    parts = [shots.detector_bits, shots.observable_bits]
    if shots.final_data_bits is not None:
        parts.append(shots.final_data_bits)
    bits = np.hstack(parts)
    n, width = bits.shape
    header = f"shots {n} dets {shots.num_detectors} obs {shots.num_observables} data {shots.num_data}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if packed:
            fh.write(np.packbits(bits, axis=1, bitorder="little").tobytes())
        else:
            buf = np.empty((n, width + 1), dtype=np.uint8)
            buf[:, :width] = bits + ord("0")
            buf[:, width] = ord("\n")
            fh.write(buf.tobytes())


def read_shots(path) -> ShotSet:
    """Read a shot file written by :func:`write_shots` (either encoding)."""
    with open(path, "rb") as fh:
        header = fh.readline()
        payload = fh.read()
    n, d_cols, k_cols, q_cols = _parse_header(header)
    width = d_cols + k_cols + q_cols
    text_size = n * (width + 1)
    packed_row = (width + 7) // 8
    packed_size = n * packed_row
    if len(payload) == text_size:
        rows = np.frombuffer(payload, dtype=np.uint8).reshape(n, width + 1)
        if not np.all(rows[:, width] == ord("\n")):
            raise DataError("malformed text shot rows (missing newline)")
        bits = rows[:, :width] - ord("0")
        if bits.max(initial=0) > 1:
            raise DataError("text shot rows must contain only '0'/'1'")
        bits = bits.astype(np.uint8)
    elif len(payload) == packed_size:
        rows = np.frombuffer(payload, dtype=np.uint8).reshape(n, packed_row)
        bits = np.unpackbits(rows, axis=1, bitorder="little", count=width)
    else:
        raise DataError(
            f"shot payload is {len(payload)} bytes; expected {text_size} (text) "
            f"or {packed_size} (packed)"
        )
    det = np.ascontiguousarray(bits[:, :d_cols])
    obs = np.ascontiguousarray(bits[:, d_cols : d_cols + k_cols])
    data = (
        np.ascontiguousarray(bits[:, d_cols + k_cols :]) if q_cols else None
    )
    return ShotSet(det, obs, data)
