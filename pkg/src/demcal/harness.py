"""Experiment orchestration: flat-file configs, pipelines, CSV artifacts.

A run directory is populated by four commands that only communicate through
files:

* ``gen``   writes the planted model, the structural template, and the
  train/test shot split;
* ``fit``   produces a correlation-fitted parameter vector from train shots;
* ``train`` produces a policy-gradient-trained parameter vector and history;
* ``eval``  scores parameter vectors (plus the flat prior and the planted
  truth) on the held-out test shots, paired shot-for-shot.

Every random quantity is tied to an explicit seed from the config; nothing
reads the clock. Floats in CSVs carry 17 significant digits so reruns can be
compared byte for byte.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import __version__
from .codegen import (
    PlantedModel,
    RepCodeSpec,
    SensorSuite,
    build_sensors,
    check_coverage,
    planted_model,
    repetition_dem,
    restrict_to_window,
    uninformative_prior,
)
from .decode import (
    LerEstimate,
    build_matching_graph,
    count_failures,
    decode_shots,
    fit_ler_exponential,
    ler_estimate,
    scaling_flip_rate,
    tabulate_shots,
)
from .errors import ConfigError, DataError
from .fitprior import FitResult, fit_suite
from .model import (
    ClassKey,
    DetectorErrorModel,
    build_parametrization,
    class_kind,
    format_g17,
    instantiate,
    read_dem,
    write_dem,
)
from .rlopt import (
    Hyperparams,
    QuadraticRewardSource,
    SensorRewardSource,
    TrainResult,
    read_params,
    train,
    write_history,
    write_params,
)
from .sampler import ShotSet, read_shots, sample_shots, subsample_sensor_shots

_FLIP_RATE_SHOTS = 20000

PLANTED_DEM = "planted.dem"
TEMPLATE_DEM = "template.dem"
TRAIN_SHOTS = "train.shots"
TEST_SHOTS = "test.shots"
FITTED_PARAMS = "fitted.params"
TRAINED_PARAMS = "trained.params"
HISTORY_CSV = "history.csv"
COMPARISON_CSV = "comparison.csv"
SENSORS_CSV = "sensors.csv"
HIST_CSV = "hist.csv"
SWEEP_CSV = "sweep.csv"
USED_HASHES = "used_hashes.txt"
CONFIG_ECHO = "config_echo.txt"


@dataclass(frozen=True)
class RunConfig:
    distance: int
    rounds: int
    sensor_size: int
    planted_seed: int
    shot_seed: int
    train_seed: int
    pool_seed: int
    out_dir: str
    sensor_stride: int | None = None
    sensor_count: int | None = None
    planted_profile: str = "scaled"
    planted_scale: float = 10.0
    planted_spread: float = 0.5
    planted_outliers: int = 5
    planted_factor: float = 10.0
    shots_train: int = 50000
    shots_test: int = 150000
    prior_method: str = "correlation"
    prior_file: str | None = None
    epochs: int = 50
    batch_size: int = 70
    steps_per_epoch: int = 20
    learning_rate: float = 1e-3
    grad_clip: float = 0.1
    ir_clip: float = 0.15
    value_coeff: float = 200.0
    entropy_coeff: float = 0.0
    init_sigma: float = 0.3
    shots_per_epoch: int = 37500
    threads: int = 1

    def __post_init__(self) -> None:
        if (self.sensor_stride is None) == (self.sensor_count is None):
            raise ConfigError("set exactly one of sensor_stride / sensor_count")
        if self.prior_method not in {"uninformative", "correlation", "file"}:
            raise ConfigError(f"unknown prior_method {self.prior_method!r}")
        if self.prior_method == "file" and not self.prior_file:
            raise ConfigError("prior_method = file requires prior_file")
        if self.shots_train <= 0 or self.shots_test <= 0:
            raise ConfigError("shot counts must be positive")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.planted_profile not in {"scaled", "device"}:
            raise ConfigError(f"unknown planted_profile {self.planted_profile!r}")
        if self.planted_scale <= 0 or self.planted_factor <= 0:
            raise ConfigError("planted_scale and planted_factor must be positive")
        if self.planted_spread < 0 or self.planted_outliers < 0:
            raise ConfigError("planted_spread and planted_outliers must be non-negative")
        self.spec()  # validates distance/rounds
        self.hyperparams()

    def spec(self) -> RepCodeSpec:
        try:
            return RepCodeSpec(self.distance, self.rounds)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def hyperparams(self) -> Hyperparams:
        return Hyperparams(
            epochs=self.epochs,
            batch_size=self.batch_size,
            steps_per_epoch=self.steps_per_epoch,
            learning_rate=self.learning_rate,
            grad_clip=self.grad_clip,
            ir_clip=self.ir_clip,
            value_coeff=self.value_coeff,
            entropy_coeff=self.entropy_coeff,
            init_sigma=self.init_sigma,
            shots_per_epoch=self.shots_per_epoch,
        )

    def out(self) -> Path:
        return Path(self.out_dir)


_INT_KEYS = {
    "distance",
    "rounds",
    "sensor_size",
    "sensor_stride",
    "sensor_count",
    "planted_outliers",
    "planted_seed",
    "shot_seed",
    "train_seed",
    "pool_seed",
    "shots_train",
    "shots_test",
    "epochs",
    "batch_size",
    "steps_per_epoch",
    "shots_per_epoch",
    "threads",
}
_FLOAT_KEYS = {
    "planted_scale",
    "planted_spread",
    "planted_factor",
    "learning_rate",
    "grad_clip",
    "ir_clip",
    "value_coeff",
    "entropy_coeff",
    "init_sigma",
}
_STR_KEYS = {"planted_profile", "prior_method", "prior_file", "out_dir"}
_ALL_KEYS = _INT_KEYS | _FLOAT_KEYS | _STR_KEYS


def parse_config_text(text: str) -> dict:
    """Flat ``key = value`` lines; '#' starts a comment."""
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in _ALL_KEYS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate config key {key!r}")
        try:
            if key in _INT_KEYS:
                values[key] = int(val)
            elif key in _FLOAT_KEYS:
                values[key] = float(val)
            else:
                values[key] = val
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
    return values


def load_config(path, overrides: Mapping[str, str] | None = None) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    values = parse_config_text(text)
    for key, val in (overrides or {}).items():
        if key not in _ALL_KEYS:
            raise ConfigError(f"unknown config key {key!r} in override")
        if key in _INT_KEYS:
            values[key] = int(val)
        elif key in _FLOAT_KEYS:
            values[key] = float(val)
        else:
            values[key] = val
    names = {f.name for f in fields(RunConfig)}
    missing = sorted(
        name
        for name in ("distance", "rounds", "sensor_size", "planted_seed", "shot_seed", "train_seed", "pool_seed", "out_dir")
        if name not in values
    )
    if missing:
        raise ConfigError(f"missing required config key(s): {', '.join(missing)}")
    try:
        return RunConfig(**{k: v for k, v in values.items() if k in names})
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def config_echo(cfg: RunConfig) -> str:
    """The effective configuration, defaults included, one key per line."""
    lines = []
    for f in sorted(fields(RunConfig), key=lambda f: f.name):
        value = getattr(cfg, f.name)
        if value is None:
            continue
        if isinstance(value, float):
            value = format_g17(value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Shared construction helpers


def build_problem(cfg: RunConfig) -> tuple[RepCodeSpec, DetectorErrorModel, SensorSuite]:
    spec = cfg.spec()
    target = repetition_dem(spec)
    try:
        suite = build_sensors(
            target, spec, cfg.sensor_size, stride=cfg.sensor_stride, count=cfg.sensor_count
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return spec, target, suite


# Per-kind base rates for the "device" planted profile: measurement-type
# mechanisms dominate data-type ones, as on real hardware, so a flat prior
# misranks matchings and calibration has something substantial to recover.
_DEVICE_RATES = {"time": 1.6e-2, "space": 5e-4, "boundary": 2e-3}


def build_truth(cfg: RunConfig, spec: RepCodeSpec | None = None) -> PlantedModel:
    spec = spec or cfg.spec()
    target = repetition_dem(spec)
    target_par = build_parametrization([target])
    if cfg.planted_profile == "device":
        base = np.array(
            [math.log10(_DEVICE_RATES[class_kind(key)]) for key in target_par.classes]
        )
        base += math.log10(cfg.planted_scale)
    else:
        base = uninformative_prior([target], target_par) + math.log10(cfg.planted_scale)
    return planted_model(
        spec, base, cfg.planted_spread, cfg.planted_outliers, cfg.planted_factor, cfg.planted_seed
    )


def _read_shot_file(path: Path) -> ShotSet:
    if not path.exists():
        raise ConfigError(f"{path} not found (run 'gen' first)")
    return read_shots(path)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _record_used(out: Path, path: Path) -> None:
    ledger = out / USED_HASHES
    digest = _sha256(path)
    lines = ledger.read_text().splitlines() if ledger.exists() else []
    if not any(line.split()[0] == digest for line in lines if line.strip()):
        lines.append(f"{digest} {path.name}")
        ledger.write_text("\n".join(lines) + "\n")


def _assert_not_used(out: Path, path: Path) -> None:
    ledger = out / USED_HASHES
    if not ledger.exists():
        return
    digest = _sha256(path)
    for line in ledger.read_text().splitlines():
        if line.strip() and line.split()[0] == digest:
            raise DataError(
                f"{path.name} has the same content as a file already consumed for "
                f"training ({line.split()[1]}); refusing to evaluate on it"
            )


# ---------------------------------------------------------------------------
# Commands


def cmd_gen(cfg: RunConfig) -> dict:
    """Write the planted model, template, shot split, and config echo."""
    spec, target, suite = build_problem(cfg)
    out = cfg.out()
    out.mkdir(parents=True, exist_ok=True)
    truth = build_truth(cfg, spec)
    target_par = truth.parametrization

    total = cfg.shots_train + cfg.shots_test
    shots = sample_shots(truth.dem, total, seed=cfg.shot_seed, threads=cfg.threads)
    train_shots = shots.take(np.arange(cfg.shots_train))
    test_shots = shots.take(np.arange(cfg.shots_train, total))

    write_dem(out / PLANTED_DEM, truth.dem)
    template_concrete = instantiate(target, target_par, uninformative_prior([target], target_par))
    write_dem(out / TEMPLATE_DEM, template_concrete)
    from .sampler import write_shots

    write_shots(out / TRAIN_SHOTS, train_shots, packed=True)
    write_shots(out / TEST_SHOTS, test_shots, packed=True)
    (out / CONFIG_ECHO).write_text(config_echo(cfg))
    return {
        "planted": out / PLANTED_DEM,
        "template": out / TEMPLATE_DEM,
        "train": out / TRAIN_SHOTS,
        "test": out / TEST_SHOTS,
        "config": out / CONFIG_ECHO,
    }


def cmd_fit(cfg: RunConfig) -> FitResult:
    """Correlation-fit the suite parameters from the training shots."""
    spec, target, suite = build_problem(cfg)
    out = cfg.out()
    pool = _read_shot_file(out / TRAIN_SHOTS)
    if pool.n_shots == 0:
        raise DataError("training shot file is empty")
    sensor_shots = [subsample_sensor_shots(pool, w, spec) for w in suite.windows]
    result = fit_suite(suite, sensor_shots)
    write_params(out / FITTED_PARAMS, suite.parametrization, result.theta)
    diag_lines = [
        f"sensor={d.sensor} edge={d.edge} reason={d.reason} raw={format_g17(d.raw_value)}"
        for d in result.diagnostics
    ]
    (out / "fit_diagnostics.txt").write_text("\n".join(diag_lines) + "\n" if diag_lines else "")
    _record_used(out, out / TRAIN_SHOTS)
    return result


def seed_prior(cfg: RunConfig, suite: SensorSuite) -> np.ndarray:
    """The starting parameter vector chosen by ``prior_method``."""
    par = suite.parametrization
    if cfg.prior_method == "uninformative":
        return uninformative_prior(suite.sensors, par)
    if cfg.prior_method == "correlation":
        path = cfg.out() / FITTED_PARAMS
        if not path.exists():
            raise ConfigError(f"{path} not found (run 'fit' first or change prior_method)")
        return read_params(path, par)
    path = Path(cfg.prior_file)
    if not path.exists():
        raise ConfigError(f"prior_file {path} not found")
    return read_params(path, par)


def cmd_train(cfg: RunConfig, toy: bool = False) -> TrainResult:
    """Train the policy and write the resulting parameters and history.

    With ``toy`` the sensor rewards are replaced by an analytic quadratic
    with a known optimum 0.4 below the seed; useful as an install smoke test
    since it needs no shot files.
    """
    spec, target, suite = build_problem(cfg)
    out = cfg.out()
    out.mkdir(parents=True, exist_ok=True)
    hp = cfg.hyperparams()
    theta0 = seed_prior(cfg, suite)
    support = suite.parametrization.sensor_support
    if toy:
        source = QuadraticRewardSource(theta0 - 0.4, support)
    else:
        pool = _read_shot_file(out / TRAIN_SHOTS)
        source = SensorRewardSource(
            suite, spec, pool, hp.shots_per_epoch, cfg.pool_seed, threads=cfg.threads
        )
        _record_used(out, out / TRAIN_SHOTS)
    result = train(source, support, theta0, hp, cfg.train_seed)
    write_params(out / TRAINED_PARAMS, suite.parametrization, result.mu)
    write_history(out / HISTORY_CSV, result.records)
    return result


@dataclass(frozen=True)
class RunResult:
    """Everything eval produces, paired on one held-out test shot set."""

    estimates: dict[str, LerEstimate]
    per_sensor: dict[str, tuple[LerEstimate, ...]]
    flip_rates: dict[str, float]
    vectors: dict[str, np.ndarray]
    config_echo: str
    version: str


def _eval_priors(cfg: RunConfig, param_files: Sequence) -> list[tuple[str, DetectorErrorModel, np.ndarray | None]]:
    spec, target, suite = build_problem(cfg)
    par = suite.parametrization
    priors: list[tuple[str, DetectorErrorModel, np.ndarray | None]] = []
    flat = uninformative_prior(suite.sensors, par)
    priors.append(("uninformative", instantiate(target, par, flat), flat))
    for path in param_files:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"parameter file {path} not found")
        theta = read_params(path, par)
        name = path.stem
        if any(n == name for n, _, _ in priors):
            name = f"{name}#{sum(n.startswith(name) for n, _, _ in priors) + 1}"
        priors.append((name, instantiate(target, par, theta), theta))
    truth = build_truth(cfg, spec)
    priors.append(("truth", truth.dem, None))
    return priors


def cmd_eval(cfg: RunConfig, param_files: Sequence = ()) -> RunResult:
    """Score priors on the test shots: paired target-level LER, per-sensor
    breakdown, integrated-histogram data, and a weight-scaling diagnostic."""
    spec, target, suite = build_problem(cfg)
    out = cfg.out()
    test_path = out / TEST_SHOTS
    test = _read_shot_file(test_path)
    _assert_not_used(out, test_path)
    priors = _eval_priors(cfg, param_files)

    estimates: dict[str, LerEstimate] = {}
    flip_rates: dict[str, float] = {}
    vectors: dict[str, np.ndarray] = {}
    for name, dem, theta in priors:
        graph = build_matching_graph(dem)
        _, est = decode_shots(graph, test)
        estimates[name] = est
        probe = test.detector_bits[:_FLIP_RATE_SHOTS]
        flip_rates[name] = scaling_flip_rate(dem, probe, 2.0)
        if theta is not None:
            vectors[name] = theta

    base_ler = estimates["uninformative"].ler
    rows = ["prior,failures,shots,ler,ci_low,ci_high,rel_improvement_pct,scale2_flip_rate"]
    for name, _, _ in priors:
        est = estimates[name]
        rel = 100.0 * (base_ler - est.ler) / base_ler
        rows.append(
            ",".join(
                [
                    name,
                    str(est.failures),
                    str(est.shots),
                    format_g17(est.ler),
                    format_g17(est.ci_low),
                    format_g17(est.ci_high),
                    format_g17(rel),
                    format_g17(flip_rates[name]),
                ]
            )
        )
    (out / COMPARISON_CSV).write_text("\n".join(rows) + "\n")

    per_sensor: dict[str, list[LerEstimate]] = {name: [] for name, _, _ in priors}
    sensor_rows = ["sensor,prior,failures,shots,ler,ci_low,ci_high"]
    for a, window in enumerate(suite.windows):
        sub = subsample_sensor_shots(test, window, spec)
        table = tabulate_shots(sub)
        for name, dem, theta in priors:
            if theta is not None:
                sensor_dem = instantiate(suite.sensors[a], suite.parametrization, theta)
            else:
                sensor_dem = restrict_to_window(dem, window)
            fails = count_failures(build_matching_graph(sensor_dem), table)
            est = ler_estimate(fails, sub.n_shots)
            per_sensor[name].append(est)
            sensor_rows.append(
                ",".join(
                    [
                        str(a),
                        name,
                        str(est.failures),
                        str(est.shots),
                        format_g17(est.ler),
                        format_g17(est.ci_low),
                        format_g17(est.ci_high),
                    ]
                )
            )
    (out / SENSORS_CSV).write_text("\n".join(sensor_rows) + "\n")

    hist_rows = ["prior,ler,cum_fraction"]
    for name, _, _ in priors:
        lers = sorted(e.ler for e in per_sensor[name])
        for k, ler in enumerate(lers, start=1):
            hist_rows.append(f"{name},{format_g17(ler)},{format_g17(k / len(lers))}")
    (out / HIST_CSV).write_text("\n".join(hist_rows) + "\n")

    return RunResult(
        estimates=estimates,
        per_sensor={k: tuple(v) for k, v in per_sensor.items()},
        flip_rates=flip_rates,
        vectors=vectors,
        config_echo=config_echo(cfg),
        version=__version__,
    )


@dataclass(frozen=True)
class SweepPoint:
    rounds: int
    estimate: LerEstimate
    eps_direct: float


@dataclass(frozen=True)
class SweepResult:
    points: tuple[SweepPoint, ...]
    eps_fit: float


def _per_round_seed(shot_seed: int, rounds: int) -> int:
    rng = np.random.Generator(np.random.Philox(key=[shot_seed, rounds]))
    return int(rng.integers(0, 2**63))


def cmd_sweep_cycles(cfg: RunConfig, r_values: Sequence[int], params_file) -> SweepResult:
    """Extrapolate learned parameters across round counts.

    Instantiates the parameter vector at each requested r, samples fresh
    shots from the planted model at that r (the per-class truth is round
    count independent), decodes, and fits the per-cycle error rate to the
    points excluding the training round count.
    """
    if len(set(r_values)) < 2:
        raise ConfigError("sweep needs at least two distinct round counts")
    spec, target, suite = build_problem(cfg)
    par = suite.parametrization
    params_file = Path(params_file)
    if not params_file.exists():
        raise ConfigError(f"parameter file {params_file} not found")
    theta = read_params(params_file, par)

    points: list[SweepPoint] = []
    for r in r_values:
        spec_r = RepCodeSpec(cfg.distance, r)
        truth_r = build_truth(cfg, spec_r)
        shots = sample_shots(
            truth_r.dem, cfg.shots_test, seed=_per_round_seed(cfg.shot_seed, r), threads=cfg.threads
        )
        dem_r = instantiate(repetition_dem(spec_r), par, theta)
        _, est = decode_shots(build_matching_graph(dem_r), shots)
        if not 0.0 < est.ler < 0.5:
            raise DataError(f"r={r}: LER {est.ler} unusable for a decay fit")
        eps_direct = (1.0 - (1.0 - 2.0 * est.ler) ** (1.0 / r)) / 2.0
        points.append(SweepPoint(r, est, eps_direct))

    fit_points = [(p.rounds, p.estimate) for p in points if p.rounds != cfg.rounds]
    if len({r for r, _ in fit_points}) < 2:
        raise ConfigError("sweep needs at least two round counts besides the training one")
    eps_fit = fit_ler_exponential(fit_points)

    out = cfg.out()
    out.mkdir(parents=True, exist_ok=True)
    rows = ["rounds,failures,shots,ler,ci_low,ci_high,eps_direct,eps_fit"]
    for p in points:
        rows.append(
            ",".join(
                [
                    str(p.rounds),
                    str(p.estimate.failures),
                    str(p.estimate.shots),
                    format_g17(p.estimate.ler),
                    format_g17(p.estimate.ci_low),
                    format_g17(p.estimate.ci_high),
                    format_g17(p.eps_direct),
                    format_g17(eps_fit),
                ]
            )
        )
    (out / SWEEP_CSV).write_text("\n".join(rows) + "\n")
    return SweepResult(tuple(points), eps_fit)


def cmd_check_coverage(cfg: RunConfig) -> list[ClassKey]:
    """Target classes that no sensor binds (empty means full coverage)."""
    spec, target, suite = build_problem(cfg)
    return check_coverage(target, suite.parametrization)


def cmd_decode(dem_path, shots_path, predictions_path=None) -> LerEstimate:
    """Decode one shot file against one model file."""
    dem = read_dem(dem_path)
    shots = read_shots(shots_path)
    graph = build_matching_graph(dem)
    preds, est = decode_shots(graph, shots)
    if predictions_path is not None:
        bits = decode_bits_text(graph, shots)
        Path(predictions_path).write_text(bits)
    return est


def decode_bits_text(graph, shots: ShotSet) -> str:
    from .decode import decode_bits

    preds = decode_bits(graph, shots.detector_bits)
    rows = preds + ord("0")
    out = np.empty((preds.shape[0], preds.shape[1] + 1), dtype=np.uint8)
    out[:, :-1] = rows
    out[:, -1] = ord("\n")
    return out.tobytes().decode("ascii")
