"""Policy-gradient search over hyperedge class probabilities.

A factorized Gaussian policy proposes candidate parameter vectors in log10
probability space. Each sensor scores a candidate with the negative log10 of
its decoded logical error rate, and the policy is updated with a clipped
importance-weighted surrogate. Because a sensor's reward depends only on the
parameters its template binds, importance ratios are restricted per sensor to
the supported columns, which keeps the estimator usable for several gradient
steps on one evaluated batch.

All gradients are closed-form (Gaussian score functions), so no automatic
differentiation framework is needed.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .codegen import RepCodeSpec, SensorSuite
from .decode import (
    build_matching_graph,
    count_failures_many,
    ler_estimate,
    tabulate_shots,
)
from .errors import ConfigError, DataError, NumericalError
from .model import (
    PROB_CLAMP_HI,
    PROB_CLAMP_LO,
    DetectorErrorModel,
    Hyperedge,
    Parametrization,
    cosine_similarity,
    format_g17,
)
from .sampler import ShotSet, subsample_sensor_shots

SIGMA_MIN = 1e-6
SIGMA_MAX = 10.0
_LOG_SIGMA_MIN = math.log(SIGMA_MIN)
_LOG_SIGMA_MAX = math.log(SIGMA_MAX)
_RATIO_CLAMP = 30.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8

HISTORY_COLUMNS = ("epoch", "mean_reward", "min_reward", "max_reward", "cos_to_seed", "mean_sigma")


@dataclass
class Policy:
    """Independent Gaussians over each parameter, in log10 probability space."""

    mu: np.ndarray
    log_sigma: np.ndarray

    def __post_init__(self) -> None:
        self.mu = np.array(self.mu, dtype=np.float64)
        self.log_sigma = np.array(self.log_sigma, dtype=np.float64)
        if self.mu.ndim != 1 or self.mu.shape != self.log_sigma.shape:
            raise ValueError("mu and log_sigma must be 1-d and the same length")
        if not (np.isfinite(self.mu).all() and np.isfinite(self.log_sigma).all()):
            raise ValueError("policy parameters must be finite")
        self.clamp()

    @property
    def num_params(self) -> int:
        return self.mu.shape[0]

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma)

    def clamp(self) -> None:
        """Keep sigma inside its legal band after an update."""
        np.clip(self.log_sigma, _LOG_SIGMA_MIN, _LOG_SIGMA_MAX, out=self.log_sigma)

    def copy(self) -> "Policy":
        return Policy(self.mu.copy(), self.log_sigma.copy())


def make_policy(seed_theta: np.ndarray, init_sigma: float) -> Policy:
    seed_theta = np.asarray(seed_theta, dtype=np.float64)
    if init_sigma <= 0:
        raise ConfigError(f"init_sigma must be positive, got {init_sigma}")
    return Policy(seed_theta.copy(), np.full(seed_theta.shape, math.log(init_sigma)))


@dataclass
class Baseline:
    """One learned reward offset per sensor."""

    b: np.ndarray

    def __post_init__(self) -> None:
        self.b = np.array(self.b, dtype=np.float64)
        if self.b.ndim != 1 or not np.isfinite(self.b).all():
            raise ValueError("baseline must be a finite 1-d vector")

    def copy(self) -> "Baseline":
        return Baseline(self.b.copy())


@dataclass(frozen=True)
class EpochBatch:
    """One epoch's candidates, the policy that produced them, and their rewards."""

    candidates: np.ndarray
    collection_mu: np.ndarray
    collection_log_sigma: np.ndarray
    rewards: np.ndarray

    def __post_init__(self) -> None:
        b, p = self.candidates.shape
        if self.collection_mu.shape != (p,) or self.collection_log_sigma.shape != (p,):
            raise ValueError("collection policy does not match candidate width")
        if self.rewards.ndim != 2 or self.rewards.shape[0] != b:
            raise ValueError("rewards must have one row per candidate")
        if not np.isfinite(self.rewards).all():
            raise NumericalError("non-finite reward in epoch batch")


@dataclass(frozen=True)
class Hyperparams:
    epochs: int
    batch_size: int = 70
    steps_per_epoch: int = 20
    learning_rate: float = 1e-3
    grad_clip: float = 0.1
    ir_clip: float = 0.15
    value_coeff: float = 200.0
    entropy_coeff: float = 0.0
    init_sigma: float = 0.3
    shots_per_epoch: int = 37500

    def __post_init__(self) -> None:
        positive = {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "steps_per_epoch": self.steps_per_epoch,
            "learning_rate": self.learning_rate,
            "grad_clip": self.grad_clip,
            "ir_clip": self.ir_clip,
            "init_sigma": self.init_sigma,
            "shots_per_epoch": self.shots_per_epoch,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2")
        if self.value_coeff < 0 or self.entropy_coeff < 0:
            raise ConfigError("value_coeff and entropy_coeff must be non-negative")


@dataclass
class AdamState:
    """First/second moment accumulators for (mu, log_sigma, baseline)."""

    t: int
    m_mu: np.ndarray
    v_mu: np.ndarray
    m_ls: np.ndarray
    v_ls: np.ndarray
    m_b: np.ndarray
    v_b: np.ndarray

    @classmethod
    def zeros(cls, num_params: int, num_agents: int) -> "AdamState":
        z = lambda n: np.zeros(n, dtype=np.float64)  # noqa: E731
        return cls(0, z(num_params), z(num_params), z(num_params), z(num_params), z(num_agents), z(num_agents))


def sample_policy(policy: Policy, batch_size: int, seed: int) -> np.ndarray:
    """Draw a (batch_size, P) candidate matrix; pure function of the seed."""
    if batch_size < 2:
        raise ValueError(f"batch_size must be at least 2, got {batch_size}")
    rng = np.random.Generator(np.random.Philox(key=seed))
    z = rng.standard_normal((batch_size, policy.num_params))
    return policy.mu[None, :] + policy.sigma[None, :] * z


def _instantiate_bound(dem: DetectorErrorModel, binding: np.ndarray, theta: np.ndarray) -> DetectorErrorModel:
    # Same as model.instantiate, but with the class binding precomputed; the
    # reward loop calls this a few hundred times per epoch.
    probs = np.clip(10.0 ** theta[binding], PROB_CLAMP_LO, PROB_CLAMP_HI)
    edges = tuple(
        Hyperedge(e.detectors, e.observables, float(p))
        for e, p in zip(dem.hyperedges, probs)
    )
    return DetectorErrorModel(
        detectors=dem.detectors,
        hyperedges=edges,
        num_observables=dem.num_observables,
        edge_families=dem.edge_families,
        data_flips=dem.data_flips,
        num_data=dem.num_data,
    )


def compute_rewards(
    candidates: np.ndarray,
    suite: SensorSuite,
    sensor_shots: Sequence[ShotSet],
    threads: int = 1,
) -> np.ndarray:
    """Score every candidate on every sensor: -log10 of the decoded LER.

    ``sensor_shots`` holds one ShotSet per sensor (this epoch's data). Shots
    are tabulated once per sensor and all candidates of a sensor are matched
    in one batch; ``threads`` fans the per-sensor batches out over a pool
    (the batch kernel itself already uses all cores, so this mostly helps
    when sensors are small). Results never depend on the thread count.
    """
    candidates = np.asarray(candidates, dtype=np.float64)
    n_cand = candidates.shape[0]
    n_sensors = suite.num_sensors
    if len(sensor_shots) != n_sensors:
        raise DataError(f"got shots for {len(sensor_shots)} sensors, suite has {n_sensors}")
    tables = [tabulate_shots(s) for s in sensor_shots]
    rewards = np.empty((n_cand, n_sensors), dtype=np.float64)

    def fill(a: int) -> None:
        graphs = [
            build_matching_graph(
                _instantiate_bound(suite.sensors[a], suite.bindings[a], candidates[i])
            )
            for i in range(n_cand)
        ]
        fails = count_failures_many(graphs, tables[a])
        n = sensor_shots[a].n_shots
        for i in range(n_cand):
            rewards[i, a] = -math.log10(ler_estimate(int(fails[i]), n).ler)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fill, range(n_sensors)))
    else:
        for a in range(n_sensors):
            fill(a)
    return rewards


def advantages(rewards: np.ndarray, baseline: Baseline) -> np.ndarray:
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.ndim != 2 or rewards.shape[1] != baseline.b.shape[0]:
        raise ValueError("rewards and baseline disagree on the number of agents")
    return rewards - baseline.b[None, :]


def _log_ratio_sums(policy: Policy, batch: EpochBatch, support: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-(candidate, agent) log importance ratios, before clamping.

    Returns (raw sums, per-parameter standardized residuals under the current
    policy); the latter feeds the analytic gradients.
    """
    sigma = policy.sigma
    z = (batch.candidates - policy.mu[None, :]) / sigma[None, :]
    col_sigma = np.exp(batch.collection_log_sigma)
    z_col = (batch.candidates - batch.collection_mu[None, :]) / col_sigma[None, :]
    log_n = -0.5 * z * z - policy.log_sigma[None, :]
    log_n_col = -0.5 * z_col * z_col - batch.collection_log_sigma[None, :]
    raw = (log_n - log_n_col) @ support.T.astype(np.float64)
    return raw, z


def importance_ratios(policy: Policy, batch: EpochBatch, support: np.ndarray) -> np.ndarray:
    """chi[i, a] = density ratio of candidate i under the current vs collection
    policy, marginalized to agent a's supported parameters."""
    raw, _ = _log_ratio_sums(policy, batch, support)
    return np.exp(np.clip(raw, -_RATIO_CLAMP, _RATIO_CLAMP))


@dataclass(frozen=True)
class LossReport:
    """Loss values plus total-objective gradients for one inner step.

    ``grad_b`` is the gradient of value_coeff times the baseline loss only:
    the baseline enters the policy surrogate as a variance-reduction constant
    and is not differentiated through it.
    """

    policy_loss: float
    baseline_loss: float
    entropy_loss: float
    total_loss: float
    grad_mu: np.ndarray
    grad_log_sigma: np.ndarray
    grad_b: np.ndarray


def _check_finite(grad: np.ndarray, name: str) -> None:
    bad = np.flatnonzero(~np.isfinite(grad))
    if bad.size:
        raise NumericalError(f"non-finite gradient component {name}[{int(bad[0])}]")


def losses(
    policy: Policy,
    baseline: Baseline,
    batch: EpochBatch,
    support: np.ndarray,
    hp: Hyperparams,
) -> LossReport:
    """Clipped-surrogate policy loss, baseline loss, entropy term, gradients.

    The surrogate per (candidate, agent) is min(chi * alpha, clip(chi) * alpha);
    gradient flows through chi only where the unclipped branch is active and
    the log-ratio sum is inside its overflow clamp.
    """
    n_cand, n_params = batch.candidates.shape
    raw, z = _log_ratio_sums(policy, batch, support)
    chi = np.exp(np.clip(raw, -_RATIO_CLAMP, _RATIO_CLAMP))
    alpha = advantages(batch.rewards, baseline)

    unclipped = chi * alpha
    clipped = np.clip(chi, 1.0 - hp.ir_clip, 1.0 + hp.ir_clip) * alpha
    surrogate = np.minimum(unclipped, clipped)
    policy_loss = float(-surrogate.sum(axis=1).mean())

    active = (unclipped <= clipped) & (np.abs(raw) < _RATIO_CLAMP)
    weight = np.where(active, alpha * chi, 0.0)
    per_param = weight @ support.astype(np.float64)
    sigma = policy.sigma
    grad_mu = -(per_param * (z / sigma[None, :])).sum(axis=0) / n_cand
    grad_ls = -(per_param * (z * z - 1.0)).sum(axis=0) / n_cand

    baseline_loss = float((alpha * alpha).sum(axis=1).mean())
    grad_b = hp.value_coeff * (-2.0 * alpha.mean(axis=0))

    entropy_loss = float(-(n_params * (_HALF_LOG_2PI + 0.5) + policy.log_sigma.sum()))
    grad_ls = grad_ls - hp.entropy_coeff

    total = policy_loss + hp.value_coeff * baseline_loss + hp.entropy_coeff * entropy_loss
    _check_finite(grad_mu, "mu")
    _check_finite(grad_ls, "log_sigma")
    _check_finite(grad_b, "b")
    return LossReport(policy_loss, baseline_loss, entropy_loss, total, grad_mu, grad_ls, grad_b)


def _adam_apply(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray, t: int, hp: Hyperparams) -> None:
    g = np.clip(grad, -hp.grad_clip, hp.grad_clip)
    m *= _ADAM_BETA1
    m += (1.0 - _ADAM_BETA1) * g
    v *= _ADAM_BETA2
    v += (1.0 - _ADAM_BETA2) * g * g
    m_hat = m / (1.0 - _ADAM_BETA1**t)
    v_hat = v / (1.0 - _ADAM_BETA2**t)
    param -= hp.learning_rate * m_hat / (np.sqrt(v_hat) + _ADAM_EPS)


def step(policy: Policy, baseline: Baseline, adam: AdamState, report: LossReport, hp: Hyperparams) -> None:
    """One clipped-gradient Adam update of policy and baseline, in place."""
    adam.t += 1
    _adam_apply(policy.mu, report.grad_mu, adam.m_mu, adam.v_mu, adam.t, hp)
    _adam_apply(policy.log_sigma, report.grad_log_sigma, adam.m_ls, adam.v_ls, adam.t, hp)
    _adam_apply(baseline.b, report.grad_b, adam.m_b, adam.v_b, adam.t, hp)
    policy.clamp()


# ---------------------------------------------------------------------------
# Reward sources


class QuadraticRewardSource:
    """Analytic stand-in reward with a known optimum.

    R[i, a] = -sum_j S[a, j] * (candidate[i, j] - optimum[j])**2, so the
    expected reward of a policy has the closed form
    -sum_j S[a, j] * ((mu_j - optimum_j)**2 + sigma_j**2).
    """

    def __init__(self, optimum: np.ndarray, support: np.ndarray) -> None:
        self.optimum = np.asarray(optimum, dtype=np.float64)
        self.support = np.asarray(support, dtype=np.uint8)
        if self.support.ndim != 2 or self.support.shape[1] != self.optimum.shape[0]:
            raise ValueError("support must be (A, P) with P matching the optimum")

    def epoch_rewards(self, candidates: np.ndarray, epoch: int) -> np.ndarray:
        sq = (np.asarray(candidates, dtype=np.float64) - self.optimum[None, :]) ** 2
        return -(sq @ self.support.T.astype(np.float64))

    def expected_reward(self, policy: Policy) -> np.ndarray:
        """Per-agent expectation of the reward under the policy."""
        per_param = (policy.mu - self.optimum) ** 2 + policy.sigma**2
        return -(self.support.astype(np.float64) @ per_param)


class SensorRewardSource:
    """Scores candidates on fresh per-epoch subsamples of a target shot pool.

    Each epoch draws ``shots_per_epoch`` rows without replacement from the
    pool (reshuffling once the pool is exhausted), windows them into each
    sensor, and decodes. Prior epoch draws are discarded.
    """

    def __init__(
        self,
        suite: SensorSuite,
        spec: RepCodeSpec,
        pool: ShotSet,
        shots_per_epoch: int,
        seed: int,
        threads: int = 1,
    ) -> None:
        if shots_per_epoch > pool.n_shots:
            raise ConfigError(
                f"shots_per_epoch {shots_per_epoch} exceeds the training pool ({pool.n_shots} shots)"
            )
        self.suite = suite
        self.spec = spec
        self.pool = pool
        self.shots_per_epoch = int(shots_per_epoch)
        self.threads = threads
        self._rng = np.random.Generator(np.random.Philox(key=seed))
        self._order = self._rng.permutation(pool.n_shots)
        self._cursor = 0

    def _draw_rows(self) -> np.ndarray:
        n = self.pool.n_shots
        need = self.shots_per_epoch
        if self._cursor + need <= n:
            rows = self._order[self._cursor : self._cursor + need]
            self._cursor += need
            return rows
        head = self._order[self._cursor :]
        self._order = self._rng.permutation(n)
        self._cursor = need - head.shape[0]
        return np.concatenate([head, self._order[: self._cursor]])

    def epoch_rewards(self, candidates: np.ndarray, epoch: int) -> np.ndarray:
        subset = self.pool.take(self._draw_rows())
        per_sensor = [
            subsample_sensor_shots(subset, window, self.spec) for window in self.suite.windows
        ]
        return compute_rewards(candidates, self.suite, per_sensor, threads=self.threads)


# ---------------------------------------------------------------------------
# Training loop


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    mean_reward: float
    min_reward: float
    max_reward: float
    cos_to_seed: float
    mean_sigma: float


@dataclass(frozen=True)
class TrainResult:
    mu: np.ndarray
    policy: Policy
    baseline: Baseline
    records: tuple[EpochRecord, ...]
    seed_mu: np.ndarray


def train(
    source,
    support: np.ndarray,
    seed_theta: np.ndarray,
    hp: Hyperparams,
    seed: int,
) -> TrainResult:
    """Run the full epoch loop and return the trained mean vector.

    Per epoch: freeze the collection policy, sample a candidate batch, score
    it once, then take ``steps_per_epoch`` surrogate gradient steps on that
    fixed batch before discarding it. The baseline starts at the first
    epoch's per-sensor reward means and is updated by its own gradient every
    inner step.
    """
    support = np.asarray(support, dtype=np.uint8)
    seed_theta = np.asarray(seed_theta, dtype=np.float64)
    if support.ndim != 2 or support.shape[1] != seed_theta.shape[0]:
        raise ConfigError("support matrix and seed theta disagree on the parameter count")
    policy = make_policy(seed_theta, hp.init_sigma)
    seed_mu = policy.mu.copy()
    baseline = Baseline(np.zeros(support.shape[0]))
    adam = AdamState.zeros(policy.num_params, support.shape[0])
    epoch_seeds = np.random.Generator(np.random.Philox(key=seed)).integers(
        0, 2**63, size=hp.epochs
    )

    records: list[EpochRecord] = []
    for epoch in range(hp.epochs):
        collection_mu = policy.mu.copy()
        collection_ls = policy.log_sigma.copy()
        candidates = sample_policy(policy, hp.batch_size, int(epoch_seeds[epoch]))
        rewards = np.asarray(source.epoch_rewards(candidates, epoch), dtype=np.float64)
        if epoch == 0:
            baseline = Baseline(rewards.mean(axis=0))
        batch = EpochBatch(candidates, collection_mu, collection_ls, rewards)
        for _ in range(hp.steps_per_epoch):
            report = losses(policy, baseline, batch, support, hp)
            step(policy, baseline, adam, report, hp)
        records.append(
            EpochRecord(
                epoch,
                float(rewards.mean()),
                float(rewards.min()),
                float(rewards.max()),
                cosine_similarity(policy.mu, seed_mu),
                float(policy.sigma.mean()),
            )
        )
    return TrainResult(policy.mu.copy(), policy, baseline, tuple(records), seed_mu)


def epochs_to_fraction(records: Sequence[EpochRecord], fraction: float = 0.95) -> int:
    """First epoch whose mean reward reaches ``fraction`` of the final one."""
    if not records:
        raise ValueError("empty training history")
    target = fraction * records[-1].mean_reward
    for rec in records:
        if rec.mean_reward >= target:
            return rec.epoch
    return records[-1].epoch


def history_csv(records: Sequence[EpochRecord]) -> str:
    lines = [",".join(HISTORY_COLUMNS)]
    for rec in records:
        lines.append(
            ",".join(
                [
                    str(rec.epoch),
                    format_g17(rec.mean_reward),
                    format_g17(rec.min_reward),
                    format_g17(rec.max_reward),
                    format_g17(rec.cos_to_seed),
                    format_g17(rec.mean_sigma),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def write_history(path, records: Sequence[EpochRecord]) -> None:
    Path(path).write_text(history_csv(records))


# ---------------------------------------------------------------------------
# Parameter vector files


def write_params(path, parametrization: Parametrization, theta: np.ndarray) -> None:
    """One line per parameter: index, class key, value at full precision."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (parametrization.num_params,):
        raise DataError(
            f"parameter vector has shape {theta.shape}, expected ({parametrization.num_params},)"
        )
    lines = [
        f"param {i} {key.serialize()} {format_g17(float(theta[i]))}"
        for i, key in enumerate(parametrization.classes)
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def read_params(path, parametrization: Parametrization) -> np.ndarray:
    """Read a parameter file back, checking indices and class keys."""
    theta = np.full(parametrization.num_params, np.nan)
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 4 or parts[0] != "param":
            raise DataError(f"{path}:{lineno}: expected 'param <index> <class> <value>'")
        try:
            idx = int(parts[1])
            value = float(parts[3])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
        if not 0 <= idx < parametrization.num_params:
            raise DataError(f"{path}:{lineno}: parameter index {idx} out of range")
        if parts[2] != parametrization.classes[idx].serialize():
            raise DataError(
                f"{path}:{lineno}: class key mismatch for parameter {idx}: "
                f"file has {parts[2]}, model has {parametrization.classes[idx].serialize()}"
            )
        if not np.isnan(theta[idx]):
            raise DataError(f"{path}:{lineno}: duplicate parameter index {idx}")
        if not np.isfinite(value):
            raise DataError(f"{path}:{lineno}: non-finite parameter value")
        theta[idx] = value
    missing = np.flatnonzero(np.isnan(theta))
    if missing.size:
        raise DataError(f"{path}: missing parameter index {int(missing[0])}")
    return theta
