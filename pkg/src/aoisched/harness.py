"""Replications, experiments and the oracle validation suite.

A replication runs the slot loop below for one (config, policy, seed):

1. the world advances by one slot;
2. the policy picks a pair from the scheduler view (the genie also reads
   the world, epsilon-greedy uses the slot's epsilon);
3. the pair's sensor age is delivered;
4. BS ages and the since-scheduled counters are stepped;
5. epsilon-greedy takes an SGD step;
6. the average BS age of the slot is recorded.

World and policy draw from separate streams derived from the seed, so every
policy sees the same update realisation at a given seed.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit
from scipy import integrate

from .bandit import (
    BanditDivergenceError,
    EpsilonGreedyPolicy,
    _select_egreedy,
    _sigmoid,
    _update,
)
from ._validation import ConfigurationError, check_positive_int
from .model import SystemConfig, _advance, spawn_streams
from .policies import (
    BasePolicy,
    GeniePolicy,
    MaxSigmaPolicy,
    OptimalPolicy,
    PolicyKind,
    RandomPolicy,
    _expected_age,
    _optimal_score,
    _prob_fresh,
    _select_genie,
    _select_max_sigma,
    _select_optimal,
    _select_random,
    eligible_pairs,
)

logger = logging.getLogger(__name__)

_POLICY_CLASSES = {
    PolicyKind.OPTIMAL: OptimalPolicy,
    PolicyKind.GENIE: GeniePolicy,
    PolicyKind.RANDOM: RandomPolicy,
    PolicyKind.MAX_SIGMA: MaxSigmaPolicy,
    PolicyKind.EGREEDY: EpsilonGreedyPolicy,
}

# kernel status codes
_OK = 0
_DIVERGED = 1


def make_policy(kind, **params):
    """Policy estimator for ``kind`` (a PolicyKind or its string value)."""
    return _POLICY_CLASSES[PolicyKind(kind)](**params)


def _as_policy(policy):
    if isinstance(policy, BasePolicy):
        return policy
    return make_policy(policy)


@njit(cache=True)
def _simulate(code, rates, obs_probs, horizon, world_rng, policy_rng,
              alpha, explore_slots, eps_explore, eps_exploit, theta, psi, trace):
    """Run the slot loop. Returns (status, failing slot, invariant violations)."""
    num_sensors, num_sources = obs_probs.shape
    last_obs = np.zeros((num_sensors, num_sources))
    ages = np.zeros(num_sources)
    tau = np.ones((num_sensors, num_sources))
    rate_prod = np.empty((num_sensors, num_sources))
    eligible = obs_probs > 0.0
    for n in range(num_sensors):
        for k in range(num_sources):
            rate_prod[n, k] = rates[k] * obs_probs[n, k]
    pairs = np.empty((0, 2), dtype=np.int64)
    if code == 2:
        count = 0
        for k in range(num_sources):
            for n in range(num_sensors):
                if eligible[n, k]:
                    count += 1
        pairs = np.empty((count, 2), dtype=np.int64)
        i = 0
        for k in range(num_sources):
            for n in range(num_sensors):
                if eligible[n, k]:
                    pairs[i, 0] = n
                    pairs[i, 1] = k
                    i += 1

    violations = 0
    clock = 0.0
    for t in range(1, horizon + 1):
        clock = _advance(last_obs, clock, rates, obs_probs, world_rng)

        if code == 0:
            n, k = _select_optimal(ages, tau, rate_prod)
        elif code == 1:
            n, k = _select_genie(ages, last_obs, clock)
        elif code == 2:
            n, k = _select_random(pairs, policy_rng)
        elif code == 3:
            n, k = _select_max_sigma(ages, tau, eligible)
        else:
            eps = eps_explore if t <= explore_slots else eps_exploit
            n, k = _select_egreedy(ages, tau, theta, psi, eps, policy_rng)

        prev_age = ages[k]
        sigma = min(tau[n, k], prev_age + 1.0)
        if sigma > tau[n, k] or sigma > prev_age + 1.0:
            violations += 1
        delivered = clock - last_obs[n, k]

        total = 0.0
        for j in range(num_sources):
            if j == k:
                new_age = min(delivered, ages[j] + 1.0)
            else:
                new_age = ages[j] + 1.0
            if new_age > ages[j] + 1.0 or new_age < 0.0:
                violations += 1
            ages[j] = new_age
            total += new_age
        tau += 1.0
        tau[n, k] = 1.0

        if code == 4:
            reward = prev_age + 1.0 - ages[k]
            if not _update(theta, psi, n, k, sigma, reward, prev_age, alpha):
                return _DIVERGED, t, violations

        trace[t - 1] = total / num_sources
    return _OK, 0, violations


@dataclass
class RunSummary:
    policy: PolicyKind
    lam: float
    seed: int
    mean_post_warmup_aoi: float
    series: np.ndarray  # (m, 2) rows of (slot, avg_aoi) every sample_stride slots
    trace: Optional[np.ndarray] = field(default=None, repr=False)
    violations: int = 0
    status: str = "ok"
    error: Optional[str] = None


def run_replication(config, policy, seed, sample_stride=100, keep_trace=True):
    """Simulate one replication and summarise it.

    ``policy`` is an estimator or a PolicyKind. For epsilon-greedy the
    estimator's hyper-parameters are used; its ``random_state`` is not, the
    policy stream derived from ``seed`` is.

    Raises BanditDivergenceError if the bandit's weights blow up.
    """
    policy = _as_policy(policy)
    kind = policy.kind
    world_rng, policy_rng = spawn_streams(seed)
    n_sensors, n_sources = config.num_sensors, config.num_sources
    theta = np.zeros((n_sensors, n_sources, 2))
    psi = np.zeros((n_sensors, n_sources, 2))
    if kind is PolicyKind.EGREEDY:
        sched = policy.bandit_config
        bandit_args = (sched.step_size, sched.explore_slots, sched.epsilon_explore,
                       sched.epsilon_exploit)
    else:
        bandit_args = (0.0, 0, 0.0, 0.0)
    trace = np.zeros(config.horizon)
    status, bad_slot, violations = _simulate(
        kind.code, config.rates, config.obs_probs, config.horizon, world_rng,
        policy_rng, *bandit_args, theta, psi, trace,
    )
    if status == _DIVERGED:
        raise BanditDivergenceError(int(bad_slot), bandit_args[0])
    slots = np.arange(sample_stride, config.horizon + 1, sample_stride)
    series = np.column_stack([slots, trace[slots - 1]])
    return RunSummary(
        policy=kind,
        lam=config.uniform_rate,
        seed=int(seed),
        mean_post_warmup_aoi=float(np.mean(trace[config.warmup:])),
        series=series,
        trace=trace if keep_trace else None,
        violations=int(violations),
    )


@dataclass
class ExperimentSpec:
    config: SystemConfig
    policies: list
    replications: int = 30
    lambda_sweep: Optional[list] = None
    sample_stride: int = 100

    def __post_init__(self):
        self.replications = check_positive_int(self.replications, "replications")
        self.sample_stride = check_positive_int(self.sample_stride, "sample_stride")
        self.policies = [_as_policy(p) for p in self.policies]
        if not self.policies:
            raise ConfigurationError("policies", "at least one policy is required")
        if self.lambda_sweep is not None:
            sweep = [float(v) for v in self.lambda_sweep]
            if not sweep or any(not v > 0 for v in sweep):
                raise ConfigurationError("lambda_sweep", "values must be positive")
            self.lambda_sweep = sorted(sweep)

    def seeds(self):
        return [self.config.seed + r for r in range(self.replications)]

    def cell_configs(self):
        """(lambda, config) pairs in ascending lambda order."""
        if self.lambda_sweep is None:
            return [(self.config.uniform_rate, self.config)]
        return [(lam, self.config.with_rate(lam)) for lam in self.lambda_sweep]


@dataclass
class AggregateRow:
    policy: PolicyKind
    lam: float
    replications: int
    mean_aoi: float
    std_aoi: float
    failed: int


@dataclass
class ExperimentResult:
    summaries: list
    aggregates: list
    series: dict  # (policy, lam) -> (m, 2) seed-averaged series

    @property
    def failed(self):
        return [s for s in self.summaries if s.status != "ok"]


def aggregate(summaries):
    """Per-(policy, lambda) mean and sample std of the post-warmup AoI.

    The order of ``summaries`` only fixes the row order (first appearance);
    the values are independent of it.
    """
    groups = {}
    for s in summaries:
        groups.setdefault((s.policy, _lam_key(s.lam)), []).append(s)
    rows = []
    for (policy, _), cell in groups.items():
        ok = sorted((s.mean_post_warmup_aoi for s in cell if s.status == "ok"))
        values = np.array(ok)
        mean = float(math.fsum(ok) / len(ok)) if ok else float("nan")
        std = float(np.std(values, ddof=1)) if len(ok) > 1 else (0.0 if ok else float("nan"))
        rows.append(AggregateRow(policy, cell[0].lam, len(cell), mean, std,
                                 sum(s.status != "ok" for s in cell)))
    return rows


def _lam_key(lam):
    return "nan" if math.isnan(lam) else lam


def mean_series(summaries):
    """Pointwise mean of the sampled series across seeds, per (policy, lambda)."""
    groups = {}
    for s in summaries:
        if s.status == "ok":
            groups.setdefault((s.policy, _lam_key(s.lam)), []).append(s.series)
    out = {}
    for key, series in groups.items():
        stack = np.stack(series)
        out[key] = np.column_stack([stack[0, :, 0], stack[:, :, 1].mean(axis=0)])
    return out


def _run_cell(config, policy, seed, sample_stride, lam):
    try:
        summary = run_replication(config, policy, seed, sample_stride, keep_trace=False)
    except BanditDivergenceError as exc:
        logger.warning("%s lambda=%g seed=%d: %s", policy.kind.value, lam, seed, exc)
        slots = np.arange(sample_stride, config.horizon + 1, sample_stride)
        return RunSummary(policy.kind, lam, seed, float("nan"),
                          np.column_stack([slots, np.full(slots.size, np.nan)]),
                          status="diverged", error=str(exc))
    summary.lam = lam
    return summary


def run_experiment(spec, n_jobs=1):
    """Run every (policy, lambda, seed) cell of ``spec``.

    Cells are independent; with ``n_jobs != 1`` they are spread over joblib
    workers. Results come back in canonical order (policy list order,
    ascending lambda, ascending seed). A diverged cell is recorded with
    ``status="diverged"`` and does not stop the others.
    """
    cells = [
        (config, policy, seed, spec.sample_stride, lam)
        for policy in spec.policies
        for lam, config in spec.cell_configs()
        for seed in spec.seeds()
    ]
    if n_jobs == 1:
        summaries = [_run_cell(*cell) for cell in cells]
    else:
        from joblib import Parallel, delayed

        summaries = Parallel(n_jobs=n_jobs)(delayed(_run_cell)(*cell) for cell in cells)
    return ExperimentResult(summaries, aggregate(summaries), mean_series(summaries))


# -- oracle validation ------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    measured: float
    tolerance: float
    passed: bool

    @property
    def status(self):
        return "pass" if self.passed else "fail"


@njit(cache=True)
def _freshness_trials(rate, obs_prob, window, trials, rng):
    # One source, one sensor: fraction of trials in which the sensor saw an
    # update inside the last ``window`` slots of the joint world.
    rates = np.array([rate])
    probs = np.array([[obs_prob]])
    last_obs = np.zeros((1, 1))
    hits = 0
    for _ in range(trials):
        last_obs[0, 0] = -1.0
        clock = 0.0
        for _ in range(window):
            clock = _advance(last_obs, clock, rates, probs, rng)
        if last_obs[0, 0] > 0.0:
            hits += 1
    return hits / trials


FRESHNESS_GRID = [(x, s) for x in (0.1, 0.25, 1.0) for s in (1, 4, 16)]


def check_prob_fresh(samples=100_000, seed=2024, tol=0.01):
    """Monte-Carlo freshness frequency vs the closed form on the standard grid."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for x, sigma in FRESHNESS_GRID:
        # the same product x split as rate=2x, p=1/2 so thinning is exercised
        empirical = _freshness_trials(2.0 * x, 0.5, sigma, samples, rng)
        worst = max(worst, abs(empirical - _prob_fresh(x, float(sigma))))
    return CheckResult("prob_fresh_monte_carlo", worst, tol, worst <= tol)


def truncated_mean_quadrature(x, sigma):
    """Mean of Exponential(x) truncated to [0, sigma] by adaptive quadrature."""
    num, _ = integrate.quad(lambda s: s * x * math.exp(-x * s), 0.0, sigma,
                            epsabs=1e-14, epsrel=1e-13)
    den, _ = integrate.quad(lambda s: x * math.exp(-x * s), 0.0, sigma,
                            epsabs=1e-14, epsrel=1e-13)
    return num / den


def check_expected_age(tol=1e-9):
    worst = max(abs(_expected_age(x, float(s)) - truncated_mean_quadrature(x, s))
                for x, s in FRESHNESS_GRID)
    return CheckResult("expected_age_quadrature", worst, tol, worst <= tol)


def check_score_identity(samples=10_000, seed=7, tol=1e-12):
    """Optimal score vs freshness probability times mean age reduction."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        # sigma never exceeds age + 1 on a scheduler view
        x = 10 ** rng.uniform(-3, 1)
        age = rng.uniform(0.0, 200.0)
        sigma = rng.uniform(1e-3, 1.0) * (age + 1.0)
        score = _optimal_score(age, x, sigma)
        composed = _prob_fresh(x, sigma) * (age + 1.0 - _expected_age(x, sigma))
        worst = max(worst, abs(score - composed) / abs(composed))
    return CheckResult("score_identity", worst, tol, worst <= tol)


def _cross_entropy(psi, x, y):
    z = psi @ x
    # log(1 + e^z) computed stably
    return float(np.logaddexp(0.0, z) - y * z)


def _squared_error(theta, x, y):
    return 0.5 * float(theta @ x - y) ** 2


def _central_difference(loss, w, x, y, h):
    grad = np.empty_like(w)
    for i in range(w.size):
        step = np.zeros_like(w)
        step[i] = h
        grad[i] = (loss(w + step, x, y) - loss(w - step, x, y)) / (2 * h)
    return grad


def check_gradients(samples=100, seed=11, tol=1e-6, h=1e-6):
    """Both SGD gradients against central finite differences of their losses."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        x = np.array([1.0, rng.uniform(0.0, 4.0)])
        psi = rng.uniform(-0.5, 0.5, 2)
        y = float(rng.integers(0, 2))
        analytic = (_sigmoid(float(psi @ x)) - y) * x
        numeric = _central_difference(_cross_entropy, psi, x, y, h)
        worst = max(worst, np.max(np.abs(analytic - numeric) / np.abs(analytic)))

        theta = rng.uniform(-2.0, 2.0, 2)
        target = float(theta @ x) + rng.choice([-1, 1]) * rng.uniform(0.5, 5.0)
        analytic = (float(theta @ x) - target) * x
        numeric = _central_difference(_squared_error, theta, x, target, h)
        worst = max(worst, np.max(np.abs(analytic - numeric) / np.abs(analytic)))
    return CheckResult("sgd_gradients", worst, tol, worst <= tol)


def validate_oracles(sink=None):
    """Run the oracle checks; each result is also passed to ``sink`` if given."""
    results = []
    for check in (check_prob_fresh, check_expected_age, check_score_identity, check_gradients):
        result = check()
        logger.info("%s: %s (measured %.3g, tol %.3g)", result.name, result.status,
                    result.measured, result.tolerance)
        if sink is not None:
            sink(result)
        results.append(result)
    return results
