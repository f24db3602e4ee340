"""Scheduling policies that do not learn: optimal, genie, random and max-sigma.

All indices are 0-based. Every argmax breaks ties lexicographically on
(source, sensor): the first pair in source-major order wins.

The estimator classes follow the scikit-learn conventions (constructor only
stores hyper-parameters, ``fit`` binds a :class:`SystemConfig`, fitted
attributes end in ``_``), so they can be cloned and inspected with
``get_params``.
"""

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_index
from .model import SystemConfig, bs_age_step

_SERIES_CUTOFF = 1.0
_TINY_EXPONENT = 1e-8


class PolicyKind(str, enum.Enum):
    OPTIMAL = "optimal"
    GENIE = "genie"
    RANDOM = "random"
    MAX_SIGMA = "max-sigma"
    EGREEDY = "egreedy"

    @property
    def code(self):
        return _KIND_CODES[self]


_KIND_CODES = {
    PolicyKind.OPTIMAL: 0,
    PolicyKind.GENIE: 1,
    PolicyKind.RANDOM: 2,
    PolicyKind.MAX_SIGMA: 3,
    PolicyKind.EGREEDY: 4,
}


class Action(NamedTuple):
    sensor: int
    source: int


@dataclass
class SchedulerView:
    """What the base station knows when slot ``slot`` starts.

    ``bs_ages[k]`` is the BS age of source k at the end of the previous slot
    and ``since_scheduled[n, k]`` counts slots since pair (n, k) was polled
    (``slot`` for pairs never polled).
    """

    slot: int
    bs_ages: np.ndarray
    since_scheduled: np.ndarray

    @classmethod
    def initial(cls, config):
        return cls(
            1,
            np.zeros(config.num_sources),
            np.ones((config.num_sensors, config.num_sources)),
        )

    def sigma(self):
        """Matrix of ``compute_sigma`` over all pairs."""
        return np.minimum(self.since_scheduled, self.bs_ages[None, :] + 1.0)


def view_step(view, action, delivered_age=None):
    """View for the next slot after polling ``action`` (``None`` means idle)."""
    ages = view.bs_ages + 1.0
    tau = view.since_scheduled + 1.0
    if action is not None:
        k = action.source
        if delivered_age is not None:
            ages[k] = bs_age_step(view.bs_ages[k], delivered_age)
        tau[action.sensor, k] = 1.0
    return SchedulerView(view.slot + 1, ages, tau)


def compute_sigma(view, n, k):
    n = check_index(n, view.since_scheduled.shape[0], "sensor")
    k = check_index(k, view.since_scheduled.shape[1], "source")
    return float(min(view.since_scheduled[n, k], view.bs_ages[k] + 1.0))


# -- closed forms -----------------------------------------------------------
#
# With x = rate * obs_prob and u = x * sigma, every quantity below is built
# from g = 1 - exp(-u), h = u - g and m = 1 - exp(-u) * (1 + u). The latter two
# vanish to second order at u = 0, so small u uses their Taylor series.


@njit(cache=True)
def _one_minus_exp(u):
    return -math.expm1(-u)


@njit(cache=True)
def _u_minus_g(u):
    # u - 1 + exp(-u) = sum_{j>=2} (-u)^j / j!
    if u >= _SERIES_CUTOFF:
        return u + math.expm1(-u)
    term = u * u / 2.0
    total = term
    j = 2
    while abs(term) > 1e-18 * total:
        j += 1
        term *= -u / j
        total += term
    return total


@njit(cache=True)
def _trunc_numerator(u):
    # 1 - exp(-u)(1 + u) = sum_{j>=2} (-1)^j (j-1) u^j / j!
    if u >= _SERIES_CUTOFF:
        return -math.expm1(-u) - u * math.exp(-u)
    power = u * u / 2.0
    total = power
    j = 2
    while abs(power) * j > 1e-18 * total:
        j += 1
        power *= -u / j
        total += (j - 1) * power
    return total


@njit(cache=True)
def _prob_fresh(x, sigma):
    return _one_minus_exp(x * sigma)


@njit(cache=True)
def _expected_age(x, sigma):
    u = x * sigma
    if u < _TINY_EXPONENT:
        return sigma / 2.0
    return _trunc_numerator(u) / (x * _one_minus_exp(u))


@njit(cache=True)
def _optimal_score(bs_age, x, sigma):
    # (D + 1 - 1/x) g + sigma e^{-u}, regrouped as g (D + 1 - sigma) + h / x
    # so both terms are non-negative whenever sigma <= D + 1.
    if x <= 0.0 or sigma <= 0.0:
        return 0.0
    if math.isinf(x):
        return bs_age + 1.0
    u = x * sigma
    return _one_minus_exp(u) * (bs_age + 1.0 - sigma) + _u_minus_g(u) / x


def prob_fresh(rate, obs_prob, sigma):
    """Probability that the pair holds an update the BS has not seen.

    ``1 - exp(-rate * obs_prob * sigma)``.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    return float(_prob_fresh(float(rate) * float(obs_prob), float(sigma)))


def expected_age_given_fresh(rate, obs_prob, sigma):
    """Mean of an Exponential(rate * obs_prob) variable truncated to [0, sigma]."""
    x = float(rate) * float(obs_prob)
    if not x * sigma > 0:
        raise ValueError(
            "expected age is undefined when rate * obs_prob * sigma == 0 "
            "(a fresh observation has probability zero)"
        )
    return float(_expected_age(x, float(sigma)))


def optimal_score(bs_age, rate, obs_prob, sigma):
    """Expected one-slot reduction of the BS age when polling the pair."""
    return float(_optimal_score(float(bs_age), float(rate) * float(obs_prob), float(sigma)))


# -- selection kernels ------------------------------------------------------


@njit(cache=True)
def _select_optimal(bs_ages, tau, rate_prod):
    num_sensors, num_sources = tau.shape
    best = -1.0
    best_n = 0
    best_k = 0
    for k in range(num_sources):
        cap = bs_ages[k] + 1.0
        for n in range(num_sensors):
            if rate_prod[n, k] <= 0.0:
                continue
            score = _optimal_score(bs_ages[k], rate_prod[n, k], min(tau[n, k], cap))
            if score > best:
                best = score
                best_n = n
                best_k = k
    return best_n, best_k


@njit(cache=True)
def _select_genie(bs_ages, last_obs, clock):
    num_sensors, num_sources = last_obs.shape
    best = -1.0
    best_n = 0
    best_k = 0
    for k in range(num_sources):
        cap = bs_ages[k] + 1.0
        for n in range(num_sensors):
            gain = cap - min(clock - last_obs[n, k], cap)
            if gain > best:
                best = gain
                best_n = n
                best_k = k
    return best_n, best_k


@njit(cache=True)
def _select_max_sigma(bs_ages, tau, eligible):
    num_sensors, num_sources = tau.shape
    best = -1.0
    best_n = 0
    best_k = 0
    for k in range(num_sources):
        cap = bs_ages[k] + 1.0
        for n in range(num_sensors):
            if not eligible[n, k]:
                continue
            sigma = min(tau[n, k], cap)
            if sigma > best:
                best = sigma
                best_n = n
                best_k = k
    return best_n, best_k


@njit(cache=True)
def _select_random(pairs, rng):
    # pairs: (m, 2) array of (sensor, source) in source-major order
    i = rng.integers(0, pairs.shape[0])
    return pairs[i, 0], pairs[i, 1]


def eligible_pairs(obs_probs):
    """(sensor, source) rows of every pair with p > 0, source-major."""
    k_idx, n_idx = np.nonzero(obs_probs.T > 0.0)
    return np.ascontiguousarray(np.column_stack([n_idx, k_idx]).astype(np.int64))


def select_optimal(view, config):
    rate_prod = config.rates[None, :] * config.obs_probs
    return Action(*_select_optimal(view.bs_ages, view.since_scheduled, rate_prod))


def select_genie(world, view):
    return Action(*_select_genie(view.bs_ages, world.last_obs, world.clock))


def select_random(config, rng):
    return Action(*_select_random(eligible_pairs(config.obs_probs), rng))


def select_max_sigma(view, config):
    eligible = config.obs_probs > 0.0
    return Action(*_select_max_sigma(view.bs_ages, view.since_scheduled, eligible))


# -- estimators -------------------------------------------------------------


class BasePolicy(BaseEstimator):
    """Common ``fit`` for policies that need only the system description."""

    kind: PolicyKind

    def fit(self, config, y=None):
        if not isinstance(config, SystemConfig):
            raise TypeError(f"fit expects a SystemConfig, got {type(config).__name__}")
        self.config_ = config
        self.n_sensors_ = config.num_sensors
        self.n_sources_ = config.num_sources
        return self

    def predict(self, view, world=None):
        raise NotImplementedError


class OptimalPolicy(BasePolicy):
    """Greedy maximiser of the expected one-slot AoI reduction (known rates)."""

    kind = PolicyKind.OPTIMAL

    def fit(self, config, y=None):
        super().fit(config)
        self.rate_prod_ = config.rates[None, :] * config.obs_probs
        return self

    def predict(self, view, world=None):
        check_is_fitted(self)
        return Action(*_select_optimal(view.bs_ages, view.since_scheduled, self.rate_prod_))

    def scores(self, view):
        """Score matrix over all pairs (zero where p = 0)."""
        check_is_fitted(self)
        sigma = view.sigma()
        out = np.zeros_like(sigma)
        for n, k in zip(*np.nonzero(self.rate_prod_ > 0)):
            out[n, k] = _optimal_score(view.bs_ages[k], self.rate_prod_[n, k], sigma[n, k])
        return out


class GeniePolicy(BasePolicy):
    """Reads true sensor ages and takes the largest realised reduction."""

    kind = PolicyKind.GENIE

    def predict(self, view, world=None):
        check_is_fitted(self)
        if world is None:
            raise ValueError("GeniePolicy needs the world state")
        return select_genie(world, view)


class RandomPolicy(BasePolicy):
    """Uniform choice over pairs with a non-zero observation probability."""

    kind = PolicyKind.RANDOM

    def __init__(self, random_state=None):
        self.random_state = random_state

    def fit(self, config, y=None):
        super().fit(config)
        self.pairs_ = eligible_pairs(config.obs_probs)
        self.rng_ = np.random.default_rng(self.random_state)
        return self

    def predict(self, view, world=None):
        check_is_fitted(self)
        return Action(*_select_random(self.pairs_, self.rng_))


class MaxSigmaPolicy(BasePolicy):
    """Polls the pair with the largest sigma."""

    kind = PolicyKind.MAX_SIGMA

    def fit(self, config, y=None):
        super().fit(config)
        self.eligible_ = config.obs_probs > 0.0
        return self

    def predict(self, view, world=None):
        check_is_fitted(self)
        return Action(*_select_max_sigma(view.bs_ages, view.since_scheduled, self.eligible_))
