"""Epsilon-greedy contextual bandit with a gated linear age model.

For pair (n, k) with feature ``x = [1, sigma_nk]`` the expected reward is
modelled as ``sigmoid(psi @ x) * (D_k + 1 - theta @ x)``: ``psi`` is a
logistic model of "the poll reduces the age", ``theta`` a linear model of
the age delivered when it does. Both are trained online by plain SGD,
``psi`` with the cross-entropy gradient on every poll and ``theta`` with the
squared-error gradient on polls that paid off.
"""

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from sklearn.utils.validation import check_is_fitted

from ._validation import ConfigurationError, check_positive_int, check_probability
from .policies import Action, BasePolicy, PolicyKind, compute_sigma


class BanditDivergenceError(RuntimeError):
    """A bandit parameter became non-finite during SGD."""

    def __init__(self, slot, alpha):
        super().__init__(f"bandit parameters diverged at slot {slot} (alpha={alpha:g})")
        self.slot = slot
        self.alpha = alpha


@dataclass(frozen=True)
class BanditConfig:
    step_size: float = 1e-5
    explore_slots: int = 50_000
    epsilon_explore: float = 1.0
    epsilon_exploit: float = 0.1

    def __post_init__(self):
        if not self.step_size > 0:
            raise ConfigurationError("step_size", f"must be positive, got {self.step_size}")
        check_positive_int(self.explore_slots, "explore_slots", allow_zero=True)
        check_probability(self.epsilon_explore, "epsilon_explore")
        check_probability(self.epsilon_exploit, "epsilon_exploit")

    def epsilon_at(self, slot):
        """Exploration probability used in 1-based slot ``slot``."""
        return self.epsilon_explore if slot <= self.explore_slots else self.epsilon_exploit


@dataclass
class BanditParams:
    theta: np.ndarray  # (N, K, 2) age-estimate weights
    psi: np.ndarray  # (N, K, 2) freshness-logit weights

    @classmethod
    def zeros(cls, num_sensors, num_sources):
        return cls(
            np.zeros((num_sensors, num_sources, 2)),
            np.zeros((num_sensors, num_sources, 2)),
        )

    def copy(self):
        return BanditParams(self.theta.copy(), self.psi.copy())


@njit(cache=True)
def _sigmoid(z):
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@njit(cache=True)
def _reward_estimate(sigma, theta, psi, bs_age):
    gate = _sigmoid(psi[0] + psi[1] * sigma)
    return gate * (bs_age + 1.0 - theta[0] - theta[1] * sigma)


@njit(cache=True)
def _select_egreedy(bs_ages, tau, theta, psi, epsilon, rng):
    num_sensors, num_sources = tau.shape
    if rng.random() < epsilon:
        i = rng.integers(0, num_sensors * num_sources)
        # source-major enumeration, same order as the argmax below
        return i % num_sensors, i // num_sensors
    best = -np.inf
    best_n = 0
    best_k = 0
    for k in range(num_sources):
        cap = bs_ages[k] + 1.0
        for n in range(num_sensors):
            est = _reward_estimate(min(tau[n, k], cap), theta[n, k], psi[n, k], bs_ages[k])
            if est > best:
                best = est
                best_n = n
                best_k = k
    return best_n, best_k


@njit(cache=True)
def _update(theta, psi, n, k, sigma, reward, prev_age, alpha):
    """In-place SGD step for pair (n, k); False if a weight went non-finite."""
    th = theta[n, k]
    ps = psi[n, k]
    if reward > 0.0:
        target = prev_age + 1.0 - reward
        resid = th[0] + th[1] * sigma - target
        th[0] -= alpha * resid
        th[1] -= alpha * resid * sigma
    label = 1.0 if reward > 0.0 else 0.0
    err = _sigmoid(ps[0] + ps[1] * sigma) - label
    ps[0] -= alpha * err
    ps[1] -= alpha * err * sigma
    return (
        math.isfinite(th[0])
        and math.isfinite(th[1])
        and math.isfinite(ps[0])
        and math.isfinite(ps[1])
    )


def features(view, n, k):
    return np.array([1.0, compute_sigma(view, n, k)])


def sigmoid(z):
    return _sigmoid(float(z))


def reward_estimate(x, theta, psi, bs_age):
    x = np.asarray(x, dtype=np.float64)
    return float(_sigmoid(float(psi @ x)) * (bs_age + 1.0 - float(theta @ x)))


def select_egreedy(params, view, epsilon, rng):
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    return Action(
        *_select_egreedy(view.bs_ages, view.since_scheduled, params.theta, params.psi, epsilon, rng)
    )


def update_params(params, action, x, reward, prev_age, alpha, slot=None):
    """Return updated parameters after observing ``reward`` for ``action``.

    ``x`` must be the feature vector the decision was based on.
    """
    out = params.copy()
    ok = _update(out.theta, out.psi, action.sensor, action.source, float(x[1]),
                 float(reward), float(prev_age), float(alpha))
    if not ok:
        raise BanditDivergenceError(slot, alpha)
    return out


class EpsilonGreedyPolicy(BasePolicy):
    """Model-free scheduler learning the reward model online.

    Parameters
    ----------
    alpha : float
        SGD step size.
    explore_slots : int
        Number of initial slots using ``epsilon_explore``.
    epsilon_explore, epsilon_exploit : float
        Exploration probability before and after ``explore_slots``.
    random_state : int, Generator or None
        Source of the exploration draws.
    """

    kind = PolicyKind.EGREEDY

    def __init__(self, alpha=1e-5, explore_slots=50_000, epsilon_explore=1.0,
                 epsilon_exploit=0.1, random_state=None):
        self.alpha = alpha
        self.explore_slots = explore_slots
        self.epsilon_explore = epsilon_explore
        self.epsilon_exploit = epsilon_exploit
        self.random_state = random_state

    @property
    def bandit_config(self):
        return BanditConfig(self.alpha, self.explore_slots, self.epsilon_explore,
                            self.epsilon_exploit)

    def fit(self, config, y=None):
        super().fit(config)
        self.schedule_ = self.bandit_config
        self.params_ = BanditParams.zeros(config.num_sensors, config.num_sources)
        self.rng_ = np.random.default_rng(self.random_state)
        return self

    def predict(self, view, world=None):
        check_is_fitted(self)
        return select_egreedy(self.params_, view, self.schedule_.epsilon_at(view.slot), self.rng_)

    def partial_fit(self, view, action, reward):
        """SGD step on the outcome of polling ``action`` in ``view``.

        ``view`` is the state the decision was made in, so the feature and the
        previous BS age are read from it.
        """
        check_is_fitted(self)
        x = features(view, action.sensor, action.source)
        prev_age = view.bs_ages[action.source]
        self.params_ = update_params(self.params_, action, x, reward, prev_age,
                                     self.alpha, slot=view.slot)
        return self
