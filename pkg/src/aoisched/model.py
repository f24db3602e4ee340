"""Ground-truth world: Poisson source updates seen by sensors through joint thinning.

Time is continuous inside unit-length slots. Sensors keep only the newest
update they have seen from each source, so the world state is the matrix
``last_obs[n, k]`` plus the clock.

Random numbers come from NumPy's ``PCG64`` generator. A replication seed is
expanded with ``np.random.SeedSequence(seed).spawn(2)`` into two independent
streams: child 0 drives the world, child 1 drives the scheduling policy. Within
a slot the world consumes draws in a fixed order: for each source (ascending)
one uniform for the Poisson count (inversion, Poisson(30) chunks above 30),
then one uniform per update time, then, for each update in time order, one
uniform per sensor (ascending) for the thinning decision.
"""

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from ._validation import (
    check_index,
    check_obs_probs,
    check_positive_int,
    check_rates,
    ConfigurationError,
)

_POISSON_CHUNK = 30.0


@dataclass
class SystemConfig:
    """Sources, sensors and the run length of one simulated system.

    ``obs_probs`` is indexed ``[sensor, source]``. Rates are in updates per
    slot; a zero rate is accepted (the source never updates).
    """

    num_sources: int
    num_sensors: int
    rates: np.ndarray
    obs_probs: np.ndarray
    horizon: int = 100_000
    warmup: int = 60_000
    seed: int = 0

    def __post_init__(self):
        self.num_sources = check_positive_int(self.num_sources, "num_sources")
        self.num_sensors = check_positive_int(self.num_sensors, "num_sensors")
        self.rates = check_rates(self.rates, self.num_sources)
        self.obs_probs = check_obs_probs(
            self.obs_probs, self.num_sensors, self.num_sources
        )
        self.horizon = check_positive_int(self.horizon, "horizon")
        self.warmup = check_positive_int(self.warmup, "warmup", allow_zero=True)
        if self.warmup >= self.horizon:
            raise ConfigurationError(
                "warmup", f"must be smaller than horizon ({self.horizon})"
            )
        self.seed = check_positive_int(self.seed, "seed", allow_zero=True)

    def with_rate(self, rate):
        """Copy of this config with every source updating at ``rate``."""
        return SystemConfig(
            self.num_sources,
            self.num_sensors,
            np.full(self.num_sources, float(rate)),
            self.obs_probs.copy(),
            self.horizon,
            self.warmup,
            self.seed,
        )

    @property
    def uniform_rate(self):
        """The common rate if all sources share one, else NaN."""
        if np.all(self.rates == self.rates[0]):
            return float(self.rates[0])
        return float("nan")

    def __eq__(self, other):
        if not isinstance(other, SystemConfig):
            return NotImplemented
        return (
            (self.num_sources, self.num_sensors, self.horizon, self.warmup, self.seed)
            == (other.num_sources, other.num_sensors, other.horizon, other.warmup, other.seed)
            and np.array_equal(self.rates, other.rates)
            and np.array_equal(self.obs_probs, other.obs_probs)
        )


def half_power_probs(num_sensors, num_sources):
    """Observation matrix with ``p[n, k] = 2**-(n+1)``, sensors counted from 1."""
    p = 0.5 ** np.arange(1, num_sensors + 1, dtype=np.float64)
    return np.repeat(p[:, None], num_sources, axis=1)


def spawn_streams(seed):
    """(world, policy) generators for one replication seed."""
    world_seq, policy_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(world_seq), np.random.default_rng(policy_seq)


@dataclass
class WorldState:
    clock: float
    last_obs: np.ndarray
    rng: np.random.Generator = field(repr=False)


def new_world(config, seed):
    """Fresh world at t=0 where every sensor holds a virtual update stamped 0."""
    world_rng, _ = spawn_streams(seed)
    last_obs = np.zeros((config.num_sensors, config.num_sources))
    return WorldState(0.0, last_obs, world_rng)


def advance_world(world, config):
    """Advance one slot. Returns a new state; ``world.rng`` is shared and advanced."""
    last_obs = world.last_obs.copy()
    _advance(last_obs, world.clock, config.rates, config.obs_probs, world.rng)
    return WorldState(world.clock + 1.0, last_obs, world.rng)


def sensor_age(world, n, k):
    n = check_index(n, world.last_obs.shape[0], "sensor")
    k = check_index(k, world.last_obs.shape[1], "source")
    return world.clock - world.last_obs[n, k]


def bs_age_step(prev_age, scheduled=None):
    """One step of the BS age recursion for a single source.

    ``scheduled`` is the sensor age delivered for this source, or ``None`` if
    no pair of this source was polled.
    """
    if scheduled is None:
        return prev_age + 1.0
    return min(scheduled, prev_age + 1.0)


def average_aoi(ages):
    return float(np.mean(ages))


@njit(cache=True)
def _poisson_small(rng, lam):
    u = rng.random()
    p = np.exp(-lam)
    cdf = p
    count = 0
    while u > cdf and p > 0.0:
        count += 1
        p *= lam / count
        cdf += p
    return count


@njit(cache=True)
def _poisson(rng, lam):
    count = 0
    while lam > _POISSON_CHUNK:
        count += _poisson_small(rng, _POISSON_CHUNK)
        lam -= _POISSON_CHUNK
    return count + _poisson_small(rng, lam)


@njit(cache=True)
def _advance(last_obs, clock, rates, obs_probs, rng):
    num_sensors, num_sources = obs_probs.shape
    for k in range(num_sources):
        count = _poisson(rng, rates[k])
        if count == 0:
            continue
        times = np.empty(count)
        for i in range(count):
            # uniform on (clock, clock + 1]
            times[i] = clock + (1.0 - rng.random())
        times.sort()
        for i in range(count):
            for n in range(num_sensors):
                if rng.random() < obs_probs[n, k]:
                    last_obs[n, k] = times[i]
    return clock + 1.0
