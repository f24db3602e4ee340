"""Input checking shared by the config, policy and harness layers."""

import numbers

import numpy as np


class ConfigurationError(ValueError):
    """Raised when a system or experiment configuration is invalid.

    ``field`` names the offending field so callers (the CLI in particular)
    can point the user at it.
    """

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


def check_positive_int(value, field, allow_zero=False):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ConfigurationError(field, f"expected an integer, got {value!r}")
    if value < 0 or (value == 0 and not allow_zero):
        bound = "non-negative" if allow_zero else "positive"
        raise ConfigurationError(field, f"must be {bound}, got {value}")
    return int(value)


def check_probability(value, field):
    if not isinstance(value, numbers.Real) or not 0.0 <= value <= 1.0:
        raise ConfigurationError(field, f"must lie in [0, 1], got {value!r}")
    return float(value)


def check_rates(rates, num_sources):
    rates = np.atleast_1d(np.asarray(rates, dtype=np.float64))
    if rates.shape == (1,) and num_sources > 1:
        rates = np.full(num_sources, rates[0])
    if rates.shape != (num_sources,):
        raise ConfigurationError(
            "rates", f"expected {num_sources} values, got shape {rates.shape}"
        )
    if not np.all(np.isfinite(rates)) or np.any(rates < 0):
        raise ConfigurationError("rates", "must be finite and non-negative")
    return rates


def check_obs_probs(obs_probs, num_sensors, num_sources):
    obs_probs = np.asarray(obs_probs, dtype=np.float64)
    if obs_probs.shape != (num_sensors, num_sources):
        raise ConfigurationError(
            "obs_probs",
            f"expected shape ({num_sensors}, {num_sources}), got {obs_probs.shape}",
        )
    if not np.all((obs_probs >= 0.0) & (obs_probs <= 1.0)):
        raise ConfigurationError("obs_probs", "entries must lie in [0, 1]")
    blind = np.flatnonzero(~np.any(obs_probs > 0.0, axis=0))
    if blind.size:
        raise ConfigurationError(
            "obs_probs", f"source {blind[0] + 1} unobservable (no sensor has p > 0)"
        )
    return obs_probs


def check_index(value, size, name):
    if not 0 <= value < size:
        raise IndexError(f"{name} index {value} out of range [0, {size})")
    return int(value)
