"""Experiment config files (INI) and CSV output.

Example config::

    [system]
    sources = 20
    sensors = 20
    lambda = 0.5
    obs_probs = half-power

    [run]
    horizon = 100000
    warmup = 60000

    [policy]
    kind = optimal, genie, random, max-sigma, egreedy

    [egreedy]
    alpha = 1e-5

An explicit ``obs_probs`` matrix lists rows (one per sensor) separated by
``;`` or new lines, entries separated by commas or spaces.
"""

import configparser
import csv
import math
import os
import re

import numpy as np

from ._validation import ConfigurationError
from .harness import ExperimentSpec, aggregate, make_policy, mean_series
from .model import SystemConfig, half_power_probs
from .policies import PolicyKind

DEFAULT_SWEEP = (0.01, 0.03, 0.1, 0.3, 0.5, 1.0, 3.0, 10.0)

_DEFAULTS = {
    "run": {
        "horizon": "100000",
        "warmup": "60000",
        "replications": "30",
        "sample_stride": "100",
        "seed": "0",
    },
    "egreedy": {
        "alpha": "1e-5",
        "explore_slots": "50000",
        "epsilon_explore": "1.0",
        "epsilon_exploit": "0.1",
    },
    "policy": {"kind": ", ".join(k.value for k in PolicyKind)},
}
_KEYS = {
    "system": {"sources", "sensors", "lambda", "obs_probs"},
    "run": set(_DEFAULTS["run"]),
    "policy": {"kind"},
    "egreedy": set(_DEFAULTS["egreedy"]),
    "sweep": {"lambda"},
}

SUMMARY_HEADER = ["policy", "lambda", "seed", "mean_aoi"]
SERIES_HEADER = ["policy", "lambda", "slot", "mean_avg_aoi"]
AGGREGATE_HEADER = ["policy", "lambda", "replications", "mean_aoi", "std_aoi", "failed"]
VALIDATION_HEADER = ["check", "measured", "tolerance", "status"]


class ConfigFileError(ConfigurationError):
    """Config problem located in a file, with the line when it is known."""

    def __init__(self, key, message, line=None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(key, message)
        self.args = (f"{where}{key}: {message}",)
        self.line = line


def _key_line(text, section, key):
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        stripped = raw.strip()
        m = re.match(r"\[([^\]]+)\]", stripped)
        if m:
            current = m.group(1).strip().lower()
        elif current == section and re.match(rf"{re.escape(key)}\s*[=:]", stripped, re.I):
            return lineno
    return None


def _section_line(text, section):
    for lineno, raw in enumerate(text.splitlines(), 1):
        if raw.strip() == f"[{section}]":
            return lineno
    return None


def _floats(value):
    return [float(v) for v in re.split(r"[,\s]+", value.strip()) if v]


def _matrix(value):
    rows = [r for r in re.split(r"[;\n]", value) if r.strip()]
    return np.array([_floats(r) for r in rows])


def parse_config_text(text):
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigFileError("file", str(exc).splitlines()[0],
                              getattr(exc, "lineno", None)) from None

    def fail(section, key, message):
        raise ConfigFileError(f"{section}.{key}", message, _key_line(text, section, key))

    for section in parser.sections():
        if section not in _KEYS:
            raise ConfigFileError(section, "unknown section", _section_line(text, section))
        for key in parser[section]:
            if key not in _KEYS[section]:
                fail(section, key, "unknown key")

    def get(section, key, convert):
        if parser.has_option(section, key):
            raw = parser.get(section, key)
        elif key in _DEFAULTS.get(section, {}):
            raw = _DEFAULTS[section][key]
        else:
            fail(section, key, "required key missing")
        try:
            return convert(raw)
        except ValueError as exc:
            fail(section, key, f"cannot parse {raw!r} ({exc})")

    sources = get("system", "sources", int)
    sensors = get("system", "sensors", int)
    rates = get("system", "lambda", _floats)
    probs_raw = get("system", "obs_probs", str).strip()
    if probs_raw.lower() == "half-power":
        obs_probs = half_power_probs(sensors, sources)
    else:
        obs_probs = get("system", "obs_probs", _matrix)
        if obs_probs.shape != (sensors, sources):
            fail("system", "obs_probs",
                 f"matrix is {obs_probs.shape[0]}x{obs_probs.shape[-1]}, "
                 f"expected {sensors}x{sources}")

    try:
        config = SystemConfig(
            sources, sensors, rates, obs_probs,
            horizon=get("run", "horizon", int),
            warmup=get("run", "warmup", int),
            seed=get("run", "seed", int),
        )
    except ConfigurationError as exc:
        section = "system" if exc.field in ("rates", "obs_probs", "num_sources", "num_sensors") else "run"
        key = {"rates": "lambda", "num_sources": "sources", "num_sensors": "sensors"}.get(exc.field, exc.field)
        fail(section, key, str(exc).split(": ", 1)[-1])

    kinds = [k.strip() for k in get("policy", "kind", str).split(",") if k.strip()]
    policies = []
    for kind in kinds:
        try:
            kind = PolicyKind(kind)
        except ValueError:
            fail("policy", "kind", f"unknown policy {kind!r}")
        if kind is PolicyKind.EGREEDY:
            policies.append(make_policy(
                kind,
                alpha=get("egreedy", "alpha", float),
                explore_slots=get("egreedy", "explore_slots", int),
                epsilon_explore=get("egreedy", "epsilon_explore", float),
                epsilon_exploit=get("egreedy", "epsilon_exploit", float),
            ))
            try:
                policies[-1].bandit_config
            except ConfigurationError as exc:
                key = "alpha" if exc.field == "step_size" else exc.field
                fail("egreedy", key, str(exc).split(": ", 1)[-1])
        else:
            policies.append(make_policy(kind))

    sweep = get("sweep", "lambda", _floats) if parser.has_option("sweep", "lambda") else None
    try:
        return ExperimentSpec(
            config,
            policies,
            replications=get("run", "replications", int),
            lambda_sweep=sweep,
            sample_stride=get("run", "sample_stride", int),
        )
    except ConfigurationError as exc:
        section, key = ("sweep", "lambda") if exc.field == "lambda_sweep" else ("run", exc.field)
        fail(section, key, str(exc).split(": ", 1)[-1])


def parse_config(path):
    """Read and validate an experiment config file."""
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def _fmt(value):
    value = float(value)
    if math.isnan(value):
        return "nan"
    return repr(value)


def format_config(spec):
    """Canonical config text that parses back to ``spec``."""
    cfg = spec.config
    lines = ["[system]", f"sources = {cfg.num_sources}", f"sensors = {cfg.num_sensors}"]
    lines.append("lambda = " + ", ".join(_fmt(r) for r in cfg.rates))
    if np.array_equal(cfg.obs_probs, half_power_probs(cfg.num_sensors, cfg.num_sources)):
        lines.append("obs_probs = half-power")
    else:
        rows = ["    " + ", ".join(_fmt(v) for v in row) for row in cfg.obs_probs]
        lines.append("obs_probs =\n" + "\n".join(rows))
    lines += [
        "",
        "[run]",
        f"horizon = {cfg.horizon}",
        f"warmup = {cfg.warmup}",
        f"replications = {spec.replications}",
        f"sample_stride = {spec.sample_stride}",
        f"seed = {cfg.seed}",
        "",
        "[policy]",
        "kind = " + ", ".join(p.kind.value for p in spec.policies),
    ]
    greedy = [p for p in spec.policies if p.kind is PolicyKind.EGREEDY]
    if greedy:
        p = greedy[0]
        lines += [
            "",
            "[egreedy]",
            f"alpha = {_fmt(p.alpha)}",
            f"explore_slots = {p.explore_slots}",
            f"epsilon_explore = {_fmt(p.epsilon_explore)}",
            f"epsilon_exploit = {_fmt(p.epsilon_exploit)}",
        ]
    if spec.lambda_sweep is not None:
        lines += ["", "[sweep]", "lambda = " + ", ".join(_fmt(v) for v in spec.lambda_sweep)]
    return "\n".join(lines) + "\n"


def _write_csv(path, header, rows):
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc
    return path


def _canonical(summaries, policy_order):
    rank = {kind: i for i, kind in enumerate(policy_order)}

    def key(s):
        lam = -math.inf if math.isnan(s.lam) else s.lam
        return rank.get(s.policy, len(rank)), lam, s.seed

    return sorted(summaries, key=key)


def write_results(summaries, out_dir, policy_order=None):
    """Write summary.csv, series.csv and aggregate.csv under ``out_dir``.

    Rows follow ``policy_order`` (default: order of first appearance), then
    ascending lambda, then seed or slot. A ``status`` column is appended to the
    summary only when some cell did not finish.
    """
    os.makedirs(out_dir, exist_ok=True)
    if policy_order is None:
        policy_order = list(dict.fromkeys(s.policy for s in summaries))
    summaries = _canonical(summaries, policy_order)
    with_status = any(s.status != "ok" for s in summaries)

    header = SUMMARY_HEADER + (["status"] if with_status else [])
    rows = []
    for s in summaries:
        row = [s.policy.value, _fmt(s.lam), s.seed, _fmt(s.mean_post_warmup_aoi)]
        rows.append(row + [s.status] if with_status else row)
    paths = [_write_csv(os.path.join(out_dir, "summary.csv"), header, rows)]

    rows = []
    for (policy, lam), series in mean_series(summaries).items():
        rows += [[policy.value, _fmt(lam), int(slot), _fmt(v)] for slot, v in series]
    paths.append(_write_csv(os.path.join(out_dir, "series.csv"), SERIES_HEADER, rows))

    rows = [[a.policy.value, _fmt(a.lam), a.replications, _fmt(a.mean_aoi), _fmt(a.std_aoi),
             a.failed] for a in aggregate(summaries)]
    paths.append(_write_csv(os.path.join(out_dir, "aggregate.csv"), AGGREGATE_HEADER, rows))
    return paths


def write_validation(results, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    rows = [[r.name, _fmt(r.measured), _fmt(r.tolerance), r.status] for r in results]
    return _write_csv(os.path.join(out_dir, "validation.csv"), VALIDATION_HEADER, rows)


def read_summary(path):
    """Rows of a summary.csv as dicts with numeric fields converted."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        row["lambda"] = float(row["lambda"])
        row["seed"] = int(row["seed"])
        row["mean_aoi"] = float(row["mean_aoi"])
    return rows
