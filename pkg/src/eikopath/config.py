"""Experiment configuration: INI-style sections read with :mod:`configparser`.

Example::

    [metric]
    kind = potential-induced
    potential = decaying
    mu = 1.0

    [task]
    name = distance
    x = 3, 4; 10, 0

    [output]
    dir = out
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field

import numpy as np

from . import examples as ex
from . import metric as mt
from .errors import ConfigError, EikopathError

TASKS = ("distance", "geodesic", "shoot", "sweep", "scaling", "eikonal", "verify", "example",
         "acceptance")

METRIC_KEYS = {
    "euclidean": {"dim", "scale"},
    "constant": {"dim", "matrix"},
    "radial": {"dim", "beta", "floor"},
    "potential-induced": {"dim", "potential", "mu", "a", "lam", "sigma", "value", "a0", "a1",
                          "nu", "n_nodes", "r_min", "r_max"},
    "spiral": {"dim", "eps", "sin_coeffs", "cos_coeffs"},
}
PERTURBATION_KEYS = {"perturbation", "perturbation_eps"}


@dataclass
class ExperimentConfig:
    metric: dict
    task: str
    options: dict = field(default_factory=dict)
    out_dir: str = "out"
    seed: int = 0
    workers: int = 1

    def to_dict(self):
        return {"metric": dict(self.metric), "task": self.task, "options": dict(self.options),
                "seed": self.seed, "workers": self.workers}


def _floats(text, key):
    try:
        return [float(t) for t in text.replace(",", " ").split()]
    except ValueError as err:
        raise ConfigError(f"{key}: expected numbers, got {text!r}") from err


def _float(text, key):
    vals = _floats(text, key)
    if len(vals) != 1:
        raise ConfigError(f"{key}: expected one number, got {text!r}")
    return vals[0]


def _int(text, key):
    try:
        return int(text)
    except ValueError as err:
        raise ConfigError(f"{key}: expected an integer, got {text!r}") from err


def parse_points(text, key="x"):
    """``"3, 4; 1, 2"`` -> array of shape (2, 2)."""
    rows = [_floats(r, key) for r in text.split(";") if r.strip()]
    if not rows or len({len(r) for r in rows}) != 1:
        raise ConfigError(f"{key}: rows must be non-empty and of equal length")
    return np.array(rows)


def parse_config(text):
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        cp.read_string(text)
    except configparser.Error as err:
        raise ConfigError(f"malformed config: {err}") from err
    if not cp.has_section("metric"):
        raise ConfigError("missing [metric] section")
    metric = dict(cp["metric"])
    kind = metric.get("kind")
    if kind not in METRIC_KEYS:
        raise ConfigError(f"unknown metric kind {kind!r}; expected one of {sorted(METRIC_KEYS)}")
    unknown = set(metric) - METRIC_KEYS[kind] - PERTURBATION_KEYS - {"kind"}
    if unknown:
        raise ConfigError(f"unknown keys for metric kind {kind!r}: {sorted(unknown)}")
    task_sec = dict(cp["task"]) if cp.has_section("task") else {}
    task = task_sec.pop("name", "distance")
    out = cp.get("output", "dir", fallback="out")
    seed = _int(cp.get("run", "seed", fallback="0"), "seed")
    workers = _int(cp.get("run", "workers", fallback="1"), "workers")
    cfg = ExperimentConfig(metric, task, task_sec, out, seed, workers)
    validate(cfg)
    return cfg


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    return parse_config(text)


def validate(cfg):
    from .acceptance import NAMES
    if cfg.task not in TASKS and cfg.task not in NAMES:
        raise ConfigError(f"unknown task {cfg.task!r}; expected one of "
                          f"{list(TASKS) + sorted(NAMES)}")
    if not 0 <= cfg.seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if cfg.workers < 1:
        raise ConfigError("workers must be positive")
    build_metric(cfg.metric)


def potential_from(section):
    kind = section.get("potential", "decaying")
    lam = _float(section.get("lam", "0"), "lam")
    if kind == "decaying":
        mu = _float(section.get("mu", "1"), "mu")
        sigma = section.get("sigma")
        return ex.RadialPotential.decaying(mu=mu, A=_float(section.get("a", "1"), "a"), lam=lam,
                                           sigma=None if sigma is None else _float(sigma, "sigma"))
    if kind == "constant":
        return ex.RadialPotential.constant(_float(section.get("value", "-0.5"), "value"), lam=lam)
    if kind == "two-term":
        return ex.RadialPotential.two_term(_float(section.get("a0", "0.5"), "a0"),
                                           _float(section.get("a1", "0.5"), "a1"),
                                           _float(section.get("nu", "1"), "nu"), lam=lam,
                                           sigma=_float(section.get("sigma", "1"), "sigma"))
    raise ConfigError(f"unknown potential {kind!r}; expected decaying, constant or two-term")


def spiral_config_from(section):
    return ex.SpiralConfig(eps=_float(section.get("eps", "0.05"), "eps"),
                           cos_coeffs=tuple(_floats(section.get("cos_coeffs", ""), "cos_coeffs")),
                           sin_coeffs=tuple(_floats(section.get("sin_coeffs", "1"), "sin_coeffs")))


def build_metric(section):
    """Construct the :class:`~eikopath.metric.MetricField` described by a
    ``[metric]`` section."""
    kind = section.get("kind")
    d = _int(section.get("dim", "2"), "dim")
    if d < 2:
        raise ConfigError("dim must be at least 2")
    try:
        if kind == "euclidean":
            G = mt.euclidean(d, _float(section.get("scale", "1"), "scale"))
        elif kind == "constant":
            M = np.array(_floats(section.get("matrix", ""), "matrix"))
            if M.size != d * d:
                raise ConfigError(f"matrix must have {d * d} entries")
            G = mt.constant_metric(M.reshape(d, d))
        elif kind == "radial":
            G = mt.radial_block_metric(mt.BracketProfile(_float(section.get("beta", "0.5"), "beta"),
                                                         _float(section.get("floor", "0.5"), "floor")),
                                       d, name="radial-bracket")
        elif kind == "potential-induced":
            G = ex.build_induced_metric(potential_from(section), d,
                                        n_nodes=_int(section.get("n_nodes", "10000"), "n_nodes"),
                                        r_min=_float(section.get("r_min", "1e-3"), "r_min"),
                                        r_max=_float(section.get("r_max", "1e5"), "r_max"))
        elif kind == "spiral":
            if d != 2:
                raise ConfigError("the spiral metric is two-dimensional")
            G = ex.build_spiral_metric(spiral_config_from(section))
        else:
            raise ConfigError(f"unknown metric kind {kind!r}")
    except ConfigError:
        raise
    except (ValueError, ArithmeticError, EikopathError) as err:
        raise ConfigError(f"invalid metric parameters: {err}") from err
    if "perturbation" in section:
        from .analysis import perturbation_shape
        eps = _float(section.get("perturbation_eps", "0.05"), "perturbation_eps")
        try:
            G = mt.perturbed(G, perturbation_shape(section["perturbation"], d), eps)
        except ValueError as err:
            raise ConfigError(str(err)) from err
    return G
