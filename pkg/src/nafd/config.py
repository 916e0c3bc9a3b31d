"""Key/value configuration files (YAML or JSON).

Top-level sections and their keys::

    system:       SystemConfig fields (M, N_U, N_D, K_U, K_D, P, p_ul,
                  sigma2_ul, sigma2_dl, alpha, tau2_ul, tau2_dl, tau2_I)
                  plus snr_dl_db / snr_ul_db, which set P and p_ul from the
                  noise variances; alpha may be "auto" (optimal for the DE).
    correlation:  gain, gain_I, gain_uu, rho       (uniform correlation sets)
    geometry:     GeometryScenario fields; when present, correlations come
                  from seeded user layouts instead of the uniform set.
    ga:           GaParams fields (population, iterations, crossover,
                  mutation, elitism, seed).
    schedule:     K_U_all, K_D_all (waiting users for scheduling runs).
    experiment:   kind, sweep, trials, seed, emit, cases, precoders, modes,
                  exhaustive.
"""

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .errors import ConfigurationError
from .model import GeometryScenario, SystemConfig, db2lin
from .scheduler import GaParams

KINDS = ("validate_de_dl", "validate_de_ul", "compare_duplex",
         "compare_precoders", "schedule_compare")

SYSTEM_KEYS = {f.name for f in fields(SystemConfig)} | {"snr_dl_db", "snr_ul_db"}
CORRELATION_KEYS = {"gain", "gain_I", "gain_uu", "rho"}
GEOMETRY_KEYS = {f.name for f in fields(GeometryScenario)}
GA_KEYS = {f.name for f in fields(GaParams)}
SCHEDULE_KEYS = {"K_U_all", "K_D_all"}
EXPERIMENT_KEYS = {"kind", "sweep", "trials", "seed", "emit", "cases", "precoders",
                   "modes", "exhaustive", "out"}
SECTIONS = {"system": SYSTEM_KEYS, "correlation": CORRELATION_KEYS,
            "geometry": GEOMETRY_KEYS, "ga": GA_KEYS, "schedule": SCHEDULE_KEYS,
            "experiment": EXPERIMENT_KEYS}


@dataclass(frozen=True)
class Sweep:
    """Inclusive grid ``FROM:STEP:TO`` over one system key."""

    axis: str
    start: float
    step: float
    stop: float

    def __post_init__(self):
        if self.axis not in SYSTEM_KEYS:
            raise ConfigurationError(f"unknown sweep axis {self.axis!r}", "experiment.sweep")
        if self.step == 0 or (self.stop - self.start) * self.step < 0:
            raise ConfigurationError("sweep bounds must be ordered along the step",
                                     "experiment.sweep")

    @classmethod
    def parse(cls, text):
        """Parse ``AXIS=FROM:STEP:TO`` (a single value ``AXIS=V`` is allowed)."""
        try:
            axis, rng = text.split("=", 1)
            parts = [float(x) for x in rng.split(":")]
        except ValueError:
            raise ConfigurationError(f"cannot parse sweep {text!r}", "experiment.sweep") from None
        if len(parts) == 1:
            parts = [parts[0], 1.0, parts[0]]
        if len(parts) != 3:
            raise ConfigurationError("expected AXIS=FROM:STEP:TO", "experiment.sweep")
        return cls(axis.strip(), *parts)

    def values(self):
        n = int(round((self.stop - self.start) / self.step)) if self.stop != self.start else 0
        out = [self.start + i * self.step for i in range(n + 1)]
        return [round(v, 12) for v in out]

    def __str__(self):
        return f"{self.axis}={self.start:g}:{self.step:g}:{self.stop:g}"


@dataclass
class ExperimentSpec:
    """What to run, over which grid, and where to write it."""

    kind: str
    sweep: Sweep = None
    trials: int = 10_000
    seed: int = 0
    out: str = None
    emit: str = "csv"
    cases: list = field(default_factory=lambda: [{}])
    precoders: tuple = ("rzf", "zf")
    modes: tuple = ("NAFD", "CCFD_CRAN", "CCFD_MASSIVE")
    exhaustive: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown experiment kind {self.kind!r}", "experiment.kind")
        if int(self.trials) < 1:
            raise ConfigurationError("must be >= 1", "experiment.trials")
        if self.emit not in ("csv", "json"):
            raise ConfigurationError("must be csv or json", "experiment.emit")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigurationError("must be an unsigned 64-bit integer", "experiment.seed")
        if isinstance(self.sweep, str):
            self.sweep = Sweep.parse(self.sweep)
        for i, c in enumerate(self.cases):
            if not isinstance(c, dict):
                raise ConfigurationError("each case must be a mapping", f"experiment.cases[{i}]")
            bad = set(c) - SYSTEM_KEYS - {"rho", "name"}
            if bad:
                raise ConfigurationError(f"unknown keys {sorted(bad)}", f"experiment.cases[{i}]")


def load_tree(path):
    """Read a YAML or JSON file into a dict."""
    p = Path(path)
    text = p.read_text()
    try:
        tree = json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
    except (ValueError, yaml.YAMLError) as exc:
        raise ConfigurationError(f"cannot parse {p}: {exc}") from None
    tree = tree or {}
    if not isinstance(tree, dict):
        raise ConfigurationError("top level must be a mapping")
    return tree


def check_tree(tree):
    """Reject unknown sections and keys, reporting their dotted paths."""
    for sec, val in tree.items():
        if sec not in SECTIONS:
            raise ConfigurationError("unknown section", sec)
        if not isinstance(val, dict):
            raise ConfigurationError("section must be a mapping", sec)
        for k in val:
            if k not in SECTIONS[sec]:
                raise ConfigurationError("unknown key", f"{sec}.{k}")
    return tree


def merge(base, over):
    """Recursive dict merge; ``over`` wins."""
    out = dict(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = v
    return out


def build_system(values):
    """SystemConfig from a ``system`` section (alpha "auto" becomes 1.0).

    Returns
    -------
    config : SystemConfig
    auto_alpha : bool
    """
    v = dict(values)
    auto = v.get("alpha", "auto") == "auto"
    v["alpha"] = 1.0 if auto else v["alpha"]
    s2dl = float(v.get("sigma2_dl", 1.0))
    s2ul = float(v.get("sigma2_ul", 1.0))
    if "snr_dl_db" in v:
        v["P"] = float(db2lin(v.pop("snr_dl_db"))) * s2dl
    if "snr_ul_db" in v:
        v["p_ul"] = float(db2lin(v.pop("snr_ul_db"))) * s2ul
    try:
        return SystemConfig(**v), auto
    except ConfigurationError as exc:
        raise ConfigurationError(str(exc).split(": ", 1)[-1],
                                 f"system.{exc.path}" if exc.path else "system") from None
    except TypeError as exc:
        raise ConfigurationError(str(exc), "system") from None


def build_geometry_scenario(values, mode=None):
    v = dict(values)
    if mode is not None:
        v["mode"] = mode
    try:
        return GeometryScenario(**v)
    except ConfigurationError as exc:
        raise ConfigurationError(str(exc).split(": ", 1)[-1], f"geometry.{exc.path}") from None


def build_ga(values):
    try:
        return GaParams(**values)
    except ConfigurationError as exc:
        raise ConfigurationError(str(exc).split(": ", 1)[-1], f"ga.{exc.path}") from None
