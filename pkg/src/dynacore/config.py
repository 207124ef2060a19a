"""INI experiment configuration: schema-validated, round-trippable."""

import configparser
import io
from dataclasses import dataclass, field

from .constants import PhysicalConstants
from .solver import SolverConfig
from .timestepper import TimesteppingConfig


class ConfigError(ValueError):
    pass


_CASES = ("resting-atmosphere", "gaussian-hill")
_VERTICAL = ("uniform", "quadratic")

# section -> key -> (type, default); None default means required
_SCHEMA = {
    "run": {
        "case": (str, None),
        "steps": (int, None),
        "dt": (float, None),
        "output_every": (int, 0),
        "output_dir": (str, "output"),
        "latlon_points": (int, 0),     # per 90 degrees; 0 = 2n default
    },
    "mesh": {
        "n": (int, None),
        "layers": (int, None),
        "z_top": (float, None),
        "vertical": (str, "uniform"),
    },
    "planet": {
        "a": (float, 6371229.0),
        "omega": (float, 7.292e-5),
        "g": (float, 9.80616),
        "gas_constant": (float, 287.05),
        "cp": (float, 1005.0),
        "p0": (float, 1.0e5),
    },
    "timestepping": {
        "alpha": (float, 0.5),
        "n_outer": (int, 2),
        "n_inner": (int, 2),
        "clip_rho": (bool, False),
        "clip_theta": (bool, False),
    },
    "solver": {
        "tolerance": (float, 1.0e-6),
        "max_iterations": (int, 100),
        "levels": (int, 10),
        "smoother_sweeps": (int, 2),
        "smoother_relax": (float, 0.9),
        "restart": (int, 40),
    },
}


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)

    def __getitem__(self, pair):
        return self.values[pair]

    @property
    def constants(self):
        v = self.values
        return PhysicalConstants(
            a=v[("planet", "a")], omega=v[("planet", "omega")],
            g=v[("planet", "g")], R=v[("planet", "gas_constant")],
            cp=v[("planet", "cp")], p0=v[("planet", "p0")])

    def timestepping(self):
        v = self.values
        return TimesteppingConfig(
            dt=v[("run", "dt")], alpha=v[("timestepping", "alpha")],
            n_outer=v[("timestepping", "n_outer")],
            n_inner=v[("timestepping", "n_inner")],
            clip_rho=v[("timestepping", "clip_rho")],
            clip_theta=v[("timestepping", "clip_theta")],
            solver=SolverConfig(
                tolerance=v[("solver", "tolerance")],
                max_iterations=v[("solver", "max_iterations")],
                levels=v[("solver", "levels")],
                smoother_sweeps=v[("solver", "smoother_sweeps")],
                smoother_relax=v[("solver", "smoother_relax")],
                restart=v[("solver", "restart")]))


def _convert(section, key, typ, raw):
    if typ is bool:
        low = raw.strip().lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ConfigError(f"[{section}] {key}: not a boolean: {raw!r}")
    try:
        return typ(raw)
    except ValueError:
        raise ConfigError(
            f"[{section}] {key}: expected {typ.__name__}, got {raw!r}")


def parse_config(text):
    """Parse and validate INI text into an ExperimentConfig."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}")

    values = {}
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key in cp[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            typ, _ = _SCHEMA[section][key]
            values[(section, key)] = _convert(
                section, key, typ, cp[section][key])
    for section, keys in _SCHEMA.items():
        for key, (typ, default) in keys.items():
            if (section, key) not in values:
                if default is None:
                    raise ConfigError(f"missing required [{section}] {key}")
                values[(section, key)] = default

    case = values[("run", "case")]
    if case not in _CASES:
        raise ConfigError(f"case must be one of {_CASES}, got {case!r}")
    if values[("mesh", "vertical")] not in _VERTICAL:
        raise ConfigError(f"vertical must be one of {_VERTICAL}")
    if values[("mesh", "n")] < 3:
        raise ConfigError("mesh n must be >= 3")
    if values[("mesh", "layers")] < 1:
        raise ConfigError("mesh layers must be >= 1")
    if values[("run", "dt")] <= 0:
        raise ConfigError("dt must be positive")
    if values[("run", "steps")] < 0:
        raise ConfigError("steps must be >= 0")
    return ExperimentConfig(values)


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())


def serialize_config(config):
    """Canonical INI text: every key in schema order."""
    cp = configparser.ConfigParser(interpolation=None)
    for section, keys in _SCHEMA.items():
        cp[section] = {}
        for key in keys:
            v = config.values[(section, key)]
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            cp[section][key] = str(v)
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
