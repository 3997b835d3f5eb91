"""Run configuration read from an INI file.

Example::

    [geometry]
    a = 1.0
    ls = 1.0

    [ensemble]
    log2_kT_over_E0 = 4 5 6 7 8

Every section and key is optional; missing entries take the desk-scale defaults.
"""
from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .geometry import BilliardGeometry, UnitSystem


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass
class RunConfig:
    a: float = 1.0
    ls: float = 1.0
    m: float = 0.5
    hbar: float = 1.0
    h: float = 0.005
    n_basis: int = 1200
    n_keep: int = 1000
    order: int = 4
    ghost: bool = True
    log2_kT: list = field(default_factory=lambda: [4.0, 5.0, 6.0, 7.0, 8.0])
    ell_min: float = 0.0
    ell_max: float = 25.0
    n_times: int = 200
    n_samples: int = 1_000_000
    seed: int = 12345
    n_blocks: int = 100
    growth_window: tuple = (0.4, 1.5)
    compare_window: tuple = (0.0, 2.0)
    saturation_tail: float = 0.2
    lambda_g: float = 0.425
    lyap_n_traj: int = 200
    lyap_length: float = 2000.0
    lyap_renorm: float = 1.0
    n_orbits: int = 8
    p_max: int = 3
    orbit_seed: int = 0
    nu_override: dict = field(default_factory=dict)
    output_dir: str = "results"

    def __post_init__(self):
        self.validate()

    # -- derived ------------------------------------------------------------
    @property
    def geometry(self) -> BilliardGeometry:
        return BilliardGeometry(a=self.a, ls=self.ls)

    @property
    def units(self) -> UnitSystem:
        return UnitSystem(self.m, self.hbar)

    @property
    def kT_values(self) -> np.ndarray:
        return self.units.e0(self.a) * 2.0 ** np.asarray(self.log2_kT, float)

    @property
    def ell_grid(self) -> np.ndarray:
        return np.linspace(self.ell_min, self.ell_max, self.n_times) * self.a

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def validate(self) -> None:
        def need(cond, name, msg):
            if not cond:
                raise ConfigError(f"{name}: {msg}")

        for name in ("a", "m", "hbar", "h", "lambda_g", "lyap_length", "lyap_renorm"):
            need(getattr(self, name) > 0, name, "must be positive")
        need(self.ls >= 0, "ls", "must be non-negative")
        need(self.n_basis > 0, "n_basis", "must be positive")
        need(0 < self.n_keep <= self.n_basis, "n_keep", "must satisfy 0 < n_keep <= n_basis")
        need(self.order in (2, 4), "order", "must be 2 or 4")
        need(len(self.log2_kT) > 0, "log2_kT_over_E0", "temperature grid is empty")
        need(self.n_times >= 2, "points", "need at least two time points")
        need(0 <= self.ell_min < self.ell_max, "ell_max", "need 0 <= ell_min < ell_max")
        need(self.n_samples >= 2 * self.n_blocks, "n_samples", "need two samples per block")
        need(self.n_blocks >= 2, "blocks", "need at least two blocks")
        need(self.growth_window[0] < self.growth_window[1], "growth_window", "must be increasing")
        need(0 < self.saturation_tail < 1, "saturation_tail", "must lie in (0, 1)")
        need(self.lyap_n_traj >= 10, "n_traj", "must be at least 10")
        need(self.p_max >= 1, "p_max", "must be at least 1")

    # -- io -----------------------------------------------------------------
    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config: file {path} not found")
        cp = configparser.ConfigParser()
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"config: {exc}") from exc
        return cls.from_parser(cp)

    @classmethod
    def from_string(cls, text: str) -> "RunConfig":
        cp = configparser.ConfigParser()
        cp.read_string(text)
        return cls.from_parser(cp)

    @classmethod
    def from_parser(cls, cp: configparser.ConfigParser) -> "RunConfig":
        kw = {}
        spec = {
            "geometry": {"a": ("a", float), "ls": ("ls", float)},
            "units": {"m": ("m", float), "hbar": ("hbar", float)},
            "solver": {"h": ("h", float), "n_basis": ("n_basis", int), "n_keep": ("n_keep", int),
                       "order": ("order", int), "ghost": ("ghost", _bool)},
            "ensemble": {"log2_kt_over_e0": ("log2_kT", _floats)},
            "time": {"ell_min": ("ell_min", float), "ell_max": ("ell_max", float),
                     "points": ("n_times", int)},
            "mc": {"n_samples": ("n_samples", int), "seed": ("seed", int), "blocks": ("n_blocks", int)},
            "fits": {"growth_window": ("growth_window", _pair), "compare_window": ("compare_window", _pair),
                     "saturation_tail": ("saturation_tail", float), "lambda_g": ("lambda_g", float)},
            "lyapunov": {"n_traj": ("lyap_n_traj", int), "total_length": ("lyap_length", float),
                         "renorm_length": ("lyap_renorm", float)},
            "orbits": {"n_orbits": ("n_orbits", int), "p_max": ("p_max", int), "seed": ("orbit_seed", int)},
            "output": {"dir": ("output_dir", str)},
        }
        for section in cp.sections():
            if section not in spec:
                raise ConfigError(f"[{section}]: unknown section")
            for key, raw in cp.items(section):
                if section == "orbits" and key.startswith("nu."):
                    kw.setdefault("nu_override", {})[key[3:]] = _conv(section, key, raw, int)
                    continue
                if key not in spec[section]:
                    raise ConfigError(f"[{section}] {key}: unknown key")
                name, conv = spec[section][key]
                kw[name] = _conv(section, key, raw, conv)
        try:
            return cls(**kw)
        except ConfigError as exc:
            raise ConfigError(f"config {exc}") from None


def _conv(section, key, raw, conv):
    try:
        return conv(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} ({exc})") from None


def _floats(s: str) -> list:
    return [float(x) for x in s.replace(",", " ").split()]


def _pair(s: str) -> tuple:
    v = _floats(s)
    if len(v) != 2:
        raise ValueError("expected two numbers")
    return tuple(v)


def _bool(s: str) -> bool:
    t = s.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


DEFAULT_CONFIG = """\
[geometry]
a = 1.0
ls = 1.0

[units]
m = 0.5
hbar = 1.0

[solver]
h = 0.005
n_basis = 1200
n_keep = 1000

[ensemble]
log2_kT_over_E0 = 4 5 6 7 8

[time]
ell_min = 0
ell_max = 25
points = 200

[mc]
n_samples = 1000000
seed = 12345
blocks = 100

[fits]
growth_window = 0.4 1.5
compare_window = 0 2
saturation_tail = 0.2
lambda_g = 0.425

[lyapunov]
n_traj = 200
total_length = 2000
renorm_length = 1

[orbits]
n_orbits = 8
p_max = 3
seed = 0

[output]
dir = results
"""
