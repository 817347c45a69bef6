"""Experiment configuration: INI parsing, validation and seed derivation.

A configuration file has sections ``run``, ``environment``, ``theta``,
``tolerances``, ``corrector``, ``figure1``, ``montecarlo`` and ``pde``.
Every key is optional; unknown sections or keys are errors.
"""

import configparser
import dataclasses
import hashlib
import json
import math
import os
import zlib
from dataclasses import dataclass, field as dc_field

import numpy as np

from ._validation import ConfigurationError

FORMAT_VERSION = 1
OUTPUT_ENV_VAR = "HJHOMOG_OUTPUT_DIR"
ENV_PROCESSES = ("poisson", "wiener", "periodic", "constant")


def _floats(text):
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).replace(";", ",").split(",") if v.strip()]


def _opt_float(text):
    if text is None:
        return None
    if isinstance(text, (int, float)):
        return float(text)
    low = str(text).strip().lower()
    return None if low in ("", "auto", "none") else float(low)


@dataclass
class ExperimentConfig:
    """Resolved experiment settings.

    Field names are ``<section>_<key>`` for every INI key; see :data:`SCHEMA`.
    """

    # run
    format_version: int = FORMAT_VERSION
    seed: int = 20240601
    output_dir: str = "hjhomog-out"
    n_jobs: int = 1
    # environment
    env_process: str = "poisson"
    env_seed: int | None = None
    env_rate: float = 1.0
    env_period: float = 2.0
    env_level: float = 1.0
    env_kernel_radius: float = 1.0
    env_kernel_shape: str = "cos2"
    env_window: list = dc_field(default_factory=lambda: [-300.0, 300.0])
    env_grid_step: float = 0.05
    # model
    beta: float = 1.0
    c: float = 1.0
    # theta grid
    theta_min: float = -4.0
    theta_max: float = 4.0
    theta_count: int = 81
    # tolerances
    tol_lambda: float = 1e-4
    tol_root: float = 1e-8
    tol_u: float = 1e-6
    tol_ode: float = 1e-2
    tol_cvx: float = 1e-4
    # corrector
    max_buffer: float = 40.0
    min_window: float = 200.0
    # figure 1
    weak_pair: list = dc_field(default_factory=lambda: [1.0, 1.0])
    strong_pair: list = dc_field(default_factory=lambda: [1.0, 2.0])
    witness_thetas: list = dc_field(default_factory=lambda: [0.0, 3.0])
    # Monte Carlo
    mc_t: float = 20.0
    mc_dt: float = 1e-3
    mc_n_paths: int = 20000
    mc_batches: int = 16
    mc_tilt: float | None = None
    mc_resample: str = "auto"
    # PDE
    pde_epsilons: list = dc_field(default_factory=lambda: [0.25, 0.125, 0.0625])
    pde_dx_factor: float = 8.0
    pde_dt: float | None = None
    pde_R: float = 1.0
    pde_T: float = 1.0
    pde_gap: float = 0.05
    pde_thetas: list = dc_field(default_factory=lambda: [0.0, 1.0, 2.0])

    def __post_init__(self):
        self.validate()

    # ------------------------------------------------------------------ validation
    def validate(self):
        if self.format_version != FORMAT_VERSION:
            raise ConfigurationError(
                f"format_version {self.format_version} unsupported (expected {FORMAT_VERSION})")
        if self.env_process not in ENV_PROCESSES:
            raise ConfigurationError(f"environment process must be one of {ENV_PROCESSES}")
        if not 0 <= int(self.seed) < 2 ** 63:
            raise ConfigurationError("seed must be a nonnegative 63-bit integer")
        for name in ("tol_lambda", "tol_root", "tol_ode", "tol_cvx"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        # tol_u = 0 is accepted: it is the forced-failure setting of the band check
        if not self.tol_u >= 0:
            raise ConfigurationError("tol_u must be nonnegative")
        positive = ("env_rate", "env_period", "env_kernel_radius", "env_grid_step", "beta",
                    "max_buffer", "min_window", "mc_t", "mc_dt", "pde_dx_factor", "pde_R",
                    "pde_T", "pde_gap")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if not self.c >= 0:
            raise ConfigurationError("c must be nonnegative")
        if not 0 <= self.env_level <= 1:
            raise ConfigurationError("environment level must lie in [0, 1]")
        if len(self.env_window) != 2 or not self.env_window[0] < self.env_window[1]:
            raise ConfigurationError("environment window must be 'lo, hi' with lo < hi")
        if self.theta_count < 2 or not self.theta_min < self.theta_max:
            raise ConfigurationError("theta grid needs theta_min < theta_max and count >= 2")
        if self.mc_n_paths < self.mc_batches or self.mc_batches < 16:
            raise ConfigurationError("montecarlo needs batches >= 16 and n_paths >= batches")
        if self.n_jobs < 1:
            raise ConfigurationError("n_jobs must be at least 1")
        if self.mc_resample not in ("auto", "on", "off"):
            raise ConfigurationError("montecarlo resample must be auto, on or off")
        for name in ("weak_pair", "strong_pair"):
            pair = getattr(self, name)
            if len(pair) != 2 or pair[0] <= 0 or pair[1] < 0:
                raise ConfigurationError(f"{name} must be 'beta, c' with beta > 0, c >= 0")
        if not self.pde_epsilons or min(self.pde_epsilons) <= 0:
            raise ConfigurationError("pde epsilons must be a nonempty list of positives")
        if self.pde_dt is not None and not self.pde_dt > 0:
            raise ConfigurationError("pde dt must be positive or auto")
        return self

    # ------------------------------------------------------------------ derived values
    @property
    def theta_grid(self):
        return np.linspace(self.theta_min, self.theta_max, int(self.theta_count))

    @property
    def environment_seed(self):
        return int(self.env_seed) if self.env_seed is not None else derive_seed(
            self.seed, "environment")

    def derived_seed(self, label, index=0):
        return derive_seed(self.seed, label, index)

    @property
    def resample(self):
        return {"auto": None, "on": True, "off": False}[self.mc_resample]

    def resolved_output_dir(self):
        return os.environ.get(OUTPUT_ENV_VAR) or self.output_dir

    def solver_kwargs(self):
        return {"tol_root": self.tol_root, "max_buffer": self.max_buffer,
                "min_window": self.min_window}

    def build_field(self):
        from .environment import KernelSpec, generate_constant, generate_mollified, \
            generate_periodic
        window = tuple(self.env_window)
        if self.env_process == "periodic":
            return generate_periodic(self.env_period, window, self.env_grid_step)
        if self.env_process == "constant":
            return generate_constant(self.env_level, window, self.env_grid_step)
        kernel = KernelSpec(radius=self.env_kernel_radius, shape=self.env_kernel_shape)
        return generate_mollified(self.environment_seed, self.env_process, self.env_rate,
                                  kernel, window, self.env_grid_step)

    # ------------------------------------------------------------------ serialization
    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigurationError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)

    def replace(self, **changes):
        return self.from_dict({**self.to_dict(), **changes})

    def fingerprint(self):
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()

    def to_ini(self):
        cp = configparser.ConfigParser(interpolation=None)
        for section, keys in SCHEMA.items():
            cp[section] = {}
            for key, (attr, _) in keys.items():
                value = getattr(self, attr)
                if value is None:
                    text = "auto"
                elif isinstance(value, list):
                    text = ", ".join(repr(float(v)) for v in value)
                elif isinstance(value, float):
                    text = repr(value)
                else:
                    text = str(value)
                cp[section][key] = text
        lines = []
        for section in cp.sections():
            lines.append(f"[{section}]")
            lines.extend(f"{k} = {v}" for k, v in cp[section].items())
            lines.append("")
        return "\n".join(lines)

    @classmethod
    def from_ini(cls, text, overrides=None):
        """Parse INI text; ``overrides`` maps ``section.key`` to raw strings."""
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigurationError(f"malformed config: {exc}") from exc
        raw = {}
        for section in cp.sections():
            if section not in SCHEMA:
                raise ConfigurationError(f"unknown config section [{section}]")
            for key, value in cp[section].items():
                raw[f"{section}.{key}"] = value
        raw.update(overrides or {})
        values = {}
        for dotted, value in raw.items():
            section, _, key = dotted.partition(".")
            if section not in SCHEMA or key not in SCHEMA[section]:
                raise ConfigurationError(f"unknown config key {dotted!r}")
            attr, conv = SCHEMA[section][key]
            try:
                values[attr] = conv(value)
            except (TypeError, ValueError) as exc:
                raise ConfigurationError(f"bad value for {dotted}: {value!r} ({exc})") from exc
        return cls(**values)

    @classmethod
    def from_file(cls, path, overrides=None):
        with open(path, encoding="utf-8") as fh:
            return cls.from_ini(fh.read(), overrides)


def _int(text):
    value = float(text)
    if not math.isfinite(value) or value != int(value):
        raise ValueError("expected an integer")
    return int(value)


def _opt_int(text):
    if text is None:
        return None
    low = str(text).strip().lower()
    return None if low in ("", "auto", "none") else _int(low)


SCHEMA = {
    "run": {"format_version": ("format_version", _int), "seed": ("seed", _int),
            "output_dir": ("output_dir", str), "n_jobs": ("n_jobs", _int)},
    "environment": {"process": ("env_process", str), "seed": ("env_seed", _opt_int),
                    "rate": ("env_rate", float), "period": ("env_period", float),
                    "level": ("env_level", float),
                    "kernel_radius": ("env_kernel_radius", float),
                    "kernel_shape": ("env_kernel_shape", str),
                    "window": ("env_window", _floats),
                    "grid_step": ("env_grid_step", float)},
    "model": {"beta": ("beta", float), "c": ("c", float)},
    "theta": {"min": ("theta_min", float), "max": ("theta_max", float),
              "count": ("theta_count", _int)},
    "tolerances": {"tol_lambda": ("tol_lambda", float), "tol_root": ("tol_root", float),
                   "tol_u": ("tol_u", float), "tol_ode": ("tol_ode", float),
                   "tol_cvx": ("tol_cvx", float)},
    "corrector": {"max_buffer": ("max_buffer", float), "min_window": ("min_window", float)},
    "figure1": {"weak_pair": ("weak_pair", _floats), "strong_pair": ("strong_pair", _floats),
                "witness_thetas": ("witness_thetas", _floats)},
    "montecarlo": {"t": ("mc_t", float), "dt": ("mc_dt", float),
                   "n_paths": ("mc_n_paths", _int), "batches": ("mc_batches", _int),
                   "tilt": ("mc_tilt", _opt_float), "resample": ("mc_resample", str)},
    "pde": {"epsilons": ("pde_epsilons", _floats), "dx_factor": ("pde_dx_factor", float),
            "dt": ("pde_dt", _opt_float), "r": ("pde_R", float), "t": ("pde_T", float),
            "gap": ("pde_gap", float), "thetas": ("pde_thetas", _floats)},
}


def derive_seed(seed, label, index=0):
    """64-bit child seed for component ``label`` and ``index`` of a top-level seed."""
    key = (zlib.crc32(label.encode()), int(index))
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
