"""Experiment configuration: one INI file drives every pipeline stage.

Sections cover the front-end, GMM back-end, band grid, fusion options,
metric costs, seeds and optional default paths. Unknown sections or keys
are rejected up front; every command can emit the fully resolved
configuration next to its outputs, and the hash of that resolved text tags
all derived files.
"""

import configparser
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .frontend import FrontendConfig
from .fusion import LogisticOptions, SvmOptions
from .gmm import EmOptions
from .metrics import TdcfCosts
from .subband import BandGrid
from .util import stable_hash

_SCHEMA = {
    "frontend": {
        "window_ms": (float, 30.0),
        "hop_ms": (float, 15.0),
        "n_fft": (int, 1024),
        "n_filters": (int, 70),
        "f_min": (float, 0.0),
        "f_max": (float, 8000.0),
        "n_ceps": (int, 20),
        "delta_context": (int, 2),
    },
    "gmm": {
        "k": (int, 512),
        "max_iters": (int, 100),
        "tol": (float, 1e-5),
        "variance_floor": (float, 1e-3),
        "kmeans_iters": (int, 10),
    },
    "grid": {
        "cut_in": (str, "0:8000:21"),
        "cut_off": (str, "0:8000:21"),
        "min_width_hz": (float, 800.0),
    },
    "fusion": {
        "gmm_k": (int, 64),
        "svm_degree": (int, 7),
        "svm_c": (float, 1.0),
        "svm_gamma": (str, "auto"),
        "svm_coef0": (float, 1.0),
        "prior": (float, 0.5),
        "ridge": (float, 1e-6),
    },
    "metrics": {
        "c_miss": (float, 1.0),
        "c_fa": (float, 10.0),
    },
    "seeds": {
        "seed": (int, 0),
    },
    "paths": {
        "audio_dir": (str, ""),
        "cache_dir": (str, ""),
        "work_dir": (str, ""),
    },
}


def parse_candidates(text: str) -> np.ndarray:
    """Grid candidates: either `start:stop:count` or a comma list of Hz values."""
    text = text.strip()
    try:
        if ":" in text:
            start, stop, count = text.split(":")
            return np.linspace(float(start), float(stop), int(count))
        return np.array([float(v) for v in text.split(",") if v.strip()])
    except ValueError as exc:
        raise ConfigurationError(f"bad grid candidates {text!r}: {exc}") from exc


@dataclass(frozen=True)
class ExperimentConfig:
    values: dict = field(default_factory=dict)   # section -> key -> typed value

    @classmethod
    def defaults(cls) -> "ExperimentConfig":
        return cls({s: {k: d for k, (_, d) in keys.items()} for s, keys in _SCHEMA.items()})

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        parser = configparser.ConfigParser()
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except (configparser.Error, OSError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        values = {s: {k: d for k, (_, d) in keys.items()} for s, keys in _SCHEMA.items()}
        for section in parser.sections():
            if section not in _SCHEMA:
                raise ConfigurationError(f"{path}: unknown config section [{section}]")
            for key, raw in parser.items(section):
                if key not in _SCHEMA[section]:
                    raise ConfigurationError(f"{path}: unknown key {key!r} in [{section}]")
                typ = _SCHEMA[section][key][0]
                try:
                    values[section][key] = typ(raw)
                except ValueError as exc:
                    raise ConfigurationError(
                        f"{path}: [{section}] {key} = {raw!r} is not a valid {typ.__name__}"
                    ) from exc
        config = cls(values)
        config.validate()
        return config

    def validate(self) -> None:
        """Build every derived object once so bad combinations fail early."""
        self.frontend()
        self.em_options()
        self.grid()
        self.costs()
        self.svm_options()
        self.logistic_options()
        if self.values["gmm"]["k"] < 1 or self.values["fusion"]["gmm_k"] < 1:
            raise ConfigurationError("mixture sizes must be >= 1")

    # ----- derived objects -------------------------------------------------

    def frontend(self) -> FrontendConfig:
        f = self.values["frontend"]
        return FrontendConfig(
            window_ms=f["window_ms"],
            hop_ms=f["hop_ms"],
            n_fft=f["n_fft"],
            n_filters=f["n_filters"],
            f_min=f["f_min"],
            f_max=f["f_max"],
            n_ceps=f["n_ceps"],
            delta_context=f["delta_context"],
        )

    def em_options(self, seed: int = 0) -> EmOptions:
        g = self.values["gmm"]
        if g["tol"] <= 0 or g["variance_floor"] <= 0:
            raise ConfigurationError("gmm tol and variance_floor must be positive")
        return EmOptions(
            max_iters=g["max_iters"],
            tol=g["tol"],
            variance_floor_factor=g["variance_floor"],
            kmeans_iters=g["kmeans_iters"],
            seed=seed,
        )

    def gmm_k(self) -> int:
        return self.values["gmm"]["k"]

    def grid(self) -> BandGrid:
        g = self.values["grid"]
        return BandGrid(
            parse_candidates(g["cut_in"]),
            parse_candidates(g["cut_off"]),
            g["min_width_hz"],
        )

    def costs(self) -> TdcfCosts:
        m = self.values["metrics"]
        return TdcfCosts(m["c_miss"], m["c_fa"])

    def seed(self) -> int:
        return self.values["seeds"]["seed"]

    def path(self, key: str) -> str:
        return self.values["paths"][key]

    def svm_options(self) -> SvmOptions:
        f = self.values["fusion"]
        gamma_text = f["svm_gamma"].strip().lower()
        if gamma_text == "auto":
            gamma = None
        else:
            try:
                gamma = float(gamma_text)
            except ValueError as exc:
                raise ConfigurationError(
                    f"svm_gamma must be 'auto' or a number, got {f['svm_gamma']!r}"
                ) from exc
        return SvmOptions(
            degree=f["svm_degree"],
            c=f["svm_c"],
            gamma=gamma,
            coef0=f["svm_coef0"],
        )

    def logistic_options(self) -> LogisticOptions:
        f = self.values["fusion"]
        if not 0 < f["prior"] < 1:
            raise ConfigurationError("fusion prior must lie in (0, 1)")
        return LogisticOptions(prior=f["prior"], ridge=f["ridge"])

    def fusion_gmm_k(self) -> int:
        return self.values["fusion"]["gmm_k"]

    # ----- serialization ---------------------------------------------------

    def resolved_text(self) -> str:
        out = io.StringIO()
        for section in _SCHEMA:
            out.write(f"[{section}]\n")
            for key in _SCHEMA[section]:
                value = self.values[section][key]
                out.write(f"{key} = {value!r}\n" if isinstance(value, float)
                          else f"{key} = {value}\n")
            out.write("\n")
        return out.getvalue()

    def config_hash(self) -> str:
        return stable_hash(self.resolved_text())

    def write_resolved(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(f"# resolved configuration, hash {self.config_hash()}\n")
            fh.write(self.resolved_text())
