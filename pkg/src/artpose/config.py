"""Run configuration: one JSON document with every default spelled out."""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .baselines import IcpConfig
from .inference import AugmentConfig, InferenceConfig
from .methods import METHODS
from .observation import default_camera
from .potentials import PotentialConfig
from .rendering import PinholeCamera


class ConfigError(ValueError):
    pass


def defaults():
    inf = InferenceConfig().to_dict()
    inf.pop("seed")
    inf.pop("augment")
    # budget, mode and messages follow the method unless set here
    inf.update(n_particles=None, n_iterations=None)
    for k in ("mode", "use_messages"):
        inf.pop(k)
    inf["jitter_sigma"] = list(inf["jitter_sigma"])
    aug = AugmentConfig().__dict__.copy()
    aug["rand_sigma"] = list(aug["rand_sigma"])
    return {
        "method": "mp-rgbd",
        "seed": 0,
        "threads": 1,
        "paths": {"urdf": None, "scenes": "scenes", "results": "results", "out": "out"},
        "synth": {"n_scenes": 5, "regime": "clean"},
        "camera": default_camera().to_dict(),
        "inference": inf,
        "augment": aug,
        "potentials": PotentialConfig().to_dict(),
        "icp": IcpConfig().to_dict(),
    }


def _merge(base, over, where=""):
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key {where}{k!r}")
        if isinstance(base[k], dict) and k != "camera":
            if not isinstance(v, dict):
                raise ConfigError(f"config key {where}{k!r} must be a table")
            _merge(base[k], v, f"{where}{k}.")
        else:
            base[k] = v
    return base


class RunConfig:
    """Validated view over the configuration document."""

    def __init__(self, doc=None):
        self.doc = _merge(defaults(), copy.deepcopy(doc or {}))
        self.validate()

    @classmethod
    def load(cls, path):
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc}") from exc
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{p}: top level must be a table")
        return cls(doc)

    def override(self, **flags):
        """Apply command-line flags (``None`` means not given)."""
        doc = copy.deepcopy(self.doc)
        for key in ("method", "seed", "threads"):
            if flags.get(key) is not None:
                doc[key] = flags[key]
        for key, sect in (("particles", "n_particles"), ("iterations", "n_iterations")):
            if flags.get(key) is not None:
                doc["inference"][sect] = flags[key]
        for key in ("urdf", "scenes", "results", "out"):
            if flags.get(key) is not None:
                doc["paths"][key] = str(flags[key])
        if flags.get("regime") is not None:
            doc["synth"]["regime"] = flags["regime"]
        if flags.get("n_scenes") is not None:
            doc["synth"]["n_scenes"] = flags["n_scenes"]
        return RunConfig(doc)

    def dumps(self):
        return json.dumps(self.doc, indent=2, sort_keys=True) + "\n"

    def validate(self):
        d = self.doc
        if d["method"] not in METHODS:
            raise ConfigError(f"unknown method {d['method']!r}; choose from {', '.join(METHODS)}")
        if not isinstance(d["seed"], int) or d["seed"] < 0:
            raise ConfigError("seed must be a non-negative integer")
        if not isinstance(d["threads"], int) or d["threads"] < 1:
            raise ConfigError("threads must be a positive integer")
        if d["synth"]["regime"] not in ("clean", "uncluttered", "cluttered"):
            raise ConfigError(f"unknown regime {d['synth']['regime']!r}")
        if not isinstance(d["synth"]["n_scenes"], int) or d["synth"]["n_scenes"] < 1:
            raise ConfigError("synth.n_scenes must be a positive integer")
        for k in ("n_particles", "n_iterations"):
            v = d["inference"][k]
            if v is not None and (not isinstance(v, int) or v < (1 if k == "n_particles" else 0)):
                raise ConfigError(f"inference.{k} must be a positive integer")
        urdf = d["paths"]["urdf"]
        if urdf is not None and not Path(urdf).is_file():
            raise ConfigError(f"URDF not found: {urdf}")
        try:
            self.camera()
            self.potentials()
            self.icp()
            self.augment()
            self.inference_base()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid configuration: {exc}") from exc

    # -- typed views -----------------------------------------------------------

    @property
    def method(self):
        return self.doc["method"]

    @property
    def seed(self):
        return self.doc["seed"]

    @property
    def threads(self):
        return self.doc["threads"]

    def path(self, key):
        v = self.doc["paths"][key]
        return None if v is None else Path(v)

    def camera(self):
        return PinholeCamera(**self.doc["camera"])

    def potentials(self):
        return PotentialConfig(**self.doc["potentials"])

    def icp(self):
        return IcpConfig(**self.doc["icp"])

    def augment(self):
        return AugmentConfig(**self.doc["augment"])

    def inference_base(self):
        d = {k: v for k, v in self.doc["inference"].items() if k not in ("n_particles", "n_iterations")}
        return InferenceConfig(**d)

    @property
    def n_particles(self):
        return self.doc["inference"]["n_particles"]

    @property
    def n_iterations(self):
        return self.doc["inference"]["n_iterations"]
