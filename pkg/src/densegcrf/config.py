"""JSON run configuration shared by the CLI commands.

Documents in the wild tend to rot through typos, so unknown keys are
rejected outright instead of being ignored; a misspelled tolerance that
silently fell back to a default could mask a real gradient regression.
Missing keys take the documented defaults, and the fully resolved document
is available for echoing so runs are reproducible from their logs alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .cg import CgConfig
from .synth import SyntheticTaskSpec
from .tensors import Dims
from .train import TrainConfig


class ConfigError(ValueError):
    """Raised for unknown keys, wrong types, or inconsistent values."""


DEFAULTS = {
    "dims": {"P": 256, "L": 3, "D": 8},
    "lambda": 1.0,
    "cg": {"rel_tol": 1e-10, "abs_tol": 1e-14, "max_iters": None},
    "train": {
        "base_lr_unary": 1e-2,
        "base_lr_pairwise": 2.5e-3,
        "poly_power": 0.9,
        "iters_per_phase": 2000,
        "batch_size": 4,
        "seed": 0,
        "joint_phase": False,
    },
    "task": {
        "width": 16,
        "height": 16,
        "noise_sigma": 1.0,
        "smooth_radius": 3,
        "n_train": 40,
        "n_test": 20,
        "seed": 1234,
    },
    "paths": {"model_dir": "model", "metrics_csv": "metrics.csv"},
}


def _merge_section(name: str, given: dict) -> dict:
    defaults = DEFAULTS[name]
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown key(s) in '{name}': {', '.join(unknown)}")
    merged = dict(defaults)
    merged.update(given)
    return merged


@dataclass(frozen=True)
class RunConfig:
    """A fully resolved configuration document."""

    document: dict

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError(f"config root must be an object, got {type(raw).__name__}")
        unknown = sorted(set(raw) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
        document = {}
        for name, default in DEFAULTS.items():
            if isinstance(default, dict):
                given = raw.get(name, {})
                if not isinstance(given, dict):
                    raise ConfigError(f"section '{name}' must be an object")
                document[name] = _merge_section(name, given)
            else:
                document[name] = raw.get(name, default)
        cfg = cls(document=document)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        return cls.from_dict(raw)

    @classmethod
    def defaults(cls) -> "RunConfig":
        return cls.from_dict({})

    def validate(self) -> None:
        # constructor-level validation of each section, surfaced as ConfigError
        try:
            self.dims()
            self.cg_config()
            self.train_config()
            self.task_spec()
        except (ValueError, TypeError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None

    def echo(self) -> str:
        """The effective (post-default) document as formatted JSON."""
        return json.dumps(self.document, indent=2, sort_keys=True)

    def dims(self) -> Dims:
        d = self.document["dims"]
        return Dims(pixels=d["P"], labels=d["L"], embed_dim=d["D"])

    def lam(self) -> float:
        lam = self.document["lambda"]
        if not (isinstance(lam, (int, float)) and lam > 0):
            raise ConfigError(f"lambda must be a positive number, got {lam!r}")
        return float(lam)

    def cg_config(self) -> CgConfig:
        c = self.document["cg"]
        return CgConfig(
            rel_tol=c["rel_tol"], abs_tol=c["abs_tol"], max_iters=c["max_iters"]
        )

    def train_config(self) -> TrainConfig:
        t = self.document["train"]
        return TrainConfig(
            base_lr_unary=t["base_lr_unary"],
            base_lr_pairwise=t["base_lr_pairwise"],
            poly_power=t["poly_power"],
            iters_per_phase=t["iters_per_phase"],
            batch_size=t["batch_size"],
            seed=t["seed"],
            lam=self.lam(),
            joint_phase=t["joint_phase"],
        )

    def task_spec(self) -> SyntheticTaskSpec:
        t = self.document["task"]
        dims = self.dims()
        if t["width"] * t["height"] != dims.pixels:
            raise ConfigError(
                f"task grid {t['width']}x{t['height']} has "
                f"{t['width'] * t['height']} pixels but dims.P is {dims.pixels}"
            )
        return SyntheticTaskSpec(
            width=t["width"],
            height=t["height"],
            labels=dims.labels,
            noise_sigma=t["noise_sigma"],
            smooth_radius=t["smooth_radius"],
            n_train=t["n_train"],
            n_test=t["n_test"],
            seed=t["seed"],
        )

    def model_dir(self) -> Path:
        return Path(self.document["paths"]["model_dir"])

    def metrics_csv(self) -> Path:
        return Path(self.document["paths"]["metrics_csv"])
