"""Experiment configuration: one strict JSON document per run."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from ..adversarial import AdversarialConfig
from ..baselines import BaselineConfig
from ..demos import MODALITIES
from ..envs import ENV_IDS, RenderMap
from ..trpo import TrpoConfig

METHODS = ("expert_trpo", "bc", "gail", "sigan", "vigan", "pixel", "tcn")
DEMO_TRANSFORMS = ("none", "phase_shift", "shuffle")

# sub-config keys owned by the top level, so each setting has one home
_HOISTED = {"adversarial": ("method", "k_frames", "rollout_steps", "workers"),
            "baseline": ("rollout_steps", "workers")}


class ConfigError(ValueError):
    pass


def _field_names(cls) -> set[str]:
    return {f.name for f in fields(cls)}


def _check_keys(cls, name: str, data, hoisted=()) -> None:
    if not isinstance(data, dict):
        raise ConfigError(f"config field {name!r} must be an object")
    unknown = sorted(set(data) - (_field_names(cls) - set(hoisted)))
    if unknown:
        where = [f"{name}.{k}" + (" (set it at the top level)" if k in hoisted else "") for k in unknown]
        raise ConfigError(f"unknown config field(s): {', '.join(where)}")


def _build(cls, name: str, data):
    _check_keys(cls, name, data)
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config field {name!r}: {exc}") from exc


def _sub_dict(obj, hoisted=()) -> dict:
    d = obj.to_dict()
    for k in hoisted:
        d.pop(k, None)
    return d


@dataclass
class ExperimentConfig:
    env: str = "cartpole_analog"
    method: str = "expert_trpo"
    seed: int = 0
    iterations: int = 300
    rollout_steps: int = 2000
    workers: int = 1
    demo_path: str | None = None
    demo_transform: str = "none"
    checkpoint: str | None = None
    n_trajs: int = 5
    modality: str = "state_action"
    export_frames: bool = False
    k_frames: int = 2
    render: RenderMap = field(default_factory=RenderMap)
    trpo: TrpoConfig = field(default_factory=TrpoConfig)
    adversarial: dict = field(default_factory=dict)
    baseline: dict = field(default_factory=dict)
    eval_every: int = 5
    eval_episodes: int = 20
    stop_at_return: float | None = None
    output_dir: str = "runs/out"

    def __post_init__(self):
        checks = [
            (self.env in ENV_IDS, "env", f"must be one of {ENV_IDS}, got {self.env!r}"),
            (self.method in METHODS, "method", f"must be one of {METHODS}, got {self.method!r}"),
            (self.demo_transform in DEMO_TRANSFORMS, "demo_transform",
             f"must be one of {DEMO_TRANSFORMS}, got {self.demo_transform!r}"),
            (self.modality in MODALITIES, "modality", f"must be one of {MODALITIES}, got {self.modality!r}"),
            (isinstance(self.seed, int) and self.seed >= 0, "seed", "must be a non-negative integer"),
            (isinstance(self.iterations, int) and self.iterations >= 0, "iterations", "must be >= 0"),
            (self.rollout_steps >= 1, "rollout_steps", "must be >= 1"),
            (self.workers >= 1, "workers", "must be >= 1"),
            (self.n_trajs >= 1, "n_trajs", "must be >= 1"),
            (self.k_frames in (2, 3), "k_frames", "must be 2 or 3"),
            (self.eval_every >= 1, "eval_every", "must be >= 1"),
            (self.eval_episodes >= 1, "eval_episodes", "must be >= 1"),
        ]
        for ok, name, msg in checks:
            if not ok:
                raise ConfigError(f"config field {name!r} {msg}")
        # build once so bad sub-config values fail at load time
        self.adversarial_config()
        self.baseline_config()

    def adversarial_config(self) -> AdversarialConfig:
        method = self.method if self.method in ("gail", "sigan", "vigan") else "gail"
        data = dict(self.adversarial, method=method, k_frames=self.k_frames,
                    rollout_steps=self.rollout_steps, workers=self.workers)
        return _build(AdversarialConfig, "adversarial", data)

    def baseline_config(self) -> BaselineConfig:
        data = dict(self.baseline, rollout_steps=self.rollout_steps, workers=self.workers)
        return _build(BaselineConfig, "baseline", data)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["render"] = self.render.to_dict()
        d["trpo"] = self.trpo.to_dict()
        d["adversarial"] = _sub_dict(self.adversarial_config(), _HOISTED["adversarial"])
        d["baseline"] = _sub_dict(self.baseline_config(), _HOISTED["baseline"])
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        unknown = sorted(set(data) - _field_names(cls))
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
        kw = dict(data)
        if "render" in kw:
            r = kw["render"]
            if isinstance(r, dict) and r.get("occluder") is not None:
                r = dict(r, occluder=tuple(r["occluder"]))
            kw["render"] = _build(RenderMap, "render", r)
        if "trpo" in kw:
            kw["trpo"] = _build(TrpoConfig, "trpo", kw["trpo"])
        for name in ("adversarial", "baseline"):
            if name in kw:
                sub = kw[name]
                _check_keys(AdversarialConfig if name == "adversarial" else BaselineConfig, name, sub, _HOISTED[name])
                kw[name] = dict(sub)
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text())

    def replace(self, **overrides) -> "ExperimentConfig":
        """Copy with top-level fields replaced (``None`` values are ignored)."""
        d = self.to_dict()
        d.update({k: v for k, v in overrides.items() if v is not None})
        return ExperimentConfig.from_dict(d)
