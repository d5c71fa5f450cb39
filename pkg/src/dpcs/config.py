"""Experiment configuration files (JSON).

A config has up to six top-level sections; every field is optional and
falls back to the desk-scale preset::

    {
      "scenario": {"source": "synthetic", "seed": 0, "households": 4, "T": 48},
      "train":    {"episodes": 400, "beta": 480, "algorithm": "dpcs", ...},
      "price":    {"alpha1": 0.02, ...},
      "reward":   {"eps1_coeff": -60, "eps2": 50},
      "evaluation": {"rollouts": 20, "noise": 0.01, "br_perturbations": 20, "br_magnitude": 0.1},
      "output":   {"dir": "runs/desk", "formats": ["csv", "json"]}
    }

``scenario.source`` is ``synthetic``, ``file`` (scenario text format) or
``csv`` (profile CSV, with ``T``, ``slot_minutes`` and optional ``start``).
Relative paths resolve against the config file's directory.  The reward
discount is ``train.gamma``.
"""
from __future__ import annotations

import json
import os
import re
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .agents import NoiseSchedule
from .errors import ConfigurationError
from .pricing import PriceParams
from .rewards import RewardParams
from .trainer import TrainConfig, desk_config

OUTPUT_ROOT_ENV = "DPCS_OUTPUT_ROOT"
EXPORT_FORMATS = ("csv", "json")


@dataclass(frozen=True)
class ScenarioSource:
    source: str = "synthetic"
    seed: int = 0
    households: int = 4
    T: int = 48
    slot_minutes: Optional[float] = None
    path: Optional[str] = None
    start: Optional[str] = None

    def __post_init__(self):
        if self.source not in ("synthetic", "file", "csv"):
            raise ConfigurationError(f"scenario.source must be synthetic, file or csv, not {self.source!r}")
        if self.source != "synthetic" and not self.path:
            raise ConfigurationError(f"scenario.path is required for source {self.source!r}")
        if self.households < 1 or self.T < 1:
            raise ConfigurationError("scenario.households and scenario.T must be >= 1")

    def load(self):
        from . import data
        if self.source == "synthetic":
            return data.synth_scenario(self.seed, self.households, self.T, self.slot_minutes)
        path = Path(self.path)
        if not path.exists():
            raise ConfigurationError(f"scenario file not found: {path}")
        if self.source == "file":
            return data.load_scenario(path)
        return data.scenario_from_csv(path, self.T, self.slot_minutes or 15.0, start=self.start)


@dataclass(frozen=True)
class EvalSettings:
    rollouts: int = 20
    noise: float = 0.01  # execution noise of the extra rollouts, fraction of p_max
    br_perturbations: int = 20
    br_magnitude: float = 0.1

    def __post_init__(self):
        if self.rollouts < 1 or self.br_perturbations < 0:
            raise ConfigurationError("evaluation.rollouts must be >= 1 and br_perturbations >= 0")
        if self.noise < 0 or self.br_magnitude < 0:
            raise ConfigurationError("evaluation.noise and br_magnitude must be >= 0")


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioSource = field(default_factory=ScenarioSource)
    train: TrainConfig = field(default_factory=desk_config)
    price: PriceParams = field(default_factory=PriceParams)
    reward: RewardParams = field(default_factory=RewardParams)
    evaluation: EvalSettings = field(default_factory=EvalSettings)
    output_dir: str = "runs/desk"
    formats: tuple = EXPORT_FORMATS

    def reward_params(self) -> RewardParams:
        return replace(self.reward, gamma=self.train.gamma)

    def to_dict(self) -> dict:
        return {
            "scenario": asdict(self.scenario),
            "train": self.train.to_dict(),
            "price": self.price.to_dict(),
            "reward": {"eps1_coeff": self.reward.eps1_coeff, "eps2": self.reward.eps2},
            "evaluation": asdict(self.evaluation),
            "output": {"dir": self.output_dir, "formats": list(self.formats)},
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def _line_of(text: str, key: str) -> Optional[int]:
    m = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _where(source: str, text: str, section: str, key: Optional[str] = None) -> str:
    line = _line_of(text, key or section) if text else None
    loc = f"{source}:{line}" if line else source
    name = f"{section}.{key}" if key else section
    return f"{loc}: field {name!r}"


def _section(raw: dict, name: str, cls, source: str, text: str, allowed=None, convert=None):
    body = raw.get(name, {})
    if not isinstance(body, dict):
        raise ConfigurationError(f"{_where(source, text, name)} must be an object")
    allowed = allowed if allowed is not None else {f.name for f in fields(cls)}
    for key in body:
        if key not in allowed:
            raise ConfigurationError(f"{_where(source, text, name, key)} is not recognized "
                                     f"(expected one of {sorted(allowed)})")
    return convert(body) if convert else dict(body)


def _build(cls, values: dict, section: str, source: str, text: str, base=None):
    try:
        return replace(base, **values) if base is not None else cls(**values)
    except ConfigurationError as exc:
        key = next((k for k in values if k in str(exc)), None)
        raise ConfigurationError(f"{_where(source, text, section, key)}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{_where(source, text, section)}: {exc}") from None


def from_dict(raw: dict, source: str = "<config>", text: str = "", base_dir: Optional[Path] = None
              ) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{source}: top level must be a JSON object")
    known = {"scenario", "train", "price", "reward", "evaluation", "output"}
    for key in raw:
        if key not in known:
            raise ConfigurationError(f"{_where(source, text, key)} is not a known section "
                                     f"(expected one of {sorted(known)})")

    sc_vals = _section(raw, "scenario", ScenarioSource, source, text)
    if sc_vals.get("path") and base_dir is not None and not Path(sc_vals["path"]).is_absolute():
        sc_vals["path"] = str(base_dir / sc_vals["path"])
    scenario = _build(ScenarioSource, sc_vals, "scenario", source, text)

    tr_vals = _section(raw, "train", TrainConfig, source, text)
    if "noise" in tr_vals:
        noise = tr_vals["noise"]
        if not isinstance(noise, dict):
            raise ConfigurationError(f"{_where(source, text, 'train', 'noise')} must be an object")
        tr_vals["noise"] = _build(NoiseSchedule, noise, "train.noise", source, text)
    if "hidden" in tr_vals:
        tr_vals["hidden"] = tuple(tr_vals["hidden"])
    train = _build(TrainConfig, tr_vals, "train", source, text, base=desk_config())

    price = _build(PriceParams, _section(raw, "price", PriceParams, source, text), "price", source, text)
    rw_vals = _section(raw, "reward", RewardParams, source, text, allowed={"eps1_coeff", "eps2"})
    reward = _build(RewardParams, rw_vals, "reward", source, text)
    evaluation = _build(EvalSettings, _section(raw, "evaluation", EvalSettings, source, text),
                        "evaluation", source, text)

    out = _section(raw, "output", None, source, text, allowed={"dir", "formats"})
    formats = tuple(out.get("formats", EXPORT_FORMATS))
    bad = [f for f in formats if f not in EXPORT_FORMATS]
    if bad or not formats:
        raise ConfigurationError(f"{_where(source, text, 'output', 'formats')}: expected a non-empty subset of "
                                 f"{list(EXPORT_FORMATS)}, got {list(formats)}")
    out_dir = out.get("dir") or default_output_dir()
    return ExperimentConfig(scenario, train, price, reward, evaluation, str(out_dir), formats)


def default_output_dir(name: str = "desk") -> str:
    return str(Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / name)


def loads(text: str, source: str = "<config>", base_dir: Optional[Path] = None) -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{source}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    return from_dict(raw, source, text, base_dir)


def load(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    return loads(text, str(path), path.parent)


def paper_scale() -> ExperimentConfig:
    """Full-size settings: 144 slots of 15 minutes, 1000 episodes, one mini-batch step per round."""
    return ExperimentConfig(
        scenario=ScenarioSource(T=144, slot_minutes=15.0),
        train=TrainConfig(),
        output_dir=default_output_dir("paper"),
    )
