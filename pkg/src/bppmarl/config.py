"""Experiment configuration: JSON documents, validation and named presets."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .pg import STRATEGIES, ConfigError

Emit = Literal["csv", "summary-json", "plot-data"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class PGAlgorithm(_Strict):
    T: int = Field(1000, ge=1)
    eta: float | None = Field(None, gt=0)
    epsilon: float = Field(0.01, gt=0, le=1)
    delta: float = Field(0.01, gt=0, lt=1)
    N: int | None = Field(None, ge=1)
    samples_per_round: int = Field(100, ge=1)
    mode: Literal["theory", "practical"] = "practical"
    interval: int = Field(100, ge=1)
    num_base_policies: int = Field(5, ge=1)
    renormalize: Literal["proportional", "post"] = "proportional"
    ratio_clip: float | None = Field(None, gt=0)


class CongestionAlgorithm(PGAlgorithm):
    T: int = Field(500, ge=1)
    eval_horizon: int = Field(10, ge=1)


class MCGAlgorithm(_Strict):
    T: int = Field(256, ge=1)
    mode: Literal["theory", "practical"] = "practical"
    bonus_scale: float | None = Field(None, ge=0)
    bonus_form: Literal["tau-weighted", "plain"] = "tau-weighted"
    c: float = Field(1.0, gt=0, le=1)
    Delta: float = Field(1.0, gt=0)
    delta: float = Field(0.1, gt=0, lt=1)
    epsilon: float = Field(0.05, gt=0)
    clip: bool | None = None
    pg_share_scale: float = Field(1.0, gt=0)
    deviation: Literal["first-step", "all-steps", "state-step"] | None = None
    final_episodes: int | None = Field(None, ge=1)


class ExperimentConfig(_Strict):
    """One experiment: a game, an algorithm, strategies and seeds."""

    name: str = "experiment"
    kind: Literal["pg", "congestion", "mcg"] = "pg"
    game: dict[str, Any] | None = None
    game_file: str | None = None
    algorithm: dict[str, Any] = Field(default_factory=dict)
    strategies: list[str] = Field(default_factory=lambda: ["bpp"])
    seeds: list[int] = Field(default_factory=lambda: [0], min_length=1)
    out: str = "runs"
    emit: list[Emit] = Field(default_factory=lambda: ["csv", "summary-json", "plot-data"])
    workers: int = Field(1, ge=1)

    @field_validator("strategies")
    @classmethod
    def _known_strategies(cls, v):
        for s in v:
            if s not in STRATEGIES:
                raise ValueError(f"unknown strategy {s!r}")
        if not v:
            raise ValueError("need at least one strategy")
        return v

    @model_validator(mode="after")
    def _check(self):
        if self.game_file is not None:
            if self.game is not None:
                raise ValueError("give either game or game_file, not both")
            if not Path(self.game_file).is_file():
                raise ValueError(f"game_file {self.game_file!r} does not exist")
        model = {"pg": PGAlgorithm, "congestion": CongestionAlgorithm, "mcg": MCGAlgorithm}[self.kind]
        try:
            model(**self.algorithm)
        except ValidationError as err:
            raise ValueError(_describe(err, prefix="algorithm")) from None
        if self.kind == "mcg" and self.strategies != ["bpp"]:
            raise ValueError("mcg experiments run the bpp strategy only")
        return self

    def algorithm_model(self):
        model = {"pg": PGAlgorithm, "congestion": CongestionAlgorithm, "mcg": MCGAlgorithm}[self.kind]
        return model(**self.algorithm)

    def game_spec(self) -> dict[str, Any]:
        if self.game_file is not None:
            return json.loads(Path(self.game_file).read_text())
        return dict(self.game or {})


def _describe(err: ValidationError, prefix: str = "") -> str:
    parts = []
    for e in err.errors():
        loc = ".".join(str(x) for x in ((prefix,) if prefix else ()) + tuple(e["loc"]))
        parts.append(f"{loc or '<root>'}: {e['msg']}")
    return "; ".join(parts)


PRESETS: dict[str, dict[str, Any]] = {
    "fig-pg": {
        "name": "fig-pg",
        "kind": "pg",
        "game": {"kind": "random-coop", "n": 3, "action_sizes": [10, 10, 10], "lo": 0.0, "hi": 0.2},
        "algorithm": {"T": 5000, "eta": 0.1, "interval": 500, "num_base_policies": 5,
                      "samples_per_round": 100, "epsilon": 0.01},
        "strategies": ["full-comm", "no-is", "naive-is", "bpp"],
        "seeds": [0, 1, 2, 3, 4],
    },
    "fig-congestion": {
        "name": "fig-congestion",
        "kind": "congestion",
        "game": {"kind": "congestion", "n": 8, "weights_safe": [0.1, 0.2, 0.3, 0.4],
                 "distancing_multiplier": 0.5},
        "algorithm": {"T": 500, "eta": 0.03, "interval": 30, "num_base_policies": 6,
                      "N": 2, "epsilon": 0.05, "eval_horizon": 10},
        "strategies": ["full-comm", "no-is", "naive-is", "bpp"],
        "seeds": [0, 1, 2, 3],
    },
    "mcg-small": {
        "name": "mcg-small",
        "kind": "mcg",
        "game": {"kind": "congestion-mcg", "n": 2, "weights_safe": [0.1, 0.2], "H": 2},
        "algorithm": {"T": 256, "pg_share_scale": 10.0, "bonus_scale": 1e-3},
        "strategies": ["bpp"],
        "seeds": [0],
    },
}


def parse_config(source: str | Path | dict[str, Any]) -> ExperimentConfig:
    """Validate a config given as a dict, a JSON string, a file path or a preset name."""
    if isinstance(source, dict):
        doc = source
    elif isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
        if str(source) in PRESETS:
            doc = PRESETS[str(source)]
        else:
            path = Path(source)
            if not path.is_file():
                raise ConfigError(f"config file {str(path)!r} does not exist")
            doc = _load_json(path.read_text(), str(path))
    else:
        doc = _load_json(source, "<inline>")
    try:
        return ExperimentConfig(**doc)
    except ValidationError as err:
        raise ConfigError(_describe(err)) from None
    except TypeError as err:
        raise ConfigError(f"config must be a JSON object: {err}") from None


def _load_json(text: str, where: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{where}: malformed JSON ({err})") from None


def preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return parse_config(PRESETS[name])
