"""Flat key-value run configuration: one ``section.key = value`` per line.

Blank lines and full-line ``#`` comments are allowed; unknown keys are
rejected with a line diagnostic. :func:`format_config` writes the canonical
form that runs echo into their artifact directory, and parsing that echo
reproduces the configuration exactly.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

from .lm_backend import DEFAULT_EMBED_DIM, BackendConfig
from .meta_controller import TRUST_WINDOW_DEFAULT
from .personas import PersonaParams


class ConfigError(ValueError):
    """Malformed or out-of-range run configuration."""


@dataclass
class Hyperparameters:
    alpha: float = 0.1
    gamma: float = 0.9
    eta: float = 0.1
    beta: float = 0.1
    w_p: float = 0.7
    w_s: float = 0.3
    retrieval_k: int = 3
    spike_threshold: float = 0.6
    embed_dim: int = DEFAULT_EMBED_DIM
    trust_window: int = TRUST_WINDOW_DEFAULT


@dataclass
class MapSource:
    file: str = ""  # empty means: generate from the run seed
    food_tiles: int = 5
    trap_tiles: int = 8
    goal_tiles: int = 1


@dataclass
class RunConfig:
    seed: int = 0
    rounds: int = 6
    max_steps_per_episode: int = 60
    output_dir: str = "out"
    backend: BackendConfig = field(default_factory=BackendConfig)
    hyper: Hyperparameters = field(default_factory=Hyperparameters)
    map_source: MapSource = field(default_factory=MapSource)
    persona: PersonaParams = field(default_factory=PersonaParams)

    @property
    def run_id(self) -> str:
        return f"run{self.seed}"


def _parse_int(raw: str) -> int:
    return int(raw, 0)


def _parse_float(raw: str) -> float:
    value = float(raw)
    if not math.isfinite(value):
        raise ValueError("value must be finite")
    return value


def _parse_optional_float(raw: str) -> float | None:
    if raw.lower() in ("", "none"):
        return None
    return _parse_float(raw)


def _parse_str(raw: str) -> str:
    return raw


# key -> (target dataclass attribute path, parser)
_SCHEMA: dict[str, tuple[tuple[str, ...], object]] = {
    "run.seed": (("seed",), _parse_int),
    "run.rounds": (("rounds",), _parse_int),
    "run.max_steps_per_episode": (("max_steps_per_episode",), _parse_int),
    "run.output_dir": (("output_dir",), _parse_str),
    "backend.mode": (("backend", "mode"), _parse_str),
    "backend.base_url": (("backend", "base_url"), _parse_str),
    "backend.meta_model": (("backend", "meta_model"), _parse_str),
    "backend.agent_model": (("backend", "agent_model"), _parse_str),
    "backend.embed_model": (("backend", "embed_model"), _parse_str),
    "backend.api_key_env": (("backend", "api_key_env"), _parse_str),
    "backend.timeout": (("backend", "timeout"), _parse_float),
    "backend.max_retries": (("backend", "max_retries"), _parse_int),
    "backend.max_in_flight": (("backend", "max_in_flight"), _parse_int),
    "hyper.alpha": (("hyper", "alpha"), _parse_float),
    "hyper.gamma": (("hyper", "gamma"), _parse_float),
    "hyper.eta": (("hyper", "eta"), _parse_float),
    "hyper.beta": (("hyper", "beta"), _parse_float),
    "hyper.w_p": (("hyper", "w_p"), _parse_float),
    "hyper.w_s": (("hyper", "w_s"), _parse_float),
    "hyper.retrieval_k": (("hyper", "retrieval_k"), _parse_int),
    "hyper.spike_threshold": (("hyper", "spike_threshold"), _parse_float),
    "hyper.embed_dim": (("hyper", "embed_dim"), _parse_int),
    "hyper.trust_window": (("hyper", "trust_window"), _parse_int),
    "map.file": (("map_source", "file"), _parse_str),
    "map.food_tiles": (("map_source", "food_tiles"), _parse_int),
    "map.trap_tiles": (("map_source", "trap_tiles"), _parse_int),
    "map.goal_tiles": (("map_source", "goal_tiles"), _parse_int),
    "persona.food_reward": (("persona", "food_reward"), _parse_float),
    "persona.adoption_bonus": (("persona", "adoption_bonus"), _parse_float),
    "persona.trap_penalty": (("persona", "trap_penalty"), _parse_float),
    "persona.round_decay": (("persona", "round_decay"), _parse_float),
    "persona.habit_bonus": (("persona", "habit_bonus"), _parse_float),
    "persona.risk_step_reward": (("persona", "risk_step_reward"), _parse_float),
    "persona.risk_trap_penalty": (("persona", "risk_trap_penalty"), _parse_float),
    "persona.distance_coefficient": (("persona", "distance_coefficient"), _parse_float),
    "persona.career_goal_delta": (("persona", "career_goal_delta"), _parse_float),
    "persona.career_trap_delta": (("persona", "career_trap_delta"), _parse_float),
    "persona.social_boost_rate": (("persona", "social_boost_rate"), _parse_float),
    "persona.mood_pin": (("persona", "mood_pin"), _parse_optional_float),
}


def parse_config_text(text: str) -> RunConfig:
    values: dict[str, object] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value', got {raw_line!r}")
        key, _, raw_value = line.partition("=")
        key = key.strip()
        raw_value = raw_value.strip()
        if key not in _SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        _, parser = _SCHEMA[key]
        try:
            values[key] = parser(raw_value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    return _build_config(values)


def _build_config(values: dict[str, object]) -> RunConfig:
    # BackendConfig is frozen, so collect its fields before construction.
    backend_kwargs: dict[str, object] = {}
    plain: dict[tuple[str, ...], object] = {}
    for key, value in values.items():
        path, _ = _SCHEMA[key]
        if path[0] == "backend":
            backend_kwargs[path[1]] = value
        else:
            plain[path] = value
    try:
        backend = BackendConfig(**backend_kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    config = RunConfig(backend=backend)
    for path, value in plain.items():
        if len(path) == 1:
            setattr(config, path[0], value)
        else:
            setattr(getattr(config, path[0]), path[1], value)
    validate_config(config)
    return config


def validate_config(config: RunConfig) -> None:
    h = config.hyper
    checks = [
        (config.rounds >= 1, "run.rounds must be at least 1"),
        (config.max_steps_per_episode >= 1, "run.max_steps_per_episode must be at least 1"),
        (0.0 < h.alpha <= 1.0, "hyper.alpha must lie in (0, 1]"),
        (0.0 <= h.gamma < 1.0, "hyper.gamma must lie in [0, 1)"),
        (h.eta >= 0.0, "hyper.eta must be nonnegative"),
        (h.beta >= 0.0, "hyper.beta must be nonnegative"),
        (h.retrieval_k >= 1, "hyper.retrieval_k must be at least 1"),
        (h.spike_threshold > 0.0, "hyper.spike_threshold must be positive"),
        (h.embed_dim >= 1, "hyper.embed_dim must be positive"),
        (h.trust_window >= 1, "hyper.trust_window must be at least 1"),
        (config.map_source.goal_tiles >= 1, "map.goal_tiles must be at least 1"),
        (config.map_source.food_tiles >= 0, "map.food_tiles must be nonnegative"),
        (config.map_source.trap_tiles >= 0, "map.trap_tiles must be nonnegative"),
        (
            config.persona.mood_pin is None or 0.0 <= config.persona.mood_pin <= 2.0,
            "persona.mood_pin must lie in [0, 2]",
        ),
    ]
    for ok, message in checks:
        if not ok:
            raise ConfigError(message)
    # Keep the backend's embedding dimension in lockstep with the latent math.
    if config.backend.embed_dim != h.embed_dim:
        config.backend = dataclasses.replace(config.backend, embed_dim=h.embed_dim)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config_text(text)


def format_config(config: RunConfig) -> str:
    """Canonical echo of a configuration; parsing it reproduces the config."""
    lines = []
    for key in sorted(_SCHEMA):
        path, _ = _SCHEMA[key]
        obj = config
        if path[0] in ("backend", "hyper", "map_source", "persona"):
            obj = getattr(config, path[0])
            value = getattr(obj, path[1])
        else:
            value = getattr(config, path[0])
        if value is None:
            rendered = "none"
        elif isinstance(value, float):
            rendered = repr(value)
        else:
            rendered = str(value)
        lines.append(f"{key} = {rendered}")
    return "\n".join(lines) + "\n"


def apply_overrides(
    config: RunConfig,
    seed: int | None = None,
    backend_mode: str | None = None,
    rounds: int | None = None,
    output_dir: str | None = None,
) -> RunConfig:
    """Apply CLI flag overrides on top of a parsed config."""
    if seed is not None:
        config.seed = seed
    if rounds is not None:
        config.rounds = rounds
    if output_dir is not None:
        config.output_dir = output_dir
    if backend_mode is not None:
        if backend_mode not in ("stub", "http"):
            raise ConfigError(f"backend override must be 'stub' or 'http', got {backend_mode!r}")
        config.backend = dataclasses.replace(config.backend, mode=backend_mode)
    validate_config(config)
    return config
