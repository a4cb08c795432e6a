"""Run configuration: an INI file with one section per concern.

Every key has a default, so an empty file (or no file) is a valid config.
``RunConfig.to_text`` writes the canonical form that checkpoints embed.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .bbrl import ActorCriticConfig
from .introspection import WiringVariant
from .toy_env import OBS_DIM, EnvConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    seed: int = 1
    variant: WiringVariant = WiringVariant.BASELINE
    noise_level: float = 0.0
    out_dir: str = "runs"

    env: EnvConfig = field(default_factory=EnvConfig)

    # network sizes
    obs_dim: int = OBS_DIM
    fe_sizes: tuple[int, int] = (128, 128)
    vae_input_dim: int = 256
    encoder_sizes: tuple[int, ...] = (400, 128)
    latent_dim: int = 50
    decoder_sizes: tuple[int, ...] = (128, 400)
    ac_hidden: int = 64
    reactive_hidden: int = 64

    # staged behaviour cloning
    approach_episodes: int = 500
    grasp_episodes: int = 300
    retract_episodes: int = 500
    stage_updates_per_episode: int = 4
    stage_batch_size: int = 64

    # activation dataset and VAE
    collect_episodes: int = 2000
    vae_epochs: int = 100
    batch_size: int = 128
    train_fraction: float = 0.8
    vae_min_input_scale: float = 0.05

    # Adam, shared by stage cloning and the VAE
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    ac_episodes: int = 2000
    actor_critic: ActorCriticConfig = field(default_factory=ActorCriticConfig)

    def __post_init__(self):
        problems = []
        if sum(self.fe_sizes) != self.vae_input_dim:
            problems.append(f"fe_sizes {self.fe_sizes} sum to {sum(self.fe_sizes)}, "
                            f"but vae_input_dim is {self.vae_input_dim}")
        if len(self.fe_sizes) != 2:
            problems.append("fe_sizes must name exactly two layers")
        if self.obs_dim != OBS_DIM:
            problems.append(f"obs_dim must be {OBS_DIM} for the pick-and-place observation")
        if not 0.0 <= self.noise_level <= 1.0:
            problems.append("noise_level must lie in [0, 1]")
        if not 0.0 < self.train_fraction < 1.0:
            problems.append("train_fraction must lie in (0, 1)")
        for name in ("latent_dim", "ac_hidden", "reactive_hidden", "batch_size", "stage_batch_size",
                     "stage_updates_per_episode", "collect_episodes", "vae_epochs", "ac_episodes"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be at least 1")
        for name in ("approach_episodes", "grasp_episodes", "retract_episodes"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be non-negative")
        if self.vae_min_input_scale <= 0:
            problems.append("vae_min_input_scale must be positive")
        if any(w < 1 for w in self.encoder_sizes + self.decoder_sizes):
            problems.append("layer widths must be positive")
        if self.learning_rate <= 0 or self.epsilon <= 0 or not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            problems.append("invalid Adam hyperparameters")
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def stage_episodes(self) -> tuple[int, int, int]:
        return (self.approach_episodes, self.grasp_episodes, self.retract_episodes)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    # -- text form ---------------------------------------------------------------

    def to_text(self, include_output: bool = True) -> str:
        """Canonical INI text.  Snapshots stored in outputs leave out ``out_dir``,
        so the same run written to two directories yields identical bytes."""
        parser = configparser.ConfigParser(interpolation=None)
        run_keys = _RUN_KEYS if include_output else tuple(k for k in _RUN_KEYS if k != "out_dir")
        parser["run"] = {name: _dump(getattr(self, name)) for name in run_keys}
        parser["env"] = {f.name: _dump(getattr(self.env, f.name)) for f in dataclasses.fields(EnvConfig)}
        parser["network"] = {name: _dump(getattr(self, name)) for name in _NETWORK_KEYS}
        parser["training"] = {name: _dump(getattr(self, name)) for name in _TRAINING_KEYS}
        parser["actor_critic"] = {
            f.name: _dump(getattr(self.actor_critic, f.name)) for f in dataclasses.fields(ActorCriticConfig)
        }
        lines = []
        for section in parser.sections():
            lines.append(f"[{section}]")
            lines.extend(f"{k} = {v}" for k, v in parser[section].items())
            lines.append("")
        return "\n".join(lines)

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"unreadable config: {exc}") from None
        known = {"run": _RUN_KEYS, "network": _NETWORK_KEYS, "training": _TRAINING_KEYS,
                 "env": tuple(f.name for f in dataclasses.fields(EnvConfig)),
                 "actor_critic": tuple(f.name for f in dataclasses.fields(ActorCriticConfig))}
        for section in parser.sections():
            if section not in known:
                raise ConfigError(f"unknown config section [{section}]")
            for key in parser[section]:
                if key not in known[section]:
                    raise ConfigError(f"unknown key {key!r} in section [{section}]")

        base = {f.name: f.default if f.default is not dataclasses.MISSING else f.default_factory()
                for f in dataclasses.fields(cls)}
        kwargs = {}
        for section in ("run", "network", "training"):
            if parser.has_section(section):
                for key, raw in parser[section].items():
                    kwargs[key] = _parse(raw, base[key], key)
        try:
            if parser.has_section("env"):
                env_defaults = EnvConfig()
                kwargs["env"] = EnvConfig(**{
                    k: _parse(v, getattr(env_defaults, k), k) for k, v in parser["env"].items()
                })
            if parser.has_section("actor_critic"):
                ac_defaults = ActorCriticConfig()
                kwargs["actor_critic"] = ActorCriticConfig(**{
                    k: _parse(v, getattr(ac_defaults, k), k) for k, v in parser["actor_critic"].items()
                })
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path | None) -> "RunConfig":
        if path is None:
            return cls()
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        return cls.from_text(text)


_RUN_KEYS = ("seed", "variant", "noise_level", "out_dir")
_NETWORK_KEYS = ("obs_dim", "fe_sizes", "vae_input_dim", "encoder_sizes", "latent_dim",
                 "decoder_sizes", "ac_hidden", "reactive_hidden")
_TRAINING_KEYS = ("approach_episodes", "grasp_episodes", "retract_episodes",
                  "stage_updates_per_episode", "stage_batch_size", "collect_episodes", "vae_epochs",
                  "batch_size", "train_fraction", "vae_min_input_scale",
                  "learning_rate", "beta1", "beta2", "epsilon", "ac_episodes")


def _dump(value) -> str:
    if isinstance(value, WiringVariant):
        return value.value
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_dump(v) for v in value)
    return str(value)


def _parse(raw: str, like, key: str):
    raw = raw.strip()
    try:
        if isinstance(like, WiringVariant):
            return WiringVariant.parse(raw)
        if isinstance(like, bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
        if isinstance(like, tuple):
            parts = [p for p in (s.strip() for s in raw.split(",")) if p]
            element = like[0] if like else 0.0
            return tuple(_parse(p, element, key) for p in parts)
        return raw
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key}") from None
