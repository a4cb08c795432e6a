"""Introspection for behaviour-based RL: a VAE over feature-extractor activations
feeds an actor-critic behaviour chooser on a small pick-and-place world."""

from .bbrl import (
    ActorCritic,
    ActorCriticConfig,
    FeatureExtractor,
    ReactiveNetwork,
    TrainingLog,
    actor_critic_forward,
    fe_forward,
    reactive_forward,
    train_actor_critic,
    train_behaviour_stage,
)
from .config import RunConfig
from .introspection import (
    ActivationDataset,
    VaeModel,
    WiringVariant,
    build_ac_input,
    collect_activation_dataset,
    train_vae,
    vae_encode,
    vae_loss,
)
from .toy_env import Behaviour, EnvConfig, PickPlaceEnv

__version__ = "0.1.0"

__all__ = [
    "ActivationDataset",
    "ActorCritic",
    "ActorCriticConfig",
    "Behaviour",
    "EnvConfig",
    "FeatureExtractor",
    "PickPlaceEnv",
    "ReactiveNetwork",
    "RunConfig",
    "TrainingLog",
    "VaeModel",
    "WiringVariant",
    "actor_critic_forward",
    "build_ac_input",
    "collect_activation_dataset",
    "fe_forward",
    "reactive_forward",
    "train_actor_critic",
    "train_behaviour_stage",
    "train_vae",
    "vae_encode",
    "vae_loss",
]
