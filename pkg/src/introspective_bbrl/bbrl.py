"""Behaviour-based RL stack: feature extractor, reactive heads, actor-critic.

The feature extractor (FE) and reactive heads are fitted stage by stage with
behaviour cloning against the scripted experts.  The actor-critic then learns
which behaviour to run at each timestep, with the FE and heads frozen.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from .introspection import FEATURE_DIM, WiringVariant, build_ac_input, vae_encode
from .nn_core import (
    NUMPY_OPS,
    AdamState,
    DenseLayer,
    GradientTape,
    adam_step,
    compute_gradients,
    softmax,
)
from .toy_env import OBS_DIM, Behaviour, LowLevelAction, PickPlaceEnv

REACTIVE_HIDDEN = 64
AC_HIDDEN = 64
HEAD_OUTPUTS = {Behaviour.APPROACH: 3, Behaviour.GRASP: 5, Behaviour.RETRACT: 3}
STAGE_ORDER = (Behaviour.APPROACH, Behaviour.GRASP, Behaviour.RETRACT)


class StageOrderError(RuntimeError):
    pass


class VariantInputError(ValueError):
    pass


# --------------------------------------------------------------------------
# networks
# --------------------------------------------------------------------------

@dataclass(eq=False)
class FeatureExtractor:
    layer1: DenseLayer
    layer2: DenseLayer

    @classmethod
    def initialized(cls, rng, obs_dim: int = OBS_DIM, sizes: tuple[int, int] = (128, 128)) -> "FeatureExtractor":
        return cls(DenseLayer.initialized(obs_dim, sizes[0], rng), DenseLayer.initialized(sizes[0], sizes[1], rng))

    @property
    def activation_dim(self) -> int:
        return self.layer1.out_features + self.layer2.out_features

    def parameters(self) -> dict[str, np.ndarray]:
        return {**self.layer1.parameters("fe.layer1"), **self.layer2.parameters("fe.layer2")}


def fe_ops(ops, fe: FeatureExtractor, obs):
    h1 = ops.elu(ops.dense(fe.layer1, obs))
    h2 = ops.elu(ops.dense(fe.layer2, h1))
    return h1, h2


def fe_forward(fe: FeatureExtractor, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (features, activations): the second layer output and both layers concatenated."""
    obs = np.asarray(obs, dtype=np.float64)
    if obs.shape[-1] != fe.layer1.in_features:
        raise ValueError(f"feature extractor expects {fe.layer1.in_features}-dim observations, got {obs.shape[-1]}")
    h1, h2 = fe_ops(NUMPY_OPS, fe, obs)
    return h2, np.concatenate([h1, h2], axis=-1)


@dataclass(eq=False)
class ReactiveNetwork:
    """One two-layer head per behaviour; outputs are tanh-squashed to action bounds."""

    heads: dict[Behaviour, tuple[DenseLayer, DenseLayer]]
    max_step: float = 0.05
    completed_stages: list[Behaviour] = field(default_factory=list)

    @classmethod
    def initialized(cls, rng, feature_dim: int = FEATURE_DIM, hidden: int = REACTIVE_HIDDEN,
                    max_step: float = 0.05) -> "ReactiveNetwork":
        heads = {
            b: (DenseLayer.initialized(feature_dim, hidden, rng), DenseLayer.initialized(hidden, n, rng))
            for b, n in HEAD_OUTPUTS.items()
        }
        return cls(heads, max_step)

    def head_parameters(self, behaviour: Behaviour) -> dict[str, np.ndarray]:
        hidden, out = self.heads[behaviour]
        name = f"reactive.{behaviour.label}"
        return {**hidden.parameters(f"{name}.hidden"), **out.parameters(f"{name}.out")}

    def parameters(self) -> dict[str, np.ndarray]:
        params = {}
        for b in STAGE_ORDER:
            params.update(self.head_parameters(b))
        return params


def head_ops(ops, rn: ReactiveNetwork, features, behaviour: Behaviour):
    hidden, out = rn.heads[behaviour]
    return ops.tanh(ops.dense(out, ops.elu(ops.dense(hidden, features))))


def reactive_forward(rn: ReactiveNetwork, features: np.ndarray, behaviour: Behaviour) -> LowLevelAction:
    behaviour = Behaviour(behaviour)
    squashed = head_ops(NUMPY_OPS, rn, features, behaviour)
    delta = rn.max_step * squashed[:3]
    if behaviour is Behaviour.GRASP:
        return LowLevelAction(delta, float(squashed[3]), float(0.5 * (squashed[4] + 1.0)))
    return LowLevelAction(delta, 0.0, 1.0 if behaviour is Behaviour.APPROACH else 0.0)


def expert_target(action: LowLevelAction, behaviour: Behaviour, max_step: float) -> np.ndarray:
    """Expert action expressed in the head's squashed [-1, 1] output space."""
    delta = np.asarray(action.delta_pos) / max_step
    if behaviour is Behaviour.GRASP:
        return np.concatenate([delta, [action.rotation, 2.0 * action.gripper_cmd - 1.0]])
    return delta


@dataclass(eq=False)
class ActorCritic:
    trunk: DenseLayer
    actor: DenseLayer
    critic: DenseLayer
    variant: WiringVariant = WiringVariant.BASELINE
    # fixed input standardization, fitted once before training; not trained
    input_shift: np.ndarray | None = None
    input_scale: np.ndarray | None = None

    def __post_init__(self):
        n = self.trunk.in_features
        self.input_shift = np.zeros(n) if self.input_shift is None else np.asarray(self.input_shift, dtype=np.float64)
        self.input_scale = np.ones(n) if self.input_scale is None else np.asarray(self.input_scale, dtype=np.float64)
        if self.input_shift.shape != (n,) or self.input_scale.shape != (n,):
            raise ValueError(f"input statistics must have shape ({n},)")
        if np.any(self.input_scale <= 0):
            raise ValueError("input_scale must be positive")

    @classmethod
    def initialized(cls, rng, variant: WiringVariant, feature_dim: int = FEATURE_DIM,
                    latent_dim: int = 50, hidden: int = AC_HIDDEN) -> "ActorCritic":
        input_dim = variant.input_dim(feature_dim, latent_dim)
        return cls(
            DenseLayer.initialized(input_dim, hidden, rng),
            DenseLayer.initialized(hidden, len(Behaviour), rng),
            DenseLayer.initialized(hidden, 1, rng),
            variant,
        )

    @property
    def input_dim(self) -> int:
        return self.trunk.in_features

    def standardize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.input_shift) / self.input_scale

    def parameters(self) -> dict[str, np.ndarray]:
        return {
            **self.trunk.parameters("ac.trunk"),
            **self.actor.parameters("ac.actor"),
            **self.critic.parameters("ac.critic"),
        }


def ac_ops(ops, ac: ActorCritic, x):
    h = ops.elu(ops.dense(ac.trunk, x))
    return ops.dense(ac.actor, h), ops.dense(ac.critic, h)


def actor_critic_forward(ac: ActorCritic, x: np.ndarray) -> tuple[np.ndarray, float]:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != ac.input_dim:
        raise VariantInputError(
            f"actor-critic for variant {ac.variant.value!r} expects {ac.input_dim} inputs, got {x.shape[-1]}"
        )
    logits, value = ac_ops(NUMPY_OPS, ac, ac.standardize(x))
    return logits, float(value[0])


def select_behaviour(logits: np.ndarray, mode: str, rng: np.random.Generator | None = None) -> Behaviour:
    if mode == "greedy":
        return Behaviour(int(np.argmax(logits)))
    if mode != "sample":
        raise ValueError(f"unknown selection mode {mode!r}")
    probs = softmax(np.asarray(logits, dtype=np.float64))
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    return Behaviour(min(idx, len(probs) - 1))


# --------------------------------------------------------------------------
# staged behaviour cloning
# --------------------------------------------------------------------------

def train_behaviour_stage(
    behaviour: Behaviour,
    env: PickPlaceEnv,
    fe: FeatureExtractor,
    rn: ReactiveNetwork,
    episodes: int,
    rng: np.random.Generator,
    *,
    noise_level: float = 0.0,
    optimizer: AdamState | None = None,
    updates_per_episode: int = 4,
    batch_size: int = 64,
) -> list[float]:
    """Fit one behaviour head by cloning the scripted expert; returns per-episode loss.

    The head under training acts whenever the scripted schedule selects its
    behaviour, and every state it visits is labelled with the expert action
    (aggregated into a growing buffer).  The other behaviours run the expert.
    The FE is trained jointly only in the approach stage.
    """
    behaviour = Behaviour(behaviour)
    expected = STAGE_ORDER[len(rn.completed_stages)] if len(rn.completed_stages) < 3 else None
    if behaviour is not expected:
        raise StageOrderError(
            f"cannot train {behaviour.label}: stages run approach -> grasp -> retract, "
            f"completed so far {[b.label for b in rn.completed_stages]}"
        )
    train_fe = behaviour is Behaviour.APPROACH
    params = rn.head_parameters(behaviour)
    if train_fe:
        params.update(fe.parameters())
    opt = optimizer if optimizer is not None else AdamState()

    obs_buf: list[np.ndarray] = []
    tgt_buf: list[np.ndarray] = []
    losses = []
    for _ in range(episodes):
        state, obs = env.reset(rng)
        done = False
        while not done:
            b = env.scripted_behaviour(state)
            noisy = env.inject_noise(obs, noise_level, rng)
            expert = env.expert_action(state, b)
            if b is behaviour:
                features, _ = fe_forward(fe, noisy)
                action = reactive_forward(rn, features, b)
                obs_buf.append(noisy)
                tgt_buf.append(expert_target(expert, b, rn.max_step))
            else:
                action = expert
            state, obs, _, done = env.step(state, b, action)

        if not obs_buf:
            losses.append(math.nan)
            continue
        X = np.asarray(obs_buf)
        Y = np.asarray(tgt_buf)
        ep_loss = 0.0
        for _ in range(updates_per_episode):
            idx = rng.integers(0, len(X), size=min(batch_size, len(X)))
            tape = GradientTape()
            if train_fe:
                _, feats = fe_ops(tape, fe, tape.constant(X[idx]))
            else:
                feats = tape.constant(fe_forward(fe, X[idx])[0])
            loss = tape.mse(head_ops(tape, rn, feats, behaviour), tape.constant(Y[idx]))
            ep_loss += float(loss.value)
            adam_step(params, compute_gradients(tape, loss, params), opt)
        losses.append(ep_loss / updates_per_episode)
    rn.completed_stages.append(behaviour)
    return losses


def reactive_rollout(env: PickPlaceEnv, fe: FeatureExtractor, rn: ReactiveNetwork,
                     rng: np.random.Generator, noise_level: float = 0.0) -> bool:
    """Scripted behaviour schedule executed by the (deterministic) reactive heads."""
    state, obs = env.reset(rng)
    done = False
    while not done:
        b = env.scripted_behaviour(state)
        features, _ = fe_forward(fe, env.inject_noise(obs, noise_level, rng))
        state, obs, _, done = env.step(state, b, reactive_forward(rn, features, b))
    return env.success(state)


# --------------------------------------------------------------------------
# actor-critic training
# --------------------------------------------------------------------------

@dataclass
class EpisodeRecord:
    episode: int
    success: bool
    episode_return: float
    length: int
    value_approach: float
    value_grasp: float
    value_retract: float
    count_approach: int
    count_grasp: int
    count_retract: int
    actor_loss: float
    critic_loss: float
    entropy: float
    update_count: int

    def value_for(self, behaviour: Behaviour) -> float:
        return getattr(self, f"value_{Behaviour(behaviour).label}")

    def count_for(self, behaviour: Behaviour) -> int:
        return getattr(self, f"count_{Behaviour(behaviour).label}")


_META_COLUMNS = ("seed", "variant", "noise_level")
_RECORD_COLUMNS = tuple(f.name for f in fields(EpisodeRecord))


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return str(value)


@dataclass
class TrainingLog:
    seed: int
    variant: WiringVariant
    noise_level: float
    records: list[EpisodeRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    @property
    def success(self) -> np.ndarray:
        return np.array([r.success for r in self.records], dtype=bool)

    def values(self, behaviour: Behaviour) -> np.ndarray:
        """Per-episode mean critic value for ``behaviour``; NaN where it was never chosen."""
        return np.array([r.value_for(behaviour) for r in self.records], dtype=np.float64)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(_META_COLUMNS + _RECORD_COLUMNS)
        for r in self.records:
            writer.writerow(
                [self.seed, self.variant.value, repr(float(self.noise_level))]
                + [_fmt(getattr(r, name)) for name in _RECORD_COLUMNS]
            )
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TrainingLog":
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows:
            raise ValueError("training log CSV has no episode rows")
        first = rows[0]
        log = cls(int(first["seed"]), WiringVariant.parse(first["variant"]), float(first["noise_level"]))
        for row in rows:
            kwargs = {}
            for f in fields(EpisodeRecord):
                raw = row[f.name]
                if f.type in ("bool", bool):
                    kwargs[f.name] = raw == "1"
                elif f.type in ("int", int):
                    kwargs[f.name] = int(raw)
                else:
                    kwargs[f.name] = math.nan if raw == "" else float(raw)
            log.records.append(EpisodeRecord(**kwargs))
        return log


def discounted_returns(rewards: Sequence[float], gamma: float) -> np.ndarray:
    out = np.empty(len(rewards))
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


@dataclass(frozen=True)
class ActorCriticConfig:
    gamma: float = 0.2
    entropy_coef: float = 0.01
    value_coef: float = 1.0
    learning_rate: float = 8e-3
    normalize_advantage: bool = True
    stats_episodes: int = 200
    min_input_scale: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.learning_rate <= 0 or self.min_input_scale <= 0:
            raise ValueError("learning_rate and min_input_scale must be positive")
        if self.stats_episodes < 0:
            raise ValueError("stats_episodes must be non-negative")


def actor_critic_loss(tape: GradientTape, ac: ActorCritic, inputs: np.ndarray, actions: np.ndarray,
                      returns: np.ndarray, config: ActorCriticConfig):
    """Episodic advantage actor-critic loss; the advantage is a constant to the actor."""
    logits, values = ac_ops(tape, ac, tape.constant(ac.standardize(inputs)))
    logp = tape.log_softmax(logits)
    advantage = returns - values.value[:, 0]
    if config.normalize_advantage and len(advantage) > 1:
        advantage = (advantage - advantage.mean()) / (advantage.std() + 1e-8)
    actor = tape.scale(tape.mean(tape.mul(tape.take(logp, actions), advantage)), -1.0)
    critic = tape.mse(values, tape.constant(returns[:, None]))
    entropy = tape.scale(tape.sum(tape.mul(tape.exp(logp), logp)), -1.0 / len(actions))
    total = tape.add(
        tape.add(actor, tape.scale(critic, config.value_coef)),
        tape.scale(entropy, -config.entropy_coef),
    )
    return total, float(actor.value), float(critic.value), float(entropy.value)


def run_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators per purpose, so variants share start states for a seed."""
    names = ("env", "policy", "noise", "init", "stats")
    return {name: np.random.default_rng([seed, i]) for i, name in enumerate(names)}


def fit_input_statistics(ac: ActorCritic, env: PickPlaceEnv, fe: FeatureExtractor, vae, episodes: int,
                         noise_level: float, rng: np.random.Generator, min_scale: float = 0.1) -> ActorCritic:
    """Set the actor-critic's input shift/scale from scripted-schedule rollouts.

    Scales are floored at ``min_scale`` so nearly constant inputs are centred, not blown up.
    """
    if episodes == 0:
        return ac
    rows = []
    for _ in range(episodes):
        state, obs = env.reset(rng)
        done = False
        while not done:
            features, activations = fe_forward(fe, env.inject_noise(obs, noise_level, rng))
            latent = vae_encode(vae, activations) if ac.variant.uses_latent else None
            rows.append(build_ac_input(ac.variant, features, latent, rng))
            b = env.scripted_behaviour(state)
            state, obs, _, done = env.step(state, b, env.expert_action(state, b))
    x = np.asarray(rows)
    ac.input_shift = x.mean(axis=0)
    ac.input_scale = np.maximum(x.std(axis=0), min_scale)
    return ac


def train_actor_critic(
    env: PickPlaceEnv,
    fe: FeatureExtractor,
    rn: ReactiveNetwork,
    ac: ActorCritic,
    variant: WiringVariant,
    vae,
    episodes: int,
    noise_level: float,
    seed: int,
    *,
    optimizer: AdamState | None = None,
    config: ActorCriticConfig = ActorCriticConfig(),
) -> TrainingLog:
    """Train the behaviour chooser; one update per episode from the full trajectory."""
    variant = WiringVariant(variant)
    if variant.uses_latent and vae is None:
        raise ValueError(f"variant {variant.value!r} requires a trained VAE")
    if ac.variant is not variant or ac.input_dim != variant.input_dim(fe.layer2.out_features,
                                                                       vae.latent_dim if vae else 50):
        raise VariantInputError(f"actor-critic was built for {ac.variant.value!r} ({ac.input_dim} inputs)")
    streams = run_streams(seed)
    env_rng, policy_rng, noise_rng = streams["env"], streams["policy"], streams["noise"]
    fit_input_statistics(ac, env, fe, vae, config.stats_episodes, noise_level, streams["stats"],
                         config.min_input_scale)
    params = ac.parameters()
    opt = optimizer if optimizer is not None else AdamState(learning_rate=config.learning_rate)
    log = TrainingLog(seed, variant, float(noise_level))
    updates = 0

    for episode in range(episodes):
        state, obs = env.reset(env_rng)
        inputs, actions, rewards, values = [], [], [], []
        done = False
        while not done:
            noisy = env.inject_noise(obs, noise_level, noise_rng)
            features, activations = fe_forward(fe, noisy)
            latent = vae_encode(vae, activations) if variant.uses_latent else None
            x = build_ac_input(variant, features, latent, policy_rng)
            logits, value = actor_critic_forward(ac, x)
            b = select_behaviour(logits, "sample", policy_rng)
            state, obs, reward, done = env.step(state, b, reactive_forward(rn, features, b))
            inputs.append(x)
            actions.append(int(b))
            rewards.append(reward)
            values.append(value)

        actions_arr = np.asarray(actions)
        values_arr = np.asarray(values)
        returns = discounted_returns(rewards, config.gamma)
        tape = GradientTape()
        loss, actor_loss, critic_loss, entropy = actor_critic_loss(
            tape, ac, np.asarray(inputs), actions_arr, returns, config
        )
        adam_step(params, compute_gradients(tape, loss, params), opt)
        updates += 1

        per_value = {}
        counts = {}
        for b in Behaviour:
            mask = actions_arr == int(b)
            counts[b] = int(mask.sum())
            per_value[b] = float(values_arr[mask].mean()) if counts[b] else math.nan
        log.records.append(EpisodeRecord(
            episode=episode,
            success=env.success(state),
            episode_return=float(sum(rewards)),
            length=len(rewards),
            value_approach=per_value[Behaviour.APPROACH],
            value_grasp=per_value[Behaviour.GRASP],
            value_retract=per_value[Behaviour.RETRACT],
            count_approach=counts[Behaviour.APPROACH],
            count_grasp=counts[Behaviour.GRASP],
            count_retract=counts[Behaviour.RETRACT],
            actor_loss=actor_loss,
            critic_loss=critic_loss,
            entropy=entropy,
            update_count=updates,
        ))
    return log
