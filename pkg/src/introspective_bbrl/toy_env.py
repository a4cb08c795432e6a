"""Deterministic kinematic pick-and-place world with three behaviours.

The gripper moves by bounded 3-D displacements.  A block is picked by
approaching it, closing the gripper while rotating into alignment (grasp), and
carried to a target (retract).  Everything is a pure function of the state and
the action; randomness only enters through the generator handed to
:meth:`PickPlaceEnv.reset` and :func:`inject_noise`.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

OBS_DIM = 13


class Behaviour(enum.IntEnum):
    APPROACH = 0
    GRASP = 1
    RETRACT = 2

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def from_label(cls, label: str) -> "Behaviour":
        try:
            return cls[label.upper()]
        except KeyError:
            raise ValueError(f"unknown behaviour label {label!r}") from None


@dataclass(frozen=True)
class EnvConfig:
    horizon: int = 50
    max_step: float = 0.05
    contact_eps: float = 0.05
    grasp_threshold: float = 0.3
    align_rate: float = 0.2
    align_threshold: float = 0.9
    aperture_rate: float = 0.2
    success_eps: float = 0.05
    min_separation: float = 0.3
    spawn_extent: float = 0.6
    home: tuple[float, float, float] = (0.0, 0.0, 0.0)
    step_reward: float = -0.01
    success_reward: float = 1.0
    noise_std: float = 0.1
    stall_penalty: float = 0.05
    progress_margin: float = 0.0125
    grasp_potential: float = 0.25

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be positive")
        if not 0 < self.spawn_extent <= 1:
            raise ValueError("spawn_extent must lie in (0, 1]")
        if any(abs(h) > 1 for h in self.home):
            raise ValueError("home position must lie inside the workspace")
        if self.stall_penalty < 0:
            raise ValueError("stall_penalty must be non-negative")
        for name in ("max_step", "contact_eps", "align_rate", "aperture_rate", "success_eps", "noise_std"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True, eq=False)
class WorldState:
    gripper_pos: np.ndarray
    object_pos: np.ndarray
    target_pos: np.ndarray
    aperture: float = 1.0
    grasp_alignment: float = 0.0
    object_held: bool = False
    step_index: int = 0

    def __eq__(self, other):
        if not isinstance(other, WorldState):
            return NotImplemented
        return (
            np.array_equal(self.gripper_pos, other.gripper_pos)
            and np.array_equal(self.object_pos, other.object_pos)
            and np.array_equal(self.target_pos, other.target_pos)
            and self.aperture == other.aperture
            and self.grasp_alignment == other.grasp_alignment
            and self.object_held == other.object_held
            and self.step_index == other.step_index
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class LowLevelAction:
    delta_pos: np.ndarray
    rotation: float = 0.0
    gripper_cmd: float = 1.0

    @classmethod
    def zero(cls, gripper_cmd: float = 1.0) -> "LowLevelAction":
        return cls(np.zeros(3), 0.0, gripper_cmd)


def observe(state: WorldState) -> np.ndarray:
    """Observation layout: gripper(3), object(3), object - gripper(3), aperture(1), target(3)."""
    return np.concatenate([
        state.gripper_pos,
        state.object_pos,
        state.object_pos - state.gripper_pos,
        [state.aperture],
        state.target_pos,
    ])


def _clamped_step(direction: np.ndarray, max_step: float) -> np.ndarray:
    # scale so the largest component is at most max_step, keeping the direction
    peak = np.max(np.abs(direction))
    if peak <= max_step:
        return direction.copy()
    return direction * (max_step / peak)


class PickPlaceEnv:
    """Stateless dynamics; :class:`WorldState` values are threaded through explicitly."""

    def __init__(self, config: EnvConfig | None = None):
        self.config = config or EnvConfig()

    def reset(self, rng: np.random.Generator) -> tuple[WorldState, np.ndarray]:
        c = self.config
        while True:
            obj = rng.uniform(-c.spawn_extent, c.spawn_extent, size=3)
            tgt = rng.uniform(-c.spawn_extent, c.spawn_extent, size=3)
            if np.linalg.norm(obj - tgt) >= c.min_separation:
                break
        state = WorldState(np.array(c.home, dtype=np.float64), obj, tgt)
        return state, observe(state)

    def success(self, state: WorldState) -> bool:
        return bool(np.linalg.norm(state.object_pos - state.target_pos) < self.config.success_eps)

    def potential(self, state: WorldState) -> float:
        """Negative remaining task distance; steps that fail to raise it are penalized."""
        remaining = float(np.linalg.norm(state.object_pos - state.target_pos))
        if not state.object_held:
            remaining += float(np.linalg.norm(state.gripper_pos - state.object_pos))
            in_contact = np.linalg.norm(state.gripper_pos - state.object_pos) < self.config.contact_eps
            grasp_left = 0.5 * (1.0 - state.grasp_alignment) + 0.5 * (state.aperture if in_contact else 1.0)
            remaining += self.config.grasp_potential * grasp_left
        return -remaining

    def is_done(self, state: WorldState) -> bool:
        return self.success(state) or state.step_index >= self.config.horizon

    def step(self, state: WorldState, behaviour: Behaviour, action: LowLevelAction):
        c = self.config
        if self.is_done(state):
            raise RuntimeError("step called on a finished episode; reset first")
        behaviour = Behaviour(behaviour)

        delta = np.clip(np.asarray(action.delta_pos, dtype=np.float64), -c.max_step, c.max_step)
        rotation = float(np.clip(action.rotation, -1.0, 1.0))
        cmd = float(np.clip(action.gripper_cmd, 0.0, 1.0))

        gripper = np.clip(state.gripper_pos + delta, -1.0, 1.0)
        aperture = state.aperture + float(np.clip(cmd - state.aperture, -c.aperture_rate, c.aperture_rate))
        aperture = min(max(aperture, 0.0), 1.0)
        held = state.object_held
        alignment = state.grasp_alignment
        obj = state.object_pos

        if held and aperture >= c.grasp_threshold:
            held = False
            alignment = 0.0
        if held:
            obj = gripper.copy()

        in_contact = np.linalg.norm(gripper - obj) < c.contact_eps
        if not in_contact:
            alignment = 0.0
        elif behaviour is Behaviour.GRASP:
            alignment = min(1.0, alignment + abs(rotation) * c.align_rate)
            if not held and aperture < c.grasp_threshold and alignment > c.align_threshold:
                held = True
                obj = gripper.copy()

        new_state = WorldState(
            gripper, obj.copy(), state.target_pos.copy(),
            aperture, alignment, held, state.step_index + 1,
        )
        succeeded = self.success(new_state)
        reward = c.step_reward + (c.success_reward if succeeded else 0.0)
        if c.stall_penalty and not succeeded:
            if self.potential(new_state) - self.potential(state) < c.progress_margin:
                reward -= c.stall_penalty
        done = succeeded or new_state.step_index >= c.horizon
        return new_state, observe(new_state), reward, done

    # -- scripted experts ------------------------------------------------------

    def expert_action(self, state: WorldState, behaviour: Behaviour) -> LowLevelAction:
        c = self.config
        behaviour = Behaviour(behaviour)
        if behaviour is Behaviour.APPROACH:
            return LowLevelAction(_clamped_step(state.object_pos - state.gripper_pos, c.max_step), 0.0, 1.0)
        if behaviour is Behaviour.GRASP:
            rotation = 1.0 if state.grasp_alignment <= c.align_threshold else 0.0
            return LowLevelAction(np.zeros(3), rotation, 0.0)
        return LowLevelAction(_clamped_step(state.target_pos - state.gripper_pos, c.max_step), 0.0, 0.0)

    def scripted_behaviour(self, state: WorldState) -> Behaviour:
        if state.object_held:
            return Behaviour.RETRACT
        if np.linalg.norm(state.object_pos - state.gripper_pos) < self.config.contact_eps:
            return Behaviour.GRASP
        return Behaviour.APPROACH

    def expert_rollout(self, rng: np.random.Generator):
        """Run the scripted schedule with expert actions; returns (states, behaviours, success)."""
        state, _ = self.reset(rng)
        states, behaviours = [state], []
        done = False
        while not done:
            b = self.scripted_behaviour(state)
            state, _, _, done = self.step(state, b, self.expert_action(state, b))
            states.append(state)
            behaviours.append(b)
        return states, behaviours, self.success(state)

    def inject_noise(self, obs: np.ndarray, level: float, rng: np.random.Generator) -> np.ndarray:
        return inject_noise(obs, level, rng, self.config.noise_std)


def inject_noise(obs: np.ndarray, level: float, rng: np.random.Generator, noise_std: float = 0.1) -> np.ndarray:
    """``obs + level * eps`` with ``eps ~ N(0, noise_std^2)`` per entry; level 0 draws nothing."""
    if not 0.0 <= level <= 1.0:
        raise ValueError(f"noise level must lie in [0, 1], got {level}")
    if level == 0.0:
        return obs
    return obs + level * rng.normal(0.0, noise_std, size=obs.shape)


def scripted_behaviour_schedule(env: PickPlaceEnv, state: WorldState) -> Behaviour:
    return env.scripted_behaviour(state)
