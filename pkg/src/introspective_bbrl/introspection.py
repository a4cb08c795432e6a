"""Internal states: activation datasets, the VAE over them, and actor-critic input wiring."""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .nn_core import (
    LOGVAR_MAX,
    LOGVAR_MIN,
    NUMPY_OPS,
    AdamState,
    DenseLayer,
    GaussianLatent,
    GradientTape,
    adam_step,
    compute_gradients,
    kl_std_normal,
    squared_error,
    reparameterized_sample,
)
from .toy_env import Behaviour

ACTIVATION_DIM = 256
LATENT_DIM = 50
FEATURE_DIM = 128


# --------------------------------------------------------------------------
# wiring variants
# --------------------------------------------------------------------------

class WiringVariant(enum.Enum):
    BASELINE = "baseline"
    CONCAT_FEATURES_MEANS = "concat_features_means"
    MEANS_ONLY = "means_only"
    MEANS_LOGVAR = "means_logvar"
    SAMPLED_LATENT = "sampled_latent"

    @classmethod
    def parse(cls, name: str) -> "WiringVariant":
        key = name.strip().lower().replace("-", "_")
        for v in cls:
            if v.value == key or v.name.lower() == key:
                return v
        raise ValueError(f"unknown wiring variant {name!r}; choose from {[v.value for v in cls]}")

    @property
    def uses_latent(self) -> bool:
        return self is not WiringVariant.BASELINE

    def input_dim(self, feature_dim: int = FEATURE_DIM, latent_dim: int = LATENT_DIM) -> int:
        return {
            WiringVariant.BASELINE: feature_dim,
            WiringVariant.CONCAT_FEATURES_MEANS: feature_dim + latent_dim,
            WiringVariant.MEANS_ONLY: latent_dim,
            WiringVariant.MEANS_LOGVAR: 2 * latent_dim,
            WiringVariant.SAMPLED_LATENT: latent_dim,
        }[self]


class MissingLatentError(ValueError):
    pass


def build_ac_input(
    variant: WiringVariant,
    features: np.ndarray,
    latent: GaussianLatent | None,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Assemble the actor-critic input for one wiring variant.

    Only ``SAMPLED_LATENT`` consumes randomness from ``rng``.
    """
    if variant is WiringVariant.BASELINE:
        return np.asarray(features, dtype=np.float64)
    if latent is None:
        raise MissingLatentError(f"variant {variant.value!r} needs a VAE latent")
    if variant is WiringVariant.CONCAT_FEATURES_MEANS:
        return np.concatenate([features, latent.mu])
    if variant is WiringVariant.MEANS_ONLY:
        return latent.mu.copy()
    if variant is WiringVariant.MEANS_LOGVAR:
        return np.concatenate([latent.mu, latent.logvar])
    if rng is None:
        raise ValueError("sampled_latent wiring requires a random generator")
    return reparameterized_sample(latent, rng)


# --------------------------------------------------------------------------
# VAE
# --------------------------------------------------------------------------

@dataclass(eq=False)
class VaeModel:
    encoder: list[DenseLayer]
    mu_head: DenseLayer
    logvar_head: DenseLayer
    decoder: list[DenseLayer]
    # per-activation standardization fitted on the training split; the network
    # sees and reconstructs (x - input_shift) / input_scale
    input_shift: np.ndarray | None = None
    input_scale: np.ndarray | None = None

    def __post_init__(self):
        n = self.input_dim
        self.input_shift = np.zeros(n) if self.input_shift is None else np.asarray(self.input_shift, dtype=np.float64)
        self.input_scale = np.ones(n) if self.input_scale is None else np.asarray(self.input_scale, dtype=np.float64)
        if self.input_shift.shape != (n,) or self.input_scale.shape != (n,):
            raise ValueError(f"VAE input statistics must have shape ({n},)")
        if np.any(self.input_scale <= 0):
            raise ValueError("VAE input_scale must be positive")

    def standardize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.input_shift) / self.input_scale

    @classmethod
    def initialized(
        cls,
        rng: np.random.Generator,
        input_dim: int = ACTIVATION_DIM,
        encoder_sizes: tuple[int, ...] = (400, 128),
        latent_dim: int = LATENT_DIM,
        decoder_sizes: tuple[int, ...] = (128, 400),
    ) -> "VaeModel":
        enc, width = [], input_dim
        for size in encoder_sizes:
            enc.append(DenseLayer.initialized(width, size, rng))
            width = size
        mu_head = DenseLayer.initialized(width, latent_dim, rng)
        logvar_head = DenseLayer.initialized(width, latent_dim, rng)
        dec, width = [], latent_dim
        for size in (*decoder_sizes, input_dim):
            dec.append(DenseLayer.initialized(width, size, rng))
            width = size
        return cls(enc, mu_head, logvar_head, dec)

    @property
    def input_dim(self) -> int:
        return self.encoder[0].in_features if self.encoder else self.mu_head.in_features

    @property
    def latent_dim(self) -> int:
        return self.mu_head.out_features

    @property
    def encoder_widths(self) -> tuple[int, ...]:
        return tuple(layer.out_features for layer in self.encoder)

    @property
    def decoder_widths(self) -> tuple[int, ...]:
        return tuple(layer.out_features for layer in self.decoder)

    def parameters(self) -> dict[str, np.ndarray]:
        params = {}
        for i, layer in enumerate(self.encoder):
            params.update(layer.parameters(f"vae.encoder.{i}"))
        params.update(self.mu_head.parameters("vae.mu"))
        params.update(self.logvar_head.parameters("vae.logvar"))
        for i, layer in enumerate(self.decoder):
            params.update(layer.parameters(f"vae.decoder.{i}"))
        return params

    @classmethod
    def from_parameters(cls, params: dict[str, np.ndarray]) -> "VaeModel":
        def layer(prefix):
            return DenseLayer(params[f"{prefix}.weights"].copy(), params[f"{prefix}.biases"].copy())

        def stack(prefix):
            out, i = [], 0
            while f"{prefix}.{i}.weights" in params:
                out.append(layer(f"{prefix}.{i}"))
                i += 1
            return out

        return cls(stack("vae.encoder"), layer("vae.mu"), layer("vae.logvar"), stack("vae.decoder"),
                   params.get("vae.input_shift"), params.get("vae.input_scale"))


def encode_ops(ops, vae: VaeModel, x):
    h = x
    for layer in vae.encoder:
        h = ops.elu(ops.dense(layer, h))
    mu = ops.dense(vae.mu_head, h)
    logvar = ops.clip(ops.dense(vae.logvar_head, h), LOGVAR_MIN, LOGVAR_MAX)
    return mu, logvar


def decode_ops(ops, vae: VaeModel, z):
    h = z
    last = len(vae.decoder) - 1
    for i, layer in enumerate(vae.decoder):
        h = ops.dense(layer, h)
        if i < last:
            h = ops.elu(h)
    return h


def vae_encode(vae: VaeModel, x_real: np.ndarray) -> GaussianLatent:
    x_real = np.asarray(x_real, dtype=np.float64)
    if x_real.shape[-1] != vae.input_dim:
        raise ValueError(f"VAE expects {vae.input_dim}-dim activations, got {x_real.shape[-1]}")
    mu, logvar = encode_ops(NUMPY_OPS, vae, vae.standardize(x_real))
    return GaussianLatent(mu, logvar)


def vae_decode(vae: VaeModel, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != vae.latent_dim:
        raise ValueError(f"VAE decoder expects {vae.latent_dim}-dim latents, got {z.shape[-1]}")
    return decode_ops(NUMPY_OPS, vae, z) * vae.input_scale + vae.input_shift


def vae_loss(x_real: np.ndarray, x_recons: np.ndarray, latent: GaussianLatent) -> float:
    """Reconstruction squared error (summed per sample) plus KL to the standard normal prior."""
    return squared_error(x_real, x_recons) + kl_std_normal(latent)


def vae_loss_on_tape(tape: GradientTape, vae: VaeModel, x: np.ndarray, eps: np.ndarray):
    """Record the full sampled-path VAE loss for a batch ``x`` (standardized space)."""
    xv = tape.constant(vae.standardize(x))
    mu, logvar = encode_ops(tape, vae, xv)
    z = tape.reparameterize(mu, logvar, eps)
    recons = decode_ops(tape, vae, z)
    return tape.add(tape.squared_error(recons, xv), tape.kl_std_normal(mu, logvar))


@dataclass
class VaeTrainingResult:
    model: VaeModel
    train_loss: list[float]
    validation_loss: list[float]
    train_set: "ActivationDataset"
    validation_set: "ActivationDataset"


def train_vae(
    ds: "ActivationDataset",
    epochs: int,
    rng: np.random.Generator,
    *,
    train_fraction: float = 0.8,
    batch_size: int = 128,
    optimizer: AdamState | None = None,
    encoder_sizes: tuple[int, ...] = (400, 128),
    latent_dim: int = LATENT_DIM,
    decoder_sizes: tuple[int, ...] = (128, 400),
    min_input_scale: float = 0.05,
) -> VaeTrainingResult:
    """Split ``ds``, then fit a VAE with Adam on shuffled minibatches.

    Training uses the reparameterized sample for reconstruction.  Validation
    loss is evaluated on the mean path (``z = mu``) so epochs are comparable.
    """
    train, validation = split_dataset(ds, train_fraction, rng)
    x_train = train.activations
    x_val = validation.activations
    vae = VaeModel.initialized(
        rng, x_train.shape[1], encoder_sizes=encoder_sizes, latent_dim=latent_dim, decoder_sizes=decoder_sizes
    )
    # near-constant activations keep a floor on their scale rather than being blown up
    vae.input_shift = x_train.mean(axis=0)
    vae.input_scale = np.maximum(x_train.std(axis=0), min_input_scale)
    params = vae.parameters()
    opt = optimizer if optimizer is not None else AdamState()
    n = x_train.shape[0]
    train_curve, val_curve = [], []
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, batch_size)):
            batch = x_train[order[start:start + batch_size]]
            eps = rng.standard_normal((batch.shape[0], vae.latent_dim))
            tape = GradientTape()
            loss = vae_loss_on_tape(tape, vae, batch, eps)
            if not math.isfinite(float(loss.value)):
                raise FloatingPointError(f"non-finite VAE loss at epoch {epoch}, batch {b}")
            grads = compute_gradients(tape, loss, params)
            adam_step(params, grads, opt)
            total += float(loss.value) * batch.shape[0]
        train_curve.append(total / n)
        val_curve.append(evaluate_vae(vae, x_val))
    return VaeTrainingResult(vae, train_curve, val_curve, train, validation)


def evaluate_vae(vae: VaeModel, x: np.ndarray) -> float:
    """Mean-path loss, measured in the standardized space the VAE is trained in."""
    latent = vae_encode(vae, x)
    return vae_loss(vae.standardize(x), decode_ops(NUMPY_OPS, vae, latent.mu), latent)


# --------------------------------------------------------------------------
# activation datasets
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ActivationRecord:
    activations: np.ndarray
    behaviour_label: Behaviour
    episode: int
    timestep: int


@dataclass(eq=False)
class ActivationDataset:
    """Column-oriented store of activation records."""

    activations: np.ndarray
    labels: np.ndarray
    episodes: np.ndarray
    timesteps: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.activations = np.asarray(self.activations, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.episodes = np.asarray(self.episodes, dtype=np.int64)
        self.timesteps = np.asarray(self.timesteps, dtype=np.int64)
        n = self.activations.shape[0]
        if n == 0:
            raise ValueError("activation dataset is empty")
        if self.activations.ndim != 2:
            raise ValueError("activations must be a 2-D array")
        if not (len(self.labels) == len(self.episodes) == len(self.timesteps) == n):
            raise ValueError("record columns differ in length")

    def __len__(self):
        return self.activations.shape[0]

    def __getitem__(self, i: int) -> ActivationRecord:
        return ActivationRecord(
            self.activations[i], Behaviour(int(self.labels[i])), int(self.episodes[i]), int(self.timesteps[i])
        )

    def __iter__(self) -> Iterator[ActivationRecord]:
        return (self[i] for i in range(len(self)))

    def subset(self, index: np.ndarray) -> "ActivationDataset":
        return ActivationDataset(
            self.activations[index], self.labels[index], self.episodes[index], self.timesteps[index],
            dict(self.provenance),
        )


def collect_activation_dataset(
    env,
    fe,
    episodes: int,
    noise_level: float,
    rng: np.random.Generator,
    *,
    fe_checkpoint: str = "",
) -> ActivationDataset:
    """Roll out the scripted expert and record FE activations at every timestep.

    Behaviour labels come from the scripted schedule; noise is applied to the
    observation before it reaches the feature extractor.
    """
    from .bbrl import fe_forward

    acts, labels, eps_idx, steps = [], [], [], []
    for ep in range(episodes):
        state, obs = env.reset(rng)
        done = False
        t = 0
        while not done:
            behaviour = env.scripted_behaviour(state)
            _, activations = fe_forward(fe, env.inject_noise(obs, noise_level, rng))
            acts.append(activations)
            labels.append(int(behaviour))
            eps_idx.append(ep)
            steps.append(t)
            state, obs, _, done = env.step(state, behaviour, env.expert_action(state, behaviour))
            t += 1
    provenance = {"noise_level": float(noise_level), "fe_checkpoint": fe_checkpoint, "episodes": int(episodes)}
    return ActivationDataset(np.array(acts), labels, eps_idx, steps, provenance)


def split_dataset(ds: ActivationDataset, train_fraction: float, rng: np.random.Generator):
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    if len(ds) == 0:
        raise ValueError("cannot split an empty dataset")
    order = rng.permutation(len(ds))
    cut = int(math.floor(len(ds) * train_fraction))
    return ds.subset(order[:cut]), ds.subset(order[cut:])


# -- JSONL persistence -------------------------------------------------------

class DatasetFormatError(ValueError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line


def save_dataset(ds: ActivationDataset, path: str | Path) -> None:
    """First line is the provenance header; every following line is one record."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps({"provenance": ds.provenance}, sort_keys=True) + "\n")
        for i in range(len(ds)):
            row = {
                "episode": int(ds.episodes[i]),
                "timestep": int(ds.timesteps[i]),
                "behaviour": Behaviour(int(ds.labels[i])).label,
                "activations": ds.activations[i].tolist(),
            }
            fh.write(json.dumps(row) + "\n")


def load_dataset(path: str | Path, expected_dim: int | None = ACTIVATION_DIM) -> ActivationDataset:
    acts, labels, eps_idx, steps = [], [], [], []
    provenance: dict = {}
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(lineno, f"invalid JSON ({exc.msg})") from None
            if lineno == 1 and "provenance" in row:
                provenance = row["provenance"]
                continue
            try:
                vec = np.asarray(row["activations"], dtype=np.float64)
                key = (int(row["episode"]), int(row["timestep"]))
                label = Behaviour.from_label(row["behaviour"])
            except (KeyError, TypeError, ValueError) as exc:
                raise DatasetFormatError(lineno, f"malformed record ({exc})") from None
            if vec.ndim != 1 or (expected_dim is not None and vec.shape[0] != expected_dim):
                raise DatasetFormatError(lineno, f"activation vector has shape {vec.shape}, expected ({expected_dim},)")
            if not np.all(np.isfinite(vec)):
                raise DatasetFormatError(lineno, "non-finite activation value")
            if key in seen:
                raise DatasetFormatError(lineno, f"duplicate (episode, timestep) {key}")
            seen.add(key)
            acts.append(vec)
            labels.append(int(label))
            eps_idx.append(key[0])
            steps.append(key[1])
    if not acts:
        raise DatasetFormatError(1, "dataset contains no records")
    dims = {a.shape[0] for a in acts}
    if len(dims) != 1:
        raise DatasetFormatError(1, f"records disagree on activation size: {sorted(dims)}")
    return ActivationDataset(np.stack(acts), labels, eps_idx, steps, provenance)
