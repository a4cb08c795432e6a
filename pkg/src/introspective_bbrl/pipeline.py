"""End-to-end steps and the experiment suites built from them.

Each step is a pure function of a :class:`RunConfig`, its inputs and the
seed.  Generators are derived from ``(seed, purpose)`` so steps can be rerun
in isolation and still produce identical bytes.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import analysis
from .bbrl import (
    STAGE_ORDER,
    ActorCritic,
    FeatureExtractor,
    ReactiveNetwork,
    TrainingLog,
    run_streams,
    train_actor_critic,
    train_behaviour_stage,
)
from .checkpoint import ac_blocks, save_checkpoint, stack_blocks, vae_blocks
from .config import RunConfig
from .introspection import (
    ActivationDataset,
    VaeModel,
    VaeTrainingResult,
    WiringVariant,
    collect_activation_dataset,
    save_dataset,
    train_vae,
    vae_encode,
)
from .nn_core import AdamState
from .toy_env import Behaviour, PickPlaceEnv

log = logging.getLogger(__name__)

SUITES = ("exp1", "exp2", "exp3")
EXP3_NOISE_LEVELS = (0.05, 0.10)
DEFAULT_SEEDS = {"exp1": (1,), "exp2": tuple(range(1, 11)), "exp3": tuple(range(1, 6))}


class OutputExistsError(FileExistsError):
    pass


def _noise_key(noise_level: float) -> int:
    return int(round(noise_level * 1_000_000))


def _adam(config: RunConfig, learning_rate: float | None = None) -> AdamState:
    return AdamState(learning_rate=learning_rate or config.learning_rate,
                     beta1=config.beta1, beta2=config.beta2, epsilon=config.epsilon)


def fresh_dir(path: Path) -> Path:
    """Create ``path``; refuse to reuse a directory that already holds files."""
    if path.exists() and any(path.iterdir()):
        raise OutputExistsError(f"{path} already has outputs; choose another --out")
    path.mkdir(parents=True, exist_ok=True)
    return path


# --------------------------------------------------------------------------
# single steps
# --------------------------------------------------------------------------

def train_stack(config: RunConfig) -> tuple[FeatureExtractor, ReactiveNetwork, dict[Behaviour, list[float]]]:
    """Run the approach, grasp and retract cloning stages in order."""
    rng = np.random.default_rng([config.seed, 100])
    fe = FeatureExtractor.initialized(rng, config.obs_dim, config.fe_sizes)
    rn = ReactiveNetwork.initialized(rng, config.fe_sizes[1], config.reactive_hidden, config.env.max_step)
    env = PickPlaceEnv(config.env)
    losses = {}
    for behaviour, episodes in zip(STAGE_ORDER, config.stage_episodes):
        losses[behaviour] = train_behaviour_stage(
            behaviour, env, fe, rn, episodes, rng,
            optimizer=_adam(config),
            updates_per_episode=config.stage_updates_per_episode,
            batch_size=config.stage_batch_size,
        )
        log.info("stage %s done, final loss %.5f", behaviour.label, losses[behaviour][-1] if episodes else float("nan"))
    return fe, rn, losses


def stage_losses_csv(losses: dict[Behaviour, list[float]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("stage", "episode", "loss"))
    for behaviour, curve in losses.items():
        for i, v in enumerate(curve):
            writer.writerow((behaviour.label, i, "" if np.isnan(v) else repr(float(v))))
    return buf.getvalue()


def collect(config: RunConfig, fe: FeatureExtractor, noise_level: float | None = None,
            fe_checkpoint: str = "") -> ActivationDataset:
    noise = config.noise_level if noise_level is None else noise_level
    rng = np.random.default_rng([config.seed, 101, _noise_key(noise)])
    return collect_activation_dataset(PickPlaceEnv(config.env), fe, config.collect_episodes, noise, rng,
                                      fe_checkpoint=fe_checkpoint)


def fit_vae(config: RunConfig, dataset: ActivationDataset) -> VaeTrainingResult:
    rng = np.random.default_rng([config.seed, 102])
    return train_vae(
        dataset, config.vae_epochs, rng,
        train_fraction=config.train_fraction, batch_size=config.batch_size, optimizer=_adam(config),
        encoder_sizes=config.encoder_sizes, latent_dim=config.latent_dim, decoder_sizes=config.decoder_sizes,
        min_input_scale=config.vae_min_input_scale,
    )


def vae_loss_csv(result: VaeTrainingResult) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("epoch", "train_loss", "validation_loss"))
    for i, (t, v) in enumerate(zip(result.train_loss, result.validation_loss)):
        writer.writerow((i, repr(float(t)), repr(float(v))))
    return buf.getvalue()


def train_ac(config: RunConfig, fe: FeatureExtractor, rn: ReactiveNetwork, vae: VaeModel | None,
             variant: WiringVariant | None = None, noise_level: float | None = None,
             seed: int | None = None) -> tuple[ActorCritic, TrainingLog]:
    variant = config.variant if variant is None else WiringVariant(variant)
    noise = config.noise_level if noise_level is None else noise_level
    seed = config.seed if seed is None else seed
    if variant.uses_latent and vae is None:
        raise ValueError(f"variant {variant.value!r} needs a VAE checkpoint")
    latent_dim = vae.latent_dim if vae is not None else config.latent_dim
    ac = ActorCritic.initialized(run_streams(seed)["init"], variant, fe.layer2.out_features,
                                 latent_dim, config.ac_hidden)
    training_log = train_actor_critic(
        PickPlaceEnv(config.env), fe, rn, ac, variant, vae if variant.uses_latent else None,
        config.ac_episodes, noise, seed,
        optimizer=_adam(config, config.actor_critic.learning_rate), config=config.actor_critic,
    )
    return ac, training_log


def write_run(run_dir: Path, config: RunConfig, ac: ActorCritic, training_log: TrainingLog) -> None:
    run_config = config.replace(variant=training_log.variant, noise_level=training_log.noise_level,
                                seed=training_log.seed)
    (run_dir / "training_log.csv").write_text(training_log.to_csv(), encoding="utf-8")
    (run_dir / "success_curve.csv").write_text(
        analysis.moving_average_success(training_log).to_csv("success_percent"), encoding="utf-8")
    (run_dir / "state_values.csv").write_text(analysis.state_value_curves(training_log), encoding="utf-8")
    save_checkpoint(ac_blocks(ac), run_dir / "ac.ckpt", run_config.to_text(include_output=False))


# --------------------------------------------------------------------------
# experiment suites
# --------------------------------------------------------------------------

@dataclass
class SuiteResult:
    suite: str
    out_dir: Path
    reports: list[analysis.ConvergenceReport]
    failures: list[tuple[WiringVariant, float, int, str]]
    table_path: Path | None = None


def latent_embedding(vae: VaeModel, dataset: ActivationDataset, method: str = "pca", seed: int = 0):
    latent = vae_encode(vae, dataset.activations)
    return analysis.embed_latents(latent.mu, dataset.labels, method, seed=seed)


def _pretrain(config: RunConfig, out: Path):
    fe, rn, losses = train_stack(config)
    save_checkpoint(stack_blocks(fe, rn), out / "stack.ckpt", config.to_text(include_output=False))
    (out / "stage_losses.csv").write_text(stage_losses_csv(losses), encoding="utf-8")
    return fe, rn


def _noise_vae(config: RunConfig, fe: FeatureExtractor, noise: float, out: Path):
    dataset = collect(config, fe, noise, fe_checkpoint="stack.ckpt")
    tag = f"noise-{noise:g}"
    save_dataset(dataset, out / f"activations-{tag}.jsonl")
    result = fit_vae(config, dataset)
    save_checkpoint(vae_blocks(result.model), out / f"vae-{tag}.ckpt",
                    config.replace(noise_level=noise).to_text(include_output=False))
    (out / f"vae_loss-{tag}.csv").write_text(vae_loss_csv(result), encoding="utf-8")
    return result


def run_suite(suite: str, config: RunConfig, seeds: Sequence[int] | None = None,
              variants: Sequence[WiringVariant] | None = None) -> SuiteResult:
    """Run exp1 (latent structure), exp2 (variants, no noise) or exp3 (noise robustness)."""
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
    seeds = tuple(seeds) if seeds else DEFAULT_SEEDS[suite]
    out = fresh_dir(Path(config.out_dir) / suite)
    (out / "config.ini").write_text(config.to_text(include_output=False), encoding="utf-8")
    fe, rn = _pretrain(config, out)
    result = SuiteResult(suite, out, [], [])

    if suite == "exp1":
        vae_result = _noise_vae(config, fe, 0.0, out)
        points = latent_embedding(vae_result.model, vae_result.validation_set)
        (out / "embedding.csv").write_text(analysis.embedding_to_csv(points), encoding="utf-8")
        score = analysis.label_structure_score(points, 15)
        (out / "label_structure.csv").write_text(f"k,score\n15,{score!r}\n", encoding="utf-8")
        log.info("label structure score %.3f", score)
        return result

    if suite == "exp2":
        plan = [(v, 0.0) for v in (variants or list(WiringVariant))]
    else:
        plan = []
        for noise in EXP3_NOISE_LEVELS:
            for v in variants or list(WiringVariant):
                # the 5% sampled-latent run is left out of this suite
                if v is WiringVariant.SAMPLED_LATENT and noise == 0.05:
                    continue
                plan.append((v, noise))

    vaes = {}
    for noise in sorted({n for v, n in plan if v.uses_latent}):
        vaes[noise] = _noise_vae(config, fe, noise, out).model

    for variant, noise in plan:
        for seed in seeds:
            run_dir = fresh_dir(out / variant.value / f"noise-{noise:g}" / f"seed-{seed}")
            try:
                ac, training_log = train_ac(config, fe, rn, vaes.get(noise), variant, noise, seed)
            except (ValueError, FloatingPointError) as exc:
                log.error("run %s noise %g seed %d failed: %s", variant.value, noise, seed, exc)
                (run_dir / "FAILED").write_text(f"{exc}\n", encoding="utf-8")
                result.failures.append((variant, noise, seed, str(exc)))
                continue
            write_run(run_dir, config, ac, training_log)
            report = analysis.convergence_report(training_log)
            result.reports.append(report)
            log.info("%s noise %g seed %d: episodes to 80%% = %s", variant.value, noise, seed,
                     report.episodes_to_threshold)

    table = analysis.compare_runs(result.reports, result.failures)
    result.table_path = out / "comparison.csv"
    result.table_path.write_text(table, encoding="utf-8")
    return result


def report_from_logs(paths: Sequence[Path]) -> str:
    """Comparison table over existing training_log.csv files."""
    reports = [analysis.convergence_report(TrainingLog.from_csv(Path(p).read_text(encoding="utf-8")))
               for p in paths]
    return analysis.compare_runs(reports)
