"""
Learning internal states from feature activations
=================================================

Clones the three behaviours, records the feature extractor's 256 activations
along expert rollouts, fits the VAE and checks how well the latent means
separate the behaviours.  The sizes below are reduced so it finishes in about
a minute; ``--full`` uses the default run configuration (several minutes).
"""
import argparse

# %%
# Setup
# -----
import numpy as np

from introspective_bbrl import analysis, pipeline
from introspective_bbrl.bbrl import reactive_rollout
from introspective_bbrl.config import RunConfig
from introspective_bbrl.toy_env import PickPlaceEnv

parser = argparse.ArgumentParser()
parser.add_argument("--full", action="store_true", help="use the default sizes")
parser.add_argument("--embedding", default="", help="write the 2-D embedding CSV here")
args = parser.parse_args()

config = RunConfig()
if not args.full:
    config = config.replace(collect_episodes=300, vae_epochs=15)

# %%
# Staged behaviour cloning
# ------------------------
# Approach trains the feature extractor with its head; grasp and retract reuse
# the frozen features.
fe, rn, losses = pipeline.train_stack(config)
for b, curve in losses.items():
    print(f"{b.label:8s} loss {curve[0]:.4f} -> {curve[-1]:.4f}")
env = PickPlaceEnv(config.env)
ok = sum(reactive_rollout(env, fe, rn, np.random.default_rng([9, s])) for s in range(100))
print(f"reactive heads under the scripted schedule: {ok}% success")

# %%
# Activations and the VAE
# -----------------------
dataset = pipeline.collect(config, fe)
print(f"{len(dataset)} activation records of size {dataset.activations.shape[1]}")
result = pipeline.fit_vae(config, dataset)
print(f"validation loss {result.validation_loss[0]:.2f} -> {result.validation_loss[-1]:.2f}")

# %%
# Do the latent means group by behaviour?
# ---------------------------------------
# A score of 1/3 means labels look random among neighbours in the embedding.
points = pipeline.latent_embedding(result.model, result.validation_set)
print(f"label structure score (k=15): {analysis.label_structure_score(points, 15):.3f}")
if args.embedding:
    with open(args.embedding, "w", encoding="utf-8") as fh:
        fh.write(analysis.embedding_to_csv(points))
