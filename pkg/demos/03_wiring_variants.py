"""
Feeding internal states to the behaviour chooser
================================================

Trains the actor-critic with plain features and with the VAE's means and log
variances, on the same seeds, and prints the convergence table.  With the
default sizes each run takes under twenty seconds; the VAE fit dominates.
"""
import argparse

# %%
# Setup
# -----
from introspective_bbrl import analysis, pipeline
from introspective_bbrl.config import RunConfig
from introspective_bbrl.introspection import WiringVariant

parser = argparse.ArgumentParser()
parser.add_argument("--seeds", type=int, default=3)
parser.add_argument("--noise", type=float, default=0.0)
parser.add_argument("--vae-epochs", type=int, default=30)
args = parser.parse_args()

config = RunConfig().replace(vae_epochs=args.vae_epochs)
fe, rn, _ = pipeline.train_stack(config)
vae = pipeline.fit_vae(config, pipeline.collect(config, fe, args.noise)).model

# %%
# Train each variant on each seed
# -------------------------------
reports = []
for variant in (WiringVariant.BASELINE, WiringVariant.MEANS_LOGVAR):
    for seed in range(1, args.seeds + 1):
        _, log = pipeline.train_ac(config, fe, rn, vae, variant, args.noise, seed)
        report = analysis.convergence_report(log)
        reports.append(report)
        print(f"{variant.value:13s} seed {seed}: episodes to 80% {report.episodes_to_threshold}, "
              f"final success {report.final_success:.0f}%")

# %%
# Comparison table
# ----------------
# Not-reached runs count as the full episode budget in the episode mean.
print(analysis.compare_runs(reports))
