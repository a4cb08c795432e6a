"""Acceptance criteria 1-11, each at its stated tolerance.

Training-based criteria share one stack, one VAE per noise level and one set
of actor-critic runs (session fixtures), so the whole file takes roughly
twenty minutes on one CPU.  Every criterion records a PASS/FAIL line that is
printed in the terminal summary.
"""
import math
import time

import numpy as np
import pytest

from conftest import central_difference
from introspective_bbrl import analysis, pipeline
from introspective_bbrl.bbrl import reactive_rollout
from introspective_bbrl.cli import main
from introspective_bbrl.config import RunConfig
from introspective_bbrl.introspection import (
    VaeModel,
    WiringVariant,
    build_ac_input,
    vae_loss,
    vae_loss_on_tape,
)
from introspective_bbrl.nn_core import GaussianLatent, GradientTape, compute_gradients
from introspective_bbrl.toy_env import PickPlaceEnv

pytestmark = pytest.mark.slow

SEEDS = (1, 2, 3, 4, 5)
CONFIG = RunConfig()
TAIL = 500


def _record(criteria, number, ok, detail):
    criteria[number] = f"{'PASS' if ok else 'FAIL'}  {detail}"
    return ok


# -- shared training artefacts ------------------------------------------------------

@pytest.fixture(scope="session")
def stack():
    fe, rn, _ = pipeline.train_stack(CONFIG)
    return fe, rn


@pytest.fixture(scope="session")
def vae_clean(stack):
    return pipeline.fit_vae(CONFIG, pipeline.collect(CONFIG, stack[0], 0.0))


@pytest.fixture(scope="session")
def vae_noisy(stack):
    return pipeline.fit_vae(CONFIG, pipeline.collect(CONFIG, stack[0], 0.10)).model


def _runs(stack, vae, variants, noise):
    fe, rn = stack
    return {(v, s): pipeline.train_ac(CONFIG, fe, rn, vae, v, noise, s)[1] for v in variants for s in SEEDS}


@pytest.fixture(scope="session")
def clean_runs(stack, vae_clean):
    return _runs(stack, vae_clean.model, (WiringVariant.BASELINE, WiringVariant.MEANS_LOGVAR), 0.0)


@pytest.fixture(scope="session")
def noisy_runs(stack, vae_noisy):
    variants = (WiringVariant.BASELINE, WiringVariant.MEANS_ONLY, WiringVariant.CONCAT_FEATURES_MEANS)
    return _runs(stack, vae_noisy, variants, 0.10)


# -- exact criteria --------------------------------------------------------------------

def _loss_oracle(x, y, mu, logvar):
    # reconstruction squared error summed over the activation, plus the closed-form
    # Gaussian KL summed over latent dimensions, both with exactly rounded sums
    recon = math.fsum((a - b) ** 2 for a, b in zip(x, y))
    kl = math.fsum(0.5 * (math.exp(lv) + m * m - 1.0 - lv) for m, lv in zip(mu, logvar))
    return recon + kl


def test_criterion_01_vae_loss(criteria):
    r = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        x, y = r.normal(size=256), r.normal(size=256)
        mu, logvar = r.normal(size=50), r.uniform(-3, 3, size=50)
        got = vae_loss(x[None], y[None], GaussianLatent(mu[None], logvar[None]))
        worst = max(worst, abs(got - _loss_oracle(x, y, mu, logvar)))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and elapsed < 1.0
    _record(criteria, 1, ok, f"vae_loss vs closed form, 1000 cases: max |diff| {worst:.2e} (<= 1e-12), {elapsed:.2f}s")
    assert ok


def test_criterion_02_vae_gradients(criteria):
    r = np.random.default_rng(7)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        vae = VaeModel.initialized(r, 16, (8,), 4, (8,))
        for p in vae.parameters().values():
            p += r.normal(size=p.shape) * 0.3
        x, eps = r.normal(size=(4, 16)), r.normal(size=(4, 4))
        params = vae.parameters()
        tape = GradientTape()
        grads = compute_gradients(tape, vae_loss_on_tape(tape, vae, x, eps), params)
        for name, array in params.items():
            numeric = central_difference(lambda: float(vae_loss_on_tape(GradientTape(), vae, x, eps).value), array)
            denom = max(np.linalg.norm(grads[name]), np.linalg.norm(numeric), 1e-12)
            worst = max(worst, float(np.linalg.norm(grads[name] - numeric) / denom))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-4 and elapsed < 10.0
    _record(criteria, 2, ok, f"reduced VAE gradients, 20 points: max relative error {worst:.2e} (< 1e-4), {elapsed:.1f}s")
    assert ok


def test_criterion_03_architecture(criteria):
    vae = VaeModel.initialized(np.random.default_rng(0), CONFIG.vae_input_dim, CONFIG.encoder_sizes,
                               CONFIG.latent_dim, CONFIG.decoder_sizes)
    got = (vae.input_dim, vae.encoder_widths, vae.latent_dim, vae.decoder_widths)
    ok = got == (256, (400, 128), 50, (128, 400, 256))
    _record(criteria, 3, ok, f"VAE input/encoder/latent/decoder = {got}")
    assert ok


def test_criterion_04_wiring(criteria):
    r = np.random.default_rng(3)
    features = r.normal(size=128)
    latent = GaussianLatent(r.normal(size=50), r.normal(size=50))
    expected = {
        WiringVariant.BASELINE: list(features),
        WiringVariant.CONCAT_FEATURES_MEANS: list(features) + list(latent.mu),
        WiringVariant.MEANS_ONLY: list(latent.mu),
        WiringVariant.MEANS_LOGVAR: list(latent.mu) + list(latent.logvar),
    }
    lengths, ok = [], True
    for v in WiringVariant:
        out = build_ac_input(v, features, latent, np.random.default_rng(0))
        lengths.append(len(out))
        if v in expected:
            ok &= [float(a) for a in out] == [float(b) for b in expected[v]]
    ok &= lengths == [128, 178, 50, 100, 50]
    _record(criteria, 4, ok, f"input lengths {lengths}, element order checked by hand-assembled vectors")
    assert ok


# -- training criteria -------------------------------------------------------------------

def test_criterion_05_expert_pipeline(criteria, stack):
    env = PickPlaceEnv(CONFIG.env)
    r = np.random.default_rng(5)
    expert = sum(env.expert_rollout(r)[2] for _ in range(1000)) / 1000
    reactive = sum(reactive_rollout(env, *stack, np.random.default_rng([55, s])) for s in range(200)) / 200
    ok = expert >= 0.99 and reactive >= 0.90
    _record(criteria, 5, ok, f"expert success {expert:.3f} (>= 0.99), reactive success {reactive:.3f} (>= 0.90)")
    assert ok


def _e80(log):
    return analysis.episodes_to_threshold(analysis.moving_average_success(log))


def test_criterion_06_baseline_learns(criteria, clean_runs):
    e80 = [_e80(clean_runs[(WiringVariant.BASELINE, s)]) for s in SEEDS]
    reached = sum(e is not None for e in e80)
    ok = reached >= 4
    _record(criteria, 6, ok, f"baseline episodes to 80% per seed {e80}; reached on {reached}/5 (>= 4)")
    assert ok


def _tail_variance(runs, variant):
    curves = np.array([analysis.moving_average_success(runs[(variant, s)]).values for s in SEEDS])
    return float(curves[:, -TAIL:].var(axis=0).mean())


def test_criterion_07_convergence_direction(criteria, clean_runs):
    def mean_e80(variant):
        logs = [clean_runs[(variant, s)] for s in SEEDS]
        return float(np.mean([_e80(l) if _e80(l) is not None else len(l) for l in logs]))

    base, ml = mean_e80(WiringVariant.BASELINE), mean_e80(WiringVariant.MEANS_LOGVAR)
    var_base = _tail_variance(clean_runs, WiringVariant.BASELINE)
    var_ml = _tail_variance(clean_runs, WiringVariant.MEANS_LOGVAR)
    ok = ml < base and var_ml <= var_base
    _record(criteria, 7, ok, f"mean episodes to 80%: means_logvar {ml:.0f} vs baseline {base:.0f}; "
                             f"across-seed success variance over last {TAIL}: {var_ml:.1f} vs {var_base:.1f}")
    assert ok


def test_criterion_08_state_values(criteria, clean_runs):
    wins = 0
    detail = []
    for s in SEEDS:
        base = analysis.state_value_summary(clean_runs[(WiringVariant.BASELINE, s)])
        ml = analysis.state_value_summary(clean_runs[(WiringVariant.MEANS_LOGVAR, s)])
        higher = [b.label[0] for b in base if base[b] is not None and ml[b] is not None and ml[b] >= base[b]]
        wins += len(higher) == len(base)
        detail.append("".join(higher) or "-")
    ok = wins >= 3
    _record(criteria, 8, ok, f"means_logvar >= baseline on all three behaviours for {wins}/5 seeds (>= 3); "
                             f"behaviours higher per seed {detail}")
    assert ok


def test_criterion_09_noise_robustness(criteria, noisy_runs):
    final = {k: analysis.moving_average_success(v).values[-1] for k, v in noisy_runs.items()}
    counts = {}
    for v in (WiringVariant.MEANS_ONLY, WiringVariant.CONCAT_FEATURES_MEANS):
        counts[v.value] = int(sum(final[(v, s)] >= final[(WiringVariant.BASELINE, s)] for s in SEEDS))
    ok = max(counts.values()) >= 3
    _record(criteria, 9, ok, f"seeds with final success >= baseline at noise 0.10: {counts} (>= 3 for one variant)")
    assert ok


def test_criterion_10_latent_structure(criteria, vae_clean):
    start = time.perf_counter()
    points = pipeline.latent_embedding(vae_clean.model, vae_clean.validation_set)
    score = analysis.label_structure_score(points, 15)
    elapsed = time.perf_counter() - start
    ok = score >= 1 / 3 + 0.15 and elapsed < 60
    _record(criteria, 10, ok, f"label structure score (k=15, PCA) {score:.3f} (>= {1 / 3 + 0.15:.3f}), {elapsed:.1f}s")
    assert ok


def test_criterion_11_determinism(criteria, clean_runs, tmp_path):
    e80 = {s: _e80(clean_runs[(WiringVariant.BASELINE, s)]) or math.inf for s in SEEDS}
    seed = min(e80, key=e80.get)
    common = ["--seed", str(CONFIG.seed)]
    outputs = []
    for run in ("a", "b"):
        assert main(["train-stages", *common, "--out", str(tmp_path / run / "stack")]) == 0
        assert main(["train-ac", "--seed", str(seed), "--checkpoint", str(tmp_path / run / "stack" / "stack.ckpt"),
                     "--out", str(tmp_path / run / "ac")]) == 0
        outputs.append({p.relative_to(tmp_path / run): p.read_bytes() for p in sorted((tmp_path / run).rglob("*.*"))})
    same = outputs[0] == outputs[1]
    matches_session = outputs[0][tmp_path.joinpath("a", "ac", "training_log.csv").relative_to(tmp_path / "a")] \
        == clean_runs[(WiringVariant.BASELINE, seed)].to_csv().encode()
    ok = same and matches_session and len(outputs[0]) == 6
    _record(criteria, 11, ok, f"reran train-stages and train-ac (seed {seed}): {len(outputs[0])} files "
                              f"byte-identical={same}, log equals in-process run={matches_session}")
    assert ok
