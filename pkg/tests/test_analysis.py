import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from introspective_bbrl.analysis import (
    ConvergenceReport,
    EmbeddedPoint,
    compare_runs,
    convergence_report,
    embed_latents,
    embedding_to_csv,
    episodes_to_threshold,
    label_structure_score,
    moving_average_success,
    state_value_curves,
    state_value_summary,
)
from introspective_bbrl.bbrl import EpisodeRecord, TrainingLog
from introspective_bbrl.introspection import WiringVariant
from introspective_bbrl.toy_env import Behaviour


def _log(successes, values=None, variant=WiringVariant.BASELINE, seed=1):
    log = TrainingLog(seed, variant, 0.0)
    for i, s in enumerate(successes):
        v = values[i] if values is not None else (0.5, 0.5, 0.5)
        counts = [0 if math.isnan(x) else 1 for x in v]
        log.records.append(EpisodeRecord(i, bool(s), 0.0, sum(counts), *v, *counts, 0.0, 0.0, 0.0, i + 1))
    return log


def _points(z, labels):
    return [EmbeddedPoint(float(a), float(b), Behaviour(int(l))) for (a, b), l in zip(z, labels)]


# -- embedding -----------------------------------------------------------------

def test_pca_preserves_planar_distances(rng):
    basis = np.linalg.qr(rng.normal(size=(50, 2)))[0]
    x = rng.normal(size=(40, 2)) @ basis.T + rng.normal(size=50)
    z = np.array([(p.z1, p.z2) for p in embed_latents(x, np.zeros(40, int))])
    d_x = np.linalg.norm(x[:, None] - x[None], axis=-1)
    d_z = np.linalg.norm(z[:, None] - z[None], axis=-1)
    np.testing.assert_allclose(d_z, d_x, atol=1e-9)
    assert z[:, 0].var() >= z[:, 1].var()


def test_pca_collinear_points():
    x = np.outer([0.0, 1.0, 2.5], np.arange(1.0, 6.0))
    points = embed_latents(x, [0, 1, 2])
    assert all(p.z2 == 0.0 for p in points)


def test_pca_order_invariance(rng):
    x = rng.normal(size=(30, 5)) * [3, 2, 1, 0.5, 0.1]
    labels = rng.integers(0, 3, 30)
    perm = rng.permutation(30)
    a = np.array([(p.z1, p.z2) for p in embed_latents(x, labels)])
    b = np.array([(p.z1, p.z2) for p in embed_latents(x[perm], labels[perm])])
    np.testing.assert_allclose(np.abs(a[perm]), np.abs(b), atol=1e-10)


def test_embed_requires_three_points():
    with pytest.raises(ValueError):
        embed_latents(np.zeros((2, 4)), [0, 1])
    with pytest.raises(ValueError):
        embed_latents(np.zeros((4, 4)), [0, 1, 2, 0], method="umap")


def test_tsne_is_seeded(rng):
    pytest.importorskip("sklearn")
    x = rng.normal(size=(20, 4))
    a = embed_latents(x, np.zeros(20, int), "tsne", seed=3, perplexity=5)
    b = embed_latents(x, np.zeros(20, int), "tsne", seed=3, perplexity=5)
    assert a == b


def test_embedding_csv():
    text = embedding_to_csv(_points([(0.5, -1.0)], [2]))
    assert text == "z1,z2,label\n0.5,-1.0,retract\n"


def test_label_score_single_label_and_separated(rng):
    z = rng.normal(size=(50, 2))
    assert label_structure_score(_points(z, np.ones(50, int)), 5) == 1.0
    clusters = np.vstack([rng.normal(size=(30, 2)), rng.normal(size=(30, 2)) + 100])
    assert label_structure_score(_points(clusters, [0] * 30 + [2] * 30), 15) == 1.0


def test_label_score_random_labels():
    # frozen from a 20-trial Monte Carlo run of the same construction: mean 0.334, sd 0.008
    r = np.random.default_rng(0)
    z = r.normal(size=(3000, 2))
    score = label_structure_score(_points(z, r.integers(0, 3, 3000)), 15)
    assert abs(score - 1 / 3) <= 0.05


def test_label_score_rejects_bad_k(rng):
    with pytest.raises(ValueError):
        label_structure_score(_points(rng.normal(size=(5, 2)), [0] * 5), 5)


@given(st.lists(st.integers(0, 2), min_size=4, max_size=40), st.integers(1, 3))
def test_label_score_is_a_fraction(labels, k):
    z = np.random.default_rng(len(labels)).normal(size=(len(labels), 2))
    assert 0.0 <= label_structure_score(_points(z, labels), k) <= 1.0


# -- curves ------------------------------------------------------------------------

def test_moving_average_examples():
    np.testing.assert_array_equal(moving_average_success([True] * 10, 3).values, 100.0)
    alternating = moving_average_success([True, False] * 5, 2).values
    np.testing.assert_array_equal(alternating[1:], 50.0)
    assert alternating[0] == 100.0


@given(st.lists(st.booleans(), min_size=1, max_size=60), st.integers(1, 20))
def test_moving_average_matches_brute_force(flags, window):
    curve = moving_average_success(_log(flags), window)
    oracle = [100.0 * np.mean(flags[max(0, i + 1 - window):i + 1]) for i in range(len(flags))]
    np.testing.assert_allclose(curve.values, oracle, rtol=1e-12)
    assert np.all((curve.values >= 0) & (curve.values <= 100))


def test_episodes_to_threshold_examples():
    assert episodes_to_threshold(np.full(5, 100.0), 80) == 0
    assert episodes_to_threshold(np.full(5, 50.0), 80) is None
    ramp = np.linspace(0, 100, 101)
    assert episodes_to_threshold(ramp, 80) == next(i for i, v in enumerate(ramp) if v >= 80)


@given(st.lists(st.floats(0, 100), min_size=1, max_size=50), st.floats(0, 100), st.floats(0, 100))
def test_threshold_is_monotone(values, a, b):
    lo, hi = sorted((a, b))
    e_lo, e_hi = episodes_to_threshold(values, lo), episodes_to_threshold(values, hi)
    if e_hi is not None:
        assert e_lo is not None and e_lo <= e_hi


def test_state_value_summary():
    nan = math.nan
    values = [(1.0, nan, 2.0), (3.0, nan, 2.0), (5.0, nan, nan), (7.0, nan, 4.0)]
    summary = state_value_summary(_log([True] * 4, values), 3)
    assert summary[Behaviour.APPROACH] == pytest.approx(5.0)
    assert summary[Behaviour.GRASP] is None
    assert summary[Behaviour.RETRACT] == pytest.approx(3.0)
    with pytest.raises(ValueError):
        state_value_summary(_log([True]), 2)


def test_state_value_constant():
    summary = state_value_summary(_log([True] * 6, [(0.7, 0.7, 0.7)] * 6), 6)
    assert all(v == pytest.approx(0.7) for v in summary.values())


def test_state_value_curves_csv():
    text = state_value_curves(_log([True], [(1.0, math.nan, 0.25)]))
    assert text == "episode,approach,grasp,retract\n0,1.0,,0.25\n"


# -- reports -------------------------------------------------------------------

def _report(variant, e, final=90.0, seed=1, noise=0.0, total=2000):
    return ConvergenceReport(variant, noise, seed, total, e, final, {})


def _rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_compare_two_seeds():
    rows = _rows(compare_runs([_report(WiringVariant.BASELINE, 600, 80.0),
                               _report(WiringVariant.BASELINE, 800, 90.0, seed=2)]))
    assert len(rows) == 1
    assert float(rows[0]["episodes_to_threshold_mean"]) == 700
    assert float(rows[0]["episodes_to_threshold_std"]) == 100
    assert float(rows[0]["final_success_std"]) == 5


def test_compare_single_seed_std_zero():
    row = _rows(compare_runs([_report(WiringVariant.MEANS_ONLY, 300)]))[0]
    assert float(row["episodes_to_threshold_std"]) == 0.0 and row["reached"] == "1"


def test_compare_five_seed_oracle():
    e = [500, 900, None, 1200, 700]
    final = [85.0, 81.0, 60.0, 88.0, 92.0]
    reports = [_report(WiringVariant.MEANS_LOGVAR, x, f, seed=i) for i, (x, f) in enumerate(zip(e, final))]
    row = _rows(compare_runs(reports))[0]
    censored = [500, 900, 2000, 1200, 700]
    assert float(row["episodes_to_threshold_mean"]) == pytest.approx(sum(censored) / 5)
    mean = sum(censored) / 5
    assert float(row["episodes_to_threshold_std"]) == pytest.approx(math.sqrt(sum((c - mean) ** 2 for c in censored) / 5))
    assert float(row["final_success_mean"]) == pytest.approx(81.2)
    assert row["reached"] == "4" and row["seeds"] == "5"


def test_compare_sorting_and_failures():
    reports = [_report(WiringVariant.SAMPLED_LATENT, 100, noise=0.1), _report(WiringVariant.BASELINE, 100, noise=0.1),
               _report(WiringVariant.BASELINE, 100, noise=0.05)]
    text = compare_runs(reports, failures=[(WiringVariant.MEANS_ONLY, 0.1, 3, "boom")])
    rows = _rows(text)
    assert [(r["variant"], r["noise_level"]) for r in rows] == [
        ("baseline", "0.05"), ("baseline", "0.1"), ("means_only", "0.1"), ("sampled_latent", "0.1")]
    assert rows[2]["failed"] == "1" and rows[2]["episodes_to_threshold_mean"] == ""
    with pytest.raises(ValueError):
        compare_runs([])


def test_convergence_report_from_log():
    log = _log([False] * 50 + [True] * 150)
    r = convergence_report(log)
    assert r.total_episodes == 200
    assert r.episodes_to_threshold == episodes_to_threshold(moving_average_success(log))
    assert r.final_success == 100.0
    with pytest.raises(ValueError):
        ConvergenceReport(WiringVariant.BASELINE, 0.0, 1, 10, 11, 0.0, {})
