"""Latent embeddings, success curves and cross-run comparison tables.

Everything here is a pure function of logs or latent arrays.  Curves and
tables are emitted as CSV for plotting elsewhere.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .bbrl import TrainingLog
from .introspection import WiringVariant
from .toy_env import Behaviour

SUCCESS_WINDOW = 100
CONVERGENCE_THRESHOLD = 80.0
VALUE_TAIL = 200


@dataclass(frozen=True)
class EmbeddedPoint:
    z1: float
    z2: float
    behaviour_label: Behaviour

    def __post_init__(self):
        if not (math.isfinite(self.z1) and math.isfinite(self.z2)):
            raise ValueError("embedded coordinates must be finite")


def _pca_2d(x: np.ndarray) -> np.ndarray:
    centred = x - x.mean(axis=0)
    # top-2 eigenvectors of the covariance
    cov = centred.T @ centred / len(x)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:2]
    components = eigvecs[:, order]
    # fix the sign so the largest-magnitude loading of each component is positive
    peaks = components[np.argmax(np.abs(components), axis=0), np.arange(components.shape[1])]
    components = components * np.where(peaks < 0, -1.0, 1.0)
    z = centred @ components
    if z.shape[1] < 2:
        z = np.pad(z, ((0, 0), (0, 2 - z.shape[1])))
    # rank-deficient directions come out as round-off; report them as zero
    scale = max(1.0, float(np.abs(centred).max()))
    z[np.abs(z) < 1e-12 * scale] = 0.0
    return z


def embed_latents(latents: np.ndarray, labels: Sequence[int], method: str = "pca",
                  seed: int = 0, perplexity: float = 30.0) -> list[EmbeddedPoint]:
    """Project latent means to 2-D.  ``tsne`` needs scikit-learn."""
    x = np.asarray(latents, dtype=np.float64)
    if x.ndim != 2 or len(x) < 3:
        raise ValueError(f"need at least 3 latent vectors to embed, got {len(x)}")
    if len(labels) != len(x):
        raise ValueError("one label per latent vector is required")
    if method == "pca":
        z = _pca_2d(x)
    elif method == "tsne":
        try:
            from sklearn.manifold import TSNE
        except ImportError as exc:
            raise ImportError("t-SNE embedding requires scikit-learn (pip install .[tsne])") from exc
        z = TSNE(n_components=2, perplexity=min(perplexity, len(x) - 1), random_state=seed,
                 init="pca").fit_transform(x)
    else:
        raise ValueError(f"unknown embedding method {method!r}")
    return [EmbeddedPoint(float(a), float(b), Behaviour(int(l))) for (a, b), l in zip(z, labels)]


def embedding_to_csv(points: Iterable[EmbeddedPoint]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("z1", "z2", "label"))
    for p in points:
        writer.writerow((repr(p.z1), repr(p.z2), p.behaviour_label.label))
    return buf.getvalue()


def label_structure_score(points: Sequence[EmbeddedPoint], k: int) -> float:
    """Fraction of points whose k-nearest-neighbour majority label matches their own.

    The point itself is excluded from its neighbourhood; ties go to the lowest label.
    """
    n = len(points)
    if not 1 <= k < n:
        raise ValueError(f"k must satisfy 1 <= k < {n}")
    z = np.array([(p.z1, p.z2) for p in points])
    labels = np.array([int(p.behaviour_label) for p in points])
    _, idx = cKDTree(z).query(z, k=k + 1)
    hits = 0
    for i in range(n):
        neighbours = [j for j in idx[i] if j != i][:k]
        votes = np.bincount(labels[neighbours], minlength=len(Behaviour))
        hits += int(np.argmax(votes) == labels[i])
    return hits / n


# --------------------------------------------------------------------------
# curves
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Curve:
    episodes: np.ndarray
    values: np.ndarray

    def __len__(self):
        return len(self.values)

    def to_csv(self, value_name: str = "value") -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("episode", value_name))
        for e, v in zip(self.episodes, self.values):
            writer.writerow((int(e), "" if math.isnan(v) else repr(float(v))))
        return buf.getvalue()


def moving_average_success(log: TrainingLog | Sequence[bool], window: int = SUCCESS_WINDOW) -> Curve:
    """Trailing-window success percentage; the first episodes average over what is available."""
    if window < 1:
        raise ValueError("window must be at least 1")
    flags = log.success if isinstance(log, TrainingLog) else np.asarray(log, dtype=bool)
    s = np.concatenate([[0], np.cumsum(flags, dtype=np.int64)])
    idx = np.arange(len(flags))
    start = np.maximum(0, idx + 1 - window)
    percent = 100.0 * (s[idx + 1] - s[start]) / (idx + 1 - start)
    return Curve(idx, percent)


def episodes_to_threshold(curve: Curve | Sequence[float], threshold_percent: float = CONVERGENCE_THRESHOLD):
    """First episode whose value meets the threshold, or None."""
    if isinstance(curve, Curve):
        episodes, values = curve.episodes, curve.values
    else:
        values = np.asarray(curve, dtype=np.float64)
        episodes = np.arange(len(values))
    hit = np.nonzero(values >= threshold_percent)[0]
    return int(episodes[hit[0]]) if len(hit) else None


def state_value_summary(log: TrainingLog, tail_episodes: int = VALUE_TAIL) -> dict[Behaviour, float | None]:
    """Mean per-episode critic value over the tail; None for behaviours never chosen there."""
    if not 1 <= tail_episodes <= len(log):
        raise ValueError(f"tail_episodes must lie in [1, {len(log)}]")
    out = {}
    for b in Behaviour:
        tail = log.values(b)[-tail_episodes:]
        tail = tail[~np.isnan(tail)]
        out[b] = float(tail.mean()) if len(tail) else None
    return out


def state_value_curves(log: TrainingLog) -> str:
    """CSV of per-episode mean critic value for each behaviour (empty where not chosen)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("episode",) + tuple(b.label for b in Behaviour))
    columns = [log.values(b) for b in Behaviour]
    for i, r in enumerate(log.records):
        writer.writerow([r.episode] + ["" if math.isnan(c[i]) else repr(float(c[i])) for c in columns])
    return buf.getvalue()


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ConvergenceReport:
    variant: WiringVariant
    noise_level: float
    seed: int
    total_episodes: int
    episodes_to_threshold: int | None
    final_success: float
    state_values: dict

    def __post_init__(self):
        e = self.episodes_to_threshold
        if e is not None and not 0 <= e <= self.total_episodes:
            raise ValueError("episodes_to_threshold must lie within the logged episodes")


def convergence_report(log: TrainingLog, window: int = SUCCESS_WINDOW,
                       threshold_percent: float = CONVERGENCE_THRESHOLD,
                       tail_episodes: int = VALUE_TAIL) -> ConvergenceReport:
    curve = moving_average_success(log, window)
    return ConvergenceReport(
        variant=log.variant,
        noise_level=float(log.noise_level),
        seed=log.seed,
        total_episodes=len(log),
        episodes_to_threshold=episodes_to_threshold(curve, threshold_percent),
        final_success=float(curve.values[-1]),
        state_values=state_value_summary(log, min(tail_episodes, len(log))),
    )


COMPARISON_COLUMNS = (
    "variant", "noise_level", "seeds", "reached", "failed",
    "episodes_to_threshold_mean", "episodes_to_threshold_std",
    "final_success_mean", "final_success_std",
)


def compare_runs(reports: Sequence[ConvergenceReport], failures: Sequence[tuple] = ()) -> str:
    """Mean and population std across seeds, per (variant, noise level).

    Runs that never reach the threshold count as their total episode count, so the
    episode mean is a censored lower bound; ``reached`` says how many seeds got there.
    ``failures`` holds ``(variant, noise_level, seed, ...)`` tuples for runs that crashed.
    """
    if not reports and not failures:
        raise ValueError("compare_runs needs at least one report")
    order = list(WiringVariant)
    groups: dict[tuple[WiringVariant, float], list[ConvergenceReport]] = {}
    failed: dict[tuple[WiringVariant, float], int] = {}
    for r in reports:
        groups.setdefault((r.variant, float(r.noise_level)), []).append(r)
    for f in failures:
        key = (WiringVariant(f[0]), float(f[1]))
        groups.setdefault(key, [])
        failed[key] = failed.get(key, 0) + 1
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COMPARISON_COLUMNS)
    for (variant, noise) in sorted(groups, key=lambda key: (order.index(key[0]), key[1])):
        group = groups[(variant, noise)]
        n_failed = failed.get((variant, noise), 0)
        reached = sum(r.episodes_to_threshold is not None for r in group)
        if not group:
            writer.writerow((variant.value, repr(noise), n_failed, 0, n_failed, "", "", "", ""))
            continue
        episodes = np.array([r.episodes_to_threshold if r.episodes_to_threshold is not None
                             else r.total_episodes for r in group], dtype=np.float64)
        final = np.array([r.final_success for r in group])
        writer.writerow((
            variant.value, repr(noise), len(group) + n_failed, reached, n_failed,
            repr(float(episodes.mean())), repr(float(episodes.std())),
            repr(float(final.mean())), repr(float(final.std())),
        ))
    return buf.getvalue()
