"""Statistical deduplication: SimHash coding, cluster profiling, and
two-stage equalization sampling.

Codes are sign-of-random-projection hashes of the z-scored fine context, so
clustering keys on shape rather than level. All randomness is derived from
(seed, cluster code), which makes the survivor set independent of how the
input was sharded.
"""

from __future__ import annotations

from dataclasses import dataclass
from statistics import median_low
from typing import Callable, Sequence

import numpy as np

from .series import MultiResWindow, sigma_floor

DEFAULT_BITS = 16
DEFAULT_HISTOGRAM_BINS = 32
DEFAULT_SPIKE_THRESHOLD = 0.25
DEFAULT_PROFILE_SAMPLE = 64


@dataclass(frozen=True)
class SimHashCode:
    bits: int
    width: int
    window_id: str


@dataclass(frozen=True)
class ClusterProfile:
    code: int
    size: int
    medoid_id: str
    medoid_feature: np.ndarray
    distance_histogram: np.ndarray
    spike_flag: bool


def window_feature(window: MultiResWindow) -> np.ndarray:
    """Z-scored fine context with padded entries held at zero.

    Shift/scale invariant by construction; a zero-variance context maps to
    the all-zero feature (its hash bits are then all 1 under sign(0) >= 0).
    """
    feat = np.zeros(window.context_len, dtype=np.float64)
    real = window.fine_mask == 0
    vals = window.fine[real]
    if vals.size == 0:
        return feat
    mu = float(vals.mean())
    sd = sigma_floor(float(vals.std()), mu)
    feat[real] = (window.fine[real] - mu) / sd
    return feat


def make_projections(bits: int, dim: int, seed: int) -> np.ndarray:
    """Random hyperplanes shared by every shard of a run."""
    rng = np.random.default_rng(seed)
    return rng.standard_normal((bits, dim))


def hash_vector(vec: np.ndarray, projections: np.ndarray) -> int:
    """Pack sign bits of the projections: bit b set iff dot(vec, plane_b) >= 0."""
    dots = projections @ vec
    code = 0
    for b, d in enumerate(dots):
        if d >= 0.0:
            code |= 1 << b
    return code


def simhash(
    window: MultiResWindow,
    projections: np.ndarray,
    feature_fn: Callable[[MultiResWindow], np.ndarray] = window_feature,
) -> SimHashCode:
    return SimHashCode(
        bits=hash_vector(feature_fn(window), projections),
        width=projections.shape[0],
        window_id=window.id,
    )


def assign_codes(
    windows: Sequence[MultiResWindow],
    projections: np.ndarray,
    feature_fn: Callable[[MultiResWindow], np.ndarray] = window_feature,
) -> dict[str, int]:
    return {w.id: hash_vector(feature_fn(w), projections) for w in windows}


def group_by_code(codes: dict[str, int]) -> dict[int, list[str]]:
    clusters: dict[int, list[str]] = {}
    for wid in sorted(codes):
        clusters.setdefault(codes[wid], []).append(wid)
    return clusters


def _medoid(features: np.ndarray) -> int:
    """Index minimizing summed Euclidean distance to the sample."""
    diff = features[:, None, :] - features[None, :, :]
    dists = np.sqrt((diff**2).sum(axis=2))
    return int(np.argmin(dists.sum(axis=1)))


def cluster_and_profile(
    clusters: dict[int, list[str]],
    features: dict[str, np.ndarray],
    sample_size: int = DEFAULT_PROFILE_SAMPLE,
    rng_seed: int = 0,
    nbins: int = DEFAULT_HISTOGRAM_BINS,
    spike_threshold: float = DEFAULT_SPIKE_THRESHOLD,
) -> dict[int, ClusterProfile]:
    """Medoid and distance histogram per cluster, from a bounded sample.

    The histogram spans [0, max observed distance]; its total equals the
    sample size used. A spike cluster concentrates more than
    ``spike_threshold`` of its mass in the first bin.
    """
    profiles: dict[int, ClusterProfile] = {}
    for code, ids in clusters.items():
        rng = np.random.default_rng([rng_seed, code])
        if len(ids) > sample_size:
            pick = rng.choice(len(ids), size=sample_size, replace=False)
            sample_ids = [ids[i] for i in sorted(pick)]
        else:
            sample_ids = list(ids)
        feats = np.stack([features[i] for i in sample_ids])
        m_idx = _medoid(feats)
        dists = np.sqrt(((feats - feats[m_idx]) ** 2).sum(axis=1))
        dmax = float(dists.max())
        if dmax > 0:
            hist, _ = np.histogram(dists, bins=nbins, range=(0.0, dmax))
        else:
            hist = np.zeros(nbins, dtype=np.int64)
            hist[0] = dists.size
        profiles[code] = ClusterProfile(
            code=code,
            size=len(ids),
            medoid_id=sample_ids[m_idx],
            medoid_feature=feats[m_idx].copy(),
            distance_histogram=hist,
            spike_flag=bool(hist[0] / dists.size > spike_threshold),
        )
    return profiles


def _competition_ranks(values: np.ndarray) -> np.ndarray:
    """Rank = 1 + count of strictly smaller values; ties share a rank."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = i + 1
        i = j + 1
    return ranks


def _weighted_sample_without_replacement(
    ids: list[str], weights: np.ndarray, k: int, rng: np.random.Generator
) -> list[str]:
    # Efraimidis-Spirakis keys: u^(1/w); the k largest keys win.
    keys = rng.random(len(ids)) ** (1.0 / weights)
    top = np.argsort(-keys, kind="stable")[:k]
    return [ids[i] for i in sorted(top)]


def dedup_sample(
    clusters: dict[int, list[str]],
    profiles: dict[int, ClusterProfile],
    features: dict[str, np.ndarray],
    rng_seed: int,
    target_equalization: int | None = None,
) -> list[str]:
    """Equalize the largest half of the clusters down to a common target.

    Spike clusters are thinned with rank-of-distance weighting so that
    near-facsimiles of the medoid are suppressed; healthy clusters are
    sampled uniformly. Clusters in the smaller half pass through unchanged.
    """
    by_size = sorted(clusters, key=lambda c: (-len(clusters[c]), c))
    n_top = (len(by_size) + 1) // 2
    top_half = set(by_size[:n_top])
    if target_equalization is not None:
        target = target_equalization
    else:
        target = int(median_low([len(clusters[c]) for c in by_size[:n_top]]))
    target = max(target, 1)

    kept: list[str] = []
    for code in sorted(clusters):
        ids = sorted(clusters[code])
        if code not in top_half or len(ids) <= target:
            kept.extend(ids)
            continue
        rng = np.random.default_rng([rng_seed, code])
        profile = profiles[code]
        if profile.spike_flag:
            dists = np.array(
                [np.sqrt(((features[i] - profile.medoid_feature) ** 2).sum()) for i in ids]
            )
            weights = _competition_ranks(dists)
            kept.extend(_weighted_sample_without_replacement(ids, weights, target, rng))
        else:
            pick = rng.choice(len(ids), size=target, replace=False)
            kept.extend(ids[i] for i in sorted(pick))
    return sorted(kept)


def cluster_size_histogram(clusters: dict[int, list[str]]) -> dict[str, int]:
    """Cluster-size distribution keyed by size, for the dedup report."""
    out: dict[str, int] = {}
    for ids in clusters.values():
        key = str(len(ids))
        out[key] = out.get(key, 0) + 1
    return out
