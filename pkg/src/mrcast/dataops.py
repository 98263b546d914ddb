"""Window-level curation: filter statistics, keep/drop rules, entropy and
padding-mix downsampling, sliding-window extraction, and temporal splits.

The two downsamplers share a two-pass design: a histogram pass over the whole
input, then a deterministic rejection pass. Nothing here mutates its input
windows; synthesized padded variants are fresh copies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import DataError
from .series import MultiResWindow, Series, build_multires_window


@dataclass(frozen=True)
class WindowStats:
    longest_flat_run_normalized: float
    unique_value_count: int
    context_mad: float
    horizon_mad: float
    spectral_entropy: float


@dataclass(frozen=True)
class FilterPolicy:
    """Keep/drop thresholds. Defaults are ours; the thresholds are exposed
    precisely because no canonical values exist."""

    max_flat: float = 0.5
    min_unique: int = 8
    max_mad_ratio: float = 5.0
    mad_eps: float = 1e-12

    def to_dict(self) -> dict:
        return {
            "max_flat": self.max_flat,
            "min_unique": self.min_unique,
            "max_mad_ratio": self.max_mad_ratio,
            "mad_eps": self.mad_eps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FilterPolicy":
        return cls(**{k: d[k] for k in ("max_flat", "min_unique", "max_mad_ratio", "mad_eps") if k in d})


def longest_flat_run(x: np.ndarray) -> int:
    """Length of the longest run of consecutive exactly-equal values."""
    if x.size == 0:
        return 0
    change = np.flatnonzero(np.diff(x) != 0)
    bounds = np.concatenate(([-1], change, [x.size - 1]))
    return int(np.max(np.diff(bounds)))


def spectral_entropy(x: np.ndarray) -> float:
    """Shannon entropy of the normalized periodogram, scaled into [0, 1].

    The input is mean-removed; the DC bin is excluded. A signal that is flat
    after mean removal has nothing to predict spectrally and scores 0.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2:
        raise DataError("spectral entropy needs at least 2 points")
    power = np.abs(np.fft.rfft(x - x.mean())[1:]) ** 2
    total = power.sum()
    if power.size < 2 or total <= 0.0:
        return 0.0
    p = power / total
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum() / np.log(p.size))


def max_abs_deviation_from_median(x: np.ndarray) -> float:
    return float(np.max(np.abs(x - np.median(x))))


def compute_window_stats(window: MultiResWindow) -> WindowStats:
    """Filter statistics over the unpadded fine context and the horizon."""
    ctx = window.fine_real()
    if ctx.size < 2:
        raise DataError("window has fewer than 2 unpadded fine points")
    return WindowStats(
        longest_flat_run_normalized=longest_flat_run(ctx) / ctx.size,
        unique_value_count=int(np.unique(ctx).size),
        context_mad=max_abs_deviation_from_median(ctx),
        horizon_mad=max_abs_deviation_from_median(window.horizon),
        spectral_entropy=spectral_entropy(ctx),
    )


def filter_window(stats: WindowStats, policy: FilterPolicy) -> tuple[bool, str | None]:
    """Keep/drop decision; the reason code names the first failing rule."""
    if stats.longest_flat_run_normalized > policy.max_flat:
        return False, "flat_run"
    if stats.unique_value_count < policy.min_unique:
        return False, "min_unique"
    if stats.horizon_mad / max(stats.context_mad, policy.mad_eps) > policy.max_mad_ratio:
        return False, "mad_ratio"
    return True, None


@dataclass(frozen=True)
class HistogramTarget:
    """A target distribution over [0, 1] as bin edges plus normalized masses."""

    edges: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.float64)
        masses = np.asarray(self.masses, dtype=np.float64)
        if edges.ndim != 1 or edges.size != masses.size + 1:
            raise DataError("histogram target needs len(edges) == len(masses) + 1")
        if np.any(np.diff(edges) <= 0):
            raise DataError("histogram edges must be strictly increasing")
        if edges[0] > 0.0 or edges[-1] < 1.0:
            raise DataError("histogram target bins must cover [0, 1]")
        if np.any(masses < 0) or masses.sum() <= 0:
            raise DataError("histogram masses must be nonnegative with positive total")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "masses", masses / masses.sum())

    @property
    def nbins(self) -> int:
        return int(self.masses.size)

    def bin_of(self, value: float) -> int:
        idx = int(np.searchsorted(self.edges, value, side="right") - 1)
        return min(max(idx, 0), self.nbins - 1)

    def empirical(self, values: Sequence[float]) -> np.ndarray:
        counts = np.zeros(self.nbins, dtype=np.float64)
        for v in values:
            counts[self.bin_of(v)] += 1
        return counts


def default_entropy_target(nbins: int = 10) -> HistogramTarget:
    # Uniform-ish trapezoid weighted toward low entropy.
    masses = np.linspace(1.5, 0.5, nbins)
    return HistogramTarget(edges=np.linspace(0.0, 1.0, nbins + 1), masses=masses)


def default_padding_target(nbins: int = 10) -> HistogramTarget:
    # Mostly-unpadded, with representation across padding amounts.
    masses = np.array([0.55] + [0.05] * (nbins - 1))
    return HistogramTarget(edges=np.linspace(0.0, 1.0, nbins + 1), masses=masses)


def _rejection_pass(
    items: Sequence,
    values: Sequence[float],
    target: HistogramTarget,
    rng: np.random.Generator,
) -> tuple[list, np.ndarray]:
    """Accept item i with probability min(1, target_mass/empirical_mass) of its bin."""
    counts = target.empirical(values)
    total = counts.sum()
    accept_p = np.ones(target.nbins)
    nonempty = counts > 0
    accept_p[nonempty] = np.minimum(1.0, target.masses[nonempty] / (counts[nonempty] / total))
    kept = []
    for item, v in zip(items, values):
        if rng.random() < accept_p[target.bin_of(v)]:
            kept.append(item)
    return kept, counts


def entropy_downsample(
    pairs: Sequence[tuple[MultiResWindow, WindowStats]],
    target: HistogramTarget,
    rng_seed: int,
) -> list[MultiResWindow]:
    """Downsample windows so the spectral-entropy histogram approaches ``target``."""
    if not pairs:
        return []
    rng = np.random.default_rng(rng_seed)
    windows = [w for w, _ in pairs]
    entropies = [s.spectral_entropy for _, s in pairs]
    kept, _ = _rejection_pass(windows, entropies, target, rng)
    return kept


def make_padded_variant(window: MultiResWindow, pad_fraction: float, tag: str) -> MultiResWindow:
    """Truncate context prefixes so the fine context has ~pad_fraction padding.

    Only padding can be added, never removed. The coarse context keeps the
    blocks still covered by the shortened history, mirroring how a genuinely
    short series would have been windowed.
    """
    C = window.context_len
    K = window.resolution_ratio
    pad = int(round(pad_fraction * C))
    pad = max(pad, int(window.fine_mask.sum()))
    pad = min(pad, C - 2)  # keep >= 2 real fine points
    real_fine = C - pad
    out = window.copy()
    out.fine[:pad] = 0.0
    out.fine_mask[:pad] = 1
    real_coarse = min(int((out.coarse_mask == 0).sum()), real_fine // K)
    out.coarse[: C - real_coarse] = 0.0
    out.coarse_mask[: C - real_coarse] = 1
    out.id = f"{window.id}~{tag}"
    if window.horizon_end_index >= 0:
        hist_end = window.horizon_end_index - window.horizon_len
        out.first_real_index = hist_end - max(real_fine, real_coarse * K)
    return out


def padding_mix_sampler(
    windows: Sequence[MultiResWindow],
    target: HistogramTarget,
    rng_seed: int,
    policy: FilterPolicy | None = None,
) -> list[MultiResWindow]:
    """Rebalance the padding-fraction mix toward ``target``.

    Over-represented bins are thinned by rejection; deficit bins are filled by
    synthesizing padded variants of less-padded windows (prefix truncation).
    When a policy is given, synthesized variants that would violate it are
    discarded and redrawn.
    """
    if not windows:
        return []
    rng = np.random.default_rng(rng_seed)
    fractions = [w.padding_fraction() for w in windows]
    kept, counts = _rejection_pass(list(windows), fractions, target, rng)
    n_total = counts.sum()

    out = list(kept)
    empirical = counts / n_total
    for b in range(target.nbins):
        deficit = target.masses[b] - empirical[b]
        if deficit <= 0:
            continue
        lo, hi = target.edges[b], target.edges[b + 1]
        eligible = [w for w, f in zip(windows, fractions) if f < hi]
        if not eligible:
            continue
        want = int(round(deficit * n_total))
        made = 0
        attempts = 0
        while made < want and attempts < 20 * want:
            attempts += 1
            src = eligible[int(rng.integers(0, len(eligible)))]
            frac = float(rng.uniform(max(lo, src.padding_fraction()), hi))
            variant = make_padded_variant(src, frac, tag=f"pad{b}.{made}")
            if target.bin_of(variant.padding_fraction()) != b:
                continue
            if policy is not None:
                try:
                    keep, _ = filter_window(compute_window_stats(variant), policy)
                except DataError:
                    continue
                if not keep:
                    continue
            out.append(variant)
            made += 1
    return out


def sliding_windows(
    series: Series,
    stride: int,
    context_len: int,
    horizon_len: int,
    ratio: int,
    min_real_fine: int | None = None,
) -> Iterator[MultiResWindow]:
    """Yield windows whose horizon end advances by ``stride``.

    By default a window is emitted only where the full fine context is real;
    pass a smaller ``min_real_fine`` to admit fine-padded windows.
    """
    if stride < 1:
        raise DataError("stride must be >= 1")
    need = context_len if min_real_fine is None else min_real_fine
    first_end = horizon_len + max(need, 1)
    for end in range(first_end, len(series) + 1, stride):
        yield build_multires_window(series, end, context_len, horizon_len, ratio)


@dataclass
class SplitAssignment:
    """Per-window split labels for one series, in temporal order."""

    labels: dict[str, str] = field(default_factory=dict)
    dropped: list[str] = field(default_factory=list)
    train_end_index: int = -1
    val_end_index: int = -1

    def counts(self) -> dict[str, int]:
        out = {"train": 0, "validation": 0, "test": 0}
        for v in self.labels.values():
            out[v] += 1
        return out


def temporal_split(
    windows: Sequence[MultiResWindow],
    fractions: tuple[float, float, float],
) -> SplitAssignment:
    """Split one series' windows into train/validation/test in temporal order.

    Windows are ordered by horizon end; the earliest fraction goes to train.
    A validation/test window whose context reaches back across the split
    boundary would share raw data with the preceding split and is dropped.
    """
    f_train, f_val, f_test = fractions
    if min(f_train, f_val, f_test) <= 0 or abs(f_train + f_val + f_test - 1.0) > 1e-9:
        raise DataError("split fractions must be positive and sum to 1")
    n = len(windows)
    n_train = math.floor(f_train * n)
    n_val = math.floor(f_val * n)
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise DataError(
            f"too few windows ({n}) to populate all splits: "
            f"train={n_train}, validation={n_val}, test={n_test}"
        )

    ordered = sorted(windows, key=lambda w: w.horizon_end_index)
    assignment = SplitAssignment()
    assignment.train_end_index = ordered[n_train - 1].horizon_end_index
    assignment.val_end_index = ordered[n_train + n_val - 1].horizon_end_index

    for i, w in enumerate(ordered):
        if i < n_train:
            assignment.labels[w.id] = "train"
        elif i < n_train + n_val:
            if w.first_real_index < assignment.train_end_index:
                assignment.dropped.append(w.id)
            else:
                assignment.labels[w.id] = "validation"
        else:
            if w.first_real_index < assignment.val_end_index:
                assignment.dropped.append(w.id)
            else:
                assignment.labels[w.id] = "test"

    counts = assignment.counts()
    missing = [k for k, v in counts.items() if v == 0]
    if missing:
        raise DataError(
            "temporal split left empty splits after boundary drops: "
            + ", ".join(f"{k}=0" for k in missing)
        )
    return assignment
