"""Core time-series types, resolution arithmetic, and multiresolution window construction.

All alignment is done in index space on integer epochs; there is no calendar
logic anywhere. Padding always occupies a contiguous prefix of a context and
is marked with 1 in the corresponding mask.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import DataError

METRIC_TYPES = ("gauge", "counter", "cumulative_counter")


@dataclass(frozen=True)
class Series:
    """A timestamped univariate sequence at a fixed resolution.

    Missing observations are encoded as NaN in ``values``.
    """

    id: str
    start_epoch: int
    resolution_seconds: int
    values: np.ndarray
    metric_type: str = "gauge"

    def __post_init__(self):
        if self.resolution_seconds <= 0:
            raise DataError(f"series {self.id!r}: resolution_seconds must be positive")
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size < 1:
            raise DataError(f"series {self.id!r}: values must be a non-empty 1-d sequence")
        object.__setattr__(self, "values", values)
        if self.metric_type not in METRIC_TYPES:
            raise DataError(f"series {self.id!r}: unknown metric_type {self.metric_type!r}")

    def __len__(self) -> int:
        return int(self.values.size)

    def epoch_of(self, index: int) -> int:
        return self.start_epoch + index * self.resolution_seconds


@dataclass
class MultiResWindow:
    """Paired coarse/fine contexts plus a fine-resolution horizon.

    ``coarse`` covers the ``C*K`` fine steps immediately preceding the horizon
    (one entry per block of K), ``fine`` covers the C steps immediately
    preceding it. Mask value 1 marks padded (invalid) entries; padding is a
    contiguous prefix.
    """

    coarse: np.ndarray
    fine: np.ndarray
    horizon: np.ndarray
    coarse_mask: np.ndarray
    fine_mask: np.ndarray
    resolution_ratio: int
    id: str = ""
    split: str = ""
    horizon_end_index: int = -1
    first_real_index: int = -1
    horizon_start_epoch: int = 0
    resolution_seconds: int = 60

    def __post_init__(self):
        self.coarse = np.asarray(self.coarse, dtype=np.float64)
        self.fine = np.asarray(self.fine, dtype=np.float64)
        self.horizon = np.asarray(self.horizon, dtype=np.float64)
        self.coarse_mask = np.asarray(self.coarse_mask, dtype=np.uint8)
        self.fine_mask = np.asarray(self.fine_mask, dtype=np.uint8)
        if self.coarse.shape != self.fine.shape:
            raise DataError("coarse and fine contexts must have equal length")
        if self.coarse_mask.shape != self.coarse.shape or self.fine_mask.shape != self.fine.shape:
            raise DataError("masks must agree in length with their contexts")
        if self.resolution_ratio < 1:
            raise DataError("resolution_ratio must be >= 1")

    @property
    def context_len(self) -> int:
        return int(self.fine.size)

    @property
    def horizon_len(self) -> int:
        return int(self.horizon.size)

    def fine_real(self) -> np.ndarray:
        """Unpadded portion of the fine context."""
        return self.fine[self.fine_mask == 0]

    def coarse_real(self) -> np.ndarray:
        return self.coarse[self.coarse_mask == 0]

    def padding_fraction(self) -> float:
        """Fraction of padded fine-context points."""
        return float(np.mean(self.fine_mask != 0))

    def copy(self) -> "MultiResWindow":
        return replace(
            self,
            coarse=self.coarse.copy(),
            fine=self.fine.copy(),
            horizon=self.horizon.copy(),
            coarse_mask=self.coarse_mask.copy(),
            fine_mask=self.fine_mask.copy(),
        )


@dataclass(frozen=True)
class NormalizationStats:
    """Per-context normalization statistics, kept for inversion."""

    mu_c: float
    sigma_c: float
    mu_f: float
    sigma_f: float


def sigma_floor(sigma: float, mu: float) -> float:
    """Scale-aware epsilon floor so constant prefixes do not blow up division."""
    return max(sigma, 1e-6 * max(abs(mu), 1.0) + 1e-12)


def impute_last_value(series: Series) -> Series:
    """Replace every NaN with the most recent preceding non-NaN value.

    Leading NaNs are backfilled with the first observed value so the series
    keeps its length. An all-NaN series is rejected.
    """
    values = series.values
    finite = ~np.isnan(values)
    if not finite.any():
        raise DataError(f"series {series.id!r} is all-NaN; nothing to impute from")
    if finite.all():
        return series
    idx = np.where(finite, np.arange(values.size), -1)
    idx = np.maximum.accumulate(idx)
    first = int(np.argmax(finite))
    idx[idx < 0] = first
    return replace(series, values=values[idx])


def difference(series: Series) -> Series:
    """First difference: output[i] = input[i+1] - input[i].

    Length shrinks by one and the start epoch advances one resolution step.
    """
    if len(series) < 2:
        raise DataError(f"series {series.id!r}: need at least 2 points to difference")
    return replace(
        series,
        values=np.diff(series.values),
        start_epoch=series.start_epoch + series.resolution_seconds,
    )


def aggregate_to_coarse(fine: np.ndarray, ratio: int) -> np.ndarray:
    """Mean over non-overlapping front-aligned blocks of length ``ratio``.

    The trailing incomplete block is dropped; output length is ``len // ratio``.
    """
    if ratio < 1:
        raise DataError("aggregation ratio must be >= 1")
    fine = np.asarray(fine, dtype=np.float64)
    nblocks = fine.size // ratio
    if nblocks == 0:
        return np.empty(0, dtype=np.float64)
    return fine[: nblocks * ratio].reshape(nblocks, ratio).mean(axis=1)


def build_multires_window(
    series: Series,
    horizon_end_index: int,
    context_len: int,
    horizon_len: int,
    ratio: int,
) -> MultiResWindow:
    """Construct the multiresolution window whose horizon ends at ``horizon_end_index``.

    The fine context is the ``context_len`` points immediately preceding the
    horizon, left-padded when less history exists. Coarse blocks are anchored
    at the horizon start and walk backwards, so the newest coarse entry always
    aggregates the newest ``ratio`` fine steps exactly.
    """
    values = series.values
    n_total = values.size
    if horizon_end_index > n_total:
        raise DataError(
            f"series {series.id!r}: horizon end {horizon_end_index} exceeds length {n_total}"
        )
    n_hist = horizon_end_index - horizon_len
    if n_hist < 1:
        raise DataError(
            f"series {series.id!r}: no context precedes horizon ending at {horizon_end_index}"
        )

    horizon = values[n_hist:horizon_end_index].copy()

    fine_real = min(context_len, n_hist)
    fine = np.zeros(context_len, dtype=np.float64)
    fine_mask = np.ones(context_len, dtype=np.uint8)
    fine[context_len - fine_real :] = values[n_hist - fine_real : n_hist]
    fine_mask[context_len - fine_real :] = 0

    coarse_real = min(context_len, n_hist // ratio)
    coarse = np.zeros(context_len, dtype=np.float64)
    coarse_mask = np.ones(context_len, dtype=np.uint8)
    if coarse_real > 0:
        block_span = values[n_hist - coarse_real * ratio : n_hist]
        coarse[context_len - coarse_real :] = block_span.reshape(coarse_real, ratio).mean(axis=1)
        coarse_mask[context_len - coarse_real :] = 0

    first_real = n_hist - max(fine_real, coarse_real * ratio)
    return MultiResWindow(
        coarse=coarse,
        fine=fine,
        horizon=horizon,
        coarse_mask=coarse_mask,
        fine_mask=fine_mask,
        resolution_ratio=ratio,
        id=f"{series.id}:{horizon_end_index}",
        horizon_end_index=horizon_end_index,
        first_real_index=first_real,
        horizon_start_epoch=series.epoch_of(n_hist),
        resolution_seconds=series.resolution_seconds,
    )


def read_series_jsonl(path: str | Path) -> list[Series]:
    """Load a dataset file: one series per line, NaN encoded as null."""
    out: list[Series] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            try:
                values = np.array(
                    [math.nan if v is None else float(v) for v in rec["values"]],
                    dtype=np.float64,
                )
                out.append(
                    Series(
                        id=str(rec["id"]),
                        start_epoch=int(rec["start_epoch"]),
                        resolution_seconds=int(rec["resolution_seconds"]),
                        values=values,
                        metric_type=rec.get("metric_type", "gauge"),
                    )
                )
            except KeyError as exc:
                raise DataError(f"{path}:{lineno}: missing field {exc}") from exc
    return out


def write_series_jsonl(series_list: Iterable[Series], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in series_list:
            rec = {
                "id": s.id,
                "start_epoch": s.start_epoch,
                "resolution_seconds": s.resolution_seconds,
                "values": [None if math.isnan(v) else v for v in s.values.tolist()],
                "metric_type": s.metric_type,
            }
            fh.write(json.dumps(rec) + "\n")
