"""Synthetic series generation: Gaussian-process kernel composition plus a
deterministic sawtooth family.

Sample paths are drawn from a zero-mean GP whose covariance is assembled from
a small kernel bank combined by add/multiply. Dense Cholesky factorization
caps usable lengths at MAX_GP_LENGTH.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericError
from .series import Series

KERNEL_KINDS = ("linear", "periodic", "rbf", "white-noise", "constant")
PERIOD_CHOICES = (12, 24, 60, 168)
LENGTH_SCALE_CHOICES = (2.0, 5.0, 10.0, 25.0)
MAX_GP_LENGTH = 4096
JITTER_START = 1e-8
JITTER_MAX = 1e-2


@dataclass(frozen=True)
class KernelSpec:
    """A kernel expression tree.

    Leaves carry ``kind`` and parameters; interior nodes carry ``op`` in
    {"add", "multiply"} and two children.
    """

    kind: str = ""
    period: int = 24
    length_scale: float = 5.0
    amplitude: float = 1.0
    op: str = ""
    children: tuple["KernelSpec", ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.op:
            if self.op not in ("add", "multiply") or len(self.children) != 2:
                raise DataError(f"bad kernel node: op={self.op!r}, arity={len(self.children)}")
        else:
            if self.kind not in KERNEL_KINDS:
                raise DataError(f"unknown kernel kind {self.kind!r}")
            if self.kind == "periodic" and self.period < 2:
                raise DataError("periodic kernel needs period >= 2 steps")
            if self.amplitude <= 0:
                raise DataError("kernel amplitude must be positive")

    def leaves(self) -> list["KernelSpec"]:
        if not self.op:
            return [self]
        return [leaf for child in self.children for leaf in child.leaves()]

    def canonical_key(self) -> str:
        if not self.op:
            return f"{self.kind}|{self.period}|{self.length_scale:.9g}|{self.amplitude:.9g}"
        keys = sorted(c.canonical_key() for c in self.children)
        return f"({self.op}:{','.join(keys)})"


def _leaf_covariance(spec: KernelSpec, t: np.ndarray) -> np.ndarray:
    a2 = spec.amplitude**2
    d = t[:, None] - t[None, :]
    if spec.kind == "linear":
        x = t / max(t.size - 1, 1)
        return a2 * np.outer(x, x)
    if spec.kind == "periodic":
        return a2 * np.exp(-2.0 * np.sin(np.pi * np.abs(d) / spec.period) ** 2 / spec.length_scale**2)
    if spec.kind == "rbf":
        return a2 * np.exp(-(d**2) / (2.0 * spec.length_scale**2))
    if spec.kind == "white-noise":
        return a2 * np.eye(t.size)
    if spec.kind == "constant":
        return a2 * np.ones((t.size, t.size))
    raise DataError(f"unknown kernel kind {spec.kind!r}")


def kernel_covariance(spec: KernelSpec, length: int) -> np.ndarray:
    """Covariance matrix over integer time indices 0..length-1.

    Children of commutative nodes are combined in canonical (sorted-key)
    order so that operand exchange is literally a no-op.
    """
    t = np.arange(length, dtype=np.float64)

    def build(node: KernelSpec) -> np.ndarray:
        if not node.op:
            return _leaf_covariance(node, t)
        mats = [build(c) for c in sorted(node.children, key=KernelSpec.canonical_key)]
        return mats[0] + mats[1] if node.op == "add" else mats[0] * mats[1]

    return build(spec)


def sample_kernel_spec(rng_seed: int, max_kernels: int) -> KernelSpec:
    """Draw a composite kernel spec: 1..max_kernels leaves joined by random add/multiply."""
    if max_kernels < 1:
        raise DataError("max_kernels must be >= 1")
    rng = np.random.default_rng(rng_seed)
    n_leaves = int(rng.integers(1, max_kernels + 1))

    def draw_leaf() -> KernelSpec:
        kind = KERNEL_KINDS[int(rng.integers(0, len(KERNEL_KINDS)))]
        period = int(PERIOD_CHOICES[int(rng.integers(0, len(PERIOD_CHOICES)))])
        length_scale = float(LENGTH_SCALE_CHOICES[int(rng.integers(0, len(LENGTH_SCALE_CHOICES)))])
        amplitude = float(rng.uniform(0.5, 2.0))
        return KernelSpec(kind=kind, period=period, length_scale=length_scale, amplitude=amplitude)

    spec = draw_leaf()
    for _ in range(n_leaves - 1):
        op = "add" if rng.random() < 0.5 else "multiply"
        spec = KernelSpec(op=op, children=(spec, draw_leaf()))
    return spec


def synthesize(spec: KernelSpec, length: int, rng_seed: int, series_id: str = "synth") -> Series:
    """Draw one GP sample path with the composite covariance of ``spec``.

    Jitter is added to the diagonal and escalated x10 until Cholesky succeeds.
    """
    if length < 2:
        raise DataError("synthesize needs length >= 2")
    if length > MAX_GP_LENGTH:
        raise DataError(f"length {length} exceeds GP cap {MAX_GP_LENGTH}")
    cov = kernel_covariance(spec, length)
    jitter = JITTER_START
    chol = None
    while jitter <= JITTER_MAX:
        try:
            chol = np.linalg.cholesky(cov + jitter * np.eye(length))
            break
        except np.linalg.LinAlgError:
            jitter *= 10.0
    if chol is None:
        raise NumericError(f"covariance factorization failed up to jitter {JITTER_MAX}")
    rng = np.random.default_rng(rng_seed)
    path = chol @ rng.standard_normal(length)
    return Series(id=series_id, start_epoch=0, resolution_seconds=60, values=path)


def sawtooth_series(
    length: int,
    period: int,
    amplitude: float = 1.0,
    noise_sd: float = 0.0,
    rng_seed: int = 0,
    phase: int = 0,
    series_id: str = "sawtooth",
) -> Series:
    """Deterministic ramp-reset signal with optional Gaussian noise.

    One period ramps linearly from 0 to ``amplitude`` then resets; structure
    in this family is only visible once the context spans a full period.
    """
    if period < 2:
        raise DataError("sawtooth period must be >= 2")
    t = np.arange(length) + phase
    ramp = amplitude * (t % period) / (period - 1)
    if noise_sd > 0:
        rng = np.random.default_rng(rng_seed)
        ramp = ramp + rng.normal(0.0, noise_sd, size=length)
    return Series(id=series_id, start_epoch=0, resolution_seconds=60, values=ramp)
