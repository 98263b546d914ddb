"""Model hyperparameters and the context-fusion variant switch."""

from __future__ import annotations

from dataclasses import dataclass, asdict

from ..errors import DataError

VARIANTS = ("CONCAT", "RE", "ST", "RE+ST")

QUANTILES = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


@dataclass(frozen=True)
class ModelConfig:
    """Desk-scale defaults; paper-scale values fit the same fields.

    The variant controls only which fusion mechanisms are active: a special
    token between the coarse and fine streams, a per-resolution embedding
    added to tokens, both, or neither (plain concatenation).
    """

    context_len: int = 512
    horizon_len: int = 128
    input_patch_len: int = 32
    output_patch_len: int = 128
    model_dim: int = 64
    num_layers: int = 2
    num_heads: int = 4
    ffn_mult: int = 4
    resolution_ratio: int = 60
    variant: str = "RE+ST"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise DataError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.model_dim % self.num_heads != 0:
            raise DataError("model_dim must be divisible by num_heads")
        if self.context_len % self.input_patch_len != 0:
            raise DataError("input_patch_len must divide context_len")
        if min(self.context_len, self.horizon_len, self.output_patch_len, self.model_dim) < 1:
            raise DataError("dimensions must be positive")
        if self.num_layers < 1 or self.ffn_mult < 1 or self.resolution_ratio < 1:
            raise DataError("num_layers, ffn_mult, resolution_ratio must be >= 1")

    @property
    def quantiles(self) -> tuple[float, ...]:
        return QUANTILES

    @property
    def n_outputs(self) -> int:
        # mean block plus one block per quantile
        return self.output_patch_len * (1 + len(QUANTILES))

    @property
    def n_patches(self) -> int:
        return self.context_len // self.input_patch_len

    @property
    def use_special_token(self) -> bool:
        return self.variant in ("ST", "RE+ST")

    @property
    def use_resolution_embedding(self) -> bool:
        return self.variant in ("RE", "RE+ST")

    @property
    def token_count(self) -> int:
        return 2 * self.n_patches + (1 if self.use_special_token else 0)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        fields = {
            "context_len", "horizon_len", "input_patch_len", "output_patch_len",
            "model_dim", "num_layers", "num_heads", "ffn_mult",
            "resolution_ratio", "variant",
        }
        return cls(**{k: v for k, v in d.items() if k in fields})
