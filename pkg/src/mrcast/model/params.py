"""Named parameter arrays with matching gradient slots."""

from __future__ import annotations

import numpy as np

from .config import ModelConfig


class ModelParams:
    """A flat map of named float64 arrays plus a parallel gradient map.

    Names follow a dotted scheme (``g_in.w_h``, ``layers.0.attn.wq`` ...) so
    checkpoints, the optimizer, and gradient checks can address parameters
    uniformly.
    """

    def __init__(self, values: dict[str, np.ndarray]):
        self.values = {k: np.asarray(v, dtype=np.float64) for k, v in values.items()}
        self.grads = {k: np.zeros_like(v) for k, v in self.values.items()}

    def names(self) -> list[str]:
        return list(self.values.keys())

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def clone(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.values.items()})

    def n_parameters(self) -> int:
        return sum(v.size for v in self.values.values())

    def global_grad_norm(self) -> float:
        total = 0.0
        for g in self.grads.values():
            total += float((g * g).sum())
        return float(np.sqrt(total))

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Initialize all parameter groups deterministically from ``seed``."""
    rng = np.random.default_rng(seed)
    D = config.model_dim
    P = config.input_patch_len
    F = config.ffn_mult * D
    O = config.n_outputs
    scale = 0.02

    values: dict[str, np.ndarray] = {}

    def w(name: str, shape: tuple[int, ...]) -> None:
        values[name] = rng.standard_normal(shape) * scale

    def zeros(name: str, shape: tuple[int, ...]) -> None:
        values[name] = np.zeros(shape)

    def ones(name: str, shape: tuple[int, ...]) -> None:
        values[name] = np.ones(shape)

    w("g_in.w_h", (P, D))
    zeros("g_in.b_h", (D,))
    w("g_in.w_o", (D, D))
    zeros("g_in.b_o", (D,))
    w("g_in.w_r", (P, D))
    w("special_token", (D,))
    w("res_embed", (2, D))

    for i in range(config.num_layers):
        pre = f"layers.{i}"
        ones(f"{pre}.ln1.g", (D,))
        zeros(f"{pre}.ln1.b", (D,))
        for side in ("wq", "wk", "wv", "wo"):
            w(f"{pre}.attn.{side}", (D, D))
        for side in ("bq", "bk", "bv", "bo"):
            zeros(f"{pre}.attn.{side}", (D,))
        ones(f"{pre}.ln2.g", (D,))
        zeros(f"{pre}.ln2.b", (D,))
        w(f"{pre}.mlp.w1", (D, F))
        zeros(f"{pre}.mlp.b1", (F,))
        w(f"{pre}.mlp.w2", (F, D))
        zeros(f"{pre}.mlp.b2", (D,))

    ones("final_norm.g", (D,))
    zeros("final_norm.b", (D,))
    w("g_out.w_h", (D, D))
    zeros("g_out.b_h", (D,))
    w("g_out.w_o", (D, O))
    zeros("g_out.b_o", (O,))
    w("g_out.w_r", (D, O))

    return ModelParams(values)
