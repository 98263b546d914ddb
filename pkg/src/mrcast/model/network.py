"""The multiresolution forecaster: context normalization, patch tokenization
with special-token / resolution-embedding fusion, a causal pre-norm
transformer stack, and the residual output head.

Forward passes keep caches so the handwritten backward pass can populate the
gradient slots of ModelParams exactly; correctness is pinned by central
finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DataError, NumericError
from ..series import MultiResWindow, NormalizationStats, sigma_floor
from .config import ModelConfig
from .loss import composite_loss
from .ops import (
    layer_norm,
    layer_norm_backward,
    linear,
    linear_backward,
    masked_softmax,
    masked_softmax_backward,
    silu,
    silu_backward,
)
from .params import ModelParams


@dataclass
class WindowBatch:
    """Stacked window arrays; the unit the network actually consumes."""

    coarse: np.ndarray
    fine: np.ndarray
    coarse_mask: np.ndarray
    fine_mask: np.ndarray
    horizon: np.ndarray | None = None

    @classmethod
    def from_windows(cls, windows: list[MultiResWindow], with_horizon: bool = True) -> "WindowBatch":
        return cls(
            coarse=np.stack([w.coarse for w in windows]),
            fine=np.stack([w.fine for w in windows]),
            coarse_mask=np.stack([w.coarse_mask for w in windows]),
            fine_mask=np.stack([w.fine_mask for w in windows]),
            horizon=np.stack([w.horizon for w in windows]) if with_horizon else None,
        )

    @property
    def size(self) -> int:
        return self.fine.shape[0]


@dataclass
class TokenSequence:
    """Embedded patch tokens for one window.

    ``resolution`` is 1 for coarse tokens and 0 for fine tokens and the
    special token; ``padding_mask`` is 1 where a token covers only padding.
    """

    tokens: np.ndarray
    padding_mask: np.ndarray
    resolution: np.ndarray
    st_index: int | None


def _stats_first_patch(values: np.ndarray, mask: np.ndarray, patch_len: int) -> tuple[float, float]:
    """Mean/std of the first patch_len points, skipping padded entries.

    Falls back to the first patch_len unpadded points when the leading patch
    is fully padded, and to an identity transform when nothing is real.
    """
    eligible = values[:patch_len][mask[:patch_len] == 0]
    if eligible.size == 0:
        eligible = values[mask == 0][:patch_len]
    if eligible.size == 0:
        return 0.0, 1.0
    mu = float(eligible.mean())
    return mu, sigma_floor(float(eligible.std()), mu)


def normalize_batch(
    batch: WindowBatch, patch_len: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray | None, list[NormalizationStats]]:
    """Standard-normalize both contexts per window; the fine statistics also
    normalize the horizon. Padded entries are held at zero."""
    B = batch.size
    nc = np.zeros_like(batch.coarse)
    nf = np.zeros_like(batch.fine)
    nh = np.zeros_like(batch.horizon) if batch.horizon is not None else None
    stats: list[NormalizationStats] = []
    for i in range(B):
        mu_c, sd_c = _stats_first_patch(batch.coarse[i], batch.coarse_mask[i], patch_len)
        mu_f, sd_f = _stats_first_patch(batch.fine[i], batch.fine_mask[i], patch_len)
        real_c = batch.coarse_mask[i] == 0
        real_f = batch.fine_mask[i] == 0
        nc[i, real_c] = (batch.coarse[i, real_c] - mu_c) / sd_c
        nf[i, real_f] = (batch.fine[i, real_f] - mu_f) / sd_f
        if nh is not None:
            nh[i] = (batch.horizon[i] - mu_f) / sd_f
        stats.append(NormalizationStats(mu_c=mu_c, sigma_c=sd_c, mu_f=mu_f, sigma_f=sd_f))
    return nc, nf, nh, stats


def normalize_context(
    window: MultiResWindow, patch_len: int
) -> tuple[MultiResWindow, NormalizationStats]:
    """Single-window normalization; returns a normalized copy plus the stats
    needed to invert it."""
    batch = WindowBatch.from_windows([window])
    nc, nf, nh, stats = normalize_batch(batch, patch_len)
    out = window.copy()
    out.coarse = nc[0]
    out.fine = nf[0]
    out.horizon = nh[0]
    return out, stats[0]


def denormalize(values: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    return stats.mu_f + stats.sigma_f * values


def _g_in(u: np.ndarray, params: ModelParams) -> tuple[np.ndarray, tuple]:
    """Residual patch embedding applied to (..., P) patches."""
    v = params.values
    pre, c_h = linear(u, v["g_in.w_h"], v["g_in.b_h"])
    act, c_s = silu(pre)
    main, c_o = linear(act, v["g_in.w_o"], v["g_in.b_o"])
    res, c_r = linear(u, v["g_in.w_r"])
    return main + res, (c_h, c_s, c_o, c_r)


def _g_in_backward(dout: np.ndarray, cache: tuple, params: ModelParams) -> None:
    c_h, c_s, c_o, c_r = cache
    g = params.grads
    dact, dw_o, db_o = linear_backward(dout, c_o)
    _, dw_r, _ = linear_backward(dout, c_r)
    dpre = silu_backward(dact, c_s)
    _, dw_h, db_h = linear_backward(dpre, c_h)
    g["g_in.w_o"] += dw_o
    g["g_in.b_o"] += db_o
    g["g_in.w_r"] += dw_r
    g["g_in.w_h"] += dw_h
    g["g_in.b_h"] += db_h


def _patch_pad_mask(point_mask: np.ndarray, patch_len: int) -> np.ndarray:
    """A patch token is padded iff every point it covers is padded."""
    B, C = point_mask.shape
    return (point_mask.reshape(B, C // patch_len, patch_len) != 0).all(axis=2)


def tokenize_batch(
    norm_coarse: np.ndarray,
    norm_fine: np.ndarray,
    coarse_mask: np.ndarray,
    fine_mask: np.ndarray,
    params: ModelParams,
    config: ModelConfig,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, int | None, tuple]:
    """Embed patches and assemble the token sequence.

    Returns (tokens (B,T,D), token_pad_mask (B,T), resolution labels (T,),
    st_index, cache).
    """
    B = norm_coarse.shape[0]
    P = config.input_patch_len
    n = config.n_patches
    if norm_coarse.shape[1] % P != 0 or norm_fine.shape[1] % P != 0:
        raise DataError("context length must be divisible by input_patch_len")

    u_c = norm_coarse.reshape(B, n, P)
    u_f = norm_fine.reshape(B, n, P)
    tok_c, cache_c = _g_in(u_c, params)
    tok_f, cache_f = _g_in(u_f, params)

    pad_c = _patch_pad_mask(coarse_mask, P)
    pad_f = _patch_pad_mask(fine_mask, P)

    parts = [tok_c]
    mask_parts = [pad_c]
    labels = [np.ones(n, dtype=np.int64)]
    st_index: int | None = None
    if config.use_special_token:
        st = np.broadcast_to(params["special_token"], (B, 1, config.model_dim))
        parts.append(st)
        mask_parts.append(np.zeros((B, 1), dtype=bool))
        labels.append(np.zeros(1, dtype=np.int64))
        st_index = n
    parts.append(tok_f)
    mask_parts.append(pad_f)
    labels.append(np.zeros(n, dtype=np.int64))

    tokens = np.concatenate(parts, axis=1)
    token_pad = np.concatenate(mask_parts, axis=1)
    resolution = np.concatenate(labels)
    if config.use_resolution_embedding:
        tokens = tokens + params["res_embed"][resolution]

    cache = (cache_c, cache_f, st_index, resolution, B)
    return tokens, token_pad, resolution, st_index, cache


def tokenize_backward(dtokens: np.ndarray, cache: tuple, params: ModelParams, config: ModelConfig) -> None:
    cache_c, cache_f, st_index, resolution, _ = cache
    n = config.n_patches
    g = params.grads
    if config.use_resolution_embedding:
        dre = dtokens.sum(axis=0)
        g["res_embed"][0] += dre[resolution == 0].sum(axis=0)
        g["res_embed"][1] += dre[resolution == 1].sum(axis=0)
    _g_in_backward(dtokens[:, :n], cache_c, params)
    if st_index is not None:
        g["special_token"] += dtokens[:, st_index].sum(axis=0)
        _g_in_backward(dtokens[:, n + 1 :], cache_f, params)
    else:
        _g_in_backward(dtokens[:, n:], cache_f, params)


def tokenize(window: MultiResWindow, params: ModelParams, config: ModelConfig) -> TokenSequence:
    """Spec-level single-window tokenization (normalized window in)."""
    tokens, pad, resolution, st_index, _ = tokenize_batch(
        window.coarse[None],
        window.fine[None],
        window.coarse_mask[None],
        window.fine_mask[None],
        params,
        config,
    )
    return TokenSequence(
        tokens=tokens[0], padding_mask=pad[0].astype(np.uint8), resolution=resolution, st_index=st_index
    )


def _attention_mask(token_pad: np.ndarray) -> np.ndarray:
    """Causal visibility: token i sees token j iff j <= i and j is unpadded."""
    B, T = token_pad.shape
    causal = np.tril(np.ones((T, T), dtype=bool))
    visible = ~token_pad.astype(bool)
    return causal[None, None, :, :] & visible[:, None, None, :]


def _layer_forward(
    x: np.ndarray, allowed: np.ndarray, params: ModelParams, layer: int, config: ModelConfig
) -> tuple[np.ndarray, dict]:
    v = params.values
    pre = f"layers.{layer}"
    B, T, D = x.shape
    h = config.num_heads
    dh = D // h

    ln1_out, ln1_c = layer_norm(x, v[f"{pre}.ln1.g"], v[f"{pre}.ln1.b"])
    q, q_c = linear(ln1_out, v[f"{pre}.attn.wq"], v[f"{pre}.attn.bq"])
    k, k_c = linear(ln1_out, v[f"{pre}.attn.wk"], v[f"{pre}.attn.bk"])
    val, v_c = linear(ln1_out, v[f"{pre}.attn.wv"], v[f"{pre}.attn.bv"])

    def split_heads(a: np.ndarray) -> np.ndarray:
        return a.reshape(B, T, h, dh).transpose(0, 2, 1, 3)

    qh, kh, vh = split_heads(q), split_heads(k), split_heads(val)
    scores = np.einsum("bhid,bhjd->bhij", qh, kh) / np.sqrt(dh)
    probs = masked_softmax(scores, allowed)
    ctx = np.einsum("bhij,bhjd->bhid", probs, vh)
    merged = ctx.transpose(0, 2, 1, 3).reshape(B, T, D)
    attn_out, o_c = linear(merged, v[f"{pre}.attn.wo"], v[f"{pre}.attn.bo"])
    x1 = x + attn_out

    ln2_out, ln2_c = layer_norm(x1, v[f"{pre}.ln2.g"], v[f"{pre}.ln2.b"])
    m1, m1_c = linear(ln2_out, v[f"{pre}.mlp.w1"], v[f"{pre}.mlp.b1"])
    act, act_c = silu(m1)
    mlp_out, m2_c = linear(act, v[f"{pre}.mlp.w2"], v[f"{pre}.mlp.b2"])
    x2 = x1 + mlp_out

    cache = {
        "ln1": ln1_c, "q": q_c, "k": k_c, "v": v_c,
        "qh": qh, "kh": kh, "vh": vh, "probs": probs,
        "o": o_c, "ln2": ln2_c, "m1": m1_c, "act": act_c, "m2": m2_c,
        "shape": (B, T, D, h, dh),
    }
    return x2, cache


def _layer_backward(
    dx2: np.ndarray, cache: dict, params: ModelParams, layer: int
) -> np.ndarray:
    g = params.grads
    pre = f"layers.{layer}"
    B, T, D, h, dh = cache["shape"]

    dact, dw2, db2 = linear_backward(dx2, cache["m2"])
    dm1 = silu_backward(dact, cache["act"])
    dln2, dw1, db1 = linear_backward(dm1, cache["m1"])
    dx1_mlp, dg2, dbeta2 = layer_norm_backward(dln2, cache["ln2"])
    dx1 = dx2 + dx1_mlp

    dmerged, dwo, dbo = linear_backward(dx1, cache["o"])
    dctx = dmerged.reshape(B, T, h, dh).transpose(0, 2, 1, 3)
    probs, vh = cache["probs"], cache["vh"]
    dprobs = np.einsum("bhid,bhjd->bhij", dctx, vh)
    dvh = np.einsum("bhij,bhid->bhjd", probs, dctx)
    dscores = masked_softmax_backward(dprobs, probs) / np.sqrt(dh)
    dqh = np.einsum("bhij,bhjd->bhid", dscores, cache["kh"])
    dkh = np.einsum("bhij,bhid->bhjd", dscores, cache["qh"])

    def merge_heads(a: np.ndarray) -> np.ndarray:
        return a.transpose(0, 2, 1, 3).reshape(B, T, D)

    dq, dwq, dbq = linear_backward(merge_heads(dqh), cache["q"])
    dk, dwk, dbk = linear_backward(merge_heads(dkh), cache["k"])
    dv, dwv, dbv = linear_backward(merge_heads(dvh), cache["v"])
    dln1_out = dq + dk + dv
    dx_attn, dg1, dbeta1 = layer_norm_backward(dln1_out, cache["ln1"])
    dx = dx1 + dx_attn

    g[f"{pre}.mlp.w2"] += dw2
    g[f"{pre}.mlp.b2"] += db2
    g[f"{pre}.mlp.w1"] += dw1
    g[f"{pre}.mlp.b1"] += db1
    g[f"{pre}.ln2.g"] += dg2
    g[f"{pre}.ln2.b"] += dbeta2
    g[f"{pre}.attn.wo"] += dwo
    g[f"{pre}.attn.bo"] += dbo
    g[f"{pre}.attn.wq"] += dwq
    g[f"{pre}.attn.bq"] += dbq
    g[f"{pre}.attn.wk"] += dwk
    g[f"{pre}.attn.bk"] += dbk
    g[f"{pre}.attn.wv"] += dwv
    g[f"{pre}.attn.bv"] += dbv
    g[f"{pre}.ln1.g"] += dg1
    g[f"{pre}.ln1.b"] += dbeta1
    return dx


def transformer_forward(
    tokens: np.ndarray, token_pad: np.ndarray, params: ModelParams, config: ModelConfig
) -> tuple[np.ndarray, dict]:
    """Run the decoder stack and output head over every position.

    Output layout per position: L mean values followed by 9 stacked L-blocks
    of quantile values (q = 0.1 .. 0.9).
    """
    v = params.values
    allowed = _attention_mask(token_pad)
    x = tokens
    layer_caches = []
    for i in range(config.num_layers):
        x, cache = _layer_forward(x, allowed, params, i, config)
        if not np.isfinite(x).all():
            raise NumericError(f"non-finite activations in transformer layer {i}")
        layer_caches.append(cache)

    z, fin_c = layer_norm(x, v["final_norm.g"], v["final_norm.b"])
    gh, gh_c = linear(z, v["g_out.w_h"], v["g_out.b_h"])
    gs, gs_c = silu(gh)
    main, go_c = linear(gs, v["g_out.w_o"], v["g_out.b_o"])
    res, gr_c = linear(z, v["g_out.w_r"])
    out = main + res
    cache = {"layers": layer_caches, "fin": fin_c, "gh": gh_c, "gs": gs_c, "go": go_c, "gr": gr_c}
    return out, cache


def transformer_backward(
    dout: np.ndarray, cache: dict, params: ModelParams, config: ModelConfig
) -> np.ndarray:
    g = params.grads
    dgs, dgw_o, dgb_o = linear_backward(dout, cache["go"])
    _, dgw_r, _ = linear_backward(dout, cache["gr"])
    dz_r = dout @ params["g_out.w_r"].T
    dgh = silu_backward(dgs, cache["gs"])
    dz_h, dgw_h, dgb_h = linear_backward(dgh, cache["gh"])
    dz = dz_h + dz_r
    dx, dfg, dfb = layer_norm_backward(dz, cache["fin"])
    g["g_out.w_o"] += dgw_o
    g["g_out.b_o"] += dgb_o
    g["g_out.w_r"] += dgw_r
    g["g_out.w_h"] += dgw_h
    g["g_out.b_h"] += dgb_h
    g["final_norm.g"] += dfg
    g["final_norm.b"] += dfb
    for i in reversed(range(config.num_layers)):
        dx = _layer_backward(dx, cache["layers"][i], params, i)
    return dx


def split_outputs(out: np.ndarray, config: ModelConfig) -> tuple[np.ndarray, np.ndarray]:
    """(…, O) -> mean (…, L) and quantiles (…, 9, L)."""
    L = config.output_patch_len
    mean = out[..., :L]
    quant = out[..., L:].reshape(*out.shape[:-1], 9, L)
    return mean, quant


def forward(
    tok_seq: TokenSequence, params: ModelParams, config: ModelConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Spec-level forward: per-position normalized predictions for one window.

    Returns (mean (T, L), quantiles (T, 9, L)); the final fine position is
    the one consumed by one-step decoding.
    """
    out, _ = transformer_forward(
        tok_seq.tokens[None], tok_seq.padding_mask[None].astype(bool), params, config
    )
    mean, quant = split_outputs(out[0], config)
    return mean, quant


def predict_last(
    batch: WindowBatch, params: ModelParams, config: ModelConfig
) -> tuple[np.ndarray, np.ndarray, list[NormalizationStats]]:
    """Normalized mean/quantile predictions at the final fine position.

    Returns (mean (B, L), quantiles (B, 9, L), per-window stats).
    """
    nc, nf, _, stats = normalize_batch(batch, config.input_patch_len)
    tokens, token_pad, _, _, _ = tokenize_batch(
        nc, nf, batch.coarse_mask, batch.fine_mask, params, config
    )
    out, _ = transformer_forward(tokens, token_pad, params, config)
    mean, quant = split_outputs(out[:, -1, :], config)
    return mean, quant, stats


def loss_and_gradients(batch: WindowBatch, params: ModelParams, config: ModelConfig) -> float:
    """One training step's forward + backward; gradients land in params.grads."""
    if batch.horizon is None:
        raise DataError("training batch needs horizons")
    if batch.horizon.shape[1] != config.output_patch_len:
        raise DataError(
            f"horizon length {batch.horizon.shape[1]} != output_patch_len {config.output_patch_len}"
        )
    nc, nf, nh, _ = normalize_batch(batch, config.input_patch_len)
    tokens, token_pad, _, _, tok_cache = tokenize_batch(
        nc, nf, batch.coarse_mask, batch.fine_mask, params, config
    )
    out, cache = transformer_forward(tokens, token_pad, params, config)
    mean, quant = split_outputs(out[:, -1, :], config)
    loss, d_mean, d_quant = composite_loss(mean, quant, nh)

    B, T = tokens.shape[0], tokens.shape[1]
    dout = np.zeros((B, T, config.n_outputs))
    L = config.output_patch_len
    dout[:, -1, :L] = d_mean
    dout[:, -1, L:] = d_quant.reshape(B, 9 * L)

    params.zero_grads()
    dtokens = transformer_backward(dout, cache, params, config)
    tokenize_backward(dtokens, tok_cache, params, config)
    return loss
