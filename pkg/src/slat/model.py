"""Dual-encoder transformer for remaining-useful-life regression.

Two parallel encoders process a sensor window: one over time steps (each
token is the sensor vector at one step plus the window's descriptor vector),
one over channels (each token is a channel's full time series plus its own
mean/slope descriptors). Both use banded+global sparse attention with
low-rank Q/K/V factors. Their outputs are concatenated along the token axis
and a learned query token cross-attends to the fused sequence through the
decoder blocks; a linear head maps the final query state to the scalar RUL.

Parameters live in a flat ``dict[str, np.ndarray]`` so the optimizer,
checkpointing and gradient checking can treat the model as a named tensor
collection. Every forward returns a cache consumed by :func:`backward`,
which produces a gradient dict with exactly the same keys.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import layers
from .attention import SparseMask, build_mask, mha_backward, mha_forward


@dataclass(frozen=True)
class SlatConfig:
    n_stw: int = 30
    n_channels: int = 9
    d_model: int = 64
    time_blocks: int = 4
    sensor_blocks: int = 4
    decoder_blocks: int = 2
    heads: int = 8
    ffn_mult: int = 4
    rank: int | None = 4        # None = dense (unfactored) projections
    band_width: int = 2
    n_global: int = 2           # global tokens = first n positions
    dropout: float = 0.1
    rul_cap: float = 125.0
    mask_mode: str = "neg_inf"
    dtype: str = "float64"

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        for name in ("n_stw", "n_channels", "d_model", "time_blocks", "sensor_blocks",
                     "decoder_blocks", "heads", "ffn_mult"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.rank is not None and not 1 <= self.rank <= min(self.d_model, self.d_head):
            raise ValueError(f"rank {self.rank} outside [1, {min(self.d_model, self.d_head)}]")
        if self.band_width < 0 or self.n_global < 0:
            raise ValueError("band_width and n_global must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout {self.dropout} outside [0, 1)")
        if self.rul_cap <= 0 or not math.isfinite(self.rul_cap):
            raise ValueError(f"rul_cap must be positive and finite, got {self.rul_cap}")
        if self.mask_mode not in ("neg_inf", "hadamard"):
            raise ValueError(f"unknown mask_mode {self.mask_mode!r}")
        if self.dtype not in ("float64", "float32"):
            raise ValueError(f"dtype must be float64 or float32, got {self.dtype!r}")

    @property
    def d_head(self) -> int:
        return self.d_model // self.heads

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "SlatConfig":
        return cls(**d)

    def dense_variant(self) -> "SlatConfig":
        return replace(self, rank=None)


# -- parameter bookkeeping ---------------------------------------------------

def _attn_shapes(prefix: str, cfg: SlatConfig):
    h, d, e, r = cfg.heads, cfg.d_model, cfg.d_head, cfg.rank
    out = []
    for name in ("q", "k", "v"):
        if r is None:
            out.append((f"{prefix}attn.{name}_u", (h, d, e)))
        else:
            out.append((f"{prefix}attn.{name}_u", (h, d, r)))
            out.append((f"{prefix}attn.{name}_v", (h, r, e)))
    out.append((f"{prefix}attn.out_w", (d, d)))
    out.append((f"{prefix}attn.out_b", (d,)))
    return out


def _block_shapes(prefix: str, cfg: SlatConfig):
    d, hid = cfg.d_model, cfg.ffn_mult * cfg.d_model
    return [
        (f"{prefix}ln1.g", (d,)),
        (f"{prefix}ln1.b", (d,)),
        *_attn_shapes(prefix, cfg),
        (f"{prefix}ln2.g", (d,)),
        (f"{prefix}ln2.b", (d,)),
        (f"{prefix}ffn.w1", (d, hid)),
        (f"{prefix}ffn.b1", (hid,)),
        (f"{prefix}ffn.w2", (hid, d)),
        (f"{prefix}ffn.b2", (d,)),
    ]


def param_shapes(cfg: SlatConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) pairs for every learnable tensor."""
    n, s, d = cfg.n_stw, cfg.n_channels, cfg.d_model
    shapes = [
        ("time_embed.w", (3 * s, d)),
        ("time_embed.b", (d,)),
        ("sensor_embed.w", (n + 2, d)),
        ("sensor_embed.b", (d,)),
        ("sensor_embed.ident", (s, d)),
    ]
    for i in range(cfg.time_blocks):
        shapes += _block_shapes(f"time_enc.{i}.", cfg)
    shapes += [("time_enc.final_ln.g", (d,)), ("time_enc.final_ln.b", (d,))]
    for i in range(cfg.sensor_blocks):
        shapes += _block_shapes(f"sensor_enc.{i}.", cfg)
    shapes += [("sensor_enc.final_ln.g", (d,)), ("sensor_enc.final_ln.b", (d,))]
    shapes.append(("decoder.query", (d,)))
    for i in range(cfg.decoder_blocks):
        shapes += _block_shapes(f"decoder.{i}.", cfg)
    shapes += [
        ("decoder.final_ln.g", (d,)),
        ("decoder.final_ln.b", (d,)),
        ("head.w", (d, 1)),
        ("head.b", (1,)),
    ]
    return shapes


def param_count(cfg: SlatConfig) -> int:
    """Total number of scalar parameters implied by the config."""
    return sum(int(np.prod(shape)) for _, shape in param_shapes(cfg))


_EMBED_LIKE = ("decoder.query", "sensor_embed.ident")


def init_params(cfg: SlatConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Fan-in scaled uniform weights; zero biases; unit layer-norm gains."""
    dt = cfg.np_dtype
    params: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(cfg):
        if name.endswith(".g"):
            params[name] = np.ones(shape, dtype=dt)
        elif name.endswith((".b", ".b1", ".b2")):
            params[name] = np.zeros(shape, dtype=dt)
        else:
            if name in _EMBED_LIKE:
                fan_in = cfg.d_model
            else:
                fan_in = shape[-2] if len(shape) >= 2 else shape[-1]
            bound = 1.0 / math.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dt)
    return params


def _attn_weights(params: dict, prefix: str) -> dict:
    w = {
        "q_u": params[f"{prefix}attn.q_u"],
        "k_u": params[f"{prefix}attn.k_u"],
        "v_u": params[f"{prefix}attn.v_u"],
        "out_w": params[f"{prefix}attn.out_w"],
        "out_b": params[f"{prefix}attn.out_b"],
    }
    if f"{prefix}attn.q_v" in params:
        w["q_v"] = params[f"{prefix}attn.q_v"]
        w["k_v"] = params[f"{prefix}attn.k_v"]
        w["v_v"] = params[f"{prefix}attn.v_v"]
    return w


# -- embeddings ---------------------------------------------------------------

def _embed_time(params, cfg: SlatConfig, values, descriptors):
    b, n, s = values.shape
    tiled = np.broadcast_to(descriptors[:, None, :], (b, n, 2 * s))
    x_in = np.concatenate([values, tiled], axis=-1)
    tok, lin_cache = layers.linear(x_in, params["time_embed.w"], params["time_embed.b"])
    tok = tok + layers.sinusoidal_encoding(n, cfg.d_model, dtype=tok.dtype)
    return tok, lin_cache


def _embed_time_backward(g, cache, s, grads):
    gx, gw, gb = layers.linear_backward(g, cache)
    grads["time_embed.w"] = gw
    grads["time_embed.b"] = gb
    g_values = gx[:, :, :s]
    g_desc = gx[:, :, s:].sum(axis=1)
    return g_values, g_desc


def _embed_sensor(params, cfg: SlatConfig, values, descriptors):
    b, n, s = values.shape
    per_chan = np.swapaxes(values, 1, 2)                      # (B, S, n)
    stats = np.stack([descriptors[:, :s], descriptors[:, s:]], axis=-1)  # (B, S, 2)
    x_in = np.concatenate([per_chan, stats], axis=-1)         # (B, S, n + 2)
    tok, lin_cache = layers.linear(x_in, params["sensor_embed.w"], params["sensor_embed.b"])
    tok = tok + params["sensor_embed.ident"]
    return tok, lin_cache


def _embed_sensor_backward(g, cache, n, grads):
    grads["sensor_embed.ident"] = g.reshape(-1, *g.shape[-2:]).sum(axis=0)
    gx, gw, gb = layers.linear_backward(g, cache)
    grads["sensor_embed.w"] = gw
    grads["sensor_embed.b"] = gb
    g_values = np.swapaxes(gx[:, :, :n], 1, 2)
    s = gx.shape[1]
    g_desc = np.concatenate([gx[:, :, n], gx[:, :, n + 1]], axis=-1)
    assert g_desc.shape[-1] == 2 * s
    return g_values, g_desc


def embed_time_tokens(params, cfg: SlatConfig, values, descriptors) -> np.ndarray:
    """Per-time-step tokens (B, n_stw, d_model); descriptors broadcast to all steps."""
    return _embed_time(params, cfg, values, descriptors)[0]


def embed_sensor_tokens(params, cfg: SlatConfig, values, descriptors) -> np.ndarray:
    """Per-channel tokens (B, S, d_model) with learned channel identities."""
    return _embed_sensor(params, cfg, values, descriptors)[0]


def fuse(time_out: np.ndarray, sensor_out: np.ndarray) -> np.ndarray:
    """Concatenate the two encoder outputs along the token axis, time first."""
    if time_out.shape[-1] != sensor_out.shape[-1]:
        raise ValueError(
            f"d_model mismatch: {time_out.shape[-1]} vs {sensor_out.shape[-1]}")
    return np.concatenate([time_out, sensor_out], axis=-2)


# -- transformer blocks -------------------------------------------------------

def _block_forward(x, mem, params, cfg: SlatConfig, prefix, mask, train, rng):
    """Pre-norm residual block. Self-attention when mem is None, else the
    normalized stream cross-attends to mem."""
    rate = cfg.dropout if train else 0.0
    h1, ln1c = layers.layer_norm(x, params[f"{prefix}ln1.g"], params[f"{prefix}ln1.b"])
    kv = h1 if mem is None else mem
    attn_out, mhac = mha_forward(h1, kv, _attn_weights(params, prefix), mask, cfg.mask_mode)
    attn_out, drop1 = layers.dropout(attn_out, rate, rng)
    x1 = x + attn_out
    h2, ln2c = layers.layer_norm(x1, params[f"{prefix}ln2.g"], params[f"{prefix}ln2.b"])
    f1, lin1c = layers.linear(h2, params[f"{prefix}ffn.w1"], params[f"{prefix}ffn.b1"])
    g1, geluc = layers.gelu(f1)
    f2, lin2c = layers.linear(g1, params[f"{prefix}ffn.w2"], params[f"{prefix}ffn.b2"])
    f2, drop2 = layers.dropout(f2, rate, rng)
    x2 = x1 + f2
    return x2, (ln1c, mhac, drop1, ln2c, lin1c, geluc, lin2c, drop2, mem is not None)


def _block_backward(gy, cache, prefix, grads):
    """Returns (gx, gmem); gmem is None for self-attention blocks."""
    ln1c, mhac, drop1, ln2c, lin1c, geluc, lin2c, drop2, is_cross = cache
    g_f2 = layers.dropout_backward(gy, drop2)
    g_g1, gw2, gb2 = layers.linear_backward(g_f2, lin2c)
    grads[f"{prefix}ffn.w2"] = gw2
    grads[f"{prefix}ffn.b2"] = gb2
    g_f1 = layers.gelu_backward(g_g1, geluc)
    g_h2, gw1, gb1 = layers.linear_backward(g_f1, lin1c)
    grads[f"{prefix}ffn.w1"] = gw1
    grads[f"{prefix}ffn.b1"] = gb1
    g_x1, gg2, gb_ln2 = layers.layer_norm_backward(g_h2, ln2c)
    grads[f"{prefix}ln2.g"] = gg2
    grads[f"{prefix}ln2.b"] = gb_ln2
    g_x1 = g_x1 + gy

    g_attn = layers.dropout_backward(g_x1, drop1)
    g_h1_q, g_kv, attn_grads = mha_backward(g_attn, mhac)
    for key, val in attn_grads.items():
        grads[f"{prefix}attn.{key}"] = val
    if is_cross:
        g_h1, g_mem = g_h1_q, g_kv
    else:
        g_h1, g_mem = g_h1_q + g_kv, None
    g_x, gg1, gb_ln1 = layers.layer_norm_backward(g_h1, ln1c)
    grads[f"{prefix}ln1.g"] = gg1
    grads[f"{prefix}ln1.b"] = gb_ln1
    return g_x + g_x1, g_mem


def _encoder_forward(x, params, cfg, name, n_blocks, mask, train, rng):
    caches = []
    for i in range(n_blocks):
        x, c = _block_forward(x, None, params, cfg, f"{name}.{i}.", mask, train, rng)
        caches.append(c)
    x, lnc = layers.layer_norm(x, params[f"{name}.final_ln.g"], params[f"{name}.final_ln.b"])
    return x, (caches, lnc)


def _encoder_backward(gy, params, name, cache, grads):
    caches, lnc = cache
    gy, gg, gb = layers.layer_norm_backward(gy, lnc)
    grads[f"{name}.final_ln.g"] = gg
    grads[f"{name}.final_ln.b"] = gb
    for i in reversed(range(len(caches))):
        gy, _ = _block_backward(gy, caches[i], f"{name}.{i}.", grads)
    return gy


def encoder_forward(tokens, params, cfg: SlatConfig, name: str, mask: SparseMask) -> np.ndarray:
    """Run one encoder stack (inference mode) over tokens (B, L, d_model)."""
    n_blocks = cfg.time_blocks if name == "time_enc" else cfg.sensor_blocks
    return _encoder_forward(tokens, params, cfg, name, n_blocks, mask, False, None)[0]


# -- full network -------------------------------------------------------------

def masks_for(cfg: SlatConfig) -> tuple[SparseMask, SparseMask]:
    time_mask = build_mask(cfg.n_stw, cfg.band_width, range(min(cfg.n_global, cfg.n_stw)))
    sensor_mask = build_mask(cfg.n_channels, cfg.band_width,
                             range(min(cfg.n_global, cfg.n_channels)))
    return time_mask, sensor_mask


def forward(params, cfg: SlatConfig, values, descriptors, *, train=False, rng=None):
    """Unclamped predictions (B,) plus the cache for :func:`backward`.

    values: (B, n_stw, S) normalized window tensors; descriptors: (B, 2S).
    """
    dt = cfg.np_dtype
    values = np.asarray(values, dtype=dt)
    descriptors = np.asarray(descriptors, dtype=dt)
    if values.ndim != 3 or values.shape[1:] != (cfg.n_stw, cfg.n_channels):
        raise ValueError(
            f"values shape {values.shape} != (B, {cfg.n_stw}, {cfg.n_channels})")
    if descriptors.shape != (values.shape[0], 2 * cfg.n_channels):
        raise ValueError(
            f"descriptors shape {descriptors.shape} != (B, {2 * cfg.n_channels})")
    if not (np.all(np.isfinite(values)) and np.all(np.isfinite(descriptors))):
        raise ValueError("non-finite values in model input")
    if train and cfg.dropout > 0.0 and rng is None:
        raise ValueError("training forward with dropout needs an rng")

    time_mask, sensor_mask = masks_for(cfg)
    t_tok, t_emb_cache = _embed_time(params, cfg, values, descriptors)
    s_tok, s_emb_cache = _embed_sensor(params, cfg, values, descriptors)
    t_out, t_enc_cache = _encoder_forward(
        t_tok, params, cfg, "time_enc", cfg.time_blocks, time_mask, train, rng)
    s_out, s_enc_cache = _encoder_forward(
        s_tok, params, cfg, "sensor_enc", cfg.sensor_blocks, sensor_mask, train, rng)
    mem = fuse(t_out, s_out)

    b = values.shape[0]
    q = np.broadcast_to(params["decoder.query"], (b, 1, cfg.d_model)).astype(dt)
    dec_caches = []
    for i in range(cfg.decoder_blocks):
        q, c = _block_forward(q, mem, params, cfg, f"decoder.{i}.", None, train, rng)
        dec_caches.append(c)
    q, final_lnc = layers.layer_norm(q, params["decoder.final_ln.g"], params["decoder.final_ln.b"])
    out, head_cache = layers.linear(q, params["head.w"], params["head.b"])
    preds = out[:, 0, 0]
    cache = (values.shape, t_emb_cache, s_emb_cache, t_enc_cache, s_enc_cache,
             dec_caches, final_lnc, head_cache)
    return preds, cache


def backward(params, cfg: SlatConfig, cache, gpreds) -> dict[str, np.ndarray]:
    """Gradient dict (same keys as params) of a scalar loss given d loss/d preds."""
    (shape, t_emb_cache, s_emb_cache, t_enc_cache, s_enc_cache,
     dec_caches, final_lnc, head_cache) = cache
    b, n, s = shape
    grads: dict[str, np.ndarray] = {}

    gq = np.asarray(gpreds, dtype=cfg.np_dtype).reshape(b, 1, 1)
    gq, gw, gbias = layers.linear_backward(gq, head_cache)
    grads["head.w"] = gw
    grads["head.b"] = gbias
    gq, gg, gbn = layers.layer_norm_backward(gq, final_lnc)
    grads["decoder.final_ln.g"] = gg
    grads["decoder.final_ln.b"] = gbn

    g_mem = None
    for i in reversed(range(cfg.decoder_blocks)):
        gq, gm = _block_backward(gq, dec_caches[i], f"decoder.{i}.", grads)
        g_mem = gm if g_mem is None else g_mem + gm
    grads["decoder.query"] = gq.sum(axis=(0, 1))

    g_t_out = g_mem[:, :n, :]
    g_s_out = g_mem[:, n:, :]
    g_t_tok = _encoder_backward(g_t_out, params, "time_enc", t_enc_cache, grads)
    g_s_tok = _encoder_backward(g_s_out, params, "sensor_enc", s_enc_cache, grads)
    gv_t, gd_t = _embed_time_backward(g_t_tok, t_emb_cache, s, grads)
    gv_s, gd_s = _embed_sensor_backward(g_s_tok, s_emb_cache, n, grads)
    # input gradients (gv_t + gv_s, gd_t + gd_s) are discarded; inputs are data
    del gv_t, gv_s, gd_t, gd_s
    return grads


def stack_samples(samples):
    """Stack WindowSamples into (values, descriptors, targets) arrays."""
    values = np.stack([s.values for s in samples])
    descriptors = np.stack([s.descriptors for s in samples])
    targets = np.array([s.rul_target for s in samples], dtype=np.float64)
    return values, descriptors, targets


def predict_rul(params, cfg: SlatConfig, samples, batch_size: int = 256) -> np.ndarray:
    """Deterministic inference, clamped to [0, rul_cap].

    ``samples`` is a sequence of WindowSamples or a (values, descriptors) pair.
    """
    if isinstance(samples, tuple):
        values, descriptors = samples
    else:
        values, descriptors, _ = stack_samples(samples)
    preds = np.empty(values.shape[0], dtype=np.float64)
    for lo in range(0, values.shape[0], batch_size):
        hi = min(lo + batch_size, values.shape[0])
        p, _ = forward(params, cfg, values[lo:hi], descriptors[lo:hi], train=False)
        preds[lo:hi] = p
    return np.clip(preds, 0.0, cfg.rul_cap)
