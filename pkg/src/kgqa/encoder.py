"""Post-norm transformer encoder with structure-masked attention and exact
hand-rolled reverse-mode gradients.

Each block is: masked multi-head attention -> dropout -> (optional adapter)
-> residual + layer norm -> feed-forward (GELU) -> dropout -> (optional
adapter) -> residual + layer norm.  Adapters are bottleneck residuals
(down, GELU, up) selected by task name at call time.  All math is numpy in
the config's working precision; the backward pass mirrors the forward tape
and is validated against central finite differences in the test suite.

Batch padding uses PAD rows whose mask row/column is fully blocked except the
diagonal, so padded positions cannot influence any real position's output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .mask import NEG_INF
from .params import ModelParameters
from .sequence import InputSequence


class EncoderError(RuntimeError):
    """Non-finite activations, missing tape, or malformed batch."""


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + _GELU_A * x**3)))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    t = np.tanh(_GELU_C * (x + _GELU_A * x**3))
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * _GELU_C * (1.0 + 3.0 * _GELU_A * x**2)


LN_EPS = 1e-5


def _layer_norm_forward(x: np.ndarray, scale: np.ndarray, shift: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * scale + shift, (xhat, inv)


def _layer_norm_backward(dy: np.ndarray, cache, scale: np.ndarray):
    xhat, inv = cache
    n = xhat.shape[-1]
    dscale = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    dshift = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * scale
    dx = (
        inv
        / n
        * (
            n * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )
    )
    return dx, dscale, dshift


def _softmax_last(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _softmax_backward(p: np.ndarray, dp: np.ndarray) -> np.ndarray:
    return p * (dp - (dp * p).sum(axis=-1, keepdims=True))


def _dropout_mask(rng: np.random.Generator, shape, rate: float, dtype) -> np.ndarray:
    keep = (rng.random(shape) >= rate).astype(dtype)
    return keep / dtype.type(1.0 - rate)


@dataclass
class Batch:
    """Collated inputs: embedding scatter plan, padded mask, per-sample metadata."""

    size: int
    length: int
    row_refs: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]]
    mask: np.ndarray  # (B, L, L) additive
    inputs: list[InputSequence]

    @property
    def lengths(self) -> list[int]:
        return [inp.length for inp in self.inputs]


def collate(inputs: list[InputSequence], params: ModelParameters, pad_to: int | None = None) -> Batch:
    """Pad to a common length with fully-masked PAD rows (self-attention only).

    PAD positions get no embedding rows at all; their input rows are exact
    zeros and no real row can attend to them, so padding cannot change any
    unpadded sample's output or loss.
    """
    if not inputs:
        raise EncoderError("empty batch")
    cfg = params.config
    max_l = max(inp.length for inp in inputs)
    length = pad_to if pad_to is not None else max_l
    if length < max_l:
        raise EncoderError(f"pad_to={length} below longest sequence {max_l}")
    if length > cfg.max_len:
        raise EncoderError(f"batch length {length} exceeds max_len {cfg.max_len}")

    dt = cfg.np_dtype
    b_n = len(inputs)
    mask = np.full((b_n, length, length), NEG_INF, dtype=dt)
    refs: dict[str, list[list[int]]] = {}

    def add_ref(name: str, b: int, p: int, row: int) -> None:
        entry = refs.setdefault(name, [[], [], []])
        entry[0].append(b)
        entry[1].append(p)
        entry[2].append(row)

    for b, inp in enumerate(inputs):
        l = inp.length
        mask[b, :l, :l] = inp.mask.matrix
        for i in range(l, length):
            mask[b, i, i] = 0.0
        for p, rows in enumerate(inp.token_rows):
            for r in rows:
                add_ref("embed", b, p, r)
        n_q = inp.n_q
        for p in range(l):
            if cfg.separate_graph_positions and p >= n_q:
                add_ref("pos_graph", b, p, p - n_q)
            else:
                add_ref("pos", b, p, p)

    row_refs = {
        name: tuple(np.asarray(col, dtype=np.int64) for col in cols)
        for name, cols in refs.items()
    }
    return Batch(size=b_n, length=length, row_refs=row_refs, mask=mask, inputs=inputs)


def _embed_batch(params: ModelParameters, batch: Batch) -> np.ndarray:
    cfg = params.config
    x = np.zeros((batch.size, batch.length, cfg.d), dtype=cfg.np_dtype)
    for name, (bi, pi, ri) in batch.row_refs.items():
        np.add.at(x, (bi, pi), params[name][ri])
    return x


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    b, l, d = x.shape
    return x.reshape(b, l, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, l, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, l, h * dh)


def _linear(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return x @ w + b


def _linear_backward(x: np.ndarray, w: np.ndarray, dy: np.ndarray):
    din, dout = w.shape
    x2 = x.reshape(-1, din)
    dy2 = dy.reshape(-1, dout)
    return dy @ w.T, x2.T @ dy2, dy2.sum(axis=0)


def _adapter_forward(z: np.ndarray, params: ModelParameters, prefix: str):
    h1 = _linear(z, params[f"{prefix}.down_w"], params[f"{prefix}.down_b"])
    a = gelu(h1)
    out = z + _linear(a, params[f"{prefix}.up_w"], params[f"{prefix}.up_b"])
    return out, {"z": z, "h1": h1, "a": a}


def _adapter_backward(dout: np.ndarray, cache, params: ModelParameters, prefix: str, grads):
    da, dup_w, dup_b = _linear_backward(cache["a"], params[f"{prefix}.up_w"], dout)
    dh1 = da * gelu_grad(cache["h1"])
    dz_lin, ddown_w, ddown_b = _linear_backward(cache["z"], params[f"{prefix}.down_w"], dh1)
    grads[f"{prefix}.up_w"] = grads.get(f"{prefix}.up_w", 0) + dup_w
    grads[f"{prefix}.up_b"] = grads.get(f"{prefix}.up_b", 0) + dup_b
    grads[f"{prefix}.down_w"] = grads.get(f"{prefix}.down_w", 0) + ddown_w
    grads[f"{prefix}.down_b"] = grads.get(f"{prefix}.down_b", 0) + ddown_b
    return dout + dz_lin  # residual path plus bottleneck path


def forward_batch(
    params: ModelParameters,
    batch: Batch,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    adapter: str | None = None,
    want_tape: bool = False,
):
    """Run the stack over a collated batch; returns (H, tape or None).

    `mode="train"` activates dropout (requires `rng` when the rate is > 0).
    `adapter` names the bottleneck set threaded into every block, or None for
    the plain stack.  Raises `EncoderError` naming the first layer whose
    activations go non-finite.
    """
    cfg = params.config
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    train = mode == "train"
    rate = cfg.dropout if train else 0.0
    if rate > 0.0 and rng is None:
        raise EncoderError("train-mode forward with dropout needs an rng")
    dt = cfg.np_dtype

    x = _embed_batch(params, batch)
    if not np.isfinite(x).all():
        raise EncoderError("non-finite activations in the embedding layer")

    layers: list[dict[str, Any]] = []
    scale = 1.0 / math.sqrt(cfg.d // cfg.heads)
    for li in range(cfg.layers):
        p = f"enc{li}"
        cache: dict[str, Any] = {"x_in": x}

        q = _split_heads(_linear(x, params[f"{p}.attn.wq"], params[f"{p}.attn.bq"]), cfg.heads)
        k = _split_heads(_linear(x, params[f"{p}.attn.wk"], params[f"{p}.attn.bk"]), cfg.heads)
        v = _split_heads(_linear(x, params[f"{p}.attn.wv"], params[f"{p}.attn.bv"]), cfg.heads)
        s = q @ k.swapaxes(-1, -2) * scale + batch.mask[:, None, :, :]
        pw = _softmax_last(s)
        cache.update(q=q, k=k, v=v, pw=pw)

        pw_used = pw
        if rate > 0.0:
            cache["attn_drop"] = _dropout_mask(rng, pw.shape, rate, np.dtype(dt))
            pw_used = pw * cache["attn_drop"]
        ctx = _merge_heads(pw_used @ v)
        cache["ctx"] = ctx
        attn_out = _linear(ctx, params[f"{p}.attn.wo"], params[f"{p}.attn.bo"])
        if rate > 0.0:
            cache["attn_out_drop"] = _dropout_mask(rng, attn_out.shape, rate, np.dtype(dt))
            attn_out = attn_out * cache["attn_out_drop"]
        if adapter is not None and cfg.adapter_dim > 0:
            attn_out, cache["adapter_attn"] = _adapter_forward(
                attn_out, params, f"{p}.adapter.{adapter}.attn"
            )
        x_mid, cache["ln1"] = _layer_norm_forward(
            x + attn_out, params[f"{p}.ln1.scale"], params[f"{p}.ln1.shift"]
        )
        cache["x_mid"] = x_mid

        h1 = _linear(x_mid, params[f"{p}.ffn.w1"], params[f"{p}.ffn.b1"])
        a = gelu(h1)
        ffn_out = _linear(a, params[f"{p}.ffn.w2"], params[f"{p}.ffn.b2"])
        cache.update(ffn_h1=h1, ffn_a=a)
        if rate > 0.0:
            cache["ffn_drop"] = _dropout_mask(rng, ffn_out.shape, rate, np.dtype(dt))
            ffn_out = ffn_out * cache["ffn_drop"]
        if adapter is not None and cfg.adapter_dim > 0:
            ffn_out, cache["adapter_ffn"] = _adapter_forward(
                ffn_out, params, f"{p}.adapter.{adapter}.ffn"
            )
        x, cache["ln2"] = _layer_norm_forward(
            x_mid + ffn_out, params[f"{p}.ln2.scale"], params[f"{p}.ln2.shift"]
        )
        if not np.isfinite(x).all():
            raise EncoderError(f"non-finite activations in encoder layer {li}")
        layers.append(cache)

    tape = None
    if want_tape:
        tape = {"batch": batch, "layers": layers, "adapter": adapter, "rate": rate}
    return x, tape


def backward_batch(params: ModelParameters, tape, d_h: np.ndarray) -> dict[str, np.ndarray]:
    """Exact gradients of a scalar loss given dLoss/dH.

    Returns one entry per *trainable* tensor that participated in the forward
    pass; frozen tensors get no entry.
    """
    if tape is None:
        raise EncoderError("backward called before forward (no tape recorded)")
    cfg = params.config
    batch: Batch = tape["batch"]
    adapter = tape["adapter"]
    rate = tape["rate"]
    scale = 1.0 / math.sqrt(cfg.d // cfg.heads)

    grads: dict[str, np.ndarray] = {}
    dx = d_h
    for li in reversed(range(cfg.layers)):
        p = f"enc{li}"
        cache = tape["layers"][li]

        dres2, dsc, dsh = _layer_norm_backward(dx, cache["ln2"], params[f"{p}.ln2.scale"])
        grads[f"{p}.ln2.scale"] = grads.get(f"{p}.ln2.scale", 0) + dsc
        grads[f"{p}.ln2.shift"] = grads.get(f"{p}.ln2.shift", 0) + dsh
        dx_mid = dres2.copy()
        dffn_out = dres2
        if adapter is not None and cfg.adapter_dim > 0:
            dffn_out = _adapter_backward(
                dffn_out, cache["adapter_ffn"], params, f"{p}.adapter.{adapter}.ffn", grads
            )
        if rate > 0.0:
            dffn_out = dffn_out * cache["ffn_drop"]
        da, dw2, db2 = _linear_backward(cache["ffn_a"], params[f"{p}.ffn.w2"], dffn_out)
        grads[f"{p}.ffn.w2"] = grads.get(f"{p}.ffn.w2", 0) + dw2
        grads[f"{p}.ffn.b2"] = grads.get(f"{p}.ffn.b2", 0) + db2
        dh1 = da * gelu_grad(cache["ffn_h1"])
        dxm, dw1, db1 = _linear_backward(cache["x_mid"], params[f"{p}.ffn.w1"], dh1)
        grads[f"{p}.ffn.w1"] = grads.get(f"{p}.ffn.w1", 0) + dw1
        grads[f"{p}.ffn.b1"] = grads.get(f"{p}.ffn.b1", 0) + db1
        dx_mid += dxm

        dres1, dsc, dsh = _layer_norm_backward(dx_mid, cache["ln1"], params[f"{p}.ln1.scale"])
        grads[f"{p}.ln1.scale"] = grads.get(f"{p}.ln1.scale", 0) + dsc
        grads[f"{p}.ln1.shift"] = grads.get(f"{p}.ln1.shift", 0) + dsh
        dx_in = dres1.copy()
        dattn = dres1
        if adapter is not None and cfg.adapter_dim > 0:
            dattn = _adapter_backward(
                dattn, cache["adapter_attn"], params, f"{p}.adapter.{adapter}.attn", grads
            )
        if rate > 0.0:
            dattn = dattn * cache["attn_out_drop"]
        dctx, dwo, dbo = _linear_backward(cache["ctx"], params[f"{p}.attn.wo"], dattn)
        grads[f"{p}.attn.wo"] = grads.get(f"{p}.attn.wo", 0) + dwo
        grads[f"{p}.attn.bo"] = grads.get(f"{p}.attn.bo", 0) + dbo

        dctx_h = _split_heads(dctx, cfg.heads)
        pw_used = cache["pw"] * cache["attn_drop"] if rate > 0.0 else cache["pw"]
        dpw_used = dctx_h @ cache["v"].swapaxes(-1, -2)
        dv = pw_used.swapaxes(-1, -2) @ dctx_h
        dpw = dpw_used * cache["attn_drop"] if rate > 0.0 else dpw_used
        ds = _softmax_backward(cache["pw"], dpw) * scale
        dq = ds @ cache["k"]
        dk = ds.swapaxes(-1, -2) @ cache["q"]

        x_in = cache["x_in"]
        for name, dproj in (("wq", dq), ("wk", dk), ("wv", dv)):
            dmerged = _merge_heads(dproj)
            dxp, dw, db = _linear_backward(x_in, params[f"{p}.attn.{name}"], dmerged)
            grads[f"{p}.attn.{name}"] = grads.get(f"{p}.attn.{name}", 0) + dw
            bias = "b" + name[1]
            grads[f"{p}.attn.{bias}"] = grads.get(f"{p}.attn.{bias}", 0) + db
            dx_in += dxp
        dx = dx_in

    # embedding tables: scatter-add the input gradient back to the rows used
    for name, (bi, pi, ri) in batch.row_refs.items():
        g = np.zeros_like(params[name])
        np.add.at(g, ri, dx[bi, pi])
        grads[name] = grads.get(name, 0) + g

    return {n: g for n, g in grads.items() if params.trainable.get(n, False)}


def forward(
    params: ModelParameters,
    inp: InputSequence,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    adapter: str | None = None,
) -> np.ndarray:
    """Single-sequence convenience wrapper; returns H of shape (l, d)."""
    batch = collate([inp], params)
    h, _ = forward_batch(params, batch, mode=mode, rng=rng, adapter=adapter)
    return h[0, : inp.length]


def masked_attention(
    x: np.ndarray,
    mask_matrix: np.ndarray,
    params: ModelParameters,
    layer: int = 0,
) -> np.ndarray:
    """One multi-head masked attention sublayer over a single (l, d) input."""
    cfg = params.config
    p = f"enc{layer}"
    scale = 1.0 / math.sqrt(cfg.d // cfg.heads)
    xb = x[None]
    q = _split_heads(_linear(xb, params[f"{p}.attn.wq"], params[f"{p}.attn.bq"]), cfg.heads)
    k = _split_heads(_linear(xb, params[f"{p}.attn.wk"], params[f"{p}.attn.bk"]), cfg.heads)
    v = _split_heads(_linear(xb, params[f"{p}.attn.wv"], params[f"{p}.attn.bv"]), cfg.heads)
    s = q @ k.swapaxes(-1, -2) * scale + mask_matrix[None, None]
    pw = _softmax_last(s)
    ctx = _merge_heads(pw @ v)
    return _linear(ctx, params[f"{p}.attn.wo"], params[f"{p}.attn.bo"])[0]


def attention_weights(
    x: np.ndarray,
    mask_matrix: np.ndarray,
    params: ModelParameters,
    layer: int = 0,
) -> np.ndarray:
    """Post-softmax attention weights (heads, l, l) for inspection/tests."""
    cfg = params.config
    p = f"enc{layer}"
    scale = 1.0 / math.sqrt(cfg.d // cfg.heads)
    xb = x[None]
    q = _split_heads(_linear(xb, params[f"{p}.attn.wq"], params[f"{p}.attn.bq"]), cfg.heads)
    k = _split_heads(_linear(xb, params[f"{p}.attn.wk"], params[f"{p}.attn.bk"]), cfg.heads)
    s = q @ k.swapaxes(-1, -2) * scale + mask_matrix[None, None]
    return _softmax_last(s)[0]
