"""Small neural-net building blocks over the autodiff core.

Parameters are registered under hierarchical names in a ParamStore by the
``add_*`` functions; the matching forward functions rebuild expression
graphs against those names. All sequence tensors are (batch, length, dim).
"""

from __future__ import annotations

import numpy as np

from . import diffcore as dc


def add_linear(store: dc.ParamStore, name: str, d_in: int, d_out: int,
               rng: np.random.Generator, zero: bool = False) -> None:
    if zero:
        w = np.zeros((d_in, d_out))
    else:
        w = rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(d_in, d_out))
    store.add(f"{name}/W", w)
    store.add(f"{name}/b", np.zeros(d_out))


def linear(store: dc.ParamStore, name: str, x: dc.Expr) -> dc.Expr:
    return dc.affine(x, dc.param(store, f"{name}/W"), dc.param(store, f"{name}/b"))


def add_mlp(store: dc.ParamStore, name: str, dims, rng) -> None:
    """dims = [d_in, hidden..., d_out]; GELU between layers."""
    for i in range(len(dims) - 1):
        add_linear(store, f"{name}/l{i}", dims[i], dims[i + 1], rng)


def mlp(store: dc.ParamStore, name: str, x: dc.Expr) -> dc.Expr:
    i = 0
    while f"{name}/l{i + 1}/W" in store:
        x = dc.gelu(linear(store, f"{name}/l{i}", x))
        i += 1
    return linear(store, f"{name}/l{i}", x)


def add_rms(store: dc.ParamStore, name: str, dim: int) -> None:
    store.add(f"{name}/gain", np.ones(dim))


def rms(store: dc.ParamStore, name: str, x: dc.Expr) -> dc.Expr:
    return dc.rms_norm(x, dc.param(store, f"{name}/gain"))


def add_table(store: dc.ParamStore, name: str, rows: int, dim: int,
              rng, scale: float = 0.02) -> None:
    store.add(name, scale * rng.normal(size=(rows, dim)))


def table_rows(store: dc.ParamStore, name: str, n: int) -> dc.Expr:
    return dc.param(store, name)[0:n, :]


def add_attention(store: dc.ParamStore, name: str, d_model: int, rng,
                  d_kv: int | None = None) -> None:
    d_kv = d_kv or d_model
    add_linear(store, f"{name}/q", d_model, d_model, rng)
    add_linear(store, f"{name}/k", d_kv, d_model, rng)
    add_linear(store, f"{name}/v", d_kv, d_model, rng)
    add_linear(store, f"{name}/o", d_model, d_model, rng)


def _split_heads(x: dc.Expr, heads: int) -> dc.Expr:
    b, l, d = x.shape
    x = dc.reshape(x, (b, l, heads, d // heads))
    return dc.transpose(x, (0, 2, 1, 3))


def _merge_heads(x: dc.Expr) -> dc.Expr:
    b, h, l, dk = x.shape
    return dc.reshape(dc.transpose(x, (0, 2, 1, 3)), (b, l, h * dk))


def attention(store: dc.ParamStore, name: str, x: dc.Expr, heads: int,
              mask: np.ndarray | None = None, kv: dc.Expr | None = None,
              proj=None) -> dc.Expr:
    """Multi-head attention; `mask` is an additive (L, L_kv) array of {0, -inf}.

    `proj(store, pname, tensor)` overrides the q/k/v/o projections (used for
    modality-routed adapters); it defaults to plain linear layers.
    """
    proj = proj or linear
    src = kv if kv is not None else x
    d_model = x.shape[-1]
    scale = 1.0 / np.sqrt(d_model // heads)
    q = _split_heads(dc.mul(proj(store, f"{name}/q", x), dc.const(scale)), heads)
    k = _split_heads(proj(store, f"{name}/k", src), heads)
    v = _split_heads(proj(store, f"{name}/v", src), heads)
    scores = q @ dc.transpose(k, (0, 1, 3, 2))
    if mask is not None:
        scores = dc.add(scores, dc.const(mask))
    out = _merge_heads(dc.softmax_rows(scores) @ v)
    return proj(store, f"{name}/o", out)


def add_block(store: dc.ParamStore, name: str, d_model: int, rng,
              mlp_ratio: int = 2) -> None:
    """Pre-norm transformer block: attention + MLP with residuals."""
    add_rms(store, f"{name}/n1", d_model)
    add_attention(store, f"{name}/attn", d_model, rng)
    add_rms(store, f"{name}/n2", d_model)
    add_mlp(store, f"{name}/mlp", [d_model, mlp_ratio * d_model, d_model], rng)


def block(store: dc.ParamStore, name: str, x: dc.Expr, heads: int,
          mask: np.ndarray | None = None, proj=None) -> dc.Expr:
    x = dc.add(x, attention(store, f"{name}/attn", rms(store, f"{name}/n1", x),
                            heads, mask=mask, proj=proj))
    return dc.add(x, mlp(store, f"{name}/mlp", rms(store, f"{name}/n2", x)))


def ensure_3d(x) -> tuple[dc.Expr, bool]:
    """Promote (L, D) input (array or Expr) to (1, L, D); returns (expr, was_2d)."""
    if not isinstance(x, dc.Expr):
        x = dc.const(x)
    if len(x.shape) == 2:
        return dc.reshape(x, (1,) + x.shape), True
    return x, False
