"""Cross-modal aligned motion VAE.

Two encoders share a front-end trunk (input projection, positional
encodings, skip-connected encoder stack, temporal pooling): the motion
encoder adds a Gaussian head and is the only one used at inference; the
vision-fused encoder concatenates pooled visual features sampled at 2D
joint locations, runs an independent stack, and acts as the teacher for
dual-posterior alignment. A shared decoder maps latents back to the
269-dim motion space.

The training objective is

    total = recon + lambda_kl * (kl_phi + kl_psi) + w(step) * align

where align is the reverse KL from the motion posterior to the *detached*
fused posterior and w(step) warms up linearly. Batches without paired
images drop the fused branch entirely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from . import motion_repr as mr
from . import nn
from .errors import MlatError, NumericalFailure

PREFIX = "vae"


@dataclass
class VaeConfig:
    latent_dim: int = 16
    width: int = 64
    enc_layers: int = 4
    fused_layers: int = 2
    dec_layers: int = 4
    refine_layers: int = 2
    heads: int = 4
    pool_stride: int = 8
    lambda_kl: float = 1e-4
    lambda_align: float = 1e-3
    align_warmup: int = 500
    vision_channels: int = 8    # feature-map channels entering grid sampling
    vision_dim: int = 8         # d_v after the learned projection
    max_frames: int = 128
    logvar_min: float = -30.0
    logvar_max: float = 20.0

    def latent_tokens(self, frames: int) -> int:
        return max(1, math.ceil(frames / self.pool_stride))


@dataclass
class GaussianPosterior:
    """Per-latent-token diagonal Gaussian; mean/log_var are (B, T_z, d)."""
    mean: object
    log_var: object

    def numpy(self, store: dc.ParamStore):
        m = dc.evaluate(self.mean, store) if isinstance(self.mean, dc.Expr) else self.mean
        lv = dc.evaluate(self.log_var, store) if isinstance(self.log_var, dc.Expr) else self.log_var
        return np.asarray(m), np.asarray(lv)


# ---------------------------------------------------------------------------
# parameters


def init_vae_params(store: dc.ParamStore, cfg: VaeConfig,
                    rng: np.random.Generator) -> None:
    p = PREFIX
    max_tokens = cfg.latent_tokens(cfg.max_frames)
    # shared front-end trunk
    nn.add_linear(store, f"{p}/front/in", mr.RAW_DIM, cfg.width, rng)
    nn.add_table(store, f"{p}/front/pos", cfg.max_frames, cfg.width, rng)
    _add_skip_stack(store, f"{p}/front", cfg.enc_layers, cfg.width, rng)
    # motion-encoder head
    nn.add_linear(store, f"{p}/enc_head/mu", cfg.width, cfg.latent_dim, rng)
    nn.add_linear(store, f"{p}/enc_head/lv", cfg.width, cfg.latent_dim, rng)
    # vision-fused encoder (training-time teacher)
    nn.add_linear(store, f"{p}/fused/vis", cfg.vision_channels, cfg.vision_dim, rng)
    nn.add_linear(store, f"{p}/fused/mix", cfg.width + cfg.vision_dim, cfg.width, rng)
    _add_skip_stack(store, f"{p}/fused", cfg.fused_layers, cfg.width, rng)
    nn.add_linear(store, f"{p}/fused_head/mu", cfg.width, cfg.latent_dim, rng)
    nn.add_linear(store, f"{p}/fused_head/lv", cfg.width, cfg.latent_dim, rng)
    # decoder
    nn.add_linear(store, f"{p}/dec/in", cfg.latent_dim, cfg.width, rng)
    nn.add_table(store, f"{p}/dec/pos_lat", max_tokens, cfg.width, rng)
    _add_skip_stack(store, f"{p}/dec", cfg.dec_layers, cfg.width, rng)
    nn.add_table(store, f"{p}/dec/pos_frame", cfg.max_frames, cfg.width, rng)
    for i in range(cfg.refine_layers):
        nn.add_block(store, f"{p}/dec/refine{i}", cfg.width, rng)
    nn.add_linear(store, f"{p}/dec/out", cfg.width, mr.RAW_DIM, rng)


def _add_skip_stack(store, prefix, n_layers, width, rng):
    half = n_layers // 2
    for i in range(n_layers):
        nn.add_block(store, f"{prefix}/blk{i}", width, rng)
        if i >= half and n_layers - 1 - i < half:
            nn.add_linear(store, f"{prefix}/skip{i}", 2 * width, width, rng)


def _skip_stack(store, prefix, x, n_layers, heads):
    """U-style encoder: layer i feeds a concat+linear skip into layer N-1-i."""
    half = n_layers // 2
    saved = []
    for i in range(n_layers):
        if i >= half and saved:
            x = nn.linear(store, f"{prefix}/skip{i}",
                          dc.concat([x, saved.pop()], axis=-1))
        x = nn.block(store, f"{prefix}/blk{i}", x, heads)
        if i < half:
            saved.append(x)
    return x


# ---------------------------------------------------------------------------
# pooling matrices


def pooling_matrix(frames: int, tokens: int) -> np.ndarray:
    """(tokens, frames) strided mean-pooling operator."""
    stride = math.ceil(frames / tokens)
    P = np.zeros((tokens, frames))
    for t in range(tokens):
        lo = t * stride
        hi = min(frames, lo + stride)
        P[t, lo:hi] = 1.0 / (hi - lo)
    return P


def unpooling_matrix(frames: int, tokens: int) -> np.ndarray:
    """(frames, tokens) nearest-repeat followed by a 3-tap smoothing average."""
    stride = math.ceil(frames / tokens)
    R = np.zeros((frames, tokens))
    for f in range(frames):
        R[f, min(f // stride, tokens - 1)] = 1.0
    S = np.zeros((frames, frames))
    for f in range(frames):
        lo, hi = max(0, f - 1), min(frames, f + 2)
        S[f, lo:hi] = 1.0 / (hi - lo)
    return S @ R


# ---------------------------------------------------------------------------
# encoders / decoder


def _frontend(store, cfg, m: dc.Expr) -> dc.Expr:
    T = m.shape[1]
    if m.shape[2] != mr.RAW_DIM:
        raise MlatError(f"expected {mr.RAW_DIM}-dim features, got {m.shape}")
    x = nn.linear(store, f"{PREFIX}/front/in", m)
    x = dc.add(x, nn.table_rows(store, f"{PREFIX}/front/pos", T))
    x = _skip_stack(store, f"{PREFIX}/front", x, cfg.enc_layers, cfg.heads)
    P = pooling_matrix(T, cfg.latent_tokens(T))
    return dc.const(P) @ x


def _gaussian_head(store, cfg, trunk: dc.Expr, head: str) -> GaussianPosterior:
    mean = nn.linear(store, f"{PREFIX}/{head}/mu", trunk)
    log_var = dc.clip(nn.linear(store, f"{PREFIX}/{head}/lv", trunk),
                      cfg.logvar_min, cfg.logvar_max)
    return GaussianPosterior(mean=mean, log_var=log_var)


def encode_motion(m, store: dc.ParamStore, cfg: VaeConfig) -> GaussianPosterior:
    """Motion-only posterior q_phi; deterministic forward, no sampling inside."""
    m, _ = nn.ensure_3d(m)
    return _gaussian_head(store, cfg, _frontend(store, cfg, m), "enc_head")


def grid_sample_at_joints(fm: np.ndarray, joints2d: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of a (C, H, W) map at (J, 2) pixel coords -> (J, C).

    Out-of-bounds coordinates clamp to the border.
    """
    fm = np.asarray(fm, dtype=np.float64)
    C, H, W = fm.shape
    xy = np.asarray(joints2d, dtype=np.float64)
    x = np.clip(xy[:, 0], 0.0, W - 1.0)
    y = np.clip(xy[:, 1], 0.0, H - 1.0)
    x0 = np.floor(x).astype(int)
    y0 = np.floor(y).astype(int)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    wx = x - x0
    wy = y - y0
    v00 = fm[:, y0, x0]
    v01 = fm[:, y0, x1]
    v10 = fm[:, y1, x0]
    v11 = fm[:, y1, x1]
    out = ((1 - wy) * ((1 - wx) * v00 + wx * v01)
           + wy * ((1 - wx) * v10 + wx * v11))
    return out.T


def pooled_vision_feature(fm: np.ndarray, joints2d: np.ndarray) -> np.ndarray:
    """Grid-sample at the joints, then mean-pool the joint dimension -> (C,)."""
    return grid_sample_at_joints(fm, joints2d).mean(axis=0)


def encode_fused(m, fm, joints2d, store: dc.ParamStore,
                 cfg: VaeConfig) -> GaussianPosterior:
    """Vision-fused posterior q_psi for one sample (or a batch).

    `fm`/`joints2d` may be single (C,H,W)/(22,2) arrays or lists of them for
    a batched `m`. The pooled reference-frame feature is projected to d_v and
    broadcast across all latent tokens.
    """
    m, _ = nn.ensure_3d(m)
    if isinstance(fm, np.ndarray) and fm.ndim == 3:
        pooled = pooled_vision_feature(fm, joints2d)[None, :]
    else:
        pooled = np.stack([pooled_vision_feature(f, j) for f, j in zip(fm, joints2d)])
    return encode_fused_pooled(m, pooled, store, cfg)


def encode_fused_pooled(m, pooled_vision: np.ndarray, store: dc.ParamStore,
                        cfg: VaeConfig) -> GaussianPosterior:
    """Fused posterior from precomputed (B, C) pooled vision features."""
    m, _ = nn.ensure_3d(m)
    trunk = _frontend(store, cfg, m)                        # (B, T_z, w)
    T_z = trunk.shape[1]
    vis = dc.const(np.asarray(pooled_vision, dtype=np.float64)[:, None, :])
    vis = nn.linear(store, f"{PREFIX}/fused/vis", vis)      # (B, 1, d_v)
    vis = dc.broadcast_to(vis, (trunk.shape[0], T_z, cfg.vision_dim))
    x = nn.linear(store, f"{PREFIX}/fused/mix", dc.concat([trunk, vis], axis=-1))
    x = _skip_stack(store, f"{PREFIX}/fused", x, cfg.fused_layers, cfg.heads)
    return _gaussian_head(store, cfg, x, "fused_head")


def sample_posterior(post: GaussianPosterior, eps) -> dc.Expr:
    """Reparameterized draw z = mu + exp(0.5 log_var) * eps."""
    eps = eps if isinstance(eps, dc.Expr) else dc.const(eps)
    if eps.shape != post.mean.shape:
        raise MlatError(f"eps shape {eps.shape} != posterior shape {post.mean.shape}")
    std = dc.exp(dc.mul(post.log_var, dc.const(0.5)))
    return dc.add(post.mean, dc.mul(std, eps))


def decode_motion(z, store: dc.ParamStore, cfg: VaeConfig, frames: int) -> dc.Expr:
    """Latent tokens (B, T_z, d) back to (B, T, 269) motion features."""
    z, _ = nn.ensure_3d(z)
    T_z = z.shape[1]
    x = nn.linear(store, f"{PREFIX}/dec/in", z)
    x = dc.add(x, nn.table_rows(store, f"{PREFIX}/dec/pos_lat", T_z))
    x = _skip_stack(store, f"{PREFIX}/dec", x, cfg.dec_layers, cfg.heads)
    x = dc.const(unpooling_matrix(frames, T_z)) @ x
    x = dc.add(x, nn.table_rows(store, f"{PREFIX}/dec/pos_frame", frames))
    for i in range(cfg.refine_layers):
        x = nn.block(store, f"{PREFIX}/dec/refine{i}", x, cfg.heads)
    return nn.linear(store, f"{PREFIX}/dec/out", x)


# ---------------------------------------------------------------------------
# losses


def kl_to_standard_normal(post: GaussianPosterior) -> dc.Expr:
    """0.5 sum_d (mu^2 + sigma^2 - log sigma^2 - 1), mean over tokens/batch."""
    mu, lv = post.mean, post.log_var
    per = dc.add(dc.add(dc.mul(mu, mu), dc.exp(lv)),
                 dc.add(dc.neg(lv), dc.const(-1.0)))
    return dc.mul(dc.reduce_mean(dc.reduce_sum(per, axis=-1)), dc.const(0.5))


def kl_between(student: GaussianPosterior, teacher: GaussianPosterior) -> dc.Expr:
    """Reverse KL D(q_student || q_teacher); the teacher side is detached."""
    if student.mean.shape != teacher.mean.shape:
        raise MlatError(f"posterior shapes differ: {student.mean.shape} "
                        f"vs {teacher.mean.shape}")
    mu_s, lv_s = student.mean, student.log_var
    mu_t = dc.detach(teacher.mean)
    lv_t = dc.detach(teacher.log_var)
    diff = dc.add(mu_s, dc.neg(mu_t))
    ratio = dc.mul(dc.add(dc.exp(lv_s), dc.mul(diff, diff)), dc.exp(dc.neg(lv_t)))
    per = dc.add(dc.add(lv_t, dc.neg(lv_s)), dc.add(ratio, dc.const(-1.0)))
    return dc.mul(dc.reduce_mean(dc.reduce_sum(per, axis=-1)), dc.const(0.5))


def alignment_weight(step: int, cfg: VaeConfig) -> float:
    """Linear warm-up of the alignment coefficient."""
    if cfg.align_warmup <= 0:
        return cfg.lambda_align
    return cfg.lambda_align * min(1.0, step / cfg.align_warmup)


def vae_loss(batch: np.ndarray, store: dc.ParamStore, cfg: VaeConfig, step: int,
             eps: np.ndarray, pooled_vision: np.ndarray | None = None) -> dict:
    """Loss breakdown for one (standardized) batch (B, T, 269).

    With `pooled_vision` present the batch counts as image-paired: the fused
    posterior is sampled for decoding and the alignment term is active.
    Without it, the fused branch is dropped (`kl_psi`/`align` are None).
    """
    batch = np.asarray(batch, dtype=np.float64)
    m = dc.const(batch)
    post_phi = encode_motion(m, store, cfg)
    paired = pooled_vision is not None
    if paired:
        post_psi = encode_fused_pooled(m, pooled_vision, store, cfg)
        z = sample_posterior(post_psi, eps)
    else:
        post_psi = None
        z = sample_posterior(post_phi, eps)
    recon = dc.smooth_l1(decode_motion(z, store, cfg, batch.shape[1]), m)
    kl_phi = kl_to_standard_normal(post_phi)
    out = {"recon": recon, "kl_phi": kl_phi, "kl_psi": None, "align": None}
    total = dc.add(recon, dc.mul(dc.const(cfg.lambda_kl), kl_phi))
    if paired:
        kl_psi = kl_to_standard_normal(post_psi)
        align = kl_between(post_phi, post_psi)
        total = dc.add(total, dc.mul(dc.const(cfg.lambda_kl), kl_psi))
        total = dc.add(total, dc.mul(dc.const(alignment_weight(step, cfg)), align))
        out["kl_psi"] = kl_psi
        out["align"] = align
    out["total"] = total
    return out


LOSS_COLUMNS = ("step", "recon", "kl_phi", "kl_psi", "align", "total",
                "align_weight")


# ---------------------------------------------------------------------------
# training


@dataclass
class VaeTrainConfig:
    steps: int = 2000
    lr: float = 2e-3
    warmup: int = 100
    batch_size: int = 16
    paired_fraction: float = 0.5
    holdout_fraction: float = 0.1
    cam_scale: float = 40.0
    cam_translation: tuple = (32.0, 32.0)
    fm_size: int = 64
    fm_sigma: float = 3.0
    log: list = field(default_factory=list, repr=False)


def reference_vision_features(features: np.ndarray, cfg: VaeConfig,
                              tcfg: VaeTrainConfig,
                              skeleton: mr.SkeletonDef) -> np.ndarray:
    """Pooled synthetic vision feature for a sample's reference (first) frame."""
    joints = mr.recover_joints(np.asarray(features), skeleton)
    j2d = mr.project_weak_perspective(joints[0], tcfg.cam_scale,
                                      tcfg.cam_translation)
    from .synth_data import render_feature_map
    fm = render_feature_map(j2d, cfg.vision_channels, tcfg.fm_size, tcfg.fm_size,
                            tcfg.fm_sigma)
    return pooled_vision_feature(fm, j2d)


def train_vae(samples, cfg: VaeConfig, tcfg: VaeTrainConfig, seed: int,
              store: dc.ParamStore | None = None):
    """Train on a corpus of CorpusSample records; returns (store, stats, holdout).

    Per-step rows (LOSS_COLUMNS order) accumulate in tcfg.log. Mixed batches
    are split into a paired and an unpaired sub-batch, each contributing its
    per-sample average, weighted by sample count.
    """
    rng = np.random.default_rng(seed)
    skeleton = mr.default_skeleton()
    feats = np.stack([s.features for s in samples])
    stats = mr.ChannelStats.from_corpus(feats)
    order = rng.permutation(len(samples))
    n_hold = max(1, int(len(samples) * tcfg.holdout_fraction))
    hold_idx, train_idx = order[:n_hold], order[n_hold:]

    if store is None:
        store = dc.ParamStore()
        init_vae_params(store, cfg, rng)
    if "stats/mean" in store:
        stats = mr.ChannelStats(mean=store.get("stats/mean"),
                                std=store.get("stats/std"))
    else:
        store.add("stats/mean", stats.mean)
        store.add("stats/std", stats.std)
    store.freeze("stats/")

    norm = np.stack([stats.apply(f) for f in feats])
    vision = np.stack([
        reference_vision_features(feats[i], cfg, tcfg, skeleton)
        for i in range(len(samples))])

    T = norm.shape[1]
    T_z = cfg.latent_tokens(T)
    start = store.step_count
    for it in range(tcfg.steps):
        step = start + it
        idx = rng.choice(train_idx, size=min(tcfg.batch_size, len(train_idx)),
                         replace=False)
        n_paired = int(round(len(idx) * tcfg.paired_fraction))
        losses = []
        parts = {"recon": [], "kl_phi": [], "kl_psi": [], "align": []}
        for sub, pv in ((idx[:n_paired], True), (idx[n_paired:], False)):
            if len(sub) == 0:
                continue
            eps = rng.standard_normal((len(sub), T_z, cfg.latent_dim))
            breakdown = vae_loss(norm[sub], store, cfg, step, eps,
                                 pooled_vision=vision[sub] if pv else None)
            losses.append((breakdown["total"], len(sub)))
            for k in parts:
                if breakdown[k] is not None:
                    parts[k].append((breakdown[k], len(sub)))
        total = _weighted_sum(losses)
        if not np.isfinite(float(dc.evaluate(total, store))):
            raise NumericalFailure(f"non-finite VAE loss at step {step}")
        row = _log_row(step, parts, total, store, cfg)
        grads = dc.gradient(total, store, warn_missing=False)
        lr = dc.warmup_lr(tcfg.lr, step + 1, tcfg.warmup)
        dc.adamw_step(store, grads, lr)
        tcfg.log.append(row)
    holdout = [samples[i] for i in hold_idx]
    return store, stats, holdout


def _weighted_sum(terms):
    total_n = sum(n for _, n in terms)
    out = None
    for expr, n in terms:
        scaled = dc.mul(expr, dc.const(n / total_n))
        out = scaled if out is None else dc.add(out, scaled)
    return out


def _log_row(step, parts, total, store, cfg):
    def agg(entries):
        if not entries:
            return None
        n_all = sum(n for _, n in entries)
        return sum(float(dc.evaluate(e, store)) * n / n_all for e, n in entries)

    return {
        "step": step,
        "recon": agg(parts["recon"]),
        "kl_phi": agg(parts["kl_phi"]),
        "kl_psi": agg(parts["kl_psi"]),
        "align": agg(parts["align"]),
        "total": float(dc.evaluate(total, store)),
        "align_weight": alignment_weight(step, cfg),
    }


def reconstruction_mpjpe(store: dc.ParamStore, cfg: VaeConfig, samples,
                         stats: mr.ChannelStats,
                         skeleton: mr.SkeletonDef | None = None) -> float:
    """Mean MPJPE (m) of mean-latent reconstructions over a sample list."""
    skeleton = skeleton or mr.default_skeleton()
    errs = []
    for s in samples:
        feats = np.asarray(s.features)
        z = encode_motion(stats.apply(feats), store, cfg).mean
        dec = dc.evaluate(decode_motion(z, store, cfg, feats.shape[0]), store)[0]
        rec = mr.recover_joints(stats.invert(dec), skeleton)
        gt = mr.recover_joints(feats, skeleton)
        errs.append(np.linalg.norm(rec - gt, axis=-1).mean())
    return float(np.mean(errs))
