"""Toy denoiser plus mask predictor, the three-term objective and its exact gradient."""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from ..core import ValidationError
from .ops import (
    concat_latents,
    gelu,
    gelu_grad,
    grid_to_tokens,
    loss_diff,
    loss_mask,
    loss_pred,
    loss_pred_grad,
    reshape_tokens,
    rf_interpolant,
    tokens_to_grid,
    trilinear_upsample,
    trilinear_upsample_adjoint,
)


class _Params:
    """Named float64 arrays, iterable as ``(name, array)`` pairs."""

    def named(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    def zeros_like(self):
        return type(self)(**{k: np.zeros_like(v) for k, v in self.named()})

    def copy(self):
        return type(self)(**{k: v.copy() for k, v in self.named()})

    def check_finite(self):
        for k, v in self.named():
            if not np.all(np.isfinite(v)):
                raise ValidationError(f"parameter {k} is not finite")


@dataclass
class DMPParams(_Params):
    """Two-layer GELU MLP mapping a ``D``-dim token to one logit."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @classmethod
    def init(cls, d: int, hidden: int, rng: np.random.Generator) -> "DMPParams":
        return cls(
            W1=rng.normal(0.0, 1.0 / np.sqrt(d), (d, hidden)),
            b1=np.zeros(hidden),
            W2=rng.normal(0.0, 1.0 / np.sqrt(hidden), (hidden, 1)),
            b2=np.zeros(1),
        )

    @property
    def dim(self) -> int:
        return self.W1.shape[0]


@dataclass
class ToyDenoiserParams(_Params):
    """Per-voxel velocity MLP: ``[Z_cat voxel, instruction embedding, t] -> hidden -> C``.

    The hidden activations are the token features read by the mask predictor.
    """

    embed: np.ndarray
    W_in: np.ndarray
    b_in: np.ndarray
    W_out: np.ndarray
    b_out: np.ndarray

    @classmethod
    def init(cls, channels: int, vocab: int, embed_dim: int, hidden: int, rng: np.random.Generator):
        n_in = 2 * channels + embed_dim + 1
        return cls(
            embed=rng.normal(0.0, 1.0, (vocab, embed_dim)),
            W_in=rng.normal(0.0, 1.0 / np.sqrt(n_in), (n_in, hidden)),
            b_in=np.zeros(hidden),
            W_out=rng.normal(0.0, 1.0 / np.sqrt(hidden), (hidden, channels)),
            b_out=np.zeros(channels),
        )

    @property
    def channels(self) -> int:
        return self.W_out.shape[1]


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 0.5

    def __post_init__(self):
        for v in (self.lambda1, self.lambda2):
            if not (np.isfinite(v) and v >= 0):
                raise ValidationError("loss weights must be finite and >= 0")


@dataclass(frozen=True)
class LossBreakdown:
    l_diff: float
    l_mask: float
    l_pred: float
    total: float

    def as_row(self) -> tuple:
        return (self.l_diff, self.l_mask, self.l_pred, self.total)


def total_loss(l_diff: float, l_mask: float, l_pred: float, w: LossWeights = LossWeights()) -> LossBreakdown:
    vals = (l_diff, l_mask, l_pred)
    if not all(np.isfinite(v) for v in vals):
        raise ValidationError("loss terms must be finite")
    return LossBreakdown(l_diff, l_mask, l_pred, l_diff + w.lambda1 * l_mask + w.lambda2 * l_pred)


def mlp_forward(x: np.ndarray, p: DMPParams) -> np.ndarray:
    """Per-token logits ``(B, L, 1)`` from token features ``(B, L, D)``."""
    if x.shape[-1] != p.dim:
        raise ValidationError(f"token dim {x.shape[-1]} does not match predictor dim {p.dim}")
    return gelu(x @ p.W1 + p.b1) @ p.W2 + p.b2


# ----------------------------------------------------------------------------
# full forward / backward


@dataclass
class Batch:
    """One training batch. Latents are ``(B, C, Fp, Hp, Wp)``; ``mask`` is ``(B, F, H, W)`` binary."""

    source: np.ndarray
    target: np.ndarray
    noise: np.ndarray
    t: np.ndarray
    instruction: np.ndarray
    mask: np.ndarray
    mask_latent: np.ndarray


@dataclass
class Forward:
    loss: LossBreakdown
    v_pred: np.ndarray
    v_star: np.ndarray
    logits: np.ndarray
    cache: dict


def forward(batch: Batch, den: ToyDenoiserParams, dmp: DMPParams, w: LossWeights = LossWeights()) -> Forward:
    b, c, fp, hp, wp = batch.source.shape
    z_t, v_star = rf_interpolant(batch.target, batch.noise, batch.t)
    z_cat = concat_latents(batch.source, z_t)
    tok = grid_to_tokens(z_cat)
    n_tok = tok.shape[1]
    emb = np.broadcast_to(den.embed[batch.instruction][:, None, :], (b, n_tok, den.embed.shape[1]))
    tt = np.broadcast_to(np.asarray(batch.t, dtype=np.float64)[:, None, None], (b, n_tok, 1))
    inp = np.concatenate([tok, emb, tt], axis=-1)
    pre = inp @ den.W_in + den.b_in
    x = gelu(pre)
    v_pred = tokens_to_grid(x @ den.W_out + den.b_out, fp, hp, wp)

    a = x @ dmp.W1 + dmp.b1
    g = gelu(a)
    m_tok = g @ dmp.W2 + dmp.b2
    grid = reshape_tokens(m_tok, fp, hp, wp)
    logits = trilinear_upsample(grid, batch.mask.shape[1:])

    m_lat = batch.mask_latent[:, None]
    breakdown = total_loss(
        loss_diff(v_pred, v_star),
        loss_mask(v_pred, v_star, m_lat),
        loss_pred(logits, batch.mask[:, None].astype(np.float64)),
        w,
    )
    cache = dict(inp=inp, pre=pre, x=x, a=a, g=g, grid_dims=(fp, hp, wp), m_lat=m_lat)
    return Forward(breakdown, v_pred, v_star, logits, cache)


def backward(batch: Batch, den: ToyDenoiserParams, dmp: DMPParams, w: LossWeights = LossWeights(), fwd: Forward = None):
    """Exact gradients of the combined objective. Returns ``(loss, d_denoiser, d_dmp)``."""
    if fwd is None:
        fwd = forward(batch, den, dmp, w)
    cch = fwd.cache
    fp, hp, wp = cch["grid_dims"]
    c = den.channels

    r = fwd.v_pred - fwd.v_star
    d_v = 2.0 * r * (1.0 + w.lambda1 * cch["m_lat"] ** 2) / r.size
    d_vtok = grid_to_tokens(d_v)

    d_logits = w.lambda2 * loss_pred_grad(fwd.logits, batch.mask[:, None].astype(np.float64))
    d_grid = trilinear_upsample_adjoint(d_logits, (fp, hp, wp))
    d_mtok = grid_to_tokens(d_grid)

    x, g, a = cch["x"], cch["g"], cch["a"]
    d_a = (d_mtok @ dmp.W2.T) * gelu_grad(a)
    dd = DMPParams(
        W1=np.einsum("bld,blh->dh", x, d_a),
        b1=d_a.sum(axis=(0, 1)),
        W2=np.einsum("blh,blo->ho", g, d_mtok),
        b2=d_mtok.sum(axis=(0, 1)),
    )

    d_x = d_vtok @ den.W_out.T + d_a @ dmp.W1.T
    d_pre = d_x * gelu_grad(cch["pre"])
    d_inp = d_pre @ den.W_in.T
    d_embed = np.zeros_like(den.embed)
    e_dim = den.embed.shape[1]
    np.add.at(d_embed, batch.instruction, d_inp[:, :, 2 * c : 2 * c + e_dim].sum(axis=1))
    dn = ToyDenoiserParams(
        embed=d_embed,
        W_in=np.einsum("bli,blh->ih", cch["inp"], d_pre),
        b_in=d_pre.sum(axis=(0, 1)),
        W_out=np.einsum("blh,blc->hc", x, d_vtok),
        b_out=d_vtok.sum(axis=(0, 1)),
    )
    return fwd.loss, dn, dd


def predict_mask(batch: Batch, den: ToyDenoiserParams, dmp: DMPParams) -> np.ndarray:
    """Binary ``(B, F, H, W)`` mask: ``sigmoid(logit) >= 0.5``, i.e. ``logit >= 0``."""
    return forward(batch, den, dmp).logits[:, 0] >= 0.0
