"""Tensor operations of the mask predictor and their adjoints.

Latent grids are ``(B, C, F, H, W)`` arrays. Token grids are ``(B, L, D)``
with ``L = F*H*W`` ordered frame-major, then row-major.
"""
from __future__ import annotations

import numpy as np

from ..core import ValidationError

GELU_K = np.sqrt(2.0 / np.pi)
BCE_EPS = 1e-7


def _check_grid(z: np.ndarray, name: str) -> None:
    if z.ndim != 5 or min(z.shape) < 1:
        raise ValidationError(f"{name} must be a non-empty (B, C, F, H, W) grid, got {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ValidationError(f"{name} has non-finite values")


def concat_latents(z: np.ndarray, z_noisy: np.ndarray) -> np.ndarray:
    """Channel concatenation: clean conditioning latent first, noisy latent second."""
    _check_grid(z, "z")
    _check_grid(z_noisy, "z_noisy")
    if z.shape[0] != z_noisy.shape[0] or z.shape[2:] != z_noisy.shape[2:]:
        raise ValidationError(f"latent dims differ: {z.shape} vs {z_noisy.shape}")
    return np.concatenate([z, z_noisy], axis=1)


def rf_interpolant(z_clean: np.ndarray, noise: np.ndarray, t):
    """Straight-line path ``z_t = (1 - t) z + t eps`` and its velocity ``eps - z``.

    ``t`` is a scalar or one value per batch element.
    """
    if z_clean.shape != noise.shape:
        raise ValidationError(f"shape mismatch {z_clean.shape} vs {noise.shape}")
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0) or np.any(t > 1):
        raise ValidationError("t must lie in [0, 1]")
    tb = t.reshape(t.shape + (1,) * (z_clean.ndim - t.ndim))
    return (1.0 - tb) * z_clean + tb * noise, noise - z_clean


def grid_to_tokens(z: np.ndarray) -> np.ndarray:
    b, c = z.shape[:2]
    return z.reshape(b, c, -1).transpose(0, 2, 1)


def tokens_to_grid(x: np.ndarray, f: int, h: int, w: int) -> np.ndarray:
    b, n, d = x.shape
    if n != f * h * w:
        raise ValidationError(f"{n} tokens do not factor as {f}x{h}x{w}")
    return x.transpose(0, 2, 1).reshape(b, d, f, h, w)


def reshape_tokens(m: np.ndarray, f: int, h: int, w: int) -> np.ndarray:
    """``(B, L, 1)`` logits to a ``(B, 1, F, H, W)`` grid; token ``l`` lands at ``(l // (H*W), (l // W) % H, l % W)``."""
    if m.ndim != 3 or m.shape[2] != 1:
        raise ValidationError(f"expected (B, L, 1) logits, got {m.shape}")
    return tokens_to_grid(m, f, h, w)


def flatten_grid(g: np.ndarray) -> np.ndarray:
    return grid_to_tokens(g)


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(GELU_K * (x + 0.044715 * x * x * x)))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    th = np.tanh(GELU_K * (x + 0.044715 * x * x * x))
    return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th**2) * GELU_K * (1.0 + 3 * 0.044715 * x * x)


# ----------------------------------------------------------------------------
# trilinear upsampling


def _axis_coords(n_src: int, n_dst: int):
    dst = np.arange(n_dst, dtype=np.float64)
    src = np.clip((dst + 0.5) * (n_src / n_dst) - 0.5, 0.0, n_src - 1.0)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_src - 1)
    return i0, i1, src - i0


def interp_matrix(n_src: int, n_dst: int) -> np.ndarray:
    """Dense ``(n_dst, n_src)`` linear-interpolation matrix for one axis (pixel-centre aligned)."""
    i0, i1, fr = _axis_coords(n_src, n_dst)
    a = np.zeros((n_dst, n_src))
    rows = np.arange(n_dst)
    np.add.at(a, (rows, i0), 1.0 - fr)
    np.add.at(a, (rows, i1), fr)
    return a


def _lerp_axis(x: np.ndarray, axis: int, n_dst: int) -> np.ndarray:
    n_src = x.shape[axis]
    if n_src == n_dst:
        return x
    i0, i1, fr = _axis_coords(n_src, n_dst)
    a = np.take(x, i0, axis=axis)
    b = np.take(x, i1, axis=axis)
    shape = [1] * x.ndim
    shape[axis] = n_dst
    return a + (b - a) * fr.reshape(shape)


def trilinear_upsample(grid: np.ndarray, target) -> np.ndarray:
    """Upsample the last three axes of ``(B, C, F, H, W)`` to ``target = (F', H', W')``.

    Source coordinate of output index ``d`` is ``(d + 0.5) * src/dst - 0.5``,
    clamped to the grid, so this matches ``align_corners=False``. Applied one
    axis at a time as ``a + (b - a) * frac``, which keeps constants exact.
    """
    target = tuple(int(x) for x in target)
    if grid.ndim != 5 or len(target) != 3:
        raise ValidationError("expected a (B, C, F, H, W) grid and a 3-tuple target")
    if any(t < s for t, s in zip(target, grid.shape[2:])):
        raise ValidationError(f"target {target} is smaller than source {grid.shape[2:]}")
    out = grid
    for axis, n in zip((2, 3, 4), target):
        out = _lerp_axis(out, axis, n)
    return out


def trilinear_upsample_adjoint(g_out: np.ndarray, src_dims) -> np.ndarray:
    """Transpose of ``trilinear_upsample``: maps an output-shaped gradient back to the source grid."""
    af = interp_matrix(src_dims[0], g_out.shape[2])
    ah = interp_matrix(src_dims[1], g_out.shape[3])
    aw = interp_matrix(src_dims[2], g_out.shape[4])
    return np.einsum("bcfhw,fi,hj,wk->bcijk", g_out, af, ah, aw, optimize=True)


# ----------------------------------------------------------------------------
# losses


def _same(a, b):
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch {a.shape} vs {b.shape}")


def loss_diff(v_pred: np.ndarray, v_star: np.ndarray) -> float:
    _same(v_pred, v_star)
    return float(np.mean((v_pred - v_star) ** 2))


def loss_mask(v_pred: np.ndarray, v_star: np.ndarray, m_star: np.ndarray) -> float:
    """Mean of the squared masked residual; ``m_star`` broadcasts against the velocity."""
    _same(v_pred, v_star)
    try:
        r = (v_pred - v_star) * m_star
    except ValueError as e:
        raise ValidationError(f"mask {m_star.shape} does not broadcast to {v_pred.shape}") from e
    if r.shape != v_pred.shape:
        raise ValidationError(f"mask {m_star.shape} would enlarge the velocity shape")
    return float(np.mean(r**2))


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def loss_pred(logits: np.ndarray, m_star: np.ndarray) -> float:
    """Binary cross-entropy of ``sigmoid(logits)`` (clamped to ``[1e-7, 1 - 1e-7]``) against a binary mask."""
    _same(logits, m_star)
    if not np.all((m_star == 0) | (m_star == 1)):
        raise ValidationError("BCE target must be binary")
    p = np.clip(sigmoid(logits), BCE_EPS, 1.0 - BCE_EPS)
    return float(np.mean(-(m_star * np.log(p) + (1.0 - m_star) * np.log(1.0 - p))))


def loss_pred_grad(logits: np.ndarray, m_star: np.ndarray) -> np.ndarray:
    """Gradient of ``loss_pred`` w.r.t. the logits; zero where the clamp is active."""
    s = sigmoid(logits)
    live = (s > BCE_EPS) & (s < 1.0 - BCE_EPS)
    return np.where(live, s - m_star, 0.0) / logits.size
