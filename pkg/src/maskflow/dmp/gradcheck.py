"""Central-difference verification of the analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import Batch, DMPParams, LossWeights, ToyDenoiserParams, backward, forward


def rel_error(a, n):
    a, n = np.asarray(a, dtype=np.float64), np.asarray(n, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def numeric_grad(f, x: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. every entry of ``x`` (perturbed in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f()
        flat[i] = orig - step
        lo = f()
        flat[i] = orig
        gf[i] = (hi - lo) / (2.0 * step)
    return g


@dataclass
class GradCheckReport:
    per_group: dict = field(default_factory=dict)

    @property
    def max_rel_error(self) -> float:
        return max(self.per_group.values()) if self.per_group else 0.0


def grad_check(batch: Batch, den: ToyDenoiserParams, dmp: DMPParams, w: LossWeights = LossWeights(), fd_step: float = 1e-4) -> GradCheckReport:
    _, d_den, d_dmp = backward(batch, den, dmp, w)
    rep = GradCheckReport()

    def loss():
        return forward(batch, den, dmp, w).loss.total

    for prefix, params, grads in (("denoiser", den, d_den), ("dmp", dmp, d_dmp)):
        for (name, arr), (_, g) in zip(params.named(), grads.named()):
            num = numeric_grad(loss, arr, fd_step)
            rep.per_group[f"{prefix}.{name}"] = float(rel_error(g, num).max())
    return rep
