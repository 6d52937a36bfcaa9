"""AdaDelta with an adaptive gradient-norm clipping threshold."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .nn import ParamStore


@dataclass
class ClipState:
    """Running log-norm statistics that set the rescaling threshold."""

    Elog: float = 0.0
    Elog2: float = 0.0
    nsteps: int = 0
    rho_clip: float = 0.99
    kappa: float = 1.0
    grad_scale: float = 1.0

    def log_threshold(self) -> float:
        var = max(0.0, self.Elog2 - self.Elog * self.Elog)
        return self.Elog + self.kappa * math.sqrt(var)

    def threshold(self) -> float:
        return math.exp(self.log_threshold())


# Norms this close to the threshold (in log units) count as equal to it, so
# rounding alone never triggers a rescale when the norm sits on the threshold.
TIE_TOL = 1e-12


def adaptive_clip(grads: dict[str, np.ndarray], clip: ClipState):
    """Scale the gradient and rescale its norm when it exceeds the threshold.

    The running statistics absorb the current norm *before* the threshold
    test.  Returns ``(rescaled_grads, info)`` with the pre-clip norm, the
    threshold and whether rescaling happened.  A zero gradient is returned
    unchanged without touching the statistics.
    """
    g = {n: v * clip.grad_scale for n, v in grads.items()}
    ng = math.sqrt(sum(float(np.dot(v.ravel(), v.ravel())) for v in g.values()))
    if ng == 0.0:
        return g, {"norm": 0.0, "threshold": None, "clipped": False}
    lg = math.log(ng)
    mean_decay = min(clip.rho_clip, clip.nsteps / (clip.nsteps + 1))
    clip.Elog = mean_decay * clip.Elog + (1.0 - mean_decay) * lg
    clip.Elog2 = clip.rho_clip * clip.Elog2 + (1.0 - clip.rho_clip) * lg * lg
    clip.nsteps += 1
    log_thr = clip.log_threshold()
    thr = math.exp(log_thr)
    clipped = lg > log_thr + TIE_TOL
    if clipped:
        factor = math.exp(clip.Elog) / ng
        g = {n: v * factor for n, v in g.items()}
    return g, {"norm": ng, "threshold": thr, "clipped": bool(clipped)}


@dataclass
class AdaDelta:
    rho: float = 0.95
    eps: float = 1e-6
    Eg2: dict = field(default_factory=dict)
    Edx2: dict = field(default_factory=dict)

    def step(self, params: ParamStore, grads: dict[str, np.ndarray]) -> None:
        """Update trainable parameters in place; frozen ones carry no state."""
        rho, eps = self.rho, self.eps
        for name in params.trainable_names():
            g = grads[name]
            if name not in self.Eg2:
                self.Eg2[name] = np.zeros_like(g)
                self.Edx2[name] = np.zeros_like(g)
            Eg2, Edx2 = self.Eg2[name], self.Edx2[name]
            Eg2 *= rho
            Eg2 += (1.0 - rho) * g * g
            dx = -np.sqrt(Edx2 + eps) / np.sqrt(Eg2 + eps) * g
            Edx2 *= rho
            Edx2 += (1.0 - rho) * dx * dx
            params[name] += dx
