"""Adam with global-norm gradient clipping and a linear warmup factor."""

from __future__ import annotations

import numpy as np


class Adam:
    """Adam over a dict of arrays; moment estimates live in flat buffers."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 clip_norm: float | None = 5.0):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self.names: list[str] = []
        self.m = np.zeros(0)
        self.v = np.zeros(0)

    def _layout(self, grads: dict[str, np.ndarray]) -> None:
        if not self.names:
            self.names = list(grads)
            size = sum(g.size for g in grads.values())
            self.m = np.zeros(size)
            self.v = np.zeros(size)
        elif len(grads) != len(self.names) or set(grads) != set(self.names):
            raise ValueError("gradient keys changed between steps")

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr_scale: float = 1.0) -> float:
        """Update ``params`` in place; returns the pre-clipping gradient norm."""
        self._layout(grads)
        if not self.names:
            self.t += 1
            return 0.0
        flat = np.concatenate([grads[k].ravel() for k in self.names])
        norm = float(np.sqrt(flat @ flat))
        if self.clip_norm is not None and norm > self.clip_norm:
            flat *= self.clip_norm / norm
        self.t += 1
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * flat
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * flat * flat
        lr = self.lr * lr_scale
        if lr != 0.0:
            c1 = 1.0 - self.beta1 ** self.t
            c2 = 1.0 - self.beta2 ** self.t
            delta = lr * (self.m / c1) / (np.sqrt(self.v / c2) + self.eps)
            offset = 0
            for k in self.names:
                p = params[k]
                p -= delta[offset: offset + p.size].reshape(p.shape)
                offset += p.size
        return norm

    def state_dict(self) -> dict:
        return {"t": self.t, "names": list(self.names), "m": self.m.tolist(), "v": self.v.tolist()}

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        self.names = list(state["names"])
        self.m = np.array(state["m"], dtype=np.float64)
        self.v = np.array(state["v"], dtype=np.float64)


def warmup_factor(step: int, warmup_steps: int) -> float:
    """Linear ramp (step+1)/warmup_steps, then 1."""
    if warmup_steps <= 0:
        return 1.0
    return min(1.0, (step + 1) / warmup_steps)
