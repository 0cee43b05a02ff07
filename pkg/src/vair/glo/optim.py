"""Adam with per-row (lazy) updates for latent-code tables."""
from __future__ import annotations

import numpy as np


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict = {}
        self.v: dict = {}
        self.t: dict = {}

    def _moments(self, key: str, shape, dtype):
        if key not in self.m:
            self.m[key] = np.zeros(shape, dtype=dtype)
            self.v[key] = np.zeros(shape, dtype=dtype)
            self.t[key] = np.zeros(shape[:1] if len(shape) == 2 and key.startswith("codes.") else (1,), np.int64)
        return self.m[key], self.v[key]

    def update(self, key: str, param: np.ndarray, grad: np.ndarray) -> None:
        """In-place Adam step on a whole tensor."""
        m, v = self._moments(key, param.shape, param.dtype)
        self.t[key][0] += 1
        t = int(self.t[key][0])
        self._apply(param, grad, m, v, t)

    def update_row(self, key: str, table: np.ndarray, row: int, grad: np.ndarray) -> None:
        """In-place Adam step on one row of a code table; each row keeps its own step count."""
        m, v = self._moments(key, table.shape, table.dtype)
        self.t[key][row] += 1
        t = int(self.t[key][row])
        p = table[row]
        self._apply(p, grad, m[row], v[row], t)
        table[row] = p

    def _apply(self, p, g, m, v, t: int) -> None:
        dt = p.dtype
        b1, b2 = dt.type(self.beta1), dt.type(self.beta2)
        g = g.astype(dt, copy=False)
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        step = dt.type(self.lr * np.sqrt(1 - self.beta2 ** t) / (1 - self.beta1 ** t))
        p -= step * m / (np.sqrt(v) + dt.type(self.eps))
