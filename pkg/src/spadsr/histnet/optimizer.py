"""Proximal Adagrad."""

from __future__ import annotations

import numpy as np


class ProximalAdagrad:
    """Adagrad with an l1 proximal step.

    Per step and coordinate: ``G += g**2``, ``lr_t = lr / sqrt(G)``,
    ``v = w - lr_t * g`` and ``w = sign(v) * max(|v| - lr_t * l1, 0)``.
    ``G`` starts at ``accumulator_init``.
    """

    def __init__(self, learning_rate=0.1, l1_reg=0.0, accumulator_init=0.1):
        if not learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not accumulator_init > 0:
            raise ValueError("accumulator_init must be positive")
        if l1_reg < 0:
            raise ValueError("l1_reg must be non-negative")
        self.lr = learning_rate
        self.l1 = l1_reg
        self.init = accumulator_init
        self.accum = {}

    def step(self, params: dict, grads: dict) -> None:
        """Update ``params`` in place."""
        for name, w in params.items():
            g = grads[name]
            acc = self.accum.get(name)
            if acc is None:
                acc = np.full(w.shape, self.init, dtype=w.dtype)
                self.accum[name] = acc
            acc += g * g
            lr_t = self.lr / np.sqrt(acc)
            v = w - lr_t * g
            if self.l1 > 0:
                v = np.sign(v) * np.maximum(np.abs(v) - lr_t * self.l1, 0)
            w[...] = v
