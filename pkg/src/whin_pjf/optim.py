"""Adam optimizer over autodiff parameter leaves."""

from __future__ import annotations

import numpy as np


class Adam:
    """Standard Adam with bias correction; state is keyed per parameter."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.value) for p in self.params]
        self._v = [np.zeros_like(p.value) for p in self.params]

    def step(self, grads):
        """Apply one update from a {param: grad} mapping (missing -> zero)."""
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            g = grads.get(p)
            if g is None:
                g = np.zeros_like(p.value)
            m = self._m[i]
            v = self._v[i]
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            update = (self.lr / b1c) * m / (np.sqrt(v / b2c) + self.eps)
            p.value = (p.value - update).astype(p.value.dtype)


def accumulate(total, grads, weight=1.0):
    """Merge one backward pass's gradients into a running {param: grad} sum."""
    for p, g in grads.items():
        if p in total:
            total[p] = total[p] + g * weight
        else:
            total[p] = g * weight
    return total
