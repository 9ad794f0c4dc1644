"""Adam optimizer over a flat float64 parameter vector."""

import numpy as np


class Adam:
    """Standard Adam: biased moment estimates with bias correction.

    update = lr * m_hat / (sqrt(v_hat) + eps)
    """

    def __init__(self, n_params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        """Apply one update in place; ``params`` and ``grad`` are flat."""
        if params.shape != self.m.shape or grad.shape != self.m.shape:
            raise ValueError("parameter/gradient shape does not match optimizer state")
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
