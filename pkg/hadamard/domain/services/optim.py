from collections.abc import Mapping

import numpy as np

from hadamard.autodiff.tensor import Tensor
from hadamard.domain.model.params import ModelParams


class Adam:
    """Adam with bias-corrected moments, one state slot per named tensor."""

    def __init__(
        self,
        learning_rate: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.first: dict[str, Tensor] = {}
        self.second: dict[str, Tensor] = {}

    def step(self, params: ModelParams, grads: Mapping[str, Tensor]) -> ModelParams:
        self.step_count += 1
        first_correction = 1.0 - self.beta1**self.step_count
        second_correction = 1.0 - self.beta2**self.step_count

        updated = {}
        for name in params.names():
            grad = grads.get(name)
            if grad is None:
                continue
            m = self.first.get(name, np.zeros_like(grad))
            v = self.second.get(name, np.zeros_like(grad))
            m = self.beta1 * m + (1.0 - self.beta1) * grad
            v = self.beta2 * v + (1.0 - self.beta2) * grad * grad
            self.first[name], self.second[name] = m, v

            m_hat = m / first_correction
            v_hat = v / second_correction
            updated[name] = params[name] - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)
        return params.replace(updated)
