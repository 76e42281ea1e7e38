"""Adam optimizer with bias correction."""

from __future__ import annotations

import numpy as np

from ..errors import IncompatibleCheckpoint, InvalidConfig, NumericGuardTripped
from .tensor import Tensor


class Adam:
    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 0.0005,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if lr <= 0:
            raise InvalidConfig("learning rate must be positive")
        if not params:
            raise InvalidConfig("optimizer needs at least one parameter")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._names = sorted(params)  # fixed update order for reproducibility
        self.params = dict(params)
        self.m = {n: np.zeros_like(params[n].data) for n in self._names}
        self.v = {n: np.zeros_like(params[n].data) for n in self._names}
        self.t = 0

    def zero_grad(self) -> None:
        for n in self._names:
            self.params[n].grad = None

    def step(self) -> None:
        """One update; parameters with no gradient stay untouched."""
        for n in self._names:
            g = self.params[n].grad
            if g is not None and not np.all(np.isfinite(g)):
                raise NumericGuardTripped(f"non-finite gradient for {n}")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for n in self._names:
            g = self.params[n].grad
            if g is None:
                continue
            m = self.m[n]
            v = self.v[n]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            self.params[n].data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for n in self._names:
            out[f"optim.m.{n}"] = self.m[n]
            out[f"optim.v.{n}"] = self.v[n]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], t: int, lr: float) -> None:
        for n in self._names:
            try:
                m = np.asarray(arrays[f"optim.m.{n}"], dtype=np.float64)
                v = np.asarray(arrays[f"optim.v.{n}"], dtype=np.float64)
            except KeyError as exc:
                raise IncompatibleCheckpoint(f"missing optimizer state for {n}") from exc
            if m.shape != self.m[n].shape or v.shape != self.v[n].shape:
                raise IncompatibleCheckpoint(f"optimizer state shape mismatch for {n}")
            self.m[n] = m.copy()
            self.v[n] = v.copy()
        self.t = int(t)
        self.lr = float(lr)
