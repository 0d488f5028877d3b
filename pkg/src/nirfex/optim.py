"""AdamW with decoupled weight decay, and the one-cycle learning-rate shape.

Decay multiplies the parameter by (1 - lr * wd) alongside the moment update
and is never applied to bias or normalization parameters. The schedule warms
up linearly from peak/25 over the first 30% of steps and cosine-anneals to
peak/1e4, continuous at the joint.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor

BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-8

WARMUP_FRAC = 0.3
DIV_START = 25.0
DIV_END = 1e4


class AdamW:
    def __init__(
        self,
        params: list[tuple[str, Tensor, bool]],
        weight_decay: float = 0.0,
        beta1: float = BETA1,
        beta2: float = BETA2,
        eps: float = ADAM_EPS,
    ):
        self.params = list(params)
        self.weight_decay = float(weight_decay)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p, _ in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p, _ in self.params}

    def step(self, lr: float) -> None:
        """One update with the given learning rate; grads of None are zero."""
        self.step_count += 1
        t = self.step_count
        for name, p, decay in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise ValueError(f"non-finite gradient in parameter group {name!r}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            m_hat = m / (1 - self.beta1**t)
            v_hat = v / (1 - self.beta2**t)
            update = lr * m_hat / (np.sqrt(v_hat) + self.eps)
            if decay and self.weight_decay > 0:
                update = update + lr * self.weight_decay * p.data
            p.data = p.data - update.astype(p.data.dtype)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {"step_count": np.array([self.step_count])}
        for name in self.m:
            out[f"m.{name}"] = self.m[name]
            out[f"v.{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.step_count = int(arrays["step_count"][0])
        for name in self.m:
            self.m[name] = arrays[f"m.{name}"].copy()
            self.v[name] = arrays[f"v.{name}"].copy()


def one_cycle_lr(
    step: int,
    total_steps: int,
    peak: float,
    warmup_frac: float = WARMUP_FRAC,
    div_start: float = DIV_START,
    div_end: float = DIV_END,
) -> float:
    """Learning rate for integer step in [0, total_steps)."""
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    start = peak / div_start
    end = peak / div_end
    warm = int(round(warmup_frac * total_steps))
    warm = min(max(warm, 1), total_steps - 1) if total_steps > 1 else 0
    if total_steps == 1:
        return start
    if step <= warm:
        return start + (peak - start) * step / warm
    frac = (step - warm) / (total_steps - 1 - warm)
    return end + (peak - end) * 0.5 * (1.0 + np.cos(np.pi * frac))
