"""Central finite-difference verification of analytic gradients.

Every analytic gradient in the repo is checked against
(f(x+eps) - f(x-eps)) / (2*eps) with relative error
|a - n| / max(|a|, |n|, 1e-8), elementwise over each parameter group.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .autodiff import Tensor

REL_FLOOR = 1e-8


@dataclass
class GradCheckReport:
    eps: float
    tol: float
    per_group: dict[str, float] = field(default_factory=dict)

    @property
    def max_rel_error(self) -> float:
        return max(self.per_group.values()) if self.per_group else 0.0

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol

    def failures(self) -> dict[str, float]:
        return {k: v for k, v in self.per_group.items() if v > self.tol}

    def lines(self) -> list[str]:
        out = []
        for name, err in sorted(self.per_group.items()):
            mark = "ok" if err <= self.tol else "FAIL"
            out.append(f"{mark:4s} {name:40s} max rel err {err:.3e}")
        return out


def grad_check(
    func: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    eps: float = 1e-5,
    tol: float = 1e-4,
) -> GradCheckReport:
    """Compare func()'s analytic gradients against central differences.

    `func` must rebuild the scalar loss from the current parameter values on
    every call. Raises if the loss goes non-finite while probing, naming the
    parameter responsible.
    """
    for name, p in params.items():
        if not isinstance(p, Tensor) or not p.requires_grad:
            raise ValueError(f"parameter group {name!r} is not a trainable Tensor")
        p.zero_grad()

    out = func()
    if out.data.size != 1:
        raise ValueError("grad_check requires a scalar-valued function")
    if not np.isfinite(out.data):
        raise ValueError("loss is non-finite at the unperturbed point")
    out.backward()
    analytic = {
        name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
        for name, p in params.items()
    }

    report = GradCheckReport(eps=eps, tol=tol)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(func().data)
            flat[i] = orig - eps
            f_minus = float(func().data)
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise ValueError(
                    f"non-finite loss while probing parameter {name!r} index {i}"
                )
            numeric = (f_plus - f_minus) / (2.0 * eps)
            denom = max(abs(a_flat[i]), abs(numeric), REL_FLOOR)
            worst = max(worst, abs(a_flat[i] - numeric) / denom)
        report.per_group[name] = worst
    return report
