"""Machine checks of the architecture's mathematical guarantees.

These suites power the `check-invariants` CLI command and the acceptance
tests: the dual-head orthogonality and completeness identities over random
draws in both precisions, the Householder basis properties, the HGNN
propagation contract, and the full-model finite-difference gradient check.
Random draws use initialization-scale parameters and unit-scale inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .encoder import dual_head_attention, init_block
from .gradcheck import GradCheckReport, grad_check
from .householder import apply_right, materialize, random_stack
from .hypergraph import parse_incidence
from .model import forward, init_model, joint_loss
from .numerics import softmax_rows

ORTHO_TOL_DOUBLE = 1e-10
ORTHO_TOL_SINGLE = 1e-5
HOUSEHOLDER_TOL = 1e-10
GRAD_TOL = 1e-4


@dataclass
class SuiteReport:
    name: str
    checks: dict[str, tuple[float, float]] = field(default_factory=dict)  # value, bound

    def record(self, label: str, value: float, bound: float) -> None:
        prev = self.checks.get(label, (0.0, bound))[0]
        self.checks[label] = (max(prev, value), bound)

    @property
    def passed(self) -> bool:
        return all(v <= bound for v, bound in self.checks.values())

    def lines(self) -> list[str]:
        out = [f"[{'PASS' if self.passed else 'FAIL'}] {self.name}"]
        for label, (value, bound) in sorted(self.checks.items()):
            mark = "ok" if value <= bound else "FAIL"
            out.append(f"  {mark:4s} {label:52s} {value:.3e} <= {bound:.0e}")
        return out


def _random_attention_inputs(rng, d, n, dtype):
    params = init_block(rng, d, dtype=dtype)
    z = ad.Tensor(rng.normal(size=(n, d)).astype(dtype))
    return params, z


def orthogonality_suite(
    n_draws: int = 1008,
    dims: tuple[int, ...] = (4, 8, 64),
    tokens: tuple[int, ...] = (3, 10, 50),
    seed: int = 0,
) -> SuiteReport:
    """Dual-head orthogonality and decomposition completeness over random
    (params, input) draws, evaluated in double and single precision."""
    rng = np.random.default_rng(seed)
    report = SuiteReport("dual-head orthogonal decomposition")
    combos = [(d, n) for d in dims for n in tokens]
    per_combo = max(1, int(np.ceil(n_draws / len(combos))))
    for d, n in combos:
        for _ in range(per_combo):
            for dtype, tol in ((np.float64, ORTHO_TOL_DOUBLE), (np.float32, ORTHO_TOL_SINGLE)):
                params, z = _random_attention_inputs(rng, d, n, dtype)
                o_s, o_i = dual_head_attention(z, params)
                cross = np.abs(o_s.data @ o_i.data.T).max()
                report.record(f"max |O_S O_I^T| d={d} N={n} {np.dtype(dtype).name}", cross, tol)
                if dtype == np.float64:
                    q = z.data @ params.w_q.data + params.b_q.data
                    k = z.data @ params.w_k.data + params.b_k.data
                    v = z.data @ params.w_v.data + params.b_v.data
                    attn = softmax_rows(q @ k.T / np.sqrt(d))
                    full = attn @ v @ materialize(params.householder)
                    gap = np.abs((o_s.data + o_i.data) - full).max()
                    report.record(f"completeness |O_S+O_I - A V W| d={d} N={n}", gap, tol)
    return report


def householder_suite(n_draws: int = 200, dims: tuple[int, ...] = (2, 4, 8, 64), seed: int = 1) -> SuiteReport:
    """Orthogonality of the materialized product, agreement of the streaming
    application, isometry, and endogeneity under parameter perturbation."""
    rng = np.random.default_rng(seed)
    report = SuiteReport("householder parameterization")
    per_dim = max(1, n_draws // len(dims))
    for d in dims:
        for _ in range(per_dim):
            stack = random_stack(d, rng=rng)
            # Perturb the raw parameters arbitrarily: orthogonality must hold
            # for any values above the norm guard.
            stack.vectors.data = stack.vectors.data + rng.normal(
                scale=rng.uniform(0.1, 5.0), size=stack.vectors.shape
            )
            w = materialize(stack)
            report.record(
                f"max |W W^T - I| d={d}", np.abs(w @ w.T - np.eye(d)).max(), HOUSEHOLDER_TOL
            )
            x = rng.normal(size=(5, d))
            streamed = apply_right(ad.Tensor(x), stack).data
            report.record(
                f"max |apply_right - X W| d={d}", np.abs(streamed - x @ w).max(), HOUSEHOLDER_TOL
            )
            norms_in = np.linalg.norm(x, axis=1)
            norms_out = np.linalg.norm(x @ w, axis=1)
            report.record(
                f"max isometry defect d={d}", np.abs(norms_out - norms_in).max(), HOUSEHOLDER_TOL
            )
    return report


def hgnn_suite(n_draws: int = 60, seed: int = 2) -> SuiteReport:
    """Propagation symmetry/spectral bound and the convolution against a
    directly evaluated dense normalization chain."""
    import json

    from .hypergraph import hgnn_conv, propagation_matrix

    rng = np.random.default_rng(seed)
    report = SuiteReport("hypergraph convolution")
    for _ in range(n_draws):
        while True:
            nv = int(rng.integers(2, 7))
            ne = int(rng.integers(1, 5))
            h = (rng.random((nv, ne)) < 0.5).astype(float)
            if h.sum(axis=1).min() >= 1 and h.sum(axis=0).min() >= 1:
                break
        g = parse_incidence(
            json.dumps(
                {
                    "vertices": [f"v{i}" for i in range(nv)],
                    "edges": [f"e{j}" for j in range(ne)],
                    "incidence": h.tolist(),
                }
            )
        )
        p = propagation_matrix(g)
        report.record("max |P - P^T|", np.abs(p - p.T).max(), 0.0)
        eigs = np.linalg.eigvalsh(p)
        report.record("spectral norm - 1", float(eigs.max() - 1.0), 1e-10)
        report.record("most negative eigenvalue", float(-eigs.min()), 1e-10)
        e = rng.normal(size=(nv, 3))
        theta = rng.normal(size=(3, 2))
        dv = np.diag(1.0 / np.sqrt(h.sum(axis=1)))
        de = np.diag(1.0 / h.sum(axis=0))
        want = np.maximum(dv @ h @ de @ h.T @ dv @ e @ theta, 0.0)
        got = hgnn_conv(e, g, theta).data
        report.record("max |conv - direct oracle|", np.abs(got - want).max(), 1e-12)
    return report


TOY_GRAPH_TEXT = "classes: a b c\nv0: a\nv1: a b\nv2: b c\n"


def gradient_suite(seed: int = 3, eps: float = 1e-5, tol: float = GRAD_TOL) -> GradCheckReport:
    """Finite-difference check of every parameter group of the full model on
    the toy configuration (d=4, depth=1, N=3, N_v=3, d0=2, L=2, M=3)."""
    from .model import ModelConfig

    graph = parse_incidence(TOY_GRAPH_TEXT)
    cfg = ModelConfig(
        image_size=4,
        channels=1,
        patch_size=4,
        embed_dim=4,
        depth=1,
        n_classes=3,
        hgnn_dims=(2, 2, 1),
    )
    params = init_model(cfg, graph, seed=seed)
    rng = np.random.default_rng(seed)
    image = rng.random((1, 1, 4, 4))
    y = np.array([1])
    m = np.array([1])

    def loss():
        out = forward(params, cfg, graph, image)
        return joint_loss(out, y, m, 0.1)[0]

    groups = {name: p for name, p, _ in params.named_parameters()}
    return grad_check(loss, groups, eps=eps, tol=tol)
