"""Orthogonal matrices parameterized as products of Householder reflections.

The product W = H_1 H_2 ... H_m with H_i = I - 2 v_i v_i^T / ||v_i||^2 is
orthogonal for any parameter values, so orthogonality survives every
optimizer step by construction. Reflections whose vector norm falls below
the guard act as the identity rather than erroring, which keeps the
remaining product orthogonal during training.

The product is always accumulated in float64 and cast to the working dtype
at the end; in float32 this keeps ||W W^T - I||_max at cast-rounding level.
"""

from __future__ import annotations

import warnings

import numpy as np

from . import autodiff as ad
from .autodiff import Array, Tensor

NORM_EPS = 1e-8


class HouseholderStack:
    """m learnable reflection vectors spanning a d x d orthogonal matrix."""

    def __init__(self, vectors: Tensor | Array, norm_eps: float = NORM_EPS):
        if not isinstance(vectors, Tensor):
            vectors = Tensor(np.asarray(vectors, dtype=np.float64), requires_grad=True)
        if vectors.ndim != 2:
            raise ValueError(f"reflection vectors must be (m, d), got {vectors.shape}")
        d = vectors.shape[1]
        if d <= 0 or d % 2 != 0:
            raise ValueError(f"feature dimension must be positive and even, got {d}")
        self.vectors = vectors
        self.norm_eps = float(norm_eps)
        if self.active_mask().size and not self.active_mask().all():
            warnings.warn(
                "HouseholderStack constructed with near-zero reflection vectors; "
                "they will act as identity",
                stacklevel=2,
            )

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def n_reflections(self) -> int:
        return self.vectors.shape[0]

    def active_mask(self) -> np.ndarray:
        norms = np.linalg.norm(self.vectors.data.astype(np.float64), axis=1)
        return norms >= self.norm_eps


def random_stack(
    d: int,
    m: int | None = None,
    rng: np.random.Generator | None = None,
    dtype=np.float64,
) -> HouseholderStack:
    """i.i.d. standard-normal reflection vectors, normalized to unit length."""
    if rng is None:
        rng = np.random.default_rng()
    m = d if m is None else m
    v = rng.normal(size=(m, d))
    if m:
        v /= np.linalg.norm(v, axis=1, keepdims=True)
    return HouseholderStack(Tensor(v.astype(dtype), requires_grad=True))


def _reflections64(stack: HouseholderStack) -> tuple[np.ndarray, np.ndarray]:
    v64 = stack.vectors.data.astype(np.float64)
    return v64, stack.active_mask()


def materialize(stack: HouseholderStack, dtype=None) -> Array:
    """Dense W = prod_i H_i, factors applied left to right (i=1 leftmost)."""
    d = stack.dim
    v64, active = _reflections64(stack)
    w = np.eye(d)
    for i in range(stack.n_reflections):
        if not active[i]:
            continue
        v = v64[i]
        s = v @ v
        w = w - np.outer(w @ v, v) * (2.0 / s)
    if dtype is not None:
        w = w.astype(dtype)
    return w


def split_rows(w: Array) -> tuple[Array, Array]:
    """Top and bottom halves of the row basis; requires even row count."""
    w = np.asarray(w)
    d = w.shape[0]
    if d % 2 != 0:
        raise ValueError(f"cannot split odd row count {d}")
    half = d // 2
    return w[:half], w[half:]


def orthogonal_basis(stack: HouseholderStack) -> Tensor:
    """Graph node for the materialized product, differentiable in each v_i.

    Forward materializes in float64 and casts to the stack's dtype. The
    backward pass propagates through the reflection chain in float64: with
    prefix P_i = H_1..H_i and suffix S_i = H_i..H_m, the cotangent of H_i is
    P_{i-1}^T G S_{i+1}^T, and for H = I - (2/s) v v^T with s = v^T v,
    grad_v = -(2/s)(M + M^T) v + (4 v^T M v / s^2) v.
    """
    vectors = stack.vectors
    dtype = vectors.dtype
    d = stack.dim
    m = stack.n_reflections
    v64, active = _reflections64(stack)
    out = materialize(stack, dtype=dtype)

    def vjp(g):
        g64 = g.astype(np.float64)
        reflections: list[np.ndarray | None] = []
        prefixes = [np.eye(d)]
        for i in range(m):
            h = None
            if active[i]:
                v = v64[i]
                h = np.eye(d) - np.outer(v, v) * (2.0 / (v @ v))
            reflections.append(h)
            prefixes.append(prefixes[-1] @ h if h is not None else prefixes[-1])
        grads = np.zeros_like(v64)
        suffix = np.eye(d)
        # Walk the chain right to left, maintaining S_{i+1}.
        for i in range(m - 1, -1, -1):
            h = reflections[i]
            if h is not None:
                v = v64[i]
                s = v @ v
                mbar = prefixes[i].T @ g64 @ suffix.T
                mv = mbar @ v
                mtv = mbar.T @ v
                grads[i] = (-2.0 / s) * (mv + mtv) + (4.0 * (v @ mv) / s**2) * v
                suffix = h @ suffix
        return (grads.astype(dtype),)

    return ad._node(out, (vectors,), vjp)


def apply_right(x: Tensor | Array, stack: HouseholderStack) -> Tensor:
    """x @ W via m rank-1 updates without materializing the product.

    O(n*d*m) instead of O(n*d^2) + O(d^3); differentiable in both x and the
    reflection vectors.
    """
    x = ad.as_tensor(x)
    d = stack.dim
    if x.shape[-1] != d:
        raise ValueError(f"last axis {x.shape[-1]} does not match stack dim {d}")
    _, active = _reflections64(stack)
    for i in range(stack.n_reflections):
        if not active[i]:
            continue
        v = stack.vectors[i]
        col = ad.reshape(v, (d, 1))
        row = ad.reshape(v, (1, d))
        s = ad.sum_(ad.mul(v, v))
        coef = ad.mul(ad.power(s, -1.0), 2.0)
        u = ad.matmul(x, col)
        x = ad.sub(x, ad.mul(ad.matmul(u, row), coef))
    return x
