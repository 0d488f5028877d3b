"""Hypergraph-guided classification head.

The invariant [class] embedding is fanned out into one branch per
action-unit vertex, an HGNN stack over the knowledge hypergraph reduces the
branch features to a scalar per vertex, and the sigmoid of that scalar
weights each branch in the final aggregation. A single affine layer maps
the aggregate to class logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Array, Tensor
from .hypergraph import Hypergraph, hgnn_conv

INIT_STD = 0.02


@dataclass
class HyperHeadParams:
    branch_w: Tensor  # (n_vertices, d, d0): independent per-branch maps
    branch_b: Tensor  # (n_vertices, d0)
    thetas: list[Tensor]  # HGNN mixing matrices; last output width is 1
    cls_w: Tensor  # (d0, n_classes)
    cls_b: Tensor  # (n_classes,)

    def named_parameters(self, prefix: str = "head"):
        yield f"{prefix}.branch_w", self.branch_w, True
        yield f"{prefix}.branch_b", self.branch_b, False
        for l, theta in enumerate(self.thetas):
            yield f"{prefix}.theta{l}", theta, True
        yield f"{prefix}.cls_w", self.cls_w, True
        yield f"{prefix}.cls_b", self.cls_b, False


def init_hyperhead(
    rng: np.random.Generator,
    d: int,
    n_vertices: int,
    n_classes: int,
    hgnn_dims: tuple[int, ...],
    dtype=np.float64,
) -> HyperHeadParams:
    """hgnn_dims lists layer widths d0 -> ... -> 1, strictly non-increasing."""
    if len(hgnn_dims) < 2:
        raise ValueError("hgnn_dims needs at least an input and an output width")
    if hgnn_dims[-1] != 1:
        raise ValueError(f"last HGNN width must be 1, got {hgnn_dims[-1]}")
    if any(a < b for a, b in zip(hgnn_dims, hgnn_dims[1:])):
        raise ValueError(f"HGNN widths must be non-increasing, got {hgnn_dims}")
    d0 = hgnn_dims[0]

    def w(shape, std=INIT_STD):
        return Tensor(rng.normal(0.0, std, size=shape).astype(dtype), requires_grad=True)

    return HyperHeadParams(
        branch_w=w((n_vertices, d, d0)),
        branch_b=Tensor(np.zeros((n_vertices, d0), dtype=dtype), requires_grad=True),
        thetas=[w((a, b)) for a, b in zip(hgnn_dims, hgnn_dims[1:])],
        cls_w=w((d0, n_classes)),
        cls_b=Tensor(np.zeros(n_classes, dtype=dtype), requires_grad=True),
    )


def decompose_branches(e_cls: Tensor, params: HyperHeadParams) -> Tensor:
    """Map the [class] embedding into per-vertex branch features.

    e_cls (..., d) -> (..., n_vertices, d0); row i is e_cls @ W_i + b_i.
    """
    n_v, d, d0 = params.branch_w.shape
    if e_cls.shape[-1] != d:
        raise ValueError(f"embedding width {e_cls.shape[-1]} does not match branch maps ({d})")
    lead = e_cls.shape[:-1]
    # (..., 1, 1, d) @ (n_v, d, d0) broadcasts to (..., n_v, 1, d0).
    stacked = ad.matmul(ad.reshape(e_cls, lead + (1, 1, d)), params.branch_w)
    return ad.add(ad.reshape(stacked, lead + (n_v, d0)), params.branch_b)


def attention_weights(e0: Tensor, g: Hypergraph, params: HyperHeadParams) -> Tensor:
    """Vertex attention in (0, 1): sigmoid of the HGNN stack's scalar output.

    e0 (..., n_vertices, d0) -> (..., n_vertices).
    """
    h = e0
    last = len(params.thetas) - 1
    for l, theta in enumerate(params.thetas):
        h = hgnn_conv(h, g, theta, final_layer=(l == last))
    return ad.sigmoid(ad.reshape(h, h.shape[:-1]))


def aggregate(e0: Tensor, weights: Tensor) -> Tensor:
    """Weighted sum of branch vectors: (..., n_v, d0), (..., n_v) -> (..., d0)."""
    if e0.shape[-2] != weights.shape[-1]:
        raise ValueError(
            f"branch count {e0.shape[-2]} does not match weight count {weights.shape[-1]}"
        )
    w = ad.reshape(weights, weights.shape + (1,))
    return ad.sum_(ad.mul(w, e0), axis=-2)


def classify(e_agg: Tensor, params: HyperHeadParams) -> Tensor:
    """Class logits from the aggregated embedding; argmax breaks ties low."""
    d0 = params.cls_w.shape[0]
    lead = e_agg.shape[:-1]
    flat = ad.reshape(e_agg, (-1, d0))
    logits = ad.add(ad.matmul(flat, params.cls_w), params.cls_b)
    return ad.reshape(logits, lead + (params.cls_w.shape[1],))


def predict(logits: Array) -> np.ndarray:
    """Argmax over the last axis; numpy argmax resolves ties to the lowest index."""
    return np.argmax(np.asarray(logits), axis=-1)


def hyperhead_forward(
    e_cls: Tensor, g: Hypergraph, params: HyperHeadParams
) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Full head pass; returns (logits, e_agg, weights, e0)."""
    e0 = decompose_branches(e_cls, params)
    weights = attention_weights(e0, g, params)
    e_agg = aggregate(e0, weights)
    return classify(e_agg, params), e_agg, weights, e0
