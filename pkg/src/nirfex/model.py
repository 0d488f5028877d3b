"""Full model assembly: embedding -> encoder stack -> spectrum head (from the
final O_S) and hypergraph-guided expression head (from the final O_I), with
the joint loss L = L_cls + lambda * L_spectrum.

A final layer normalization (shared parameters) is applied to the two token
rows the heads read. Forward evaluation is a pure function of (images,
parameters); there is no hidden state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Array, Tensor
from .encoder import (
    CLASS_ROW,
    BlockParams,
    EmbeddingParams,
    embed,
    encoder_block,
    init_block,
    init_embedding,
    n_tokens,
    spectrum_head,
)
from .hypergraph import Hypergraph, default_hypergraph
from .hyperhead import HyperHeadParams, hyperhead_forward, init_hyperhead
from .numerics import binary_cross_entropy_graph, cross_entropy

NIR = 0
VIS = 1
MODALITY_NAMES = ("NIR", "VIS")


@dataclass
class ModelConfig:
    image_size: int = 32
    channels: int = 1
    patch_size: int = 4
    embed_dim: int = 64
    depth: int = 4
    ffn_dim: int | None = None  # defaults to 4 * embed_dim
    n_classes: int = 6
    hgnn_dims: tuple[int, ...] = (64, 16, 1)
    dtype: str = "float64"

    def __post_init__(self):
        if self.embed_dim % 2 != 0:
            raise ValueError(f"embed_dim must be even, got {self.embed_dim}")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.image_size % self.patch_size != 0:
            raise ValueError(
                f"image size {self.image_size} not divisible by patch {self.patch_size}"
            )
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype}")
        self.hgnn_dims = tuple(int(x) for x in self.hgnn_dims)

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    @property
    def n_tokens(self) -> int:
        return n_tokens(self.image_size, self.patch_size)

    @property
    def branch_dim(self) -> int:
        return self.hgnn_dims[0]

    def to_dict(self) -> dict:
        return {
            "image_size": self.image_size,
            "channels": self.channels,
            "patch_size": self.patch_size,
            "embed_dim": self.embed_dim,
            "depth": self.depth,
            "ffn_dim": self.ffn_dim,
            "n_classes": self.n_classes,
            "hgnn_dims": list(self.hgnn_dims),
            "dtype": self.dtype,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        doc = dict(doc)
        if "hgnn_dims" in doc:
            doc["hgnn_dims"] = tuple(doc["hgnn_dims"])
        return cls(**doc)


@dataclass
class ModelParams:
    embedding: EmbeddingParams
    blocks: list[BlockParams]
    final_ln_scale: Tensor
    final_ln_shift: Tensor
    spectrum_w: Tensor
    spectrum_b: Tensor
    head: HyperHeadParams

    def named_parameters(self) -> Iterator[tuple[str, Tensor, bool]]:
        """(name, tensor, weight_decay_applies) for every trainable group."""
        yield from self.embedding.named_parameters()
        for i, block in enumerate(self.blocks):
            yield from block.named_parameters(f"blocks.{i}")
        yield "final_ln_scale", self.final_ln_scale, False
        yield "final_ln_shift", self.final_ln_shift, False
        yield "spectrum_w", self.spectrum_w, True
        yield "spectrum_b", self.spectrum_b, False
        yield from self.head.named_parameters()

    def zero_grad(self) -> None:
        for _, p, _ in self.named_parameters():
            p.zero_grad()


@dataclass
class ForwardOutput:
    logits: Tensor  # (B, M)
    score: Tensor  # (B,) spectrum probability in (0, 1)
    e_cls: Tensor  # (B, d) normalized [class] row of the final O_I
    e_agg: Tensor  # (B, d0)
    o_s: Tensor  # (B, N, d)
    o_i: Tensor  # (B, N, d)

    def orthogonality_residual(self) -> float:
        """max |O_S O_I^T| across the batch."""
        prod = self.o_s.data @ np.swapaxes(self.o_i.data, -1, -2)
        return float(np.abs(prod).max())


def init_model(
    cfg: ModelConfig, graph: Hypergraph | None = None, seed: int = 0
) -> ModelParams:
    graph = graph if graph is not None else default_hypergraph()
    rng = np.random.default_rng(seed)
    dtype = cfg.np_dtype
    d = cfg.embed_dim
    return ModelParams(
        embedding=init_embedding(
            rng, cfg.channels, cfg.image_size, cfg.patch_size, d, dtype=dtype
        ),
        blocks=[init_block(rng, d, d_ff=cfg.ffn_dim, dtype=dtype) for _ in range(cfg.depth)],
        final_ln_scale=Tensor(np.ones(d, dtype=dtype), requires_grad=True),
        final_ln_shift=Tensor(np.zeros(d, dtype=dtype), requires_grad=True),
        spectrum_w=Tensor(
            rng.normal(0.0, 0.02, size=d).astype(dtype), requires_grad=True
        ),
        spectrum_b=Tensor(np.zeros(1, dtype=dtype), requires_grad=True),
        head=init_hyperhead(
            rng, d, graph.n_vertices, cfg.n_classes, cfg.hgnn_dims, dtype=dtype
        ),
    )


def _as_batch(images: Array, cfg: ModelConfig) -> Array:
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[None]
    if images.ndim != 4 or images.shape[1:] != (cfg.channels, cfg.image_size, cfg.image_size):
        raise ValueError(
            f"expected images (B, {cfg.channels}, {cfg.image_size}, {cfg.image_size}), "
            f"got {images.shape}"
        )
    return images


def forward(
    params: ModelParams, cfg: ModelConfig, graph: Hypergraph, images: Array
) -> ForwardOutput:
    """Run the full network on an image batch ((C,H,W) promotes to B=1)."""
    images = _as_batch(images, cfg)
    z = embed(images, params.embedding, cfg.patch_size)
    o_s = o_i = None
    for block in params.blocks:
        z, o_s, o_i = encoder_block(z, block)
    ln = (params.final_ln_scale, params.final_ln_shift)
    score = spectrum_head(o_s, params.spectrum_w, params.spectrum_b, ln=ln)
    e_cls = ad.layer_norm(o_i[..., CLASS_ROW, :], ln[0], ln[1])
    logits, e_agg, _, _ = hyperhead_forward(e_cls, graph, params.head)
    return ForwardOutput(logits=logits, score=score, e_cls=e_cls, e_agg=e_agg, o_s=o_s, o_i=o_i)


def joint_loss(
    out: ForwardOutput, expressions, modalities, spectrum_weight: float
) -> tuple[Tensor, float, float]:
    """L = L_cls + spectrum_weight * L_spectrum.

    Returns (loss node, cls part, spectrum part)."""
    if spectrum_weight < 0:
        raise ValueError(f"balance parameter must be >= 0, got {spectrum_weight}")
    modalities = np.asarray(modalities)
    if modalities.size and not np.isin(modalities, (NIR, VIS)).all():
        raise ValueError("modality labels must be NIR=0 or VIS=1")
    loss_cls = cross_entropy(out.logits, expressions)
    loss_spec = binary_cross_entropy_graph(out.score, modalities)
    total = ad.add(loss_cls, ad.mul(loss_spec, float(spectrum_weight)))
    return total, float(loss_cls.data), float(loss_spec.data)


def gradients(
    params: ModelParams,
    cfg: ModelConfig,
    graph: Hypergraph,
    images: Array,
    expressions,
    modalities,
    spectrum_weight: float,
) -> dict[str, Array]:
    """Gradient of the joint loss for every parameter group (zero if unused)."""
    params.zero_grad()
    out = forward(params, cfg, graph, images)
    total, _, _ = joint_loss(out, expressions, modalities, spectrum_weight)
    if not np.isfinite(total.data):
        raise ValueError("joint loss is non-finite; cannot take gradients")
    total.backward()
    return {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p, _ in params.named_parameters()
    }
