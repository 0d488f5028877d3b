"""Transformer encoder with orthogonally decomposed dual-head attention.

Each block computes standard scaled dot-product attention, but the value
matrix is split column-wise into two heads and each half is projected onto
one half of a Householder-parameterized orthogonal row basis. The two
attention outputs O_S (spectrum head) and O_I (invariant head) therefore
live in complementary orthogonal subspaces for any parameter values, and
their sum equals ordinary attention with an orthogonal output projection,
so passing O_S + O_I through the residual stream loses nothing.

Token layout: row 0 is the [class] token, row 1 the [spectrum] token,
remaining rows are image patches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Array, Tensor
from .householder import HouseholderStack, orthogonal_basis, random_stack

CLASS_ROW = 0
SPECTRUM_ROW = 1
SPECIAL_TOKENS = 2

INIT_STD = 0.02


@dataclass
class EmbeddingParams:
    patch_proj: Tensor  # (channels * patch^2, d)
    patch_bias: Tensor  # (d,)
    class_token: Tensor  # (d,)
    spectrum_token: Tensor  # (d,)
    pos: Tensor  # (n_tokens, d)

    def named_parameters(self, prefix: str = "embedding"):
        yield f"{prefix}.patch_proj", self.patch_proj, True
        yield f"{prefix}.patch_bias", self.patch_bias, False
        yield f"{prefix}.class_token", self.class_token, True
        yield f"{prefix}.spectrum_token", self.spectrum_token, True
        yield f"{prefix}.pos", self.pos, True


@dataclass
class BlockParams:
    w_q: Tensor
    b_q: Tensor
    w_k: Tensor
    b_k: Tensor
    w_v: Tensor
    b_v: Tensor
    householder: HouseholderStack
    w_ff1: Tensor
    b_ff1: Tensor
    w_ff2: Tensor
    b_ff2: Tensor
    ln1_scale: Tensor
    ln1_shift: Tensor
    ln2_scale: Tensor
    ln2_shift: Tensor

    def named_parameters(self, prefix: str):
        yield f"{prefix}.w_q", self.w_q, True
        yield f"{prefix}.b_q", self.b_q, False
        yield f"{prefix}.w_k", self.w_k, True
        yield f"{prefix}.b_k", self.b_k, False
        yield f"{prefix}.w_v", self.w_v, True
        yield f"{prefix}.b_v", self.b_v, False
        yield f"{prefix}.householder", self.householder.vectors, True
        yield f"{prefix}.w_ff1", self.w_ff1, True
        yield f"{prefix}.b_ff1", self.b_ff1, False
        yield f"{prefix}.w_ff2", self.w_ff2, True
        yield f"{prefix}.b_ff2", self.b_ff2, False
        yield f"{prefix}.ln1_scale", self.ln1_scale, False
        yield f"{prefix}.ln1_shift", self.ln1_shift, False
        yield f"{prefix}.ln2_scale", self.ln2_scale, False
        yield f"{prefix}.ln2_shift", self.ln2_shift, False


def n_tokens(image_size: int, patch_size: int) -> int:
    if image_size % patch_size != 0:
        raise ValueError(f"image size {image_size} not divisible by patch {patch_size}")
    return SPECIAL_TOKENS + (image_size // patch_size) ** 2


def init_embedding(
    rng: np.random.Generator,
    channels: int,
    image_size: int,
    patch_size: int,
    d: int,
    dtype=np.float64,
) -> EmbeddingParams:
    tokens = n_tokens(image_size, patch_size)
    pixels = channels * patch_size * patch_size

    def p(shape, std=INIT_STD):
        return Tensor(rng.normal(0.0, std, size=shape).astype(dtype), requires_grad=True)

    return EmbeddingParams(
        patch_proj=p((pixels, d)),
        patch_bias=Tensor(np.zeros(d, dtype=dtype), requires_grad=True),
        class_token=p((d,)),
        spectrum_token=p((d,)),
        pos=p((tokens, d)),
    )


def init_block(
    rng: np.random.Generator,
    d: int,
    d_ff: int | None = None,
    n_reflections: int | None = None,
    dtype=np.float64,
) -> BlockParams:
    if d % 2 != 0:
        raise ValueError(f"embed dim must be even for the dual-head split, got {d}")
    d_ff = 4 * d if d_ff is None else d_ff

    def w(shape, std=INIT_STD):
        return Tensor(rng.normal(0.0, std, size=shape).astype(dtype), requires_grad=True)

    def zeros(n):
        return Tensor(np.zeros(n, dtype=dtype), requires_grad=True)

    def ones(n):
        return Tensor(np.ones(n, dtype=dtype), requires_grad=True)

    return BlockParams(
        w_q=w((d, d)),
        b_q=zeros(d),
        w_k=w((d, d)),
        b_k=zeros(d),
        w_v=w((d, d)),
        b_v=zeros(d),
        householder=random_stack(d, m=n_reflections, rng=rng, dtype=dtype),
        w_ff1=w((d, d_ff)),
        b_ff1=zeros(d_ff),
        w_ff2=w((d_ff, d)),
        b_ff2=zeros(d),
        ln1_scale=ones(d),
        ln1_shift=zeros(d),
        ln2_scale=ones(d),
        ln2_shift=zeros(d),
    )


def patchify(images: Array, patch_size: int) -> Array:
    """(B, C, H, W) -> (B, n_patches, C * patch^2), row-major patch order."""
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[None]
    b, c, h, w = images.shape
    if h % patch_size or w % patch_size:
        raise ValueError(f"image {h}x{w} not divisible by patch size {patch_size}")
    gh, gw = h // patch_size, w // patch_size
    tiles = images.reshape(b, c, gh, patch_size, gw, patch_size)
    tiles = tiles.transpose(0, 2, 4, 1, 3, 5)  # (B, gh, gw, C, p, p)
    return tiles.reshape(b, gh * gw, c * patch_size * patch_size)


def embed(images: Array, params: EmbeddingParams, patch_size: int) -> Tensor:
    """Patch-project an image batch and prepend the [class] and [spectrum]
    tokens; positional embeddings are added elementwise. Returns (B, N, d)."""
    patches = patchify(images, patch_size)
    b = patches.shape[0]
    d = params.patch_bias.shape[0]
    x = Tensor(patches.astype(params.patch_proj.dtype))
    proj = ad.add(ad.matmul(x, params.patch_proj), params.patch_bias)
    cls = ad.broadcast_to(ad.reshape(params.class_token, (1, 1, d)), (b, 1, d))
    spec = ad.broadcast_to(ad.reshape(params.spectrum_token, (1, 1, d)), (b, 1, d))
    tokens = ad.concat([cls, spec, proj], axis=1)
    expected = params.pos.shape[0]
    if tokens.shape[1] != expected:
        raise ValueError(
            f"got {tokens.shape[1]} tokens but positional table has {expected} rows"
        )
    return ad.add(tokens, params.pos)


def dual_head_attention(z: Tensor, params: BlockParams) -> tuple[Tensor, Tensor]:
    """Attention with the value split over an orthogonal row basis.

    Returns (O_S, O_I), each (..., N, d), with O_S O_I^T = 0 and
    O_S + O_I = A V W for the full orthogonal W.
    """
    d = z.shape[-1]
    if d != params.w_q.shape[0]:
        raise ValueError(f"token width {d} does not match block dim {params.w_q.shape[0]}")
    half = d // 2
    q = ad.add(ad.matmul(z, params.w_q), params.b_q)
    k = ad.add(ad.matmul(z, params.w_k), params.b_k)
    v = ad.add(ad.matmul(z, params.w_v), params.b_v)
    scores = ad.mul(ad.matmul(q, ad.transpose_last(k)), 1.0 / np.sqrt(d))
    attn = ad.softmax(scores)
    w = orthogonal_basis(params.householder)
    v_s = v[..., :, :half]
    v_i = v[..., :, half:]
    o_s = ad.matmul(attn, ad.matmul(v_s, w[:half, :]))
    o_i = ad.matmul(attn, ad.matmul(v_i, w[half:, :]))
    return o_s, o_i


def feed_forward(x: Tensor, params: BlockParams) -> Tensor:
    hidden = ad.gelu(ad.add(ad.matmul(x, params.w_ff1), params.b_ff1))
    return ad.add(ad.matmul(hidden, params.w_ff2), params.b_ff2)


def encoder_block(z: Tensor, params: BlockParams) -> tuple[Tensor, Tensor, Tensor]:
    """Pre-norm residual block; the attention branch adds O_S + O_I back."""
    normed = ad.layer_norm(z, params.ln1_scale, params.ln1_shift)
    o_s, o_i = dual_head_attention(normed, params)
    z = ad.add(z, ad.add(o_s, o_i))
    z = ad.add(z, feed_forward(ad.layer_norm(z, params.ln2_scale, params.ln2_shift), params))
    return z, o_s, o_i


def spectrum_head(
    o_s: Tensor,
    weights: Tensor,
    bias: Tensor,
    ln: tuple[Tensor, Tensor] | None = None,
) -> Tensor:
    """Sigmoid score from the [spectrum] token row of O_S. Returns (...,)."""
    row = o_s[..., SPECTRUM_ROW, :]
    if ln is not None:
        row = ad.layer_norm(row, ln[0], ln[1])
    d = row.shape[-1]
    logit = ad.add(ad.matmul(ad.reshape(row, (-1, d)), ad.reshape(weights, (d, 1))), bias)
    return ad.sigmoid(ad.reshape(logit, row.shape[:-1]))
