"""Prompt-free mask decoder with progressive 2x upsampling.

A single learned output token replaces the prompt pathway: two two-way
attention blocks mix it with the image embedding, K stride-2 transposed
convolutions restore full resolution (K = log2(patch_size), so a 16x
downsampled embedding needs four stages), and the mask logit at each pixel
is the dot product between the upsampled feature and an MLP readout of the
token.

Every upsampler convolution is stored as a frozen base P plus a trainable
zero-initialized delta; the delta is L2-regularized in the loss so
fine-tuning stays a small perturbation of the pretrained kernels.
"""

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, ops
from .encoder import Attention, Mlp, _kaiming, _normal, _ones, _zeros


@dataclass
class DecoderConfig:
    embed_dim: int = 64
    grid: int = 8  # tokens per side of the embedding
    heads: int = 4
    mlp_ratio: float = 4.0
    stages: int = 0  # 0 means log2 of the encoder patch size
    min_channels: int = 8

    def resolve_stages(self, patch_size):
        if self.stages == 0:
            self.stages = int(round(math.log2(patch_size)))
        return self.stages


@dataclass
class LossConfig:
    base: str = "bce"
    lambda_p: float = 1e-4

    def validate(self):
        if self.base != "bce":
            raise ValueError(f"unsupported base loss {self.base!r}")
        if self.lambda_p < 0:
            raise ValueError("lambda_p must be >= 0")


class DeltaConvTranspose:
    """Stride-2 transposed conv with frozen base P and trainable delta."""

    def __init__(self, c_in, c_out, rng):
        self.base_w = _kaiming(rng, (c_in, c_out, 2, 2), fan_in=c_in * 4)
        self.base_b = _zeros((c_out,))
        self.delta_w = _zeros((c_in, c_out, 2, 2))
        self.delta_b = _zeros((c_out,))

    def forward(self, x, deltas=True):
        if deltas:
            w = ops.add(self.base_w, self.delta_w)
            b = ops.add(self.base_b, self.delta_b)
        else:
            w, b = self.base_w, self.base_b
        return ops.conv_transpose2d(x, w, b, stride=2)

    def named_params(self, prefix):
        yield f"{prefix}.base_w", self.base_w
        yield f"{prefix}.base_b", self.base_b
        yield f"{prefix}.delta_w", self.delta_w
        yield f"{prefix}.delta_b", self.delta_b

    def delta_params(self, prefix):
        yield f"{prefix}.delta_w", self.delta_w
        yield f"{prefix}.delta_b", self.delta_b


class TwoWayBlock:
    """Token attends to image, token MLP, image attends back. Post-norm."""

    def __init__(self, c, heads, mlp_ratio, rng):
        self.attn_t2i = Attention(c, heads, rng)
        self.attn_i2t = Attention(c, heads, rng)
        self.mlp = Mlp(c, int(c * mlp_ratio), rng)
        self.norm1_scale, self.norm1_shift = _ones((c,)), _zeros((c,))
        self.norm2_scale, self.norm2_shift = _ones((c,)), _zeros((c,))
        self.norm3_scale, self.norm3_shift = _ones((c,)), _zeros((c,))

    def forward(self, tokens, img):
        tokens = ops.layer_norm(
            ops.add(tokens, self.attn_t2i.forward(tokens, img)), self.norm1_scale, self.norm1_shift
        )
        tokens = ops.layer_norm(
            ops.add(tokens, self.mlp.forward(tokens)), self.norm2_scale, self.norm2_shift
        )
        img = ops.layer_norm(
            ops.add(img, self.attn_i2t.forward(img, tokens)), self.norm3_scale, self.norm3_shift
        )
        return tokens, img

    def named_params(self, prefix):
        yield from self.attn_t2i.named_params(f"{prefix}.attn_t2i")
        yield from self.attn_i2t.named_params(f"{prefix}.attn_i2t")
        yield from self.mlp.named_params(f"{prefix}.mlp")
        for name in ("norm1_scale", "norm1_shift", "norm2_scale", "norm2_shift",
                     "norm3_scale", "norm3_shift"):
            yield f"{prefix}.{name}", getattr(self, name)


class Decoder:
    def __init__(self, cfg: DecoderConfig, rng):
        if cfg.stages == 0:
            raise ValueError("DecoderConfig.stages unresolved; call resolve_stages first")
        self.cfg = cfg
        c = cfg.embed_dim
        self.output_token = _normal(rng, (1, c))
        self.blocks = [TwoWayBlock(c, cfg.heads, cfg.mlp_ratio, rng) for _ in range(2)]
        self.ups = []
        ch = c
        for k in range(cfg.stages):
            out_ch = max(c // 2 ** (k + 1), cfg.min_channels)
            self.ups.append(DeltaConvTranspose(ch, out_ch, rng))
            ch = out_ch
        self.head_w1 = _normal(rng, (c, c))
        self.head_b1 = _zeros((c,))
        self.head_w2 = _normal(rng, (c, ch))
        self.head_b2 = _zeros((ch,))
        self.out_channels = ch

    def decode(self, embedding, deltas=True):
        """Image embedding (B, c, g, g) -> mask logits (B, 1, H, W)."""
        cfg = self.cfg
        b, c, gh, gw = embedding.shape
        if c != cfg.embed_dim or gh != cfg.grid or gw != cfg.grid:
            raise ValueError(
                f"decoder expects embedding (B, {cfg.embed_dim}, {cfg.grid}, {cfg.grid}), got {embedding.shape}"
            )
        n = gh * gw
        img = ops.transpose(ops.reshape(embedding, (b, c, n)), (0, 2, 1))
        tokens = ops.add(Tensor(np.zeros((b, 1, c), dtype=np.float32)),
                         ops.reshape(self.output_token, (1, 1, c)))
        for block in self.blocks:
            tokens, img = block.forward(tokens, img)
        x = ops.reshape(ops.transpose(img, (0, 2, 1)), (b, c, gh, gw))
        for up in self.ups:
            x = ops.gelu(up.forward(x, deltas=deltas))
        h = gh * 2 ** cfg.stages
        w = gw * 2 ** cfg.stages
        hvec = ops.linear(ops.gelu(ops.linear(ops.reshape(tokens, (b, c)),
                                              self.head_w1, self.head_b1)),
                          self.head_w2, self.head_b2)
        feats = ops.transpose(ops.reshape(x, (b, self.out_channels, h * w)), (0, 2, 1))
        logits = ops.matmul(feats, ops.reshape(hvec, (b, self.out_channels, 1)))
        return ops.reshape(logits, (b, 1, h, w))

    def named_params(self, prefix="decoder"):
        yield f"{prefix}.output_token", self.output_token
        for i, block in enumerate(self.blocks):
            yield from block.named_params(f"{prefix}.blocks.{i}")
        for i, up in enumerate(self.ups):
            yield from up.named_params(f"{prefix}.ups.{i}")
        for name in ("head_w1", "head_b1", "head_w2", "head_b2"):
            yield f"{prefix}.{name}", getattr(self, name)

    def delta_params(self, prefix="decoder"):
        for i, up in enumerate(self.ups):
            yield from up.delta_params(f"{prefix}.ups.{i}")

    def freeze_for_finetune(self):
        """Only the conv deltas and the output token stay trainable."""
        keep = {id(t) for _, t in self.delta_params()}
        keep.add(id(self.output_token))
        for _, t in self.named_params():
            t.trainable = id(t) in keep


def reg_loss(decoder: Decoder, lambda_p):
    """lambda_p * sum of squared entries over all delta tensors."""
    total = None
    for _, d in decoder.delta_params():
        term = ops.sum(ops.square(d))
        total = term if total is None else ops.add(total, term)
    return ops.mul(total, float(lambda_p))


def total_loss(logits, target, decoder: Decoder, cfg: LossConfig):
    """Base BCE-with-logits plus the delta regularizer."""
    cfg.validate()
    return ops.add(ops.bce_with_logits(logits, target), reg_loss(decoder, cfg.lambda_p))
