"""ViT image encoder with two residual bottleneck adapters per block.

The backbone (patch embedding, positional embedding, attention, MLP, norms)
is frozen after pretraining; only the adapters train. Each adapter is
x + relu(layer_norm(x) @ W_down + b_down) @ W_up + b_up with W_up and b_up
zero-initialized, so an untouched adapter is an exact identity and the
adapted model starts from the frozen model's function.

Per block: adapter_1 wraps the block input before the first norm; adapter_2
(without its outer residual) runs parallel to the MLP on the second-norm
output, scaled by the balance factor s.
"""

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, ops


@dataclass
class EncoderConfig:
    image_size: int = 64
    patch_size: int = 8
    embed_dim: int = 64
    depth: int = 4
    heads: int = 4
    mlp_ratio: float = 4.0
    adapter_dim: int = 0  # 0 means embed_dim // 16
    balance: float = 0.5
    in_channels: int = 5  # M adjacent slices

    def __post_init__(self):
        if self.adapter_dim == 0:
            self.adapter_dim = max(1, self.embed_dim // 16)

    def validate(self):
        if self.image_size % self.patch_size != 0:
            raise ValueError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}"
            )
        if not self.adapter_dim < self.embed_dim:
            raise ValueError("adapter_dim must be smaller than embed_dim")
        if not 0.0 < self.balance <= 1.0:
            raise ValueError("balance factor must be in (0, 1]")
        if self.embed_dim % self.heads != 0:
            raise ValueError("embed_dim must be divisible by heads")
        if self.in_channels < 1 or self.in_channels % 2 == 0:
            raise ValueError("in_channels (M) must be odd and >= 1")

    @property
    def grid(self):
        return self.image_size // self.patch_size

    @property
    def tokens(self):
        return self.grid * self.grid


def _normal(rng, shape, std=0.02):
    return Tensor(rng.normal(0.0, std, shape).astype(np.float32), trainable=True)


def _kaiming(rng, shape, fan_in):
    bound = math.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, shape).astype(np.float32), trainable=True)


def _zeros(shape):
    return Tensor(np.zeros(shape, dtype=np.float32), trainable=True)


def _ones(shape):
    return Tensor(np.ones(shape, dtype=np.float32), trainable=True)


class Adapter:
    """Residual bottleneck: down-project, relu, up-project (zero-init)."""

    def __init__(self, c, d, rng):
        self.norm_scale = _ones((c,))
        self.norm_shift = _zeros((c,))
        self.w_down = _kaiming(rng, (c, d), fan_in=c)
        self.b_down = _zeros((d,))
        self.w_up = _zeros((d, c))
        self.b_up = _zeros((c,))

    def core(self, x):
        """The bottleneck path alone, no outer residual."""
        h = ops.layer_norm(x, self.norm_scale, self.norm_shift)
        h = ops.relu(ops.linear(h, self.w_down, self.b_down))
        return ops.linear(h, self.w_up, self.b_up)

    def forward(self, x):
        return ops.add(x, self.core(x))

    def named_params(self, prefix):
        yield f"{prefix}.norm_scale", self.norm_scale
        yield f"{prefix}.norm_shift", self.norm_shift
        yield f"{prefix}.w_down", self.w_down
        yield f"{prefix}.b_down", self.b_down
        yield f"{prefix}.w_up", self.w_up
        yield f"{prefix}.b_up", self.b_up


class Attention:
    def __init__(self, c, heads, rng):
        self.heads = heads
        self.wq, self.wk, self.wv, self.wo = (_normal(rng, (c, c)) for _ in range(4))
        self.bq, self.bk, self.bv, self.bo = (_zeros((c,)) for _ in range(4))

    def forward(self, q_src, kv_src=None):
        kv_src = q_src if kv_src is None else kv_src
        return ops.multi_head_attention(
            q_src, kv_src,
            self.wq, self.bq, self.wk, self.bk, self.wv, self.bv, self.wo, self.bo,
            self.heads,
        )

    def named_params(self, prefix):
        for name in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"):
            yield f"{prefix}.{name}", getattr(self, name)


class Mlp:
    def __init__(self, c, hidden, rng):
        self.w1 = _normal(rng, (c, hidden))
        self.b1 = _zeros((hidden,))
        self.w2 = _normal(rng, (hidden, c))
        self.b2 = _zeros((c,))

    def forward(self, x):
        return ops.linear(ops.gelu(ops.linear(x, self.w1, self.b1)), self.w2, self.b2)

    def named_params(self, prefix):
        for name in ("w1", "b1", "w2", "b2"):
            yield f"{prefix}.{name}", getattr(self, name)


class Block:
    def __init__(self, cfg: EncoderConfig, rng):
        c = cfg.embed_dim
        self.balance = cfg.balance
        self.norm1_scale, self.norm1_shift = _ones((c,)), _zeros((c,))
        self.norm2_scale, self.norm2_shift = _ones((c,)), _zeros((c,))
        self.attn = Attention(c, cfg.heads, rng)
        self.mlp = Mlp(c, int(c * cfg.mlp_ratio), rng)
        self.adapter1 = Adapter(c, cfg.adapter_dim, rng)
        self.adapter2 = Adapter(c, cfg.adapter_dim, rng)

    def forward(self, x, adapters=True, balance=None):
        s = self.balance if balance is None else balance
        x1 = self.adapter1.forward(x) if adapters else x
        x2 = ops.add(x1, self.attn.forward(ops.layer_norm(x1, self.norm1_scale, self.norm1_shift)))
        n2 = ops.layer_norm(x2, self.norm2_scale, self.norm2_shift)
        out = ops.add(x2, self.mlp.forward(n2))
        if adapters and s != 0.0:
            out = ops.add(out, ops.mul(self.adapter2.core(n2), s))
        return out

    def adapter_branch(self, x, balance=None):
        """The s-scaled adapter_2 contribution for a given block input."""
        s = self.balance if balance is None else balance
        x1 = self.adapter1.forward(x)
        x2 = ops.add(x1, self.attn.forward(ops.layer_norm(x1, self.norm1_scale, self.norm1_shift)))
        n2 = ops.layer_norm(x2, self.norm2_scale, self.norm2_shift)
        return ops.mul(self.adapter2.core(n2), s)

    def named_params(self, prefix):
        yield f"{prefix}.norm1_scale", self.norm1_scale
        yield f"{prefix}.norm1_shift", self.norm1_shift
        yield f"{prefix}.norm2_scale", self.norm2_scale
        yield f"{prefix}.norm2_shift", self.norm2_shift
        yield from self.attn.named_params(f"{prefix}.attn")
        yield from self.mlp.named_params(f"{prefix}.mlp")
        yield from self.adapter1.named_params(f"{prefix}.adapter1")
        yield from self.adapter2.named_params(f"{prefix}.adapter2")


class Encoder:
    def __init__(self, cfg: EncoderConfig, rng):
        cfg.validate()
        self.cfg = cfg
        c, p, m = cfg.embed_dim, cfg.patch_size, cfg.in_channels
        self.patch_w = _kaiming(rng, (c, m, p, p), fan_in=m * p * p)
        self.patch_b = _zeros((c,))
        self.pos_embed = _normal(rng, (cfg.tokens, c))
        self.blocks = [Block(cfg, rng) for _ in range(cfg.depth)]

    def forward(self, x, adapters=True, balance=None):
        """x: Tensor (B, M, H, W) -> image embedding (B, c, H/p, W/p)."""
        cfg = self.cfg
        b = x.shape[0]
        if x.shape[1] != cfg.in_channels or x.shape[2] != cfg.image_size or x.shape[3] != cfg.image_size:
            raise ValueError(
                f"encoder expects (B, {cfg.in_channels}, {cfg.image_size}, {cfg.image_size}), got {x.shape}"
            )
        g, c = cfg.grid, cfg.embed_dim
        tok = ops.conv2d(x, self.patch_w, self.patch_b, stride=cfg.patch_size)
        tok = ops.reshape(tok, (b, c, g * g))
        tok = ops.transpose(tok, (0, 2, 1))
        tok = ops.add(tok, self.pos_embed)
        for block in self.blocks:
            tok = block.forward(tok, adapters=adapters, balance=balance)
        emb = ops.transpose(tok, (0, 2, 1))
        return ops.reshape(emb, (b, c, g, g))

    def named_params(self, prefix="encoder"):
        yield f"{prefix}.patch_w", self.patch_w
        yield f"{prefix}.patch_b", self.patch_b
        yield f"{prefix}.pos_embed", self.pos_embed
        for i, block in enumerate(self.blocks):
            yield from block.named_params(f"{prefix}.blocks.{i}")

    def adapter_params(self, prefix="encoder"):
        for i, block in enumerate(self.blocks):
            yield from block.adapter1.named_params(f"{prefix}.blocks.{i}.adapter1")
            yield from block.adapter2.named_params(f"{prefix}.blocks.{i}.adapter2")

    def freeze_backbone(self):
        """Freeze everything except the adapters. Idempotent."""
        adapter_ids = {id(t) for _, t in self.adapter_params()}
        for _, t in self.named_params():
            t.trainable = id(t) in adapter_ids
