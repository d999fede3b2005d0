"""Assembled encoder-decoder model, parameter accounting, checkpoints.

Checkpoint format: a JSON manifest (config echo plus a tensor directory of
name/shape/trainable/byte offset) next to a raw little-endian float32
payload. Round trips are bit-exact.
"""

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor, ops
from .decoder import Decoder, DecoderConfig
from .encoder import Encoder, EncoderConfig

CHECKPOINT_FORMAT = 1


@dataclass
class ModelConfig:
    image_size: int = 64
    patch_size: int = 8
    embed_dim: int = 64
    depth: int = 4
    heads: int = 4
    mlp_ratio: float = 4.0
    adapter_dim: int = 0  # 0 -> embed_dim // 16
    balance: float = 0.5
    m_slices: int = 5
    dec_heads: int = 4
    dec_mlp_ratio: float = 4.0
    dec_stages: int = 0  # 0 -> log2(patch_size)

    def encoder_config(self):
        return EncoderConfig(
            image_size=self.image_size,
            patch_size=self.patch_size,
            embed_dim=self.embed_dim,
            depth=self.depth,
            heads=self.heads,
            mlp_ratio=self.mlp_ratio,
            adapter_dim=self.adapter_dim,
            balance=self.balance,
            in_channels=self.m_slices,
        )

    def decoder_config(self):
        cfg = DecoderConfig(
            embed_dim=self.embed_dim,
            grid=self.image_size // self.patch_size,
            heads=self.dec_heads,
            mlp_ratio=self.dec_mlp_ratio,
            stages=self.dec_stages,
        )
        cfg.resolve_stages(self.patch_size)
        return cfg


class Model:
    def __init__(self, cfg: ModelConfig, seed=0):
        self.cfg = cfg
        rng = np.random.default_rng([seed, 0xFA17])
        self.encoder = Encoder(cfg.encoder_config(), rng)
        self.decoder = Decoder(cfg.decoder_config(), rng)

    def forward(self, x, adapters=True, deltas=True, balance=None):
        """Slice stack batch (B, M, H, W) -> mask logits Tensor (B, 1, H, W)."""
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=np.float32))
        emb = self.encoder.forward(x, adapters=adapters, balance=balance)
        return self.decoder.decode(emb, deltas=deltas)

    def predict_proba(self, x):
        """Fault probabilities in [0, 1], no graph kept."""
        return ops.sigmoid(self.forward(x)).data

    def named_params(self):
        yield from self.encoder.named_params("encoder")
        yield from self.decoder.named_params("decoder")

    def trainable_params(self):
        return [(n, t) for n, t in self.named_params() if t.trainable]

    def adapted_params(self):
        """The parameters that fine-tuning updates."""
        out = list(self.encoder.adapter_params("encoder"))
        out.extend(self.decoder.delta_params("decoder"))
        out.append(("decoder.output_token", self.decoder.output_token))
        return out

    def freeze_for_finetune(self):
        self.encoder.freeze_backbone()
        self.decoder.freeze_for_finetune()

    def unfreeze_all(self):
        for _, t in self.named_params():
            t.trainable = True

    def count_params(self):
        """(trainable, frozen, trainable fraction) by exact enumeration."""
        trainable = frozen = 0
        for _, t in self.named_params():
            if t.trainable:
                trainable += t.data.size
            else:
                frozen += t.data.size
        total = trainable + frozen
        return trainable, frozen, trainable / total if total else 0.0

    def frozen_checksums(self):
        return {
            name: hashlib.sha256(t.data.tobytes()).hexdigest()
            for name, t in self.named_params()
            if not t.trainable
        }

    # ------------------------------------------------------------ checkpoint

    def save_checkpoint(self, path):
        path = Path(path)
        if path.suffix == ".json":
            path = path.with_suffix("")
        manifest_path = path.with_suffix(".json")
        payload_path = path.with_suffix(".bin")
        entries = []
        offset = 0
        chunks = []
        for name, t in self.named_params():
            raw = np.ascontiguousarray(t.data.astype("<f4", copy=False)).tobytes()
            entries.append(
                {
                    "name": name,
                    "shape": list(t.data.shape),
                    "trainable": bool(t.trainable),
                    "offset": offset,
                }
            )
            chunks.append(raw)
            offset += len(raw)
        manifest = {
            "format": CHECKPOINT_FORMAT,
            "config": asdict(self.cfg),
            "dtype": "f32",
            "endianness": "little",
            "payload": payload_path.name,
            "tensors": entries,
        }
        manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
        payload_path.write_bytes(b"".join(chunks))
        return manifest_path

    @classmethod
    def load_checkpoint(cls, path):
        path = Path(path)
        if path.suffix == ".json":
            path = path.with_suffix("")
        manifest = json.loads(path.with_suffix(".json").read_text())
        if manifest.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {manifest.get('format')}")
        cfg = ModelConfig(**manifest["config"])
        model = cls(cfg, seed=0)
        payload = path.with_suffix(".bin").read_bytes()
        params = dict(model.named_params())
        seen = set()
        for entry in manifest["tensors"]:
            name = entry["name"]
            if name not in params:
                raise ValueError(f"checkpoint tensor {name!r} not present in model")
            t = params[name]
            shape = tuple(entry["shape"])
            if t.data.shape != shape:
                raise ValueError(
                    f"checkpoint tensor {name!r} shape {shape} != model shape {t.data.shape}"
                )
            n = int(np.prod(shape)) * 4
            raw = payload[entry["offset"] : entry["offset"] + n]
            if len(raw) != n:
                raise ValueError(f"checkpoint payload truncated at tensor {name!r}")
            t.data = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
            t.trainable = bool(entry["trainable"])
            seen.add(name)
        missing = sorted(set(params) - seen)
        if missing:
            raise ValueError(f"checkpoint missing tensors: {missing}")
        return model


def config_mismatches(cfg: ModelConfig, other: ModelConfig):
    """Field names on which two model configs disagree."""
    a, b = asdict(cfg), asdict(other)
    return sorted(k for k in a if a[k] != b[k])
