"""Volume persistence, 2.5D slice stacks, and prior-based augmentation.

Slice stacks merge M adjacent crossline slices into the channel dimension;
the supervision target is the central slice's fault mask. Slices are stored
as (depth, inline) images so that a horizontal flip mirrors the section the
way the geology argument wants (fault dip direction reverses) and an affine
warp acts on the section plane.

Volume files are a JSON sidecar header plus a raw little-endian payload,
bit-exact and language-neutral. Sample manifests are line-delimited JSON.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .synth import MaskVolume, Volume

_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}


# ------------------------------------------------------------------ file I/O


def _paths(path):
    p = Path(path)
    if p.suffix == ".json":
        p = p.with_suffix("")
    return p.with_suffix(".json"), p.with_suffix(".raw")


def save_volume(vol, path):
    """Write <path>.json + <path>.raw; accepts Volume or MaskVolume."""
    header_path, raw_path = _paths(path)
    if isinstance(vol, Volume):
        arr, tag = vol.amplitudes, "f32"
    elif isinstance(vol, MaskVolume):
        arr, tag = vol.labels, "u8"
    else:
        raise TypeError(f"cannot save object of type {type(vol).__name__}")
    header = {
        "dims": list(arr.shape),
        "dtype": tag,
        "order": "IXT",
        "endianness": "little",
    }
    header_path.write_text(json.dumps(header, indent=2) + "\n")
    raw_path.write_bytes(np.ascontiguousarray(arr.astype(_DTYPES[tag], copy=False)).tobytes())
    return header_path


def load_volume(path):
    """Read a volume pair back; returns Volume for f32, MaskVolume for u8."""
    header_path, raw_path = _paths(path)
    header = json.loads(header_path.read_text())
    tag = header.get("dtype")
    if tag not in _DTYPES:
        raise ValueError(f"{header_path}: unknown dtype tag {tag!r}")
    if header.get("endianness", "little") != "little":
        raise ValueError(f"{header_path}: unsupported endianness {header['endianness']!r}")
    dims = tuple(int(d) for d in header["dims"])
    dtype = _DTYPES[tag]
    expected = int(np.prod(dims)) * dtype.itemsize
    payload = raw_path.read_bytes()
    if len(payload) != expected:
        raise ValueError(
            f"{raw_path}: payload size mismatch, expected {expected} bytes for dims {dims}, got {len(payload)}"
        )
    arr = np.frombuffer(payload, dtype=dtype).reshape(dims)
    if tag == "f32":
        return Volume(arr)
    return MaskVolume(arr)


# -------------------------------------------------------------- slice stacks


@dataclass
class SliceStack:
    """One 2.5D sample: M adjacent slices as channels + central-slice mask."""

    channels: np.ndarray  # (M, H, W) float32
    target: np.ndarray  # (H, W) uint8
    meta: dict = field(default_factory=dict)

    @property
    def m(self):
        return self.channels.shape[0]


def extract_stack(volume: Volume, mask: MaskVolume, i, m):
    """Stack slices i-(m-1)/2 .. i+(m-1)/2 (edge-clamped) as channels."""
    if m < 1 or m % 2 == 0:
        raise ValueError(f"M must be odd and >= 1, got {m}")
    x_dim = volume.dims[1]
    if volume.dims != mask.dims:
        raise ValueError(f"volume dims {volume.dims} != mask dims {mask.dims}")
    if not 0 <= i < x_dim:
        raise ValueError(f"crossline {i} out of range [0, {x_dim})")
    half = (m - 1) // 2
    idx = np.clip(np.arange(i - half, i + half + 1), 0, x_dim - 1)
    # (I, T) slices transposed to (depth, inline) images
    channels = np.ascontiguousarray(
        volume.amplitudes[:, idx, :].transpose(1, 2, 0), dtype=np.float32
    )
    target = np.ascontiguousarray(mask.labels[:, i, :].T)
    return SliceStack(channels, target, {"crossline": int(i), "m": int(m)})


# -------------------------------------------------------------- augmentation


@dataclass
class AugmentParams:
    p_hflip: float = 0.5
    rotate_range: float = 10.0  # degrees
    scale_range: tuple = (0.9, 1.1)
    translate_range: float = 0.1  # fraction of H/W
    seed: int = 0

    def validate(self):
        if not 0.0 <= self.p_hflip <= 1.0:
            raise ValueError("p_hflip must be in [0, 1]")
        if self.scale_range[0] <= 0:
            raise ValueError("scale_range must be positive")


def hflip(sample: SliceStack):
    """Mirror all channels and the target along W; metadata preserved."""
    return SliceStack(
        np.ascontiguousarray(sample.channels[:, :, ::-1]),
        np.ascontiguousarray(sample.target[:, ::-1]),
        dict(sample.meta),
    )


def _affine_matrix(h, w, angle_deg, scale, tx, ty):
    """Inverse map (input = M @ output + offset) about the image center."""
    theta = np.deg2rad(angle_deg)
    c, s = np.cos(theta), np.sin(theta)
    fwd = scale * np.array([[c, -s], [s, c]])
    inv = np.linalg.inv(fwd)
    center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    shift = np.array([ty, tx])
    offset = center - inv @ (center + shift)
    return inv, offset


def random_affine(sample: SliceStack, params: AugmentParams, rng):
    """Same rotation/scale/translation for every channel and the target.

    Channels are resampled bilinearly, the target nearest-neighbor and
    re-binarized; out-of-frame pixels are 0.
    """
    params.validate()
    h, w = sample.target.shape
    angle = rng.uniform(-params.rotate_range, params.rotate_range)
    scale = rng.uniform(*params.scale_range)
    tx = rng.uniform(-params.translate_range, params.translate_range) * w
    ty = rng.uniform(-params.translate_range, params.translate_range) * h
    return apply_affine(sample, angle, scale, tx, ty)


def apply_affine(sample: SliceStack, angle_deg, scale, tx, ty):
    if angle_deg == 0.0 and scale == 1.0 and tx == 0.0 and ty == 0.0:
        return SliceStack(sample.channels.copy(), sample.target.copy(), dict(sample.meta))
    h, w = sample.target.shape
    matrix, offset = _affine_matrix(h, w, angle_deg, scale, tx, ty)
    channels = np.stack(
        [
            ndimage.affine_transform(ch, matrix, offset=offset, order=1, mode="constant", cval=0.0)
            for ch in sample.channels.astype(np.float64)
        ]
    ).astype(np.float32)
    warped = ndimage.affine_transform(
        sample.target.astype(np.float64), matrix, offset=offset, order=0, mode="constant", cval=0.0
    )
    target = (warped > 0.5).astype(np.uint8)
    return SliceStack(np.ascontiguousarray(channels), target, dict(sample.meta))


def augment(sample: SliceStack, params: AugmentParams, rng, mode="all"):
    """Apply the enabled augmentations; draw order is fixed for determinism."""
    if mode not in ("none", "hflip", "affine", "all"):
        raise ValueError(f"unknown augmentation mode {mode!r}")
    out = sample
    if mode in ("hflip", "all"):
        if rng.uniform() < params.p_hflip:
            out = hflip(out)
    if mode in ("affine", "all"):
        out = random_affine(out, params, rng)
    return out


# ------------------------------------------------------------------ manifest


def write_manifest(path, records):
    """records: iterable of {volume, crossline, split} dicts."""
    path = Path(path)
    with path.open("w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return path


def read_manifest(path):
    records = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            records.append(json.loads(line))
    return records


class SliceDataset:
    """Manifest-driven sample access over a directory of volume pairs."""

    def __init__(self, data_dir, split, m):
        self.data_dir = Path(data_dir)
        self.m = m
        records = [r for r in read_manifest(self.data_dir / "manifest.jsonl") if r["split"] == split]
        if not records:
            raise ValueError(f"no {split!r} samples in {self.data_dir}")
        self.records = records
        self._cache = {}

    def __len__(self):
        return len(self.records)

    def _load(self, name):
        if name not in self._cache:
            vol = load_volume(self.data_dir / name)
            msk = load_volume(self.data_dir / f"{name}_mask")
            self._cache[name] = (vol, msk)
        return self._cache[name]

    def sample(self, idx):
        rec = self.records[idx]
        vol, msk = self._load(rec["volume"])
        stack = extract_stack(vol, msk, rec["crossline"], self.m)
        stack.meta["volume"] = rec["volume"]
        return stack
