"""Synthetic 3D seismic volumes with planar faults and exact binary masks.

Pipeline: layered 1D reflectivity, smooth sinusoidal folding, planar fault
shear with vertical throw, Ricker wavelet convolution along depth,
normalization, additive Gaussian noise. The whole displacement field is
evaluated in final coordinates in one pass, so the fault mask (voxels within
one voxel of a fault plane) marks exactly the displacement discontinuities.

Axes are (inline, crossline, depth) = (I, X, T) throughout.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage


class Volume:
    """Dense amplitude grid, float32, axes (I, X, T)."""

    __slots__ = ("amplitudes",)

    def __init__(self, amplitudes):
        arr = np.ascontiguousarray(amplitudes, dtype=np.float32)
        if arr.ndim != 3:
            raise ValueError(f"volume must be 3D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("volume contains non-finite amplitudes")
        self.amplitudes = arr

    @property
    def dims(self):
        return self.amplitudes.shape


class MaskVolume:
    """Binary fault labels matching a Volume, uint8, values in {0, 1}."""

    __slots__ = ("labels",)

    def __init__(self, labels):
        arr = np.ascontiguousarray(labels, dtype=np.uint8)
        if arr.ndim != 3:
            raise ValueError(f"mask must be 3D, got shape {arr.shape}")
        bad = np.setdiff1d(np.unique(arr), [0, 1])
        if bad.size:
            raise ValueError(f"mask labels must be binary, found values {bad.tolist()}")
        self.labels = arr

    @property
    def dims(self):
        return self.labels.shape


@dataclass
class SynthParams:
    dims: tuple = (64, 64, 64)
    n_layers: int = 24
    n_faults: int = 3
    dip_range: tuple = (55.0, 90.0)
    throw_range: tuple = (2.0, 5.0)
    fold_amplitude: float = 3.0
    wavelet_peak_frequency: float = 0.12
    noise_sigma: float = 0.05
    seed: int = 0

    def validate(self):
        if len(self.dims) != 3:
            raise ValueError("dims must be (I, X, T)")
        if self.n_layers < 0 or self.n_faults < 0:
            raise ValueError("layer and fault counts must be >= 0")
        if self.n_faults > 0 and self.throw_range[0] < 1:
            raise ValueError("throw_range must be >= 1 voxel when faults are present")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.wavelet_peak_frequency <= 0:
            raise ValueError("wavelet_peak_frequency must be positive")


def ricker_wavelet(peak_frequency, dtype=np.float64):
    """Ricker wavelet sampled at unit spacing; peak_frequency in cycles/voxel."""
    half = max(2, int(math.ceil(3.0 / (math.pi * peak_frequency))))
    t = np.arange(-half, half + 1, dtype=np.float64)
    a = (math.pi * peak_frequency * t) ** 2
    return ((1.0 - 2.0 * a) * np.exp(-a)).astype(dtype)


def fault_plane_distance(dims, point, dip_deg, strike_deg):
    """Signed voxel distance of every voxel center to a planar fault.

    dip is measured from horizontal (90 = vertical plane), strike is the
    azimuth of the dip direction in the (I, X) plane.
    """
    i, x, t = dims
    dip = math.radians(dip_deg)
    az = math.radians(strike_deg)
    # unit normal; vertical plane has a horizontal normal
    n = np.array([math.sin(dip) * math.cos(az), math.sin(dip) * math.sin(az), math.cos(dip)])
    n[np.abs(n) < 1e-12] = 0.0  # snap axis-aligned planes exactly
    n /= np.linalg.norm(n)
    ii = np.arange(i, dtype=np.float64).reshape(-1, 1, 1)
    xx = np.arange(x, dtype=np.float64).reshape(1, -1, 1)
    tt = np.arange(t, dtype=np.float64).reshape(1, 1, -1)
    return n[0] * (ii - point[0]) + n[1] * (xx - point[1]) + n[2] * (tt - point[2])


def generate_volume(params: SynthParams):
    """Deterministic (Volume, MaskVolume) pair for the given parameters."""
    params.validate()
    i_dim, x_dim, t_dim = params.dims
    if min(params.dims) < 16:
        raise ValueError(f"dims must each be >= 16, got {params.dims}")
    rng = np.random.default_rng(params.seed)

    # layered reflectivity profile, padded so displaced lookups stay in range
    max_throw = params.throw_range[1] if params.n_faults > 0 else 0.0
    pad = int(math.ceil(params.fold_amplitude + max_throw)) + 4
    profile = np.zeros(t_dim + 2 * pad)
    if params.n_layers > 0:
        boundaries = np.sort(rng.uniform(0, len(profile), params.n_layers - 1)) if params.n_layers > 1 else []
        values = rng.uniform(-1.0, 1.0, params.n_layers)
        edges = np.concatenate(([0.0], boundaries, [len(profile)]))
        positions = np.arange(len(profile), dtype=np.float64)
        layer_of = np.searchsorted(edges, positions, side="right") - 1
        profile = values[np.clip(layer_of, 0, params.n_layers - 1)]

    # smooth sinusoidal fold, constant per (i, x) column
    ci, cx = rng.uniform(0.5, 1.5, 2)
    phase = rng.uniform(0, 2 * math.pi)
    ii = np.arange(i_dim, dtype=np.float64).reshape(-1, 1, 1)
    xx = np.arange(x_dim, dtype=np.float64).reshape(1, -1, 1)
    shift = params.fold_amplitude * np.sin(2 * math.pi * (ci * ii / i_dim + cx * xx / x_dim) + phase)
    shift = np.broadcast_to(shift, params.dims).copy()

    # planar faults: uniform throw on the positive side of each plane
    mask = np.zeros(params.dims, dtype=bool)
    for _ in range(params.n_faults):
        point = rng.uniform(0.25, 0.75, 3) * np.array(params.dims)
        dip = rng.uniform(*params.dip_range)
        strike = rng.uniform(0.0, 360.0)
        throw = rng.uniform(*params.throw_range) * rng.choice([-1.0, 1.0])
        dist = fault_plane_distance(params.dims, point, dip, strike)
        shift += np.where(dist > 0, throw, 0.0)
        mask |= np.abs(dist) < 1.0

    tt = np.arange(t_dim, dtype=np.float64).reshape(1, 1, -1)
    lookup = tt + shift + pad
    amplitudes = np.interp(lookup.ravel(), np.arange(len(profile), dtype=np.float64), profile)
    amplitudes = amplitudes.reshape(params.dims)

    wavelet = ricker_wavelet(params.wavelet_peak_frequency)
    amplitudes = ndimage.convolve1d(amplitudes, wavelet, axis=2, mode="nearest")

    std = amplitudes.std()
    if std > 1e-12:
        amplitudes = (amplitudes - amplitudes.mean()) / std
    if params.noise_sigma > 0:
        amplitudes = amplitudes + rng.normal(0.0, params.noise_sigma, params.dims)

    return Volume(amplitudes), MaskVolume(mask.astype(np.uint8))


def split_crosslines(n, fractions):
    """Contiguous train/val/test index ranges over n crosslines."""
    if len(fractions) != 3:
        raise ValueError("fractions must have three entries")
    if abs(sum(fractions) - 1.0) > 1e-6:
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)}")
    a = int(fractions[0] * n + 0.5)
    b = int((fractions[0] + fractions[1]) * n + 0.5)
    ranges = ((0, a), (a, b), (b, n))
    for lo, hi in ranges:
        if hi <= lo:
            raise ValueError(f"empty crossline range {lo}:{hi} from fractions {fractions}")
    return ranges


def split_dataset(volume: Volume, mask: MaskVolume, fractions):
    """Split one volume's crosslines into contiguous train/val/test ranges."""
    if volume.dims != mask.dims:
        raise ValueError(f"volume dims {volume.dims} != mask dims {mask.dims}")
    return split_crosslines(volume.dims[1], fractions)
