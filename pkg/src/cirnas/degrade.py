"""Degradation pipeline: Gaussian blur, Gaussian noise, a JPEG surrogate,
level <-> parameter maps, and the relative-ground-truth pair sampler.

All operators take and return 8-bit RGB arrays of shape [H, W, 3] and are
deterministic given an explicit seed. Degradations compose in the fixed
order blur -> noise -> jpeg.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import dctn, idctn
from scipy.ndimage import correlate1d

BLUR_KERNEL_SIZE = 21
R_MAX = 4.0
SIGMA_MAX = 50.0
Q_MIN, Q_MAX = 10, 100

# ITU-T T.81 Annex K quantization tables (luminance, chrominance).
LUMA_QTABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)

CHROMA_QTABLE = np.array([
    [17, 18, 24, 47, 99, 99, 99, 99],
    [18, 21, 26, 66, 99, 99, 99, 99],
    [24, 26, 56, 99, 99, 99, 99, 99],
    [47, 66, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
], dtype=np.float64)


class DegradationError(ValueError):
    pass


@dataclass(frozen=True)
class DegradationParams:
    """Physical degradation parameters: blur width r, noise std sigma,
    JPEG quality q (None means no compression)."""
    r: float
    sigma: float
    q: float | None

    def __post_init__(self):
        if not 0.0 <= self.r <= R_MAX:
            raise DegradationError(f"blur width out of range: {self.r}")
        if not 0.0 <= self.sigma <= SIGMA_MAX:
            raise DegradationError(f"noise std out of range: {self.sigma}")
        if self.q is not None and not Q_MIN <= self.q <= Q_MAX:
            raise DegradationError(f"jpeg quality out of range: {self.q}")


def _as_rgb8(img):
    a = np.asarray(img)
    if a.ndim != 3 or a.shape[2] != 3 or a.dtype != np.uint8:
        raise DegradationError(f"expected uint8 [H,W,3], got {a.dtype} {a.shape}")
    return a


def _clamp8(a):
    return np.clip(np.rint(a), 0, 255).astype(np.uint8)


def gaussian_kernel_1d(r: float, size: int = BLUR_KERNEL_SIZE):
    """Normalized 1-d Gaussian of std r on a `size`-tap support.
    r = 0 degenerates to a delta."""
    if r == 0:
        k = np.zeros(size)
        k[size // 2] = 1.0
        return k
    xs = np.arange(size) - size // 2
    k = np.exp(-(xs ** 2) / (2.0 * r * r))
    return k / k.sum()


def gaussian_blur(img, r: float):
    """21x21 Gaussian blur with reflect padding; r = 0 is an exact identity."""
    img = _as_rgb8(img)
    if not 0.0 <= r <= R_MAX:
        raise DegradationError(f"blur width out of range: {r}")
    if r == 0:
        return img.copy()
    k = gaussian_kernel_1d(r)
    x = img.astype(np.float64)
    x = correlate1d(x, k, axis=0, mode="reflect")
    x = correlate1d(x, k, axis=1, mode="reflect")
    return _clamp8(x)


def add_gaussian_noise(img, sigma: float, seed: int):
    """Add i.i.d. N(0, sigma^2) on the 0-255 scale, clamp and round."""
    img = _as_rgb8(img)
    if not 0.0 <= sigma <= SIGMA_MAX:
        raise DegradationError(f"noise std out of range: {sigma}")
    if sigma == 0:
        return img.copy()
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma, size=img.shape)
    return _clamp8(img.astype(np.float64) + noise)


def jpeg_quality_scale(q: float) -> float:
    """Conventional IJG quality-to-scale factor."""
    return 5000.0 / q if q < 50 else 200.0 - 2.0 * q


def scaled_qtable(base, q: float):
    t = np.floor((base * jpeg_quality_scale(q) + 50.0) / 100.0)
    return np.clip(t, 1, 255)


def _rgb_to_ycbcr(rgb):
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0
    cr = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0
    return np.stack([y, cb, cr], axis=-1)


def _ycbcr_to_rgb(ycc):
    y, cb, cr = ycc[..., 0], ycc[..., 1] - 128.0, ycc[..., 2] - 128.0
    r = y + 1.402 * cr
    g = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    return np.stack([r, g, b], axis=-1)


def _blockwise(chan, qtable):
    """Quantize/dequantize one channel through 8x8 orthonormal DCT blocks."""
    h, w = chan.shape
    ph, pw = (-h) % 8, (-w) % 8
    x = np.pad(chan, ((0, ph), (0, pw)), mode="edge") - 128.0
    hb, wb = x.shape[0] // 8, x.shape[1] // 8
    blocks = x.reshape(hb, 8, wb, 8).transpose(0, 2, 1, 3)
    coef = dctn(blocks, axes=(2, 3), norm="ortho")
    coef = np.rint(coef / qtable) * qtable
    rec = idctn(coef, axes=(2, 3), norm="ortho")
    out = rec.transpose(0, 2, 1, 3).reshape(hb * 8, wb * 8) + 128.0
    return out[:h, :w]


def jpeg_degrade(img, q: float | None, qtables=None):
    """JPEG surrogate: YCbCr, per-channel 8x8 DCT, Annex-K tables scaled by
    the IJG quality factor, no chroma subsampling. q = None is the identity.

    `qtables` overrides the (luma, chroma) tables, for tests."""
    img = _as_rgb8(img)
    if q is None:
        return img.copy()
    if not Q_MIN <= q <= Q_MAX:
        raise DegradationError(f"jpeg quality out of range: {q}")
    if qtables is None:
        qtables = (scaled_qtable(LUMA_QTABLE, q), scaled_qtable(CHROMA_QTABLE, q))
    ycc = _rgb_to_ycbcr(img.astype(np.float64))
    out = np.empty_like(ycc)
    for ch in range(3):
        out[..., ch] = _blockwise(ycc[..., ch], qtables[0] if ch == 0 else qtables[1])
    return _clamp8(_ycbcr_to_rgb(out))


# -- level vector <-> physical parameters ----------------------------------

def level_to_params(l) -> DegradationParams:
    """Linear map from [0,1]^3 levels (blur, noise, jpeg) to physical
    parameters; jpeg level 0 means uncompressed."""
    l = np.asarray(l, dtype=np.float64)
    if l.shape != (3,) or np.any(l < 0) or np.any(l > 1):
        raise DegradationError(f"level vector out of range: {l}")
    q = None if l[2] == 0 else 100.0 - 90.0 * l[2]
    return DegradationParams(r=R_MAX * l[0], sigma=SIGMA_MAX * l[1], q=q)


def params_to_level(p: DegradationParams):
    lq = 0.0 if p.q is None else (100.0 - p.q) / 90.0
    return np.array([p.r / R_MAX, p.sigma / SIGMA_MAX, lq])


def degrade(img, level, seed: int):
    """Apply blur -> noise -> jpeg sequentially at the given level vector."""
    p = level_to_params(level)
    out = gaussian_blur(img, p.r)
    out = add_gaussian_noise(out, p.sigma, seed)
    return jpeg_degrade(out, p.q)


# -- training-pair sampling -------------------------------------------------

# per-type level grid strides, derived from the physical strides
# (r: 0.1, sigma: 1, q: 2) through the linear level map
LEVEL_STRIDES = (0.1 / R_MAX, 1.0 / SIGMA_MAX, 2.0 / 90.0)


def snap_level(l):
    """Snap each component to its training stride; jpeg level 0 stays 0
    (the uncompressed level is its own grid point)."""
    l = np.asarray(l, dtype=np.float64)
    out = np.empty(3)
    for d in range(3):
        out[d] = np.clip(round(l[d] / LEVEL_STRIDES[d]) * LEVEL_STRIDES[d], 0.0, 1.0)
    return out


@dataclass
class SamplePair:
    input_img: np.ndarray
    target_img: np.ndarray
    task: np.ndarray  # t = l_in - l_gt, componentwise
    source_id: str
    level_in: np.ndarray
    level_gt: np.ndarray
    seed: int
    strategy: int  # which of the three sampling strategies produced it

    def provenance(self) -> dict:
        return {
            "source_id": self.source_id,
            "level_in": [float(v) for v in self.level_in],
            "level_gt": [float(v) for v in self.level_gt],
            "task": [float(v) for v in self.task],
            "seed": self.seed,
            "strategy": self.strategy,
        }


def _draw_levels(rng, strategy: int, active=(0, 1, 2)):
    """Draw an input-level vector per one of the three strategies:
    0) one type active, uniform level; 1) all types, binary {0, max};
    2) all types, uniform. `active` restricts which types participate."""
    active = list(active)
    l = np.zeros(3)
    if strategy == 0:
        l[active[rng.integers(len(active))]] = rng.uniform(0, 1)
    elif strategy == 1:
        l[active] = rng.integers(0, 2, size=len(active)).astype(np.float64)
    else:
        l[active] = rng.uniform(0, 1, size=len(active))
    return l


def sample_training_pair(clean_img, mode: str, rng, source_id: str = "",
                         strategy: int | None = None,
                         active_types=None) -> SamplePair:
    """Draw a degraded input/target pair with its task vector.

    In relative mode the target is itself degraded at l_gt <= l_in and
    t = l_in - l_gt; in absolute mode l_gt = 0 and t = l_in. Strategy is
    drawn uniformly from the three samplers unless pinned. `active_types`
    restricts degradation to a subset of (blur, noise, jpeg) indices."""
    if mode not in ("absolute", "relative"):
        raise DegradationError(f"unknown sampling mode: {mode}")
    if strategy is None:
        strategy = int(rng.integers(3))
    l_in = _draw_levels(rng, strategy,
                        active=(0, 1, 2) if active_types is None else active_types)
    if mode == "relative":
        l_gt = np.array([rng.uniform(0, l) if l > 0 else 0.0 for l in l_in])
    else:
        l_gt = np.zeros(3)
    l_in = snap_level(l_in)
    l_gt = snap_level(np.minimum(l_gt, l_in))
    seed_in = int(rng.integers(2 ** 31))
    seed_gt = int(rng.integers(2 ** 31))
    return SamplePair(
        input_img=degrade(clean_img, l_in, seed_in),
        target_img=degrade(clean_img, l_gt, seed_gt),
        task=l_in - l_gt,
        source_id=source_id,
        level_in=l_in,
        level_gt=l_gt,
        seed=seed_in,
        strategy=strategy,
    )


# -- desk-scale procedural clean images -------------------------------------

def procedural_image(kind: str, size: int, seed: int) -> np.ndarray:
    """Deterministic synthetic clean image: gradient, checkerboard, or a
    field of Gaussian blobs."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / (size - 1)
    if kind == "gradient":
        a, b = rng.uniform(0.2, 1.0, 2)
        chans = [255 * np.clip(a * xx + b * yy * rng.uniform(0.3, 1.0), 0, 1)
                 for _ in range(3)]
    elif kind == "checker":
        cells = int(rng.integers(3, 9))
        base = ((np.floor(yy * cells) + np.floor(xx * cells)) % 2)
        chans = [255 * (0.15 + 0.7 * base * rng.uniform(0.5, 1.0)) for _ in range(3)]
    elif kind == "blobs":
        img = np.full((size, size), 0.2)
        for _ in range(int(rng.integers(4, 10))):
            cy, cx = rng.uniform(0, 1, 2)
            s = rng.uniform(0.03, 0.2)
            img = img + rng.uniform(0.2, 0.8) * np.exp(
                -((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
        chans = [255 * np.clip(img * rng.uniform(0.6, 1.0), 0, 1) for _ in range(3)]
    else:
        raise DegradationError(f"unknown procedural kind: {kind}")
    return _clamp8(np.stack(chans, axis=-1))


def procedural_corpus(count: int, size: int, seed: int):
    """A list of (id, image) clean pairs cycling through the kinds."""
    kinds = ("gradient", "checker", "blobs")
    out = []
    for i in range(count):
        kind = kinds[i % len(kinds)]
        out.append((f"{kind}-{i:03d}", procedural_image(kind, size, seed + i)))
    return out


def write_manifest(path, pairs):
    """One provenance record per line (JSON lines)."""
    with open(path, "w") as f:
        for p in pairs:
            f.write(json.dumps(p.provenance()) + "\n")
