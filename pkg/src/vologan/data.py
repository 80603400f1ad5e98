"""RGB-D sample I/O, scaling, augmentation and a procedural two-domain toy dataset.

Raw samples hold 8-bit RGB and float32 depth in [-1, 1] (background -1).
Scaled samples are float32 arrays of shape (4, h, w) in [0, 1], channel
order r, g, b, d, with background exactly 0 in every channel.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy import ndimage

VRGD_MAGIC = b"VRGD"
VRGD_VERSION = 1
_HEADER = struct.Struct("<4sIII")


class SampleFormatError(ValueError):
    pass


class BadMagicError(SampleFormatError):
    pass


class TruncatedPayloadError(SampleFormatError):
    pass


class SizeMismatchError(SampleFormatError):
    pass


@dataclass
class RawSample:
    rgb: np.ndarray  # (h, w, 3) uint8
    depth: np.ndarray  # (h, w) float32

    def __post_init__(self):
        self.rgb = np.asarray(self.rgb)
        self.depth = np.asarray(self.depth, dtype=np.float32)
        if self.rgb.dtype != np.uint8 or self.rgb.ndim != 3 or self.rgb.shape[2] != 3:
            raise ValueError(f"rgb must be (h, w, 3) uint8, got {self.rgb.shape} {self.rgb.dtype}")
        if self.depth.shape != self.rgb.shape[:2]:
            raise ValueError(f"depth shape {self.depth.shape} does not match rgb {self.rgb.shape[:2]}")

    @property
    def size(self) -> tuple[int, int]:
        return self.depth.shape

    def check_invariants(self) -> None:
        """Raise if depth leaves [-1, 1] or a background pixel carries colour."""
        if self.depth.min() < -1 or self.depth.max() > 1:
            raise ValueError("depth outside [-1, 1]")
        background = self.depth == -1
        if np.any(self.rgb[background] != 0):
            raise ValueError("background pixels must have zero rgb")


# -- scaling --------------------------------------------------------------------------

def scale_rgb(rgb: np.ndarray) -> np.ndarray:
    """uint8 range onto [0, 1]."""
    info = np.iinfo(np.uint8)
    return ((np.asarray(rgb, dtype=np.float32) - info.min) / (info.max - info.min)).astype(np.float32)


def unscale_rgb(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(x, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


DEPTH_MIN, DEPTH_MAX = -1.0, 1.0


def scale_depth(depth: np.ndarray) -> np.ndarray:
    """Fixed-bound min-max scaling of centred depth: -1 -> 0, 1 -> 1."""
    depth = np.asarray(depth, dtype=np.float32)
    if depth.size and (depth.min() < DEPTH_MIN or depth.max() > DEPTH_MAX or not np.all(np.isfinite(depth))):
        raise ValueError(f"depth values outside [{DEPTH_MIN}, {DEPTH_MAX}]: corrupt sample")
    return ((depth - DEPTH_MIN) / (DEPTH_MAX - DEPTH_MIN)).astype(np.float32)


def unscale_depth(x: np.ndarray) -> np.ndarray:
    return (np.asarray(x, dtype=np.float32) * (DEPTH_MAX - DEPTH_MIN) + DEPTH_MIN).astype(np.float32)


def to_scaled(raw: RawSample) -> np.ndarray:
    rgb = scale_rgb(raw.rgb).transpose(2, 0, 1)
    return np.concatenate([rgb, scale_depth(raw.depth)[None]], axis=0)


def from_scaled(x: np.ndarray) -> RawSample:
    x = np.clip(np.asarray(x), 0.0, 1.0)
    return RawSample(unscale_rgb(x[:3].transpose(1, 2, 0)), unscale_depth(x[3]))


# -- augmentation -------------------------------------------------------------------

def flip_lr(x: np.ndarray) -> np.ndarray:
    return x[..., ::-1].copy()


def shift(x: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Translate the last two axes by (dx columns, dy rows), filling with background 0."""
    h, w = x.shape[-2:]
    out = np.zeros_like(x)
    if abs(dx) >= w or abs(dy) >= h:
        return out
    src_r = slice(max(0, -dy), h - max(0, dy))
    dst_r = slice(max(0, dy), h - max(0, -dy))
    src_c = slice(max(0, -dx), w - max(0, dx))
    dst_c = slice(max(0, dx), w - max(0, -dx))
    out[..., dst_r, dst_c] = x[..., src_r, src_c]
    return out


def augment(sample: np.ndarray, rng: np.random.Generator, max_shift: int,
            flip: bool | None = None, offset: tuple[int, int] | None = None) -> np.ndarray:
    """Random left-right flip (p=1/2) then a uniform integer shift of all four channels.

    ``flip`` and ``offset`` (dx, dy) override the random draws.  Depth values
    are not altered: a planar translation does not change metric depth.
    """
    h, w = sample.shape[-2:]
    if max_shift >= min(h, w):
        raise ValueError(f"max_shift {max_shift} must be smaller than the image extent {(h, w)}")
    do_flip = bool(rng.random() < 0.5) if flip is None else flip
    if offset is None:
        dx, dy = (int(v) for v in rng.integers(-max_shift, max_shift + 1, size=2))
    else:
        dx, dy = offset
    out = flip_lr(sample) if do_flip else sample
    return shift(out, dx, dy)


# -- VRGD files --------------------------------------------------------------------

def save_sample(path: str | Path, raw: RawSample) -> None:
    h, w = raw.size
    payload = _HEADER.pack(VRGD_MAGIC, VRGD_VERSION, h, w)
    payload += np.ascontiguousarray(raw.rgb, dtype=np.uint8).tobytes()
    payload += np.ascontiguousarray(raw.depth, dtype="<f4").tobytes()
    Path(path).write_bytes(payload)


def load_sample(path: str | Path, expected_size: tuple[int, int] | None = None) -> RawSample:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != VRGD_MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}, expected {VRGD_MAGIC!r}")
    if len(raw) < _HEADER.size:
        raise TruncatedPayloadError(f"{path}: truncated header")
    _, version, h, w = _HEADER.unpack_from(raw)
    if version != VRGD_VERSION:
        raise SampleFormatError(f"{path}: unsupported VRGD version {version}")
    if expected_size is not None and (h, w) != tuple(expected_size):
        raise SizeMismatchError(f"{path}: sample is {h}x{w}, expected {expected_size[0]}x{expected_size[1]}")
    n_rgb, n_depth = h * w * 3, h * w * 4
    body = len(raw) - _HEADER.size
    if body < n_rgb + n_depth:
        raise TruncatedPayloadError(f"{path}: payload has {body} bytes, expected {n_rgb + n_depth}")
    if body > n_rgb + n_depth:
        raise SizeMismatchError(f"{path}: {body - n_rgb - n_depth} trailing bytes after a {h}x{w} payload")
    rgb = np.frombuffer(raw, dtype=np.uint8, count=n_rgb, offset=_HEADER.size).reshape(h, w, 3).copy()
    depth = np.frombuffer(raw, dtype="<f4", count=h * w, offset=_HEADER.size + n_rgb).reshape(h, w)
    return RawSample(rgb, depth.astype(np.float32))


# -- manifests ----------------------------------------------------------------------

DOMAINS = ("synthetic", "target")


@dataclass
class DatasetManifest:
    domain: str
    root: Path
    paths: list[str]
    size: tuple[int, int]

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ValueError(f"domain must be one of {DOMAINS}, got {self.domain!r}")
        self.root = Path(self.root)
        self.size = tuple(self.size)

    @property
    def count(self) -> int:
        return len(self.paths)

    def sample_path(self, i: int) -> Path:
        return self.root / self.paths[i]

    def load(self, i: int) -> RawSample:
        return load_sample(self.sample_path(i), expected_size=self.size)

    def load_scaled(self, i: int) -> np.ndarray:
        return to_scaled(self.load(i))


def write_manifest(path: str | Path, manifest: DatasetManifest) -> None:
    h, w = manifest.size
    lines = [f"domain={manifest.domain} size={h}x{w}", *manifest.paths]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    lines = [ln.strip() for ln in path.read_text().splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty manifest")
    fields = dict(tok.split("=", 1) for tok in lines[0].split())
    try:
        h, w = (int(v) for v in fields["size"].split("x"))
        domain = fields["domain"]
    except (KeyError, ValueError):
        raise ValueError(f"{path}: malformed header {lines[0]!r}") from None
    return DatasetManifest(domain, path.parent, lines[1:], (h, w))


def split_indices(n: int, seed: int, train_fraction: float = 0.8) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic disjoint train/test index split."""
    perm = np.random.default_rng([seed, 0x5B1]).permutation(n)
    n_train = int(np.floor(n * train_fraction))
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def iter_batches(manifest: DatasetManifest, indices: Sequence[int], batch_size: int,
                 rng: np.random.Generator | None = None, shuffle: bool = True,
                 max_shift: int | None = None, drop_last: bool = True) -> Iterator[np.ndarray]:
    """Stream scaled (optionally augmented) batches from disk in a reproducible order."""
    order = np.asarray(indices)
    if shuffle:
        order = rng.permutation(order)
    stop = len(order) - len(order) % batch_size if drop_last else len(order)
    for start in range(0, stop, batch_size):
        batch = []
        for i in order[start:start + batch_size]:
            x = manifest.load_scaled(int(i))
            if max_shift is not None:
                x = augment(x, rng, max_shift)
            batch.append(x)
        yield np.stack(batch)


# -- toy dataset synthesis ---------------------------------------------------------

def _capsule(yy, xx, p0, p1, radius):
    (y0, x0), (y1, x1) = p0, p1
    dy, dx = y1 - y0, x1 - x0
    t = np.clip(((yy - y0) * dy + (xx - x0) * dx) / max(dy * dy + dx * dx, 1e-9), 0, 1)
    dist = np.hypot(yy - (y0 + t * dy), xx - (x0 + t * dx))
    return dist / radius


def _ellipse(yy, xx, center, radii):
    return np.hypot((yy - center[0]) / radii[0], (xx - center[1]) / radii[1])


def _figure(size: int, rng: np.random.Generator, tilt_scale: float):
    """Procedural person: head, torso, arms and legs with a bulging depth profile.

    Returns rgb (uint8), centred depth (float32, -1 background), the
    foreground mask and the limb end points (for segmentation erosion).
    """
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size - 0.5
    cy, cx = rng.uniform(-0.03, 0.03, size=2)
    s = rng.uniform(0.85, 1.0)
    yy, xx = (yy - cy) / s, (xx - cx) / s

    skin = rng.uniform(120, 230, size=3)
    shirt = rng.uniform(30, 240, size=3)
    pants = rng.uniform(30, 200, size=3)
    stripe = rng.uniform(0.6, 1.0)
    stripe_freq = rng.uniform(15, 30)

    parts = []  # (normalised distance field, colour field, bulge height)
    parts.append((_ellipse(yy, xx, (-0.33, 0.0), (0.075, 0.065)), skin, 0.25))
    torso_col = shirt[None, None, :] * np.where(np.sin(yy * stripe_freq) > 0, 1.0, stripe)[..., None]
    parts.append((_ellipse(yy, xx, (-0.07, 0.0), (0.2, 0.13)), torso_col, 0.4))
    ends = []
    for side in (-1, 1):
        shoulder = (-0.2, side * 0.13)
        angle = rng.uniform(0.15, 0.7)
        hand = (shoulder[0] + 0.28 * np.cos(angle), shoulder[1] + side * 0.28 * np.sin(angle))
        parts.append((_capsule(yy, xx, shoulder, hand, 0.035), skin, 0.2))
        hip = (0.1, side * 0.065)
        foot = (0.43, side * rng.uniform(0.07, 0.13))
        parts.append((_capsule(yy, xx, hip, foot, 0.05), pants, 0.25))
        ends += [hand, foot]

    depth = np.full((size, size), -np.inf)
    rgb = np.zeros((size, size, 3))
    for dist, col, height in parts:
        inside = dist < 1
        bulge = height * np.sqrt(np.clip(1 - dist ** 2, 0, 1)) - 0.1
        closer = inside & (bulge > depth)
        depth = np.where(closer, bulge, depth)
        col = np.broadcast_to(col, (size, size, 3))
        rgb[closer] = col[closer]
    mask = np.isfinite(depth)

    tilt = rng.uniform(-tilt_scale, tilt_scale, size=2)
    depth = depth + tilt[0] * yy + tilt[1] * xx
    ends_px = [((e[0] * s + cy + 0.5) * size, (e[1] * s + cx + 0.5) * size) for e in ends]
    return rgb, depth, mask, ends_px


def _finish(rgb: np.ndarray, depth: np.ndarray, mask: np.ndarray) -> RawSample:
    depth = np.where(mask, np.clip(depth, -0.95, 1.0), -1.0).astype(np.float32)
    rgb = np.where(mask[..., None], np.clip(np.rint(rgb), 1, 255), 0).astype(np.uint8)
    return RawSample(rgb, depth)


def synth_sample(domain: str, size: int, rng: np.random.Generator) -> RawSample:
    """One procedural sample of the clean synthetic domain or the sensor-like target domain."""
    if domain == "synthetic":
        rgb, depth, mask, _ = _figure(size, rng, tilt_scale=0.05)
        return _finish(rgb, depth, mask)
    if domain != "target":
        raise ValueError(f"unknown domain {domain!r}")

    rgb, depth, mask, ends = _figure(size, rng, tilt_scale=0.2)
    yy, xx = np.mgrid[0:size, 0:size]
    # segmentation masks clip some extremities
    for ey, ex in ends:
        if rng.random() < 0.5:
            radius = rng.uniform(0.03, 0.07) * size
            mask &= np.hypot(yy - ey, xx - ex) > radius
    # sensor noise grows with distance (smaller centred depth = further away)
    distance = np.clip((1.0 - np.where(mask, depth, 0.0)) / 2.0, 0, 1)
    depth = depth + rng.normal(0.0, 1.0, depth.shape) * (0.005 + 0.06 * distance ** 2)
    # scattered tail of points behind the silhouette
    ring = ndimage.binary_dilation(mask, iterations=max(1, size // 32)) & ~mask
    tail = ring & (rng.random(mask.shape) < 0.5)
    _, (iy, ix) = ndimage.distance_transform_edt(~mask, return_indices=True)
    edge_depth = np.where(np.isfinite(depth), depth, 0.0)[iy, ix]
    edge_rgb = rgb[iy, ix]
    behind = rng.uniform(0.05, 0.6, mask.shape)
    depth = np.where(tail, edge_depth - behind, depth)
    rgb = np.where(tail[..., None], edge_rgb * rng.uniform(0.3, 0.8, mask.shape)[..., None], rgb)
    return _finish(rgb, depth, mask | tail)


def synth_toy_dataset(out_dir: str | Path, n_per_domain: int, size: int,
                      rng: np.random.Generator) -> tuple[DatasetManifest, DatasetManifest]:
    """Write ``n_per_domain`` VRGD samples per domain plus one manifest per domain."""
    out_dir = Path(out_dir)
    manifests = []
    for domain in DOMAINS:
        (out_dir / domain).mkdir(parents=True, exist_ok=True)
        paths = []
        for i in range(n_per_domain):
            rel = f"{domain}/sample_{i:05d}.vrgd"
            save_sample(out_dir / rel, synth_sample(domain, size, rng))
            paths.append(rel)
        manifest = DatasetManifest(domain, out_dir, paths, (size, size))
        write_manifest(out_dir / f"{domain}.manifest", manifest)
        manifests.append(manifest)
    return manifests[0], manifests[1]


def edge_depth_variance(raw: RawSample) -> float:
    """Variance of centred depth over foreground pixels touching the background."""
    fg = raw.depth > -1
    edge = fg & ndimage.binary_dilation(~fg)
    return float(raw.depth[edge].var()) if edge.any() else 0.0
