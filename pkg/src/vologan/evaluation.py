"""Evaluation tools: PCA domain comparison, channel histograms, point-cloud export."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import unscale_depth, unscale_rgb
from .losses import CHANNELS


@dataclass
class PcaModel:
    mean: np.ndarray  # (d,)
    components: np.ndarray  # (k, d), orthonormal rows
    explained_variance: np.ndarray  # (k,) variance along each component
    explained_fraction: np.ndarray  # (k,) share of the total variance

    @property
    def k(self) -> int:
        return self.components.shape[0]


def _flatten(samples) -> np.ndarray:
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim < 2:
        raise ValueError(f"expected a batch of samples, got shape {arr.shape}")
    return arr.reshape(arr.shape[0], -1)


def pca_fit(samples, k: int = 5) -> PcaModel:
    """Principal components of the mean-centred data via a thin SVD (64-bit).

    Each component's sign is fixed so its largest-magnitude entry is positive.
    """
    x = _flatten(samples)
    n = x.shape[0]
    if k < 1 or k > n:
        raise ValueError(f"k={k} must lie in [1, n_samples={n}]")
    mean = x.mean(axis=0)
    _, s, vt = np.linalg.svd(x - mean, full_matrices=False)
    comps = vt[:k]
    idx = np.argmax(np.abs(comps), axis=1)
    comps = comps * np.sign(comps[np.arange(len(comps)), idx])[:, None]
    var = s ** 2 / max(n - 1, 1)
    total = var.sum()
    frac = var[:k] / total if total > 0 else np.zeros(k)
    return PcaModel(mean, comps, var[:k], frac)


def pca_project(model: PcaModel, samples) -> np.ndarray:
    x = _flatten(samples)
    if x.shape[1] != model.mean.shape[0]:
        raise ValueError(f"sample dimension {x.shape[1]} does not match the model's {model.mean.shape[0]}")
    return (x - model.mean) @ model.components.T


def pca_reconstruct(model: PcaModel, coords: np.ndarray) -> np.ndarray:
    return np.asarray(coords) @ model.components + model.mean


def domain_distance(real_coords, gen_coords) -> float:
    """Euclidean distance between the two sets' centroids."""
    a, b = np.atleast_2d(real_coords), np.atleast_2d(gen_coords)
    if len(a) == 0 or len(b) == 0 or a.shape[1] != b.shape[1]:
        raise ValueError(f"need two non-empty coordinate sets of equal width, got {a.shape} and {b.shape}")
    return float(np.linalg.norm(a.mean(axis=0) - b.mean(axis=0)))


@dataclass
class DomainComparison:
    distance: float
    model: PcaModel
    real_coords: np.ndarray
    gen_coords: np.ndarray

    def spreads(self) -> dict[str, list[float]]:
        return {"real": self.real_coords.std(axis=0).tolist(), "generated": self.gen_coords.std(axis=0).tolist()}

    def summary(self) -> dict:
        return {
            "domain_distance": self.distance,
            "fit": "union",
            "k": self.model.k,
            "explained_fraction": self.model.explained_fraction.tolist(),
            "spread": self.spreads(),
            "n_real": len(self.real_coords),
            "n_generated": len(self.gen_coords),
        }


def compare_domains(real, generated, k: int = 5) -> DomainComparison:
    """Fit PCA on the union of both sets and measure the centroid gap."""
    real, generated = _flatten(real), _flatten(generated)
    model = pca_fit(np.concatenate([real, generated]), k)
    rc, gc = pca_project(model, real), pca_project(model, generated)
    return DomainComparison(domain_distance(rc, gc), model, rc, gc)


def write_scatter_csv(path: str | Path, comparison: DomainComparison) -> None:
    k = comparison.model.k
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "domain"] + [f"c{i + 1}" for i in range(k)])
        for domain, coords in (("real", comparison.real_coords), ("generated", comparison.gen_coords)):
            for i, row in enumerate(coords):
                w.writerow([i, domain] + [repr(float(v)) for v in row])


def channel_histogram(sample: np.ndarray, bins: int = 64) -> dict[str, np.ndarray]:
    """Per-channel counts over [0, 1]; the last bin is closed on the right."""
    sample = np.asarray(sample)
    if bins < 2:
        raise ValueError(f"bins must be >= 2, got {bins}")
    if sample.ndim != 3 or sample.shape[0] != len(CHANNELS):
        raise ValueError(f"expected a scaled (4, h, w) sample, got {sample.shape}")
    return {name: np.histogram(sample[i], bins=bins, range=(0.0, 1.0))[0] for i, name in enumerate(CHANNELS)}


def pointcloud_vertices(sample: np.ndarray, stride: int = 2) -> np.ndarray:
    """Rows of (x, y, z, r, g, b) for every ``stride``-th foreground pixel."""
    sample = np.asarray(sample)
    if sample.ndim != 3 or sample.shape[0] != len(CHANNELS):
        raise ValueError(f"expected a scaled (4, h, w) sample, got {sample.shape}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    sub = sample[:, ::stride, ::stride]
    rows, cols = np.nonzero(np.any(sub != 0, axis=0))
    picked = sub[:, rows, cols]
    rgb = unscale_rgb(picked[:3].T)
    z = unscale_depth(picked[3])
    return np.column_stack([cols * stride, rows * stride, z, rgb]).astype(np.float64)


def pointcloud_export(sample: np.ndarray, path: str | Path, stride: int = 2) -> int:
    """Write an ASCII PLY point cloud; returns the vertex count."""
    verts = pointcloud_vertices(sample, stride)
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(verts)}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "end_header",
    ]
    for x, y, z, r, g, b in verts:
        lines.append(f"{int(x)} {int(y)} {float(np.float32(z))!r} {int(r)} {int(g)} {int(b)}")
    Path(path).write_text("\n".join(lines) + "\n")
    return len(verts)


def layout_map(discriminator, sample: np.ndarray) -> np.ndarray:
    """The discriminator's layout-branch output for one scaled sample, as a 2-D map."""
    from .tensor import Tensor, no_grad

    with no_grad():
        out = discriminator(Tensor(np.asarray(sample, dtype=np.float32)[None]), training=False)
    return out.layout.data[0, 0]


def latest_checkpoint(checkpoint_dir: str | Path) -> Path:
    found = sorted(Path(checkpoint_dir).glob("epoch_[0-9][0-9][0-9][0-9]"))
    if not found:
        raise FileNotFoundError(f"no checkpoints under {checkpoint_dir}")
    return found[-1]


def pca_protocol(run_dir: str | Path, n: int = 50, k: int = 5,
                 stages: Sequence[str] = ("before", "after"),
                 synthetic=None, target=None) -> dict[str, DomainComparison]:
    """Compare ``n`` real target samples with ``n`` synthetic samples translated by G_ST.

    ``before`` uses the initial checkpoint, ``after`` the latest one; each
    comparison fits its own PCA on the union of the two sets.  ``input``
    compares the untranslated synthetic samples for reference.  Manifests
    default to the ones named in the run's config.
    """
    from .config import RunConfig
    from .data import read_manifest
    from .training import checkpoint_name, load_checkpoint, translate

    run_dir = Path(run_dir)
    cfg = RunConfig.from_dict(json.loads((run_dir / "config.json").read_text()))
    synthetic = synthetic or read_manifest(cfg.data.synthetic_manifest)
    target = target or read_manifest(cfg.data.target_manifest)
    m = min(n, synthetic.count, target.count)
    if m < k:
        raise ValueError(f"need at least k={k} samples per domain, have {m}")
    src = np.stack([synthetic.load_scaled(i) for i in range(m)])
    real = np.stack([target.load_scaled(i) for i in range(m)])
    out = {"input": compare_domains(real, src, k)}
    checkpoints = {"before": cfg.checkpoints / checkpoint_name(0), "after": latest_checkpoint(cfg.checkpoints)}
    for stage in stages:
        state = load_checkpoint(checkpoints[stage], cfg)
        out[stage] = compare_domains(real, translate(state.G_ST, src, cfg.batch_size), k)
    return out
