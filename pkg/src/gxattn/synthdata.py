"""Synthetic two-modality scenes with complementary failure modes.

A scene is a set of point annotations on an H x W canvas plus an
illumination tag and a clutter level. Rendering produces two registered
multi-channel views:

* ``mod_a`` (camera-like) draws a Gaussian blob per point over a faint
  deterministic background ramp. In dark scenes its blob contrast collapses
  to x0.1 and pixel noise (sigma 0.2) is added, so it degrades exactly where
  the other view stays clean.
* ``mod_b`` (thermal-like) always renders blobs at full contrast but adds
  ``round(clutter * 8)`` spurious blobs of identical size and amplitude, so
  this view alone cannot tell real targets from clutter; ruling the fakes
  out requires checking ``mod_a`` at the same location.

Ground truth is a density map: one truncated Gaussian kernel per point,
cut off at 3 sigma and at the borders, renormalized so each kernel
integrates to exactly 1; the map's sum equals the point count. Everything is
deterministic in (scene, seed), so paired ablations see identical data.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, FileFormatError
from .rng import substream
from .tensorio import load_tensor, save_tensor

ILLUMINATIONS = ("bright", "dark")

DARK_CONTRAST = 0.1
DARK_NOISE_SIGMA = 0.2
RAMP_AMPLITUDE = 0.05
SPURIOUS_PER_UNIT_CLUTTER = 8
SPURIOUS_AMPLITUDE = 1.0
BLOB_SIZE = 1.5
BORDER_MARGIN = 4.0
MIN_SEPARATION = 6.0


@dataclass(frozen=True)
class Scene:
    """Point-annotated canvas; points are (row, col, blob size) triples."""

    height: int
    width: int
    points: tuple[tuple[float, float, float], ...]
    illumination: str
    clutter: float

    def __post_init__(self):
        if self.illumination not in ILLUMINATIONS:
            raise ConfigError(f"illumination must be one of {ILLUMINATIONS}, "
                              f"got {self.illumination!r}")
        if not 0.0 <= self.clutter <= 1.0:
            raise ConfigError(f"clutter must lie in [0, 1], got {self.clutter}")
        for row, col, size in self.points:
            if not (0 <= row < self.height and 0 <= col < self.width):
                raise ConfigError(f"point ({row}, {col}) outside {self.height}x{self.width} canvas")
            if size <= 0:
                raise ConfigError(f"blob size must be positive, got {size}")

    @property
    def count(self) -> int:
        return len(self.points)


@dataclass
class ModalPairSample:
    mod_a: np.ndarray
    mod_b: np.ndarray
    gt_density: np.ndarray
    illumination: str
    clutter: float
    count: int


def density_from_points(scene: Scene, sigma: float,
                        out_extents: tuple[int, int]) -> np.ndarray:
    """Per-point truncated, renormalized Gaussian kernels on an H' x W' grid.

    ``sigma`` is in output-pixel units; point coordinates are rescaled from
    the scene canvas to the output grid by pixel-center mapping.
    """
    if sigma <= 0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    out_h, out_w = int(out_extents[0]), int(out_extents[1])
    if out_h < 1 or out_w < 1:
        raise ConfigError(f"output extents must be positive, got {out_extents}")
    density = np.zeros((out_h, out_w), dtype=np.float64)
    radius = 3.0 * sigma
    for row, col, _ in scene.points:
        r = (row + 0.5) * out_h / scene.height - 0.5
        c = (col + 0.5) * out_w / scene.width - 0.5
        lo_i = max(0, int(np.floor(r - radius)))
        hi_i = min(out_h - 1, int(np.ceil(r + radius)))
        lo_j = max(0, int(np.floor(c - radius)))
        hi_j = min(out_w - 1, int(np.ceil(c + radius)))
        ii, jj = np.meshgrid(np.arange(lo_i, hi_i + 1), np.arange(lo_j, hi_j + 1),
                             indexing="ij")
        dist2 = (ii - r) ** 2 + (jj - c) ** 2
        kernel = np.exp(-dist2 / (2.0 * sigma * sigma))
        kernel[dist2 > radius * radius] = 0.0
        mass = kernel.sum()
        if mass <= 0.0:
            density[min(max(int(round(r)), 0), out_h - 1),
                    min(max(int(round(c)), 0), out_w - 1)] += 1.0
        else:
            density[lo_i:hi_i + 1, lo_j:hi_j + 1] += kernel / mass
    return density


def _blob_field(height: int, width: int,
                centers: list[tuple[float, float, float]],
                amplitude: float) -> np.ndarray:
    ii, jj = np.meshgrid(np.arange(height, dtype=np.float64),
                         np.arange(width, dtype=np.float64), indexing="ij")
    field = np.zeros((height, width), dtype=np.float64)
    for row, col, size in centers:
        field += amplitude * np.exp(-((ii - row) ** 2 + (jj - col) ** 2) / (2.0 * size * size))
    return field


def _ramp(height: int, width: int, phase: int) -> np.ndarray:
    ii, jj = np.meshgrid(np.arange(height, dtype=np.float64),
                         np.arange(width, dtype=np.float64), indexing="ij")
    mixes = (ii + jj, ii - jj + width, (height - ii) + jj, 2 * ii + jj)
    mix = mixes[phase % len(mixes)]
    return RAMP_AMPLITUDE * (mix - mix.min()) / max(mix.max() - mix.min(), 1.0)


def render_modalities(scene: Scene, seed: int, channels: int = 2,
                      sigma: float = 2.0, gt_scale: int = 4) -> ModalPairSample:
    """Deterministic sample: two renderings plus the ground-truth density.

    ``sigma`` is the kernel width in scene-pixel units; the density map is
    rendered at extents/gt_scale, so the kernel becomes sigma/gt_scale in
    output-pixel units.
    """
    if channels < 1:
        raise ConfigError(f"need at least one channel, got {channels}")
    h, w = scene.height, scene.width
    if h % gt_scale != 0 or w % gt_scale != 0:
        raise ConfigError(f"gt_scale {gt_scale} must divide extents {(h, w)}")
    base = _blob_field(h, w, list(scene.points), amplitude=1.0)

    spurious_rng = substream(seed, "spurious")
    n_spurious = int(round(scene.clutter * SPURIOUS_PER_UNIT_CLUTTER))
    spurious_centers = [
        (spurious_rng.uniform(BORDER_MARGIN, h - 1 - BORDER_MARGIN),
         spurious_rng.uniform(BORDER_MARGIN, w - 1 - BORDER_MARGIN),
         BLOB_SIZE)
        for _ in range(n_spurious)
    ]
    spurious = _blob_field(h, w, spurious_centers, amplitude=SPURIOUS_AMPLITUDE)

    dark = scene.illumination == "dark"
    contrast = DARK_CONTRAST if dark else 1.0
    noise_rng = substream(seed, "noise")

    mod_a = np.zeros((channels, h, w), dtype=np.float64)
    mod_b = np.zeros((channels, h, w), dtype=np.float64)
    for ch in range(channels):
        fade = 1.0 - 0.3 * ch
        mod_a[ch] = contrast * fade * base + _ramp(h, w, ch)
        mod_b[ch] = fade * (base + spurious) + _ramp(h, w, ch + 1)
    if dark:
        mod_a += noise_rng.normal(0.0, DARK_NOISE_SIGMA, size=mod_a.shape)

    gt = density_from_points(scene, sigma / gt_scale, (h // gt_scale, w // gt_scale))
    return ModalPairSample(mod_a=mod_a.astype(np.float32),
                           mod_b=mod_b.astype(np.float32),
                           gt_density=gt.astype(np.float32),
                           illumination=scene.illumination,
                           clutter=scene.clutter,
                           count=scene.count)


def _scene_for_index(index: int, seed: int, extents: tuple[int, int]) -> Scene:
    h, w = extents
    if h < 4 * BORDER_MARGIN or w < 4 * BORDER_MARGIN:
        raise ConfigError(f"extents {extents} too small for blob placement margins")
    rng = substream(seed, f"scene:{index}")
    count = int(rng.integers(3, 13))
    points: list[tuple[float, float, float]] = []
    attempts = failures = 0
    while len(points) < count:
        attempts += 1
        if attempts > 100_000:
            raise ConfigError(
                f"cannot place {count} separated points on a {h}x{w} canvas; "
                f"use extents of at least 32x32"
            )
        if failures > 2_000:
            # dead-end prefix: dart throwing restarts rather than spinning
            points.clear()
            failures = 0
        row = rng.uniform(BORDER_MARGIN, h - 1 - BORDER_MARGIN)
        col = rng.uniform(BORDER_MARGIN, w - 1 - BORDER_MARGIN)
        if all((row - p[0]) ** 2 + (col - p[1]) ** 2 >= MIN_SEPARATION ** 2 for p in points):
            points.append((row, col, BLOB_SIZE))
            failures = 0
        else:
            failures += 1
    return Scene(height=h, width=w, points=tuple(points),
                 illumination="bright" if index % 2 == 0 else "dark",
                 clutter=float(rng.uniform(0.2, 0.9)))


@dataclass
class SyntheticDataset:
    samples: list[ModalPairSample]
    header: dict[str, str]

    @property
    def train_indices(self) -> list[int]:
        ratio = float(self.header["train_ratio"])
        cut = int(round(len(self.samples) * ratio))
        return list(range(cut))

    @property
    def test_indices(self) -> list[int]:
        return list(range(len(self.train_indices), len(self.samples)))


def make_dataset(path, n: int, extents: tuple[int, int] = (32, 32),
                 channels: int = 2, sigma: float = 2.0, gt_scale: int = 4,
                 train_ratio: float = 0.5, seed: int = 0) -> Path:
    """Write ``n`` samples as tensor triples plus a CSV index; returns the path.

    Samples alternate bright/dark. Ground truth is rendered at
    extents/gt_scale with the kernel width rescaled accordingly; the header
    comment line records the extents, the ground-truth sigma actually used,
    the channel count, the seed, and the split ratio.
    """
    if n < 1:
        raise ContractError(f"need at least one sample, got n={n}")
    h, w = extents
    if h % gt_scale != 0 or w % gt_scale != 0:
        raise ConfigError(f"gt_scale {gt_scale} must divide extents {extents}")
    gt_h, gt_w = h // gt_scale, w // gt_scale
    sigma_gt = sigma / gt_scale

    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(n):
        scene = _scene_for_index(i, seed, extents)
        sample_seed = int(substream(seed, f"sample:{i}").integers(0, 2 ** 63))
        sample = render_modalities(scene, sample_seed, channels=channels,
                                   sigma=sigma, gt_scale=gt_scale)
        names = tuple(f"sample_{i:04d}_{part}.cst1" for part in ("a", "b", "gt"))
        save_tensor(directory / names[0], sample.mod_a)
        save_tensor(directory / names[1], sample.mod_b)
        save_tensor(directory / names[2], sample.gt_density)
        rows.append((*names, scene.count, scene.illumination, repr(scene.clutter)))

    header = (f"# height={h} width={w} gt_height={gt_h} gt_width={gt_w} "
              f"sigma={sigma_gt!r} channels={channels} seed={seed} train_ratio={train_ratio!r}")
    with open(directory / "index.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write(header + "\n")
        writer = csv.writer(fh)
        writer.writerow(["file_a", "file_b", "file_gt", "count", "illumination", "clutter"])
        writer.writerows(rows)
    return directory


def load_dataset(path) -> SyntheticDataset:
    """Read a dataset directory back; tensors are loaded eagerly."""
    directory = Path(path)
    index = directory / "index.csv"
    if not index.exists():
        raise FileFormatError(f"{index}: dataset index not found")
    lines = index.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("#"):
        raise FileFormatError(f"{index}: missing metadata header line")
    header: dict[str, str] = {}
    for token in lines[0].lstrip("#").split():
        key, _, value = token.partition("=")
        header[key] = value

    reader = csv.reader(lines[1:])
    columns = next(reader)
    if columns != ["file_a", "file_b", "file_gt", "count", "illumination", "clutter"]:
        raise FileFormatError(f"{index}: unexpected columns {columns}")
    samples = []
    for file_a, file_b, file_gt, count, illumination, clutter in reader:
        samples.append(ModalPairSample(
            mod_a=load_tensor(directory / file_a),
            mod_b=load_tensor(directory / file_b),
            gt_density=load_tensor(directory / file_gt),
            illumination=illumination,
            clutter=float(clutter),
            count=int(count),
        ))
    return SyntheticDataset(samples=samples, header=header)
