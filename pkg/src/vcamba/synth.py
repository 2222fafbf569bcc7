"""Synthetic camouflaged-motion clips: a textured blob drifting over a static 1/f^alpha background."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .errors import DataError, ObjectOutOfFrame
from .imageio import read_image, write_pgm, write_ppm


@dataclass(frozen=True)
class ClipSpec:
    seed: int = 0
    height: int = 64
    width: int = 64
    frames: int = 5
    alpha: float = 1.5
    radius: float = 12.0
    jitter: float = 0.15
    velocity: tuple[float, float] = (2.0, 1.0)
    camouflage: float = 0.9

    def to_text(self) -> str:
        lines = []
        for k, v in asdict(self).items():
            v = ",".join(repr(float(x)) for x in v) if isinstance(v, tuple) else v
            lines.append(f"{k}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ClipSpec":
        kinds = {f.name: f.type for f in fields(cls)}
        values = {}
        for line in text.splitlines():
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            key, _, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            if key not in kinds:
                raise DataError(f"unknown clip spec key {key!r}")
            if key == "velocity":
                values[key] = tuple(float(x) for x in raw.split(","))
            elif key in ("seed", "height", "width", "frames"):
                values[key] = int(raw)
            else:
                values[key] = float(raw)
        return cls(**values)


@dataclass
class VideoClip:
    frames: np.ndarray  # (N, 3, H, W) in [0, 1]
    masks: np.ndarray  # (N, 1, H, W) in {0, 1}
    spec: ClipSpec | None = None


def noise_field(rng: np.random.Generator, h: int, w: int, alpha: float,
                channels: int = 1, low_cut: float = 3.0) -> np.ndarray:
    """Periodic noise with power ~ 1/f^alpha above ``low_cut`` cycles per image, unit variance."""
    fy = np.fft.fftfreq(h)[:, None] * h
    fx = np.fft.fftfreq(w)[None, :] * w
    f = np.hypot(fy, fx)
    amp = np.where(f >= low_cut, np.maximum(f, 1.0) ** (-alpha / 2.0), 0.0)
    white = rng.standard_normal((channels, h, w))
    field = np.fft.ifft2(np.fft.fft2(white) * amp).real
    field -= field.mean(axis=(-2, -1), keepdims=True)
    return field / field.std(axis=(-2, -1), keepdims=True)


def blob_mask(rng: np.random.Generator, radius: float, jitter: float) -> np.ndarray:
    """Binary star-convex blob on a tight square canvas centred at its middle cell."""
    k = np.arange(2, 5)
    amps = rng.uniform(0.0, jitter, k.size) / np.sqrt(k.size)
    phases = rng.uniform(0.0, 2 * np.pi, k.size)
    ext = int(np.ceil(radius * (1 + jitter))) + 1
    yy, xx = np.mgrid[-ext:ext + 1, -ext:ext + 1].astype(np.float64)
    theta = np.arctan2(yy, xx)
    boundary = radius * (1.0 + (amps[:, None, None] * np.cos(k[:, None, None] * theta + phases[:, None, None])).sum(0))
    mask = np.hypot(yy, xx) <= boundary
    rows, cols = np.nonzero(mask)
    return mask[rows.min():rows.max() + 1, cols.min():cols.max() + 1]


def _colorize(field: np.ndarray, tint: np.ndarray, contrast: float = 0.16) -> np.ndarray:
    """Luminance-plus-chroma noise (3 fields) to RGB around ``tint``."""
    lum, chroma = field[0], field[1:]
    rgb = tint[:, None, None] + contrast * lum[None]
    rgb[:2] += 0.25 * contrast * chroma
    return rgb


def generate_clip(spec: ClipSpec) -> VideoClip:
    """Render one clip. Deterministic in ``spec``; raises ObjectOutOfFrame if the path cannot fit."""
    if spec.frames < 1 or spec.height < 4 or spec.width < 4:
        raise ValueError("clip needs frames >= 1 and H, W >= 4")
    if not 0.0 <= spec.camouflage <= 1.0:
        raise ValueError("camouflage must lie in [0, 1]")
    rng = np.random.default_rng(spec.seed)
    h, w, n = spec.height, spec.width, spec.frames
    vx, vy = spec.velocity
    shape = blob_mask(rng, spec.radius, spec.jitter)
    sh, sw = shape.shape
    steps = np.arange(n)
    dx = np.round(vx * steps).astype(int)
    dy = np.round(vy * steps).astype(int)
    free_y = (h - sh) - (dy.max() - dy.min())
    free_x = (w - sw) - (dx.max() - dx.min())
    if free_y < 0 or free_x < 0:
        raise ObjectOutOfFrame(f"object {sh}x{sw} moving {vx},{vy} px/frame leaves a {h}x{w} frame")
    top0 = rng.integers(0, free_y + 1) - dy.min()
    left0 = rng.integers(0, free_x + 1) - dx.min()

    tint = rng.uniform(0.3, 0.7, 3)
    background = _colorize(noise_field(rng, h, w, spec.alpha, 3), tint)
    off = rng.integers(h // 4, 3 * h // 4), rng.integers(w // 4, 3 * w // 4)
    camo = np.roll(background, off, axis=(1, 2))
    shift = rng.uniform(0.12, 0.2) * rng.choice([-1.0, 1.0], 3)
    distinct = _colorize(noise_field(rng, h, w, spec.alpha + 0.5, 3),
                         np.clip(tint + shift, 0.05, 0.95), contrast=0.08)
    lam = spec.camouflage
    texture = lam * camo + (1.0 - lam) * distinct

    frames = np.empty((n, 3, h, w))
    masks = np.zeros((n, 1, h, w))
    for t in range(n):
        top, left = top0 + dy[t], left0 + dx[t]
        m = np.zeros((h, w), dtype=bool)
        m[top:top + sh, left:left + sw] = shape
        moving = np.roll(texture, (dy[t], dx[t]), axis=(1, 2))
        frames[t] = np.where(m[None], moving, background)
        masks[t, 0] = m
    return VideoClip(np.clip(frames, 0.0, 1.0), masks, spec)


@dataclass(frozen=True)
class SpecRanges:
    height: int = 64
    width: int = 64
    frames: int = 5
    radius: tuple[float, float] = (9.0, 14.0)
    speed: tuple[float, float] = (1.0, 3.0)
    alpha: tuple[float, float] = (1.0, 2.0)
    camouflage: float = 0.9
    jitter: float = 0.15


def sample_spec(rng: np.random.Generator, seed: int, ranges: SpecRanges) -> ClipSpec:
    speed = rng.uniform(*ranges.speed)
    angle = rng.uniform(0, 2 * np.pi)
    radius = rng.uniform(*ranges.radius)
    # small frames: shrink the blob until its whole path fits
    room = min(ranges.height, ranges.width) - speed * (ranges.frames - 1) - 4
    radius = min(radius, max(room / (2 * (1 + ranges.jitter)), 1.0))
    return ClipSpec(seed=seed, height=ranges.height, width=ranges.width, frames=ranges.frames,
                    alpha=float(rng.uniform(*ranges.alpha)), radius=float(radius),
                    jitter=ranges.jitter,
                    velocity=(float(speed * np.cos(angle)), float(speed * np.sin(angle))),
                    camouflage=ranges.camouflage)


def make_dataset(n_clips: int, ranges: SpecRanges | None = None,
                 seed: int = 0) -> tuple[list[VideoClip], list[VideoClip]]:
    """Generate ``n_clips`` clips with distinct seeds; the first 80 % train, the rest validate."""
    if n_clips < 2:
        raise ValueError("need at least 2 clips for a train/val split")
    ranges = ranges or SpecRanges()
    rng = np.random.default_rng(seed)
    seeds = rng.choice(2**31 - 1, size=n_clips, replace=False)
    clips = [generate_clip(sample_spec(rng, int(s), ranges)) for s in seeds]
    n_val = max(1, int(round(0.2 * n_clips)))
    return clips[:n_clips - n_val], clips[n_clips - n_val:]


# -- persistence ------------------------------------------------------------


def save_clip(clip: VideoClip, directory: str | Path) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for t in range(clip.frames.shape[0]):
        write_ppm(d / f"frame_{t:03d}.ppm", clip.frames[t])
        write_pgm(d / f"mask_{t:03d}.pgm", clip.masks[t, 0])
    if clip.spec is not None:
        (d / "spec.txt").write_text(clip.spec.to_text())
    return d


def load_clip(directory: str | Path) -> VideoClip:
    d = Path(directory)
    frame_files = sorted(d.glob("frame_*.ppm"))
    mask_files = sorted(d.glob("mask_*.pgm"))
    if not frame_files or len(frame_files) != len(mask_files):
        raise DataError(f"{d}: expected matching frame_*.ppm and mask_*.pgm files")
    frames = np.stack([read_image(f) for f in frame_files])
    masks = np.stack([read_image(f) for f in mask_files])[:, None]
    spec_file = d / "spec.txt"
    spec = ClipSpec.from_text(spec_file.read_text()) if spec_file.exists() else None
    return VideoClip(frames, (masks > 0.5).astype(np.float64), spec)


def save_dataset(train: list[VideoClip], val: list[VideoClip], out: str | Path) -> Path:
    root = Path(out)
    for split, clips in (("train", train), ("val", val)):
        for i, clip in enumerate(clips):
            save_clip(clip, root / split / f"clip_{i:04d}")
    return root


def load_dataset(root: str | Path) -> tuple[list[VideoClip], list[VideoClip]]:
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset directory {root} does not exist")
    out = []
    for split in ("train", "val"):
        dirs = sorted(p for p in (root / split).glob("clip_*") if p.is_dir())
        if not dirs:
            raise DataError(f"{root / split}: no clips")
        out.append([load_clip(p) for p in dirs])
    return out[0], out[1]
