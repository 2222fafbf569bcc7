"""Training loop (Adam on the pyramid loss), validation, checkpoints, prediction and ablations."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor as T
from .errors import CheckpointError, ConfigError, DataError
from .imageio import write_pgm
from .losses import total_loss
from .metrics import COLUMNS, evaluate, mean_scores
from .model import VARIANTS, BlockConfig, PredictionPyramid, Vcamba
from .nn import Module
from .synth import SpecRanges, VideoClip, load_dataset, make_dataset

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    steps: int = 500
    lr: float = 1e-3
    batch: int = 2
    eval_every: int = 100
    variant: str = "full"
    # data: an existing directory, or generated in memory from the fields below
    data: str = ""
    clips: int = 40
    data_seed: int = 0
    camouflage: float = 0.9
    height: int = 64
    width: int = 64
    frames: int = 5
    # model
    channels: tuple[int, ...] = (16, 32, 64, 128)
    state: int = 8
    expansion: int = 4
    patch: int = 4
    motion_stages: tuple[int, ...] = (3, 4)

    def model_config(self) -> BlockConfig:
        base = BlockConfig(channels=self.channels, frames=self.frames, state=self.state,
                           expansion=self.expansion, patch=self.patch,
                           motion_stages=self.motion_stages)
        return base.variant(self.variant)

    def to_text(self) -> str:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            out.append(f"{f.name}={','.join(map(str, v)) if isinstance(v, tuple) else v}")
        return "\n".join(out) + "\n"


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """Parse ``key=value`` lines (``#`` comments allowed) over ``base``."""
    base = base or TrainConfig()
    kinds = {f.name: type(getattr(base, f.name)) for f in fields(base)}
    updates = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep or key not in kinds:
            raise ConfigError(f"line {lineno}: unknown or malformed entry {line!r}")
        kind = kinds[key]
        try:
            if kind is tuple:
                updates[key] = tuple(int(x) for x in raw.split(",") if x.strip())
            else:
                updates[key] = kind(raw)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {raw!r}") from exc
    cfg = replace(base, **updates)
    if cfg.steps < 0 or cfg.batch < 1 or cfg.lr <= 0 or cfg.eval_every < 1:
        raise ConfigError("steps >= 0, batch >= 1, lr > 0 and eval_every >= 1 are required")
    if cfg.variant not in VARIANTS:
        raise ConfigError(f"unknown variant {cfg.variant!r}")
    return cfg


def load_config(path: str | Path) -> TrainConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


class Adam:
    def __init__(self, params: list[T.Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr, self.eps = lr, eps
        self.b1, self.b2 = betas
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# -- checkpoints ------------------------------------------------------------


def save_checkpoint(model: Vcamba, directory: str | Path, config: TrainConfig | None = None) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, (name, p) in enumerate(model.named_parameters()):
        fname = f"p{i:04d}.vct"
        T.save_tensor(d / fname, p.data)
        lines.append(f"{name} {'x'.join(map(str, p.shape)) or '1'} {fname}")
    (d / "manifest.txt").write_text("\n".join(lines) + "\n")
    (d / "model.txt").write_text(model.cfg.to_text())
    if config is not None:
        (d / "config.txt").write_text(config.to_text())
    return d


def _model_config(text: str) -> BlockConfig:
    kinds = {f.name: f.type for f in fields(BlockConfig)}
    values = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, _, raw = line.partition("=")
        if key not in kinds:
            raise CheckpointError(f"unknown model field {key!r}")
        default = getattr(BlockConfig(), key)
        if isinstance(default, tuple):
            values[key] = tuple(int(x) for x in raw.split(",") if x)
        elif isinstance(default, bool):
            values[key] = raw == "True"
        else:
            values[key] = type(default)(raw)
    return BlockConfig(**values)


def load_checkpoint(directory: str | Path) -> Vcamba:
    d = Path(directory)
    try:
        cfg = _model_config((d / "model.txt").read_text())
        manifest = (d / "manifest.txt").read_text().split("\n")
    except (OSError, ConfigError) as exc:
        raise CheckpointError(f"{d}: unreadable checkpoint ({exc})") from exc
    model = Vcamba(cfg)
    params = dict(model.named_parameters())
    seen = set()
    for line in filter(None, manifest):
        try:
            name, shape, fname = line.split()
        except ValueError as exc:
            raise CheckpointError(f"bad manifest line {line!r}") from exc
        if name not in params:
            raise CheckpointError(f"manifest names unknown parameter {name}")
        try:
            data = T.load_tensor(d / fname).data
        except (OSError, ValueError) as exc:
            raise CheckpointError(f"cannot load {fname}: {exc}") from exc
        want = params[name].shape
        if data.shape != want or shape != ("x".join(map(str, want)) or "1"):
            raise CheckpointError(f"{name}: stored shape {data.shape} != model shape {want}")
        params[name].data[...] = data
        seen.add(name)
    missing = set(params) - seen
    if missing:
        raise CheckpointError(f"manifest is missing {sorted(missing)[:3]}")
    return model


# -- evaluation -------------------------------------------------------------


def predict(model: Vcamba, clip, out_dir: str | Path | None = None) -> PredictionPyramid:
    """Forward one clip without a tape; optionally write finest-level maps as PGM."""
    frames = clip.frames if isinstance(clip, VideoClip) else np.asarray(clip)
    with T.no_grad():
        pyramid = model(frames)
    if out_dir is not None:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        for t, m in enumerate(pyramid.levels[0].data[:, 0]):
            write_pgm(d / f"mask_{t:03d}.pgm", m)
    return pyramid


def validate(model: Vcamba, clips: list[VideoClip]) -> dict[str, float]:
    """Dataset-mean of the six metrics over every frame, finest level."""
    rows = []
    for clip in clips:
        probs = predict(model, clip).levels[0].data[:, 0]
        rows.extend(evaluate(p, g) for p, g in zip(probs, clip.masks[:, 0]))
    return mean_scores(rows)


# -- training ---------------------------------------------------------------


@dataclass
class TrainResult:
    model: Vcamba
    rows: list[dict] = field(default_factory=list)
    metrics: dict[str, float] = field(default_factory=dict)


def load_data(cfg: TrainConfig) -> tuple[list[VideoClip], list[VideoClip]]:
    if cfg.data:
        return load_dataset(cfg.data)
    ranges = SpecRanges(height=cfg.height, width=cfg.width, frames=cfg.frames,
                        camouflage=cfg.camouflage)
    return make_dataset(cfg.clips, ranges, cfg.data_seed)


def _batches(n: int, batch: int, rng: np.random.Generator):
    while True:
        order = rng.permutation(n)
        for i in range(0, n - batch + 1, batch):
            yield order[i:i + batch]


def train(cfg: TrainConfig, out_dir: str | Path | None = None,
          data: tuple[list[VideoClip], list[VideoClip]] | None = None,
          progress: Callable[[dict], None] | None = None) -> TrainResult:
    """Fit a fresh model; writes ``log.csv`` and ``checkpoint/`` under ``out_dir`` if given."""
    train_set, val_set = data if data is not None else load_data(cfg)
    if len(train_set) < cfg.batch:
        raise DataError(f"{len(train_set)} training clips cannot fill a batch of {cfg.batch}")
    for clip in train_set + val_set:
        if clip.frames.shape[1:] != (3, cfg.height, cfg.width) and not cfg.data:
            raise DataError(f"clip shape {clip.frames.shape} does not match the config")
    model = Vcamba(cfg.model_config(), seed=cfg.seed)
    params = model.parameters()
    opt = Adam(params, cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    batches = _batches(len(train_set), cfg.batch, rng)
    rows: list[dict] = []
    xs = np.stack([c.frames for c in train_set])
    ys = np.stack([c.masks for c in train_set])
    for step in range(cfg.steps):
        idx = next(batches)
        model.zero_grad()
        loss = total_loss(model(xs[idx]), ys[idx])
        loss.backward()
        opt.step()
        row = {"step": step, "loss": loss.item(), "val_mDice": ""}
        if (step + 1) % cfg.eval_every == 0 or step + 1 == cfg.steps:
            row["val_mDice"] = validate(model, val_set)["mDice"]
        rows.append(row)
        if progress:
            progress(row)
        log.debug("step %d loss %.5f", step, row["loss"])
    metrics = validate(model, val_set)
    result = TrainResult(model, rows, metrics)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_log(rows, out / "log.csv")
        save_checkpoint(model, out / "checkpoint", cfg)
        write_metrics([("val", metrics)], out / "metrics.csv")
    return result


def write_log(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss", "val_mDice"])
        for r in rows:
            vm = r["val_mDice"]
            w.writerow([r["step"], repr(r["loss"]), "" if vm == "" else repr(vm)])


def write_metrics(named: list[tuple[str, dict[str, float]]], path: str | Path,
                  key: str = "sequence") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([key, *COLUMNS])
        for name, m in named:
            w.writerow([name, *(f"{m[c]:.6f}" for c in COLUMNS)])


def ablate(variants: list[str], base: TrainConfig, seeds: list[int],
           out_csv: str | Path | None = None,
           data: tuple[list[VideoClip], list[VideoClip]] | None = None) -> list[dict]:
    """Train every (variant, seed) pair on the same data and collect validation metrics."""
    for v in variants:
        if v not in VARIANTS:
            BlockConfig().variant(v)  # raises UnknownVariant
    data = data if data is not None else load_data(base)
    rows = []
    for v in variants:
        for s in seeds:
            res = train(replace(base, variant=v, seed=s), data=data)
            rows.append({"variant": v, "seed": s, **res.metrics})
    if out_csv is not None:
        with open(out_csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["variant", "seed", *COLUMNS])
            for r in rows:
                w.writerow([r["variant"], r["seed"], *(f"{r[c]:.6f}" for c in COLUMNS)])
    return rows


def describe(model: Module) -> str:
    return f"{type(model).__name__} with {model.num_parameters()} parameters"
