"""The assembled desk-scale Vcamba: toy hierarchical encoder, dual-branch motion, U-shaped decoder."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import blocks as B
from . import tensor as T
from .errors import ConfigError, ShapeError, UnknownVariant
from .nn import Conv2d, LayerNorm, Linear, Module, to_channels_first, to_channels_last, upsample
from .tensor import Tensor

VARIANTS = ("full", "A1", "A2", "A3", "A4", "A5", "A6", "A7",
            "afe_scan=cross", "fusion=conv3x3", "fusion=xattn", "motion=conv3d")


@dataclass(frozen=True)
class BlockConfig:
    channels: tuple[int, ...] = (16, 32, 64, 128)
    frames: int = 5
    state: int = 8
    expansion: int = 4
    kernels: tuple[int, ...] = (1, 3, 5, 7)
    patch: int = 4
    motion_stages: tuple[int, ...] = (3, 4)
    rfvss: bool = True
    afe: bool = True
    dse: bool = True
    slmp: bool = True
    flmp: bool = True
    fusion: str = "sfmf"
    frequency: bool = True
    afe_scan: str = "spiral"
    motion: str = "ssm"

    def __post_init__(self):
        if len(self.channels) != 4 or min(self.channels) < 1:
            raise ConfigError(f"need four positive stage widths, got {self.channels}")
        if self.frames < 2:
            raise ConfigError("at least 2 frames are needed for motion")
        if self.expansion < 1 or self.state < 1 or self.patch < 1:
            raise ConfigError("expansion, state and patch must be >= 1")
        if any(s not in (1, 2, 3, 4) for s in self.motion_stages):
            raise ConfigError(f"motion stages must be within 1..4, got {self.motion_stages}")
        if self.fusion not in ("sfmf", "sum", "conv3x3", "xattn"):
            raise ConfigError(f"unknown fusion {self.fusion!r}")
        if self.afe_scan not in ("spiral", "cross"):
            raise ConfigError(f"unknown afe_scan {self.afe_scan!r}")
        if self.motion not in ("ssm", "conv3d"):
            raise ConfigError(f"unknown motion {self.motion!r}")

    @property
    def divisor(self) -> int:
        return self.patch * 8

    def variant(self, name: str) -> "BlockConfig":
        """Configuration of a named ablation applied on top of this one."""
        swaps = {
            "full": {},
            "A1": {"rfvss": False},
            "A2": {"afe": False},
            "A3": {"dse": False},
            "A4": {"slmp": False},
            "A5": {"flmp": False},
            "A6": {"fusion": "sum"},
            "A7": {"frequency": False},
            "afe_scan=cross": {"afe_scan": "cross"},
            "fusion=conv3x3": {"fusion": "conv3x3"},
            "fusion=xattn": {"fusion": "xattn"},
            "motion=conv3d": {"motion": "conv3d"},
        }
        if name not in swaps:
            raise UnknownVariant(name)
        return replace(self, **swaps[name])

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(i) for i in v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"


@dataclass
class PredictionPyramid:
    """Probability maps per hierarchy level; ``levels[0]`` is the finest (level 1).

    Each level has shape (N, 1, H, W), or (B, N, 1, H, W) for batched input.
    """

    levels: list[Tensor]
    logits: list[Tensor] = field(default_factory=list, repr=False)

    def __len__(self) -> int:
        return len(self.levels)

    def __getitem__(self, i: int) -> Tensor:
        return self.levels[i]

    def numpy(self) -> np.ndarray:
        return np.stack([lv.data for lv in self.levels])


class Identity(Module):
    def forward(self, x):
        return x


class _Stem(Module):
    """Strided conv + LayerNorm over channels."""

    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator):
        self.conv = Conv2d(c_in, c_out, k, rng, stride=k, padding=0)
        self.norm = LayerNorm(c_out)

    def forward(self, x: Tensor) -> Tensor:
        return to_channels_first(self.norm(to_channels_last(self.conv(x))))


class MotionBranch(Module):
    """Spatial (DSE then SLMP) and frequency (AFE then FLMP) motion branches and their fusion."""

    def __init__(self, dim: int, cfg: BlockConfig, rng: np.random.Generator):
        st = cfg.state
        conv3d = cfg.motion == "conv3d"
        self.dse = B.DSE(dim, rng) if cfg.dse else Identity()
        if not cfg.slmp:
            self.slmp = Identity()
        else:
            self.slmp = B.Conv3dMotion(dim, rng) if conv3d else B.SLMP(dim, rng, st)
        self.frequency = cfg.frequency
        if cfg.frequency:
            self.afe = B.AFE(dim, rng, st, scan=cfg.afe_scan) if cfg.afe else Identity()
            if not cfg.flmp:
                self.flmp = Identity()
            else:
                self.flmp = B.Conv3dMotion(dim, rng) if conv3d else B.FLMP(dim, rng, st)
            self.fusion = {
                "sfmf": lambda: B.SFMF(dim, rng, st),
                "sum": B.SumFusion,
                "conv3x3": lambda: B.ConvFusion(dim, rng),
                "xattn": lambda: B.CrossAttentionFusion(dim, rng),
            }[cfg.fusion]()

    def spatial(self, x: Tensor) -> Tensor:
        return self.slmp(self.dse(x))

    def spectral(self, x: Tensor) -> Tensor:
        return self.flmp(self.afe(x))

    def forward(self, x: Tensor) -> Tensor:
        spa = self.spatial(x)
        if not self.frequency:
            return spa
        return self.fusion(spa, self.spectral(x))


# objects cover roughly a tenth of a frame; start the heads there
PRIOR_LOGIT = float(np.log(0.1 / 0.9))


class Vcamba(Module):
    """Clip (N, 3, H, W) or batch (B, N, 3, H, W) -> PredictionPyramid of four levels."""

    def __init__(self, cfg: BlockConfig | None = None, seed: int = 0):
        cfg = cfg or BlockConfig()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        ch = cfg.channels
        self.stems = [_Stem(3, ch[0], cfg.patch, rng)]
        self.stems += [_Stem(ch[i - 1], ch[i], 2, rng) for i in range(1, 4)]
        kind = "rf" if cfg.rfvss else "plain"
        self.encoder = [B.VSSBlock(c, rng, cfg.state, kind, cfg.expansion, cfg.kernels) for c in ch]
        self.motion = {f"stage{s}": MotionBranch(ch[s - 1], cfg, rng) for s in cfg.motion_stages}
        self.lateral = [Linear(ch[i + 1], ch[i], rng) for i in range(3)]
        self.decoder = [B.VSSBlock(c, rng, cfg.state, "plain", cfg.expansion) for c in ch]
        self.heads = [Linear(c, 1, rng) for c in ch]
        for head in self.heads:
            head.bias.data[...] = PRIOR_LOGIT

    def encode(self, frames: Tensor) -> list[Tensor]:
        """Stage features, each (B, N, C_i, H_i, W_i), with motion branches folded in."""
        b, n = frames.shape[:2]
        x = T.reshape(frames, (b * n,) + frames.shape[2:])
        feats = []
        for i in range(4):
            x = self.encoder[i](self.stems[i](x))
            stage = T.reshape(x, (b, n) + x.shape[1:])
            branch = self.motion.get(f"stage{i + 1}")
            if branch is not None:
                stage = stage + branch(stage)
                x = T.reshape(stage, x.shape)
            feats.append(stage)
        return feats

    def forward(self, clip) -> PredictionPyramid:
        clip = T.as_tensor(clip)
        squeezed = clip.ndim == 4
        if squeezed:
            clip = T.reshape(clip, (1,) + clip.shape)
        if clip.ndim != 5 or clip.shape[2] != 3:
            raise ShapeError(f"expected (N,3,H,W) or (B,N,3,H,W), got {clip.shape}")
        b, n, _, h, w = clip.shape
        if n < 2:
            raise B.TooFewFrames(f"need at least 2 frames, got {n}")
        if h % self.cfg.divisor or w % self.cfg.divisor:
            raise ShapeError(f"H and W must be divisible by {self.cfg.divisor}, got {h}x{w}")
        feats = self.encode(clip)
        levels: list[Tensor | None] = [None] * 4
        logits: list[Tensor | None] = [None] * 4
        d = None
        for i in range(3, -1, -1):
            f = feats[i]
            hi, wi = f.shape[-2:]
            f = T.reshape(f, (b * n,) + f.shape[2:])
            if d is not None:
                up = upsample(d, (hi, wi))
                f = f + to_channels_first(self.lateral[i](to_channels_last(up)))
            d = self.decoder[i](f)
            logit = to_channels_first(self.heads[i](to_channels_last(d)))
            logit = T.reshape(upsample(logit, (h, w)), (b, n, 1, h, w))
            prob = T.sigmoid(logit)
            if squeezed:
                logit = T.reshape(logit, logit.shape[1:])
                prob = T.reshape(prob, prob.shape[1:])
            levels[i], logits[i] = prob, logit
        return PredictionPyramid(levels, logits)
