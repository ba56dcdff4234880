"""Multi-scale backbone features in map and token form.

Scales s1..s4 sit at strides 4, 8, 16 and 32. Non-divisible image sizes use
ceil division per stride. Token sequences concatenate scales coarsest first
(s4, s3, s2), which is the order the encoder stages grow in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ValidationError
from .numerics import Tensor, bilinear_sample, reshape

SCALE_NAMES = ("s1", "s2", "s3", "s4")
STRIDES = {"s1": 4, "s2": 8, "s3": 16, "s4": 32}
MIN_IMAGE_EXTENT = 32


@dataclass(frozen=True)
class ScaleSpec:
    name: str
    stride: int
    height: int
    width: int
    channels: int

    def __post_init__(self):
        if self.name not in STRIDES or STRIDES[self.name] != self.stride:
            raise ValidationError(f"unknown scale {self.name!r} with stride {self.stride}")
        if min(self.height, self.width, self.channels) < 1:
            raise ValidationError(f"{self.name}: extents must be positive")

    @classmethod
    def from_image(cls, name: str, image_height: int, image_width: int, channels: int) -> "ScaleSpec":
        stride = STRIDES[name]
        return cls(name, stride, math.ceil(image_height / stride), math.ceil(image_width / stride), channels)

    @property
    def tokens(self) -> int:
        return self.height * self.width

    @property
    def grid(self) -> tuple[int, int]:
        return self.height, self.width


@dataclass(frozen=True)
class TokenCounts:
    n1: int
    n2: int
    n3: int
    n4: int

    @property
    def K1(self) -> int:
        return self.n4

    @property
    def K2(self) -> int:
        return self.n4 + self.n3

    @property
    def K3(self) -> int:
        return self.n4 + self.n3 + self.n2

    def stage_lengths(self) -> tuple[int, int, int]:
        return self.K1, self.K2, self.K3

    def shares(self) -> dict[str, float]:
        """Percentage of the full K3 sequence contributed by s2, s3 and s4."""
        return {
            "s2": 100.0 * self.n2 / self.K3,
            "s3": 100.0 * self.n3 / self.K3,
            "s4": 100.0 * self.n4 / self.K3,
        }

    def as_dict(self) -> dict[str, int]:
        return {"n1": self.n1, "n2": self.n2, "n3": self.n3, "n4": self.n4,
                "K1": self.K1, "K2": self.K2, "K3": self.K3}


def _check_image(image_height: int, image_width: int) -> None:
    if image_height < MIN_IMAGE_EXTENT or image_width < MIN_IMAGE_EXTENT:
        raise ValidationError(
            f"image extents must be >= {MIN_IMAGE_EXTENT}, got ({image_height}, {image_width})"
        )


def token_counts(image_height: int, image_width: int) -> TokenCounts:
    _check_image(image_height, image_width)
    n = {name: math.ceil(image_height / s) * math.ceil(image_width / s) for name, s in STRIDES.items()}
    return TokenCounts(n["s1"], n["s2"], n["s3"], n["s4"])


def flatten_map(fmap: Tensor) -> Tensor:
    h, w, c = fmap.shape
    return reshape(fmap, (h * w, c))


def unflatten_tokens(tokens: Tensor, height: int, width: int) -> Tensor:
    if tokens.shape[0] != height * width:
        raise DimensionError(f"cannot unflatten {tokens.shape[0]} tokens to {height}x{width}")
    return reshape(tokens, (height, width, tokens.shape[1]))


@dataclass(frozen=True)
class TokenPyramid:
    image_height: int
    image_width: int
    specs: dict[str, ScaleSpec]
    maps: dict[str, Tensor]
    counts: TokenCounts = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "counts", token_counts(self.image_height, self.image_width))

    @property
    def channels(self) -> int:
        return self.specs["s1"].channels

    @property
    def dtype(self) -> np.dtype:
        return self.maps["s1"].dtype

    def tokens(self, name: str) -> Tensor:
        return flatten_map(self.maps[name])

    def with_maps(self, **maps: Tensor) -> "TokenPyramid":
        merged = dict(self.maps)
        merged.update(maps)
        return build_pyramid(self.image_height, self.image_width, self.channels, tensors=merged)


def build_pyramid(
    image_height: int,
    image_width: int,
    channels: int,
    seed: int | None = None,
    tensors: dict[str, Tensor | np.ndarray] | None = None,
    dtype=np.float64,
) -> TokenPyramid:
    """Build s1..s4 either from supplied (H, W, C) maps or seeded N(0, 1) noise."""
    _check_image(image_height, image_width)
    if channels < 1:
        raise ValidationError("channels must be positive")
    specs = {n: ScaleSpec.from_image(n, image_height, image_width, channels) for n in SCALE_NAMES}
    maps: dict[str, Tensor] = {}
    if tensors is None:
        rng = np.random.default_rng(seed)
        for n in SCALE_NAMES:
            maps[n] = Tensor(rng.standard_normal((*specs[n].grid, channels)), dtype=dtype)
    else:
        missing = [n for n in SCALE_NAMES if n not in tensors]
        if missing:
            raise ValidationError(f"missing scales {missing}")
        for n in SCALE_NAMES:
            t = tensors[n]
            t = t if isinstance(t, Tensor) else Tensor(np.asarray(t), dtype=dtype)
            expected = (*specs[n].grid, channels)
            if t.shape != expected:
                raise ValidationError(f"scale {n}: expected shape {expected}, got {t.shape}")
            maps[n] = t
        if len({t.dtype for t in maps.values()}) != 1:
            raise ValidationError("all scales must share a dtype")
    return TokenPyramid(image_height, image_width, specs, maps)


def smooth_pyramid(
    image_height: int,
    image_width: int,
    channels: int,
    seed: int = 0,
    waves: int = 3,
    dtype=np.float64,
) -> TokenPyramid:
    """Pyramid of low-frequency sinusoidal fields sampled at each stride.

    Every channel is a sum of ``waves`` plane waves whose wavelengths are at
    least the image diagonal, evaluated at each scale's pixel centres in image
    coordinates, so all scales observe the same underlying scene.
    """
    _check_image(image_height, image_width)
    rng = np.random.default_rng(seed)
    diag = math.hypot(image_height, image_width)
    angle = rng.uniform(0, 2 * np.pi, size=(channels, waves))
    wavelength = diag * rng.uniform(1.0, 3.0, size=(channels, waves))
    phase = rng.uniform(0, 2 * np.pi, size=(channels, waves))
    kx = 2 * np.pi * np.cos(angle) / wavelength
    ky = 2 * np.pi * np.sin(angle) / wavelength
    maps = {}
    for n, stride in STRIDES.items():
        h, w = math.ceil(image_height / stride), math.ceil(image_width / stride)
        ys = (np.arange(h) + 0.5) * stride
        xs = (np.arange(w) + 0.5) * stride
        yy, xx = np.meshgrid(ys, xs, indexing="ij")
        arg = yy[..., None, None] * ky + xx[..., None, None] * kx + phase
        maps[n] = Tensor(np.sin(arg).sum(axis=-1), dtype=dtype)
    return build_pyramid(image_height, image_width, channels, tensors=maps)


def positional_encoding(spec: ScaleSpec, temperature: float = 10000.0, dtype=np.float64) -> Tensor:
    """2D sine/cosine encoding of a scale's grid, shape (tokens, C).

    The first C/2 dims encode the normalised row coordinate and the last C/2
    the column coordinate, each as interleaved sin/cos pairs over geometric
    frequencies.
    """
    c = spec.channels
    if c % 4:
        raise ValidationError(f"positional encoding needs channels divisible by 4, got {c}")
    half = c // 2
    dim_t = temperature ** (2 * (np.arange(half) // 2) / half)
    y = (np.arange(spec.height) + 0.5) / spec.height * 2 * np.pi
    x = (np.arange(spec.width) + 0.5) / spec.width * 2 * np.pi

    def encode(coord):
        pos = coord[:, None] / dim_t
        out = np.empty_like(pos)
        out[:, 0::2] = np.sin(pos[:, 0::2])
        out[:, 1::2] = np.cos(pos[:, 1::2])
        return out

    ey, ex = encode(y), encode(x)
    grid = np.concatenate(
        [np.repeat(ey[:, None, :], spec.width, axis=1), np.repeat(ex[None, :, :], spec.height, axis=0)],
        axis=-1,
    )
    return Tensor(grid.reshape(spec.tokens, c), dtype=dtype)


def level_embeddings(channels: int, seed: int, dtype=np.float64) -> dict[str, Tensor]:
    """Seeded N(0, 1) stand-ins for learned per-scale level embeddings."""
    rng = np.random.default_rng([seed, 0x1E7E1])
    return {n: Tensor(rng.standard_normal(channels), dtype=dtype) for n in ("s2", "s3", "s4")}


def pixel_centers(height: int, width: int) -> np.ndarray:
    """Normalised (x, y) centres of a grid, row-major, shape (H*W, 2)."""
    ys, xs = np.meshgrid((np.arange(height) + 0.5) / height, (np.arange(width) + 0.5) / width, indexing="ij")
    return np.stack([xs.ravel(), ys.ravel()], axis=1)


def resize_bilinear(fmap: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resampling with half-pixel centres.

    Source coordinates are clamped to the outermost pixel centres, so the
    border is replicated rather than blended with zeros.
    """
    if out_h < 1 or out_w < 1:
        raise ValidationError(f"target extents must be positive, got ({out_h}, {out_w})")
    h, w, c = fmap.shape
    if (out_h, out_w) == (h, w):
        return fmap
    pts = pixel_centers(out_h, out_w)
    pts[:, 0] = (np.clip(pts[:, 0] * w - 0.5, 0, w - 1) + 0.5) / w
    pts[:, 1] = (np.clip(pts[:, 1] * h - 0.5, 0, h - 1) + 0.5) / h
    pts = Tensor(pts, dtype=fmap.dtype)
    return reshape(bilinear_sample(fmap, pts), (out_h, out_w, c))
