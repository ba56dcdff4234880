"""Progressive token-length encoder built from multi-scale deformable attention.

Stage 1 runs over the s4 tokens only, stage 2 over (s4, s3) and stage 3 over
(s4, s3, s2). Before entering the encoder, s4 and s3 can be gated by a
per-token scalar computed from the resized s2 map (token re-calibration).
The per-pixel embedding map comes from a parameter-free pooling path on s1.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ValidationError
from .numerics import (
    Tensor,
    add,
    avgpool2d,
    bilinear_sample,
    broadcast_rows,
    concat,
    layernorm,
    linear,
    maxpool2d,
    mul,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax,
    tree_leaves,
    tsum,
)
from .pyramid import (
    TokenPyramid,
    flatten_map,
    level_embeddings,
    pixel_centers,
    positional_encoding,
    resize_bilinear,
    unflatten_tokens,
)

STAGE_SCALES = (("s4",), ("s4", "s3"), ("s4", "s3", "s2"))
LN_EPS = 1e-5


@dataclass(frozen=True)
class EncoderConfig:
    p1: int = 1
    p2: int = 1
    p3: int = 1
    channels: int = 256
    heads: int = 8
    points: int = 4
    ffn_dim: int = 1024
    epsilon: float = 0.1
    trc_enabled: bool = True
    lpe_fusion: bool = True
    seed: int = 0

    def __post_init__(self):
        if min(self.p1, self.p2, self.p3) < 0:
            raise ValidationError(f"stage layer counts must be >= 0, got {self.repeats}")
        if min(self.channels, self.heads, self.points, self.ffn_dim) < 1:
            raise ValidationError("channels, heads, points and ffn_dim must be positive")
        if self.channels % self.heads:
            raise ValidationError(f"channels ({self.channels}) must be divisible by heads ({self.heads})")
        if not self.epsilon > 0:
            raise ValidationError("epsilon must be positive")

    @property
    def repeats(self) -> tuple[int, int, int]:
        return self.p1, self.p2, self.p3


def update_counts(config: EncoderConfig) -> tuple[int, int, int]:
    """How many layers update s4, s3 and s2 respectively."""
    p1, p2, p3 = config.repeats
    return p1 + p2 + p3, p2 + p3, p3


# ---------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class Linear:
    weight: Tensor  # (in, out)
    bias: Tensor

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


@dataclass(frozen=True)
class Norm:
    gamma: Tensor
    beta: Tensor


@dataclass(frozen=True)
class DeformableLayerParams:
    value_proj: Linear
    offset_proj: Linear
    weight_proj: Linear
    output_proj: Linear
    norm1: Norm
    norm2: Norm
    ffn1: Linear
    ffn2: Linear
    levels: int = 1
    heads: int = 8
    points: int = 4

    @property
    def channels(self) -> int:
        return self.value_proj.weight.shape[0]


@dataclass(frozen=True)
class TrcParams:
    weight: Tensor  # (C, 1)
    bias: Tensor  # (1,)
    epsilon: float = 0.1


@dataclass(frozen=True)
class EncoderParams:
    stages: tuple[list[DeformableLayerParams], list[DeformableLayerParams], list[DeformableLayerParams]]
    trc: TrcParams
    level_embed: dict[str, Tensor]


def _linear(rng, c_in, c_out, std, dtype) -> Linear:
    w = rng.standard_normal((c_in, c_out)) * std if std else np.zeros((c_in, c_out))
    return Linear(Tensor(w, dtype=dtype), Tensor(np.zeros(c_out), dtype=dtype))


def init_layer(
    rng: np.random.Generator,
    channels: int,
    heads: int,
    points: int,
    ffn_dim: int,
    levels: int,
    dtype=np.float32,
    std: float = 0.02,
    offset_std: float = 0.0,
) -> DeformableLayerParams:
    """Seeded untrained layer: N(0, std) projections, zero offsets, unit norms."""
    mlp = heads * levels * points
    norm = lambda: Norm(Tensor(np.ones(channels), dtype=dtype), Tensor(np.zeros(channels), dtype=dtype))  # noqa: E731
    return DeformableLayerParams(
        value_proj=_linear(rng, channels, channels, std, dtype),
        offset_proj=_linear(rng, channels, mlp * 2, offset_std, dtype),
        weight_proj=_linear(rng, channels, mlp, std, dtype),
        output_proj=_linear(rng, channels, channels, std, dtype),
        norm1=norm(),
        norm2=norm(),
        ffn1=_linear(rng, channels, ffn_dim, std, dtype),
        ffn2=_linear(rng, ffn_dim, channels, std, dtype),
        levels=levels,
        heads=heads,
        points=points,
    )


def init_encoder_params(
    config: EncoderConfig, dtype=np.float32, std: float = 0.02, offset_std: float = 0.0
) -> EncoderParams:
    """Distinct layers per repeat, seeded from ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    stages = tuple(
        [
            init_layer(rng, config.channels, config.heads, config.points, config.ffn_dim, levels, dtype, std, offset_std)
            for _ in range(count)
        ]
        for levels, count in zip((1, 2, 3), config.repeats)
    )
    trc = TrcParams(
        Tensor(rng.standard_normal((config.channels, 1)) * std, dtype=dtype),
        Tensor(np.zeros(1), dtype=dtype),
        config.epsilon,
    )
    return EncoderParams(stages, trc, level_embeddings(config.channels, config.seed, dtype))


def parameter_count(obj) -> int:
    return sum(t.data.size for t in tree_leaves(obj))


# ---------------------------------------------------------------------------
# token re-calibration


def trc(s_i_map: Tensor, s2_map: Tensor, params: TrcParams) -> Tensor:
    """Gate every token of ``s_i_map`` by sigmoid(eps * phi(resized s2))."""
    h, w, c = s_i_map.shape
    if s2_map.shape[2] != c or params.weight.shape != (c, 1):
        raise ValidationError(
            f"trc: channel mismatch between s_i {s_i_map.shape}, s2 {s2_map.shape}, phi {params.weight.shape}"
        )
    guide = flatten_map(resize_bilinear(s2_map, h, w))
    gate = sigmoid(scale(linear(guide, params.weight, params.bias), params.epsilon))
    return reshape(mul(flatten_map(s_i_map), gate), (h, w, c))


# ---------------------------------------------------------------------------
# deformable attention layer


@contextmanager
def _substep(name: str):
    try:
        yield
    except NumericError as exc:
        raise NumericError(f"deformable_layer[{name}]: {exc}") from exc


def reference_points(level_shapes) -> np.ndarray:
    """Each token's own normalised pixel centre, in concatenated token order."""
    return np.concatenate([pixel_centers(h, w) for h, w in level_shapes], axis=0)


def deformable_layer(
    tokens: Tensor,
    level_shapes,
    pos: Tensor,
    params: DeformableLayerParams,
    norms: bool = True,
) -> Tensor:
    """One post-norm deformable-attention block with a ReLU feed-forward.

    ``norms=False`` drops both layer norms; it exists for tests that need
    the raw residual sums.
    """
    level_shapes = [tuple(s) for s in level_shapes]
    k, c = tokens.shape
    sizes = [h * w for h, w in level_shapes]
    if sum(sizes) != k:
        raise ValidationError(f"deformable_layer: level shapes {level_shapes} cover {sum(sizes)} tokens, got {k}")
    if len(level_shapes) != params.levels:
        raise ValidationError(f"deformable_layer: {len(level_shapes)} levels given, layer expects {params.levels}")
    if pos.shape != tokens.shape or params.channels != c:
        raise ValidationError(f"deformable_layer: tokens {tokens.shape}, pos {pos.shape}, channels {params.channels}")
    m, n_lvl, n_pts = params.heads, params.levels, params.points
    dh = c // m
    dtype = tokens.dtype

    with _substep("projections"):
        q = add(tokens, pos)
        offsets = reshape(params.offset_proj(q), (k, m, n_lvl, n_pts, 2))
        logits = reshape(params.weight_proj(q), (k, m, n_lvl * n_pts))
        attn = reshape(softmax(logits, axis=-1), (k, m, n_lvl, n_pts))
        values = params.value_proj(tokens)

    ref = np.repeat(reference_points(level_shapes)[:, None, :], n_pts, axis=1)
    ref = Tensor(ref, dtype=dtype)
    starts = np.concatenate([[0], np.cumsum(sizes)])
    with _substep("sampling"):
        heads = []
        for head in range(m):
            acc = None
            for lvl, (h, w) in enumerate(level_shapes):
                vmap = reshape(values[starts[lvl]:starts[lvl + 1], head * dh:(head + 1) * dh], (h, w, dh))
                inv = Tensor(np.broadcast_to([1.0 / w, 1.0 / h], (k, n_pts, 2)), dtype=dtype)
                loc = add(ref, mul(offsets[:, head, lvl], inv))
                sampled = bilinear_sample(vmap, reshape(loc, (k * n_pts, 2)))
                weighted = mul(sampled, reshape(attn[:, head, lvl], (k * n_pts, 1)))
                part = tsum(reshape(weighted, (k, n_pts, dh)), axis=1)
                acc = part if acc is None else add(acc, part)
            heads.append(acc)
        attn_out = params.output_proj(concat(heads, axis=1))

    with _substep("attention_residual"):
        x1 = add(tokens, attn_out)
        if norms:
            x1 = layernorm(x1, LN_EPS, params.norm1.gamma, params.norm1.beta)
    with _substep("ffn"):
        out = add(x1, params.ffn2(relu(params.ffn1(x1))))
        if norms:
            out = layernorm(out, LN_EPS, params.norm2.gamma, params.norm2.beta)
    return out


def run_stage(tokens: Tensor, level_shapes, pos: Tensor, layers) -> Tensor:
    """Apply the stage's distinct layers in order; no layers is the identity."""
    for layer in layers:
        if layer.levels != len(level_shapes):
            raise ValidationError(f"run_stage: layer with L={layer.levels} in a {len(level_shapes)}-level stage")
        tokens = deformable_layer(tokens, level_shapes, pos, layer)
    return tokens


# ---------------------------------------------------------------------------
# light pixel embedding


@dataclass(frozen=True)
class LightPixelEmbedding:
    """Pool, channel-normalise without affine terms, then ReLU."""

    pool: str = "max"
    kernel: int = 3
    eps: float = LN_EPS

    def parameters(self) -> list[Tensor]:
        return tree_leaves(self)

    def pooled(self, s1_map: Tensor) -> Tensor:
        if self.pool == "max":
            return maxpool2d(s1_map, self.kernel, 1)
        if self.pool == "avg":
            return avgpool2d(s1_map, self.kernel, 1)
        raise ValidationError(f"unknown pooling {self.pool!r}")

    def __call__(self, s1_map: Tensor, fused_s2: Tensor | None = None) -> Tensor:
        base = relu(layernorm(self.pooled(s1_map), self.eps))
        if fused_s2 is None:
            return base
        h1, w1, c = s1_map.shape
        if fused_s2.ndim != 3 or fused_s2.shape[2] != c:
            raise ValidationError(f"lpe: fused map {fused_s2.shape} does not match s1 channels {c}")
        return add(base, resize_bilinear(fused_s2, h1, w1))


def lpe(s1_map: Tensor, fused_s2: Tensor | None = None, pool: str = "max") -> Tensor:
    return LightPixelEmbedding(pool)(s1_map, fused_s2)


# ---------------------------------------------------------------------------
# full encoder


@dataclass(frozen=True)
class EncoderOutput:
    s_out: Tensor
    per_scale: dict[str, Tensor]
    e_emb: Tensor
    update_counts: tuple[int, int, int]
    stage_lengths: tuple[int, int, int]
    stage_outputs: tuple[Tensor, Tensor, Tensor]


def stage_positions(pyramid: TokenPyramid, names, level_embed: dict[str, Tensor]) -> Tensor:
    """Sine encoding plus level embedding for each scale, concatenated."""
    parts = []
    for name in names:
        spec = pyramid.specs[name]
        sine = positional_encoding(spec, dtype=pyramid.dtype)
        parts.append(add(sine, broadcast_rows(level_embed[name], spec.tokens)))
    return concat(parts, axis=0)


def _check_params(pyramid: TokenPyramid, config: EncoderConfig, params: EncoderParams) -> None:
    if pyramid.channels != config.channels:
        raise ValidationError(f"pyramid has {pyramid.channels} channels, config expects {config.channels}")
    dtypes = {t.dtype for t in tree_leaves(params)}
    if dtypes != {pyramid.dtype}:
        raise ValidationError(f"pyramid is {pyramid.dtype}, params are {sorted(d.name for d in dtypes)}")
    for stage, (layers, count) in enumerate(zip(params.stages, config.repeats), start=1):
        if len(layers) != count:
            raise ValidationError(f"stage {stage}: {len(layers)} layers supplied, config says {count}")


def proscale_encode(
    pyramid: TokenPyramid,
    config: EncoderConfig,
    params: EncoderParams,
    pool: str = "max",
) -> EncoderOutput:
    _check_params(pyramid, config, params)
    maps = pyramid.maps
    s4, s3, s2 = maps["s4"], maps["s3"], maps["s2"]
    if config.trc_enabled:
        s4 = trc(s4, maps["s2"], params.trc)
        s3 = trc(s3, maps["s2"], params.trc)
    entering = {"s4": flatten_map(s4), "s3": flatten_map(s3), "s2": flatten_map(s2)}

    tokens = None
    outputs = []
    lengths = []
    for names, layers in zip(STAGE_SCALES, params.stages):
        new = entering[names[-1]]
        tokens = new if tokens is None else concat([tokens, new], axis=0)
        lengths.append(tokens.shape[0])
        shapes = [pyramid.specs[n].grid for n in names]
        tokens = run_stage(tokens, shapes, stage_positions(pyramid, names, params.level_embed), layers)
        outputs.append(tokens)

    per_scale = {}
    start = 0
    for name in ("s4", "s3", "s2"):
        spec = pyramid.specs[name]
        per_scale[name] = unflatten_tokens(tokens[start:start + spec.tokens], spec.height, spec.width)
        start += spec.tokens
    fused = per_scale["s2"] if config.lpe_fusion else None
    e_emb = LightPixelEmbedding(pool)(maps["s1"], fused)
    return EncoderOutput(tokens, per_scale, e_emb, update_counts(config), tuple(lengths), tuple(outputs))


def flat_encode(pyramid: TokenPyramid, layers, level_embed: dict[str, Tensor]) -> Tensor:
    """Baseline encoder: every layer sees the full (s4, s3, s2) sequence."""
    names = STAGE_SCALES[-1]
    tokens = concat([pyramid.tokens(n) for n in names], axis=0)
    shapes = [pyramid.specs[n].grid for n in names]
    return run_stage(tokens, shapes, stage_positions(pyramid, names, level_embed), layers)


def encode_batch(pyramids, config: EncoderConfig, params: EncoderParams, pool: str = "max") -> list[EncoderOutput]:
    return [proscale_encode(p, config, params, pool) for p in pyramids]
