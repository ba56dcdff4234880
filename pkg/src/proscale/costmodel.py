"""Exact-integer MAC counts for the progressive encoder and the flat baseline.

Convention: one multiply-accumulate is one FLOP. Biases, norms, activations,
softmax, pooling and resizing cost nothing; only projections, the FFN,
deformable sampling and convolutions are counted.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

from .encoder import EncoderConfig
from .errors import ValidationError
from .pyramid import TokenCounts, token_counts

COUNT_CONVENTION = "1 MAC per multiply-add"
# (kernel size) of the lateral, output and mask convolutions of the
# convolutional pixel-embedding tail, all at stride 4.
CONV_EMBEDDING_KERNELS = (1, 3, 1)


@dataclass(frozen=True)
class CostDims:
    image_height: int
    image_width: int
    channels: int = 256
    heads: int = 8
    points: int = 4
    ffn_dim: int = 1024
    baseline_layers: int = 6
    count_convention: str = COUNT_CONVENTION

    def __post_init__(self):
        if min(self.image_height, self.image_width, self.channels, self.heads, self.points, self.ffn_dim) < 1:
            raise ValidationError("cost dims must be positive")
        if self.baseline_layers < 1:
            raise ValidationError("baseline_layers must be >= 1")
        if self.channels % self.heads:
            raise ValidationError("channels must be divisible by heads")

    @classmethod
    def from_config(cls, config: EncoderConfig, image_height: int, image_width: int, baseline_layers: int = 6):
        return cls(image_height, image_width, config.channels, config.heads, config.points,
                   config.ffn_dim, baseline_layers)


@dataclass(frozen=True)
class StageCost:
    stage: int
    layer_count: int
    tokens: int
    levels: int
    macs: int


@dataclass(frozen=True)
class FlopsReport:
    dims: CostDims
    repeats: tuple[int, int, int]
    counts: TokenCounts
    per_stage: tuple[StageCost, ...]
    embedding_macs: int
    trc_macs: int
    baseline_total_macs: int | None = None
    reduction_pct: float | None = None

    @property
    def layer_macs(self) -> int:
        return sum(s.macs for s in self.per_stage)

    @property
    def total_macs(self) -> int:
        return self.layer_macs + self.embedding_macs + self.trc_macs

    def to_dict(self) -> dict:
        p1, p2, p3 = self.repeats
        return {
            "p1": p1,
            "p2": p2,
            "p3": p3,
            "dims": {k: v for k, v in asdict(self.dims).items()},
            "tokens": {"K1": self.counts.K1, "K2": self.counts.K2, "K3": self.counts.K3},
            "macs": {
                "stages": [asdict(s) for s in self.per_stage],
                "embedding": self.embedding_macs,
                "trc": self.trc_macs,
                "total": self.total_macs,
            },
            "gmacs_total": round(self.total_macs / 1e9, 4),
            "baseline_total": self.baseline_total_macs,
            "reduction_pct": None if self.reduction_pct is None else round(self.reduction_pct, 2),
        }


def macs_linear(tokens: int, c_in: int, c_out: int) -> int:
    return tokens * c_in * c_out


def macs_deformable_layer(tokens: int, levels: int, dims: CostDims) -> int:
    c, m, p, f = dims.channels, dims.heads, dims.points, dims.ffn_dim
    samples = m * levels * p
    return (
        macs_linear(tokens, c, c)  # value projection
        + macs_linear(tokens, c, c)  # output projection
        + macs_linear(tokens, c, samples * 2)  # sampling offsets
        + macs_linear(tokens, c, samples)  # attention weights
        + tokens * samples * (c // m) * 2  # bilinear interpolation + weighted sum
        + macs_linear(tokens, c, f)
        + macs_linear(tokens, f, c)
    )


def macs_conv_embedding(dims: CostDims) -> int:
    n1 = token_counts(dims.image_height, dims.image_width).n1
    return sum(n1 * k * k * dims.channels * dims.channels for k in CONV_EMBEDDING_KERNELS)


def macs_trc(counts: TokenCounts, channels: int) -> int:
    # phi dot product plus the gating multiply, for each token of s3 and s4
    return 2 * (counts.n3 + counts.n4) * channels


def macs_encoder(config: EncoderConfig, dims: CostDims, embedding: str = "lpe") -> FlopsReport:
    """Cost of the staged encoder; ``embedding`` is "lpe" (free) or "conv"."""
    if embedding not in ("lpe", "conv"):
        raise ValidationError(f"unknown embedding {embedding!r}")
    counts = token_counts(dims.image_height, dims.image_width)
    stages = tuple(
        StageCost(stage, reps, k, stage, reps * macs_deformable_layer(k, stage, dims))
        for stage, (reps, k) in enumerate(zip(config.repeats, counts.stage_lengths()), start=1)
    )
    return FlopsReport(
        dims=dims,
        repeats=config.repeats,
        counts=counts,
        per_stage=stages,
        embedding_macs=macs_conv_embedding(dims) if embedding == "conv" else 0,
        trc_macs=macs_trc(counts, dims.channels) if config.trc_enabled else 0,
    )


def macs_baseline(dims: CostDims) -> FlopsReport:
    """Flat encoder: every layer over all K3 tokens, plus the conv embedding."""
    counts = token_counts(dims.image_height, dims.image_width)
    n = dims.baseline_layers
    return FlopsReport(
        dims=dims,
        repeats=(0, 0, n),
        counts=counts,
        per_stage=(StageCost(3, n, counts.K3, 3, n * macs_deformable_layer(counts.K3, 3, dims)),),
        embedding_macs=macs_conv_embedding(dims),
        trc_macs=0,
    )


def compare(report: FlopsReport, baseline: FlopsReport) -> FlopsReport:
    if report.dims != baseline.dims:
        raise ValidationError("cannot compare reports computed for different dims")
    base = baseline.total_macs
    pct = 100.0 * (base - report.total_macs) / base
    return replace(report, baseline_total_macs=base, reduction_pct=pct)


def plan(config: EncoderConfig, dims: CostDims, embedding: str = "lpe") -> FlopsReport:
    """Encoder cost with the baseline comparison attached."""
    return compare(macs_encoder(config, dims, embedding), macs_baseline(dims))
