"""Registered finite-difference checks for every differentiable op.

Each check builds its own float64 inputs from the seed, so a check is a pure
function of (seed, tolerance).
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import numerics as nx
from .encoder import (
    EncoderConfig,
    TrcParams,
    deformable_layer,
    init_encoder_params,
    init_layer,
    lpe,
    proscale_encode,
    trc,
)
from .numerics import GradCheckReport, Tensor, finite_diff_check, tree_leaves, tree_replace
from .pyramid import SCALE_NAMES, build_pyramid

CheckFn = Callable[[int, float], GradCheckReport]
REGISTRY: dict[str, CheckFn] = {}

# whole-encoder instance: C=8, M=2, P=2, one layer per stage
SMALL_ENCODER = EncoderConfig(1, 1, 1, channels=8, heads=2, points=2, ffn_dim=16, seed=0)
SMALL_IMAGE = (32, 32)


def register(name: str):
    def deco(fn):
        REGISTRY[name] = fn
        return fn

    return deco


def _normal(rng, *shape):
    return Tensor(rng.standard_normal(shape))


def _separated(rng, *shape):
    """Distinct values at least 0.05 apart, so max/relu kinks sit far from every probe."""
    n = int(np.prod(shape))
    values = (rng.permutation(n) - n / 2 + 0.5) * 0.05 + rng.uniform(-0.01, 0.01, size=n)
    return Tensor(values.reshape(shape))


def _off_grid_points(rng, n, height, width):
    """Normalised points whose pixel coordinates avoid integer (kink) positions."""
    pix = np.stack(
        [rng.integers(-1, width, size=n) + rng.uniform(0.05, 0.95, size=n),
         rng.integers(-1, height, size=n) + rng.uniform(0.05, 0.95, size=n)],
        axis=1,
    )
    return Tensor((pix + 0.5) / [width, height])


def _check(name, op, inputs, seed, tolerance, **kw):
    return finite_diff_check(op, inputs, tolerance, seed, op_name=name, **kw)


@register("matmul")
def check_matmul(seed, tolerance):
    rng = np.random.default_rng(seed)
    return _check("matmul", nx.matmul, [_normal(rng, 3, 4), _normal(rng, 4, 2)], seed, tolerance)


@register("linear")
def check_linear(seed, tolerance):
    rng = np.random.default_rng(seed)
    return _check("linear", nx.linear, [_normal(rng, 5, 4), _normal(rng, 4, 3), _normal(rng, 3)], seed, tolerance)


@register("softmax")
def check_softmax(seed, tolerance):
    rng = np.random.default_rng(seed)
    return _check("softmax", lambda x: nx.softmax(x, axis=-1), [_normal(rng, 4, 6)], seed, tolerance)


@register("layernorm")
def check_layernorm(seed, tolerance):
    rng = np.random.default_rng(seed)
    inputs = [_normal(rng, 5, 6), _normal(rng, 6), _normal(rng, 6)]
    return _check("layernorm", lambda x, g, b: nx.layernorm(x, 1e-5, g, b), inputs, seed, tolerance)


@register("bilinear_sample")
def check_bilinear(seed, tolerance):
    rng = np.random.default_rng(seed)
    fmap = _normal(rng, 4, 5, 3)
    points = _off_grid_points(rng, 12, 4, 5)
    return _check("bilinear_sample", nx.bilinear_sample, [fmap, points], seed, tolerance)


@register("maxpool2d")
def check_maxpool(seed, tolerance):
    rng = np.random.default_rng(seed)
    return _check("maxpool2d", lambda m: nx.maxpool2d(m, 3, 1), [_separated(rng, 5, 4, 2)], seed, tolerance)


@register("avgpool2d")
def check_avgpool(seed, tolerance):
    rng = np.random.default_rng(seed)
    return _check("avgpool2d", lambda m: nx.avgpool2d(m, 3, 1), [_normal(rng, 5, 4, 2)], seed, tolerance)


@register("add")
def check_add(seed, tolerance):
    rng = np.random.default_rng(seed)
    return _check("add", nx.add, [_normal(rng, 5, 3), _normal(rng, 5, 1)], seed, tolerance)


@register("mul")
def check_mul(seed, tolerance):
    rng = np.random.default_rng(seed)
    return _check("mul", nx.mul, [_normal(rng, 5, 3), _normal(rng, 5, 1)], seed, tolerance)


@register("relu")
def check_relu(seed, tolerance):
    rng = np.random.default_rng(seed)
    return _check("relu", nx.relu, [_separated(rng, 6, 4)], seed, tolerance)


@register("sigmoid")
def check_sigmoid(seed, tolerance):
    rng = np.random.default_rng(seed)
    return _check("sigmoid", nx.sigmoid, [_normal(rng, 6, 4)], seed, tolerance)


@register("scale")
def check_scale(seed, tolerance):
    rng = np.random.default_rng(seed)
    return _check("scale", lambda x: nx.scale(x, 0.37), [_normal(rng, 6, 4)], seed, tolerance)


@register("trc")
def check_trc(seed, tolerance):
    rng = np.random.default_rng(seed)
    s_i, s2 = _normal(rng, 2, 3, 4), _normal(rng, 8, 12, 4)
    weight, bias = _normal(rng, 4, 1), _normal(rng, 1)

    def op(a, b, w, c):
        return trc(a, b, TrcParams(w, c, 0.7))

    return _check("trc", op, [s_i, s2, weight, bias], seed, tolerance)


@register("deformable_layer")
def check_deformable_layer(seed, tolerance):
    """Random two-level layer over 12 tokens."""
    rng = np.random.default_rng(seed)
    shapes = [(2, 2), (2, 4)]
    layer = init_layer(rng, 8, 2, 2, 16, 2, np.float64, std=0.3, offset_std=0.3)
    tokens, pos = _normal(rng, 12, 8), _normal(rng, 12, 8)

    def op(t, p, *leaves):
        return deformable_layer(t, shapes, p, tree_replace(layer, leaves))

    return _check("deformable_layer", op, [tokens, pos, *tree_leaves(layer)], seed, tolerance, max_probes=300)


@register("lpe")
def check_lpe(seed, tolerance):
    rng = np.random.default_rng(seed)
    return _check("lpe", lpe, [_separated(rng, 6, 8, 4), _normal(rng, 3, 4, 4)], seed, tolerance)


@register("encoder")
def check_encoder(seed, tolerance):
    """Whole encoder on a small image, gradients w.r.t. features and all params."""
    cfg = SMALL_ENCODER
    height, width = SMALL_IMAGE
    pyramid = build_pyramid(height, width, cfg.channels, seed=seed)
    params = init_encoder_params(
        EncoderConfig(**{**cfg.__dict__, "seed": seed}), dtype=np.float64, std=0.3, offset_std=0.3
    )
    leaves = tree_leaves(params)

    def op(*xs):
        pyr = build_pyramid(height, width, cfg.channels, tensors=dict(zip(SCALE_NAMES, xs[:4])))
        out = proscale_encode(pyr, cfg, tree_replace(params, xs[4:]))
        return nx.concat(
            [nx.reshape(out.s_out, (out.s_out.data.size,)), nx.reshape(out.e_emb, (out.e_emb.data.size,))]
        )

    s1 = _separated(np.random.default_rng([seed, 1]), *pyramid.maps["s1"].shape)
    inputs = [s1] + [pyramid.maps[n] for n in SCALE_NAMES[1:]] + leaves
    return _check("encoder", op, inputs, seed, tolerance, max_probes=300)


def run_checks(names=None, seeds=range(5), tolerance: float = 1e-5) -> list[GradCheckReport]:
    names = list(REGISTRY) if names is None else list(names)
    return [REGISTRY[n](seed, tolerance) for n in names for seed in seeds]
