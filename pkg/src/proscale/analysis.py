"""Token redundancy: mean cosine similarity between tokens d apart."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .numerics import Tensor


@dataclass(frozen=True)
class RedundancyProfile:
    scale: str
    distances: tuple[int, ...]
    mean_similarity: tuple[float, ...]
    sample_count: tuple[int, ...]
    zero_rows: int = 0

    def rows(self):
        return zip(self.distances, self.mean_similarity, self.sample_count)


def redundancy_profile(tokens, max_distance: int, scale: str = "tokens") -> RedundancyProfile:
    """Average cos(tokens[t], tokens[t + d]) over t, for d = 0..max_distance.

    Distances run along the flattened token axis. Pairs involving an
    all-zero token are skipped; ``sample_count`` reports how many pairs
    contributed at each distance.
    """
    x = np.asarray(tokens.data if isinstance(tokens, Tensor) else tokens, dtype=np.float64)
    if x.ndim != 2:
        raise ValidationError(f"expected (N, C) tokens, got shape {x.shape}")
    n = x.shape[0]
    if max_distance < 0 or max_distance >= n:
        raise ValidationError(f"max_distance must satisfy 0 <= D < N={n}, got {max_distance}")
    # rescale rows by their largest entry first so tiny or huge magnitudes
    # cannot underflow or overflow in the squared norm
    peak = np.abs(x).max(axis=1)
    nonzero = peak > 0
    unit = np.zeros_like(x)
    unit[nonzero] = x[nonzero] / peak[nonzero, None]
    unit[nonzero] /= np.linalg.norm(unit[nonzero], axis=1)[:, None]

    means, counts = [], []
    for d in range(max_distance + 1):
        valid = nonzero[: n - d] & nonzero[d:]
        cos = np.einsum("ij,ij->i", unit[: n - d], unit[d:])[valid]
        counts.append(int(valid.sum()))
        means.append(float(np.clip(cos.mean(), -1.0, 1.0)) if cos.size else float("nan"))
    return RedundancyProfile(
        scale, tuple(range(max_distance + 1)), tuple(means), tuple(counts), int((~nonzero).sum())
    )


def pyramid_profiles(pyramid, max_distance: int, scales=("s2", "s3", "s4")) -> dict[str, RedundancyProfile]:
    return {s: redundancy_profile(pyramid.tokens(s), max_distance, s) for s in scales}
