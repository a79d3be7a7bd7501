"""Deterministic, splittable random streams and basic sampling primitives.

Every stochastic routine in this package draws from an :class:`RngStream`.
A stream is identified by a 64-bit ``(seed, stream_id)`` pair and is backed
by the counter-based Philox generator, so streams for different levels,
replicates or particle lanes can be created independently of each other and
of execution order.  Identical identifiers give bit-identical draw
sequences on every run and under any thread count.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_MASK64 = (1 << 64) - 1


class RngStream:
    """A named random stream, value-like and owned by a single worker.

    Parameters
    ----------
    seed : int
        Master seed shared by all streams of one experiment.
    stream_id : int
        Lane identifier (level, replicate, particle block, ...).

    Two streams with the same ``(seed, stream_id)`` produce the same draw
    sequence; distinct ids give statistically independent streams.  Drawing
    advances internal state, so never share one stream between concurrent
    tasks -- derive children with :meth:`split` instead.
    """

    __slots__ = ("seed", "stream_id", "_generator")

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        key = np.random.SeedSequence([self.seed, self.stream_id]).generate_state(2, np.uint64)
        self._generator = np.random.Generator(np.random.Philox(key=key))

    @property
    def generator(self) -> np.random.Generator:
        return self._generator

    def split(self, *ids: int) -> "RngStream":
        """Child stream that is a pure function of (seed, stream_id, ids).

        The child's identity does not depend on how much has been drawn
        from the parent, which keeps per-level / per-replicate lanes
        reproducible under any scheduling.
        """
        child_id = np.random.SeedSequence(
            [self.seed, self.stream_id, *(int(i) & _MASK64 for i in ids)]
        ).generate_state(1, np.uint64)[0]
        return RngStream(self.seed, int(child_id))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


@dataclass
class ProbabilityVector:
    """Normalized non-negative weights over a finite index set."""

    weights: np.ndarray = field()

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a non-empty 1-D array")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and non-negative")
        total = w.sum()
        if total <= 0:
            raise ValueError("weights must have positive total mass")
        self.weights = w / total

    @classmethod
    def from_log_weights(cls, log_weights: np.ndarray) -> "ProbabilityVector":
        """Softmax with max-subtraction; at least one entry must be finite."""
        lw = np.asarray(log_weights, dtype=float)
        m = np.max(lw)
        if not np.isfinite(m):
            raise ValueError("all log-weights are -inf")
        w = np.exp(lw - m)
        return cls(w)

    def __len__(self) -> int:
        return len(self.weights)


def gaussian_vector(stream: RngStream, dim: int) -> np.ndarray:
    """``dim`` independent standard normal draws from the stream."""
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    return stream.generator.standard_normal(dim)


def categorical_sample(p: ProbabilityVector | np.ndarray, stream: RngStream) -> int:
    """Draw an index j with probability p_j."""
    p = _as_probability(p)
    u = stream.generator.random()
    return int(np.searchsorted(np.cumsum(p.weights), u, side="right").clip(0, len(p) - 1))


def categorical_sample_many(p: ProbabilityVector | np.ndarray, n: int, stream: RngStream) -> np.ndarray:
    """n i.i.d. categorical draws (vectorized inverse-CDF)."""
    p = _as_probability(p)
    u = stream.generator.random(n)
    cdf = np.cumsum(p.weights)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, u, side="right").clip(0, len(p) - 1)


def _as_probability(p) -> ProbabilityVector:
    if isinstance(p, ProbabilityVector):
        return p
    w = np.asarray(p, dtype=float)
    if np.any(w < 0):
        raise ValueError("negative probability entry")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValueError(f"probabilities sum to {w.sum():.12g}, not 1")
    return ProbabilityVector(w)
