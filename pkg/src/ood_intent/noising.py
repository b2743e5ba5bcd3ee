"""Word-substitution noise for training background language models."""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .corpus import Utterance, Vocabulary


class NoiseKind(str, enum.Enum):
    UNIFORM = "uniform"
    UNIGRAM = "unigram"
    UNIROOT = "uniroot"


@dataclass(frozen=True)
class NoiseDistribution:
    kind: NoiseKind
    tokens: tuple[str, ...]
    weights: np.ndarray

    def __post_init__(self):
        # cumulative table for O(log |W|) draws
        cdf = np.cumsum(self.weights)
        cdf[-1] = 1.0
        object.__setattr__(self, "_cdf", cdf)

    def prob(self, token: str) -> float:
        return float(self.weights[self.tokens.index(token)])

    def sample_indices(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return np.searchsorted(self._cdf, rng.random(size), side="right")

    def sample(self, rng: np.random.Generator, size: int) -> list[str]:
        return [self.tokens[i] for i in self.sample_indices(rng, size)]


def build_noise_distribution(vocab: Vocabulary, kind: NoiseKind | str) -> NoiseDistribution:
    kind = NoiseKind(kind)
    tokens = tuple(vocab.content_tokens)
    if not tokens:
        raise ValueError("vocabulary has no non-reserved tokens")
    freq = np.array([vocab.freq[t] for t in tokens], dtype=np.float64)
    if kind is NoiseKind.UNIFORM:
        w = np.ones_like(freq)
    elif kind is NoiseKind.UNIGRAM:
        w = freq
    else:
        w = np.sqrt(freq)
    if w.sum() <= 0:
        raise ValueError("all token frequencies are zero")
    return NoiseDistribution(kind, tokens, w / w.sum())


def noise_utterance(tokens: Sequence[str], dist: NoiseDistribution, p_noise: float,
                    rng: np.random.Generator) -> list[str]:
    """Replace each position, independently with probability p_noise, by a draw from dist."""
    if not 0.0 <= p_noise <= 1.0:
        raise ValueError(f"p_noise must lie in [0, 1], got {p_noise}")
    out = list(tokens)
    hit = np.flatnonzero(rng.random(len(out)) < p_noise)
    for pos, tok in zip(hit, dist.sample(rng, len(hit))):
        out[pos] = tok
    return out


def noise_corpus(train: Sequence[Utterance], dist: NoiseDistribution, p_noise: float,
                 seed: int, epoch: int = 0) -> list[Utterance]:
    """One label-free noised copy of every utterance.

    Each utterance draws from its own stream keyed by (seed, epoch, id), so
    the output does not depend on processing order.
    """
    out = []
    for u in train:
        rng = np.random.default_rng((seed, epoch, u.id))
        out.append(replace(u, tokens=tuple(noise_utterance(u.tokens, dist, p_noise, rng)), label=None))
    return out
