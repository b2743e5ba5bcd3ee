"""Disjoint-vocabulary benchmark for end-to-end checks.

Each in-domain class, and the OOD source, is a first-order Markov grammar
over its own content words. A small set of function words is shared by
all grammars, so OOD sentences are not trivially all-unknown.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .corpus import DatasetBundle, Utterance, write_tsv

GRAMMARS = ("alpha", "bravo", "charlie")
OOD_GRAMMAR = "delta"
FUNCTION_WORDS = ("the", "a", "please", "to", "my", "for", "of", "and")


class BigramGrammar:
    def __init__(self, name: str, rng: np.random.Generator, n_content: int = 24, fanout: int = 3,
                 p_function: float = 0.3, length: tuple[int, int] = (3, 8)):
        self.name = name
        self.words = [f"{name}{j}" for j in range(n_content)]
        self.successors = [rng.choice(n_content, size=fanout, replace=False) for _ in range(n_content)]
        self.p_function = p_function
        self.length = length

    def sample(self, rng: np.random.Generator) -> list[str]:
        n = int(rng.integers(self.length[0], self.length[1] + 1))
        state = int(rng.integers(len(self.words)))
        out = []
        for _ in range(n):
            out.append(self.words[state])
            if rng.random() < self.p_function:
                out.append(FUNCTION_WORDS[int(rng.integers(len(FUNCTION_WORDS)))])
            state = int(rng.choice(self.successors[state]))
        return out


def emit_synthetic_benchmark(rng_seed: int = 0, n_train: int = 3000, n_valid: int = 600, n_test: int = 600,
                             n_ood_valid: int = 300, n_ood_test: int = 300, out_dir=None) -> DatasetBundle:
    """Build the benchmark; with `out_dir`, also write train/valid/test TSV files there."""
    rng = np.random.default_rng(rng_seed)
    grammars = [BigramGrammar(g, rng) for g in GRAMMARS]
    ood = BigramGrammar(OOD_GRAMMAR, rng)
    next_id = 0

    def make(n_id: int, n_ood: int) -> list[Utterance]:
        nonlocal next_id
        out = []
        for i in range(n_id):
            g = grammars[i % len(grammars)]
            toks = g.sample(rng)
            out.append(Utterance(next_id, " ".join(toks), tuple(toks), g.name))
            next_id += 1
        for _ in range(n_ood):
            toks = ood.sample(rng)
            out.append(Utterance(next_id, " ".join(toks), tuple(toks), None, True))
            next_id += 1
        return out

    bundle = DatasetBundle.build(make(n_train, 0), make(n_valid, n_ood_valid), make(n_test, n_ood_test))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for split, utts in (("train", bundle.train_id), ("valid", bundle.valid), ("test", bundle.test)):
            write_tsv(out / f"{split}.tsv", utts)
    return bundle
