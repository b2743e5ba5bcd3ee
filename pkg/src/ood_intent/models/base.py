from __future__ import annotations

import dataclasses
import zlib
from pathlib import Path
from typing import ClassVar, Sequence

import numpy as np
import torch

from ..corpus import Vocabulary
from ..neural import DTYPE, ParameterStore, SequenceBatch, init_uniform, iter_batches


class VocabularyMismatch(ValueError):
    pass


def derive_seed(seed: int, name: str) -> int:
    """Stable per-component seed so results do not depend on training order."""
    return int(np.random.SeedSequence([seed, zlib.crc32(name.encode())]).generate_state(1)[0])


class SequenceModel:
    """Embedding (+ optional up-projection) front end shared by all models."""

    kind: ClassVar[str] = "base"
    config_cls: ClassVar[type]

    def __init__(self, vocab: Vocabulary, config, seed: int = 0, store: ParameterStore | None = None):
        self.vocab = vocab
        self.config = config
        self.seed = seed
        if store is None:
            gen = torch.Generator().manual_seed(seed)
            store = ParameterStore()
            store.add("embed", init_uniform(gen, (len(vocab), config.embed_dim)))
            if config.proj_dim:
                store.add("proj", init_uniform(gen, (config.embed_dim, config.proj_dim)))
            self._init_params(store, gen)
        self.params = store

    @property
    def input_dim(self) -> int:
        return self.config.proj_dim or self.config.embed_dim

    def _init_params(self, store: ParameterStore, gen: torch.Generator) -> None:
        raise NotImplementedError

    def embed(self, ids: torch.Tensor) -> torch.Tensor:
        x = self.params["embed"][ids]
        if "proj" in self.params:
            x = x @ self.params["proj"]
        return x

    def load_pretrained(self, vectors: dict[int, np.ndarray]) -> int:
        """Overwrite embedding rows for the given token ids; other rows keep their init."""
        table = self.params["embed"]
        with torch.no_grad():
            for idx, vec in vectors.items():
                if len(vec) != table.shape[1]:
                    raise ValueError(f"pretrained vector has dimension {len(vec)}, embeddings have {table.shape[1]}")
                table[idx] = torch.as_tensor(vec, dtype=DTYPE)
        return len(vectors)

    def check_vocab(self, other: "SequenceModel") -> None:
        if self.vocab != other.vocab:
            raise VocabularyMismatch(f"{self.kind} and {other.kind} models use different vocabularies")

    def _extra_metadata(self) -> dict:
        return {}

    def save(self, stem, **metadata) -> None:
        meta = {
            "kind": self.kind,
            "seed": self.seed,
            "config": dataclasses.asdict(self.config),
            "vocab": self.vocab.id_to_token,
            "freq": self.vocab.freq,
            **self._extra_metadata(),
            **metadata,
        }
        Path(stem).parent.mkdir(parents=True, exist_ok=True)
        self.params.save(stem, meta)

    @classmethod
    def load(cls, stem):
        store, meta = ParameterStore.load(stem)
        if meta.get("kind") != cls.kind:
            raise ValueError(f"{stem}: checkpoint holds a {meta.get('kind')!r} model, not {cls.kind!r}")
        vocab = Vocabulary(meta["vocab"], meta["freq"])
        return cls._from_metadata(vocab, cls.config_cls(**meta["config"]), meta, store)

    @classmethod
    def _from_metadata(cls, vocab, config, meta, store):
        return cls(vocab, config, meta["seed"], store=store)


def batched(seqs: Sequence[Sequence[int]], batch_size: int = 256):
    """Length-sorted batches for inference; yields (original indices, batch)."""
    order = sorted(range(len(seqs)), key=lambda i: len(seqs[i]))
    yield from iter_batches(seqs, batch_size, order=order)


def lm_inputs(batch: SequenceBatch):
    """Inputs, targets and step counts for next-token prediction."""
    return batch.ids[:, :-1], batch.ids[:, 1:], batch.lengths - 1
