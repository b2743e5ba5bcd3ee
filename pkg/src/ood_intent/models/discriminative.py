from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from ..neural import (ParameterStore, SequenceBatch, add_lstm, init_uniform, run_lstm,
                      softmax_with_temperature)
from .base import SequenceModel, batched


@dataclass
class DiscConfig:
    embed_dim: int = 100
    proj_dim: int | None = 300
    hidden: int = 300
    head: str = "softmax"   # or "lmcl"
    margin: float = 0.35
    scale: float = 30.0
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    clip: float = 5.0

    def __post_init__(self):
        if self.head not in ("softmax", "lmcl"):
            raise ValueError(f"unknown classifier head {self.head!r}")
        if self.margin < 0:
            raise ValueError("LMCL margin must be non-negative")


def _unit_rows(v: torch.Tensor, what: str) -> torch.Tensor:
    norms = v.norm(dim=-1, keepdim=True)
    if (norms == 0).any():
        raise ZeroDivisionError(f"zero-norm {what} cannot be normalised")
    return v / norms


def cosine_logits(features: torch.Tensor, weight: torch.Tensor) -> torch.Tensor:
    return _unit_rows(features, "feature vector") @ _unit_rows(weight, "weight row").T


def lmcl_from_cosines(cos: torch.Tensor, targets: torch.Tensor, margin: float, scale: float) -> torch.Tensor:
    """Summed large-margin cosine loss; the margin is taken off the target class only."""
    adjusted = cos - margin * torch.nn.functional.one_hot(targets, cos.shape[-1]).to(cos.dtype)
    logp = torch.log_softmax(scale * adjusted, dim=-1)
    return -logp.gather(-1, targets.unsqueeze(-1)).sum()


class DiscriminativeClassifier(SequenceModel):
    """BiLSTM intent classifier; sentence vector is [final forward ; final backward] state."""

    kind = "disc"
    config_cls = DiscConfig

    def __init__(self, vocab, config, labels: Sequence[str], seed: int = 0,
                 store: ParameterStore | None = None):
        self.labels = tuple(labels)
        super().__init__(vocab, config, seed, store)

    def _init_params(self, store, gen):
        H = self.config.hidden
        add_lstm(store, "lstm_f", self.input_dim, H, gen)
        add_lstm(store, "lstm_b", self.input_dim, H, gen)
        store.add("out.w", init_uniform(gen, (len(self.labels), 2 * H)))
        if self.config.head == "softmax":
            store.add("out.b", torch.zeros(len(self.labels), dtype=torch.float64))

    def _extra_metadata(self):
        return {"labels": list(self.labels)}

    @classmethod
    def _from_metadata(cls, vocab, config, meta, store):
        return cls(vocab, config, meta["labels"], meta["seed"], store=store)

    def features(self, batch: SequenceBatch) -> torch.Tensor:
        x = self.embed(batch.ids)
        _, last_f = run_lstm(self.params, "lstm_f", x, batch.lengths)
        _, last_b = run_lstm(self.params, "lstm_b", x, batch.lengths, reverse=True)
        return torch.cat([last_f, last_b], dim=-1)

    def logits(self, batch: SequenceBatch) -> torch.Tensor:
        feats = self.features(batch)
        if self.config.head == "lmcl":
            return self.config.scale * cosine_logits(feats, self.params["out.w"])
        return feats @ self.params["out.w"].T + self.params["out.b"]

    def loss(self, batch: SequenceBatch) -> torch.Tensor:
        if self.config.head == "lmcl":
            cos = cosine_logits(self.features(batch), self.params["out.w"])
            return lmcl_from_cosines(cos, batch.labels, self.config.margin, self.config.scale)
        logp = torch.log_softmax(self.logits(batch), dim=-1)
        return -logp.gather(-1, batch.labels.unsqueeze(-1)).sum()

    def _collect(self, seqs, fn, width: int, batch_size: int) -> np.ndarray:
        out = np.empty((len(seqs), width))
        with torch.no_grad():
            for idx, batch in batched(seqs, batch_size):
                out[idx] = fn(batch).numpy()
        return out

    def all_logits(self, seqs, batch_size: int = 256) -> np.ndarray:
        return self._collect(seqs, self.logits, len(self.labels), batch_size)

    def penultimate(self, seqs, batch_size: int = 256) -> np.ndarray:
        return self._collect(seqs, self.features, 2 * self.config.hidden, batch_size)

    def posterior(self, seqs, tau: float = 1.0) -> np.ndarray:
        return softmax_with_temperature(torch.from_numpy(self.all_logits(seqs)), tau).numpy()

    def predict(self, seqs) -> np.ndarray:
        return np.argmax(self.all_logits(seqs), axis=1)


def disc_posterior(model: DiscriminativeClassifier, x: Sequence[int], tau: float = 1.0) -> np.ndarray:
    return model.posterior([x], tau)[0]


def penultimate_features(model: DiscriminativeClassifier, x: Sequence[int]) -> np.ndarray:
    return model.penultimate([x])[0]


def lmcl_loss(model: DiscriminativeClassifier, x: Sequence[int], y_true: str, margin: float,
              tau: float) -> torch.Tensor:
    """LMCL of one utterance; `tau` is the inverse of the cosine scale."""
    batch = SequenceBatch.from_sequences([x], [model.labels.index(y_true)])
    cos = cosine_logits(model.features(batch), model.params["out.w"])
    return lmcl_from_cosines(cos, batch.labels, margin, 1.0 / tau)
