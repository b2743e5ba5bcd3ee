from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from ..neural import ParameterStore, SequenceBatch, add_lstm, init_uniform, run_lstm, sequence_nll
from .base import SequenceModel, batched, lm_inputs


@dataclass
class LMConfig:
    embed_dim: int = 100
    proj_dim: int | None = 300
    hidden: int = 300
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    clip: float = 5.0


def background_config(**overrides) -> LMConfig:
    return LMConfig(**{"proj_dim": None, "hidden": 64, **overrides})


class LanguageModel(SequenceModel):
    """Left-to-right single-layer LSTM language model. Takes no labels."""

    kind = "lm"
    config_cls = LMConfig

    def _init_params(self, store: ParameterStore, gen: torch.Generator) -> None:
        add_lstm(store, "lstm", self.input_dim, self.config.hidden, gen)
        store.add("out.w", init_uniform(gen, (len(self.vocab), self.config.hidden)))
        store.add("out.b", torch.zeros(len(self.vocab), dtype=torch.float64))

    def logits(self, batch: SequenceBatch) -> torch.Tensor:
        inputs, _, steps = lm_inputs(batch)
        hidden, _ = run_lstm(self.params, "lstm", self.embed(inputs), steps)
        return hidden @ self.params["out.w"].T + self.params["out.b"]

    def nll(self, batch: SequenceBatch) -> torch.Tensor:
        _, targets, steps = lm_inputs(batch)
        return sequence_nll(self.logits(batch), targets, steps)

    def loss(self, batch: SequenceBatch) -> torch.Tensor:
        return self.nll(batch).sum()

    def log_likelihood(self, seqs: Sequence[Sequence[int]], batch_size: int = 256) -> np.ndarray:
        """Natural-log sentence probability, EOS step included, no length normalisation."""
        out = np.empty(len(seqs))
        with torch.no_grad():
            for idx, batch in batched(seqs, batch_size):
                out[idx] = -self.nll(batch).numpy()
        return out


def lm_log_likelihood(model: LanguageModel, x: Sequence[int]) -> float:
    return float(model.log_likelihood([x])[0])
