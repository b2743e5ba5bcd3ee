from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import torch
from scipy.special import logsumexp

from ..neural import ParameterStore, SequenceBatch, add_lstm, init_uniform, run_lstm, sequence_nll
from .base import SequenceModel, batched, lm_inputs


@dataclass
class GenConfig:
    embed_dim: int = 100
    proj_dim: int | None = 300
    hidden: int = 300
    label_dim: int = 20
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    clip: float = 5.0


class GenerativeClassifier(SequenceModel):
    """Class-conditional LSTM language model P(x|y) with a label prior P(y).

    The LSTM is shared across labels; at every step the output layer reads
    the hidden state concatenated with the label's embedding.
    """

    kind = "gen"
    config_cls = GenConfig

    def __init__(self, vocab, config, labels: Sequence[str], class_counts: Mapping[str, int],
                 seed: int = 0, store: ParameterStore | None = None):
        self.labels = tuple(labels)
        self.class_counts = {y: int(class_counts[y]) for y in self.labels}
        counts = np.array([self.class_counts[y] for y in self.labels], dtype=np.float64)
        self.log_prior = np.log(counts / counts.sum())
        super().__init__(vocab, config, seed, store)

    def _init_params(self, store, gen):
        V, H, L = len(self.vocab), self.config.hidden, self.config.label_dim
        add_lstm(store, "lstm", self.input_dim, H, gen)
        store.add("label_embed", init_uniform(gen, (len(self.labels), L)))
        store.add("out.w_h", init_uniform(gen, (V, H)))
        store.add("out.w_l", init_uniform(gen, (V, L)))
        store.add("out.b", torch.zeros(V, dtype=torch.float64))

    def _extra_metadata(self):
        return {"labels": list(self.labels), "class_counts": self.class_counts}

    @classmethod
    def _from_metadata(cls, vocab, config, meta, store):
        return cls(vocab, config, meta["labels"], meta["class_counts"], meta["seed"], store=store)

    def label_index(self, y: str) -> int:
        try:
            return self.labels.index(y)
        except ValueError:
            raise KeyError(f"unknown label {y!r}") from None

    def _hidden(self, batch: SequenceBatch):
        inputs, targets, steps = lm_inputs(batch)
        hidden, _ = run_lstm(self.params, "lstm", self.embed(inputs), steps)
        base = hidden @ self.params["out.w_h"].T + self.params["out.b"]
        return base, targets, steps

    def _label_bias(self) -> torch.Tensor:
        # (K, V): output-layer contribution of each label embedding
        return self.params["label_embed"] @ self.params["out.w_l"].T

    def nll(self, batch: SequenceBatch, label_ids: torch.Tensor) -> torch.Tensor:
        base, targets, steps = self._hidden(batch)
        logits = base + self._label_bias()[label_ids].unsqueeze(1)
        return sequence_nll(logits, targets, steps)

    def loss(self, batch: SequenceBatch) -> torch.Tensor:
        return self.nll(batch, batch.labels).sum()

    def conditional_loglik(self, seqs: Sequence[Sequence[int]], batch_size: int = 256) -> np.ndarray:
        """(N, K) matrix of log P(x|y)."""
        out = np.empty((len(seqs), len(self.labels)))
        with torch.no_grad():
            lab = self._label_bias()
            for idx, batch in batched(seqs, batch_size):
                base, targets, steps = self._hidden(batch)
                for k in range(len(self.labels)):
                    out[idx, k] = -sequence_nll(base + lab[k], targets, steps).numpy()
        return out

    def joint_loglik(self, seqs) -> np.ndarray:
        return self.conditional_loglik(seqs) + self.log_prior

    def marginal_loglik(self, seqs) -> np.ndarray:
        """log sum_y P(x|y) P(y)."""
        return logsumexp(self.joint_loglik(seqs), axis=1)

    def predict(self, seqs) -> np.ndarray:
        # np.argmax returns the first maximum, i.e. ties go to the earlier label
        return np.argmax(self.joint_loglik(seqs), axis=1)


def gen_conditional_loglik(model: GenerativeClassifier, x: Sequence[int], y: str) -> float:
    return float(model.conditional_loglik([x])[0, model.label_index(y)])


def gen_marginal_loglik(model: GenerativeClassifier, x: Sequence[int]) -> float:
    return float(model.marginal_loglik([x])[0])


def gen_predict(model: GenerativeClassifier, x: Sequence[int]) -> str:
    return model.labels[int(model.predict([x])[0])]
