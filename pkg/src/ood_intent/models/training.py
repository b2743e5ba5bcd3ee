"""Training loops with per-epoch checkpoint selection."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from ..corpus import DatasetBundle, Utterance, Vocabulary, encode
from ..metrics import multiclass_macro_f1
from ..neural import NonFiniteError, adam_step, clip_grad_norm, iter_batches, perplexity
from ..noising import NoiseDistribution, noise_corpus
from .base import SequenceModel, derive_seed
from .discriminative import DiscConfig, DiscriminativeClassifier
from .generative import GenConfig, GenerativeClassifier
from .language_model import LanguageModel, LMConfig

log = logging.getLogger(__name__)


@dataclass
class RunLog:
    metric: str
    higher_is_better: bool
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = -1

    @property
    def best_value(self) -> float:
        return self.epochs[self.best_epoch][self.metric]


def fit(model: SequenceModel, data_for_epoch: Callable[[int], tuple[list, list | None]],
        select: Callable[[], float], metric: str, higher_is_better: bool, seed: int) -> RunLog:
    """Train for config.epochs epochs and restore the parameters of the best epoch."""
    cfg = model.config
    rng = np.random.default_rng(seed)
    run = RunLog(metric, higher_is_better)
    best_snap = None
    for epoch in range(cfg.epochs):
        seqs, labels = data_for_epoch(epoch)
        total = 0.0
        for _, batch in iter_batches(seqs, cfg.batch_size, labels, order=rng.permutation(len(seqs))):
            model.params.zero_grad()
            loss = model.loss(batch)
            if not torch.isfinite(loss):
                raise NonFiniteError(f"{model.kind}: loss diverged in epoch {epoch}")
            (loss / len(batch)).backward()
            clip_grad_norm(model.params, cfg.clip)
            adam_step(model.params, lr=cfg.lr)
            total += loss.item()
        value = select()
        if math.isnan(value):
            raise NonFiniteError(f"{model.kind}: selection metric {metric} is NaN in epoch {epoch}")
        run.epochs.append({"epoch": epoch, "train_loss": total / max(len(seqs), 1), metric: value})
        # ties go to the later, longer-trained epoch
        better = run.best_epoch < 0 or (
            value >= run.best_value if higher_is_better else value <= run.best_value
        )
        if better:
            run.best_epoch, best_snap = epoch, model.params.snapshot()
        log.info("%s epoch %d: %s=%.4f", model.kind, epoch, metric, value)
    model.params.zero_grad()
    if best_snap is not None:
        model.params.restore(best_snap)
    return run


def validation_perplexity(model: LanguageModel, seqs: Sequence[Sequence[int]]) -> float:
    ll = model.log_likelihood(seqs)
    steps = sum(len(s) - 1 for s in seqs)
    return perplexity(-float(ll.sum()), steps)


def _encode_all(utts: Sequence[Utterance], vocab: Vocabulary) -> list[list[int]]:
    return [encode(u, vocab) for u in utts]


def _valid_id(bundle: DatasetBundle) -> list[Utterance]:
    return [u for u in bundle.valid if not u.is_ood]


def train_language_model(train: Sequence[Utterance], valid: Sequence[Utterance], vocab: Vocabulary,
                         config: LMConfig, rng_seed: int, noise: NoiseDistribution | None = None,
                         p_noise: float = 0.5, resample: bool = True):
    """Fit an LSTM LM, keeping the epoch with the lowest ID-validation perplexity.

    With `noise`, the model is a background LM trained on substitution-noised
    copies of `train`, redrawn every epoch unless `resample` is False.
    """
    if not train:
        raise ValueError("empty training corpus")
    model = LanguageModel(vocab, config, seed=derive_seed(rng_seed, "init"))
    valid_seqs = _encode_all(valid, vocab)
    clean = _encode_all(train, vocab)

    def data(epoch):
        if noise is None:
            return clean, None
        noised = noise_corpus(train, noise, p_noise, rng_seed, epoch if resample else 0)
        return _encode_all(noised, vocab), None

    run = fit(model, data, lambda: validation_perplexity(model, valid_seqs), "perplexity", False,
              derive_seed(rng_seed, "order"))
    return model, run


def train_generative_classifier(bundle: DatasetBundle, vocab: Vocabulary, config: GenConfig, rng_seed: int,
                                pretrained: dict | None = None):
    """Fit P(x|y) by per-word cross-entropy; select the epoch with the best ID-validation macro-F1."""
    model = GenerativeClassifier(vocab, config, bundle.labels, bundle.class_counts,
                                 seed=derive_seed(rng_seed, "init"))
    if pretrained:
        model.load_pretrained(pretrained)
    seqs = _encode_all(bundle.train_id, vocab)
    labels = [model.label_index(u.label) for u in bundle.train_id]
    vid = _valid_id(bundle)
    v_seqs, v_lab = _encode_all(vid, vocab), [model.label_index(u.label) for u in vid]
    run = fit(model, lambda e: (seqs, labels),
              lambda: multiclass_macro_f1(v_lab, model.predict(v_seqs), len(model.labels)),
              "macro_f1", True, derive_seed(rng_seed, "order"))
    return model, run


def train_discriminative_classifier(bundle: DatasetBundle, vocab: Vocabulary, config: DiscConfig,
                                    rng_seed: int, pretrained: dict | None = None):
    """Fit the BiLSTM classifier (softmax or LMCL head); select by ID-validation macro-F1."""
    model = DiscriminativeClassifier(vocab, config, bundle.labels, seed=derive_seed(rng_seed, "init"))
    if pretrained:
        model.load_pretrained(pretrained)
    index = {y: i for i, y in enumerate(model.labels)}
    seqs = _encode_all(bundle.train_id, vocab)
    labels = [index[u.label] for u in bundle.train_id]
    vid = _valid_id(bundle)
    v_seqs, v_lab = _encode_all(vid, vocab), [index[u.label] for u in vid]
    run = fit(model, lambda e: (seqs, labels),
              lambda: multiclass_macro_f1(v_lab, model.predict(v_seqs), len(model.labels)),
              "macro_f1", True, derive_seed(rng_seed, "order"))
    return model, run
