"""OOD scorers. Every eta is oriented so that higher means more OOD."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.special import xlogy

from .lof import NeighborIndex
from .models import DiscriminativeClassifier, GenerativeClassifier, LanguageModel
from .noising import NoiseKind

_BIG = np.finfo(np.float64).max


@dataclass(frozen=True)
class OodScore:
    utterance_id: int
    method: str
    eta: float
    is_ood: bool

    def __post_init__(self):
        if np.isnan(self.eta):
            raise ValueError(f"utterance {self.utterance_id}: eta is NaN")
        # +-inf sentinels from degenerate LOF neighbourhoods
        object.__setattr__(self, "eta", float(np.clip(self.eta, -_BIG, _BIG)))


def score_msp(posterior) -> np.ndarray | float:
    p = np.asarray(posterior, dtype=np.float64)
    return 1.0 - p.max(axis=-1)


def score_entropy(posterior) -> np.ndarray | float:
    p = np.asarray(posterior, dtype=np.float64)
    return -xlogy(p, p).sum(axis=-1)


def score_neg_kl(posterior, reference) -> np.ndarray | float:
    """-KL(P || reference); zero when the posterior equals the reference."""
    p = np.asarray(posterior, dtype=np.float64)
    ref = np.asarray(reference, dtype=np.float64)
    if (ref <= 0).any():
        raise ValueError("reference distribution must be strictly positive")
    return -(xlogy(p, p) - xlogy(p, ref)).sum(axis=-1)


def uniform_reference(n_labels: int) -> np.ndarray:
    return np.full(n_labels, 1.0 / n_labels)


def label_ratio_reference(labels: Sequence[str], class_counts: Mapping[str, int]) -> np.ndarray:
    counts = np.array([class_counts[y] for y in labels], dtype=np.float64)
    return counts / counts.sum()


def _loglik(model, seqs) -> np.ndarray:
    if isinstance(model, GenerativeClassifier):
        return model.marginal_loglik(seqs)
    if isinstance(model, LanguageModel):
        return model.log_likelihood(seqs)
    if callable(model):
        return np.asarray(model(seqs), dtype=np.float64)
    raise TypeError(f"cannot compute a likelihood from {type(model).__name__}")


def score_neg_loglik(model, seqs) -> np.ndarray:
    """-log P(x) from an LM, a generative classifier's marginal, or a callable."""
    return -_loglik(model, seqs)


def score_llr(main, background: LanguageModel, seqs) -> np.ndarray:
    """log P_B(x) - log P_M(x), the negated log likelihood ratio."""
    main.check_vocab(background)
    return _loglik(background, seqs) - _loglik(main, seqs)


def score_lof(classifier: DiscriminativeClassifier, index: NeighborIndex, seqs) -> np.ndarray:
    return index.score(classifier.penultimate(seqs))


@dataclass(frozen=True)
class MethodSpec:
    name: str
    models: tuple[str, ...]
    score: Callable[..., np.ndarray]
    threshold: str = "f1"   # "contamination" for LOF methods


def _msp(tau_key: str):
    def run(models, seqs, settings):
        return score_msp(models["disc"].posterior(seqs, settings.get(tau_key, 1.0)))
    return run


def _neg_kl(kind: str):
    def run(models, seqs, settings):
        disc = models["disc"]
        post = disc.posterior(seqs, 1.0)
        if kind == "u":
            ref = uniform_reference(len(disc.labels))
        else:
            ref = label_ratio_reference(disc.labels, settings["class_counts"])
        return score_neg_kl(post, ref)
    return run


def _lof(model_key: str):
    def run(models, seqs, settings):
        return score_lof(models[model_key], settings["lof_index"][model_key], seqs)
    return run


def _llr(main_key: str, back_key: str):
    def run(models, seqs, settings):
        return score_llr(models[main_key], models[back_key], seqs)
    return run


def _build_methods() -> dict[str, MethodSpec]:
    m = {
        "msp": MethodSpec("msp", ("disc",), _msp("msp_tau")),
        "msp_t1e3": MethodSpec("msp_t1e3", ("disc",), _msp("msp_high_tau")),
        "neg_kl_u": MethodSpec("neg_kl_u", ("disc",), _neg_kl("u")),
        "neg_kl_r": MethodSpec("neg_kl_r", ("disc",), _neg_kl("r")),
        "lof": MethodSpec("lof", ("disc",), _lof("disc"), "contamination"),
        "lof_lmcl": MethodSpec("lof_lmcl", ("disc_lmcl",), _lof("disc_lmcl"), "contamination"),
        "l_simple": MethodSpec("l_simple", ("lm",), lambda ms, s, _: score_neg_loglik(ms["lm"], s)),
        "l_gen": MethodSpec("l_gen", ("gen",), lambda ms, s, _: score_neg_loglik(ms["gen"], s)),
    }
    for kind in NoiseKind:
        back = f"back_{kind.value}"
        for base, main in (("l_simple", "lm"), ("l_gen", "gen")):
            name = f"{base}_backlm_{kind.value}"
            m[name] = MethodSpec(name, (main, back), _llr(main, back))
    return m


METHODS = _build_methods()


def required_models(methods: Iterable[str]) -> list[str]:
    need = []
    for name in methods:
        for key in METHODS[name].models:
            if key not in need:
                need.append(key)
    return need


def write_scores(path, scores: Iterable[OodScore]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in scores:
            fh.write(f"{s.utterance_id}\t{s.method}\t{s.eta!r}\t{int(s.is_ood)}\n")


def read_scores(path) -> list[OodScore]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line:
            uid, method, eta, ood = line.split("\t")
            out.append(OodScore(int(uid), method, float(eta), ood == "1"))
    return out
