"""Experiment orchestration: prepare -> train -> score -> eval -> report.

Per-seed layout under the output directory::

    <seed>/data/       prepared splits and vocabulary
    <seed>/checkpoints/
    <seed>/scores/     valid_<method>.tsv, test_<method>.tsv
    <seed>/curves/     ROC / PR points per method
    <seed>/eval.json
    report.json, report.tsv
"""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import numpy as np
import torch

from . import corpus
from .config import ExperimentConfig
from .corpus import DatasetBundle, Utterance, Vocabulary, encode
from .lof import NeighborIndex, tune_contamination
from .metrics import EvalReport, ScoredSet, evaluate, pr_curve, roc_curve
from .models import (DiscriminativeClassifier, GenerativeClassifier, LanguageModel, derive_seed, load_model,
                     train_discriminative_classifier, train_generative_classifier, train_language_model)
from .noising import NoiseKind, build_noise_distribution
from .scoring import METHODS, OodScore, read_scores, required_models, write_scores

log = logging.getLogger(__name__)


def seed_dir(cfg: ExperimentConfig, seed: int) -> Path:
    return cfg.out / str(seed)


# ---------------------------------------------------------------- prepare

def _save_split(path: Path, utts) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for u in utts:
            fh.write(f"{u.id}\t{'' if u.label is None else u.label}\t{int(u.is_ood)}\t{' '.join(u.tokens)}\n")


def _load_split(path: Path) -> list[Utterance]:
    out = []
    for line in path.read_text(encoding="utf-8").splitlines():
        uid, label, ood, text = line.split("\t")
        toks = tuple(text.split(" "))
        out.append(Utterance(int(uid), text, toks, None if ood == "1" else label, ood == "1"))
    return out


def build_bundle(cfg: ExperimentConfig, seed: int) -> DatasetBundle:
    d = cfg.data
    kw = {"schema": d.schema, "ood_label": d.ood_label}
    train = corpus.load_tsv(d.train, **kw)
    valid = corpus.load_tsv(d.valid, start_id=len(train), **kw)
    test = corpus.load_tsv(d.test, start_id=len(train) + len(valid), **kw)
    if d.ood:
        ood = corpus.load_tsv(d.ood, start_id=len(train) + len(valid) + len(test), **kw)
        ood = [u if u.is_ood else Utterance(u.id, u.raw, u.tokens, None, True) for u in ood]
        n_vid = sum(not u.is_ood for u in valid)
        n_tid = sum(not u.is_ood for u in test)
        frac = d.ood_valid_fraction or corpus.default_valid_fraction(n_vid, n_tid)
        v_ood, t_ood = corpus.split_ood(ood, frac, seed)
        valid, test = valid + v_ood, test + t_ood
    bundle = DatasetBundle.build(train, valid, test)
    if d.label_mode == "coarse":
        bundle = corpus.coarsen_labels(bundle, d.label_sep)
    if d.holdout_k:
        bundle = corpus.make_holdout_split(bundle, d.holdout_k, seed)
    return bundle


def prepare(cfg: ExperimentConfig, seed: int):
    out = seed_dir(cfg, seed) / "data"
    out.mkdir(parents=True, exist_ok=True)
    bundle = build_bundle(cfg, seed)
    vocab = corpus.build_vocabulary(bundle.train_id, cfg.data.min_freq)
    for name, utts in (("train", bundle.train_id), ("valid", bundle.valid), ("test", bundle.test)):
        _save_split(out / f"{name}.tsv", utts)
    vocab.save(out / "vocab.tsv")
    (out / "labels.json").write_text(json.dumps({"labels": list(bundle.labels),
                                                 "class_counts": bundle.class_counts}, indent=2))
    log.info("seed %d: %d train / %d valid / %d test, %d labels, vocab %d", seed, len(bundle.train_id),
             len(bundle.valid), len(bundle.test), len(bundle.labels), len(vocab))
    return bundle, vocab


def load_prepared(cfg: ExperimentConfig, seed: int):
    d = seed_dir(cfg, seed) / "data"
    meta = json.loads((d / "labels.json").read_text())
    bundle = DatasetBundle(
        tuple(_load_split(d / "train.tsv")), tuple(_load_split(d / "valid.tsv")),
        tuple(_load_split(d / "test.tsv")), tuple(meta["labels"]), meta["class_counts"],
    )
    return bundle, Vocabulary.load(d / "vocab.tsv")


# ---------------------------------------------------------------- train

def _ckpt(cfg, seed, key) -> Path:
    return seed_dir(cfg, seed) / "checkpoints" / key


def train_model(cfg: ExperimentConfig, seed: int, key: str, bundle: DatasetBundle, vocab: Vocabulary,
                pretrained: dict | None = None):
    s = derive_seed(seed, key)
    m = cfg.models
    valid_id = [u for u in bundle.valid if not u.is_ood]
    if key == "lm":
        return train_language_model(bundle.train_id, valid_id, vocab, m.lm, s)
    if key.startswith("back_"):
        noise = build_noise_distribution(vocab, NoiseKind(key[len("back_"):]))
        return train_language_model(bundle.train_id, valid_id, vocab, m.background, s, noise=noise,
                                    p_noise=cfg.p_noise, resample=cfg.noise_resample)
    if key == "gen":
        return train_generative_classifier(bundle, vocab, m.gen, s,
                                           pretrained if cfg.data.pretrained_for_gen else None)
    if key in ("disc", "disc_lmcl"):
        return train_discriminative_classifier(bundle, vocab, getattr(m, key), s, pretrained)
    raise KeyError(key)


def train(cfg: ExperimentConfig, seed: int) -> None:
    torch.set_num_threads(cfg.threads)
    bundle, vocab = load_prepared(cfg, seed)
    pretrained = None
    for key in required_models(cfg.methods):
        stem = _ckpt(cfg, seed, key)
        if cfg.cache and stem.with_suffix(".bin").exists():
            log.info("seed %d: reusing checkpoint %s", seed, key)
            continue
        if pretrained is None and cfg.data.pretrained and key in ("gen", "disc", "disc_lmcl"):
            dim = getattr(cfg.models, key).embed_dim
            pretrained = corpus.load_pretrained_vectors(cfg.data.pretrained, vocab, dim)
        log.info("seed %d: training %s", seed, key)
        model, run = train_model(cfg, seed, key, bundle, vocab, pretrained)
        model.save(stem, selection={"metric": run.metric, "best_epoch": run.best_epoch, "epochs": run.epochs})


# ---------------------------------------------------------------- score

def load_models(cfg: ExperimentConfig, seed: int) -> dict:
    return {key: load_model(_ckpt(cfg, seed, key)) for key in required_models(cfg.methods)}


def score(cfg: ExperimentConfig, seed: int) -> None:
    torch.set_num_threads(cfg.threads)
    bundle, vocab = load_prepared(cfg, seed)
    models = load_models(cfg, seed)
    out = seed_dir(cfg, seed) / "scores"
    out.mkdir(parents=True, exist_ok=True)
    settings = {"msp_tau": cfg.msp_tau, "msp_high_tau": cfg.msp_high_tau,
                "class_counts": bundle.class_counts, "lof_index": {}}
    train_seqs = [encode(u, vocab) for u in bundle.train_id]
    for method in cfg.methods:
        spec = METHODS[method]
        if spec.threshold == "contamination":
            key = spec.models[0]
            if key not in settings["lof_index"]:
                index = NeighborIndex(models[key].penultimate(train_seqs), k=cfg.lof_k)
                settings["lof_index"][key] = index
            index = settings["lof_index"][key]
            write_scores(out / f"train_{method}.tsv",
                         [OodScore(u.id, method, float(e), False) for u, e in zip(bundle.train_id, index.lof_stored)])
        for split, utts in (("valid", bundle.valid), ("test", bundle.test)):
            eta = spec.score(models, [encode(u, vocab) for u in utts], settings)
            write_scores(out / f"{split}_{method}.tsv",
                         [OodScore(u.id, method, float(e), u.is_ood) for u, e in zip(utts, eta)])


# ---------------------------------------------------------------- eval

def _scored(path) -> ScoredSet:
    rows = read_scores(path)
    return ScoredSet(np.array([r.eta for r in rows]), np.array([r.is_ood for r in rows]))


def _write_curves(out: Path, method: str, test: ScoredSet) -> None:
    out.mkdir(parents=True, exist_ok=True)
    thr, tpr, fpr = roc_curve(test)
    with open(out / f"{method}_roc.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "tpr", "fpr"])
        w.writerows(zip(map(repr, thr.tolist()), map(repr, tpr.tolist()), map(repr, fpr.tolist())))
    thr, prec, rec = pr_curve(test)
    with open(out / f"{method}_pr.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "precision", "recall"])
        w.writerows(zip(map(repr, thr.tolist()), map(repr, prec.tolist()), map(repr, rec.tolist())))


def evaluate_seed(cfg: ExperimentConfig, seed: int) -> dict[str, dict[str, float]]:
    sdir = seed_dir(cfg, seed)
    results = {}
    for method in cfg.methods:
        valid = _scored(sdir / "scores" / f"valid_{method}.tsv")
        test = _scored(sdir / "scores" / f"test_{method}.tsv")
        threshold = None
        extra = {}
        if METHODS[method].threshold == "contamination":
            train_eta = _scored(sdir / "scores" / f"train_{method}.tsv").eta
            rate, threshold = tune_contamination(valid.eta, valid.is_ood, train_eta)
            extra["contamination"] = rate
        results[method] = {**evaluate(valid, test, threshold), **extra}
        _write_curves(sdir / "curves", method, test)
    (sdir / "eval.json").write_text(json.dumps(results, indent=2, sort_keys=True))
    return results


# ---------------------------------------------------------------- report

def report(cfg: ExperimentConfig, incomplete: dict[int, str] | None = None) -> EvalReport:
    rep = EvalReport(incomplete=dict(incomplete or {}))
    for seed in cfg.seeds:
        path = seed_dir(cfg, seed) / "eval.json"
        if seed in rep.incomplete:
            continue
        if not path.exists():
            rep.incomplete[seed] = "no evaluation results"
            continue
        results = json.loads(path.read_text())
        for method in cfg.methods:
            if method not in results:
                rep.incomplete[seed] = f"method {method} not evaluated"
                break
            rep.add(method, seed, results[method])
    cfg.out.mkdir(parents=True, exist_ok=True)
    (cfg.out / "report.json").write_text(json.dumps(rep.to_json(), indent=2, sort_keys=True) + "\n")
    (cfg.out / "report.tsv").write_text(rep.to_table())
    return rep


def run_seed(cfg: ExperimentConfig, seed: int) -> dict:
    prepare(cfg, seed)
    train(cfg, seed)
    score(cfg, seed)
    return evaluate_seed(cfg, seed)


def run_experiment(cfg: ExperimentConfig) -> EvalReport:
    """Run every seed end to end; a failing seed is logged and marked incomplete."""
    cfg.validate()
    incomplete = {}
    for seed in cfg.seeds:
        try:
            run_seed(cfg, seed)
        except Exception as exc:  # noqa: BLE001 - recorded in the report
            log.exception("seed %d failed", seed)
            incomplete[seed] = f"{type(exc).__name__}: {exc}"
    return report(cfg, incomplete)
