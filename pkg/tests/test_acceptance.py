"""Acceptance gate. Each test checks one criterion and adds a PASS/FAIL/WAIVED line to the summary."""

import dataclasses
import itertools
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import chisquare

from ood_intent.config import load_config
from ood_intent.corpus import DatasetBundle, Utterance, Vocabulary, make_holdout_split
from ood_intent.lof import NeighborIndex
from ood_intent.metrics import aupr, auroc
from ood_intent.neural import gradient_check
from ood_intent.noising import NoiseKind, build_noise_distribution
from ood_intent.pipeline import run_experiment
from ood_intent.scoring import score_entropy, score_neg_kl, uniform_reference
from ood_intent.synthetic import emit_synthetic_benchmark

from . import oracles
from .toys import toy_models

ROOT = Path(__file__).resolve().parents[1]


def test_metric_oracles(criterion):
    with criterion("1. AUROC/AUPR match trapezoid and brute-force oracles") as note:
        rng = np.random.default_rng(2024)
        sets = [oracles.random_scored_set(rng, 2, 500) for _ in range(1000)]
        start = time.perf_counter()
        lib = [(auroc(s), aupr(s)) for s in sets]
        elapsed = time.perf_counter() - start
        worst_roc = worst_pr = 0.0
        for (eta, y), (a, p) in zip(sets, lib):
            worst_roc = max(worst_roc, abs(a - oracles.auroc_trapezoid(eta, y)))
            worst_pr = max(worst_pr, abs(p - oracles.average_precision(eta, y)))
        note.append(f"max |dAUROC| {worst_roc:.1e}, max |dAUPR| {worst_pr:.1e}, {elapsed:.2f}s")
        assert sum(len(np.unique(e)) < len(e) for e, _ in sets) > 900   # ties are common
        assert worst_roc <= 1e-12 and worst_pr <= 1e-12
        assert elapsed < 10


def lof_point_sets(rng, count=100):
    cases = []
    for i in range(count):
        k = (2, 5, 20)[i % 3]
        n = int(rng.integers(k + 1, 201))
        dim = int(rng.integers(1, 11))
        if i % 4 == 0:
            X = rng.integers(-2, 3, size=(n, dim)).astype(float)       # lattice: many exact duplicates
        else:
            X = rng.normal(size=(n, dim))
            dup = rng.integers(0, n, size=n // 5)
            X[dup] = X[rng.integers(0, n, size=dup.size)]              # copied rows
        cases.append((X, k))
    return cases


def test_lof_brute_force(criterion):
    with criterion("2. LOF equals the O(n^2) definition") as note:
        cases = lof_point_sets(np.random.default_rng(11))
        start = time.perf_counter()
        lib = [NeighborIndex(X, k=k).lof_stored for X, k in cases]
        elapsed = time.perf_counter() - start
        worst, n_inf = 0.0, 0
        for (X, k), got in zip(cases, lib):
            _, _, want = oracles.lof_brute(X, k)
            assert np.array_equal(np.isinf(got), np.isinf(want))
            fin = np.isfinite(want)
            n_inf += int((~fin).sum())
            worst = max(worst, float(np.max(np.abs(got[fin] - want[fin]) / np.maximum(1.0, np.abs(want[fin])))))
        note.append(f"max rel err {worst:.1e}, {n_inf} infinite LOFs, {elapsed:.2f}s")
        assert worst <= 1e-9
        assert elapsed < 30


def test_gradient_checks(criterion):
    with criterion("3. finite-difference gradient checks, all four architectures") as note:
        start = time.perf_counter()
        errs = {name: gradient_check(lambda m=m, b=b: m.loss(b), m.params)
                for name, (m, b) in toy_models(0).items()}
        elapsed = time.perf_counter() - start
        note.append(", ".join(f"{k} {v:.1e}" for k, v in errs.items()) + f", {elapsed:.1f}s")
        assert max(errs.values()) < 1e-4
        assert elapsed < 60


def test_neg_kl_entropy_identity(criterion):
    with criterion("4. -KL(P|U) = H(P) - ln K; identical AUROC") as note:
        rng = np.random.default_rng(4)
        k = 7
        p = rng.dirichlet(np.full(k, 0.3), size=10_000)
        p[5000:5100] = p[:100]          # repeated posteriors give tied scores
        ent, nkl = score_entropy(p), score_neg_kl(p, uniform_reference(k))
        gap = float(np.max(np.abs(nkl - (ent - math.log(k)))))
        y = rng.random(len(p)) < 0.3
        a, b = auroc((ent, y)), auroc((nkl, y))
        note.append(f"max gap {gap:.1e}, AUROC {a:.6f} vs {b:.6f}")
        assert gap <= 1e-9
        assert a == b


def test_noise_distributions(criterion):
    with criterion("5. noise samplers fit their distributions; UNIROOT interpolates") as note:
        freq = {f"w{i:02d}": int(f) for i, f in enumerate(np.random.default_rng(5).zipf(1.5, 100).clip(1, 5000))}
        vocab = Vocabulary(tuple(sorted(freq, key=lambda t: (-freq[t], t))), freq)
        pvals = {}
        for kind in NoiseKind:
            d = build_noise_distribution(vocab, kind)
            assert len(d.tokens) == 100
            draws = d.sample_indices(np.random.default_rng(50), 100_000)
            pvals[kind.value] = chisquare(np.bincount(draws, minlength=100), d.weights * 100_000).pvalue
        g, r = build_noise_distribution(vocab, "unigram"), build_noise_distribution(vocab, "uniroot")
        pairs = 0
        for a, b in itertools.permutations(freq, 2):
            if freq[a] > freq[b]:
                pairs += 1
                assert g.prob(a) / g.prob(b) > r.prob(a) / r.prob(b) > 1
        note.append(", ".join(f"{k} p={v:.3f}" for k, v in pvals.items()) + f", {pairs} ordered pairs")
        assert min(pvals.values()) > 0.001


def test_synthetic_end_to_end(criterion, tmp_path):
    with criterion("6. synthetic benchmark, 5 seeds: L_gen, MSP, L_gen+BackLM+UNIROOT") as note:
        emit_synthetic_benchmark(0, out_dir=tmp_path / "data")
        cfg = load_config(ROOT / "configs" / "synthetic.toml")
        cfg = dataclasses.replace(
            cfg, methods=["msp", "l_gen", "l_gen_backlm_uniroot"], output=str(tmp_path / "out"),
            data=dataclasses.replace(cfg.data, train=str(tmp_path / "data/train.tsv"),
                                     valid=str(tmp_path / "data/valid.tsv"), test=str(tmp_path / "data/test.tsv")))
        start = time.perf_counter()
        rep = run_experiment(cfg)
        elapsed = time.perf_counter() - start
        agg = {m: v["auroc"][0] for m, v in rep.aggregate().items()}
        note.append(", ".join(f"{m} {v:.4f}" for m, v in agg.items()) + f", {elapsed:.0f}s")
        assert rep.incomplete == {}
        assert all(len(rep.per_seed[m]) == 5 for m in cfg.methods)
        assert agg["l_gen"] >= 0.95
        assert agg["msp"] >= 0.80
        assert agg["l_gen_backlm_uniroot"] >= agg["l_gen"] - 0.01
        assert elapsed < 600


@pytest.mark.reproduction
def test_rostd_reproduction(criterion):
    with criterion("7. reproduction on the ROSTD release") as note:
        path = os.environ.get("OOD_INTENT_ROSTD_CONFIG")
        if not path:
            pytest.skip("external data not available; set OOD_INTENT_ROSTD_CONFIG to a config like "
                        "configs/rostd.toml")
        cfg = load_config(path)
        for f in (cfg.data.train, cfg.data.valid, cfg.data.test, cfg.data.ood):
            if not Path(f).exists():
                pytest.skip(f"external data not available: {f}")
        cfg.methods = ["l_simple", "l_gen", "l_simple_backlm_uniroot", "l_gen_backlm_uniroot"]
        agg = run_experiment(cfg).aggregate()
        mean = {m: {k: v[0] * 100 for k, v in vals.items()} for m, vals in agg.items()}
        best = mean["l_gen_backlm_uniroot"]
        note.append(f"L_gen+BackLM+UNIROOT AUROC {best['auroc']:.2f}, FPR95 {best['fpr95']:.2f}")
        assert best["auroc"] >= 96.0
        assert best["fpr95"] <= 12.0
        assert mean["l_gen"]["auroc"] > mean["l_simple"]["auroc"]
        assert mean["l_simple_backlm_uniroot"]["aupr_ood"] > mean["l_simple"]["aupr_ood"]
        assert mean["l_gen_backlm_uniroot"]["aupr_ood"] > mean["l_gen"]["aupr_ood"]


def test_holdout_generator(criterion):
    with criterion("8. K% class holdout is covering and minimal") as note:
        counts = dict(zip("ABCDEFG", (50, 40, 30, 20, 15, 10, 5)))
        total = sum(counts.values())
        train, valid, test, i = [], [], [], 0
        for y, n in counts.items():
            for j in range(n + 6):
                u = Utterance(i, "x", ("x",), y)
                (train if j < n else valid if j < n + 3 else test).append(u)
                i += 1
        bundle = DatasetBundle.build(train, valid, test)
        checked = 0
        for K in (25, 75):
            need = K / 100 * total
            feasible = {frozenset(s) for r in range(1, 8) for s in itertools.combinations(counts, r)
                        if sum(counts[y] for y in s) >= need
                        and all(sum(counts[y] for y in s) - counts[y] < need for y in s)}
            for seed in range(5):
                h = make_holdout_split(bundle, K, seed)
                kept = frozenset(h.labels)
                assert kept in feasible
                assert {u.label for u in h.train_id} == kept
                for split in (h.valid, h.test):
                    assert all(u.is_ood == (orig.label not in kept) for u, orig in
                               zip(split, bundle.valid if split is h.valid else bundle.test))
                checked += 1
            note.append(f"K={K}: {len(feasible)} minimal feasible subsets")
        assert checked == 10
