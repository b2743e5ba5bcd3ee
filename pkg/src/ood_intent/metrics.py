"""OOD detection metrics. OOD is the positive class and higher eta means more OOD."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

METRIC_NAMES = ("f1", "fpr95", "auroc", "aupr_ood")


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class ScoredSet:
    eta: np.ndarray
    is_ood: np.ndarray

    def __post_init__(self):
        eta = np.asarray(self.eta, dtype=np.float64)
        lab = np.asarray(self.is_ood, dtype=bool)
        if eta.shape != lab.shape or eta.ndim != 1:
            raise MetricError("eta and is_ood must be 1-d arrays of equal length")
        if np.isnan(eta).any():
            raise MetricError("eta contains NaN")
        big = np.finfo(np.float64).max
        object.__setattr__(self, "eta", np.clip(eta, -big, big))
        object.__setattr__(self, "is_ood", lab)

    @property
    def n_ood(self) -> int:
        return int(self.is_ood.sum())

    @property
    def n_id(self) -> int:
        return int((~self.is_ood).sum())

    def require_both(self) -> None:
        if self.n_ood == 0 or self.n_id == 0:
            raise MetricError(f"need both classes, got {self.n_ood} OOD and {self.n_id} ID")


def _as_set(s) -> ScoredSet:
    return s if isinstance(s, ScoredSet) else ScoredSet(*s)


def auroc(s) -> float:
    """Mann-Whitney estimate: P(eta_ood > eta_id) + 0.5 P(tie)."""
    s = _as_set(s)
    s.require_both()
    ranks = rankdata(s.eta)
    n1, n0 = s.n_ood, s.n_id
    u = ranks[s.is_ood].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


def _descending_blocks(s: ScoredSet):
    """Cumulative (threshold, tp, fp) after each distinct eta value, from high to low."""
    order = np.argsort(-s.eta, kind="mergesort")
    eta, pos = s.eta[order], s.is_ood[order]
    tp, fp = np.cumsum(pos), np.cumsum(~pos)
    last = np.r_[np.flatnonzero(np.diff(eta) != 0), eta.size - 1]
    return eta[last], tp[last], fp[last]


def aupr(s, positive: str = "ood") -> float:
    """Non-interpolated average precision; tied scores form one step."""
    s = _as_set(s)
    s.require_both()
    if positive == "id":
        s = ScoredSet(-s.eta, ~s.is_ood)
    elif positive != "ood":
        raise MetricError(f"positive must be 'ood' or 'id', got {positive!r}")
    _, tp, fp = _descending_blocks(s)
    precision = tp / (tp + fp)
    recall = tp / s.n_ood
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def fpr_at_tpr(s, k: float = 0.95) -> float:
    """FPR at the largest threshold t whose rule eta >= t reaches TPR >= k."""
    s = _as_set(s)
    s.require_both()
    need = math.ceil(k * s.n_ood - 1e-9)
    _, tp, fp = _descending_blocks(s)
    j = int(np.argmax(tp >= need))
    return float(fp[j] / s.n_id)


def roc_curve(s):
    s = _as_set(s)
    s.require_both()
    thr, tp, fp = _descending_blocks(s)
    return np.r_[np.inf, thr], np.r_[0.0, tp / s.n_ood], np.r_[0.0, fp / s.n_id]


def pr_curve(s):
    s = _as_set(s)
    s.require_both()
    thr, tp, fp = _descending_blocks(s)
    return thr, tp / (tp + fp), tp / s.n_ood


def _f1(tp, fp, fn):
    denom = 2 * tp + fp + fn
    return np.where(denom > 0, 2 * tp / np.maximum(denom, 1), 0.0)


def binary_f1(s, t: float) -> tuple[float, float]:
    """(macro F1 over OOD/ID, OOD-class F1) of the decision eta >= t => OOD."""
    s = _as_set(s)
    pred = s.eta >= t
    tp = np.sum(pred & s.is_ood)
    fp = np.sum(pred & ~s.is_ood)
    fn = np.sum(~pred & s.is_ood)
    tn = np.sum(~pred & ~s.is_ood)
    f_ood, f_id = float(_f1(tp, fp, fn)), float(_f1(tn, fn, fp))
    return (f_ood + f_id) / 2, f_ood


def f1_at_threshold(s, t: float) -> float:
    return binary_f1(s, t)[0]


def _midpoint(a: float, b: float) -> float:
    return a / 2 + b / 2


def threshold_candidates(eta: np.ndarray) -> np.ndarray:
    u = np.unique(eta)
    mids = np.array([_midpoint(a, b) for a, b in zip(u[:-1], u[1:])])
    return np.r_[-np.inf, mids, np.inf]


def tune_threshold(s) -> float:
    """Candidate threshold with the best validation macro-F1; the smallest wins ties."""
    s = _as_set(s)
    s.require_both()
    cands = threshold_candidates(s.eta)
    # sweep via sorted counts instead of re-scoring each candidate
    eta_sorted = np.sort(s.eta)
    ood_sorted = np.sort(s.eta[s.is_ood])
    n, n1 = eta_sorted.size, s.n_ood
    pred_pos = n - np.searchsorted(eta_sorted, cands, side="left")
    tp = n1 - np.searchsorted(ood_sorted, cands, side="left")
    fp = pred_pos - tp
    fn = n1 - tp
    tn = (n - n1) - fp
    macro = (_f1(tp, fp, fn) + _f1(tn, fn, fp)) / 2
    return float(cands[int(np.argmax(macro))])


def multiclass_macro_f1(y_true: Sequence[int], y_pred: Sequence[int], n_classes: int | None = None) -> float:
    """Unweighted mean F1 over the classes present in y_true or y_pred."""
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    classes = np.union1d(y_true, y_pred) if n_classes is None else np.arange(n_classes)
    scores = []
    for c in classes:
        t, p = y_true == c, y_pred == c
        if not t.any() and not p.any():
            continue
        scores.append(float(_f1(np.sum(t & p), np.sum(~t & p), np.sum(t & ~p))))
    return float(np.mean(scores)) if scores else 0.0


def evaluate(valid, test, threshold: float | None = None) -> dict[str, float]:
    """All test metrics; the F1 threshold is tuned on `valid` unless given."""
    valid, test = _as_set(valid), _as_set(test)
    t = tune_threshold(valid) if threshold is None else threshold
    f1, f1_ood = binary_f1(test, t)
    return {
        "f1": f1,
        "f1_ood": f1_ood,
        "fpr95": fpr_at_tpr(test, 0.95),
        "auroc": auroc(test),
        "aupr_ood": aupr(test, "ood"),
        "aupr_id": aupr(test, "id"),
        "threshold": float(t),
    }


@dataclass
class EvalReport:
    """Per-method, per-seed metric values plus their aggregate over seeds."""

    per_seed: dict[str, dict[int, dict[str, float]]] = field(default_factory=dict)
    incomplete: dict[int, str] = field(default_factory=dict)

    def add(self, method: str, seed: int, values: Mapping[str, float]) -> None:
        self.per_seed.setdefault(method, {})[seed] = dict(values)

    def aggregate(self) -> dict[str, dict[str, tuple[float, float]]]:
        return {m: aggregate_seeds(list(runs.values())) for m, runs in self.per_seed.items()}

    def to_json(self) -> dict:
        agg = self.aggregate()
        return {
            "methods": {
                m: {
                    "seeds": {str(k): v for k, v in sorted(runs.items())},
                    "mean": {k: agg[m][k][0] for k in sorted(agg[m])},
                    "std": {k: agg[m][k][1] for k in sorted(agg[m])},
                }
                for m, runs in self.per_seed.items()
            },
            "incomplete_seeds": {str(k): v for k, v in sorted(self.incomplete.items())},
        }

    def to_table(self) -> str:
        """Tab-separated table in percent, one row per method."""
        agg = self.aggregate()
        lines = ["method\tF1\tFPR@95%TPR\tAUROC\tAUPR_OOD"]
        for m in self.per_seed:
            cells = [format_mean_std(*agg[m][k], scale=100.0) for k in METRIC_NAMES]
            lines.append("\t".join([m, *cells]))
        return "\n".join(lines) + "\n"


def aggregate_seeds(reports: Iterable[Mapping[str, float]]) -> dict[str, tuple[float, float]]:
    """Mean and sample standard deviation of every metric."""
    reports = list(reports)
    if not reports:
        raise MetricError("need at least one seed")
    out = {}
    for key in sorted(set().union(*reports)):
        vals = np.sort(np.array([r[key] for r in reports], dtype=np.float64))
        std = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
        out[key] = (float(np.mean(vals)), std)
    return out


def format_mean_std(mean: float, std: float, scale: float = 1.0) -> str:
    return f"{mean * scale:.2f} ± {std * scale:.2f}"
