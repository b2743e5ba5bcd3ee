"""Loading, tokenizing, encoding and splitting intent datasets."""

from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<s>", "</s>"
RESERVED = (PAD, UNK, BOS, EOS)
PAD_ID, UNK_ID, BOS_ID, EOS_ID = range(4)

OOD_LABEL = "outOfDomain"
LABEL_SEP = "/"

_TOKEN_RE = re.compile(r"(?<=\w)'\w+|\w+|[^\w\s]")


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class Utterance:
    id: int
    raw: str
    tokens: tuple[str, ...]
    label: str | None = None
    is_ood: bool = False

    def __post_init__(self):
        if self.is_ood and self.label is not None:
            raise CorpusError(f"utterance {self.id}: OOD utterances carry no label")


@dataclass(frozen=True)
class DatasetBundle:
    train_id: tuple[Utterance, ...]
    valid: tuple[Utterance, ...]
    test: tuple[Utterance, ...]
    labels: tuple[str, ...]
    class_counts: dict[str, int] = field(default_factory=dict)

    @classmethod
    def build(cls, train, valid, test) -> "DatasetBundle":
        """Assemble a bundle, deriving the label set and class counts."""
        train, valid, test = tuple(train), tuple(valid), tuple(test)
        if any(u.is_ood for u in train):
            raise CorpusError("training split must not contain OOD utterances")
        counts = Counter(u.label for u in train)
        labels = sorted(counts)
        for u in valid + test:
            if not u.is_ood and u.label not in counts:
                raise CorpusError(f"utterance {u.id}: label {u.label!r} has no training examples")
        return cls(train, valid, test, tuple(labels), {y: counts[y] for y in labels})


def tokenize(raw: str) -> list[str]:
    """Lowercase, split on whitespace and detach punctuation and clitics.

    >>> tokenize("what's the weather")
    ['what', "'s", 'the', 'weather']
    """
    return _TOKEN_RE.findall(raw.lower())


def parse_schema(schema: str | Sequence[str]) -> tuple[str, ...]:
    cols = tuple(c.strip() for c in schema.split(",")) if isinstance(schema, str) else tuple(schema)
    if cols.count("label") != 1 or cols.count("text") != 1:
        raise CorpusError(f"schema {cols} must name exactly one 'label' and one 'text' column")
    return cols


def load_tsv(path, schema="label,text", *, ood_label: str = OOD_LABEL, start_id: int = 0) -> list[Utterance]:
    """Read one utterance per line. Columns other than label/text are ignored."""
    cols = parse_schema(schema)
    li, ti = cols.index("label"), cols.index("text")
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not any(line.strip() for line in lines):
        raise CorpusError(f"{path}: empty file")
    out = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != len(cols):
            raise CorpusError(f"{path}:{lineno}: expected {len(cols)} columns, got {len(parts)}")
        label, raw = parts[li].strip(), parts[ti]
        tokens = tokenize(raw)
        if not tokens:
            log.warning("%s:%d: empty text, row dropped", path, lineno)
            continue
        is_ood = label == ood_label
        out.append(Utterance(start_id + len(out), raw, tuple(tokens), None if is_ood else label, is_ood))
    return out


def write_tsv(path, utterances: Iterable[Utterance], *, ood_label: str = OOD_LABEL) -> None:
    """Write `label<TAB>text` lines, text being the space-joined tokens."""
    with open(path, "w", encoding="utf-8") as fh:
        for u in utterances:
            fh.write(f"{ood_label if u.is_ood else u.label}\t{' '.join(u.tokens)}\n")


class Vocabulary:
    """Token/id maps; the four reserved tokens take ids 0..3."""

    def __init__(self, tokens: Sequence[str], freq: dict[str, int]):
        self.id_to_token = list(RESERVED) + [t for t in tokens if t not in RESERVED]
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        self.freq = {t: int(freq.get(t, 0)) for t in self.id_to_token[len(RESERVED):]}

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token) -> bool:
        return token in self.token_to_id

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.id_to_token == other.id_to_token

    def __hash__(self):
        return hash(tuple(self.id_to_token))

    @property
    def content_tokens(self) -> list[str]:
        return self.id_to_token[len(RESERVED):]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for i, tok in enumerate(self.id_to_token):
                fh.write(f"{tok}\t{i}\t{self.freq.get(tok, 0)}\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        rows = [line.split("\t") for line in Path(path).read_text(encoding="utf-8").splitlines() if line]
        rows.sort(key=lambda r: int(r[1]))
        if tuple(r[0] for r in rows[: len(RESERVED)]) != RESERVED:
            raise CorpusError(f"{path}: reserved tokens missing or out of order")
        return cls([r[0] for r in rows[len(RESERVED):]], {r[0]: int(r[2]) for r in rows})


def build_vocabulary(train: Iterable[Utterance], min_freq: int = 1) -> Vocabulary:
    counts = Counter(t for u in train for t in u.tokens)
    if not counts:
        raise CorpusError("cannot build a vocabulary from an empty training set")
    kept = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
    return Vocabulary(kept, {t: counts[t] for t in kept})


def encode(u: Utterance | Sequence[str], vocab: Vocabulary) -> list[int]:
    tokens = u.tokens if isinstance(u, Utterance) else u
    return [BOS_ID] + [vocab.token_to_id.get(t, UNK_ID) for t in tokens] + [EOS_ID]


def decode(ids: Sequence[int], vocab: Vocabulary) -> list[str]:
    return [vocab.id_to_token[i] for i in ids if i not in (BOS_ID, EOS_ID, PAD_ID)]


def coarsen_labels(bundle: DatasetBundle, sep: str = LABEL_SEP) -> DatasetBundle:
    """Replace every hierarchical label by its top-level component."""

    def top(u: Utterance) -> Utterance:
        if u.label is None:
            return u
        head = u.label.split(sep)[0].strip()
        if not head:
            raise CorpusError(f"utterance {u.id}: label {u.label!r} has no components")
        return replace(u, label=head)

    return DatasetBundle.build(
        [top(u) for u in bundle.train_id], [top(u) for u in bundle.valid], [top(u) for u in bundle.test]
    )


def make_holdout_split(bundle: DatasetBundle, K: float, rng_seed: int) -> DatasetBundle:
    """Keep a random minimal set of classes covering at least K% of training rows.

    Classes are drawn in random order until coverage reaches K%, then any
    retained class whose removal keeps coverage at K% is dropped, so the
    result is minimal. Held-out classes leave the training split and become
    OOD in validation and test.
    """
    if not 0 < K < 100:
        raise CorpusError(f"coverage K must lie in (0, 100), got {K}")
    if any(u.is_ood for u in bundle.valid + bundle.test):
        raise CorpusError("bundle already contains OOD utterances")
    counts = Counter(u.label for u in bundle.train_id)
    total = sum(counts.values())
    need = K / 100.0 * total
    rng = np.random.default_rng(rng_seed)
    order = [bundle.labels[i] for i in rng.permutation(len(bundle.labels))]

    chosen, covered = [], 0
    for y in order:
        chosen.append(y)
        covered += counts[y]
        if covered >= need:
            break
    for y in [chosen[i] for i in rng.permutation(len(chosen))]:
        if covered - counts[y] >= need:
            chosen.remove(y)
            covered -= counts[y]
    if len(chosen) == len(bundle.labels):
        raise CorpusError(f"K={K}% needs every class; nothing left to hold out")

    keep = set(chosen)

    def relabel(u: Utterance) -> Utterance:
        return u if u.label in keep else replace(u, label=None, is_ood=True)

    return DatasetBundle.build(
        [u for u in bundle.train_id if u.label in keep],
        [relabel(u) for u in bundle.valid],
        [relabel(u) for u in bundle.test],
    )


def default_valid_fraction(n_valid_id: int, n_test_id: int) -> float:
    return n_valid_id / (n_valid_id + n_test_id)


def split_ood(ood: Sequence[Utterance], valid_fraction: float, rng_seed: int):
    """Randomly partition OOD utterances into (valid, test)."""
    if not 0 < valid_fraction < 1:
        raise CorpusError(f"valid_fraction must lie in (0, 1), got {valid_fraction}")
    perm = np.random.default_rng(rng_seed).permutation(len(ood))
    n_valid = int(round(len(ood) * valid_fraction))
    valid = [ood[i] for i in sorted(perm[:n_valid])]
    test = [ood[i] for i in sorted(perm[n_valid:])]
    return valid, test


def load_pretrained_vectors(path, vocab: Vocabulary, dim: int) -> dict[int, np.ndarray]:
    """Read a GloVe-style text file, keeping rows for tokens in `vocab`."""
    found = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                continue
            if len(parts) - 1 != dim:
                raise CorpusError(f"{path}:{lineno}: vector has {len(parts) - 1} components, expected {dim}")
            idx = vocab.token_to_id.get(parts[0])
            if idx is not None and idx >= len(RESERVED):
                found[idx] = np.asarray(parts[1:], dtype=np.float64)
    return found
