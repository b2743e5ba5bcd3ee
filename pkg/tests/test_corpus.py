import itertools
import logging
from collections import Counter

import pytest
from hypothesis import given, strategies as st

from ood_intent.corpus import (BOS_ID, EOS_ID, RESERVED, UNK, UNK_ID, CorpusError, DatasetBundle, Utterance,
                               Vocabulary, build_vocabulary, coarsen_labels, decode, default_valid_fraction,
                               encode, load_tsv, make_holdout_split, split_ood, tokenize)


def utt(i, tokens, label=None, ood=False):
    return Utterance(i, " ".join(tokens), tuple(tokens), label, ood)


class TestTokenize:
    def test_punctuation_detached(self):
        assert tokenize("Wake me at 7AM.") == ["wake", "me", "at", "7am", "."]

    def test_empty(self):
        assert tokenize("") == []

    def test_clitic(self):
        assert tokenize("what's the weather") == ["what", "'s", "the", "weather"]

    def test_quote_is_not_clitic(self):
        assert tokenize("'hi'") == ["'", "hi", "'"]

    @given(st.text())
    def test_deterministic_and_lowercase(self, s):
        toks = tokenize(s)
        assert toks == tokenize(s)
        assert all(t == t.lower() and t.strip() == t and t for t in toks)


class TestLoadTsv:
    def test_fields(self, tmp_path):
        p = tmp_path / "a.tsv"
        p.write_text("alarm/set_alarm\twake me at 7\noutOfDomain\tall Star Wars movie are great\n")
        a, b = load_tsv(p)
        assert a.tokens == ("wake", "me", "at", "7") and a.label == "alarm/set_alarm" and not a.is_ood
        assert b.is_ood and b.label is None
        assert b.tokens == ("all", "star", "wars", "movie", "are", "great")

    def test_empty_text_dropped(self, tmp_path, caplog):
        p = tmp_path / "a.tsv"
        p.write_text("weather/find\t\nweather/find\train today\n")
        with caplog.at_level(logging.WARNING):
            rows = load_tsv(p)
        assert len(rows) == 1 and "dropped" in caplog.text

    def test_wrong_column_count(self, tmp_path):
        p = tmp_path / "a.tsv"
        p.write_text("weather/find\train\nweather/find\ttoo\tmany\n")
        with pytest.raises(CorpusError, match=":2:"):
            load_tsv(p)

    def test_empty_file(self, tmp_path):
        p = tmp_path / "a.tsv"
        p.write_text("")
        with pytest.raises(CorpusError, match="empty"):
            load_tsv(p)

    def test_schema_with_ignored_columns(self, tmp_path):
        p = tmp_path / "a.tsv"
        p.write_text("0:4:datetime\tweather/find\train today\n")
        (u,) = load_tsv(p, schema="slots,label,text")
        assert u.label == "weather/find" and u.tokens == ("rain", "today")

    def test_ood_with_label_rejected(self):
        with pytest.raises(CorpusError):
            Utterance(0, "x", ("x",), "a", True)


class TestVocabulary:
    train = [utt(0, ["a", "b"], "x"), utt(1, ["a"], "x")]

    def test_min_freq_1(self):
        v = build_vocabulary(self.train, 1)
        assert v.freq == {"a": 2, "b": 1}
        assert len(v) == 6
        assert v.id_to_token[:4] == list(RESERVED)

    def test_min_freq_2(self):
        v = build_vocabulary(self.train, 2)
        assert "b" not in v
        assert encode(["a", "b"], v) == [BOS_ID, v.token_to_id["a"], UNK_ID, EOS_ID]

    def test_encode(self):
        v = build_vocabulary(self.train)
        assert encode(["a", "b"], v) == [BOS_ID, v.token_to_id["a"], v.token_to_id["b"], EOS_ID]
        assert encode([], v) == [BOS_ID, EOS_ID]
        assert encode(["zzz"], v)[1] == UNK_ID

    def test_inverse_maps(self):
        v = build_vocabulary(self.train)
        assert all(v.token_to_id[t] == i for i, t in enumerate(v.id_to_token))

    def test_save_load(self, tmp_path):
        v = build_vocabulary(self.train)
        v.save(tmp_path / "v.tsv")
        first = (tmp_path / "v.tsv").read_text().splitlines()[0]
        assert first == "<pad>\t0\t0"
        w = Vocabulary.load(tmp_path / "v.tsv")
        assert w == v and w.freq == v.freq

    @given(st.lists(st.lists(st.sampled_from("abcdefg"), min_size=1, max_size=6), min_size=1, max_size=20),
           st.integers(1, 3))
    def test_round_trip(self, sents, min_freq):
        train = [utt(i, s, "x") for i, s in enumerate(sents)]
        try:
            v = build_vocabulary(train, min_freq)
        except CorpusError:
            return
        for u in train:
            assert decode(encode(u, v), v) == [t if t in v else UNK for t in u.tokens]
        assert all(f >= min_freq for f in v.freq.values())


def bundle_of(counts, per_eval=2):
    train, valid, test, i = [], [], [], 0
    for y, n in counts.items():
        for _ in range(n):
            train.append(utt(i, ["w"], y))
            i += 1
        for _ in range(per_eval):
            valid.append(utt(i, ["v"], y))
            test.append(utt(i + 1, ["t"], y))
            i += 2
    return DatasetBundle.build(train, valid, test)


class TestCoarsen:
    def test_top_component(self):
        b = DatasetBundle.build(
            [utt(0, ["a"], "alarm/set_alarm"), utt(1, ["b"], "alarm/cancel_alarm"), utt(2, ["c"], "weather/find")],
            [utt(3, ["d"], "weather/find"), utt(4, ["e"], None, True)], [])
        c = coarsen_labels(b)
        assert c.labels == ("alarm", "weather")
        assert c.class_counts == {"alarm": 2, "weather": 1}
        assert [u.label for u in c.valid] == ["weather", None]
        assert len(c.train_id) == 3 and len(c.valid) == 2

    def test_empty_component(self):
        b = DatasetBundle.build([utt(0, ["a"], "/x")], [], [])
        with pytest.raises(CorpusError):
            coarsen_labels(b)


def minimal_feasible(counts, K):
    """All class subsets covering >= K% that lose coverage when any member is dropped."""
    total = sum(counts.values())
    need = K / 100 * total
    out = set()
    for r in range(1, len(counts) + 1):
        for sub in itertools.combinations(sorted(counts), r):
            cov = sum(counts[y] for y in sub)
            if cov >= need and all(cov - counts[y] < need for y in sub):
                out.add(frozenset(sub))
    return out


class TestHoldout:
    @pytest.mark.parametrize("K,size", [(75, 6), (25, 2)])
    def test_equal_classes(self, K, size):
        b = bundle_of({f"c{i}": 100 for i in range(7)})
        feasible = minimal_feasible(b.class_counts, K)
        assert {len(s) for s in feasible} == {size}
        for seed in range(5):
            h = make_holdout_split(b, K, seed)
            assert frozenset(h.labels) in feasible
            assert not any(u.is_ood for u in h.train_id)
            assert sum(h.class_counts.values()) == len(h.train_id) == 100 * size
            ood = [u for u in h.valid if u.is_ood]
            assert len(ood) == 2 * (7 - size) and all(u.label is None for u in ood)

    def test_dominant_class(self):
        b = DatasetBundle.build([utt(0, ["a"], "big")] * 1 + [utt(i, ["a"], "big") for i in range(1, 100)],
                                [utt(200, ["b"], "big")], [utt(201, ["c"], "big")])
        with pytest.raises(CorpusError, match="nothing left"):
            make_holdout_split(b, 75, 0)

    def test_dominant_class_among_others(self):
        counts = {"big": 100, "s1": 1, "s2": 1}
        b = bundle_of(counts)
        h = make_holdout_split(b, 75, 3)
        assert h.labels == ("big",)
        assert sum(u.is_ood for u in h.test) == 4

    def test_seeds_vary(self):
        b = bundle_of({f"c{i}": 100 for i in range(7)})
        assert len({make_holdout_split(b, 25, s).labels for s in range(10)}) > 1

    def test_rejects_bad_k(self):
        with pytest.raises(CorpusError):
            make_holdout_split(bundle_of({"a": 1, "b": 1}), 100, 0)


class TestSplitOod:
    def test_rostd_proportions(self):
        frac = default_valid_fraction(4181, 8621)
        ood = [utt(i, ["x"], None, True) for i in range(4590)]
        v, t = split_ood(ood, frac, 0)
        assert (len(v), len(t)) == (1499, 3091)

    def test_half(self):
        ood = [utt(i, ["x"], None, True) for i in range(10)]
        v, t = split_ood(ood, 0.5, 1)
        assert len(v) == len(t) == 5
        assert {u.id for u in v}.isdisjoint(u.id for u in t)
        assert {u.id for u in v} | {u.id for u in t} == set(range(10))

    def test_deterministic(self):
        ood = [utt(i, ["x"], None, True) for i in range(50)]
        assert split_ood(ood, 0.3, 4) == split_ood(ood, 0.3, 4)

    def test_bad_fraction(self):
        with pytest.raises(CorpusError):
            split_ood([], 1.0, 0)


def test_bundle_invariants(small_bundle):
    b = small_bundle
    assert not any(u.is_ood for u in b.train_id)
    assert sum(b.class_counts.values()) == len(b.train_id)
    assert Counter(u.label for u in b.train_id) == b.class_counts
    assert all(u.label in b.labels for u in b.valid + b.test if not u.is_ood)
