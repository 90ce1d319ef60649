import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pgcgan import data
from pgcgan.data import (DatasetManifest, LabelError, LengthError, ParseError, PathologyLabel, SchemaError,
                         StratificationError, build_manifest, denormalize, filter_min_length, load_dataset,
                         normalize, split, window_fixed, write_csv_dir, write_jsonl)
from pgcgan.toy import toy_sequences

from conftest import make_seq


def write_csv(path, rows, d, label="a", subject="p1"):
    lines = ["t," + ",".join(f"f{i}" for i in range(d))]
    lines += [f"{t}," + ",".join(str(v) for v in row) for t, row in enumerate(rows)]
    path.write_text("\n".join(lines) + "\n")
    path.with_suffix(".meta").write_text(f"label={label}\nsubject={subject}\n")


class TestLabel:
    def test_one_hot(self):
        lab = PathologyLabel(2, ("n", "a", "b", "c", "d", "e"))
        oh = lab.one_hot()
        assert oh.tolist() == [0, 0, 1, 0, 0, 0]
        assert oh.sum() == 1

    @pytest.mark.parametrize("index,vocab", [(3, ("a", "b", "c")), (-1, ("a", "b")), (0, ("a",))])
    def test_invalid(self, index, vocab):
        with pytest.raises(LabelError):
            PathologyLabel(index, vocab)

    def test_from_name_unknown(self):
        with pytest.raises(LabelError):
            PathologyLabel.from_name("zzz", ("a", "b"))


class TestLoad:
    def test_csv_three_records(self, tmp_path):
        rng = np.random.default_rng(0)
        for i in range(3):
            write_csv(tmp_path / f"r{i}.csv", rng.standard_normal((10 + i, 75)), 75, label="ab"[i % 2])
        seqs = load_dataset(tmp_path, "csv")
        assert len(seqs) == 3
        assert all(s.d == 75 for s in seqs)
        assert [s.source_length for s in seqs] == [10, 11, 12]
        assert seqs[0].label.vocabulary == ("a", "b")
        assert seqs[0].subject_id == "p1"

    def test_non_numeric_token(self, tmp_path):
        write_csv(tmp_path / "x.csv", [[1.0, 2.0], [3.0, "oops"]], 2)
        with pytest.raises(ParseError, match=r"x\.csv:3"):
            load_dataset(tmp_path, "csv")

    def test_wrong_column_count(self, tmp_path):
        (tmp_path / "x.csv").write_text("t,f0,f1\n0,1,2\n1,3\n")
        (tmp_path / "x.meta").write_text("label=a\n")
        with pytest.raises(ParseError, match=r"x\.csv:3"):
            load_dataset(tmp_path, "csv")

    def test_inconsistent_d(self, tmp_path):
        write_csv(tmp_path / "a.csv", np.zeros((5, 75)), 75)
        write_csv(tmp_path / "b.csv", np.zeros((5, 60)), 60)
        with pytest.raises(SchemaError):
            load_dataset(tmp_path, "csv")

    def test_jsonl(self, tmp_path):
        f = tmp_path / "d.jsonl"
        f.write_text("\n".join(json.dumps({"frames": [[1, 2], [3, 4], [5, 6]], "label": lab, "subject": "s"})
                               for lab in ("x", "y", "x")) + "\n")
        seqs = load_dataset(f, "jsonl")
        assert [s.label.name for s in seqs] == ["x", "y", "x"]
        assert seqs[1].frames.tolist() == [[1, 2], [3, 4], [5, 6]]

    def test_jsonl_bad_line(self, tmp_path):
        f = tmp_path / "d.jsonl"
        f.write_text('{"frames": [[1]], "label": "a"}\n{not json\n')
        with pytest.raises(ParseError, match=r"d\.jsonl:2"):
            load_dataset(f, "jsonl")

    def test_roundtrip_both_formats(self, tmp_path):
        seqs = toy_sequences(3, seed=0)
        write_jsonl(seqs, tmp_path / "all.jsonl")
        write_csv_dir(seqs, tmp_path / "csv", precision=17)
        a = load_dataset(tmp_path / "all.jsonl", "jsonl")
        b = load_dataset(tmp_path / "csv", "csv")
        by_id = {s.seq_id: s for s in b}
        for s, orig in zip(a, seqs):
            assert np.array_equal(s.frames, orig.frames)
            assert np.array_equal(by_id[s.seq_id].frames, orig.frames)


class TestFilter:
    def test_boundary(self):
        seqs = [make_seq(np.zeros(n), seq_id=str(n)) for n in (59, 60, 61)]
        assert [s.seq_id for s in filter_min_length(seqs, 60)] == ["60", "61"]

    def test_identity(self):
        seqs = [make_seq(np.zeros(n), seq_id=str(n)) for n in (1, 5, 3)]
        assert filter_min_length(seqs, 1) == seqs

    @given(st.lists(st.integers(1, 120), max_size=30), st.integers(1, 120))
    def test_property(self, lengths, min_len):
        seqs = [make_seq(np.zeros(2), source_length=n, seq_id=str(i)) for i, n in enumerate(lengths)]
        out = filter_min_length(seqs, min_len)
        assert len(out) <= len(seqs)
        assert all(s.source_length >= min_len for s in out)
        assert [s.seq_id for s in out] == [s.seq_id for s in seqs if s.source_length >= min_len]


class TestWindow:
    @pytest.mark.parametrize("policy", ["center_crop", "resample"])
    def test_identity(self, policy):
        s = make_seq(np.random.default_rng(0).standard_normal((60, 4)))
        assert np.array_equal(window_fixed(s, 60, policy).frames, s.frames)

    def test_center_crop_rows(self):
        s = make_seq(np.arange(100.0))
        out = window_fixed(s, 50, "center_crop")
        # (100 - 50) // 2 = 25 -> rows 25..74
        assert out.frames[:, 0].tolist() == list(range(25, 75))
        assert out.source_length == 100

    @pytest.mark.parametrize("T", [2, 7, 60, 150])
    def test_resample_linear(self, T):
        ramp = 3.0 + 0.5 * np.arange(83.0)
        out = window_fixed(make_seq(ramp), T, "resample").frames[:, 0]
        expected = np.linspace(ramp[0], ramp[-1], T)
        assert np.allclose(out, expected, atol=1e-12)

    def test_too_short(self):
        with pytest.raises(LengthError):
            window_fixed(make_seq(np.zeros(10)), 20, "center_crop")
        with pytest.raises(LengthError):
            window_fixed(make_seq(np.zeros(1)), 20, "resample")

    @given(st.integers(2, 90), st.integers(1, 60), st.sampled_from(["center_crop", "resample"]))
    @settings(max_examples=50)
    def test_shape_property(self, n, T, policy):
        if policy == "center_crop" and n < T:
            return
        out = window_fixed(make_seq(np.zeros((n, 3))), T, policy)
        assert out.frames.shape == (T, 3)


def _manifest_for(train, test=()):
    return build_manifest(list(train), list(test), min_length_filter=1)


class TestNormalize:
    def test_roundtrip(self):
        rng = np.random.default_rng(1)
        seqs = [make_seq(rng.normal(5.0, 3.0, (20, 4)) * [1, 10, 100, 0.01], seq_id=str(i)) for i in range(5)]
        m = _manifest_for(seqs)
        back = denormalize(normalize(seqs, m), m)
        for a, b in zip(seqs, back):
            assert np.max(np.abs(a.frames - b.frames)) < 1e-6
            assert np.allclose(a.frames, b.frames, rtol=1e-6, atol=0)

    def test_train_statistics(self):
        rng = np.random.default_rng(2)
        seqs = [make_seq(rng.normal(3.0, 2.0, (30, 5)), seq_id=str(i)) for i in range(8)]
        m = _manifest_for(seqs)
        flat = np.concatenate([s.frames for s in normalize(seqs, m)])
        assert np.all(np.abs(flat.mean(axis=0)) < 1e-6)
        assert np.all(np.abs(flat.std(axis=0) - 1) < 1e-6)

    def test_constant_dimension(self):
        seqs = [make_seq(np.column_stack([np.full(10, 7.0), np.arange(10.0)]), seq_id=str(i)) for i in range(2)]
        m = _manifest_for(seqs)
        assert m.std[0] == data.STD_FLOOR
        assert np.all(normalize(seqs, m)[0].frames[:, 0] == 0.0)

    def test_two_values(self):
        # mean 1, population std 1 -> {0, 2} maps to {-1, +1}
        seqs = [make_seq(np.array([0.0, 2.0, 0.0, 2.0]), seq_id="x")]
        out = normalize(seqs, _manifest_for(seqs))[0].frames[:, 0]
        assert out.tolist() == [-1.0, 1.0, -1.0, 1.0]

    @given(st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=40))
    def test_roundtrip_property(self, values):
        seqs = [make_seq(np.asarray(values), seq_id="p")]
        m = _manifest_for(seqs)
        back = denormalize(normalize(seqs, m), m)[0].frames
        assert np.allclose(back, seqs[0].frames, rtol=1e-6, atol=1e-6 * max(1.0, np.abs(values).max()))


class TestSplit:
    def _seqs(self, per_class, C=3):
        vocab = tuple("abcdef"[:C])
        return [make_seq(np.zeros(2), label=c, vocab=vocab, seq_id=f"{c}-{i}")
                for c in range(C) for i in range(per_class)]

    def test_counts_and_determinism(self):
        seqs = self._seqs(100)
        tr1, te1 = split(seqs, 0.2, seed=7)
        tr2, te2 = split(seqs, 0.2, seed=7)
        assert [s.seq_id for s in te1] == [s.seq_id for s in te2]
        for c in range(3):
            assert sum(s.label.index == c for s in te1) == 20

    def test_rounding_boundary(self):
        _, te = split(self._seqs(5, C=2), 0.2, seed=0)
        assert sum(s.label.index == 0 for s in te) == 1

    def test_seeds_differ(self):
        seqs = self._seqs(50)
        _, a = split(seqs, 0.2, seed=1)
        _, b = split(seqs, 0.2, seed=2)
        assert {s.seq_id for s in a} != {s.seq_id for s in b}
        for c in range(3):
            assert sum(s.label.index == c for s in a) == sum(s.label.index == c for s in b)

    def test_too_small_class(self):
        seqs = self._seqs(5) + [make_seq(np.zeros(2), label=2, seq_id="lonely", vocab=("a", "b", "c", "d"))]
        seqs[-1] = make_seq(np.zeros(2), label=3, seq_id="lonely", vocab=("a", "b", "c", "d"))
        seqs = [make_seq(s.frames, label=s.label.index, seq_id=s.seq_id, vocab=("a", "b", "c", "d")) for s in seqs]
        with pytest.raises(StratificationError):
            split(seqs, 0.2, seed=0)

    @given(st.lists(st.integers(2, 40), min_size=2, max_size=5), st.floats(0.05, 0.95), st.integers(0, 10 ** 6))
    @settings(max_examples=40, deadline=None)
    def test_partition_property(self, sizes, frac, seed):
        vocab = tuple(f"c{i}" for i in range(len(sizes)))
        seqs = [make_seq(np.zeros(2), label=c, vocab=vocab, seq_id=f"{c}-{i}")
                for c, n in enumerate(sizes) for i in range(n)]
        tr, te = split(seqs, frac, seed)
        ids_tr, ids_te = {s.seq_id for s in tr}, {s.seq_id for s in te}
        assert not ids_tr & ids_te
        assert ids_tr | ids_te == {s.seq_id for s in seqs}
        for c, n in enumerate(sizes):
            k = sum(s.label.index == c for s in te)
            assert abs(k - frac * n) <= 1


class TestManifest:
    def test_invariants_and_roundtrip(self, tmp_path):
        seqs = toy_sequences(6, seed=0)
        tr, te = split(seqs, 0.5, seed=0)
        m = build_manifest(tr, te, min_length_filter=60)
        assert sum(m.class_counts.values()) == m.total == len(seqs)
        assert all(v > 0 for v in m.std)
        m.save(tmp_path / "m.json")
        assert DatasetManifest.load(tmp_path / "m.json") == m

    def test_mean_from_train_only(self):
        tr = [make_seq(np.zeros((4, 1)), seq_id="t")]
        te = [make_seq(np.full((4, 1), 100.0), seq_id="u")]
        m = build_manifest(tr, te, min_length_filter=1)
        assert m.mean == (0.0,)

    def test_ingest_pipeline(self, tmp_path):
        raw = toy_sequences(10, seed=4, min_length=50, max_length=80)
        write_csv_dir(raw, tmp_path / "raw")
        manifest, train, test = data.ingest(tmp_path / "raw", "csv", min_len=60, T=60, seed=0)
        kept = [s for s in raw if s.source_length >= 60]
        assert manifest.total == len(kept) == len(train) + len(test)
        assert all(s.frames.shape == (60, 6) for s in train + test)
        out = data.save_split_dataset(tmp_path / "ing", train, test, manifest)
        m2, tr2, te2 = data.load_manifest_dataset(out)
        assert m2 == manifest
        assert [s.seq_id for s in tr2] == [s.seq_id for s in train]
        assert all(np.array_equal(a.frames, b.frames) for a, b in zip(tr2, train))
        _, raw_tr, _ = data.load_manifest_dataset(out, normalized=False)
        assert np.allclose(raw_tr[0].frames, train[0].frames * manifest.std_array + manifest.mean_array)
